use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use kvroof_core::analytics::{kappa_crit, kappa_hw, kappa_model};
use kvroof_core::catalog::BUNDLED_CATALOG;
use kvroof_core::roofline::{roofline_sweep, write_csv, SweepRange};
use kvroof_core::simulator::{compare_policies, write_iterations_csv, SimReport};
use kvroof_core::workload::{
    expand_conversation, expand_document, read_conversations, read_documents, read_stream,
    write_records_csv, write_stream,
};
use kvroof_core::{
    summarize, synthesize_stream, BandwidthMode, Catalog, HardwareSpec, ModelSpec, Policy,
    SimConfig, SimSetup, Stats, WorkloadProfile,
};
use serde_json::{json, Value};

use crate::manifest::Manifest;
use crate::{data, Cli, CliError, Command, Common, Format, PolicyArg, TraceKind};

type Res<T = ()> = Result<T, CliError>;

pub fn run(cli: Cli) -> Res {
    let (catalog, manifest) = load_catalog(&cli.common)?;
    let c = &cli.common;
    match cli.command {
        Command::Catalog => emit(c.out.as_deref(), catalog.to_json_string() + "\n"),
        Command::Kappa {
            models,
            hardware,
            compute,
            sustained_bw,
            format,
        } => kappa(
            c,
            &catalog,
            manifest,
            &models,
            &hardware,
            compute,
            sustained_bw,
            format,
        ),
        Command::Roofline {
            model,
            hardware,
            min,
            max,
            points_per_decade,
        } => {
            let range = SweepRange {
                min,
                max,
                points_per_decade,
            };
            roofline(c, &catalog, manifest, &model, &hardware, range)
        }
        Command::Analyze {
            trace,
            kind,
            format,
        } => analyze(c, manifest, &trace, kind, format),
        Command::Synth {
            profile,
            profile_file,
            rps,
            duration,
        } => {
            let seed = c.seed;
            synth(c, manifest, profile, profile_file, rps, duration, seed)
        }
        Command::Simulate {
            config,
            stream,
            policy,
            compare,
        } => simulate(c, &catalog, manifest, &config, &stream, policy, compare),
    }
}

fn load_catalog(c: &Common) -> Res<(Catalog, Manifest)> {
    match &c.catalog {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| data(format!("cannot read catalog {}: {e}", path.display())))?;
            let cat = Catalog::from_json_str(&text).map_err(data)?;
            Ok((cat, Manifest::new(path.display().to_string(), &text)))
        }
        None => Ok((
            Catalog::bundled(),
            Manifest::new("bundled".into(), BUNDLED_CATALOG),
        )),
    }
}

fn emit(out: Option<&Path>, text: String) -> Res {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| data(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes()).map_err(data)?;
            Ok(())
        }
    }
}

fn pick<'a, T>(
    names: &[String],
    all: &'a [T],
    get: impl Fn(&str) -> Result<&'a T, kvroof_core::CatalogError>,
) -> Res<Vec<&'a T>> {
    if names.is_empty() {
        return Ok(all.iter().collect());
    }
    names.iter().map(|n| get(n).map_err(data)).collect()
}

fn override_hw(
    hw: &HardwareSpec,
    compute: Option<f64>,
    sustained: Option<f64>,
) -> Res<HardwareSpec> {
    let mut h = hw.clone();
    if let Some(c) = compute {
        h = h.with_compute_throughput(c).map_err(data)?;
    }
    if let Some(bw) = sustained {
        h = h.with_sustained_bandwidth(bw).map_err(data)?;
    }
    Ok(h)
}

#[allow(clippy::too_many_arguments)]
fn kappa(
    c: &Common,
    catalog: &Catalog,
    manifest: Manifest,
    models: &[String],
    hardware: &[String],
    compute: Option<f64>,
    sustained_bw: Option<f64>,
    format: Format,
) -> Res {
    let mode: BandwidthMode = c.bandwidth.into();
    let models: Vec<&ModelSpec> = pick(models, catalog.models(), |n| catalog.model(n))?;
    let hws = pick(hardware, catalog.hardware(), |n| catalog.hw(n))?
        .into_iter()
        .map(|h| override_hw(h, compute, sustained_bw))
        .collect::<Res<Vec<_>>>()?;

    // table units: GFLOP/KB and KB/GFLOP
    let (m_scale, hw_scale, m_col, hw_col) = if c.si {
        (1.0, 1.0, "kappa_m_flop_per_byte", "kappa_hw_byte_per_flop")
    } else {
        (1e-6, 1e6, "kappa_m_gflop_per_kb", "kappa_hw_kb_per_gflop")
    };
    let rows: Vec<(String, String, f64, f64, f64)> = models
        .iter()
        .flat_map(|m| {
            hws.iter().map(move |h| {
                (
                    m.name().to_string(),
                    h.name().to_string(),
                    kappa_model(m) * m_scale,
                    kappa_hw(h, mode) * hw_scale,
                    kappa_crit(m, h, mode),
                )
            })
        })
        .collect();

    let text = match format {
        Format::Json => {
            let rows: Vec<Value> = rows
                .iter()
                .map(|(m, h, km, kh, kc)| {
                    json!({"model": m, "hardware": h, "bandwidth_mode": mode, m_col: km, hw_col: kh, "kappa_crit": kc})
                })
                .collect();
            pretty(&json!({"manifest": manifest.to_json(), "rows": rows}))
        }
        Format::Csv => {
            let mut s = manifest.comment_lines();
            s.push_str(&format!(
                "model,hardware,bandwidth_mode,{m_col},{hw_col},kappa_crit\n"
            ));
            for (m, h, km, kh, kc) in &rows {
                s.push_str(&format!("{m},{h},{mode},{km},{kh},{kc}\n"));
            }
            s
        }
        Format::Table => {
            let (mu, hu) = if c.si {
                ("FLOP/B", "B/FLOP")
            } else {
                ("GFLOP/KB", "KB/GFLOP")
            };
            let mut s = manifest.comment_lines();
            let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(5).max(5);
            let hw_w = rows.iter().map(|r| r.1.len()).max().unwrap_or(8).max(8);
            s.push_str(&format!(
                "{:<w$}  {:<hw_w$}  {:>9}  {:>14}  {:>14}  {:>10}\n",
                "model",
                "hardware",
                "bandwidth",
                format!("kappa_M[{mu}]"),
                format!("kappa_HW[{hu}]"),
                "kappa_crit"
            ));
            for (m, h, km, kh, kc) in &rows {
                s.push_str(&format!(
                    "{m:<w$}  {h:<hw_w$}  {:>9}  {:>14}  {:>14}  {kc:>10.3}\n",
                    mode.to_string(),
                    sig(*km),
                    sig(*kh)
                ));
            }
            s
        }
    };
    emit(c.out.as_deref(), text)
}

/// Four decimals, or exponent form for very large or small values.
fn sig(x: f64) -> String {
    if x != 0.0 && (x.abs() >= 1e6 || x.abs() < 1e-3) {
        format!("{x:.3e}")
    } else {
        format!("{x:.4}")
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize") + "\n"
}

fn roofline(
    c: &Common,
    catalog: &Catalog,
    manifest: Manifest,
    model: &str,
    hardware: &[String],
    range: SweepRange,
) -> Res {
    let m = catalog.model(model).map_err(data)?;
    let hws: Vec<HardwareSpec> = pick(hardware, catalog.hardware(), |n| catalog.hw(n))?
        .into_iter()
        .cloned()
        .collect();
    range
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let series = roofline_sweep(m, &hws, &range, c.bandwidth.into()).map_err(data)?;
    let mut buf = manifest.comment_lines().into_bytes();
    write_csv(&series, &mut buf).map_err(data)?;
    emit(
        c.out.as_deref(),
        String::from_utf8(buf).expect("csv output is utf-8"),
    )
}

fn open(path: &Path) -> Res<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| data(format!("cannot open {}: {e}", path.display())))
}

fn analyze(
    c: &Common,
    mut manifest: Manifest,
    trace: &Path,
    kind: TraceKind,
    format: Format,
) -> Res {
    manifest.config_paths.push(trace.display().to_string());
    let in_file = |e| data(format!("{}: {e}", trace.display()));
    let records = match kind {
        TraceKind::Conversation => read_conversations(open(trace)?)
            .map_err(in_file)?
            .iter()
            .flat_map(expand_conversation)
            .collect::<Vec<_>>(),
        TraceKind::Document => read_documents(open(trace)?)
            .map_err(in_file)?
            .iter()
            .flat_map(expand_document)
            .collect(),
    };
    let summary = summarize(&records).map_err(in_file)?;

    if let Some(out) = &c.out {
        let mut buf = manifest.comment_lines().into_bytes();
        write_records_csv(&records, &mut buf).map_err(data)?;
        emit(
            Some(out),
            String::from_utf8(buf).expect("csv output is utf-8"),
        )?;
    }
    let text = match format {
        Format::Json => pretty(&json!({"manifest": manifest.to_json(), "summary": summary})),
        Format::Csv => {
            let mut s = manifest.comment_lines();
            s.push_str("quantity,count,min,p10,p50,p90,p95,p99,max,mean\n");
            for (name, st) in stat_rows(&summary) {
                s.push_str(&format!(
                    "{name},{},{},{},{},{},{},{},{},{}\n",
                    summary.count, st.min, st.p10, st.p50, st.p90, st.p95, st.p99, st.max, st.mean
                ));
            }
            s
        }
        Format::Table => {
            let mut s = manifest.comment_lines();
            s.push_str(&format!("records: {}\n", summary.count));
            s.push_str(&format!(
                "{:<14} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
                "quantity", "min", "p10", "p50", "p90", "p95", "p99", "max", "mean"
            ));
            for (name, st) in stat_rows(&summary) {
                s.push_str(&format!(
                    "{name:<14} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
                    sig(st.min),
                    sig(st.p10),
                    sig(st.p50),
                    sig(st.p90),
                    sig(st.p95),
                    sig(st.p99),
                    sig(st.max),
                    sig(st.mean)
                ));
            }
            s
        }
    };
    emit(None, text)
}

fn stat_rows(s: &kvroof_core::DistributionSummary) -> [(&'static str, &Stats); 3] {
    [
        ("prefill_tokens", &s.prefill_tokens),
        ("cached_tokens", &s.cached_tokens),
        ("kappa_ratio", &s.kappa_ratio),
    ]
}

fn synth(
    c: &Common,
    mut manifest: Manifest,
    profile: Option<String>,
    profile_file: Option<PathBuf>,
    rps: f64,
    duration: f64,
    seed: u64,
) -> Res {
    let profile = match (profile, profile_file) {
        (Some(name), None) => WorkloadProfile::preset(&name).map_err(|e| {
            let names: Vec<String> = WorkloadProfile::presets()
                .into_iter()
                .map(|p| p.name)
                .collect();
            CliError::Usage(format!("{e}; available: {}", names.join(", ")))
        })?,
        (None, Some(path)) => {
            manifest.config_paths.push(path.display().to_string());
            let text = fs::read_to_string(&path)
                .map_err(|e| data(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?
        }
        _ => {
            return Err(CliError::Usage(
                "pass one of --profile or --profile-file".into(),
            ))
        }
    };
    manifest.seed = Some(seed);
    let stream = synthesize_stream(&profile, rps, duration, seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut buf = manifest.jsonl_line().into_bytes();
    write_stream(&stream, &mut buf).map_err(data)?;
    emit(
        c.out.as_deref(),
        String::from_utf8(buf).expect("json output is utf-8"),
    )
}

fn summary_line(r: &SimReport) -> String {
    format!(
        "policy={} iterations={} completed={} rejected={} mean_sched_tokens={} mean_ttft_s={}\n",
        r.policy,
        r.iterations.len(),
        r.completed(),
        r.rejected.len(),
        r.mean_sched_tokens,
        r.ttft.map_or(0.0, |t| t.mean)
    )
}

fn iterations_csv(manifest: &Manifest, r: &SimReport) -> Res<String> {
    let mut buf = manifest.comment_lines().into_bytes();
    write_iterations_csv(&r.iterations, &mut buf).map_err(data)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn simulate(
    c: &Common,
    catalog: &Catalog,
    mut manifest: Manifest,
    config: &Path,
    stream: &Path,
    policy: PolicyArg,
    compare: bool,
) -> Res {
    manifest.config_paths = vec![config.display().to_string(), stream.display().to_string()];
    let text = fs::read_to_string(config)
        .map_err(|e| data(format!("cannot read {}: {e}", config.display())))?;
    let cfg =
        SimConfig::from_json_str(&text).map_err(|e| data(format!("{}: {e}", config.display())))?;
    let records =
        read_stream(open(stream)?).map_err(|e| data(format!("{}: {e}", stream.display())))?;
    let setup =
        SimSetup::resolve(&cfg, catalog).map_err(|e| data(format!("{}: {e}", config.display())))?;

    let fifo = Policy::Fifo;
    let ua = Policy::UtilizationAware { aging: cfg.aging };
    let policies = if compare {
        vec![fifo, ua]
    } else {
        vec![match policy {
            PolicyArg::Fifo => fifo,
            PolicyArg::UtilizationAware => ua,
        }]
    };
    let cmp = compare_policies(&setup, &records, &policies).map_err(data)?;

    let body = if compare {
        json!({"manifest": manifest.to_json(), "config": cfg, "comparison": cmp})
    } else {
        json!({"manifest": manifest.to_json(), "config": cfg, "report": cmp.reports[0]})
    };
    let Some(dir) = &c.out else {
        return emit(None, pretty(&body));
    };
    fs::create_dir_all(dir).map_err(|e| data(format!("cannot create {}: {e}", dir.display())))?;
    emit(Some(&dir.join("report.json")), pretty(&body))?;
    let mut summary = String::new();
    for r in &cmp.reports {
        let name = if compare {
            format!("iterations-{}.csv", r.policy)
        } else {
            "iterations.csv".to_string()
        };
        emit(Some(&dir.join(name)), iterations_csv(&manifest, r)?)?;
        summary.push_str(&summary_line(r));
    }
    emit(None, summary)
}
