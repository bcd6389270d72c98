#![allow(dead_code)]

use kvroof_core::simulator::{Candidate, SimReport, SimSetup};
use kvroof_core::{HardwareSpec, ModelSpec, RequestRecord, SimConfig, Stats};
use rand::Rng;

pub fn rel_err(got: f64, want: f64) -> f64 {
    ((got - want) / want).abs()
}

/// One byte of KV per token so VRAM is counted in token-equivalents.
pub fn toy_model() -> ModelSpec {
    ModelSpec::gqa("toy", 1_000_000, 1_000_000, 1, 1, 1, 0.5).unwrap()
}

pub fn toy_setup(compute: f64, bw: f64, vram: f64, budget: u64, chunking: bool) -> SimSetup {
    let hw = HardwareSpec::new("toy-hw", compute, bw, None, vram).unwrap();
    let mut cfg = SimConfig::new("toy", "toy-hw");
    cfg.token_budget = budget;
    cfg.allow_chunked_prefill = chunking;
    SimSetup::new(cfg, toy_model(), hw).unwrap()
}

/// Small random stream with Poisson-ish arrivals, sized to exercise VRAM
/// blocking, chunking and rejection.
pub fn random_stream<R: Rng>(rng: &mut R, n: usize) -> Vec<RequestRecord> {
    let mut t = 0.0;
    (0..n)
        .map(|i| {
            if rng.random_bool(0.7) {
                t += rng.random::<f64>() * 2e-4;
            }
            let k = if rng.random_bool(0.2) {
                0
            } else {
                rng.random_range(0..60)
            };
            RequestRecord::new(format!("r{i}"), k, rng.random_range(1..30)).at(t)
        })
        .collect()
}

pub fn random_toy_setup<R: Rng>(rng: &mut R) -> SimSetup {
    let compute = 10f64.powf(rng.random_range(9.0..13.0));
    let bw = 10f64.powf(rng.random_range(6.0..10.0));
    let vram = rng.random_range(20..200) as f64;
    toy_setup(
        compute,
        bw,
        vram,
        rng.random_range(1..40),
        rng.random_bool(0.8),
    )
}

/// Conservation, safety and ordering checks on a finished run.
pub fn check_report(
    setup: &SimSetup,
    stream: &[RequestRecord],
    rep: &SimReport,
) -> Result<(), String> {
    let budget = setup.config.token_budget;
    let vram = setup.hw.vram_effective();
    if rep.completed() + rep.rejected.len() != stream.len() {
        return Err(format!(
            "{} completed + {} rejected != {} requests",
            rep.completed(),
            rep.rejected.len(),
            stream.len()
        ));
    }
    let scheduled: u64 = rep.iterations.iter().map(|i| i.scheduled_tokens).sum();
    let admitted: u64 = rep.requests.iter().map(|r| r.prefill_tokens).sum();
    if scheduled != admitted {
        return Err(format!(
            "scheduled {scheduled} tokens but admitted requests need {admitted}"
        ));
    }
    let mut prev_end = f64::NEG_INFINITY;
    for it in &rep.iterations {
        if it.scheduled_tokens == 0 || it.scheduled_tokens > budget {
            return Err(format!(
                "iteration {} scheduled {} of {budget}",
                it.index, it.scheduled_tokens
            ));
        }
        if it.vram_used > vram {
            return Err(format!(
                "iteration {} holds {} of {vram} bytes",
                it.index, it.vram_used
            ));
        }
        if it.t_start < prev_end || it.t_end <= it.t_start {
            return Err(format!(
                "iteration {} spans [{}, {}]",
                it.index, it.t_start, it.t_end
            ));
        }
        prev_end = it.t_end;
    }
    for r in &rep.requests {
        if !(r.ttft > 0.0 && r.completed_at >= r.arrival_time) {
            return Err(format!("request {} has ttft {}", r.id, r.ttft));
        }
    }
    Ok(())
}

/// Most tokens any subset of candidates can schedule, by enumeration.
pub fn brute_force_tokens(c: &[Candidate], budget: u64, vram: f64, chunking: bool) -> u64 {
    let mut best = 0;
    for mask in 0u32..(1 << c.len()) {
        let (mut sum, mut cost) = (0u64, 0.0);
        for (i, x) in c.iter().enumerate() {
            if mask & (1 << i) != 0 {
                sum += x.remaining;
                cost += x.vram_cost;
            }
        }
        if cost > vram {
            continue;
        }
        let tokens = if chunking {
            sum.min(budget)
        } else if sum <= budget {
            sum
        } else {
            continue;
        };
        best = best.max(tokens);
    }
    best
}

pub fn random_candidates<R: Rng>(rng: &mut R, n: usize, chunking: bool) -> Vec<Candidate> {
    (0..n)
        .map(|i| {
            let resident = chunking && rng.random_bool(0.1);
            let remaining = rng.random_range(1..12);
            Candidate {
                arrival_time: i as f64,
                remaining,
                vram_cost: if resident {
                    0.0
                } else {
                    (remaining + rng.random_range(0..10)) as f64
                },
                resident,
            }
        })
        .collect()
}

/// Sort-based reference for the summary statistics.
pub fn stats_oracle(values: &[f64]) -> Stats {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let pick = |p: f64| {
        // smallest value with at least p% of the data at or below it
        let mut idx = 0;
        while (idx + 1) as f64 * 100.0 < p * n as f64 {
            idx += 1;
        }
        v[idx]
    };
    Stats {
        min: v[0],
        max: v[n - 1],
        mean: v.iter().sum::<f64>() / n as f64,
        p10: pick(10.0),
        p50: pick(50.0),
        p90: pick(90.0),
        p95: pick(95.0),
        p99: pick(99.0),
    }
}

pub fn stats_match(a: &Stats, b: &Stats) -> bool {
    a.min == b.min
        && a.max == b.max
        && a.p10 == b.p10
        && a.p50 == b.p50
        && a.p90 == b.p90
        && a.p95 == b.p95
        && a.p99 == b.p99
        && (a.mean - b.mean).abs() <= 1e-9 * b.mean.abs().max(1.0)
}

/// Kolmogorov–Smirnov distance of `samples` against Exp(rate).
pub fn ks_exponential(samples: &[f64], rate: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-rate * x).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
