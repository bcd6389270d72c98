use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kvroof_core::simulator::Candidate;
use kvroof_core::{
    kappa_crit, roofline_sweep, summarize, synthesize_stream, Aging, BandwidthMode, Catalog,
    Policy, SimConfig, SimSetup, SweepRange, WorkloadProfile,
};

fn kappa(c: &mut Criterion) {
    let cat = Catalog::bundled();
    c.bench_function("kappa_crit all pairs", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for m in cat.models() {
                for h in cat.hardware() {
                    acc += kappa_crit(m, h, BandwidthMode::Sustained);
                }
            }
            black_box(acc)
        })
    });
}

fn roofline(c: &mut Criterion) {
    let cat = Catalog::bundled();
    let model = cat.model("DeepSeek-V3").unwrap();
    let range = SweepRange::default();
    c.bench_function("roofline sweep all hardware", |b| {
        b.iter(|| {
            roofline_sweep(
                model,
                cat.hardware(),
                black_box(&range),
                BandwidthMode::Peak,
            )
            .unwrap()
        })
    });
}

fn workload(c: &mut Criterion) {
    let profile = WorkloadProfile::preset("sharegpt").unwrap();
    c.bench_function("synthesize 21k requests", |b| {
        b.iter(|| synthesize_stream(&profile, 70.0, 300.0, black_box(7)).unwrap())
    });
    let stream = synthesize_stream(&profile, 70.0, 300.0, 7).unwrap();
    c.bench_function("summarize 21k requests", |b| {
        b.iter(|| summarize(black_box(&stream)).unwrap())
    });
}

fn simulator(c: &mut Criterion) {
    let profile = WorkloadProfile::preset("sharegpt").unwrap();
    let stream = synthesize_stream(&profile, 70.0, 30.0, 7).unwrap();
    let cat = Catalog::bundled();
    let mut cfg = SimConfig::new("Qwen3-235B-A22B", "H100-PCIe5");
    cfg.vram_effective = Some(92e9);
    let setup = SimSetup::resolve(&cfg, &cat).unwrap();
    let mut group = c.benchmark_group("simulate 30s sharegpt");
    group.sample_size(10);
    for policy in [
        Policy::Fifo,
        Policy::UtilizationAware {
            aging: Aging::default(),
        },
    ] {
        group.bench_function(policy.name(), |b| {
            b.iter(|| setup.run(black_box(&stream), policy).unwrap())
        });
    }
    group.finish();

    let candidates: Vec<Candidate> = (0..300u64)
        .map(|i| {
            let remaining = 1 + (i * 7919) % 600;
            Candidate {
                arrival_time: i as f64,
                remaining,
                vram_cost: (remaining + (i * 104_729) % 5000) as f64,
                resident: false,
            }
        })
        .collect();
    let ua = Policy::UtilizationAware { aging: Aging::NONE };
    c.bench_function("utilization-aware select 300 candidates", |b| {
        b.iter(|| ua.select(black_box(&candidates), 4000, 400_000.0, true, 0.0))
    });
}

criterion_group!(benches, kappa, roofline, workload, simulator);
criterion_main!(benches);
