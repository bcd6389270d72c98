//! Analytic and iteration-level models of prefill serving when the KV cache
//! of earlier turns lives in host memory and must cross the host link.
//!
//! - [`catalog`]: model and accelerator entries, KV bytes and FLOPs per token.
//! - [`analytics`]: closed-form transfer/compute times, κ thresholds, VRAM-bounded batching.
//! - [`roofline`]: attainable throughput over a κ_ratio sweep.
//! - [`workload`]: trace expansion, distribution summaries, synthetic arrival streams.
//! - [`simulator`]: FIFO and utilization-aware batch scheduling under a token budget and VRAM.

pub mod analytics;
pub mod catalog;
pub mod roofline;
pub mod simulator;
pub mod workload;

pub use analytics::{
    kappa_crit, kappa_hw, kappa_model, routing_class, AnalyticBreakdown, RequestShape, RoutingClass,
};
pub use catalog::{
    flops_per_token, kv_bytes_per_token, load_catalog, Attention, AttentionKind, BandwidthMode,
    Catalog, CatalogError, HardwareSpec, ModelSpec, Precision,
};
pub use roofline::{
    roofline_series, roofline_sweep, Regime, RooflinePoint, RooflineSeries, SweepRange,
};
pub use simulator::{run_sim, Aging, Policy, SimConfig, SimError, SimReport, SimSetup};
pub use workload::{
    summarize, synthesize_stream, DistributionSummary, RequestRecord, Stats, TokenDistribution,
    WorkloadProfile,
};
