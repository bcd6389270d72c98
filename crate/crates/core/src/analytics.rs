//! Closed-form prefill timing under KV offload.
//!
//! A request loads `K` cached tokens over the host link and computes `T` new
//! tokens on the accelerator:
//!
//! ```text
//! t_pcie    = K·B_kv / BW
//! t_prefill = T·F_pf / C_eff
//! TTFT      = t_pcie + t_prefill − α·min(t_pcie, t_prefill)
//! ```
//!
//! The request is memory-bound when `κ_ratio = K/T` exceeds
//! `κ_crit = (F_pf/B_kv)·(BW/C_eff)`. All functions are pure.
//!
//! The attention context term of the prefill FLOP count is not modeled;
//! `F_pf = 2N` throughout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{flops_per_token, kv_bytes_per_token, BandwidthMode, HardwareSpec, ModelSpec};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("overlap alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("a prefill request computes at least one new token")]
    EmptyPrefill,
}

/// Cached (`K`) and new (`T`) token counts of one prefill request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestShape {
    cached_tokens: u64,
    prefill_tokens: u64,
}

impl RequestShape {
    pub fn new(cached_tokens: u64, prefill_tokens: u64) -> Result<Self, AnalyticsError> {
        if prefill_tokens == 0 {
            return Err(AnalyticsError::EmptyPrefill);
        }
        Ok(Self {
            cached_tokens,
            prefill_tokens,
        })
    }

    pub fn cached_tokens(&self) -> u64 {
        self.cached_tokens
    }

    pub fn prefill_tokens(&self) -> u64 {
        self.prefill_tokens
    }

    pub fn kappa_ratio(&self) -> f64 {
        self.cached_tokens as f64 / self.prefill_tokens as f64
    }
}

/// Timing decomposition of one request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticBreakdown {
    pub t_pcie: f64,
    pub t_prefill: f64,
    pub ttft: f64,
    /// Compute share of the non-overlapped critical path, `t_prefill/(t_pcie + t_prefill)`.
    pub utilization: f64,
    pub pcie_overhead: f64,
    pub kappa_ratio: f64,
}

/// `κ_M = F_pf / B_kv`, FLOP per byte.
pub fn kappa_model(model: &ModelSpec) -> f64 {
    flops_per_token(model) / kv_bytes_per_token(model)
}

/// `κ_HW = BW / C_eff`, byte per FLOP.
pub fn kappa_hw(hw: &HardwareSpec, mode: BandwidthMode) -> f64 {
    hw.bandwidth(mode) / hw.compute_throughput()
}

/// Critical cached-to-new token ratio; dimensionless.
pub fn kappa_crit(model: &ModelSpec, hw: &HardwareSpec, mode: BandwidthMode) -> f64 {
    kappa_model(model) * kappa_hw(hw, mode)
}

/// Host-to-device time for `cached_tokens` of KV.
pub fn transfer_time(
    cached_tokens: u64,
    model: &ModelSpec,
    hw: &HardwareSpec,
    mode: BandwidthMode,
) -> f64 {
    cached_tokens as f64 * kv_bytes_per_token(model) / hw.bandwidth(mode)
}

/// Compute time for `tokens` prefill tokens.
pub fn prefill_time(tokens: u64, model: &ModelSpec, hw: &HardwareSpec) -> f64 {
    tokens as f64 * flops_per_token(model) / hw.compute_throughput()
}

/// Combines transfer and compute phases; `alpha = 0` is fully serial,
/// `alpha = 1` hides the shorter phase entirely.
pub fn overlapped(t_pcie: f64, t_prefill: f64, alpha: f64) -> Result<f64, AnalyticsError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AnalyticsError::AlphaOutOfRange(alpha));
    }
    Ok((t_pcie + t_prefill) - alpha * t_pcie.min(t_prefill))
}

pub fn ttft(
    shape: RequestShape,
    model: &ModelSpec,
    hw: &HardwareSpec,
    overlap_alpha: f64,
    mode: BandwidthMode,
) -> Result<AnalyticBreakdown, AnalyticsError> {
    let t_pcie = transfer_time(shape.cached_tokens, model, hw, mode);
    let t_prefill = prefill_time(shape.prefill_tokens, model, hw);
    let ttft = overlapped(t_pcie, t_prefill, overlap_alpha)?;
    Ok(AnalyticBreakdown {
        t_pcie,
        t_prefill,
        ttft,
        utilization: t_prefill / (t_pcie + t_prefill),
        pcie_overhead: t_pcie / t_prefill,
        kappa_ratio: shape.kappa_ratio(),
    })
}

/// `U = t_GPU / (t_PCIe + t_GPU)`, in `(0, 1]`.
pub fn utilization(
    shape: RequestShape,
    model: &ModelSpec,
    hw: &HardwareSpec,
    mode: BandwidthMode,
) -> f64 {
    let t_pcie = transfer_time(shape.cached_tokens, model, hw, mode);
    let t_prefill = prefill_time(shape.prefill_tokens, model, hw);
    t_prefill / (t_pcie + t_prefill)
}

/// `P_OH = t_PCIe / t_GPU`; equals `κ_ratio / κ_crit`.
pub fn pcie_overhead(
    shape: RequestShape,
    model: &ModelSpec,
    hw: &HardwareSpec,
    mode: BandwidthMode,
) -> f64 {
    transfer_time(shape.cached_tokens, model, hw, mode)
        / prefill_time(shape.prefill_tokens, model, hw)
}

pub fn is_memory_bound(
    shape: RequestShape,
    model: &ModelSpec,
    hw: &HardwareSpec,
    mode: BandwidthMode,
) -> bool {
    shape.kappa_ratio() > kappa_crit(model, hw, mode)
}

/// VRAM-bounded concurrency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Concurrency {
    /// `V_eff / ((K+T)·B_kv)` before flooring.
    pub real: f64,
    pub floor: u64,
}

pub fn max_concurrent(shape: RequestShape, model: &ModelSpec, vram_effective: f64) -> Concurrency {
    let per_request =
        (shape.cached_tokens + shape.prefill_tokens) as f64 * kv_bytes_per_token(model);
    let real = vram_effective / per_request;
    Concurrency {
        real,
        floor: real.floor() as u64,
    }
}

/// Tokens per iteration when VRAM, not the token budget, binds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchedTokens {
    /// `N_max(real) · T`.
    pub exact: f64,
    /// `V_eff / (κ_ratio · B_kv)`, the `K ≫ T` limit. Infinite when `K = 0`.
    pub approx: f64,
}

impl SchedTokens {
    pub fn budget_fraction(&self, token_budget: u64) -> f64 {
        self.exact / token_budget as f64
    }
}

pub fn sched_tokens(shape: RequestShape, model: &ModelSpec, vram_effective: f64) -> SchedTokens {
    let n = max_concurrent(shape, model, vram_effective);
    SchedTokens {
        exact: n.real * shape.prefill_tokens as f64,
        approx: vram_effective / (shape.kappa_ratio() * kv_bytes_per_token(model)),
    }
}

/// Roofline x-coordinate of offloaded prefill, `F_pf / (κ_ratio · B_kv)` in FLOP/byte.
///
/// `κ_ratio = 0` transfers nothing and maps to `+∞` (pure compute).
pub fn arithmetic_intensity(kappa_ratio: f64, model: &ModelSpec) -> f64 {
    if kappa_ratio == 0.0 {
        return f64::INFINITY;
    }
    flops_per_token(model) / (kappa_ratio * kv_bytes_per_token(model))
}

/// Routing hint for a heterogeneous cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingClass {
    /// `κ_ratio < 1`: compute-heavy prefill, fine on PCIe-attached parts.
    ComputeIntensive,
    Mixed,
    /// `κ_ratio > 100`: prefers a high-bandwidth host link.
    HighKappa,
}

pub fn routing_class(kappa_ratio: f64) -> RoutingClass {
    if kappa_ratio > 100.0 {
        RoutingClass::HighKappa
    } else if kappa_ratio < 1.0 {
        RoutingClass::ComputeIntensive
    } else {
        RoutingClass::Mixed
    }
}
