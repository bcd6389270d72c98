//! Roofline curves over a κ_ratio sweep.
//!
//! The ceiling is `min(C_eff, AI·BW)` where the bandwidth is the host link,
//! not HBM. Each point on a sweep is an operational point of offloaded
//! prefill at that κ_ratio.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::analytics::{arithmetic_intensity, kappa_crit};
use crate::catalog::{BandwidthMode, HardwareSpec, ModelSpec};

#[derive(Debug, Error)]
pub enum RooflineError {
    #[error("roofline sweep needs at least one hardware entry")]
    NoHardware,
    #[error("invalid sweep range: {0}")]
    Range(String),
    #[error("writing roofline CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("writing roofline CSV: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ComputeBound,
    BandwidthBound,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::ComputeBound => "compute_bound",
            Regime::BandwidthBound => "bandwidth_bound",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RooflinePoint {
    pub kappa_ratio: f64,
    pub arithmetic_intensity: f64,
    pub attainable: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RooflineSeries {
    pub model_name: String,
    pub hw_name: String,
    pub bandwidth_mode: BandwidthMode,
    pub points: Vec<RooflinePoint>,
    pub kappa_crit_marker: f64,
}

impl RooflineSeries {
    /// First swept κ_ratio that is bandwidth-bound after a compute-bound point.
    pub fn flip_kappa(&self) -> Option<f64> {
        self.points
            .windows(2)
            .find(|w| w[0].regime == Regime::ComputeBound && w[1].regime == Regime::BandwidthBound)
            .map(|w| w[1].kappa_ratio)
    }

    pub fn regime_flips(&self) -> usize {
        self.points
            .windows(2)
            .filter(|w| w[0].regime != w[1].regime)
            .count()
    }
}

/// Logarithmic κ_ratio grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRange {
    pub min: f64,
    pub max: f64,
    pub points_per_decade: u32,
}

impl Default for SweepRange {
    fn default() -> Self {
        Self {
            min: 0.1,
            max: 1e5,
            points_per_decade: 16,
        }
    }
}

impl SweepRange {
    pub fn validate(&self) -> Result<(), RooflineError> {
        if !(self.min.is_finite() && self.max.is_finite())
            || self.min <= 0.0
            || self.min >= self.max
        {
            return Err(RooflineError::Range(format!(
                "need 0 < min < max, got min={} max={}",
                self.min, self.max
            )));
        }
        if self.points_per_decade == 0 {
            return Err(RooflineError::Range(
                "points_per_decade must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Grid points `min·10^(i/ppd)`, ending exactly at `max`.
    pub fn grid(&self) -> Vec<f64> {
        let decades = (self.max / self.min).log10();
        let steps = (decades * self.points_per_decade as f64 - 1e-9)
            .ceil()
            .max(1.0) as usize;
        let lo = self.min.log10();
        let mut out: Vec<f64> = (0..steps)
            .map(|i| 10f64.powf(lo + i as f64 / self.points_per_decade as f64))
            .collect();
        out[0] = self.min;
        out.push(self.max);
        out
    }

    /// Multiplicative spacing between neighbouring grid points.
    pub fn step_factor(&self) -> f64 {
        10f64.powf(1.0 / self.points_per_decade as f64)
    }
}

/// `min(C_eff, ai·BW)`.
pub fn attainable_flops(ai: f64, hw: &HardwareSpec, mode: BandwidthMode) -> f64 {
    let c = hw.compute_throughput();
    if ai.is_infinite() {
        return c;
    }
    c.min(ai * hw.bandwidth(mode))
}

fn point(
    kappa_ratio: f64,
    model: &ModelSpec,
    hw: &HardwareSpec,
    mode: BandwidthMode,
) -> RooflinePoint {
    let ai = arithmetic_intensity(kappa_ratio, model);
    let bw_ceiling = ai * hw.bandwidth(mode);
    let regime = if bw_ceiling >= hw.compute_throughput() {
        Regime::ComputeBound
    } else {
        Regime::BandwidthBound
    };
    RooflinePoint {
        kappa_ratio,
        arithmetic_intensity: ai,
        attainable: attainable_flops(ai, hw, mode),
        regime,
    }
}

pub fn roofline_series(
    model: &ModelSpec,
    hw: &HardwareSpec,
    range: &SweepRange,
    mode: BandwidthMode,
) -> Result<RooflineSeries, RooflineError> {
    range.validate()?;
    Ok(RooflineSeries {
        model_name: model.name().to_string(),
        hw_name: hw.name().to_string(),
        bandwidth_mode: mode,
        points: range
            .grid()
            .into_iter()
            .map(|k| point(k, model, hw, mode))
            .collect(),
        kappa_crit_marker: kappa_crit(model, hw, mode),
    })
}

/// One series per hardware entry, in input order.
pub fn roofline_sweep(
    model: &ModelSpec,
    hw_list: &[HardwareSpec],
    range: &SweepRange,
    mode: BandwidthMode,
) -> Result<Vec<RooflineSeries>, RooflineError> {
    if hw_list.is_empty() {
        return Err(RooflineError::NoHardware);
    }
    hw_list
        .iter()
        .map(|hw| roofline_series(model, hw, range, mode))
        .collect()
}

pub const CSV_HEADER: [&str; 8] = [
    "model",
    "hardware",
    "bandwidth_mode",
    "kappa_ratio",
    "arithmetic_intensity_flop_per_byte",
    "attainable_flops",
    "regime",
    "kappa_crit",
];

pub fn write_csv<W: Write>(series: &[RooflineSeries], out: W) -> Result<(), RooflineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for s in series {
        let mode = s.bandwidth_mode.to_string();
        let crit = s.kappa_crit_marker.to_string();
        for p in &s.points {
            w.write_record([
                s.model_name.as_str(),
                s.hw_name.as_str(),
                mode.as_str(),
                &p.kappa_ratio.to_string(),
                &p.arithmetic_intensity.to_string(),
                &p.attainable.to_string(),
                p.regime.as_str(),
                crit.as_str(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
