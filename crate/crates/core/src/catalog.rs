//! Model and hardware specifications.
//!
//! Everything downstream consumes two per-token constants derived here: the KV
//! footprint `B_kv` (bytes/token) and the prefill cost `F_pf` (FLOP/token).
//! Specs are validated on construction and immutable afterwards, so a
//! [`Catalog`] can be shared freely between threads.
//!
//! The on-disk format is a JSON document with top-level `models` and
//! `hardware` arrays. Units are canonical SI: bytes, bytes/s, FLOP/s.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Catalog bundled with the crate: the five reference models plus A100/H100/B200
/// over PCIe 4/5, an NVLink-C2C superchip and a unified-HBM design point.
pub const BUNDLED_CATALOG: &str = include_str!("../data/catalog.json");

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid entry `{entry}`: field `{field}` {reason}")]
    Invalid {
        entry: String,
        field: &'static str,
        reason: String,
    },
    #[error("duplicate {kind} name `{name}`")]
    Duplicate { kind: &'static str, name: String },
    #[error("unknown {kind} `{name}`; available: {}", available.join(", "))]
    Unknown {
        kind: &'static str,
        name: String,
        available: Vec<String>,
    },
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(entry: &str, field: &'static str, reason: impl Into<String>) -> CatalogError {
    CatalogError::Invalid {
        entry: entry.to_string(),
        field,
        reason: reason.into(),
    }
}

/// Storage precision of one KV element, held as a bit count so that sub-byte
/// formats (4-bit) keep exact integer arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Precision {
    bits: u32,
}

impl Precision {
    pub fn from_bits(bits: u32) -> Option<Self> {
        (bits > 0).then_some(Self { bits })
    }

    /// Accepts any positive byte count that is a whole number of bits
    /// (`0.5` for 4-bit, `1` for 8-bit, `2` for 16-bit).
    pub fn from_bytes(bytes: f64) -> Option<Self> {
        if !bytes.is_finite() || bytes <= 0.0 {
            return None;
        }
        let bits = bytes * 8.0;
        if bits.fract() != 0.0 || bits > u32::MAX as f64 {
            return None;
        }
        Self::from_bits(bits as u32)
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn bytes(self) -> f64 {
        self.bits as f64 / 8.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionKind {
    #[serde(rename = "GQA")]
    Gqa,
    #[serde(rename = "MLA")]
    Mla,
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionKind::Gqa => f.write_str("GQA"),
            AttentionKind::Mla => f.write_str("MLA"),
        }
    }
}

/// Shape of the per-layer KV state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attention {
    /// Grouped-query attention: one K and one V vector per KV head.
    Gqa { kv_heads: u32, head_dim: u32 },
    /// Multi-head latent attention: a compressed latent plus a decoupled rotary key.
    Mla { kv_lora_rank: u32, qk_rope_dim: u32 },
}

impl Attention {
    pub fn kind(&self) -> AttentionKind {
        match self {
            Attention::Gqa { .. } => AttentionKind::Gqa,
            Attention::Mla { .. } => AttentionKind::Mla,
        }
    }

    /// Stored elements per token per layer.
    fn elements_per_layer(&self) -> u64 {
        match *self {
            Attention::Gqa { kv_heads, head_dim } => 2 * kv_heads as u64 * head_dim as u64,
            Attention::Mla {
                kv_lora_rank,
                qk_rope_dim,
            } => kv_lora_rank as u64 + qk_rope_dim as u64,
        }
    }
}

/// A model architecture, reduced to what the offload model needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    name: String,
    total_params: u64,
    active_params: u64,
    layers: u32,
    attention: Attention,
    precision: Precision,
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        total_params: u64,
        active_params: u64,
        layers: u32,
        attention: Attention,
        precision: Precision,
    ) -> Result<Self, CatalogError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(invalid(&name, "name", "must not be empty"));
        }
        if active_params == 0 {
            return Err(invalid(&name, "active_params", "must be > 0"));
        }
        if active_params > total_params {
            return Err(invalid(
                &name,
                "active_params",
                format!("({active_params}) exceeds total_params ({total_params})"),
            ));
        }
        if layers == 0 {
            return Err(invalid(&name, "layers", "must be > 0"));
        }
        match attention {
            Attention::Gqa { kv_heads, head_dim } => {
                if kv_heads == 0 {
                    return Err(invalid(&name, "kv_heads", "must be > 0"));
                }
                if head_dim == 0 {
                    return Err(invalid(&name, "head_dim", "must be > 0"));
                }
            }
            Attention::Mla {
                kv_lora_rank,
                qk_rope_dim,
            } => {
                if kv_lora_rank == 0 {
                    return Err(invalid(&name, "kv_lora_rank", "must be > 0"));
                }
                if qk_rope_dim == 0 {
                    return Err(invalid(&name, "qk_rope_dim", "must be > 0"));
                }
            }
        }
        Ok(Self {
            name,
            total_params,
            active_params,
            layers,
            attention,
            precision,
        })
    }

    /// Convenience constructor for a GQA model with `precision_bytes` per element.
    pub fn gqa(
        name: impl Into<String>,
        total_params: u64,
        active_params: u64,
        layers: u32,
        kv_heads: u32,
        head_dim: u32,
        precision_bytes: f64,
    ) -> Result<Self, CatalogError> {
        let name = name.into();
        let precision = Precision::from_bytes(precision_bytes).ok_or_else(|| {
            invalid(
                &name,
                "precision_bytes",
                format!("must be a positive whole number of bits, got {precision_bytes}"),
            )
        })?;
        Self::new(
            name,
            total_params,
            active_params,
            layers,
            Attention::Gqa { kv_heads, head_dim },
            precision,
        )
    }

    pub fn mla(
        name: impl Into<String>,
        total_params: u64,
        active_params: u64,
        layers: u32,
        kv_lora_rank: u32,
        qk_rope_dim: u32,
        precision_bytes: f64,
    ) -> Result<Self, CatalogError> {
        let name = name.into();
        let precision = Precision::from_bytes(precision_bytes).ok_or_else(|| {
            invalid(
                &name,
                "precision_bytes",
                format!("must be a positive whole number of bits, got {precision_bytes}"),
            )
        })?;
        Self::new(
            name,
            total_params,
            active_params,
            layers,
            Attention::Mla {
                kv_lora_rank,
                qk_rope_dim,
            },
            precision,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn total_params(&self) -> u64 {
        self.total_params
    }

    pub fn active_params(&self) -> u64 {
        self.active_params
    }

    pub fn layers(&self) -> u32 {
        self.layers
    }

    pub fn attention(&self) -> Attention {
        self.attention
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Same architecture stored at a different precision (KV quantization what-ifs).
    pub fn with_precision(&self, precision: Precision) -> Self {
        Self {
            precision,
            ..self.clone()
        }
    }

    pub fn with_name(&self, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..self.clone()
        }
    }
}

/// KV bytes per token, `B_kv`.
///
/// GQA stores a key and a value per KV head: `2·L·H·d_h·P`.
/// MLA stores the compressed latent and the rotary key: `L·(KVL + d_QKR)·P`.
pub fn kv_bytes_per_token(model: &ModelSpec) -> f64 {
    let bits =
        model.layers as u64 * model.attention.elements_per_layer() * model.precision.bits() as u64;
    bits as f64 / 8.0
}

/// Prefill FLOPs per token, `F_pf = 2N` with `N` the active parameters.
pub fn flops_per_token(model: &ModelSpec) -> f64 {
    2.0 * model.active_params as f64
}

/// Which host-device bandwidth figure to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthMode {
    /// Spec-sheet unidirectional peak.
    Peak,
    /// Measured sustained bandwidth; falls back to peak when the entry has none.
    #[default]
    Sustained,
}

impl fmt::Display for BandwidthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthMode::Peak => f.write_str("peak"),
            BandwidthMode::Sustained => f.write_str("sustained"),
        }
    }
}

impl std::str::FromStr for BandwidthMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "peak" => Ok(BandwidthMode::Peak),
            "sustained" => Ok(BandwidthMode::Sustained),
            other => Err(format!("unknown bandwidth mode `{other}` (peak|sustained)")),
        }
    }
}

/// An accelerator together with its host link.
#[derive(Debug, Clone, PartialEq)]
pub struct HardwareSpec {
    name: String,
    compute_throughput: f64,
    link_bandwidth_peak: f64,
    link_bandwidth_sustained: Option<f64>,
    vram_effective: f64,
    tdp_watts: Option<f64>,
    idle_watts: Option<f64>,
}

fn positive(entry: &str, field: &'static str, value: f64) -> Result<f64, CatalogError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(invalid(
            entry,
            field,
            format!("must be a finite value > 0, got {value}"),
        ))
    }
}

impl HardwareSpec {
    pub fn new(
        name: impl Into<String>,
        compute_throughput: f64,
        link_bandwidth_peak: f64,
        link_bandwidth_sustained: Option<f64>,
        vram_effective: f64,
    ) -> Result<Self, CatalogError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(invalid(&name, "name", "must not be empty"));
        }
        positive(&name, "compute_throughput", compute_throughput)?;
        positive(&name, "link_bandwidth_peak", link_bandwidth_peak)?;
        if let Some(bw) = link_bandwidth_sustained {
            positive(&name, "link_bandwidth_sustained", bw)?;
            if bw > link_bandwidth_peak {
                return Err(invalid(
                    &name,
                    "link_bandwidth_sustained",
                    format!("({bw}) exceeds link_bandwidth_peak ({link_bandwidth_peak})"),
                ));
            }
        }
        positive(&name, "vram_effective", vram_effective)?;
        Ok(Self {
            name,
            compute_throughput,
            link_bandwidth_peak,
            link_bandwidth_sustained,
            vram_effective,
            tdp_watts: None,
            idle_watts: None,
        })
    }

    /// Attaches a power envelope. Either bound may be absent.
    pub fn with_power(
        mut self,
        tdp_watts: Option<f64>,
        idle_watts: Option<f64>,
    ) -> Result<Self, CatalogError> {
        if let Some(tdp) = tdp_watts {
            positive(&self.name, "tdp_watts", tdp)?;
        }
        if let Some(idle) = idle_watts {
            if !idle.is_finite() || idle < 0.0 {
                return Err(invalid(
                    &self.name,
                    "idle_watts",
                    format!("must be >= 0, got {idle}"),
                ));
            }
        }
        if let (Some(tdp), Some(idle)) = (tdp_watts, idle_watts) {
            if idle > tdp {
                return Err(invalid(
                    &self.name,
                    "idle_watts",
                    format!("({idle}) exceeds tdp_watts ({tdp})"),
                ));
            }
        }
        self.tdp_watts = tdp_watts;
        self.idle_watts = idle_watts;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn compute_throughput(&self) -> f64 {
        self.compute_throughput
    }

    pub fn link_bandwidth_peak(&self) -> f64 {
        self.link_bandwidth_peak
    }

    pub fn link_bandwidth_sustained(&self) -> Option<f64> {
        self.link_bandwidth_sustained
    }

    pub fn vram_effective(&self) -> f64 {
        self.vram_effective
    }

    pub fn tdp_watts(&self) -> Option<f64> {
        self.tdp_watts
    }

    pub fn idle_watts(&self) -> Option<f64> {
        self.idle_watts
    }

    pub fn bandwidth(&self, mode: BandwidthMode) -> f64 {
        match mode {
            BandwidthMode::Peak => self.link_bandwidth_peak,
            BandwidthMode::Sustained => self
                .link_bandwidth_sustained
                .unwrap_or(self.link_bandwidth_peak),
        }
    }

    pub fn with_name(&self, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..self.clone()
        }
    }

    pub fn with_compute_throughput(&self, flops: f64) -> Result<Self, CatalogError> {
        positive(&self.name, "compute_throughput", flops)?;
        Ok(Self {
            compute_throughput: flops,
            ..self.clone()
        })
    }

    /// Replaces the sustained figure; peak is raised to match if it would be exceeded.
    pub fn with_sustained_bandwidth(&self, bw: f64) -> Result<Self, CatalogError> {
        positive(&self.name, "link_bandwidth_sustained", bw)?;
        Ok(Self {
            link_bandwidth_sustained: Some(bw),
            link_bandwidth_peak: self.link_bandwidth_peak.max(bw),
            ..self.clone()
        })
    }

    pub fn with_peak_bandwidth(&self, bw: f64) -> Result<Self, CatalogError> {
        positive(&self.name, "link_bandwidth_peak", bw)?;
        Ok(Self {
            link_bandwidth_peak: bw,
            link_bandwidth_sustained: self.link_bandwidth_sustained.map(|s| s.min(bw)),
            ..self.clone()
        })
    }

    pub fn with_vram_effective(&self, bytes: f64) -> Result<Self, CatalogError> {
        positive(&self.name, "vram_effective", bytes)?;
        Ok(Self {
            vram_effective: bytes,
            ..self.clone()
        })
    }
}

/// Wire form of a model entry; field names are the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub name: String,
    pub total_params: u64,
    pub active_params: u64,
    pub attention_kind: AttentionKind,
    pub layers: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_heads: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_dim: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_lora_rank: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qk_rope_dim: Option<u32>,
    pub precision_bytes: f64,
}

/// Wire form of a hardware entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareRecord {
    pub name: String,
    pub compute_throughput: f64,
    pub link_bandwidth_peak: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_bandwidth_sustained: Option<f64>,
    pub vram_effective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdp_watts: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idle_watts: Option<f64>,
}

fn require(entry: &str, field: &'static str, value: Option<u32>) -> Result<u32, CatalogError> {
    value.ok_or_else(|| invalid(entry, field, "is required for this attention kind"))
}

fn forbid(entry: &str, field: &'static str, value: Option<u32>) -> Result<(), CatalogError> {
    match value {
        Some(_) => Err(invalid(
            entry,
            field,
            "does not apply to this attention kind",
        )),
        None => Ok(()),
    }
}

impl TryFrom<ModelRecord> for ModelSpec {
    type Error = CatalogError;

    fn try_from(r: ModelRecord) -> Result<Self, Self::Error> {
        let attention = match r.attention_kind {
            AttentionKind::Gqa => {
                forbid(&r.name, "kv_lora_rank", r.kv_lora_rank)?;
                forbid(&r.name, "qk_rope_dim", r.qk_rope_dim)?;
                Attention::Gqa {
                    kv_heads: require(&r.name, "kv_heads", r.kv_heads)?,
                    head_dim: require(&r.name, "head_dim", r.head_dim)?,
                }
            }
            AttentionKind::Mla => {
                forbid(&r.name, "kv_heads", r.kv_heads)?;
                forbid(&r.name, "head_dim", r.head_dim)?;
                Attention::Mla {
                    kv_lora_rank: require(&r.name, "kv_lora_rank", r.kv_lora_rank)?,
                    qk_rope_dim: require(&r.name, "qk_rope_dim", r.qk_rope_dim)?,
                }
            }
        };
        let precision = Precision::from_bytes(r.precision_bytes).ok_or_else(|| {
            invalid(
                &r.name,
                "precision_bytes",
                format!(
                    "must be a positive whole number of bits, got {}",
                    r.precision_bytes
                ),
            )
        })?;
        ModelSpec::new(
            r.name,
            r.total_params,
            r.active_params,
            r.layers,
            attention,
            precision,
        )
    }
}

impl From<&ModelSpec> for ModelRecord {
    fn from(m: &ModelSpec) -> Self {
        let (kv_heads, head_dim, kv_lora_rank, qk_rope_dim) = match m.attention {
            Attention::Gqa { kv_heads, head_dim } => (Some(kv_heads), Some(head_dim), None, None),
            Attention::Mla {
                kv_lora_rank,
                qk_rope_dim,
            } => (None, None, Some(kv_lora_rank), Some(qk_rope_dim)),
        };
        ModelRecord {
            name: m.name.clone(),
            total_params: m.total_params,
            active_params: m.active_params,
            attention_kind: m.attention.kind(),
            layers: m.layers,
            kv_heads,
            head_dim,
            kv_lora_rank,
            qk_rope_dim,
            precision_bytes: m.precision.bytes(),
        }
    }
}

impl TryFrom<HardwareRecord> for HardwareSpec {
    type Error = CatalogError;

    fn try_from(r: HardwareRecord) -> Result<Self, Self::Error> {
        HardwareSpec::new(
            r.name,
            r.compute_throughput,
            r.link_bandwidth_peak,
            r.link_bandwidth_sustained,
            r.vram_effective,
        )?
        .with_power(r.tdp_watts, r.idle_watts)
    }
}

impl From<&HardwareSpec> for HardwareRecord {
    fn from(h: &HardwareSpec) -> Self {
        HardwareRecord {
            name: h.name.clone(),
            compute_throughput: h.compute_throughput,
            link_bandwidth_peak: h.link_bandwidth_peak,
            link_bandwidth_sustained: h.link_bandwidth_sustained,
            vram_effective: h.vram_effective,
            tdp_watts: h.tdp_watts,
            idle_watts: h.idle_watts,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    #[serde(default)]
    models: Vec<ModelRecord>,
    #[serde(default)]
    hardware: Vec<HardwareRecord>,
}

/// A validated set of models and hardware, unique by name within each list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    models: Vec<ModelSpec>,
    hardware: Vec<HardwareSpec>,
}

impl Catalog {
    pub fn new(models: Vec<ModelSpec>, hardware: Vec<HardwareSpec>) -> Result<Self, CatalogError> {
        check_unique("model", models.iter().map(ModelSpec::name))?;
        check_unique("hardware", hardware.iter().map(HardwareSpec::name))?;
        Ok(Self { models, hardware })
    }

    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED_CATALOG).expect("bundled catalog is valid")
    }

    /// Parses a catalog document. Blank input yields an empty catalog.
    pub fn from_json_str(text: &str) -> Result<Self, CatalogError> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let file: CatalogFile = serde_json::from_str(text).map_err(|e| CatalogError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let models = file
            .models
            .into_iter()
            .map(ModelSpec::try_from)
            .collect::<Result<Vec<_>, _>>()?;
        let hardware = file
            .hardware
            .into_iter()
            .map(HardwareSpec::try_from)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(models, hardware)
    }

    pub fn to_json_string(&self) -> String {
        let file = CatalogFile {
            models: self.models.iter().map(ModelRecord::from).collect(),
            hardware: self.hardware.iter().map(HardwareRecord::from).collect(),
        };
        serde_json::to_string_pretty(&file).expect("catalog serializes")
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn hardware(&self) -> &[HardwareSpec] {
        &self.hardware
    }

    pub fn model(&self, name: &str) -> Result<&ModelSpec, CatalogError> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| CatalogError::Unknown {
                kind: "model",
                name: name.to_string(),
                available: self.models.iter().map(|m| m.name.clone()).collect(),
            })
    }

    pub fn hw(&self, name: &str) -> Result<&HardwareSpec, CatalogError> {
        self.hardware
            .iter()
            .find(|h| h.name == name)
            .ok_or_else(|| CatalogError::Unknown {
                kind: "hardware",
                name: name.to_string(),
                available: self.hardware.iter().map(|h| h.name.clone()).collect(),
            })
    }
}

fn check_unique<'a>(
    kind: &'static str,
    names: impl Iterator<Item = &'a str>,
) -> Result<(), CatalogError> {
    let mut seen = BTreeSet::new();
    for name in names {
        if !seen.insert(name) {
            return Err(CatalogError::Duplicate {
                kind,
                name: name.to_string(),
            });
        }
    }
    Ok(())
}

/// Reads and validates a catalog file.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Catalog::from_json_str(&text)
}
