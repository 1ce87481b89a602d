//! Run configuration: one TOML file, environment and flag overrides on top.
//!
//! Absent sections take their defaults; a section that is present must
//! spell out every field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vsring_core::layout::{Layout, LayoutKind};
use vsring_core::pattern::PatternConfig;
use vsring_core::perf::LatencyParams;
use vsring_core::ring::{CostModel, ExecMode, RingConfig, RingSchedule};

pub const OUT_DIR_ENV: &str = "VSRING_OUT_DIR";

/// Problem with the configuration; maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// RoPE-rotated queries and keys with slash and vertical structure
    Rope,
    /// uniform entries
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub seq_len: usize,
    pub head_dim: usize,
    pub heads: usize,
    pub inputs: InputKind,
    pub theta_base: f64,
}

impl Default for Dims {
    fn default() -> Self {
        Self { seq_len: 512, head_dim: 32, heads: 1, inputs: InputKind::Rope, theta_base: 10_000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSection {
    pub kind: LayoutKind,
    /// stripe width of `striped_block`
    pub block: usize,
}

impl Default for LayoutSection {
    fn default() -> Self {
        Self { kind: LayoutKind::Zigzag, block: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSection {
    pub world: usize,
    pub inner: usize,
    pub outer: usize,
    pub ms_per_flop: f64,
    pub intra_ms: f64,
    pub inter_ms: f64,
    pub gpus_per_node: usize,
}

impl Default for RingSection {
    fn default() -> Self {
        let c = CostModel::default();
        Self {
            world: 4,
            inner: 2,
            outer: 2,
            ms_per_flop: c.ms_per_flop,
            intra_ms: c.intra_ms,
            inter_ms: c.inter_ms,
            gpus_per_node: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RopeModel {
    Zero,
    /// seeded random means and a correlated query/key factor
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RopeSection {
    pub model: RopeModel,
    pub trials: usize,
    pub deltas: Vec<i64>,
    /// position pairs per delta
    pub pairs: usize,
    pub max_delta: usize,
    /// Monte Carlo columns of the band profile at every `profile_stride`-th offset
    pub profile_stride: usize,
}

impl Default for RopeSection {
    fn default() -> Self {
        Self { model: RopeModel::Random, trials: 10_000, deltas: vec![0, 1, 7, 64, 300], pairs: 10, max_delta: 512, profile_stride: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancePattern {
    VerticalSlash,
    Dense,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceSection {
    pub layouts: Vec<LayoutKind>,
    pub pattern: BalancePattern,
    /// covered fraction of the causal triangle for `vertical_slash`
    pub density: f64,
    pub trials: usize,
}

impl Default for BalanceSection {
    fn default() -> Self {
        Self {
            layouts: vec![LayoutKind::Zigzag, LayoutKind::StripedBlock],
            pattern: BalancePattern::VerticalSlash,
            density: 0.05,
            trials: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub dims: Dims,
    #[serde(default)]
    pub pattern: PatternConfig,
    #[serde(default)]
    pub layout: LayoutSection,
    #[serde(default)]
    pub ring: RingSection,
    #[serde(default = "LatencyParams::reference")]
    pub latency: LatencyParams,
    #[serde(default)]
    pub rope: RopeSection,
    #[serde(default)]
    pub balance: BalanceSection,
}

fn default_seed() -> u64 {
    0
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn layout(&self, kind: LayoutKind) -> Layout {
        Layout { kind, world: self.ring.world, block: self.layout.block, seq_len: self.dims.seq_len }
    }

    pub fn cost(&self) -> CostModel {
        CostModel {
            ms_per_flop: self.ring.ms_per_flop,
            intra_ms: self.ring.intra_ms,
            inter_ms: self.ring.inter_ms,
            gpus_per_node: self.ring.gpus_per_node,
        }
    }

    pub fn ring_config(&self, kind: LayoutKind, schedule: RingSchedule, mode: ExecMode) -> RingConfig {
        RingConfig { schedule, layout: self.layout(kind), cost: self.cost(), mode }
    }

    pub fn schedule(&self) -> RingSchedule {
        RingSchedule { world: self.ring.world, inner: self.ring.inner, outer: self.ring.outer }
    }

    /// Checks every section before anything runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.dims;
        if d.seq_len == 0 {
            return Err(bad("dims.seq_len must be positive"));
        }
        if d.head_dim == 0 || d.head_dim % 2 != 0 {
            return Err(bad(format!("dims.head_dim must be even and positive, got {}", d.head_dim)));
        }
        if d.heads == 0 {
            return Err(bad("dims.heads must be at least 1"));
        }
        if !(d.theta_base > 0.0) {
            return Err(bad(format!("dims.theta_base must be positive, got {}", d.theta_base)));
        }
        self.pattern.validate().map_err(|e| bad(e.to_string()))?;
        if self.pattern.last_q > d.seq_len {
            return Err(bad(format!(
                "pattern.last_q ({}) exceeds dims.seq_len ({})",
                self.pattern.last_q, d.seq_len
            )));
        }
        let r = &self.ring;
        if r.world == 0 || r.inner == 0 || r.outer == 0 {
            return Err(bad("ring.world, ring.inner and ring.outer must be positive"));
        }
        if r.inner * r.outer != r.world {
            return Err(bad(format!(
                "ring.world ({}) must equal ring.inner ({}) * ring.outer ({})",
                r.world, r.inner, r.outer
            )));
        }
        for (name, v) in [("ring.ms_per_flop", r.ms_per_flop), ("ring.intra_ms", r.intra_ms), ("ring.inter_ms", r.inter_ms)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(bad(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if r.gpus_per_node == 0 {
            return Err(bad("ring.gpus_per_node must be positive"));
        }
        if self.layout.block == 0 {
            return Err(bad("layout.block must be positive"));
        }
        let mut kinds = vec![self.layout.kind];
        kinds.extend(&self.balance.layouts);
        for kind in kinds {
            self.check_layout(kind)?;
        }
        self.latency.validate().map_err(|e| bad(e.to_string()))?;
        let rp = &self.rope;
        if rp.trials == 0 || rp.pairs == 0 || rp.deltas.is_empty() || rp.max_delta == 0 || rp.profile_stride == 0 {
            return Err(bad("rope.trials, rope.pairs, rope.max_delta, rope.profile_stride and rope.deltas must be non-empty"));
        }
        let b = &self.balance;
        if b.layouts.is_empty() {
            return Err(bad("balance.layouts must list at least one layout"));
        }
        if !(b.density > 0.0 && b.density <= 1.0) {
            return Err(bad(format!("balance.density must lie in (0, 1], got {}", b.density)));
        }
        if b.trials == 0 {
            return Err(bad("balance.trials must be at least 1"));
        }
        Ok(())
    }

    fn check_layout(&self, kind: LayoutKind) -> Result<(), ConfigError> {
        let (w, s, b) = (self.ring.world, self.dims.seq_len, self.layout.block);
        let ok = match kind {
            LayoutKind::Zigzag => s % (2 * w) == 0,
            LayoutKind::StripedToken => s % w == 0,
            LayoutKind::StripedBlock => s % (w * b) == 0,
        };
        if ok {
            return Ok(());
        }
        Err(bad(match kind {
            LayoutKind::Zigzag => format!("2 * ring.world ({}) does not divide dims.seq_len ({s}) for the zigzag layout", 2 * w),
            LayoutKind::StripedToken => format!("ring.world ({w}) does not divide dims.seq_len ({s})"),
            LayoutKind::StripedBlock => {
                format!("ring.world * layout.block ({}) does not divide dims.seq_len ({s}) for the striped_block layout", w * b)
            }
        }))
    }
}

/// Sets `path` (dot separated) in a TOML table. The value is parsed as a
/// TOML literal and kept as a string if that fails.
pub fn set_key(root: &mut toml::Table, path: &str, raw: &str) -> Result<(), ConfigError> {
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(bad(format!("malformed key '{path}'")));
    }
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| bad(format!("'{k}' in '{path}' is not a section")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse(table: toml::Table) -> Result<RunConfig, ConfigError> {
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        bad(format!("{path}: {}", e.into_inner().message()))
    })
}

/// Layers: defaults, the file, `VSRING_OUT_DIR`, then `--set` pairs; flags
/// the caller applies afterwards win over all of them. Sections in the
/// file must be complete; `--set` edits single keys of the result.
pub fn load(file: Option<&Path>, env_out: Option<String>, sets: &[String]) -> Result<RunConfig, ConfigError> {
    let table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| bad(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| bad(format!("{}: {}", p.display(), e.message())))?
        }
        None => toml::Table::new(),
    };
    let mut cfg = parse(table)?;
    if let Some(dir) = env_out {
        cfg.out_dir = PathBuf::from(dir);
    }
    if sets.is_empty() {
        return Ok(cfg);
    }
    let mut table = toml::Table::try_from(&cfg).map_err(|e| bad(e.to_string()))?;
    for s in sets {
        let (k, v) = s.split_once('=').ok_or_else(|| bad(format!("--set expects key=value, got '{s}'")))?;
        set_key(&mut table, k.trim(), v.trim())?;
    }
    parse(table)
}
