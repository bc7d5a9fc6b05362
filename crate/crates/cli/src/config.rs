//! Declarative experiment configuration: a single TOML file with every
//! default centralized here and echoed back into the persisted resolved
//! config, so a run can always be reproduced from its artifacts.

use serde::{Deserialize, Serialize};
use surfmc_core::calculus::DivVariant;
use surfmc_core::dynamics::Scheme;
use surfmc_core::surface::LevelKind;
use surfmc_core::{ProductLaw, Result, ShardLayout};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub measure: MeasureCfg,
    pub level: LevelCfg,
    pub batch: BatchCfg,
    pub sde: SdeCfg,
    pub grid: GridCfg,
    pub tolerance: ToleranceCfg,
    pub divergence: DivergenceCfg,
    pub suites: SuitesCfg,
    pub output: OutputCfg,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: 1,
            measure: MeasureCfg::default(),
            level: LevelCfg::default(),
            batch: BatchCfg::default(),
            sde: SdeCfg::default(),
            grid: GridCfg::default(),
            tolerance: ToleranceCfg::default(),
            divergence: DivergenceCfg::default(),
            suites: SuitesCfg::default(),
            output: OutputCfg::default(),
        }
    }
}

/// Reference measure: exponent `m` and weights, either the power rule
/// `mu_h = c h^(-s)` (requires `s > m`) or an explicit list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureCfg {
    pub m: u32,
    pub n: usize,
    pub weight_c: f64,
    pub weight_s: f64,
    pub weights: Option<Vec<f64>>,
}

impl Default for MeasureCfg {
    fn default() -> Self {
        Self { m: 1, n: 16, weight_c: 1.0, weight_s: 2.0, weights: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelCfg {
    pub kind: LevelKind,
    /// Hyperplane direction; defaults to `b_h = 1/h`.
    pub b: Option<Vec<f64>>,
}

impl Default for LevelCfg {
    fn default() -> Self {
        Self { kind: LevelKind::Hyperplane, b: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchCfg {
    pub count: usize,
    pub seed: u64,
    pub shard_size: usize,
}

impl Default for BatchCfg {
    fn default() -> Self {
        Self { count: 1_000_000, seed: 42, shard_size: 8192 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeCfg {
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    pub ensemble: usize,
    pub seed: u64,
}

impl Default for SdeCfg {
    fn default() -> Self {
        Self { dt: 1e-3, horizon: 5.0, scheme: Scheme::TamedExplicit, ensemble: 100_000, seed: 43 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridCfg {
    /// Number of quantile grid points `(2i+1)/(2 points)`.
    pub points: usize,
}

impl Default for GridCfg {
    fn default() -> Self {
        Self { points: 10 }
    }
}

/// Statistical pass rule: `|residual| <= se_multiplier * SE` and
/// `SE <= se_cap` (a residual must be both unbiased and informative).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceCfg {
    pub se_multiplier: f64,
    pub se_cap: f64,
}

impl Default for ToleranceCfg {
    fn default() -> Self {
        Self { se_multiplier: 4.0, se_cap: 0.05 }
    }
}

/// Which reading of the quadratic term enters the sphere divergence:
/// `auto` certifies both and keeps the consistent one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereVariantCfg {
    Auto,
    QxNorm,
    Q2xNorm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivergenceCfg {
    pub sphere_variant: SphereVariantCfg,
}

impl Default for DivergenceCfg {
    fn default() -> Self {
        Self { sphere_variant: SphereVariantCfg::Auto }
    }
}

impl SphereVariantCfg {
    pub fn fixed(self) -> Option<DivVariant> {
        match self {
            SphereVariantCfg::Auto => None,
            SphereVariantCfg::QxNorm => Some(DivVariant::QxNorm),
            SphereVariantCfg::Q2xNorm => Some(DivVariant::Q2xNorm),
        }
    }
}

pub const ALL_SUITES: [&str; 7] =
    ["moments", "ibp", "divergence", "surface", "perimeter", "sde", "fejer"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuitesCfg {
    pub enabled: Vec<String>,
}

impl Default for SuitesCfg {
    fn default() -> Self {
        Self { enabled: ALL_SUITES.iter().map(|s| s.to_string()).collect() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputCfg {
    pub dir: String,
    pub format: OutputFormat,
    /// Worker threads for sharded estimators; 0 keeps the library default.
    /// Changes throughput, never results.
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl Default for OutputCfg {
    fn default() -> Self {
        Self { dir: "out".into(), format: OutputFormat::Json, workers: 0 }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("config parse error: {e}"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Validate everything up front and report every problem at once.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if self.schema_version != 1 {
            errors.push(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.measure.m < 1 {
            errors.push("measure.m must be >= 1".into());
        }
        if self.measure.n < 1 {
            errors.push("measure.n must be >= 1".into());
        }
        match &self.measure.weights {
            Some(w) => {
                if w.len() != self.measure.n {
                    errors.push(format!(
                        "measure.weights length {} does not match n = {}",
                        w.len(),
                        self.measure.n
                    ));
                }
                if w.iter().any(|&v| !(v > 0.0)) {
                    errors.push("measure.weights must all be positive".into());
                }
            }
            None => {
                if self.measure.weight_s <= self.measure.m as f64 {
                    errors.push(format!(
                        "measure.weight_s = {} must exceed m = {} for a summable sequence",
                        self.measure.weight_s, self.measure.m
                    ));
                }
                if !(self.measure.weight_c > 0.0) {
                    errors.push("measure.weight_c must be positive".into());
                }
            }
        }
        if let Some(b) = &self.level.b {
            if b.len() != self.measure.n {
                errors.push(format!(
                    "level.b length {} does not match measure.n = {}",
                    b.len(),
                    self.measure.n
                ));
            }
            if b.iter().all(|&v| v == 0.0) {
                errors.push("level.b must be nonzero".into());
            }
        }
        if self.batch.count < 2 {
            errors.push("batch.count must be at least 2".into());
        }
        if self.batch.shard_size == 0 {
            errors.push("batch.shard_size must be positive".into());
        }
        if !(self.sde.dt > 0.0 && self.sde.horizon >= self.sde.dt) {
            errors.push("sde: need 0 < dt <= horizon".into());
        }
        if self.sde.ensemble < 2 {
            errors.push("sde.ensemble must be at least 2".into());
        }
        if self.sde.scheme == Scheme::ExactOu && self.measure.m != 1 {
            errors.push("sde.scheme = exact_ou is only valid for measure.m = 1".into());
        }
        if self.grid.points < 2 {
            errors.push("grid.points must be at least 2".into());
        }
        if !(self.tolerance.se_multiplier > 0.0) {
            errors.push("tolerance.se_multiplier must be positive".into());
        }
        if !(self.tolerance.se_cap > 0.0) {
            errors.push("tolerance.se_cap must be positive".into());
        }
        for name in &self.suites.enabled {
            if !ALL_SUITES.contains(&name.as_str()) {
                errors.push(format!("unknown suite '{name}'"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// The main product law described by the `measure` section.
    pub fn main_law(&self) -> Result<ProductLaw> {
        match &self.measure.weights {
            Some(w) => ProductLaw::new(self.measure.m, w.clone()),
            None => ProductLaw::from_weight_rule(
                self.measure.m,
                self.measure.n,
                self.measure.weight_c,
                self.measure.weight_s,
            ),
        }
    }

    /// Hyperplane direction: configured or the `1/h` default.
    pub fn direction(&self, n: usize) -> Vec<f64> {
        match &self.level.b {
            Some(b) if b.len() == n => b.clone(),
            _ => (1..=n).map(|h| 1.0 / h as f64).collect(),
        }
    }

    pub fn layout(&self) -> ShardLayout {
        ShardLayout::new(self.batch.shard_size)
    }

    pub fn suite_enabled(&self, name: &str) -> bool {
        self.suites.enabled.iter().any(|s| s == name)
    }
}
