//! Run configuration. Every command reads the same schema; command-line flags
//! override individual fields.

use lemnika_core::atomizer::{AtomizeConfig, CertifyConfig};
use lemnika_core::grid::GridSpec;
use lemnika_core::homlift::{CircledSetModel, SandwichGrid};
use lemnika_core::mamass::ReferenceKind;
use lemnika_core::potential::PlanarMeasure;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `builtin:ball`, `builtin:bidisk`, `builtin:ellipsoid:<c>`, or a path to
    /// a serialized measure.
    pub measure: String,
    /// Grid for builtin measures.
    pub grid: GridSpec,
    /// Circled-set model; derived from the measure when absent.
    pub model: Option<String>,
    pub eps: f64,
    pub k_start: usize,
    pub k_max: usize,
    pub certify: CertifyConfig,
    /// Degrees of the constructed pairs for the C² stages.
    pub n_list: Vec<usize>,
    pub sandwich_grid: SandwichGrid,
    /// Recorded with every run; the numerical stages are deterministic and
    /// draw no random numbers.
    pub seed: u64,
    /// Execution details that do not change results are not echoed into run
    /// artifacts, so reruns elsewhere or with other thread counts hash equal.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub tolerances: Tolerances,
    pub fekete: FeketeConfig,
    pub render: RenderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            measure: "builtin:ball".into(),
            grid: GridSpec::default(),
            model: None,
            eps: 0.25,
            k_start: 8,
            k_max: 256,
            certify: CertifyConfig::default(),
            n_list: vec![6, 12],
            sandwich_grid: SandwichGrid::default(),
            seed: 0,
            threads: None,
            out_dir: PathBuf::from("."),
            tolerances: Tolerances::default(),
            fekete: FeketeConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// `|total MA mass - (2π)²|`.
    pub mass: f64,
    /// `max(|P-1|, |Q-1|)` at level-set points.
    pub residual: f64,
    /// Slack of the one-sided bound after the shift.
    pub upper: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { mass: 1e-6, residual: 1e-8, upper: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeketeConfig {
    /// `interval:<a>,<b>` or `disk:<r>`.
    pub set: String,
    pub n: usize,
    pub candidates: usize,
    /// Degrees for the Bernstein–Walsh comparison.
    pub n_list: Vec<usize>,
    pub probe: [f64; 2],
    /// `fekete` or `chebyshev` for `sandwich1d`.
    pub poly: String,
    pub eps: f64,
}

impl Default for FeketeConfig {
    fn default() -> Self {
        Self {
            set: "interval:-1,1".into(),
            n: 12,
            candidates: 801,
            n_list: vec![4, 8, 16],
            probe: [3.0, 0.0],
            poly: "fekete".into(),
            eps: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// `vk`, `rho`, `utilde`, `un` or `mask`.
    pub field: String,
    /// `w=<re>,<im>` (vary z), `z=<re>,<im>` (vary w) or `radial`
    /// (z = x, w = y real).
    pub slice: String,
    /// `[x0, x1, y0, y1]`.
    pub window: [f64; 4],
    pub nx: usize,
    pub ny: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { field: "vk".into(), slice: "w=1,0".into(), window: [-2.0, 2.0, -2.0, 2.0], nx: 101, ny: 101 }
    }
}

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("malformed config {}: {e}", path.display())))
    }

    pub fn atomize_config(&self) -> AtomizeConfig {
        AtomizeConfig { k_start: self.k_start, k_max: self.k_max, certify: self.certify }
    }

    /// Builtin name without the `builtin:` prefix, if the source is builtin.
    pub fn builtin_name(&self) -> Option<&str> {
        self.measure.strip_prefix("builtin:")
    }

    pub fn load_measure(&self) -> anyhow::Result<PlanarMeasure> {
        match self.builtin_name() {
            Some(name) => PlanarMeasure::builtin(name, self.grid).map_err(|e| usage(e.to_string())),
            None => {
                let text = std::fs::read_to_string(&self.measure)
                    .map_err(|e| usage(format!("cannot read measure {}: {e}", self.measure)))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("malformed measure {}: {e}", self.measure)))
            }
        }
    }

    /// Explicit model, else the builtin of the same name, else the custom
    /// model of the measure itself.
    pub fn load_model(&self, mu: Option<&PlanarMeasure>) -> anyhow::Result<CircledSetModel> {
        let name = self.model.as_deref().or(self.builtin_name().map(|_| self.measure.as_str()));
        match name {
            Some(n) => CircledSetModel::builtin(n).ok_or_else(|| usage(format!("unknown model {n}"))),
            None => {
                let mu = match mu {
                    Some(m) => m.clone(),
                    None => self.load_measure()?,
                };
                Ok(CircledSetModel::custom(mu, 0.0))
            }
        }
    }
}

pub fn reference_kind(model: &CircledSetModel) -> Option<ReferenceKind> {
    use lemnika_core::homlift::ModelKind;
    match model.kind {
        ModelKind::Ball => Some(ReferenceKind::Ball),
        ModelKind::Bidisk => Some(ReferenceKind::Bidisk),
        ModelKind::Ellipsoid { c } => Some(ReferenceKind::Ellipsoid { c }),
        ModelKind::CustomGrid => None,
    }
}

/// `re,im` or a bare real.
pub fn parse_complex(s: &str) -> anyhow::Result<lemnika_core::Complex64> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |t: &str| t.parse::<f64>().map_err(|_| usage(format!("bad number {t:?} in {s:?}")));
    match parts.as_slice() {
        [re] => Ok(lemnika_core::Complex64::new(num(re)?, 0.0)),
        [re, im] => Ok(lemnika_core::Complex64::new(num(re)?, num(im)?)),
        _ => Err(usage(format!("expected re,im: {s:?}"))),
    }
}

pub fn parse_list(s: &str) -> anyhow::Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| usage(format!("bad integer {t:?} in list {s:?}"))))
        .collect()
}
