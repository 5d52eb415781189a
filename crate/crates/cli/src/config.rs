//! Run configuration. Every field has an explicit value after parsing, and the
//! parsed struct re-serializes to the canonical form echoed in the output.

use std::collections::BTreeMap;

use areaflux::drawdown::{DrawdownOptions, ExpectationOptions};
use areaflux::first_passage::MomentOptions;
use areaflux::monte_carlo::{Crossing, Horizon, McConfig, Scheme};
use areaflux::ode::OdeOptions;
use areaflux::quadrature::QuadOptions;
use areaflux::sturm_liouville::SlOptions;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    FpaLaplace,
    FpaMoments,
    OmegaProb,
    OmegaLaplace,
    DrawdownLaplace,
    AyTime,
    TaxRuinTime,
    TaxRuinArea,
    Simulate,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::FpaLaplace => "fpa-laplace",
            Task::FpaMoments => "fpa-moments",
            Task::OmegaProb => "omega-prob",
            Task::OmegaLaplace => "omega-laplace",
            Task::DrawdownLaplace => "drawdown-laplace",
            Task::AyTime => "ay-time",
            Task::TaxRuinTime => "tax-ruin-time",
            Task::TaxRuinArea => "tax-ruin-area",
            Task::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Analytic,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideName {
    #[default]
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryName {
    Natural,
    Absorbing,
    Truncated,
}

/// A number or a list of numbers; a list makes the run a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    One(f64),
    Many(Vec<f64>),
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::One(x) => vec![*x],
            Grid::Many(v) => v.clone(),
        }
    }

    pub fn is_sweep(&self) -> bool {
        matches!(self, Grid::Many(_))
    }
}

/// An expression or a bare number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExprOrNumber {
    Number(f64),
    Expr(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `bm_drift`, `gbm`, `ou`, `quad_drift` or `scaled_bessel`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    /// Use closed forms where the builtin has them.
    #[serde(default = "yes")]
    pub closed_forms: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<ExprOrNumber>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<ExprOrNumber>,
    /// `null` means minus infinity.
    #[serde(default)]
    pub lower: Option<f64>,
    /// `null` means plus infinity.
    #[serde(default)]
    pub upper: Option<f64>,
    #[serde(default = "natural")]
    pub lower_boundary: BoundaryName,
    #[serde(default = "natural")]
    pub upper_boundary: BoundaryName,
    #[serde(default)]
    pub ref_point: Option<f64>,
    #[serde(default)]
    pub sigma_zeros: Vec<f64>,
}

fn yes() -> bool {
    true
}

fn natural() -> BoundaryName {
    BoundaryName::Natural
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default)]
    pub lambda: Option<Grid>,
    #[serde(default)]
    pub v0: Option<Grid>,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub side: SideName,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub a_units: Option<f64>,
    /// Initial running maximum for `ay-time` (defaults to `v0`).
    #[serde(default)]
    pub s: Option<f64>,
    /// Azema-Yor contour `g(x)`.
    #[serde(default)]
    pub contour: Option<ExprOrNumber>,
    /// Task mirrored by `simulate`.
    #[serde(default)]
    pub mirror: Option<Task>,
    /// Overrides the scale-tail classification for Omega tasks.
    #[serde(default)]
    pub declared_finite_scale: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl From<OdeOptions<f64>> for OdeConfig {
    fn from(o: OdeOptions<f64>) -> Self {
        Self {
            rel_tol: o.rel_tol,
            abs_tol: o.abs_tol,
            min_step: o.min_step,
            max_steps: o.max_steps,
        }
    }
}

impl From<OdeConfig> for OdeOptions<f64> {
    fn from(o: OdeConfig) -> Self {
        Self {
            rel_tol: o.rel_tol,
            abs_tol: o.abs_tol,
            min_step: o.min_step,
            max_steps: o.max_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlConfig {
    pub tolerance: f64,
    pub max_enlargements: usize,
    pub grid_points: usize,
    pub ode: OdeConfig,
}

impl Default for SlConfig {
    fn default() -> Self {
        let d = SlOptions::<f64>::default();
        Self {
            tolerance: d.tolerance,
            max_enlargements: d.max_enlargements,
            grid_points: d.grid_points,
            ode: d.ode.into(),
        }
    }
}

impl SlConfig {
    pub fn options(&self) -> SlOptions<f64> {
        SlOptions {
            tolerance: self.tolerance,
            max_enlargements: self.max_enlargements,
            grid_points: self.grid_points,
            ode: self.ode.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentConfig {
    pub initial_degree: usize,
    pub max_degree: usize,
    pub tolerance: f64,
}

impl Default for MomentConfig {
    fn default() -> Self {
        let d = MomentOptions::<f64>::default();
        Self {
            initial_degree: d.initial_degree,
            max_degree: d.max_degree,
            tolerance: d.tolerance,
        }
    }
}

impl MomentConfig {
    pub fn options(&self) -> MomentOptions<f64> {
        MomentOptions {
            initial_degree: self.initial_degree,
            max_degree: self.max_degree,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrawdownConfig {
    pub tail_tol: f64,
    pub max_windows: usize,
    pub ode: OdeConfig,
}

impl Default for DrawdownConfig {
    fn default() -> Self {
        let d = DrawdownOptions::<f64>::default();
        Self {
            tail_tol: d.tail_tol,
            max_windows: d.max_windows,
            ode: d.ode.into(),
        }
    }
}

impl DrawdownConfig {
    pub fn options(&self) -> DrawdownOptions<f64> {
        DrawdownOptions {
            tail_tol: self.tail_tol,
            max_windows: self.max_windows,
            ode: self.ode.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectationConfig {
    pub tolerance: f64,
    pub max_windows: usize,
    pub min_gap: f64,
    pub quad: QuadConfig,
    pub ode: OdeConfig,
}

impl Default for ExpectationConfig {
    fn default() -> Self {
        let d = ExpectationOptions::<f64>::default();
        Self {
            tolerance: d.tolerance,
            max_windows: d.max_windows,
            min_gap: d.min_gap,
            quad: QuadConfig {
                abs_tol: d.quad.abs_tol,
                rel_tol: d.quad.rel_tol,
                max_subdivisions: d.quad.max_subdivisions,
            },
            ode: d.ode.into(),
        }
    }
}

impl ExpectationConfig {
    pub fn options(&self) -> ExpectationOptions<f64> {
        ExpectationOptions {
            tolerance: self.tolerance,
            max_windows: self.max_windows,
            min_gap: self.min_gap,
            quad: QuadOptions {
                abs_tol: self.quad.abs_tol,
                rel_tol: self.quad.rel_tol,
                max_subdivisions: self.quad.max_subdivisions,
            },
            ode: self.ode.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default)]
    pub sturm_liouville: SlConfig,
    #[serde(default)]
    pub moments: MomentConfig,
    #[serde(default)]
    pub drawdown: DrawdownConfig,
    #[serde(default)]
    pub expectation: ExpectationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    EulerMaruyama,
    Milstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingName {
    Interpolated,
    BridgeCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum HorizonConfig {
    Fixed(f64),
    Adaptive { initial: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: HorizonConfig,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeName,
    #[serde(default = "default_crossing")]
    pub crossing: CrossingName,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_paths() -> usize {
    McConfig::default().paths
}

fn default_dt() -> f64 {
    McConfig::default().dt
}

fn default_horizon() -> HorizonConfig {
    match McConfig::default().horizon {
        Horizon::Fixed(h) => HorizonConfig::Fixed(h),
        Horizon::Adaptive { initial, max } => HorizonConfig::Adaptive { initial, max },
    }
}

fn default_scheme() -> SchemeName {
    SchemeName::EulerMaruyama
}

fn default_crossing() -> CrossingName {
    CrossingName::BridgeCorrected
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            paths: default_paths(),
            dt: default_dt(),
            seed: 0,
            horizon: default_horizon(),
            scheme: default_scheme(),
            crossing: default_crossing(),
            threads: None,
        }
    }
}

impl McSection {
    pub fn config(&self) -> McConfig {
        McConfig {
            paths: self.paths,
            dt: self.dt,
            seed: self.seed,
            horizon: match self.horizon {
                HorizonConfig::Fixed(h) => Horizon::Fixed(h),
                HorizonConfig::Adaptive { initial, max } => Horizon::Adaptive { initial, max },
            },
            scheme: match self.scheme {
                SchemeName::EulerMaruyama => Scheme::EulerMaruyama,
                SchemeName::Milstein => Scheme::Milstein,
            },
            crossing: match self.crossing {
                CrossingName::Interpolated => Crossing::Interpolated,
                CrossingName::BridgeCorrected => Crossing::BridgeCorrected,
            },
            threads: self.threads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub engine: Engine,
    pub model: ModelConfig,
    /// Area weight `b^2`: `unit`, `square`, `constant(eta)` or an expression.
    #[serde(default = "unit_weight")]
    pub weight: ExprOrNumber,
    /// Bankruptcy rate: `square_negative`, `const_negative(eta)` or an
    /// expression.
    #[serde(default)]
    pub omega: Option<ExprOrNumber>,
    /// Tax rate `gamma(x)`.
    #[serde(default)]
    pub gamma: Option<ExprOrNumber>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub mc: McSection,
}

fn unit_weight() -> ExprOrNumber {
    ExprOrNumber::Expr("unit".into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config: {e}"))
    }

    pub fn canonical(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
