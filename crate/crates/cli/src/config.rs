//! Experiment configuration files.
//!
//! Every section is optional; an empty object `{}` describes the scalar
//! linear-quadratic benchmark on an 8-step binary tree with the relative
//! entropy and `τ = 0`. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bmdp_core::adjoint::AdjointScheme;
use bmdp_core::dynamics::{registry_model, registry_names, LqModel, LqParams, ModelCoefficients};
use bmdp_core::measure::{ActionSpace, EntropicOt, Regularizer};
use bmdp_core::solver::{ControlProblem, LambdaChoice, MirrorDescentConfig, OracleConfig};
use bmdp_core::tree::ScenarioTree;
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub tree: TreeConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub action_space: ActionSpaceConfig,
    /// Reference measure `ϱ`; uniform when absent.
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
    #[serde(default)]
    pub regularizer: RegularizerConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub oracle: OracleSettings,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "eight")]
    pub n_steps: usize,
    #[serde(default = "one_usize")]
    pub d_prime: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            n_steps: 8,
            d_prime: 1,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn eight() -> usize {
    8
}
fn one_usize() -> usize {
    1
}

/// `kind` is `lq`, `lq_controlled_sigma` or a registered model name; the
/// shape of `parameters` depends on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "lq_kind")]
    pub kind: String,
    #[serde(default)]
    pub parameters: serde_json::Map<String, serde_json::Value>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: lq_kind(),
            parameters: serde_json::Map::new(),
        }
    }
}

fn lq_kind() -> String {
    "lq".into()
}

/// A matrix given as rows, or a bare number for a `1 × 1` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixValue {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixValue {
    fn to_matrix(&self, key: &str) -> CliResult<DMatrix<f64>> {
        match self {
            MatrixValue::Scalar(v) => Ok(DMatrix::from_element(1, 1, *v)),
            MatrixValue::Rows(rows) => {
                let r = rows.len();
                let c = rows.first().map_or(0, Vec::len);
                if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
                    return Err(CliError::schema(key, "expected a non-empty rectangular matrix"));
                }
                Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorValue {
    Scalar(f64),
    Entries(Vec<f64>),
}

/// Parameters of the linear-quadratic models; defaults are the scalar
/// benchmark `β = 0.1, B = 1, σ₀ = 0.3, Q = R = G = 1, x₀ = 0.5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqParameters {
    #[serde(default = "scalar_defaults::scalar_0_1")]
    pub beta: MatrixValue,
    #[serde(default = "scalar_defaults::scalar_1")]
    pub b: MatrixValue,
    #[serde(default = "scalar_defaults::scalar_0_3")]
    pub sigma0: MatrixValue,
    /// One `d × d'` gain per action coordinate; only for `lq_controlled_sigma`.
    #[serde(default)]
    pub sigma_gain: Option<Vec<MatrixValue>>,
    #[serde(default = "scalar_defaults::scalar_1")]
    pub q: MatrixValue,
    #[serde(default = "scalar_defaults::scalar_1")]
    pub r: MatrixValue,
    #[serde(default = "scalar_defaults::scalar_1")]
    pub g: MatrixValue,
    #[serde(default = "x0_default")]
    pub x0: VectorValue,
}

// serde's `default = "path"` needs a function path, so spell the scalars out.
mod scalar_defaults {
    use super::MatrixValue;
    pub fn scalar_0_1() -> MatrixValue {
        MatrixValue::Scalar(0.1)
    }
    pub fn scalar_1() -> MatrixValue {
        MatrixValue::Scalar(1.0)
    }
    pub fn scalar_0_3() -> MatrixValue {
        MatrixValue::Scalar(0.3)
    }
}

fn x0_default() -> VectorValue {
    VectorValue::Scalar(0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
}

/// Either explicit `points` or an evenly spaced scalar `grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpaceConfig {
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
}

impl Default for ActionSpaceConfig {
    fn default() -> Self {
        Self {
            points: None,
            grid: Some(GridConfig { n: 5, lo: -1.0, hi: 1.0 }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    #[default]
    RelativeEntropy,
    ChiSquared,
    EntropicOt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostGenerator {
    /// `c(a, a') = |a - a'|²`.
    SquaredDistance,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostFile {
    /// JSON file holding the matrix, relative to the configuration file.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostConfig {
    Generator(CostGenerator),
    Matrix(Vec<Vec<f64>>),
    File(CostFile),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerConfig {
    #[serde(default)]
    pub kind: RegularizerKind,
    /// The remaining keys only apply to `entropic_ot`.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub cost: Option<CostConfig>,
    #[serde(default)]
    pub anchor: Option<usize>,
    #[serde(default)]
    pub sinkhorn_tolerance: Option<f64>,
    #[serde(default)]
    pub sinkhorn_max_iterations: Option<usize>,
    #[serde(default)]
    pub inner_tolerance: Option<f64>,
    #[serde(default)]
    pub inner_max_iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoKeyword {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaConfig {
    Value(f64),
    Auto(AutoKeyword),
}

impl Default for LambdaConfig {
    fn default() -> Self {
        LambdaConfig::Auto(AutoKeyword::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub lambda: LambdaConfig,
    #[serde(default = "max_iters")]
    pub max_iters: usize,
    #[serde(default = "tol")]
    pub tol: f64,
    #[serde(default)]
    pub adjoint: AdjointScheme,
    /// Random control pairs for the inequality probes.
    #[serde(default = "probe_pairs")]
    pub probe_pairs: usize,
    /// Random control pairs used while calibrating `λ`.
    #[serde(default = "calibration_pairs")]
    pub calibration_pairs: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: 0.0,
            lambda: LambdaConfig::default(),
            max_iters: max_iters(),
            tol: tol(),
            adjoint: AdjointScheme::default(),
            probe_pairs: probe_pairs(),
            calibration_pairs: calibration_pairs(),
        }
    }
}

fn max_iters() -> usize {
    200
}
fn tol() -> f64 {
    1e-14
}
fn probe_pairs() -> usize {
    50
}
fn calibration_pairs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSettings {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "grid_divisions")]
    pub grid_divisions: usize,
    #[serde(default = "oracle_iters")]
    pub max_iters: usize,
    #[serde(default = "oracle_tolerance")]
    pub tolerance: f64,
    #[serde(default = "damping")]
    pub damping: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            grid_divisions: grid_divisions(),
            max_iters: oracle_iters(),
            tolerance: oracle_tolerance(),
            damping: damping(),
        }
    }
}

fn yes() -> bool {
    true
}
fn grid_divisions() -> usize {
    64
}
fn oracle_iters() -> usize {
    10_000
}
fn oracle_tolerance() -> f64 {
    1e-11
}
fn damping() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub directory: Option<PathBuf>,
    #[serde(default = "formats")]
    pub formats: Vec<Format>,
    #[serde(default = "yes")]
    pub emit_probe_report: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: None,
            formats: formats(),
            emit_probe_report: true,
        }
    }
}

fn formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

/// A validated configuration turned into solver objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: ControlProblem,
    pub run: MirrorDescentConfig,
    pub oracle: Option<OracleConfig>,
}

pub fn load_config(path: &Path) -> CliResult<Experiment> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let config = parse_config(&text, path)?;
    build(config, base)
}

/// Parses and schema-checks a configuration; `origin` only labels errors.
pub fn parse_config(text: &str, origin: &Path) -> CliResult<ExperimentConfig> {
    // Syntax errors first, so they are not reported as schema errors.
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    let config: ExperimentConfig = from_value(value, "")?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(CliError::schema(
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", config.schema_version),
        ));
    }
    Ok(config)
}

fn from_value<T: DeserializeOwned>(value: serde_json::Value, prefix: &str) -> CliResult<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let key = match (prefix.is_empty(), inner.as_str()) {
            (true, _) => inner.clone(),
            (false, ".") => prefix.to_string(),
            (false, _) => format!("{prefix}.{inner}"),
        };
        CliError::schema(key, e.into_inner().to_string())
    })
}

fn finite_positive(key: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Range(format!("{key} must be positive and finite, got {v}")))
    }
}

pub fn build(config: ExperimentConfig, base: &Path) -> CliResult<Experiment> {
    let t = &config.tree;
    finite_positive("tree.horizon", t.horizon)?;
    let tree = ScenarioTree::new(t.horizon, t.n_steps, t.d_prime).map_err(|e| match e {
        bmdp_core::Error::SizeExceeded { n_steps, d_prime } => CliError::SizeExceeded { n_steps, d_prime },
        other => CliError::Range(format!("tree: {other}")),
    })?;

    let actions = build_actions(&config.action_space)?;
    let model = build_model(&config.model, actions.clone())?;
    let regularizer = build_regularizer(&config.regularizer, &actions, base)?;

    let s = &config.solver;
    if !(s.tau >= 0.0 && s.tau.is_finite()) {
        return Err(CliError::Range(format!("solver.tau must be nonnegative, got {}", s.tau)));
    }
    let lambda = match s.lambda {
        LambdaConfig::Value(l) => {
            finite_positive("solver.lambda", l)?;
            if s.tau > l {
                return Err(CliError::Range(format!(
                    "solver.tau ({}) must not exceed solver.lambda ({l})",
                    s.tau
                )));
            }
            LambdaChoice::Fixed(l)
        }
        LambdaConfig::Auto(_) => LambdaChoice::Auto,
    };
    if !(s.tol.is_finite()) {
        return Err(CliError::Range(format!("solver.tol must be finite, got {}", s.tol)));
    }

    let mut problem = ControlProblem::new(tree, model, regularizer, s.tau)
        .map_err(|e| CliError::Range(e.to_string()))?
        .with_scheme(s.adjoint);
    if let Some(reference) = &config.reference {
        problem = problem
            .with_reference(reference.clone())
            .map_err(|e| CliError::Range(format!("reference: {e}")))?;
    }

    let o = &config.oracle;
    let oracle = if o.enabled {
        finite_positive("oracle.tolerance", o.tolerance)?;
        if !(o.damping > 0.0 && o.damping <= 1.0) {
            return Err(CliError::Range(format!("oracle.damping must be in (0, 1], got {}", o.damping)));
        }
        if o.grid_divisions == 0 {
            return Err(CliError::Range("oracle.grid_divisions must be at least 1".into()));
        }
        Some(OracleConfig {
            max_iters: o.max_iters,
            tolerance: o.tolerance,
            damping: o.damping,
            grid_divisions: o.grid_divisions,
        })
    } else {
        None
    };

    let run = MirrorDescentConfig {
        lambda,
        max_iters: s.max_iters,
        tol: s.tol,
        initial: None,
        seed: config.seed,
        probe_pairs: s.calibration_pairs,
    };
    Ok(Experiment {
        config,
        problem,
        run,
        oracle,
    })
}

fn build_actions(cfg: &ActionSpaceConfig) -> CliResult<ActionSpace> {
    let result = match (&cfg.points, &cfg.grid) {
        (Some(points), None) => ActionSpace::new(points.clone()),
        (None, Some(g)) => ActionSpace::uniform_grid(g.n, g.lo, g.hi),
        _ => {
            return Err(CliError::schema(
                "action_space",
                "give exactly one of `points` or `grid`",
            ))
        }
    };
    result.map_err(|e| CliError::Range(format!("action_space: {e}")))
}

fn build_model(cfg: &ModelConfig, actions: ActionSpace) -> CliResult<Arc<dyn ModelCoefficients>> {
    let params = serde_json::Value::Object(cfg.parameters.clone());
    match cfg.kind.as_str() {
        "lq" | "lq_controlled_sigma" => {
            let p: LqParameters = from_value(params, "model.parameters")?;
            let controlled = cfg.kind == "lq_controlled_sigma";
            let sigma_gain = match (&p.sigma_gain, controlled) {
                (Some(gains), true) => gains
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g.to_matrix(&format!("model.parameters.sigma_gain[{i}]")))
                    .collect::<CliResult<Vec<_>>>()?,
                (None, true) => {
                    return Err(CliError::schema(
                        "model.parameters.sigma_gain",
                        "required for lq_controlled_sigma",
                    ))
                }
                (Some(_), false) => {
                    return Err(CliError::schema(
                        "model.parameters.sigma_gain",
                        "only allowed for lq_controlled_sigma",
                    ))
                }
                (None, false) => Vec::new(),
            };
            let x0 = match &p.x0 {
                VectorValue::Scalar(v) => DVector::from_element(1, *v),
                VectorValue::Entries(v) => DVector::from_column_slice(v),
            };
            let params = LqParams {
                beta: p.beta.to_matrix("model.parameters.beta")?,
                b: p.b.to_matrix("model.parameters.b")?,
                sigma0: p.sigma0.to_matrix("model.parameters.sigma0")?,
                sigma_gain,
                q: p.q.to_matrix("model.parameters.q")?,
                r: p.r.to_matrix("model.parameters.r")?,
                g: p.g.to_matrix("model.parameters.g")?,
                x0,
            };
            let model = LqModel::new(params, actions).map_err(|e| CliError::Range(format!("model: {e}")))?;
            Ok(Arc::new(model))
        }
        name if registry_names().contains(&name) => {
            let p: BTreeMap<String, f64> = from_value(params, "model.parameters")?;
            registry_model(name, actions, &p).map_err(|e| CliError::Range(format!("model: {e}")))
        }
        other => Err(CliError::schema(
            "model.kind",
            format!(
                "unknown model `{other}`; expected lq, lq_controlled_sigma or one of: {}",
                registry_names().join(", ")
            ),
        )),
    }
}

fn build_regularizer(cfg: &RegularizerConfig, actions: &ActionSpace, base: &Path) -> CliResult<Regularizer> {
    let eot_only = [
        ("kappa", cfg.kappa.is_some()),
        ("cost", cfg.cost.is_some()),
        ("anchor", cfg.anchor.is_some()),
        ("sinkhorn_tolerance", cfg.sinkhorn_tolerance.is_some()),
        ("sinkhorn_max_iterations", cfg.sinkhorn_max_iterations.is_some()),
        ("inner_tolerance", cfg.inner_tolerance.is_some()),
        ("inner_max_iterations", cfg.inner_max_iterations.is_some()),
    ];
    match cfg.kind {
        RegularizerKind::RelativeEntropy | RegularizerKind::ChiSquared => {
            if let Some((key, _)) = eot_only.iter().find(|(_, set)| *set) {
                return Err(CliError::schema(
                    format!("regularizer.{key}"),
                    "only applies to entropic_ot",
                ));
            }
            Ok(if cfg.kind == RegularizerKind::RelativeEntropy {
                Regularizer::RelativeEntropy
            } else {
                Regularizer::ChiSquared
            })
        }
        RegularizerKind::EntropicOt => {
            let kappa = cfg
                .kappa
                .ok_or_else(|| CliError::schema("regularizer.kappa", "required for entropic_ot"))?;
            finite_positive("regularizer.kappa", kappa)?;
            let cost = match cfg.cost.clone().unwrap_or(CostConfig::Generator(CostGenerator::SquaredDistance)) {
                CostConfig::Generator(CostGenerator::SquaredDistance) => actions.squared_distance_cost(),
                CostConfig::Generator(CostGenerator::Zero) => vec![vec![0.0; actions.len()]; actions.len()],
                CostConfig::Matrix(m) => m,
                CostConfig::File(f) => read_cost(&base.join(&f.path))?,
            };
            if cost.len() != actions.len() {
                return Err(CliError::Range(format!(
                    "regularizer.cost is {}×{}, but there are {} actions",
                    cost.len(),
                    cost.first().map_or(0, Vec::len),
                    actions.len()
                )));
            }
            let range = |e: bmdp_core::Error| CliError::Range(format!("regularizer: {e}"));
            let mut eot = EntropicOt::new(cost, kappa).map_err(range)?;
            if let Some(a) = cfg.anchor {
                eot = eot.with_anchor(a).map_err(range)?;
            }
            if cfg.sinkhorn_tolerance.is_some() || cfg.sinkhorn_max_iterations.is_some() {
                eot = eot
                    .with_sinkhorn(
                        cfg.sinkhorn_tolerance.unwrap_or(EntropicOt::DEFAULT_TOLERANCE),
                        cfg.sinkhorn_max_iterations.unwrap_or(EntropicOt::DEFAULT_MAX_ITERATIONS),
                    )
                    .map_err(range)?;
            }
            if cfg.inner_tolerance.is_some() || cfg.inner_max_iterations.is_some() {
                eot = eot
                    .with_inner(
                        cfg.inner_tolerance.unwrap_or(EntropicOt::DEFAULT_INNER_TOLERANCE),
                        cfg.inner_max_iterations.unwrap_or(EntropicOt::DEFAULT_INNER_MAX_ITERATIONS),
                    )
                    .map_err(range)?;
            }
            Ok(Regularizer::EntropicOt(eot))
        }
    }
}

fn read_cost(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
