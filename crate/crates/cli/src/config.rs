//! JSON run configuration: schema, validation and conversion into core
//! types. Validation failures carry the offending field in the message and
//! map to exit code 2.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use fiekit_core::fie::{FieConfig, FieObjective, SolverSettings};
use fiekit_core::kfunction::KFunction;
use fiekit_core::lyapunov::{
    design_full_order_observer, LinearFunctionalObserver, LinearSystem, ObserverDesign,
};
use fiekit_core::model::SystemModel;
use fiekit_core::powersys::{build_discrete_model, default_fie_config, PowerSystemParams};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub fie: Option<FieSection>,
    #[serde(default)]
    pub estimator: Option<EstimatorKind>,
    #[serde(default)]
    pub observer: Option<ObserverConfig>,
    #[serde(default)]
    pub statenorm: Option<StateNormSection>,
    #[serde(default)]
    pub certify: CertifySection,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub params: Option<PowerSystemParams>,
    #[serde(default)]
    pub linear: Option<LinearMatrices>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearMatrices {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "L")]
    pub l: Vec<Vec<f64>>,
    /// Optional infinity-norm bound on the noise (enables simulation).
    #[serde(default)]
    pub noise_bound: Option<f64>,
    /// Optional initial state for simulation (defaults to zero).
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub horizon: usize,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_runs")]
    pub monte_carlo_runs: usize,
    #[serde(default)]
    pub zero_noise: bool,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_runs() -> usize {
    1
}

fn default_burn_in() -> usize {
    20
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            horizon: 150,
            seeds: Vec::new(),
            monte_carlo_runs: 1,
            zero_noise: false,
            burn_in: default_burn_in(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieSection {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub weights: Option<WeightsSection>,
    #[serde(default)]
    pub solver: Option<SolverSection>,
}

fn default_eta() -> f64 {
    0.9
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub max_iter: Option<usize>,
    pub grad_tol: Option<f64>,
    pub step_tol: Option<f64>,
    pub penalty_weight_init: Option<f64>,
    pub penalty_growth: Option<f64>,
    pub max_penalty_rounds: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Fie,
    Deadbeat,
    Observer,
    Statenorm,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    #[serde(default)]
    pub matrices: Option<ObserverMatrices>,
    /// "riccati" or "deadbeat": design a full-order observer instead of
    /// supplying matrices.
    #[serde(default)]
    pub design: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverMatrices {
    #[serde(rename = "N")]
    pub n: Vec<Vec<f64>>,
    #[serde(rename = "J")]
    pub j: Vec<Vec<f64>>,
    #[serde(rename = "P_xi")]
    pub p_xi: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub t: Vec<Vec<f64>>,
    #[serde(default)]
    pub xi0: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateNormSection {
    pub epsilon: f64,
    pub rho1: KFunctionSpec,
    pub rho2: KFunctionSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum KFunctionSpec {
    Quadratic { a: f64 },
    Power { a: f64, p: f64 },
}

impl KFunctionSpec {
    pub fn build(&self) -> KFunction {
        match self {
            KFunctionSpec::Quadratic { a } => KFunction::Quadratic { a: *a },
            KFunctionSpec::Power { a, p } => KFunction::Power { a: *a, p: *p },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySection {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_cert_tol")]
    pub tol: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

fn default_samples() -> usize {
    10_000
}

fn default_cert_tol() -> f64 {
    1e-8
}

impl Default for CertifySection {
    fn default() -> Self {
        CertifySection {
            n_samples: default_samples(),
            tol: default_cert_tol(),
            epsilon: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub directory: String,
    #[serde(default = "default_true")]
    pub emit_states: bool,
    #[serde(default = "default_true")]
    pub emit_estimates: bool,
    #[serde(default = "default_true")]
    pub emit_timing: bool,
}

fn default_out_dir() -> String {
    "out".to_string()
}

fn default_true() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: default_out_dir(),
            emit_states: true,
            emit_estimates: true,
            emit_timing: true,
        }
    }
}

/// The resolved model: either the built-in benchmark (with its parameters)
/// or a user-supplied linear system.
pub enum ResolvedModel {
    PowerSystem {
        params: PowerSystemParams,
        model: SystemModel,
    },
    Linear {
        sys: LinearSystem,
        model: SystemModel,
        noise_bound: Option<f64>,
        x0: DVector<f64>,
    },
}

impl ResolvedModel {
    pub fn model(&self) -> &SystemModel {
        match self {
            ResolvedModel::PowerSystem { model, .. } => model,
            ResolvedModel::Linear { model, .. } => model,
        }
    }
}

fn to_matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() {
        return Err(CliError::config(format!("model.{field} must not be empty")));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(CliError::config(format!(
            "model.{field} rows must not be empty"
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(CliError::config(format!(
                "model.{field} row {i} has {} entries, expected {ncols}",
                row.len()
            )));
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::config(format!("{e}")))?;
        if config.schema != 1 {
            return Err(CliError::config(format!(
                "schema: expected version 1, got {}",
                config.schema
            )));
        }
        if config.experiment.horizon == 0 {
            return Err(CliError::config(
                "experiment.horizon must be at least 1".to_string(),
            ));
        }
        Ok(config)
    }

    pub fn resolve_model(&self) -> Result<ResolvedModel, CliError> {
        match (&self.model.builtin, &self.model.linear) {
            (Some(name), None) => {
                if name != "powersys" {
                    return Err(CliError::config(format!(
                        "model.builtin: unknown builtin '{name}' (expected \"powersys\")"
                    )));
                }
                let params = self.model.params.clone().unwrap_or_default();
                params
                    .validate()
                    .map_err(|e| CliError::config(format!("model.params: {e}")))?;
                let model = build_discrete_model(&params)
                    .map_err(|e| CliError::config(format!("model.params: {e}")))?;
                Ok(ResolvedModel::PowerSystem { params, model })
            }
            (None, Some(linear)) => {
                let a = to_matrix("linear.A", &linear.a)?;
                let b = to_matrix("linear.B", &linear.b)?;
                let c = to_matrix("linear.C", &linear.c)?;
                let d = to_matrix("linear.D", &linear.d)?;
                let l = to_matrix("linear.L", &linear.l)?;
                let sys = LinearSystem::new(a, b, c, d, l)
                    .map_err(|e| CliError::config(format!("model.linear: {e}")))?;
                let mut model = sys.to_model();
                if let Some(bound) = linear.noise_bound {
                    if bound < 0.0 {
                        return Err(CliError::config(
                            "model.linear.noise_bound must be nonnegative".to_string(),
                        ));
                    }
                    model = model
                        .with_noise_set(
                            fiekit_core::model::BoxSet::symmetric(sys.n_w(), bound).unwrap(),
                        )
                        .map_err(|e| CliError::config(format!("model.linear.noise_bound: {e}")))?;
                }
                let x0 = match &linear.x0 {
                    Some(values) => {
                        if values.len() != sys.n_x() {
                            return Err(CliError::config(format!(
                                "model.linear.x0 has {} entries, expected {}",
                                values.len(),
                                sys.n_x()
                            )));
                        }
                        DVector::from_vec(values.clone())
                    }
                    None => DVector::zeros(sys.n_x()),
                };
                Ok(ResolvedModel::Linear {
                    sys,
                    model,
                    noise_bound: linear.noise_bound,
                    x0,
                })
            }
            (Some(_), Some(_)) => Err(CliError::config(
                "model: specify either builtin or linear, not both".to_string(),
            )),
            (None, None) => Err(CliError::config(
                "model: one of builtin or linear is required".to_string(),
            )),
        }
    }

    /// The effective seed list: explicit seeds win, otherwise
    /// `monte_carlo_runs` consecutive seeds from a fixed base.
    pub fn effective_seeds(&self, override_seed: Option<u64>) -> Vec<u64> {
        if let Some(seed) = override_seed {
            return vec![seed];
        }
        if !self.experiment.seeds.is_empty() {
            return self.experiment.seeds.clone();
        }
        (0..self.experiment.monte_carlo_runs.max(1))
            .map(|i| 42 + i as u64)
            .collect()
    }

    /// Builds the estimation configuration for the resolved model, falling
    /// back to the benchmark defaults or identity weights.
    pub fn fie_config(&self, resolved: &ResolvedModel) -> Result<FieConfig, CliError> {
        let dims = resolved.model().dims();
        let base = match &self.fie {
            None => match resolved {
                ResolvedModel::PowerSystem { params, .. } => default_fie_config(params)
                    .map_err(|e| CliError::config(format!("fie: {e}")))?,
                ResolvedModel::Linear { .. } => {
                    FieConfig::quadratic_identity(default_eta(), dims.n_x, dims.n_w, dims.n_y)
                        .map_err(|e| CliError::config(format!("fie: {e}")))?
                }
            },
            Some(section) => {
                let objective = match &section.weights {
                    Some(w) => FieObjective::Quadratic {
                        p: to_matrix("fie.weights.P", &w.p)?,
                        q: to_matrix("fie.weights.Q", &w.q)?,
                        r: to_matrix("fie.weights.R", &w.r)?,
                    },
                    None => match resolved {
                        ResolvedModel::PowerSystem { params, .. } => {
                            match default_fie_config(params)
                                .map_err(|e| CliError::config(format!("fie: {e}")))?
                                .objective
                            {
                                obj @ FieObjective::Quadratic { .. } => obj,
                                _ => unreachable!("benchmark default is quadratic"),
                            }
                        }
                        ResolvedModel::Linear { .. } => FieObjective::Quadratic {
                            p: DMatrix::identity(dims.n_x, dims.n_x),
                            q: DMatrix::identity(dims.n_w, dims.n_w),
                            r: DMatrix::identity(dims.n_y, dims.n_y),
                        },
                    },
                };
                let mut solver = match resolved {
                    ResolvedModel::PowerSystem { params, .. } => default_fie_config(params)
                        .map_err(|e| CliError::config(format!("fie: {e}")))?
                        .solver,
                    ResolvedModel::Linear { .. } => SolverSettings::default(),
                };
                if let Some(s) = &section.solver {
                    if let Some(v) = s.max_iter {
                        solver.max_iter = v;
                    }
                    if let Some(v) = s.grad_tol {
                        solver.grad_tol = v;
                    }
                    if let Some(v) = s.step_tol {
                        solver.step_tol = v;
                    }
                    if let Some(v) = s.penalty_weight_init {
                        solver.penalty_weight_init = v;
                    }
                    if let Some(v) = s.penalty_growth {
                        solver.penalty_growth = v;
                    }
                    if let Some(v) = s.max_penalty_rounds {
                        solver.max_penalty_rounds = v;
                    }
                }
                FieConfig::new(section.eta, objective)
                    .and_then(|c| c.with_solver(solver))
                    .map_err(|e| CliError::config(format!("fie: {e}")))?
            }
        };
        Ok(base)
    }

    pub fn resolve_observer(
        &self,
        sys: &LinearSystem,
    ) -> Result<LinearFunctionalObserver, CliError> {
        let section = self
            .observer
            .as_ref()
            .ok_or_else(|| CliError::config("observer: section is required".to_string()))?;
        match (&section.matrices, &section.design) {
            (Some(m), None) => {
                let n = to_matrix("observer.N", &m.n)?;
                let order = n.nrows();
                let xi0 = match &m.xi0 {
                    Some(values) => {
                        if values.len() != order {
                            return Err(CliError::config(format!(
                                "observer.xi0 has {} entries, expected {order}",
                                values.len()
                            )));
                        }
                        DVector::from_vec(values.clone())
                    }
                    None => DVector::zeros(order),
                };
                LinearFunctionalObserver::new(
                    n,
                    to_matrix("observer.J", &m.j)?,
                    to_matrix("observer.P_xi", &m.p_xi)?,
                    to_matrix("observer.T", &m.t)?,
                    xi0,
                )
                .map_err(|e| CliError::config(format!("observer: {e}")))
            }
            (None, Some(mode)) => {
                let design = match mode.as_str() {
                    "riccati" => ObserverDesign::Riccati {
                        qn: DMatrix::identity(sys.n_x(), sys.n_x()),
                        rn: DMatrix::identity(sys.n_y(), sys.n_y()),
                    },
                    "deadbeat" => ObserverDesign::Deadbeat,
                    other => {
                        return Err(CliError::config(format!(
                            "observer.design: unknown mode '{other}' \
                             (expected \"riccati\" or \"deadbeat\")"
                        )))
                    }
                };
                design_full_order_observer(sys, design)
                    .map_err(|e| CliError::runtime(format!("observer design failed: {e}")))
            }
            (Some(_), Some(_)) => Err(CliError::config(
                "observer: specify either matrices or design, not both".to_string(),
            )),
            (None, None) => Err(CliError::config(
                "observer: one of matrices or design is required".to_string(),
            )),
        }
    }
}
