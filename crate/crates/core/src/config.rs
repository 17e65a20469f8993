//! Experiment configuration: JSON schema, defaults and physics-range checks.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bounds::SplitScaling;
use crate::eigensolve::SolverOptions;
use crate::model::{Coupling, Dispersion, ModelSpec, PotentialKind, PotentialSpec, TrialFunctionSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{key}: {message} (line {line}, column {column})")]
    Parse { key: String, message: String, line: usize, column: usize },
    #[error("{key}: {message}")]
    Range { key: String, message: String },
}

fn range(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Range { key: key.into(), message: message.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DispersionConfig {
    Constant { omega0: f64 },
    /// `[|k|, omega]` pairs.
    Tabulated { samples: Vec<(f64, f64)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingConfig {
    Zero,
    Constant { g: f64 },
    PowerLaw { g: f64, s: f64 },
    Froehlich { alpha: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dk: f64,
    pub uv_cutoff: f64,
    pub ir_cutoff: f64,
}

fn default_fock_capacity() -> usize {
    5_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dimension: usize,
    pub dispersion: DispersionConfig,
    pub coupling: CouplingConfig,
    pub grid: GridConfig,
    pub n_max: usize,
    #[serde(default = "default_fock_capacity")]
    pub fock_capacity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    PoschlTeller { depth: f64 },
    GaussianWell { depth: f64, width: f64 },
    SoftStep { depth: f64, width: f64, half_width: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrialConfig {
    FourierBump { radius: f64 },
    TruncatedGaussian { sigma: f64, radius: f64 },
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig::FourierBump { radius: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "SolverConfig::default_tol")]
    pub tol: f64,
    #[serde(default = "SolverConfig::default_max_iter")]
    pub max_iter: usize,
    pub seed: u64,
    #[serde(default = "SolverConfig::default_basis_size")]
    pub basis_size: usize,
}

impl SolverConfig {
    fn default_tol() -> f64 {
        1e-10
    }
    fn default_max_iter() -> usize {
        5000
    }
    fn default_basis_size() -> usize {
        40
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectronGridConfig {
    pub spacing: f64,
    pub q_max: f64,
}

impl Default for ElectronGridConfig {
    fn default() -> Self {
        ElectronGridConfig { spacing: 0.5, q_max: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// `epsilon = c_eps * lambda`; derived from the potential and mass when absent.
    pub c_eps: Option<f64>,
    /// `beta = c_beta * sqrt(lambda)`.
    pub c_beta: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitScaling::default();
        SplitConfig { c_eps: s.c_eps, c_beta: s.c_beta }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Slack in `L2 <= L1 <= e <= U*`.
    pub ordering: f64,
    /// Allowed `|M_dyn - M_stat| / M_dyn`.
    pub mass_rel: f64,
    /// Slack on the one-phonon and parabolic ceilings.
    pub ceiling: f64,
    /// Slack on the re-swept quasi-parabolic inequality.
    pub certificate: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { ordering: 1e-8, mass_rel: 0.02, ceiling: 1e-9, certificate: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Random instances for the dense-vs-Lanczos suite.
    pub instances: usize,
    /// Largest dimension used in the frame-equivalence suite.
    pub max_dim: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { instances: 50, max_dim: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub p_max: f64,
    pub dp: f64,
    /// Spectral gap below which a fiber counts as degenerate.
    pub gap_threshold: f64,
    /// Mass-fit window; derived from the curve when absent.
    pub p_fit: Option<f64>,
    pub lambda_seq: Vec<f64>,
    pub electron_grid: ElectronGridConfig,
    /// Upper end of the mass bracket used to invert the particle energy.
    pub mass_bracket_hi: f64,
    /// Largest RMS residual accepted for the `lambda -> 0` fit.
    pub extrapolation_max_rms: f64,
    pub split: SplitConfig,
    pub tolerances: Tolerances,
    pub oracle: OracleConfig,
    pub threads: Option<usize>,
    pub output_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            p_max: 1.0,
            dp: 0.05,
            gap_threshold: 1e-3,
            p_fit: None,
            lambda_seq: vec![0.4, 0.28, 0.2, 0.14, 0.1],
            electron_grid: ElectronGridConfig::default(),
            mass_bracket_hi: 10.0,
            extrapolation_max_rms: 1e-4,
            split: SplitConfig::default(),
            tolerances: Tolerances::default(),
            oracle: OracleConfig::default(),
            threads: None,
            output_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub potential: PotentialConfig,
    #[serde(default)]
    pub trial: TrialConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub run: RunConfig,
}

/// Dotted key of an unknown field, e.g. `model.couplng`.
fn error_key(path: &str, message: &str) -> String {
    let unknown = message
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next());
    match unknown {
        Some(field) if path == "." || path.is_empty() => field.to_string(),
        Some(field) => {
            // the path already ends at the offending key for map errors
            if path.ends_with(field) {
                path.to_string()
            } else {
                format!("{path}.{field}")
            }
        }
        None => path.to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.to_string();
            // serde_json appends its own position; keep only the message
            let message = match message.rfind(" at line ") {
                Some(i) => message[..i].to_string(),
                None => message,
            };
            ConfigError::Parse { key: error_key(&path, &message), message, line: inner.line(), column: inner.column() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    /// Canonical JSON (defaults filled in), used for the echo and the hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn model_spec(&self) -> ModelSpec {
        let m = &self.model;
        ModelSpec {
            dimension: m.dimension,
            dispersion: match &m.dispersion {
                DispersionConfig::Constant { omega0 } => Dispersion::Constant { omega0: *omega0 },
                DispersionConfig::Tabulated { samples } => Dispersion::Tabulated { samples: samples.clone() },
            },
            coupling: match m.coupling {
                CouplingConfig::Zero => Coupling::Zero,
                CouplingConfig::Constant { g } => Coupling::Constant { g },
                CouplingConfig::PowerLaw { g, s } => Coupling::PowerLaw { g, s },
                CouplingConfig::Froehlich { alpha } => Coupling::Froehlich { alpha },
            },
            mode_spacing: m.grid.dk,
            uv_cutoff: m.grid.uv_cutoff,
            ir_cutoff: m.grid.ir_cutoff,
            n_max: m.n_max,
        }
    }

    pub fn potential_spec(&self) -> PotentialSpec {
        let kind = match self.potential {
            PotentialConfig::PoschlTeller { depth } => PotentialKind::PoschlTeller { depth },
            PotentialConfig::GaussianWell { depth, width } => PotentialKind::GaussianWell { depth, width },
            PotentialConfig::SoftStep { depth, width, half_width } => PotentialKind::SoftStep { depth, width, half_width },
        };
        PotentialSpec { kind, dimension: self.model.dimension, scale: 1.0 }
    }

    pub fn trial_spec(&self) -> TrialFunctionSpec {
        match self.trial {
            TrialConfig::FourierBump { radius } => TrialFunctionSpec::FourierBump { radius },
            TrialConfig::TruncatedGaussian { sigma, radius } => TrialFunctionSpec::TruncatedGaussian { sigma, radius },
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.solver;
        SolverOptions { tol: s.tol, max_iter: s.max_iter, seed: s.seed, basis_size: s.basis_size }
    }

    pub fn split_scaling(&self) -> SplitScaling {
        SplitScaling { c_eps: self.run.split.c_eps, c_beta: self.run.split.c_beta }
    }

    /// Schema-independent range checks. Model-level errors are reported under
    /// the `model` key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_spec().validate().map_err(|e| range("model", e.to_string()))?;
        if self.model.n_max == 0 {
            return Err(range("model.n_max", "must be at least 1"));
        }
        if self.model.fock_capacity == 0 {
            return Err(range("model.fock_capacity", "must be positive"));
        }
        self.potential_spec().validate().map_err(|e| range("potential", e.to_string()))?;
        self.trial_spec().validate().map_err(|e| range("trial", e.to_string()))?;
        let s = &self.solver;
        if !(s.tol > 0.0 && s.tol < 1e-3) {
            return Err(range("solver.tol", format!("must lie in (0, 1e-3) (got {})", s.tol)));
        }
        if s.max_iter < 10 {
            return Err(range("solver.max_iter", "must be at least 10"));
        }
        if s.basis_size < 4 {
            return Err(range("solver.basis_size", "must be at least 4"));
        }
        let r = &self.run;
        if !(r.p_max > 0.0) || !(r.dp > 0.0) || r.dp > r.p_max {
            return Err(range("run.dp", format!("need 0 < dp <= p_max (got dp {}, p_max {})", r.dp, r.p_max)));
        }
        if !(r.gap_threshold > 0.0) {
            return Err(range("run.gap_threshold", "must be positive"));
        }
        if let Some(p) = r.p_fit {
            if !(p > 0.0 && p <= r.p_max) {
                return Err(range("run.p_fit", format!("must lie in (0, p_max] (got {p})")));
            }
        }
        if r.lambda_seq.len() < 4 {
            return Err(range("run.lambda_seq", format!("needs at least 4 values (got {})", r.lambda_seq.len())));
        }
        if r.lambda_seq.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
            return Err(range("run.lambda_seq", "every value must lie in (0, 1]"));
        }
        if r.lambda_seq.windows(2).any(|w| w[1] >= w[0]) {
            return Err(range("run.lambda_seq", "must be strictly decreasing"));
        }
        if !(r.electron_grid.spacing > 0.0) || !(r.electron_grid.q_max >= r.electron_grid.spacing) {
            return Err(range("run.electron_grid", "need spacing > 0 and q_max >= spacing"));
        }
        if !(r.mass_bracket_hi > 0.5) {
            return Err(range("run.mass_bracket_hi", "must exceed the bare mass 0.5"));
        }
        if !(r.extrapolation_max_rms > 0.0) {
            return Err(range("run.extrapolation_max_rms", "must be positive"));
        }
        if r.split.c_eps.is_some_and(|c| !(c > 0.0)) {
            return Err(range("run.split.c_eps", "must be positive"));
        }
        if !(r.split.c_beta > 0.0) {
            return Err(range("run.split.c_beta", "must be positive"));
        }
        let t = &r.tolerances;
        for (key, v) in [
            ("run.tolerances.ordering", t.ordering),
            ("run.tolerances.mass_rel", t.mass_rel),
            ("run.tolerances.ceiling", t.ceiling),
            ("run.tolerances.certificate", t.certificate),
        ] {
            if !(v >= 0.0) {
                return Err(range(key, "must be non-negative"));
            }
        }
        if r.threads == Some(0) {
            return Err(range("run.threads", "must be at least 1"));
        }
        if r.oracle.max_dim < 2 {
            return Err(range("run.oracle.max_dim", "must be at least 2"));
        }
        Ok(())
    }
}

/// Warnings for `lambda * q_max >= p_c`: the trial support is then capped
/// at `p_c / lambda`.
pub fn support_warnings(lambda_seq: &[f64], q_max: f64, p_c: f64) -> Vec<String> {
    lambda_seq
        .iter()
        .filter(|&&l| l * q_max >= p_c)
        .map(|&l| {
            format!(
                "lambda {l}: lambda * q_max = {:.6} >= estimated P_c = {p_c:.6}; trial support capped at radius {:.6}",
                l * q_max,
                p_c / l
            )
        })
        .collect()
}
