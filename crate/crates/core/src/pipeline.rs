//! Experiment stages driven by an [`ExperimentConfig`]. Nothing here writes
//! files; see [`crate::report`].

use std::collections::BTreeMap;
use std::time::Instant;

use thiserror::Error;

use crate::bounds::{
    check_ordering, momentum_lower_bound, potential_operator_norm, split_lower_bound, split_sweep, OrderingVerdict,
    SandwichRow, SplitBound, SplitParams,
};
use crate::config::{support_warnings, ConfigError, ExperimentConfig};
use crate::dispersion::{
    certify_quasi_parabolic, check_ceilings, default_fit_window, estimate_pc, fiber_energies, fit_dynamic_mass,
    momentum_list, perturbative_mass, scan_dispersion, CeilingReport, DispersionCurve, MassFit,
    QuasiParabolicCertificate,
};
use crate::eigensolve::SolverOptions;
use crate::fock::FockBasis;
use crate::model::{build_mode_grid, effective_couplings, ModeGrid, ModelSpec, Momentum, PotentialSpec};
use crate::operators::{ElectronGrid, FiberFamily, Kinetic};
use crate::oracle::{run_oracles, OracleStage};
use crate::staticmass::{coupled_ground, extrapolate, static_mass, CoupledGround, Extrapolation, SchrodingerGrid, StaticMassResult};
use crate::trialstate::{minimize_upper_bound, optimal_upper_bound, radius_range, GroundStateFamily, MinimizedBound, OptimalBound};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage}: {message}")]
    Solver { stage: &'static str, message: String },
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

impl PipelineError {
    /// Process exit status: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn solver(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError::Solver { stage, message: e.to_string() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Dispersion,
    StaticMass,
    Sandwich,
    OracleCheck,
    Converge,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Dispersion => "dispersion",
            Subcommand::StaticMass => "staticmass",
            Subcommand::Sandwich => "sandwich",
            Subcommand::OracleCheck => "oracle-check",
            Subcommand::Converge => "converge",
        }
    }
}

/// Model, operators and grids shared by every stage.
pub struct Setup {
    pub config: ExperimentConfig,
    pub spec: ModelSpec,
    pub modes: ModeGrid,
    pub couplings: Vec<f64>,
    pub omega: Vec<f64>,
    pub family: FiberFamily,
    pub opts: SolverOptions,
    pub egrid: ElectronGrid,
    pub potential: PotentialSpec,
    pub particle: SchrodingerGrid,
}

impl Setup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.model_spec();
        let cfg_err = |key: &str, e: &dyn std::fmt::Display| ConfigError::Range { key: key.into(), message: e.to_string() };
        let modes = build_mode_grid(&spec).map_err(|e| cfg_err("model", &e))?;
        let couplings: Vec<f64> = effective_couplings(&spec, &modes)
            .map_err(|e| cfg_err("model.coupling", &e))?
            .iter()
            .map(|c| c.re)
            .collect();
        let omega: Vec<f64> = modes.modes.iter().map(|m| spec.omega(m.k)).collect();
        let basis = FockBasis::enumerate_with_limit(modes.len(), spec.n_max, config.model.fock_capacity)
            .map_err(|e| cfg_err("model.fock_capacity", &e))?;
        let family = FiberFamily::from_parts(&modes, &couplings, &omega, basis, Kinetic::Quadratic)
            .map_err(|e| cfg_err("model", &e))?;
        let eg = &config.run.electron_grid;
        let egrid = ElectronGrid::new(spec.dimension, eg.spacing, eg.q_max).map_err(|e| cfg_err("run.electron_grid", &e))?;
        let potential = config.potential_spec();
        let particle = SchrodingerGrid::new(&potential, &egrid);
        Ok(Setup {
            config: config.clone(),
            spec,
            modes,
            couplings,
            omega,
            family,
            opts: config.solver_options(),
            egrid,
            potential,
            particle,
        })
    }

    pub fn mode_momenta(&self) -> Vec<Momentum> {
        self.modes.modes.iter().map(|m| m.k).collect()
    }
}

pub struct DispersionStage {
    pub curve: DispersionCurve,
    pub p_c: f64,
    pub fit: MassFit,
    pub certificate: QuasiParabolicCertificate,
    pub ceilings: CeilingReport,
    /// Second-order mass on the same window, or why it is unavailable.
    pub perturbative: std::result::Result<MassFit, String>,
}

impl DispersionStage {
    pub fn ceilings_pass(&self) -> bool {
        self.ceilings.holds()
    }

    pub fn certificate_pass(&self, tol: f64) -> bool {
        self.certificate.c_min.is_finite() && self.certificate.margin >= -tol
    }
}

pub fn run_dispersion(setup: &Setup) -> Result<DispersionStage> {
    let run = &setup.config.run;
    let axis = Momentum::along_x(1.0);
    let ps = momentum_list(run.p_max, run.dp, true);
    let curve = scan_dispersion(&setup.family, &ps, axis, &setup.opts).map_err(|e| solver("dispersion")(&e))?;
    let p_c = estimate_pc(&curve.samples, run.gap_threshold).map_err(|e| solver("dispersion")(&e))?;
    let points = curve.points();
    let p_fit = run.p_fit.unwrap_or_else(|| default_fit_window(&points, curve.e0, p_c));
    let fit = fit_dynamic_mass(&points, curve.e0, p_fit).map_err(|e| solver("mass fit")(&e))?;
    let certificate = certify_quasi_parabolic(&points, curve.e0, fit.mass).map_err(|e| solver("certificate")(&e))?;
    let ceilings = check_ceilings(&points, curve.e0, axis, &setup.mode_momenta(), &setup.omega, run.tolerances.ceiling);
    let perturbative = perturbative_mass(&setup.mode_momenta(), &setup.couplings, &setup.omega, axis, &ps, p_fit)
        .map_err(|e| e.to_string());
    Ok(DispersionStage { curve, p_c, fit, certificate, ceilings, perturbative })
}

pub struct StaticStage {
    pub grounds: Vec<CoupledGround>,
    pub result: StaticMassResult,
    pub tail_mass: f64,
}

impl StaticStage {
    pub fn pass(&self) -> bool {
        self.result.extrapolation.accepted && self.result.mass.is_some()
    }
}

pub fn run_static(setup: &Setup, disp: &DispersionStage) -> Result<StaticStage> {
    let run = &setup.config.run;
    let mut grounds = Vec::with_capacity(run.lambda_seq.len());
    for &lambda in &run.lambda_seq {
        let g = coupled_ground(lambda, &setup.family, disp.curve.e0, &setup.egrid.momenta, &setup.particle.w, &setup.opts)
            .map_err(|e| solver("coupled ground")(&e))?;
        grounds.push(g);
    }
    let e_vals: Vec<f64> = grounds.iter().map(|g| g.energy).collect();
    let result = static_mass(
        &run.lambda_seq,
        &e_vals,
        &setup.particle,
        &setup.opts,
        run.extrapolation_max_rms,
        run.mass_bracket_hi,
    )
    .map_err(|e| solver("static mass")(&e))?;
    Ok(StaticStage { grounds, result, tail_mass: setup.particle.tail_mass })
}

pub struct LambdaBounds {
    pub lambda: f64,
    pub e: f64,
    pub l1: f64,
    pub split: SplitBound,
    pub params: SplitParams,
    /// Smallest slack of the kinetic minorant at the nodes of this lambda.
    pub split_margin: f64,
    pub optimal: OptimalBound,
    pub parametric: std::result::Result<MinimizedBound, String>,
}

pub struct SandwichStage {
    pub rows: Vec<SandwichRow>,
    pub per_lambda: Vec<LambdaBounds>,
    /// Quasi-parabolic constant over the scan and every node momentum.
    pub node_certificate: QuasiParabolicCertificate,
    pub v_sup: f64,
    pub family_size: usize,
    pub family_continuity: f64,
    pub upper_extrapolation: Extrapolation,
    pub ordering: OrderingVerdict,
    pub m_dyn: f64,
    pub m_stat: Option<f64>,
    pub mass_rel_diff: Option<f64>,
    pub mass_pass: bool,
}

fn key(p: Momentum) -> [u64; 3] {
    (p + Momentum::ZERO).0.map(f64::to_bits)
}

pub fn run_sandwich(setup: &Setup, disp: &DispersionStage, stat: &StaticStage) -> Result<SandwichStage> {
    let run = &setup.config.run;
    let q = &setup.egrid.momenta;
    let spacing = setup.egrid.spacing;
    let e0 = disp.curve.e0;

    // every node momentum lambda q_j, and the subset the trial family needs
    let mut all: BTreeMap<[u64; 3], Momentum> = BTreeMap::new();
    let mut inner: BTreeMap<[u64; 3], Momentum> = BTreeMap::new();
    let mut radii = Vec::new();
    for &lambda in &run.lambda_seq {
        let (_, r_max) = radius_range(lambda, disp.p_c, q, spacing);
        radii.push(r_max);
        for &qj in q {
            let p = qj * lambda + Momentum::ZERO;
            all.insert(key(p), p);
            if qj.norm() < r_max {
                inner.insert(key(p), p);
            }
        }
    }
    let inner: Vec<Momentum> = inner.into_values().collect();
    let family = GroundStateFamily::build(&setup.family, &inner, disp.p_c, run.gap_threshold, &setup.opts)
        .map_err(|e| solver("trial family")(&e))?;
    let outer: Vec<Momentum> = all.values().copied().filter(|p| family.get(*p).is_none()).collect();
    let outer_e = fiber_energies(&setup.family, &outer, &setup.opts).map_err(|e| solver("node energies")(&e))?;
    let mut energy: BTreeMap<[u64; 3], f64> = outer.iter().map(|&p| key(p)).zip(outer_e).collect();
    for s in &family.samples {
        energy.insert(key(s.p), s.energy);
    }

    let mut cert_points = disp.curve.points();
    cert_points.extend(all.values().filter(|p| p.norm() > 0.0).map(|p| (p.norm(), energy[&key(*p)])));
    let node_certificate =
        certify_quasi_parabolic(&cert_points, e0, disp.fit.mass).map_err(|e| solver("node certificate")(&e))?;
    let v_sup = setup
        .potential
        .sup_norm()
        .max(potential_operator_norm(&setup.particle.w).map_err(|e| solver("potential norm")(&e))?);
    let scaling = setup.config.split_scaling();
    let template = setup.config.trial_spec();

    let mut per_lambda = Vec::new();
    let mut rows = Vec::new();
    for ((&lambda, ground), &r_max) in run.lambda_seq.iter().zip(&stat.grounds).zip(&radii) {
        let nodes: Vec<f64> = q.iter().map(|&qj| energy[&key(qj * lambda)]).collect();
        let l1 = momentum_lower_bound(lambda, e0, &nodes, &setup.particle.w).map_err(|e| solver("momentum bound")(&e))?;
        let params = SplitParams::from_scaling(lambda, &scaling, disp.fit.mass, node_certificate.c_min, v_sup);
        let split = split_lower_bound(lambda, &params, &setup.potential, q, &setup.particle.w)
            .map_err(|e| solver("split bound")(&e))?;
        let node_points: Vec<(f64, f64)> = q.iter().zip(&nodes).map(|(qj, &e)| (qj.norm() * lambda, e)).collect();
        let split_margin = split_sweep(&node_points, e0, &params);
        let optimal = optimal_upper_bound(lambda, &family, r_max, q, &setup.particle.w)
            .map_err(|e| solver("upper bound")(&e))?;
        let parametric = minimize_upper_bound(lambda, &family, &template, q, spacing, setup.egrid.cell_volume(), &setup.particle.w)
            .map_err(|e| e.to_string());
        rows.push(SandwichRow { lambda, l2: split.value, l1, e: ground.energy, u_star: optimal.energy });
        per_lambda.push(LambdaBounds { lambda, e: ground.energy, l1, split, params, split_margin, optimal, parametric });
    }

    let up: Vec<(f64, f64)> = rows.iter().map(|r| (r.lambda, r.u_star)).collect();
    let upper_extrapolation = extrapolate(&up, f64::INFINITY).map_err(|e| solver("upper extrapolation")(&e))?;
    let ordering = check_ordering(&rows, run.tolerances.ordering);
    let m_dyn = disp.fit.mass;
    let m_stat = stat.result.mass;
    let mass_rel_diff = m_stat.map(|m| (m_dyn - m).abs() / m_dyn);
    let mass_pass = mass_rel_diff.is_some_and(|r| r <= run.tolerances.mass_rel);
    Ok(SandwichStage {
        rows,
        per_lambda,
        node_certificate,
        v_sup,
        family_size: family.samples.len(),
        family_continuity: family.max_adjacent_distance(),
        upper_extrapolation,
        ordering,
        m_dyn,
        m_stat,
        mass_rel_diff,
        mass_pass,
    })
}

/// One line of the truncation-convergence table.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergeRow {
    pub variant: String,
    pub n_max: usize,
    pub dk: f64,
    pub fock_dim: usize,
    pub m_dyn: f64,
    pub m_stat: Option<f64>,
    pub rel_diff: Option<f64>,
    pub ordering_pass: bool,
    pub worst_margin: f64,
    pub mass_pass: bool,
    pub certificate_pass: bool,
    pub ceilings_pass: bool,
}

impl ConvergeRow {
    pub fn pass(&self) -> bool {
        self.ordering_pass && self.mass_pass && self.certificate_pass && self.ceilings_pass
    }
}

/// Truncation variants around the configured model: `n_max - 1`, `n_max + 1`
/// and the mode spacing halved.
pub fn converge_variants(config: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let mut out = vec![("base".to_string(), config.clone())];
    let n = config.model.n_max;
    if n > 1 {
        let mut c = config.clone();
        c.model.n_max = n - 1;
        out.push(("n_max-1".into(), c));
    }
    let mut c = config.clone();
    c.model.n_max = n + 1;
    out.push(("n_max+1".into(), c));
    let mut c = config.clone();
    c.model.grid.dk *= 0.5;
    out.push(("dk/2".into(), c));
    out
}

/// Everything computed by one invocation.
pub struct Run {
    pub subcommand: Subcommand,
    pub config: ExperimentConfig,
    pub fock_dim: usize,
    pub mode_count: usize,
    pub dispersion: Option<DispersionStage>,
    pub static_stage: Option<StaticStage>,
    pub sandwich: Option<SandwichStage>,
    pub oracle: Option<OracleStage>,
    pub converge: Option<Vec<ConvergeRow>>,
    pub warnings: Vec<String>,
    /// `(stage, seconds)` in execution order.
    pub timings: Vec<(String, f64)>,
}

impl Run {
    /// Named verdicts of every stage that ran.
    pub fn verdicts(&self) -> Vec<(&'static str, bool)> {
        let tol = &self.config.run.tolerances;
        let mut v = Vec::new();
        if let Some(d) = &self.dispersion {
            v.push(("ceilings", d.ceilings_pass()));
            v.push(("certificate", d.certificate_pass(tol.certificate)));
        }
        if let Some(s) = &self.static_stage {
            v.push(("static_mass", s.pass()));
        }
        if let Some(s) = &self.sandwich {
            v.push(("ordering", s.ordering.pass));
            v.push(("mass_agreement", s.mass_pass));
        }
        if let Some(o) = &self.oracle {
            v.push(("oracle", o.pass()));
        }
        if let Some(rows) = &self.converge {
            v.push(("truncation", rows.iter().all(ConvergeRow::pass)));
        }
        v
    }

    pub fn pass(&self) -> bool {
        self.verdicts().iter().all(|(_, p)| *p)
    }
}

fn timed<T>(timings: &mut Vec<(String, f64)>, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f()?;
    timings.push((name.to_string(), t.elapsed().as_secs_f64()));
    Ok(out)
}

struct Headline {
    dispersion: DispersionStage,
    static_stage: StaticStage,
    sandwich: SandwichStage,
}

fn headline(setup: &Setup, timings: &mut Vec<(String, f64)>, prefix: &str) -> Result<Headline> {
    let dispersion = timed(timings, &format!("{prefix}dispersion"), || run_dispersion(setup))?;
    let static_stage = timed(timings, &format!("{prefix}staticmass"), || run_static(setup, &dispersion))?;
    let sandwich = timed(timings, &format!("{prefix}sandwich"), || run_sandwich(setup, &dispersion, &static_stage))?;
    Ok(Headline { dispersion, static_stage, sandwich })
}

fn converge_row(variant: &str, setup: &Setup, h: &Headline) -> ConvergeRow {
    let tol = &setup.config.run.tolerances;
    ConvergeRow {
        variant: variant.to_string(),
        n_max: setup.spec.n_max,
        dk: setup.spec.mode_spacing,
        fock_dim: setup.family.dim(),
        m_dyn: h.sandwich.m_dyn,
        m_stat: h.sandwich.m_stat,
        rel_diff: h.sandwich.mass_rel_diff,
        ordering_pass: h.sandwich.ordering.pass,
        worst_margin: h.sandwich.ordering.worst_margin,
        mass_pass: h.sandwich.mass_pass,
        certificate_pass: h.dispersion.certificate_pass(tol.certificate),
        ceilings_pass: h.dispersion.ceilings_pass(),
    }
}

pub fn run(subcommand: Subcommand, config: &ExperimentConfig) -> Result<Run> {
    let mut timings = Vec::new();
    let setup = timed(&mut timings, "setup", || Setup::new(config))?;
    let mut out = Run {
        subcommand,
        config: config.clone(),
        fock_dim: setup.family.dim(),
        mode_count: setup.modes.len(),
        dispersion: None,
        static_stage: None,
        sandwich: None,
        oracle: None,
        converge: None,
        warnings: Vec::new(),
        timings: Vec::new(),
    };
    if setup.particle.tail_mass > 1e-6 {
        out.warnings.push(format!(
            "potential transform mass beyond q_max is {:.3e}; enlarge run.electron_grid.q_max",
            setup.particle.tail_mass
        ));
    }
    match subcommand {
        Subcommand::Dispersion => {
            out.dispersion = Some(timed(&mut timings, "dispersion", || run_dispersion(&setup))?);
        }
        Subcommand::StaticMass => {
            let d = timed(&mut timings, "dispersion", || run_dispersion(&setup))?;
            out.static_stage = Some(timed(&mut timings, "staticmass", || run_static(&setup, &d))?);
            out.dispersion = Some(d);
        }
        Subcommand::Sandwich => {
            let h = headline(&setup, &mut timings, "")?;
            out.dispersion = Some(h.dispersion);
            out.static_stage = Some(h.static_stage);
            out.sandwich = Some(h.sandwich);
        }
        Subcommand::OracleCheck => {
            out.oracle = Some(timed(&mut timings, "oracle", || run_oracles(&setup))?);
        }
        Subcommand::Converge => {
            let mut rows = Vec::new();
            let mut base = None;
            for (name, cfg) in converge_variants(config) {
                let s = if name == "base" { None } else { Some(Setup::new(&cfg)?) };
                let s = s.as_ref().unwrap_or(&setup);
                let h = headline(s, &mut timings, &format!("{name}:"))?;
                rows.push(converge_row(&name, s, &h));
                if name == "base" {
                    base = Some(h);
                }
            }
            let h = base.expect("base variant runs first");
            out.dispersion = Some(h.dispersion);
            out.static_stage = Some(h.static_stage);
            out.sandwich = Some(h.sandwich);
            out.converge = Some(rows);
        }
    }
    if let Some(d) = &out.dispersion {
        if out.static_stage.is_some() {
            out.warnings.extend(support_warnings(&config.run.lambda_seq, setup.egrid.q_max(), d.p_c));
        }
    }
    out.timings = timings;
    Ok(out)
}

/// Diagnostics for `validate`: schema and ranges are checked on load; this
/// adds the dispersion-dependent warnings.
pub struct Validation {
    pub fock_dim: usize,
    pub mode_count: usize,
    pub p_c: f64,
    pub warnings: Vec<String>,
}

pub fn validate(config: &ExperimentConfig) -> Result<Validation> {
    let setup = Setup::new(config)?;
    let d = run_dispersion(&setup)?;
    let mut warnings = support_warnings(&config.run.lambda_seq, setup.egrid.q_max(), d.p_c);
    if setup.particle.tail_mass > 1e-6 {
        warnings.push(format!("potential transform mass beyond q_max is {:.3e}", setup.particle.tail_mass));
    }
    Ok(Validation { fock_dim: setup.family.dim(), mode_count: setup.modes.len(), p_c: d.p_c, warnings })
}
