//! Particle-only ground energy `E(m) = infspec(p^2/2m + V)`, its inverse, the
//! coupled energies `e(lambda) = infspec A(lambda)` and their extrapolation to
//! `lambda -> 0`, which defines the static mass through `E(M_stat) = e(0+)`.

use thiserror::Error;

use crate::eigensolve::{dense_ground, ground_state, EigenError, SolverOptions};
use crate::model::{Momentum, PotentialSpec};
use crate::operators::{grid_potential_matrix, schrodinger_from_matrix, CoupledLlpOperator, ElectronGrid, FiberFamily, OperatorError};
use crate::sparse::LinearOperator;

/// Operators up to this dimension are diagonalized densely.
pub const DENSE_STATIC_LIMIT: usize = 400;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StaticError {
    #[error("no bound state at mass {mass}: ground energy {energy:.6e} >= 0")]
    NoBoundState { mass: f64, energy: f64 },
    #[error("mass must be at least 1/2 (got {0})")]
    MassDomain(f64),
    #[error("target energy {target:.9e} outside [{low:.9e}, {high:.9e}] on the mass bracket{}", if *near_threshold { " (near the binding threshold)" } else { "" })]
    Bracket { target: f64, low: f64, high: f64, near_threshold: bool },
    #[error("E(m) is not decreasing: E({m1}) = {e1:.9e}, E({m2}) = {e2:.9e}")]
    NonMonotone { m1: f64, e1: f64, m2: f64, e2: f64 },
    #[error("extrapolation needs at least 4 lambda values, got {0}")]
    TooFewLambdas(usize),
    #[error("lambda must lie in (0, 1], got {0}")]
    LambdaDomain(f64),
    #[error("eigensolver failed: {0}")]
    Solver(#[from] EigenError),
    #[error("operator assembly failed: {0}")]
    Operator(String),
}

impl From<OperatorError> for StaticError {
    fn from(e: OperatorError) -> Self {
        StaticError::Operator(e.to_string())
    }
}

type Result<T> = std::result::Result<T, StaticError>;

fn lowest<A: LinearOperator + ?Sized>(op: &A, opts: &SolverOptions) -> Result<(f64, f64, usize)> {
    let r = if op.dim() <= DENSE_STATIC_LIMIT { dense_ground(op)? } else { ground_state(op, opts)? };
    Ok((r.ground(), r.residuals[0], r.iterations))
}

/// Particle-only operator on one electron grid, with its potential matrix
/// cached.
#[derive(Clone, Debug)]
pub struct SchrodingerGrid {
    pub momenta: Vec<Momentum>,
    pub w: Vec<Vec<f64>>,
    pub tail_mass: f64,
}

impl SchrodingerGrid {
    pub fn new(v: &PotentialSpec, egrid: &ElectronGrid) -> Self {
        let pm = grid_potential_matrix(v, egrid);
        SchrodingerGrid { momenta: egrid.momenta.clone(), w: pm.w, tail_mass: pm.tail_mass }
    }

    /// Ground energy (negative or not) at mass `m`.
    pub fn ground(&self, mass: f64, opts: &SolverOptions) -> Result<f64> {
        if !(mass >= 0.5) {
            return Err(StaticError::MassDomain(mass));
        }
        Ok(lowest(&schrodinger_from_matrix(mass, &self.momenta, &self.w), opts)?.0)
    }

    /// Ground energy, required to be a bound state.
    pub fn bound_energy(&self, mass: f64, opts: &SolverOptions) -> Result<f64> {
        let e = self.ground(mass, opts)?;
        if e >= 0.0 {
            return Err(StaticError::NoBoundState { mass, energy: e });
        }
        Ok(e)
    }
}

/// `E(m)` on a grid and on its refinement with a Richardson combination.
#[derive(Clone, Debug, PartialEq)]
pub struct SchrodingerEnergy {
    pub mass: f64,
    pub coarse: f64,
    pub fine: f64,
    pub richardson: f64,
    pub error_estimate: f64,
}

pub fn schrodinger_energy(mass: f64, v: &PotentialSpec, egrid: &ElectronGrid, opts: &SolverOptions) -> Result<SchrodingerEnergy> {
    let coarse = SchrodingerGrid::new(v, egrid).bound_energy(mass, opts)?;
    let fine = SchrodingerGrid::new(v, &egrid.refined()).bound_energy(mass, opts)?;
    let diff = (fine - coarse) / 3.0;
    Ok(SchrodingerEnergy { mass, coarse, fine, richardson: fine + diff, error_estimate: diff.abs() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    pub mass: f64,
    /// Target sat within the slack above `E(lower)`, so the lower end of the
    /// bracket was returned.
    pub at_lower_edge: bool,
    pub evaluations: usize,
}

/// Solve `E(m) = target` by bisection on `[lo, hi]` to relative mass
/// tolerance `1e-6`. `E` must be decreasing; violations are hard errors.
/// Targets above `E(lo)` by at most `slack` are clamped to `lo`.
pub fn invert_e(
    target: f64,
    lo: f64,
    hi: f64,
    slack: f64,
    mut energy: impl FnMut(f64) -> Result<f64>,
) -> Result<Inversion> {
    if !(lo >= 0.5) {
        return Err(StaticError::MassDomain(lo));
    }
    let e_lo = energy(lo)?;
    let e_hi = energy(hi)?;
    if e_hi >= e_lo {
        return Err(StaticError::NonMonotone { m1: lo, e1: e_lo, m2: hi, e2: e_hi });
    }
    if target > e_lo {
        if target - e_lo <= slack {
            return Ok(Inversion { mass: lo, at_lower_edge: true, evaluations: 2 });
        }
        return Err(StaticError::Bracket { target, low: e_hi, high: e_lo, near_threshold: target.abs() < 1e-6 });
    }
    if target < e_hi {
        return Err(StaticError::Bracket { target, low: e_hi, high: e_lo, near_threshold: false });
    }
    let (mut a, mut ea, mut b, mut eb) = (lo, e_lo, hi, e_hi);
    let mut evaluations = 2;
    while (b - a) > 1e-6 * a {
        let mid = 0.5 * (a + b);
        let em = energy(mid)?;
        evaluations += 1;
        if !(em <= ea && em >= eb) {
            let (m2, e2) = if em > ea { (a, ea) } else { (b, eb) };
            return Err(StaticError::NonMonotone { m1: mid, e1: em, m2, e2 });
        }
        if em > target {
            a = mid;
            ea = em;
        } else {
            b = mid;
            eb = em;
        }
    }
    // linear interpolation inside the final bracket
    let mass = if ea != eb { a + (b - a) * (ea - target) / (ea - eb) } else { 0.5 * (a + b) };
    Ok(Inversion { mass, at_lower_edge: false, evaluations })
}

/// Ground energy of `A(lambda)` on one electron grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledGround {
    pub lambda: f64,
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
}

pub fn coupled_ground(
    lambda: f64,
    family: &FiberFamily,
    e0: f64,
    momenta: &[Momentum],
    w: &[Vec<f64>],
    opts: &SolverOptions,
) -> Result<CoupledGround> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(StaticError::LambdaDomain(lambda));
    }
    let a = CoupledLlpOperator::new(lambda, e0, family, momenta, w.to_vec())?;
    let (energy, residual, iterations) = lowest(&a, opts)?;
    Ok(CoupledGround { lambda, energy, residual, iterations })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extrapolation {
    pub e0: f64,
    pub e0_err: f64,
    pub c1: f64,
    pub c2: f64,
    pub rms: f64,
    /// `e0` refitted without the largest lambda.
    pub e0_drop_largest: f64,
    pub accepted: bool,
}

/// Least squares `e(lambda) = e0 + c1 lambda + c2 lambda^2`.
fn fit_quadratic(points: &[(f64, f64)]) -> ([f64; 3], [[f64; 3]; 3], f64) {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for &(l, e) in points {
        let row = [1.0, l, l * l];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * e;
        }
    }
    let inv = invert3(&ata);
    let mut c = [0.0; 3];
    for i in 0..3 {
        c[i] = (0..3).map(|j| inv[i][j] * atb[j]).sum();
    }
    let ssr: f64 = points.iter().map(|&(l, e)| (e - c[0] - c[1] * l - c[2] * l * l).powi(2)).sum();
    (c, inv, ssr)
}

fn invert3(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    // adjugate over determinant; cyclic indices give the signed cofactors
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r1, r2) = ((j + 1) % 3, (j + 2) % 3);
            let (c1, c2) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = a[r1][c1] * a[r2][c2] - a[r1][c2] * a[r2][c1];
        }
    }
    let det: f64 = (0..3).map(|k| a[0][k] * inv[k][0]).sum();
    for row in inv.iter_mut() {
        row.iter_mut().for_each(|x| *x /= det);
    }
    inv
}

/// Extrapolate `e(lambda)` to `lambda = 0`. The uncertainty is the larger of
/// the covariance error and the shift when the largest lambda is dropped.
pub fn extrapolate(points: &[(f64, f64)], max_rms: f64) -> Result<Extrapolation> {
    if points.len() < 4 {
        return Err(StaticError::TooFewLambdas(points.len()));
    }
    let n = points.len();
    let (c, inv, ssr) = fit_quadratic(points);
    let rms = (ssr / n as f64).sqrt();
    let sigma2 = ssr / (n - 3) as f64;
    let cov_err = (sigma2 * inv[0][0]).max(0.0).sqrt();
    let mut rest = points.to_vec();
    rest.sort_by(|a, b| a.0.total_cmp(&b.0));
    rest.pop();
    let (cd, _, _) = fit_quadratic(&rest);
    let e0_err = cov_err.max((c[0] - cd[0]).abs());
    Ok(Extrapolation { e0: c[0], e0_err, c1: c[1], c2: c[2], rms, e0_drop_largest: cd[0], accepted: rms <= max_rms })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaticMassResult {
    pub lambda_seq: Vec<f64>,
    pub e_vals: Vec<f64>,
    pub extrapolation: Extrapolation,
    pub mass: Option<f64>,
    pub mass_err: Option<f64>,
    pub at_lower_edge: bool,
}

/// Static mass `E^{-1}(e0)` on the given particle-only grid, with the error
/// propagated through the local slope of `E`.
pub fn static_mass(
    lambda_seq: &[f64],
    e_vals: &[f64],
    grid: &SchrodingerGrid,
    opts: &SolverOptions,
    max_rms: f64,
    mass_hi: f64,
) -> Result<StaticMassResult> {
    let pts: Vec<(f64, f64)> = lambda_seq.iter().copied().zip(e_vals.iter().copied()).collect();
    let ex = extrapolate(&pts, max_rms)?;
    let mut out = StaticMassResult {
        lambda_seq: lambda_seq.to_vec(),
        e_vals: e_vals.to_vec(),
        extrapolation: ex.clone(),
        mass: None,
        mass_err: None,
        at_lower_edge: false,
    };
    if !ex.accepted {
        return Ok(out);
    }
    let slack = (3.0 * ex.e0_err).max(1e-9);
    let inv = invert_e(ex.e0, 0.5, mass_hi, slack, |m| grid.bound_energy(m, opts))?;
    let h = 1e-3 * inv.mass;
    let slope = (grid.bound_energy(inv.mass + h, opts)? - grid.bound_energy(inv.mass, opts)?) / h;
    out.mass = Some(inv.mass);
    out.mass_err = Some(ex.e0_err / slope.abs());
    out.at_lower_edge = inv.at_lower_edge;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt_grid() -> ElectronGrid {
        ElectronGrid::new(1, 0.25, 8.0).unwrap()
    }

    #[test]
    fn poschl_teller_ground_energy() {
        let r = schrodinger_energy(0.5, &PotentialSpec::poschl_teller(2.0), &pt_grid(), &SolverOptions::default()).unwrap();
        assert!((r.richardson + 1.0).abs() < 1e-5, "{r:?}");
    }

    #[test]
    fn energy_decreases_with_mass() {
        let g = SchrodingerGrid::new(&PotentialSpec::poschl_teller(2.0), &pt_grid());
        let opts = SolverOptions::default();
        let es: Vec<f64> = [0.5, 0.75, 1.0, 1.5].iter().map(|&m| g.bound_energy(m, &opts).unwrap()).collect();
        for w in es.windows(2) {
            assert!(w[1] < w[0]);
        }
        // general-mass closed form l(l+1) = 2 m V0, E = -l^2/(2m)
        let m: f64 = 1.0;
        let l = 0.5 * (-1.0 + (1.0 + 8.0 * m * 2.0).sqrt());
        assert!((es[2] + l * l / (2.0 * m)).abs() < 1e-4);
    }

    #[test]
    fn gaussian_well_approaches_depth_from_above() {
        let g = SchrodingerGrid::new(&PotentialSpec::gaussian_well(1.0, 1.0, 1), &ElectronGrid::new(1, 0.2, 12.0).unwrap());
        let opts = SolverOptions::default();
        let mut prev = 0.0;
        for m in [1.0, 4.0, 16.0, 64.0] {
            let e = g.bound_energy(m, &opts).unwrap();
            assert!(e > -1.0 && e < prev);
            prev = e;
        }
    }

    #[test]
    fn scaling_identity() {
        let pt = PotentialSpec::poschl_teller(2.0);
        let opts = SolverOptions::default();
        let base = pt_grid();
        for lambda in [0.5, 0.2] {
            let scaled_grid = ElectronGrid::new(1, 0.25 * lambda, 8.0 * lambda).unwrap();
            for m in [0.5, 1.0] {
                let e1 = SchrodingerGrid::new(&pt, &base).ground(m, &opts).unwrap();
                let e2 = SchrodingerGrid::new(&pt.scaled(lambda), &scaled_grid).ground(m, &opts).unwrap();
                assert!((e2 - lambda * lambda * e1).abs() <= 1e-8 * (lambda * lambda * e1).abs());
            }
        }
    }

    #[test]
    fn inversion_round_trips() {
        let g = SchrodingerGrid::new(&PotentialSpec::poschl_teller(2.0), &pt_grid());
        let opts = SolverOptions::default();
        for m in [0.5, 0.75, 1.0, 1.5] {
            let target = g.bound_energy(m, &opts).unwrap();
            let inv = invert_e(target, 0.5, 4.0, 1e-12, |x| g.bound_energy(x, &opts)).unwrap();
            assert!((inv.mass - m).abs() < 1e-5, "{m} -> {}", inv.mass);
        }
        let inv = invert_e(-1.0, 0.5, 4.0, 1e-3, |x| g.bound_energy(x, &opts)).unwrap();
        assert!((inv.mass - 0.5).abs() < 1e-4);
    }

    #[test]
    fn inversion_errors() {
        let shallow = SchrodingerGrid::new(&PotentialSpec::gaussian_well(0.05, 1.0, 1), &pt_grid());
        let opts = SolverOptions::default();
        match invert_e(-1e-9, 0.5, 4.0, 1e-12, |x| shallow.bound_energy(x, &opts)) {
            Err(StaticError::Bracket { near_threshold, .. }) => assert!(near_threshold),
            other => panic!("{other:?}"),
        }
        let bumpy = |m: f64| Ok(if m < 1.0 { -m } else { -2.0 + m });
        assert!(matches!(invert_e(-1.6, 0.5, 1.9, 0.0, bumpy), Err(StaticError::NonMonotone { .. })));
    }

    #[test]
    fn no_bound_state_is_reported() {
        let g = SchrodingerGrid { momenta: vec![Momentum::ZERO], w: vec![vec![0.5]], tail_mass: 0.0 };
        assert!(matches!(g.bound_energy(0.5, &SolverOptions::default()), Err(StaticError::NoBoundState { .. })));
    }

    #[test]
    fn extrapolation_recovers_linear_data() {
        let pts: Vec<(f64, f64)> = [0.4, 0.28, 0.2, 0.14, 0.1].iter().map(|&l| (l, -1.0 + 0.3 * l)).collect();
        let ex = extrapolate(&pts, 1e-3).unwrap();
        assert!((ex.e0 + 1.0).abs() < 1e-12);
        assert!(ex.accepted);
        let flat: Vec<(f64, f64)> = pts.iter().map(|&(l, _)| (l, -0.7)).collect();
        let ex = extrapolate(&flat, 1e-3).unwrap();
        assert!((ex.e0 + 0.7).abs() < 1e-12 && ex.e0_err < 1e-12);
        assert!(matches!(extrapolate(&pts[..3], 1e-3), Err(StaticError::TooFewLambdas(3))));
        let noisy: Vec<(f64, f64)> = pts.iter().enumerate().map(|(i, &(l, e))| (l, e + if i % 2 == 0 { 0.1 } else { -0.1 })).collect();
        assert!(!extrapolate(&noisy, 1e-3).unwrap().accepted);
    }

    #[test]
    fn free_static_mass_is_half() {
        let g = SchrodingerGrid::new(&PotentialSpec::poschl_teller(2.0), &ElectronGrid::new(1, 0.5, 5.0).unwrap());
        let opts = SolverOptions::default();
        let e = g.bound_energy(0.5, &opts).unwrap();
        let lambdas = [0.4, 0.28, 0.2, 0.14, 0.1];
        let r = static_mass(&lambdas, &[e; 5], &g, &opts, 1e-3, 4.0).unwrap();
        assert!((r.mass.unwrap() - 0.5).abs() < 1e-5);
    }
}
