//! Dispersion scans `E(P)`, the dynamic mass fit, the quasi-parabolic lower
//! certificate, the variational ceilings and the uniqueness radius `P_c`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::eigensolve::{dense_ground, dense_lowest_two, ground_state, lowest_two, EigResult, EigenError, SolverOptions};
use crate::model::Momentum;
use crate::operators::FiberFamily;

/// Fibers up to this dimension are diagonalized densely.
pub const DENSE_FIBER_LIMIT: usize = 400;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispersionError {
    #[error("eigensolver failed at P = {p}: {source}")]
    Solver { p: f64, source: EigenError },
    #[error("momentum list must contain P = 0")]
    MissingOrigin,
    #[error("mass fit needs at least {need} samples with 0 < |P| <= {p_fit}, found {found}")]
    TooFewSamples { need: usize, found: usize, p_fit: f64 },
    #[error("fitted curvature {curvature:.6e} is not positive (truncation too coarse or infinite mass)")]
    NonPositiveCurvature { curvature: f64 },
    #[error("E(P) - E(0) = {diff:.3e} <= 0 at P = {p}: quasi-parabolic bound cannot be certified")]
    FlatSample { p: f64, diff: f64 },
    #[error("gap {gap:.3e} at P = 0 is below the threshold {threshold:.3e}")]
    NoGapAtOrigin { gap: f64, threshold: f64 },
    #[error("perturbative denominator {denominator:.3e} vanishes at P = {p}, mode {mode}")]
    VanishingDenominator { p: f64, mode: usize, denominator: f64 },
}

type Result<T> = std::result::Result<T, DispersionError>;

/// Ground data for one fiber.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberSolution {
    pub p: f64,
    pub energy: f64,
    pub gap: f64,
    pub residual: f64,
    pub near_degenerate: bool,
    pub vector: Option<Vec<f64>>,
}

pub(crate) fn solve_one(family: &FiberFamily, p: Momentum, opts: &SolverOptions) -> std::result::Result<EigResult, EigenError> {
    if family.dim() <= DENSE_FIBER_LIMIT {
        dense_lowest_two(&family.assemble(p))
    } else {
        lowest_two(&family.fiber(p), opts)
    }
}

/// Ground energy, gap and (optionally) ground vector of `H_{P e}` for every
/// `P` in `ps`, `e` the unit vector `axis`. With a symmetric mode grid only
/// `|P|` is solved and negative momenta are obtained by reflection.
pub fn solve_fibers(
    family: &FiberFamily,
    ps: &[f64],
    axis: Momentum,
    opts: &SolverOptions,
    keep_vectors: bool,
) -> Result<Vec<FiberSolution>> {
    let mirror = family.reflection.is_some();
    let mut unique: Vec<f64> = ps.iter().map(|&p| if mirror { p.abs() } else { p }).collect();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    let solved: Vec<(f64, EigResult)> = unique
        .par_iter()
        .map(|&p| solve_one(family, axis * p, opts).map(|r| (p, r)).map_err(|source| DispersionError::Solver { p, source }))
        .collect::<Result<_>>()?;
    let table: BTreeMap<u64, &EigResult> = solved.iter().map(|(p, r)| (p.to_bits(), r)).collect();
    Ok(ps
        .iter()
        .map(|&p| {
            let flip = mirror && p < 0.0;
            let key = if mirror { p.abs() } else { p };
            let r = table[&key.to_bits()];
            let gap = r.energies[1] - r.energies[0];
            let vector = keep_vectors.then(|| {
                if flip {
                    family.reflect_vector(&r.vectors[0]).expect("reflection available")
                } else {
                    r.vectors[0].clone()
                }
            });
            FiberSolution {
                p,
                energy: r.energies[0],
                gap,
                residual: r.residuals[0],
                near_degenerate: gap < 10.0 * opts.tol,
                vector,
            }
        })
        .collect())
}

/// Ground energies `E(P)` at arbitrary momenta, each distinct `{P, -P}` pair
/// solved once when the mode grid is symmetric.
pub fn fiber_energies(family: &FiberFamily, momenta: &[Momentum], opts: &SolverOptions) -> Result<Vec<f64>> {
    let mirror = family.reflection.is_some();
    let rep = |p: Momentum| {
        let p = p + Momentum::ZERO;
        match p.0.iter().find(|c| **c != 0.0) {
            // adding +0.0 clears the signed zeros left by the negation
            Some(c) if mirror && *c < 0.0 => -p + Momentum::ZERO,
            _ => p,
        }
    };
    let key = |p: Momentum| p.0.map(f64::to_bits);
    let mut unique: Vec<Momentum> = momenta.iter().map(|&p| rep(p)).collect();
    unique.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite momenta"));
    unique.dedup();
    let solved: BTreeMap<[u64; 3], f64> = unique
        .par_iter()
        .map(|&p| {
            let r = if family.dim() <= DENSE_FIBER_LIMIT {
                dense_ground(&family.assemble(p))
            } else {
                ground_state(&family.fiber(p), opts)
            };
            r.map(|r| (key(p), r.ground())).map_err(|source| DispersionError::Solver { p: p.x(), source })
        })
        .collect::<Result<_>>()?;
    Ok(momenta.iter().map(|&p| solved[&key(rep(p))]).collect())
}

/// Sampled dispersion along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct DispersionCurve {
    pub axis: Momentum,
    /// Sorted by `P`.
    pub samples: Vec<FiberSolution>,
    pub e0: f64,
}

impl DispersionCurve {
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.p, s.energy)).collect()
    }

    pub fn max_abs_p(&self) -> f64 {
        self.samples.iter().map(|s| s.p.abs()).fold(0.0, f64::max)
    }
}

pub fn scan_dispersion(
    family: &FiberFamily,
    p_list: &[f64],
    axis: Momentum,
    opts: &SolverOptions,
) -> Result<DispersionCurve> {
    if !p_list.contains(&0.0) {
        return Err(DispersionError::MissingOrigin);
    }
    let mut ps = p_list.to_vec();
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    let samples = solve_fibers(family, &ps, axis, opts, false)?;
    let e0 = samples.iter().find(|s| s.p == 0.0).unwrap().energy;
    Ok(DispersionCurve { axis, samples, e0 })
}

/// Uniform momentum list `-p_max..=p_max` (or `0..=p_max`) with step `dp`.
pub fn momentum_list(p_max: f64, dp: f64, symmetric: bool) -> Vec<f64> {
    let n = (p_max / dp + 1e-9).floor() as i64;
    let lo = if symmetric { -n } else { 0 };
    (lo..=n).map(|i| i as f64 * dp).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MassFit {
    pub mass: f64,
    /// Coefficient of `P^4`.
    pub quartic: f64,
    pub p_fit: f64,
    pub samples: usize,
    pub rms: f64,
    /// Condition number of the column-scaled normal matrix.
    pub condition: f64,
    /// Mass from the same fit on half the window, if enough samples remain.
    pub half_window_mass: Option<f64>,
}

/// Least squares of `E - E0 = c P^2 + b P^4` on distinct `0 < |P| <= p_fit`.
/// Returns `(c, b, rms, condition, n)`.
fn quartic_fit(points: &[(f64, f64)], e0: f64, p_fit: f64) -> Option<(f64, f64, f64, f64, usize)> {
    let mut ps: Vec<(f64, f64)> = points
        .iter()
        .filter(|(p, _)| *p > 0.0 && *p <= p_fit * (1.0 + 1e-12))
        .copied()
        .collect();
    ps.sort_by(|a, b| a.0.total_cmp(&b.0));
    ps.dedup_by(|a, b| a.0 == b.0);
    let n = ps.len();
    if n < 2 {
        return None;
    }
    // columns P^2 and P^4 scaled to unit norm
    let s2 = ps.iter().map(|(p, _)| p.powi(4)).sum::<f64>().sqrt();
    let s4 = ps.iter().map(|(p, _)| p.powi(8)).sum::<f64>().sqrt();
    let (mut a11, mut a12, mut a22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(p, e) in &ps {
        let x1 = p * p / s2;
        let x2 = p.powi(4) / s4;
        let y = e - e0;
        a11 += x1 * x1;
        a12 += x1 * x2;
        a22 += x2 * x2;
        r1 += x1 * y;
        r2 += x2 * y;
    }
    let det = a11 * a22 - a12 * a12;
    let tr = a11 + a22;
    let disc = (0.25 * (a11 - a22).powi(2) + a12 * a12).sqrt();
    let condition = (0.5 * tr + disc) / (0.5 * tr - disc).max(f64::MIN_POSITIVE);
    let c1 = (r1 * a22 - r2 * a12) / det;
    let c2 = (a11 * r2 - a12 * r1) / det;
    let c = c1 / s2;
    let b = c2 / s4;
    let rms = (ps.iter().map(|&(p, e)| (e - e0 - c * p * p - b * p.powi(4)).powi(2)).sum::<f64>() / n as f64).sqrt();
    Some((c, b, rms, condition, n))
}

/// Dynamic mass from the curvature of `E` at the origin, `E - E0 ~ P^2/(2M)`.
pub fn fit_dynamic_mass(points: &[(f64, f64)], e0: f64, p_fit: f64) -> Result<MassFit> {
    let found = points.iter().filter(|(p, _)| *p > 0.0 && *p <= p_fit * (1.0 + 1e-12)).count();
    let fit = quartic_fit(points, e0, p_fit).filter(|f| f.4 >= 4);
    let (c, b, rms, condition, n) = fit.ok_or(DispersionError::TooFewSamples { need: 4, found, p_fit })?;
    if !(c > 0.0) {
        return Err(DispersionError::NonPositiveCurvature { curvature: c });
    }
    let half_window_mass = quartic_fit(points, e0, 0.5 * p_fit)
        .filter(|f| f.4 >= 2 && f.0 > 0.0)
        .map(|f| 0.5 / f.0);
    Ok(MassFit { mass: 0.5 / c, quartic: b, p_fit, samples: n, rms, condition, half_window_mass })
}

/// Default fit window `min(P_c / 2, 0.3 / sqrt(M_guess))`, with `M_guess`
/// from a coarse quadratic fit over the whole range inside `P_c`.
pub fn default_fit_window(points: &[(f64, f64)], e0: f64, p_c: f64) -> f64 {
    let guess = quartic_fit(points, e0, p_c)
        .filter(|f| f.0 > 0.0)
        .map(|f| 0.5 / f.0)
        .unwrap_or(0.5);
    (0.5 * p_c).min(0.3 / guess.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuasiParabolicCertificate {
    pub mass: f64,
    pub c_min: f64,
    /// Sample where `c_min` is attained.
    pub worst_p: f64,
    /// Smallest `E - E0 - P^2 / (2M(1 + C P^2))` over the samples.
    pub margin: f64,
    pub samples: usize,
}

/// Smallest `C >= 0` with `E(P) - E0 >= P^2 / (2M(1 + C P^2))` at every
/// sample, verified afterwards by a direct sweep.
pub fn certify_quasi_parabolic(points: &[(f64, f64)], e0: f64, mass: f64) -> Result<QuasiParabolicCertificate> {
    let mut c_min: f64 = 0.0;
    let mut worst_p = 0.0;
    for &(p, e) in points.iter().filter(|(p, _)| *p != 0.0) {
        let diff = e - e0;
        if !(diff > 0.0) {
            return Err(DispersionError::FlatSample { p, diff });
        }
        let p2 = p * p;
        let need = ((p2 / (2.0 * mass * diff) - 1.0) / p2).max(0.0);
        if need > c_min {
            c_min = need;
            worst_p = p;
        }
    }
    let margin = points
        .iter()
        .filter(|(p, _)| *p != 0.0)
        .map(|&(p, e)| e - e0 - p * p / (2.0 * mass * (1.0 + c_min * p * p)))
        .fold(f64::INFINITY, f64::min);
    Ok(QuasiParabolicCertificate { mass, c_min, worst_p, margin, samples: points.len() })
}

/// One-phonon and parabolic ceilings on computed energies.
#[derive(Clone, Debug, PartialEq)]
pub struct CeilingReport {
    /// Largest `E(P) - min_i((P - k_i)^2 + omega_i)`; equals `E(P) - omega(P)`
    /// when `P` is itself a retained mode.
    pub phonon_excess: f64,
    /// Largest `E(P) - E0 - P^2`.
    pub parabola_excess: f64,
    /// `(P, which)` for every excess above the tolerance.
    pub violations: Vec<(f64, &'static str, f64)>,
}

impl CeilingReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lowest one-phonon diagonal energy `min_i (P - k_i)^2 + omega_i`.
pub fn one_phonon_ceiling(p: Momentum, modes: &[Momentum], omega: &[f64]) -> f64 {
    modes.iter().zip(omega).map(|(&k, &w)| (p - k).norm_sq() + w).fold(f64::INFINITY, f64::min)
}

pub fn check_ceilings(
    points: &[(f64, f64)],
    e0: f64,
    axis: Momentum,
    modes: &[Momentum],
    omega: &[f64],
    tol: f64,
) -> CeilingReport {
    let mut rep = CeilingReport { phonon_excess: f64::NEG_INFINITY, parabola_excess: f64::NEG_INFINITY, violations: vec![] };
    for &(p, e) in points {
        let a = e - one_phonon_ceiling(axis * p, modes, omega);
        let b = e - e0 - p * p;
        rep.phonon_excess = rep.phonon_excess.max(a);
        rep.parabola_excess = rep.parabola_excess.max(b);
        if a > tol {
            rep.violations.push((p, "one_phonon", a));
        }
        if b > tol {
            rep.violations.push((p, "parabola", b));
        }
    }
    rep
}

/// Largest `P >= 0` such that every sample in `[0, P]` has a gap above the
/// threshold and no degeneracy flag.
pub fn estimate_pc(samples: &[FiberSolution], gap_threshold: f64) -> Result<f64> {
    let mut pos: Vec<&FiberSolution> = samples.iter().filter(|s| s.p >= 0.0).collect();
    pos.sort_by(|a, b| a.p.total_cmp(&b.p));
    let origin = pos.first().filter(|s| s.p == 0.0).ok_or(DispersionError::MissingOrigin)?;
    if !(origin.gap > gap_threshold) || origin.near_degenerate {
        return Err(DispersionError::NoGapAtOrigin { gap: origin.gap, threshold: gap_threshold });
    }
    let mut pc = 0.0;
    for s in pos {
        if s.gap > gap_threshold && !s.near_degenerate {
            pc = s.p;
        } else {
            break;
        }
    }
    Ok(pc)
}

/// Second-order energy `P^2 - sum_i |v_i|^2 / ((P - k_i)^2 + omega_i - P^2)`.
pub fn perturbative_energy(p: Momentum, modes: &[Momentum], v: &[f64], omega: &[f64]) -> std::result::Result<f64, (usize, f64)> {
    let mut e = p.norm_sq();
    for (i, ((&k, &vi), &w)) in modes.iter().zip(v).zip(omega).enumerate() {
        let den = (p - k).norm_sq() + w - p.norm_sq();
        if !(den > 0.0) {
            return Err((i, den));
        }
        e -= vi * vi / den;
    }
    Ok(e)
}

/// Weak-coupling mass from the second-order dispersion, fitted at the given
/// momenta with the same window as the exact curve.
pub fn perturbative_mass(
    modes: &[Momentum],
    v: &[f64],
    omega: &[f64],
    axis: Momentum,
    ps: &[f64],
    p_fit: f64,
) -> Result<MassFit> {
    let mut pts = Vec::with_capacity(ps.len());
    // outside the window the second-order denominators may cross zero
    for &p in ps.iter().filter(|p| p.abs() <= p_fit * (1.0 + 1e-12)) {
        let e = perturbative_energy(axis * p, modes, v, omega)
            .map_err(|(mode, denominator)| DispersionError::VanishingDenominator { p, mode, denominator })?;
        pts.push((p, e));
    }
    let e0 = perturbative_energy(Momentum::ZERO, modes, v, omega)
        .map_err(|(mode, denominator)| DispersionError::VanishingDenominator { p: 0.0, mode, denominator })?;
    fit_dynamic_mass(&pts, e0, p_fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::FockBasis;
    use crate::model::{Mode, ModeGrid};
    use crate::operators::Kinetic;

    fn toy(ks: &[f64], v: f64, n_max: usize) -> FiberFamily {
        let grid = ModeGrid::from_modes(1, ks.iter().map(|&k| Mode { k: Momentum::along_x(k), weight: 1.0 }).collect()).unwrap();
        let basis = FockBasis::enumerate(ks.len(), n_max).unwrap();
        FiberFamily::from_parts(&grid, &vec![v; ks.len()], &vec![1.0; ks.len()], basis, Kinetic::Quadratic).unwrap()
    }

    fn synth(f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        momentum_list(0.5, 0.05, true).into_iter().map(|p| (p, f(p))).collect()
    }

    #[test]
    fn fit_recovers_synthetic_masses() {
        let pts = synth(|p| -0.5 + p * p / 3.0);
        let fit = fit_dynamic_mass(&pts, -0.5, 0.5).unwrap();
        assert!((fit.mass - 1.5).abs() < 1e-12);
        assert!(fit.quartic.abs() < 1e-10);
        let pts = synth(|p| p * p + 2.0 * p.powi(4));
        let fit = fit_dynamic_mass(&pts, 0.0, 0.5).unwrap();
        assert!((fit.mass - 0.5).abs() < 1e-12);
        assert!((fit.quartic - 2.0).abs() < 1e-9);
        assert!(fit.half_window_mass.is_some());
    }

    #[test]
    fn fit_rejects_bad_input() {
        let pts = synth(|p| -p * p);
        assert!(matches!(fit_dynamic_mass(&pts, 0.0, 0.5), Err(DispersionError::NonPositiveCurvature { .. })));
        assert!(matches!(fit_dynamic_mass(&pts, 0.0, 0.1), Err(DispersionError::TooFewSamples { .. })));
    }

    #[test]
    fn certificate_examples() {
        let c = certify_quasi_parabolic(&synth(|p| 1.0 + p * p / 1.6), 1.0, 0.8).unwrap();
        assert!(c.c_min < 1e-9);
        let c = certify_quasi_parabolic(&synth(|p| p * p / (2.0 * 0.8 * (1.0 + p * p))), 0.0, 0.8).unwrap();
        assert!((c.c_min - 1.0).abs() < 1e-9);
        assert!(c.margin >= -1e-12);
        assert!(matches!(
            certify_quasi_parabolic(&[(0.0, 0.0), (0.1, 0.0)], 0.0, 0.5),
            Err(DispersionError::FlatSample { .. })
        ));
    }

    #[test]
    fn fiber_energies_match_scan() {
        let f = toy(&[-1.0, -0.5, 0.5, 1.0], 0.3, 2);
        let ps = [-0.7, -0.2, 0.0, 0.2, 0.45];
        let moms: Vec<Momentum> = ps.iter().map(|&p| Momentum::along_x(p)).collect();
        let e = fiber_energies(&f, &moms, &SolverOptions::default()).unwrap();
        let curve = solve_fibers(&f, &ps, Momentum::along_x(1.0), &SolverOptions::default(), false).unwrap();
        for (a, s) in e.iter().zip(&curve) {
            assert!((a - s.energy).abs() < 1e-12);
        }
        assert_eq!(e[1].to_bits(), e[3].to_bits());
    }

    #[test]
    fn free_dispersion_is_parabolic_inside_ir_cutoff() {
        let f = toy(&[-1.0, -0.5, 0.5, 1.0], 0.0, 1);
        let ps = momentum_list(0.4, 0.1, true);
        let curve = scan_dispersion(&f, &ps, Momentum::along_x(1.0), &SolverOptions::default()).unwrap();
        for s in &curve.samples {
            assert!((s.energy - s.p * s.p).abs() < 1e-14);
        }
        let fit = fit_dynamic_mass(&curve.points(), curve.e0, 0.4).unwrap();
        assert!((fit.mass - 0.5).abs() < 1e-8);
    }

    #[test]
    fn one_mode_toy_scan() {
        let f = toy(&[1.0], 0.2, 1);
        let curve = scan_dispersion(&f, &[0.0, 0.1], Momentum::along_x(1.0), &SolverOptions::default()).unwrap();
        assert!((curve.e0 - (1.0 - 1.04f64.sqrt())).abs() < 1e-14);
        assert!((curve.samples[0].gap - 2.0 * 1.04f64.sqrt()).abs() < 1e-13);
        let modes = [Momentum::along_x(1.0)];
        let rep = check_ceilings(&curve.points(), curve.e0, Momentum::along_x(1.0), &modes, &[1.0], 1e-9);
        assert!(rep.holds());
        assert!(estimate_pc(&curve.samples, 1e-3).unwrap() > 0.0);
    }

    #[test]
    fn parity_of_scanned_energies() {
        let f = toy(&[-1.0, -0.5, 0.5, 1.0], 0.2, 3);
        let curve = scan_dispersion(&f, &[-0.2, 0.0, 0.2], Momentum::along_x(1.0), &SolverOptions::default()).unwrap();
        assert!((curve.samples[0].energy - curve.samples[2].energy).abs() < 1e-10);
    }

    #[test]
    fn mirrored_vectors_are_eigenvectors() {
        let f = toy(&[-1.0, -0.5, 0.5, 1.0], 0.3, 2);
        let sols = solve_fibers(&f, &[-0.3, 0.3], Momentum::along_x(1.0), &SolverOptions::default(), true).unwrap();
        let h = f.assemble(Momentum::along_x(-0.3));
        let x = sols[0].vector.as_ref().unwrap();
        let mut y = vec![0.0; x.len()];
        use crate::sparse::LinearOperator;
        h.apply(x, &mut y);
        let r: f64 = y.iter().zip(x).map(|(a, b)| (a - sols[0].energy * b).powi(2)).sum::<f64>().sqrt();
        assert!(r < 1e-10);
    }

    #[test]
    fn pc_examples() {
        let mk = |p: f64, gap: f64| FiberSolution { p, energy: 0.0, gap, residual: 0.0, near_degenerate: false, vector: None };
        let all = vec![mk(0.0, 1.0), mk(0.1, 1.0), mk(0.2, 1.0)];
        assert_eq!(estimate_pc(&all, 0.1).unwrap(), 0.2);
        let dip = vec![mk(0.0, 1.0), mk(0.1, 1.0), mk(0.2, 0.05), mk(0.3, 1.0)];
        assert_eq!(estimate_pc(&dip, 0.1).unwrap(), 0.1);
        let bad = vec![mk(0.0, 0.01), mk(0.1, 1.0)];
        assert!(matches!(estimate_pc(&bad, 0.1), Err(DispersionError::NoGapAtOrigin { .. })));
    }

    #[test]
    fn perturbative_examples() {
        let modes = [Momentum::along_x(1.0)];
        let e = perturbative_energy(Momentum::ZERO, &modes, &[0.3], &[1.0]).unwrap();
        assert!((e + 0.045).abs() < 1e-15);
        let ps = momentum_list(0.3, 0.05, false);
        let fit = perturbative_mass(&modes, &[0.0], &[1.0], Momentum::along_x(1.0), &ps, 0.3).unwrap();
        assert!((fit.mass - 0.5).abs() < 1e-12);
        assert!(matches!(
            perturbative_mass(&modes, &[0.1], &[1.0], Momentum::along_x(1.0), &[0.0, 1.0], 1.0),
            Err(DispersionError::VanishingDenominator { .. })
        ));
    }
}
