//! Variational upper bound on `e(lambda)` from product trial states
//! `Psi = sum_j c_j |q_j> (x) Phi_{lambda q_j}` in the comoving frame, where
//! `Phi_P` is the phase-aligned fiber ground state and `c_j` samples a
//! compactly supported momentum profile. The energy is evaluated from the
//! fiber energies and the overlap matrix of the `Phi_P`; `Psi` itself is never
//! formed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::dispersion::solve_one;
use crate::eigensolve::{dot, EigenError, SolverOptions};
use crate::model::{ModelError, Momentum, TrialFunctionSpec};
use crate::operators::FiberFamily;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrialError {
    #[error("sample P = {p:?} lies outside the uniqueness radius {p_c}")]
    OutsideRadius { p: [f64; 3], p_c: f64 },
    #[error("ground state at P = {p:?} is not isolated (gap {gap:.3e})")]
    Degenerate { p: [f64; 3], gap: f64 },
    #[error("overlap with the P = 0 ground state vanishes at P = {p:?} ({overlap:.3e}); phase undetermined")]
    PhaseUndetermined { p: [f64; 3], overlap: f64 },
    #[error("trial support lambda * R = {support} exceeds the family extent {extent}")]
    Support { support: f64, extent: f64 },
    #[error("no family sample at P = {p:?}")]
    MissingSample { p: [f64; 3] },
    #[error("eigensolver failed at P = {p:?}: {source}")]
    Solver { p: [f64; 3], source: EigenError },
    #[error(transparent)]
    Model(#[from] ModelError),
}

type Result<T> = std::result::Result<T, TrialError>;

/// Fiber ground state at one total momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilySample {
    pub p: Momentum,
    pub energy: f64,
    pub gap: f64,
    pub vector: Vec<f64>,
}

/// Phase-aligned fiber ground states, `<Phi_0|Phi_P> > 0` for every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundStateFamily {
    /// Sorted lexicographically by momentum; always contains `P = 0`.
    pub samples: Vec<FamilySample>,
    pub p_c: f64,
    /// `|Phi_P - Phi_P'|` between consecutive samples along the first axis.
    pub continuity: Vec<(f64, f64, f64)>,
}

fn key(p: Momentum) -> [u64; 3] {
    // +0.0 and -0.0 share a key
    p.0.map(|c| (c + 0.0).to_bits())
}

/// Representative of `{P, -P}` with the first non-zero component positive.
fn canonical(p: Momentum) -> (Momentum, bool) {
    match p.0.iter().find(|c| **c != 0.0) {
        Some(c) if *c < 0.0 => (-p, true),
        _ => (p, false),
    }
}

impl GroundStateFamily {
    /// Solve every requested fiber (plus `P = 0`), fix phases against
    /// `Phi_0` and record the continuity table. Samples must satisfy
    /// `|P| <= p_c` and have a gap above `gap_threshold`.
    pub fn build(fibers: &FiberFamily, momenta: &[Momentum], p_c: f64, gap_threshold: f64, opts: &SolverOptions) -> Result<Self> {
        let mut wanted: BTreeMap<[u64; 3], Momentum> = BTreeMap::new();
        wanted.insert(key(Momentum::ZERO), Momentum::ZERO);
        for &p in momenta {
            if p.norm() > p_c * (1.0 + 1e-12) {
                return Err(TrialError::OutsideRadius { p: p.0, p_c });
            }
            wanted.insert(key(p), p + Momentum::ZERO);
        }
        let mirror = fibers.reflection.is_some();
        let rep = |p: Momentum| if mirror { canonical(p) } else { (p, false) };
        let mut reps: Vec<Momentum> = wanted.values().map(|&p| rep(p).0).collect();
        reps.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite momenta"));
        reps.dedup();
        let solved: Vec<([u64; 3], (f64, f64, Vec<f64>))> = reps
            .par_iter()
            .map(|&p| {
                let r = solve_one(fibers, p, opts).map_err(|source| TrialError::Solver { p: p.0, source })?;
                let gap = r.energies[1] - r.energies[0];
                if r.near_degenerate || !(gap > gap_threshold) {
                    return Err(TrialError::Degenerate { p: p.0, gap });
                }
                Ok((key(p), (r.energies[0], gap, r.vectors[0].clone())))
            })
            .collect::<Result<_>>()?;
        let solved: BTreeMap<[u64; 3], (f64, f64, Vec<f64>)> = solved.into_iter().collect();
        let mut samples = Vec::with_capacity(wanted.len());
        for &p in wanted.values() {
            let (r, flip) = rep(p);
            let (energy, gap, v) = &solved[&key(r)];
            let vector = if flip { fibers.reflect_vector(v).expect("reflection available") } else { v.clone() };
            samples.push(FamilySample { p, energy: *energy, gap: *gap, vector });
        }
        samples.sort_by(|a, b| a.p.0.partial_cmp(&b.p.0).expect("finite momenta"));

        let origin = samples.iter().position(|s| s.p == Momentum::ZERO).expect("origin inserted");
        let reference = samples[origin].vector.clone();
        for s in samples.iter_mut() {
            let o = dot(&reference, &s.vector);
            if o.abs() < 1e-8 {
                return Err(TrialError::PhaseUndetermined { p: s.p.0, overlap: o });
            }
            if o < 0.0 {
                s.vector.iter_mut().for_each(|x| *x = -*x);
            }
        }

        let mut continuity = Vec::new();
        for pair in samples.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.p.0[1..] == b.p.0[1..] {
                let d: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                continuity.push((a.p.x(), b.p.x(), d));
            }
        }
        Ok(GroundStateFamily { samples, p_c, continuity })
    }

    pub fn e0(&self) -> f64 {
        self.get(Momentum::ZERO).expect("origin sample").energy
    }

    pub fn get(&self, p: Momentum) -> Option<&FamilySample> {
        let tol = 1e-12 * p.norm().max(1.0);
        self.samples.iter().find(|s| (s.p - p).norm() <= tol)
    }

    pub fn max_adjacent_distance(&self) -> f64 {
        self.continuity.iter().map(|c| c.2).fold(0.0, f64::max)
    }

    /// `G[i][j] = <Phi_{P_i}|Phi_{P_j}>` over all stored samples.
    pub fn overlap_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.samples.len();
        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            g[i][i] = dot(&self.samples[i].vector, &self.samples[i].vector);
            for j in 0..i {
                let o = dot(&self.samples[i].vector, &self.samples[j].vector);
                g[i][j] = o;
                g[j][i] = o;
            }
        }
        g
    }

    /// Multiply every stored vector by `sign` (used to check that the bound
    /// only sees relative phases).
    pub fn with_global_sign(&self, sign: f64) -> Self {
        let mut out = self.clone();
        for s in out.samples.iter_mut() {
            s.vector.iter_mut().for_each(|x| *x *= sign);
        }
        out
    }
}

/// Momenta `lambda * q_j` needed to evaluate trial states supported in
/// `|q| < radius` on the given electron grid.
pub fn required_momenta(lambda: f64, radius: f64, momenta: &[Momentum]) -> Vec<Momentum> {
    momenta.iter().filter(|q| q.norm() < radius).map(|&q| q * lambda).collect()
}

/// One trial-state energy and its two parts.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialEnergy {
    pub lambda: f64,
    pub trial: TrialFunctionSpec,
    pub energy: f64,
    /// `sum_j c_j^2 (E(lambda q_j) - E0) / lambda^2`.
    pub kinetic: f64,
    pub potential: f64,
}

/// Grid coefficients `c_j = f^(q_j) sqrt(dq^d)` with `sum_j c_j^2 = 1`.
pub fn trial_coefficients(trial: &TrialFunctionSpec, momenta: &[Momentum], cell_volume: f64) -> Result<Vec<f64>> {
    let f = trial.normalized_samples(momenta, cell_volume)?;
    let s = cell_volume.sqrt();
    Ok(f.into_iter().map(|a| a * s).collect())
}

fn assemble_energy(c: &[f64], excess: &[f64], w: &[Vec<f64>], overlap: impl Fn(usize, usize) -> f64) -> (f64, f64) {
    let active: Vec<usize> = (0..c.len()).filter(|&j| c[j] != 0.0).collect();
    let kinetic: f64 = active.iter().map(|&j| c[j] * c[j] * excess[j]).sum();
    let mut potential = 0.0;
    for &j in &active {
        for &k in &active {
            potential += c[j] * c[k] * w[j][k] * overlap(j, k);
        }
    }
    (kinetic, potential)
}

/// `<Psi|A(lambda) Psi>` for the trial state built from `trial` on the
/// electron grid `momenta` with potential matrix `w`.
pub fn upper_bound(
    lambda: f64,
    family: &GroundStateFamily,
    trial: &TrialFunctionSpec,
    momenta: &[Momentum],
    cell_volume: f64,
    w: &[Vec<f64>],
) -> Result<TrialEnergy> {
    let support = lambda * trial.radius();
    if support > family.p_c * (1.0 + 1e-12) {
        return Err(TrialError::Support { support, extent: family.p_c });
    }
    let c = trial_coefficients(trial, momenta, cell_volume)?;
    let e0 = family.e0();
    let mut states: Vec<Option<&FamilySample>> = vec![None; momenta.len()];
    let mut excess = vec![0.0; momenta.len()];
    for (j, &q) in momenta.iter().enumerate() {
        if c[j] != 0.0 {
            let p = q * lambda;
            let s = family.get(p).ok_or(TrialError::MissingSample { p: p.0 })?;
            excess[j] = (s.energy - e0) / (lambda * lambda);
            states[j] = Some(s);
        }
    }
    let (kinetic, potential) = assemble_energy(&c, &excess, w, |j, k| {
        dot(&states[j].unwrap().vector, &states[k].unwrap().vector)
    });
    Ok(TrialEnergy { lambda, trial: *trial, energy: kinetic + potential, kinetic, potential })
}

/// Trial energy with the fiber data replaced by a parabola of mass `mass`
/// and all overlaps set to one: the same functional evaluated for a free
/// particle of that mass.
pub fn parabolic_upper_bound(
    mass: f64,
    trial: &TrialFunctionSpec,
    momenta: &[Momentum],
    cell_volume: f64,
    w: &[Vec<f64>],
) -> Result<TrialEnergy> {
    let c = trial_coefficients(trial, momenta, cell_volume)?;
    let excess: Vec<f64> = momenta.iter().map(|q| q.norm_sq() / (2.0 * mass)).collect();
    let (kinetic, potential) = assemble_energy(&c, &excess, w, |_, _| 1.0);
    Ok(TrialEnergy { lambda: 0.0, trial: *trial, energy: kinetic + potential, kinetic, potential })
}

/// Trial energy with every overlap forced to one.
pub fn decoupled_upper_bound(
    lambda: f64,
    family: &GroundStateFamily,
    trial: &TrialFunctionSpec,
    momenta: &[Momentum],
    cell_volume: f64,
    w: &[Vec<f64>],
) -> Result<TrialEnergy> {
    let c = trial_coefficients(trial, momenta, cell_volume)?;
    let e0 = family.e0();
    let mut excess = vec![0.0; momenta.len()];
    for (j, &q) in momenta.iter().enumerate() {
        if c[j] != 0.0 {
            let p = q * lambda;
            let s = family.get(p).ok_or(TrialError::MissingSample { p: p.0 })?;
            excess[j] = (s.energy - e0) / (lambda * lambda);
        }
    }
    let (kinetic, potential) = assemble_energy(&c, &excess, w, |_, _| 1.0);
    Ok(TrialEnergy { lambda, trial: *trial, energy: kinetic + potential, kinetic, potential })
}

/// Result of the search over the trial-function parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MinimizedBound {
    pub best: TrialEnergy,
    /// The optimum sits at the largest admissible radius.
    pub at_support_boundary: bool,
    pub evaluations: usize,
}

const SCAN_POINTS: usize = 24;
const GOLDEN_STEPS: usize = 40;

/// Minimize `eval` over `[lo, hi]`: uniform scan, then golden section on the
/// bracket around the best scan point. Returns `(x, value, evaluations)`.
fn scan_golden(lo: f64, hi: f64, mut eval: impl FnMut(f64) -> Option<f64>) -> Option<(f64, f64, usize)> {
    let mut count = 0;
    let mut best: Option<(usize, f64)> = None;
    let xs: Vec<f64> = (0..SCAN_POINTS).map(|i| lo + (hi - lo) * i as f64 / (SCAN_POINTS - 1) as f64).collect();
    let mut vals = vec![f64::INFINITY; xs.len()];
    for (i, &x) in xs.iter().enumerate() {
        count += 1;
        if let Some(v) = eval(x) {
            vals[i] = v;
            if best.map_or(true, |b| v < b.1) {
                best = Some((i, v));
            }
        }
    }
    let (ib, vb) = best?;
    let (mut a, mut b) = (xs[ib.saturating_sub(1)], xs[(ib + 1).min(xs.len() - 1)]);
    let (mut xbest, mut vbest) = (xs[ib], vb);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = eval(c).unwrap_or(f64::INFINITY);
    let mut fd = eval(d).unwrap_or(f64::INFINITY);
    count += 2;
    for _ in 0..GOLDEN_STEPS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = eval(c).unwrap_or(f64::INFINITY);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = eval(d).unwrap_or(f64::INFINITY);
        }
        count += 1;
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v < vbest {
            xbest = x;
            vbest = v;
        }
    }
    Some((xbest, vbest, count))
}

/// Best trial energy over the profile's parameters. The radius ranges over
/// `[r_min, r_max]`; for the truncated Gaussian the width is searched too,
/// alternating coordinates.
pub fn minimize_with(
    template: &TrialFunctionSpec,
    r_min: f64,
    r_max: f64,
    mut eval: impl FnMut(&TrialFunctionSpec) -> Option<TrialEnergy>,
) -> Option<MinimizedBound> {
    let mut evaluations = 0;
    let mut current = template.with_radius(r_max);
    let rounds = match template {
        TrialFunctionSpec::FourierBump { .. } => 1,
        TrialFunctionSpec::TruncatedGaussian { .. } => 3,
    };
    let mut best: Option<TrialEnergy> = None;
    for _ in 0..rounds {
        let base = current;
        let (r, _, n) = scan_golden(r_min, r_max, |r| eval(&base.with_radius(r)).map(|t| t.energy))?;
        evaluations += n;
        current = base.with_radius(r);
        if let TrialFunctionSpec::TruncatedGaussian { radius, .. } = current {
            let (s, _, n) = scan_golden(0.05 * radius, radius, |s| {
                eval(&TrialFunctionSpec::TruncatedGaussian { sigma: s, radius }).map(|t| t.energy)
            })?;
            evaluations += n;
            current = TrialFunctionSpec::TruncatedGaussian { sigma: s, radius };
        }
        let t = eval(&current)?;
        evaluations += 1;
        if best.as_ref().map_or(true, |b| t.energy < b.energy) {
            best = Some(t);
        }
    }
    let best = best?;
    let at_support_boundary = best.trial.radius() >= r_max * (1.0 - 1e-3);
    Some(MinimizedBound { best, at_support_boundary, evaluations })
}

/// Smallest radius giving more than one grid node, and the largest one
/// allowed by both the grid and the family extent at this `lambda`.
pub fn radius_range(lambda: f64, family_extent: f64, momenta: &[Momentum], spacing: f64) -> (f64, f64) {
    let q_top = momenta.iter().map(|q| q.norm()).fold(0.0, f64::max);
    let hi = (family_extent / lambda).min(q_top + spacing);
    (1.5 * spacing, hi)
}

/// `U*(lambda)`: minimum of [`upper_bound`] over the profile parameters.
pub fn minimize_upper_bound(
    lambda: f64,
    family: &GroundStateFamily,
    template: &TrialFunctionSpec,
    momenta: &[Momentum],
    spacing: f64,
    cell_volume: f64,
    w: &[Vec<f64>],
) -> Result<MinimizedBound> {
    let (lo, hi) = radius_range(lambda, family.p_c, momenta, spacing);
    if hi <= lo {
        return Err(TrialError::Support { support: lambda * lo, extent: family.p_c });
    }
    let mut last_err = None;
    let found = minimize_with(template, lo, hi, |t| match upper_bound(lambda, family, t, momenta, cell_volume, w) {
        Ok(v) => Some(v),
        Err(e) => {
            last_err = Some(e);
            None
        }
    });
    match found {
        Some(m) => Ok(m),
        None => Err(last_err.unwrap_or(TrialError::Support { support: lambda * hi, extent: family.p_c })),
    }
}

/// Minimum of [`parabolic_upper_bound`] over the profile parameters.
pub fn minimize_parabolic(
    mass: f64,
    template: &TrialFunctionSpec,
    momenta: &[Momentum],
    spacing: f64,
    cell_volume: f64,
    w: &[Vec<f64>],
) -> Option<MinimizedBound> {
    let q_top = momenta.iter().map(|q| q.norm()).fold(0.0, f64::max);
    minimize_with(template, 1.5 * spacing, q_top + spacing, |t| parabolic_upper_bound(mass, t, momenta, cell_volume, w).ok())
}

/// Lowest trial energy over every grid profile supported in `|q| < radius`:
/// the ground value of `diag(E(lambda q_j) - E0) / lambda^2 + W_jk G_jk`
/// restricted to those nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimalBound {
    pub lambda: f64,
    pub radius: f64,
    pub energy: f64,
    /// Optimal profile on the grid (zero outside the support).
    pub coefficients: Vec<f64>,
}

fn restricted_ground(nodes: &[usize], excess: &[f64], w: &[Vec<f64>], overlap: impl Fn(usize, usize) -> f64, n: usize) -> Result<(f64, Vec<f64>)> {
    let m: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&j| nodes.iter().map(|&k| w[j][k] * overlap(j, k) + if j == k { excess[j] } else { 0.0 }).collect())
        .collect();
    let (vals, vecs) = crate::dense::symmetric_eigen(&m).map_err(|e| TrialError::Solver { p: [0.0; 3], source: e.into() })?;
    let mut c = vec![0.0; n];
    let sign = if vecs.iter().map(|r| r[0]).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    for (row, &j) in vecs.iter().zip(nodes) {
        c[j] = sign * row[0];
    }
    Ok((vals[0], c))
}

pub fn optimal_upper_bound(
    lambda: f64,
    family: &GroundStateFamily,
    radius: f64,
    momenta: &[Momentum],
    w: &[Vec<f64>],
) -> Result<OptimalBound> {
    let support = lambda * radius;
    if support > family.p_c * (1.0 + 1e-12) {
        return Err(TrialError::Support { support, extent: family.p_c });
    }
    let nodes: Vec<usize> = (0..momenta.len()).filter(|&j| momenta[j].norm() < radius).collect();
    if nodes.is_empty() {
        return Err(TrialError::Support { support, extent: family.p_c });
    }
    let e0 = family.e0();
    let mut states: Vec<Option<&FamilySample>> = vec![None; momenta.len()];
    let mut excess = vec![0.0; momenta.len()];
    for &j in &nodes {
        let p = momenta[j] * lambda;
        let s = family.get(p).ok_or(TrialError::MissingSample { p: p.0 })?;
        excess[j] = (s.energy - e0) / (lambda * lambda);
        states[j] = Some(s);
    }
    let (energy, coefficients) = restricted_ground(
        &nodes,
        &excess,
        w,
        |j, k| dot(&states[j].unwrap().vector, &states[k].unwrap().vector),
        momenta.len(),
    )?;
    Ok(OptimalBound { lambda, radius, energy, coefficients })
}

/// [`optimal_upper_bound`] for a parabola of mass `mass` with unit overlaps.
pub fn optimal_parabolic(mass: f64, radius: f64, momenta: &[Momentum], w: &[Vec<f64>]) -> Result<OptimalBound> {
    let nodes: Vec<usize> = (0..momenta.len()).filter(|&j| momenta[j].norm() < radius).collect();
    if nodes.is_empty() {
        return Err(TrialError::Support { support: radius, extent: 0.0 });
    }
    let excess: Vec<f64> = momenta.iter().map(|q| q.norm_sq() / (2.0 * mass)).collect();
    let (energy, coefficients) = restricted_ground(&nodes, &excess, w, |_, _| 1.0, momenta.len())?;
    Ok(OptimalBound { lambda: 0.0, radius, energy, coefficients })
}
