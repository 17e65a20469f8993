//! Lower bounds on `e(lambda)` and the ordering report
//! `L2 <= L1 <= e <= U*`.
//!
//! `L1` replaces every fiber block of `A(lambda)` by its ground energy, which
//! can only lower the spectrum. `L2` further replaces `E` by the
//! quasi-parabolic minorant and splits momentum space at `|lambda q| = beta`,
//! paying for the cross terms of the potential with an `epsilon`-weighted
//! Schwarz inequality.

use thiserror::Error;

use crate::dense;
use crate::model::{Momentum, PotentialSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("node energies ({got}) do not match the electron grid ({want})")]
    Shape { got: usize, want: usize },
    #[error("split parameters must be positive (beta {beta}, epsilon {epsilon})")]
    Params { beta: f64, epsilon: f64 },
    #[error("dense eigensolver failed: {0}")]
    Dense(#[from] dense::DenseError),
}

type Result<T> = std::result::Result<T, BoundsError>;

fn lowest(m: &[Vec<f64>]) -> Result<f64> {
    Ok(dense::symmetric_eigenvalues(m)?[0])
}

/// `L1(lambda) = infspec(diag((E(lambda q_j) - E0) / lambda^2) + W)`, with
/// `node_energies[j] = E(lambda q_j)`.
pub fn momentum_lower_bound(lambda: f64, e0: f64, node_energies: &[f64], w: &[Vec<f64>]) -> Result<f64> {
    if node_energies.len() != w.len() {
        return Err(BoundsError::Shape { got: node_energies.len(), want: w.len() });
    }
    let inv = 1.0 / (lambda * lambda);
    let mut m = w.to_vec();
    for (j, row) in m.iter_mut().enumerate() {
        row[j] += (node_energies[j] - e0) * inv;
    }
    lowest(&m)
}

/// Spectral norm of the potential matrix. On the grid it is the sharp
/// replacement for `sup |V|` in the tail branch.
pub fn potential_operator_norm(w: &[Vec<f64>]) -> Result<f64> {
    let vals = dense::symmetric_eigenvalues(w)?;
    Ok(vals.first().copied().unwrap_or(0.0).abs().max(vals.last().copied().unwrap_or(0.0).abs()))
}

/// Scaling constants for the split parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitScaling {
    /// `epsilon = c_eps * lambda`; `None` selects `4 sup|V| M`.
    pub c_eps: Option<f64>,
    /// `beta = c_beta * sqrt(lambda)`.
    pub c_beta: f64,
}

impl Default for SplitScaling {
    fn default() -> Self {
        SplitScaling { c_eps: None, c_beta: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitParams {
    pub beta: f64,
    pub epsilon: f64,
    pub mass: f64,
    /// Quasi-parabolic constant.
    pub c: f64,
    /// Bound on the potential used in the tail branch.
    pub v_sup: f64,
}

impl SplitParams {
    pub fn from_scaling(lambda: f64, scaling: &SplitScaling, mass: f64, c: f64, v_sup: f64) -> Self {
        let c_eps = scaling.c_eps.unwrap_or(4.0 * v_sup * mass);
        SplitParams { beta: scaling.c_beta * lambda.sqrt(), epsilon: c_eps * lambda, mass, c, v_sup }
    }

    /// Mass in the kinetic minorant, `M (1 + C beta^2)`.
    pub fn softened_mass(&self) -> f64 {
        self.mass * (1.0 + self.c * self.beta * self.beta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitBound {
    /// `infspec(p^2 / (2 M') + (1 - eps) V+ - (1 + eps) V-)` on the grid.
    pub inner: f64,
    /// `beta^2 / (2 lambda^2 M') - (1 + 1/eps) sup|V|`.
    pub tail: f64,
    pub value: f64,
}

/// `L2(lambda)` on the electron grid. Every shipped potential is
/// non-positive, so `V+ = 0` and the inner branch is the particle-only
/// operator with the potential scaled by `1 + eps`.
pub fn split_lower_bound(lambda: f64, params: &SplitParams, potential: &PotentialSpec, momenta: &[Momentum], w: &[Vec<f64>]) -> Result<SplitBound> {
    if !(params.beta > 0.0 && params.epsilon > 0.0) {
        return Err(BoundsError::Params { beta: params.beta, epsilon: params.epsilon });
    }
    debug_assert!(potential.is_nonpositive());
    let m_soft = params.softened_mass();
    let scale = 1.0 + params.epsilon;
    let mut m: Vec<Vec<f64>> = w.iter().map(|row| row.iter().map(|x| x * scale).collect()).collect();
    for (j, row) in m.iter_mut().enumerate() {
        row[j] += momenta[j].norm_sq() / (2.0 * m_soft);
    }
    let inner = lowest(&m)?;
    let tail = params.beta * params.beta / (2.0 * lambda * lambda * m_soft) - (1.0 + 1.0 / params.epsilon) * params.v_sup;
    Ok(SplitBound { inner, tail, value: inner.min(tail) })
}

/// Smallest `E(P) - E0 - [chi P^2 + (1 - chi) beta^2] / (2 M (1 + C beta^2))`
/// over the samples, `chi` the indicator of `|P| < beta`.
pub fn split_sweep(points: &[(f64, f64)], e0: f64, params: &SplitParams) -> f64 {
    let denom = 2.0 * params.softened_mass();
    points
        .iter()
        .map(|&(p, e)| {
            let floor = if p.abs() < params.beta { p * p } else { params.beta * params.beta };
            e - e0 - floor / denom
        })
        .fold(f64::INFINITY, f64::min)
}

/// One line of the ordering report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SandwichRow {
    pub lambda: f64,
    pub l2: f64,
    pub l1: f64,
    pub e: f64,
    pub u_star: f64,
}

impl SandwichRow {
    /// `(L1 - L2, e - L1, U* - e)`.
    pub fn margins(&self) -> [f64; 3] {
        [self.l1 - self.l2, self.e - self.l1, self.u_star - self.e]
    }

    pub fn margin_min(&self) -> f64 {
        self.margins().into_iter().fold(f64::INFINITY, f64::min)
    }
}

const PAIRS: [&str; 3] = ["L2<=L1", "L1<=e", "e<=U*"];

#[derive(Clone, Debug, PartialEq)]
pub struct OrderingVerdict {
    pub pass: bool,
    pub worst_margin: f64,
    pub worst_lambda: f64,
    pub worst_pair: &'static str,
    /// `(lambda, pair, margin)` for every margin below `-tol`.
    pub violations: Vec<(f64, &'static str, f64)>,
}

pub fn check_ordering(rows: &[SandwichRow], tol: f64) -> OrderingVerdict {
    let mut v = OrderingVerdict {
        pass: true,
        worst_margin: f64::INFINITY,
        worst_lambda: f64::NAN,
        worst_pair: "",
        violations: Vec::new(),
    };
    for r in rows {
        for (m, pair) in r.margins().into_iter().zip(PAIRS) {
            if m < v.worst_margin || m.is_nan() {
                v.worst_margin = m;
                v.worst_lambda = r.lambda;
                v.worst_pair = pair;
            }
            if !(m >= -tol) {
                v.pass = false;
                v.violations.push((r.lambda, pair, m));
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolve::SolverOptions;
    use crate::operators::{grid_potential_matrix, ElectronGrid};
    use crate::staticmass::SchrodingerGrid;

    fn pt() -> (ElectronGrid, PotentialSpec, Vec<Vec<f64>>) {
        let g = ElectronGrid::new(1, 0.25, 8.0).unwrap();
        let v = PotentialSpec::poschl_teller(2.0);
        let w = grid_potential_matrix(&v, &g).w;
        (g, v, w)
    }

    #[test]
    fn parabolic_energies_give_schrodinger_value() {
        let (g, _, w) = pt();
        let lambda = 0.2;
        let e: Vec<f64> = g.momenta.iter().map(|q| 0.3 + (lambda * q.x()).powi(2)).collect();
        let l1 = momentum_lower_bound(lambda, 0.3, &e, &w).unwrap();
        let exact = SchrodingerGrid::new(&PotentialSpec::poschl_teller(2.0), &g).ground(0.5, &SolverOptions::default()).unwrap();
        assert!((l1 - exact).abs() < 1e-12);
        assert!((l1 + 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_potential_gives_zero() {
        let (g, _, w) = pt();
        let zero = vec![vec![0.0; w.len()]; w.len()];
        let e: Vec<f64> = g.momenta.iter().map(|q| q.norm_sq() * 0.01).collect();
        assert!(momentum_lower_bound(0.1, 0.0, &e, &zero).unwrap().abs() < 1e-15);
    }

    #[test]
    fn inner_branch_reduces_to_schrodinger_energy() {
        let (g, v, w) = pt();
        let p = SplitParams { beta: 1e12, epsilon: 1e-300, mass: 0.8, c: 0.0, v_sup: 2.0 };
        let b = split_lower_bound(0.1, &p, &v, &g.momenta, &w).unwrap();
        let exact = SchrodingerGrid::new(&v, &g).ground(0.8, &SolverOptions::default()).unwrap();
        assert!((b.inner - exact).abs() < 1e-12);
    }

    #[test]
    fn tail_is_nonnegative_with_default_scaling() {
        let (g, v, w) = pt();
        let norm = potential_operator_norm(&w).unwrap();
        assert!(norm <= v.sup_norm() + 1e-9);
        for lambda in [0.4, 0.28, 0.2, 0.14, 0.1] {
            let p = SplitParams::from_scaling(lambda, &SplitScaling::default(), 0.6, 0.5, v.sup_norm());
            let b = split_lower_bound(lambda, &p, &v, &g.momenta, &w).unwrap();
            assert!(b.tail >= 0.0, "lambda {lambda}: {b:?}");
            assert_eq!(b.value, b.inner);
        }
    }

    #[test]
    fn free_split_bound_approaches_schrodinger_value_linearly() {
        let (g, v, w) = pt();
        let exact = SchrodingerGrid::new(&v, &g).ground(0.5, &SolverOptions::default()).unwrap();
        let lambdas = [0.4, 0.2, 0.1, 0.05];
        let gaps: Vec<f64> = lambdas
            .iter()
            .map(|&l| {
                let p = SplitParams::from_scaling(l, &SplitScaling::default(), 0.5, 0.0, v.sup_norm());
                exact - split_lower_bound(l, &p, &v, &g.momenta, &w).unwrap().value
            })
            .collect();
        for pair in gaps.windows(2) {
            assert!(pair[0] > 0.0);
            let ratio = pair[0] / pair[1];
            assert!((1.6..2.4).contains(&ratio), "{gaps:?}");
        }
    }

    #[test]
    fn split_sweep_holds_for_certified_curve() {
        let mass = 0.7;
        let c = 0.4;
        let pts: Vec<(f64, f64)> = (-20..=20).map(|i| i as f64 * 0.1).map(|p| (p, -0.2 + p * p / (2.0 * mass * (1.0 + c * p * p)))).collect();
        for beta in [0.3, 1.0, 5.0] {
            let params = SplitParams { beta, epsilon: 0.1, mass, c, v_sup: 1.0 };
            assert!(split_sweep(&pts, -0.2, &params) >= -1e-15);
        }
        let too_light = SplitParams { beta: 1.0, epsilon: 0.1, mass: 0.5, c: 0.0, v_sup: 1.0 };
        assert!(split_sweep(&pts, -0.2, &too_light) < 0.0);
    }

    #[test]
    fn ordering_verdict() {
        let good = SandwichRow { lambda: 0.2, l2: -1.2, l1: -1.01, e: -1.0, u_star: -0.99 };
        let v = check_ordering(&[good], 1e-8);
        assert!(v.pass);
        assert!((v.worst_margin - 0.01).abs() < 1e-12);
        let bad = SandwichRow { lambda: 0.1, l2: -1.2, l1: -0.98, e: -1.0, u_star: -0.99 };
        let v = check_ordering(&[good, bad], 1e-8);
        assert!(!v.pass);
        assert_eq!(v.worst_lambda, 0.1);
        assert_eq!(v.worst_pair, "L1<=e");
        let nan = SandwichRow { lambda: 0.3, l2: f64::NAN, l1: -1.0, e: -1.0, u_star: -1.0 };
        assert!(!check_ordering(&[nan], 1e-8).pass);
    }
}
