//! Operator assembly: fiber Hamiltonians at fixed total momentum, the coupled
//! operator in the comoving frame whose bottom gives the rescaled energy in a
//! slowly varying potential, the position-space tensor-product oracle, and
//! the particle-only Schroedinger operator.
//!
//! Comoving-frame operator, with electron momenta `q_j` on a symmetric grid of
//! spacing `dq`:
//!
//! ```text
//! A(lambda) = (+)_j (H_{lambda q_j} - E0) / lambda^2  +  W (x) 1_Fock
//! W_{jj'}   = (2 pi)^{-d/2} V^(q_j - q_j') dq^d
//! ```

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::fock::{FockBasis, FockError};
use crate::model::{build_mode_grid, effective_couplings, ModeGrid, ModelError, ModelSpec, Momentum, PotentialSpec};
use crate::sparse::{LinearOperator, SparseError, SparseOperator};

/// Largest dimension accepted by dense-only assemblies.
pub const DENSE_ASSEMBLY_LIMIT: usize = 2000;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension {dim} exceeds the dense limit {limit}")]
    Capacity { dim: usize, limit: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

type Result<T> = std::result::Result<T, OperatorError>;

/// Particle kinetic energy as a function of momentum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kinetic {
    /// `|p|^2`
    Quadratic,
    /// Nearest-neighbour lattice band `sum_a (2 - 2 cos(p_a h)) / h^2`.
    Lattice { spacing: f64 },
}

impl Kinetic {
    #[inline]
    pub fn energy(&self, p: Momentum) -> f64 {
        match *self {
            Kinetic::Quadratic => p.norm_sq(),
            Kinetic::Lattice { spacing } => {
                let h2 = spacing * spacing;
                p.0.iter().map(|&c| (2.0 - 2.0 * (c * spacing).cos()) / h2).sum()
            }
        }
    }
}

/// Uniform electron momentum grid `q = dq * n`, `n in [-J, J]^d`, in
/// lexicographic order, so the reflection `q -> -q` reverses the index.
#[derive(Clone, Debug, PartialEq)]
pub struct ElectronGrid {
    pub dimension: usize,
    pub spacing: f64,
    pub half_count: usize,
    pub momenta: Vec<Momentum>,
}

impl ElectronGrid {
    pub fn new(dimension: usize, spacing: f64, q_max: f64) -> Result<Self> {
        if !(spacing > 0.0) || !(q_max >= 0.0) || !(1..=3).contains(&dimension) {
            return Err(OperatorError::Domain(format!(
                "electron grid needs dq > 0, q_max >= 0 and dimension 1..3 (got dq={spacing}, q_max={q_max}, d={dimension})"
            )));
        }
        let half = (q_max / spacing + 1e-9).floor() as i64;
        let mut momenta = Vec::new();
        let span = |on: bool| if on { -half..=half } else { 0..=0 };
        for a in span(true) {
            for b in span(dimension >= 2) {
                for c in span(dimension >= 3) {
                    momenta.push(Momentum([a as f64 * spacing, b as f64 * spacing, c as f64 * spacing]));
                }
            }
        }
        Ok(ElectronGrid { dimension, spacing, half_count: half as usize, momenta })
    }

    pub fn len(&self) -> usize {
        self.momenta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.momenta.is_empty()
    }

    pub fn q_max(&self) -> f64 {
        self.half_count as f64 * self.spacing
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dimension as i32)
    }

    /// Periodic box length paired with the momentum spacing.
    pub fn box_length(&self) -> f64 {
        2.0 * PI / self.spacing
    }

    /// Index of `-q_j`.
    pub fn reflect(&self, j: usize) -> usize {
        self.momenta.len() - 1 - j
    }

    /// Same grid with half the spacing and the same extent.
    pub fn refined(&self) -> Self {
        ElectronGrid::new(self.dimension, 0.5 * self.spacing, self.q_max()).expect("refinement of a valid grid")
    }
}

/// Potential coupling between electron momenta.
#[derive(Clone, Debug, PartialEq)]
pub enum PotentialCoupling {
    /// `(2 pi)^{-d/2} V^(q - q') dq^d` from the closed-form transform.
    Continuum,
    /// `(1/N) sum_x V(x) cos((q - q') x)` over lattice sites `x`.
    Lattice { positions: Vec<f64> },
}

/// Dense potential matrix on an electron grid, with the transform mass that
/// lies outside the grid extent.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialMatrix {
    pub w: Vec<Vec<f64>>,
    /// `(2 pi)^{-d/2} \int_{|q| > Q_max} |V^|` estimated on the grid lattice.
    pub tail_mass: f64,
}

pub fn potential_matrix(v: &PotentialSpec, momenta: &[Momentum], cell_volume: f64, coupling: &PotentialCoupling) -> PotentialMatrix {
    let n = momenta.len();
    let d = v.dimension;
    let mut w = vec![vec![0.0; n]; n];
    match coupling {
        PotentialCoupling::Continuum => {
            let pref = (2.0 * PI).powf(-0.5 * d as f64) * cell_volume;
            for i in 0..n {
                for j in 0..=i {
                    let val = pref * v.fourier(momenta[i] - momenta[j]);
                    w[i][j] = val;
                    w[j][i] = val;
                }
            }
        }
        PotentialCoupling::Lattice { positions } => {
            let vals: Vec<f64> = positions.iter().map(|&x| v.value(Momentum::along_x(x))).collect();
            let inv = 1.0 / positions.len() as f64;
            for i in 0..n {
                for j in 0..=i {
                    let dq = momenta[i].x() - momenta[j].x();
                    let s: f64 = positions.iter().zip(&vals).map(|(&x, &vx)| vx * (dq * x).cos()).sum();
                    w[i][j] = s * inv;
                    w[j][i] = s * inv;
                }
            }
        }
    }
    PotentialMatrix { w, tail_mass: 0.0 }
}

/// Potential matrix on an [`ElectronGrid`] with the transform tail recorded.
pub fn grid_potential_matrix(v: &PotentialSpec, egrid: &ElectronGrid) -> PotentialMatrix {
    let mut pm = potential_matrix(v, &egrid.momenta, egrid.cell_volume(), &PotentialCoupling::Continuum);
    pm.tail_mass = fourier_tail_mass(v, egrid);
    pm
}

fn fourier_tail_mass(v: &PotentialSpec, egrid: &ElectronGrid) -> f64 {
    let d = egrid.dimension;
    let q_max = egrid.q_max();
    let h = egrid.spacing;
    let outer = 3 * egrid.half_count as i64 + 1;
    let span = |on: bool| if on { -outer..=outer } else { 0..=0 };
    let mut sum = 0.0;
    for a in span(true) {
        for b in span(d >= 2) {
            for c in span(d >= 3) {
                let q = Momentum([a as f64 * h, b as f64 * h, c as f64 * h]);
                if q.norm() > q_max + 1e-12 {
                    sum += v.fourier(q).abs();
                }
            }
        }
    }
    (2.0 * PI).powf(-0.5 * d as f64) * sum * egrid.cell_volume()
}

/// Everything needed to apply `H_P` for any total momentum `P`: the
/// momentum-independent phonon coupling plus per-state field momentum and
/// field energy.
#[derive(Clone, Debug)]
pub struct FiberFamily {
    pub basis: FockBasis,
    pub field_momentum: Vec<Momentum>,
    pub field_energy: Vec<f64>,
    /// Off-diagonal part of `H_P` (independent of `P`).
    pub coupling: SparseOperator,
    pub kinetic: Kinetic,
    /// Basis permutation induced by `k -> -k`, when the mode grid is symmetric.
    pub reflection: Option<Vec<usize>>,
}

impl FiberFamily {
    /// Build the mode grid, couplings and Fock basis from a model.
    pub fn from_model(spec: &ModelSpec) -> Result<Self> {
        let grid = build_mode_grid(spec)?;
        Self::from_grid(spec, &grid, Kinetic::Quadratic)
    }

    pub fn from_grid(spec: &ModelSpec, grid: &ModeGrid, kinetic: Kinetic) -> Result<Self> {
        let v = effective_couplings(spec, grid)?;
        if v.iter().any(|c| c.im != 0.0) {
            return Err(OperatorError::Domain("complex couplings are not supported".into()));
        }
        let v: Vec<f64> = v.iter().map(|c| c.re).collect();
        let omega: Vec<f64> = grid.modes.iter().map(|m| spec.omega(m.k)).collect();
        let basis = FockBasis::enumerate(grid.len(), spec.n_max)?;
        Self::from_parts(grid, &v, &omega, basis, kinetic)
    }

    pub fn from_parts(grid: &ModeGrid, v: &[f64], omega: &[f64], basis: FockBasis, kinetic: Kinetic) -> Result<Self> {
        let m = grid.len();
        if v.len() != m || omega.len() != m || basis.m_modes() != m {
            return Err(OperatorError::Domain("mode count mismatch".into()));
        }
        if omega.iter().any(|&w| !(w > 0.0)) {
            return Err(OperatorError::Domain("field energies must be positive".into()));
        }
        let dim = basis.dim();
        let n_max = basis.n_max();
        let field_momentum: Vec<Momentum> = (0..dim)
            .map(|s| {
                basis
                    .occupations(s)
                    .iter()
                    .zip(&grid.modes)
                    .fold(Momentum::ZERO, |acc, (&o, md)| acc + md.k * o as f64)
            })
            .collect();
        let field_energy: Vec<f64> = (0..dim)
            .map(|s| basis.occupations(s).iter().zip(omega).map(|(&o, w)| o as f64 * w).sum())
            .collect();
        let rows: Vec<Vec<(usize, f64)>> = (0..dim)
            .into_par_iter()
            .map(|s| {
                let occ = basis.occupations(s);
                let mut buf = occ.to_vec();
                let mut row = Vec::with_capacity(2 * m);
                for i in 0..m {
                    if v[i] == 0.0 {
                        continue;
                    }
                    if occ[i] > 0 {
                        buf[i] -= 1;
                        let t = basis.index_of_occ(&buf).expect("annihilation stays in the basis");
                        row.push((t, v[i] * (occ[i] as f64).sqrt()));
                        buf[i] += 1;
                    }
                    if basis.total(s) < n_max {
                        buf[i] += 1;
                        let t = basis.index_of_occ(&buf).expect("creation below the cap");
                        row.push((t, v[i] * (buf[i] as f64).sqrt()));
                        buf[i] -= 1;
                    }
                }
                row
            })
            .collect();
        let coupling = SparseOperator::from_rows(dim, rows)?;
        let reflection = grid.reflection().map(|perm| basis.mode_permutation(&perm));
        Ok(FiberFamily { basis, field_momentum, field_energy, coupling, kinetic, reflection })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Diagonal of `H_P`: `kinetic(P - p_f) + sum occ * omega`.
    pub fn diagonal(&self, p: Momentum) -> Vec<f64> {
        self.field_momentum
            .iter()
            .zip(&self.field_energy)
            .map(|(&pf, &ef)| self.kinetic.energy(p - pf) + ef)
            .collect()
    }

    /// Matrix-free `H_P`.
    pub fn fiber(&self, p: Momentum) -> FiberOperator<'_> {
        FiberOperator { family: self, diag: self.diagonal(p) }
    }

    /// Explicit sparse `H_P`.
    pub fn assemble(&self, p: Momentum) -> SparseOperator {
        let diag = self.diagonal(p);
        let rows = (0..self.dim())
            .map(|r| {
                let mut row: Vec<(usize, f64)> = self.coupling.row(r).collect();
                row.push((r, diag[r]));
                row
            })
            .collect();
        SparseOperator::from_rows(self.dim(), rows).expect("fiber operator is symmetric")
    }

    /// Map a vector at `P` to the corresponding vector at `-P`.
    pub fn reflect_vector(&self, x: &[f64]) -> Option<Vec<f64>> {
        let perm = self.reflection.as_ref()?;
        let mut y = vec![0.0; x.len()];
        for (s, &t) in perm.iter().enumerate() {
            y[t] = x[s];
        }
        Some(y)
    }
}

/// Fiber Hamiltonian `H_P` as a matrix-free operator.
pub struct FiberOperator<'a> {
    family: &'a FiberFamily,
    diag: Vec<f64>,
}

impl LinearOperator for FiberOperator<'_> {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let c = &self.family.coupling;
        let diag = &self.diag;
        y.par_iter_mut()
            .with_min_len(1024)
            .enumerate()
            .for_each(|(r, yr)| *yr = diag[r] * x[r] + c.row_dot(r, x));
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(self.diag.clone())
    }
}

/// `H_P` for a model at one total momentum.
pub fn assemble_fiber(p: Momentum, spec: &ModelSpec, grid: &ModeGrid) -> Result<SparseOperator> {
    Ok(FiberFamily::from_grid(spec, grid, Kinetic::Quadratic)?.assemble(p))
}

/// Coupled comoving-frame operator `A(lambda)`, stored as per-momentum
/// diagonals, one shared phonon coupling and a dense potential matrix.
/// Vector layout: electron momentum index major, Fock index minor.
pub struct CoupledLlpOperator<'a> {
    family: &'a FiberFamily,
    diags: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    inv_l2: f64,
}

impl<'a> CoupledLlpOperator<'a> {
    /// `momenta` are the rescaled electron momenta `q_j`; the fibers are
    /// evaluated at `lambda * q_j`.
    pub fn new(lambda: f64, e0: f64, family: &'a FiberFamily, momenta: &[Momentum], w: Vec<Vec<f64>>) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(OperatorError::Domain(format!("lambda must be positive (got {lambda})")));
        }
        if w.len() != momenta.len() {
            return Err(OperatorError::Domain("potential matrix does not match the electron grid".into()));
        }
        let inv_l2 = 1.0 / (lambda * lambda);
        let diags = momenta
            .iter()
            .map(|&q| family.diagonal(q * lambda).into_iter().map(|d| (d - e0) * inv_l2).collect())
            .collect();
        Ok(CoupledLlpOperator { family, diags, w, inv_l2 })
    }

    pub fn block_count(&self) -> usize {
        self.diags.len()
    }

    pub fn to_sparse(&self) -> SparseOperator {
        let fd = self.family.dim();
        let nq = self.diags.len();
        let mut rows = Vec::with_capacity(nq * fd);
        for j in 0..nq {
            for s in 0..fd {
                let mut row: Vec<(usize, f64)> =
                    self.family.coupling.row(s).map(|(c, v)| (j * fd + c, v * self.inv_l2)).collect();
                row.push((j * fd + s, self.diags[j][s]));
                for (jp, &wv) in self.w[j].iter().enumerate() {
                    row.push((jp * fd + s, wv));
                }
                rows.push(row);
            }
        }
        SparseOperator::from_rows(nq * fd, rows).expect("coupled operator is symmetric")
    }
}

impl LinearOperator for CoupledLlpOperator<'_> {
    fn dim(&self) -> usize {
        self.diags.len() * self.family.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let fd = self.family.dim();
        let c = &self.family.coupling;
        y.par_chunks_mut(fd).enumerate().for_each(|(j, yj)| {
            let xj = &x[j * fd..(j + 1) * fd];
            let d = &self.diags[j];
            for s in 0..fd {
                yj[s] = d[s] * xj[s] + self.inv_l2 * c.row_dot(s, xj);
            }
            for (jp, &wv) in self.w[j].iter().enumerate() {
                if wv != 0.0 {
                    let xp = &x[jp * fd..(jp + 1) * fd];
                    for (ys, xs) in yj.iter_mut().zip(xp) {
                        *ys += wv * xs;
                    }
                }
            }
        });
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dim());
        for (j, d) in self.diags.iter().enumerate() {
            out.extend(d.iter().map(|v| v + self.w[j][j]));
        }
        Some(out)
    }
}

/// One-dimensional periodic lattice for the position-space oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeGrid {
    pub sites: usize,
    pub spacing: f64,
}

impl LatticeGrid {
    pub fn new(sites: usize, spacing: f64) -> Result<Self> {
        if sites < 3 || !(spacing > 0.0) {
            return Err(OperatorError::Domain("lattice needs at least 3 sites and positive spacing".into()));
        }
        Ok(LatticeGrid { sites, spacing })
    }

    pub fn length(&self) -> f64 {
        self.sites as f64 * self.spacing
    }

    pub fn positions(&self) -> Vec<f64> {
        let c = (self.sites / 2) as f64;
        (0..self.sites).map(|j| (j as f64 - c) * self.spacing).collect()
    }

    /// Allowed momenta `2 pi n / L`, `n = -floor(N/2) ..`, matching the
    /// position ordering.
    pub fn momenta(&self) -> Vec<f64> {
        let c = (self.sites / 2) as f64;
        let dp = 2.0 * PI / self.length();
        (0..self.sites).map(|n| (n as f64 - c) * dp).collect()
    }

    /// Whether `k` is a lattice momentum, i.e. `e^{ikx}` is periodic.
    pub fn accepts_momentum(&self, k: f64) -> bool {
        let r = k * self.length() / (2.0 * PI);
        (r - r.round()).abs() < 1e-9
    }
}

/// Position-space operator `T_lattice + H_f + sum_i v_i (e^{-i k_i x} a_i^+ + h.c.)
/// + lambda^2 V(lambda x)` on `lattice (x) Fock`, one dimension. The complex
/// Hermitian matrix `A + iB` is returned in real form `[[A, -B], [B, A]]`, so
/// every eigenvalue appears twice.
pub fn assemble_direct_tensor(
    lambda: f64,
    grid: &ModeGrid,
    v: &[f64],
    omega: &[f64],
    basis: &FockBasis,
    lattice: &LatticeGrid,
    pot: Option<&PotentialSpec>,
) -> Result<SparseOperator> {
    if grid.dimension != 1 {
        return Err(OperatorError::Domain("position-space oracle is one-dimensional".into()));
    }
    if let Some(md) = grid.modes.iter().find(|md| !lattice.accepts_momentum(md.k.x())) {
        return Err(OperatorError::Domain(format!(
            "mode k = {} is not a momentum of the periodic lattice of length {}",
            md.k.x(),
            lattice.length()
        )));
    }
    let fd = basis.dim();
    let ns = lattice.sites;
    let dim = ns * fd;
    if 2 * dim > DENSE_ASSEMBLY_LIMIT {
        return Err(OperatorError::Capacity { dim: 2 * dim, limit: DENSE_ASSEMBLY_LIMIT });
    }
    let h2 = lattice.spacing * lattice.spacing;
    let xs = lattice.positions();
    let mut trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut push_complex = |r: usize, c: usize, re: f64, im: f64| {
        // (A + iB) -> [[A, -B], [B, A]]
        if re != 0.0 {
            trip.push((r, c, re));
            trip.push((r + dim, c + dim, re));
        }
        if im != 0.0 {
            trip.push((r, c + dim, -im));
            trip.push((r + dim, c, im));
        }
    };
    for (j, &x) in xs.iter().enumerate() {
        let vx = pot.map_or(0.0, |p| lambda * lambda * p.value(Momentum::along_x(lambda * x)));
        let right = (j + 1) % ns;
        let left = (j + ns - 1) % ns;
        for s in 0..fd {
            let r = j * fd + s;
            let occ = basis.occupations(s);
            let ef: f64 = occ.iter().zip(omega).map(|(&o, w)| o as f64 * w).sum();
            push_complex(r, r, 2.0 / h2 + ef + vx, 0.0);
            push_complex(r, right * fd + s, -1.0 / h2, 0.0);
            push_complex(r, left * fd + s, -1.0 / h2, 0.0);
            let mut buf = occ.to_vec();
            for (i, md) in grid.modes.iter().enumerate() {
                if v[i] == 0.0 {
                    continue;
                }
                let phase = md.k.x() * x;
                // <s + e_i| v e^{-ikx} a^+ |s>
                if basis.total(s) < basis.n_max() {
                    buf[i] += 1;
                    let t = basis.index_of_occ(&buf).unwrap();
                    let a = v[i] * (buf[i] as f64).sqrt();
                    buf[i] -= 1;
                    push_complex(j * fd + t, r, a * phase.cos(), -a * phase.sin());
                }
                // <s - e_i| v e^{ikx} a |s>
                if occ[i] > 0 {
                    buf[i] -= 1;
                    let t = basis.index_of_occ(&buf).unwrap();
                    let a = v[i] * (occ[i] as f64).sqrt();
                    buf[i] += 1;
                    push_complex(j * fd + t, r, a * phase.cos(), a * phase.sin());
                }
            }
        }
    }
    Ok(SparseOperator::from_triplets(2 * dim, &trip)?)
}

/// Comoving-frame counterpart of [`assemble_direct_tensor`] on the same
/// lattice: electron momenta `p_n / lambda`, lattice kinetic band, and the
/// lattice-sampled potential. Its spectrum times `lambda^2` plus `e0`
/// reproduces the position-space spectrum.
pub fn lattice_llp_operator<'a>(
    lambda: f64,
    e0: f64,
    family: &'a FiberFamily,
    lattice: &LatticeGrid,
    pot: Option<&PotentialSpec>,
) -> Result<CoupledLlpOperator<'a>> {
    if family.kinetic != (Kinetic::Lattice { spacing: lattice.spacing }) {
        return Err(OperatorError::Domain("fiber family must use the lattice kinetic band".into()));
    }
    let qs: Vec<Momentum> = lattice.momenta().iter().map(|&p| Momentum::along_x(p / lambda)).collect();
    let w = match pot {
        Some(p) => {
            let xt: Vec<f64> = lattice.positions().iter().map(|&x| lambda * x).collect();
            potential_matrix(p, &qs, 1.0, &PotentialCoupling::Lattice { positions: xt }).w
        }
        None => vec![vec![0.0; qs.len()]; qs.len()],
    };
    CoupledLlpOperator::new(lambda, e0, family, &qs, w)
}

/// `|q|^2 / (2m) + V` on the electron momentum grid.
pub fn assemble_schrodinger(mass: f64, v: &PotentialSpec, egrid: &ElectronGrid) -> Result<SparseOperator> {
    if !(mass >= 0.5) {
        return Err(OperatorError::Domain(format!("mass must be at least 1/2 (got {mass})")));
    }
    let w = grid_potential_matrix(v, egrid).w;
    Ok(schrodinger_from_matrix(mass, &egrid.momenta, &w))
}

pub fn schrodinger_from_matrix(mass: f64, momenta: &[Momentum], w: &[Vec<f64>]) -> SparseOperator {
    let rows = (0..momenta.len())
        .map(|i| {
            let mut row: Vec<(usize, f64)> = w[i].iter().copied().enumerate().collect();
            row[i].1 += momenta[i].norm_sq() / (2.0 * mass);
            row
        })
        .collect();
    SparseOperator::from_rows(momenta.len(), rows).expect("symmetric by construction")
}

/// Coordinate-format dump of a coupled operator (small instances only).
pub fn dump_coo<W: Write>(op: &SparseOperator, out: W) -> Result<()> {
    op.write_coo(out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolve::{dense_ground, dense_spectrum};
    use crate::model::{Coupling, Dispersion, Mode};

    fn toy_grid(ks: &[f64]) -> ModeGrid {
        ModeGrid::from_modes(1, ks.iter().map(|&k| Mode { k: Momentum::along_x(k), weight: 1.0 }).collect()).unwrap()
    }

    fn family(ks: &[f64], v: f64, n_max: usize, kinetic: Kinetic) -> FiberFamily {
        let grid = toy_grid(ks);
        let basis = FockBasis::enumerate(ks.len(), n_max).unwrap();
        FiberFamily::from_parts(&grid, &vec![v; ks.len()], &vec![1.0; ks.len()], basis, kinetic).unwrap()
    }

    #[test]
    fn one_mode_fiber_closed_form() {
        let f = family(&[1.0], 0.2, 1, Kinetic::Quadratic);
        let h = f.assemble(Momentum::ZERO);
        assert_eq!(h.to_dense(), vec![vec![0.0, 0.2], vec![0.2, 2.0]]);
        let e = dense_ground(&h).unwrap().ground();
        assert!((e - (1.0 - 1.04f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn zero_coupling_fiber_is_diagonal() {
        let f = family(&[1.0], 0.0, 1, Kinetic::Quadratic);
        let h = f.assemble(Momentum::along_x(0.3));
        assert_eq!(h.nnz(), 2);
        assert!((h.get(0, 0) - 0.09).abs() < 1e-15);
        assert!((h.get(1, 1) - 1.49).abs() < 1e-15);
    }

    #[test]
    fn fiber_from_model() {
        let spec = ModelSpec {
            dimension: 1,
            dispersion: Dispersion::Constant { omega0: 1.0 },
            coupling: Coupling::Constant { g: 0.2 },
            mode_spacing: 1.0,
            uv_cutoff: 2.0,
            ir_cutoff: 0.5,
            n_max: 2,
        };
        let grid = build_mode_grid(&spec).unwrap();
        let h = assemble_fiber(Momentum::ZERO, &spec, &grid).unwrap();
        assert_eq!(h.to_dense().len(), 15);
        h.check_symmetric().unwrap();
    }

    #[test]
    fn parity_of_fiber_spectra() {
        let f = family(&[-2.0, -1.0, 1.0, 2.0], 0.3, 2, Kinetic::Quadratic);
        for p in [0.2, 0.7] {
            let a = dense_spectrum(&f.assemble(Momentum::along_x(p))).unwrap();
            let b = dense_spectrum(&f.assemble(Momentum::along_x(-p))).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matrix_free_fiber_matches_sparse() {
        let f = family(&[-1.0, 1.0, 2.0], 0.25, 3, Kinetic::Quadratic);
        let p = Momentum::along_x(0.4);
        let dense = f.assemble(p);
        let op = f.fiber(p);
        let x: Vec<f64> = (0..f.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let (mut y1, mut y2) = (vec![0.0; f.dim()], vec![0.0; f.dim()]);
        op.apply(&x, &mut y1);
        dense.apply(&x, &mut y2);
        for (u, v) in y1.iter().zip(&y2) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn coupled_operator_to_sparse_matches_apply() {
        let f = family(&[-1.0, 1.0], 0.2, 2, Kinetic::Quadratic);
        let eg = ElectronGrid::new(1, 0.5, 1.5).unwrap();
        let w = grid_potential_matrix(&PotentialSpec::poschl_teller(2.0), &eg).w;
        let a = CoupledLlpOperator::new(0.3, -0.02, &f, &eg.momenta, w).unwrap();
        let sp = a.to_sparse();
        let x: Vec<f64> = (0..a.dim()).map(|i| (i as f64 * 0.91).cos()).collect();
        let (mut y1, mut y2) = (vec![0.0; a.dim()], vec![0.0; a.dim()]);
        a.apply(&x, &mut y1);
        sp.apply(&x, &mut y2);
        for (u, v) in y1.iter().zip(&y2) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn coupled_operator_without_potential_bottoms_at_zero() {
        let f = family(&[-1.0, 1.0], 0.2, 2, Kinetic::Quadratic);
        let e0 = dense_ground(&f.assemble(Momentum::ZERO)).unwrap().ground();
        let eg = ElectronGrid::new(1, 0.5, 2.0).unwrap();
        let zero = vec![vec![0.0; eg.len()]; eg.len()];
        let a = CoupledLlpOperator::new(0.2, e0, &f, &eg.momenta, zero).unwrap();
        assert!(dense_ground(&a).unwrap().ground().abs() < 1e-12);
        assert!(CoupledLlpOperator::new(0.0, e0, &f, &eg.momenta, vec![]).is_err());
    }

    #[test]
    fn free_direct_tensor_spectrum() {
        let lat = LatticeGrid::new(4, 2.0 * PI / 4.0).unwrap();
        let grid = toy_grid(&[1.0]);
        let basis = FockBasis::enumerate(1, 1).unwrap();
        let op = assemble_direct_tensor(1.0, &grid, &[0.0], &[1.0], &basis, &lat, None).unwrap();
        let spec = dense_spectrum(&op).unwrap();
        let mut want = Vec::new();
        for p in lat.momenta() {
            let eps = Kinetic::Lattice { spacing: lat.spacing }.energy(Momentum::along_x(p));
            for ef in [0.0, 1.0] {
                // each level doubled by the real form
                want.push(eps + ef);
                want.push(eps + ef);
            }
        }
        want.sort_by(f64::total_cmp);
        for (a, b) in spec.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn frame_equivalence_small_instance() {
        // 5 sites of spacing 2 pi / 5 admit integer mode momenta
        let lat = LatticeGrid::new(5, 2.0 * PI / 5.0).unwrap();
        let ks = [-1.0, 1.0];
        let grid = toy_grid(&ks);
        let v = [0.3, 0.3];
        let omega = [1.0, 1.0];
        let basis = FockBasis::enumerate(2, 2).unwrap();
        let pot = PotentialSpec::poschl_teller(2.0);
        let lambda = 0.7;
        let direct = assemble_direct_tensor(lambda, &grid, &v, &omega, &basis, &lat, Some(&pot)).unwrap();
        let ds = dense_spectrum(&direct).unwrap();
        let fam = FiberFamily::from_parts(&grid, &v, &omega, basis, Kinetic::Lattice { spacing: lat.spacing }).unwrap();
        let e0 = -0.1;
        let a = lattice_llp_operator(lambda, e0, &fam, &lat, Some(&pot)).unwrap();
        let ls: Vec<f64> = dense_spectrum(&a)
            .unwrap()
            .iter()
            .flat_map(|&e| {
                let x = e * lambda * lambda + e0;
                [x, x]
            })
            .collect();
        assert_eq!(ls.len(), ds.len());
        for (x, y) in ls.iter().zip(&ds) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn schrodinger_basics() {
        let eg = ElectronGrid::new(1, 0.25, 8.0).unwrap();
        let pt = PotentialSpec::poschl_teller(2.0);
        let h = assemble_schrodinger(0.5, &pt, &eg).unwrap();
        let e = dense_ground(&h).unwrap().ground();
        assert!((e + 1.0).abs() < 1e-3, "{e}");
        assert!(assemble_schrodinger(0.4, &pt, &eg).is_err());
        let tail = grid_potential_matrix(&pt, &eg).tail_mass;
        assert!(tail < 1e-3);
    }

    #[test]
    fn electron_grid_reflection() {
        let eg = ElectronGrid::new(2, 0.5, 1.0).unwrap();
        assert_eq!(eg.len(), 25);
        for j in 0..eg.len() {
            assert_eq!(eg.momenta[eg.reflect(j)], -eg.momenta[j]);
        }
        assert_eq!(eg.refined().len(), 81);
    }
}
