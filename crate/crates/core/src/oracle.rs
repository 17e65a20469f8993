//! Independent cross-checks: comoving frame against the position-space
//! tensor product, Lanczos against dense diagonalization, and the
//! particle-only operator against closed forms.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eigensolve::{dense_ground, dense_spectrum, ground_state, SolverOptions};
use crate::fock::FockBasis;
use crate::model::{Mode, ModeGrid, Momentum, PotentialKind, PotentialSpec};
use crate::operators::{
    assemble_direct_tensor, lattice_llp_operator, schrodinger_from_matrix, CoupledLlpOperator, ElectronGrid, FiberFamily,
    Kinetic, LatticeGrid,
};
use crate::pipeline::{PipelineError, Result, Setup};
use crate::staticmass::{schrodinger_energy, SchrodingerGrid};

/// Agreement required by the frame and Lanczos suites.
pub const ORACLE_TOL: f64 = 1e-8;
/// Masses at which the particle energy must decrease strictly.
pub const MONOTONE_MASSES: [f64; 4] = [0.5, 0.75, 1.0, 1.5];

#[derive(Clone, Debug, PartialEq)]
pub struct OracleCase {
    pub suite: &'static str,
    pub instance: usize,
    pub dim: usize,
    pub reference: f64,
    pub candidate: f64,
    /// Quantity compared against `tol` (absolute or relative, per suite).
    pub deviation: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleStage {
    pub cases: Vec<OracleCase>,
}

impl OracleStage {
    pub fn pass(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(|c| c.pass)
    }

    pub fn suite(&self, name: &str) -> impl Iterator<Item = &OracleCase> {
        let name = name.to_string();
        self.cases.iter().filter(move |c| c.suite == name)
    }
}

fn fail(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError::Solver { stage, message: e.to_string() }
}

fn case(suite: &'static str, instance: usize, dim: usize, reference: f64, candidate: f64, deviation: f64, tol: f64) -> OracleCase {
    OracleCase { suite, instance, dim, reference, candidate, deviation, tol, pass: deviation <= tol }
}

/// Potential used where a one-dimensional instance is needed.
fn one_dimensional(p: &PotentialSpec) -> PotentialSpec {
    if p.dimension == 1 {
        p.clone()
    } else {
        match p.kind {
            PotentialKind::GaussianWell { depth, width } => PotentialSpec::gaussian_well(depth, width, 1),
            _ => PotentialSpec::poschl_teller(2.0),
        }
    }
}

fn toy_modes(ks: &[f64]) -> ModeGrid {
    ModeGrid::from_modes(1, ks.iter().map(|&k| Mode { k: Momentum::along_x(k), weight: 1.0 }).collect())
        .expect("one-dimensional modes")
}

/// Random one-dimensional fiber data: mode momenta from `choices`, couplings
/// and frequencies drawn uniformly.
fn random_fiber(rng: &mut ChaCha8Rng, choices: &[f64], modes: usize, n_max: usize, kinetic: Kinetic) -> (ModeGrid, Vec<f64>, Vec<f64>, FiberFamily) {
    let mut pool = choices.to_vec();
    let mut ks = Vec::with_capacity(modes);
    for _ in 0..modes.min(pool.len()) {
        ks.push(pool.swap_remove(rng.gen_range(0..pool.len())));
    }
    ks.sort_by(f64::total_cmp);
    let grid = toy_modes(&ks);
    let v: Vec<f64> = ks.iter().map(|_| rng.gen_range(0.05..0.5)).collect();
    let omega: Vec<f64> = ks.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
    let basis = FockBasis::enumerate(ks.len(), n_max).expect("small basis");
    let fam = FiberFamily::from_parts(&grid, &v, &omega, basis, kinetic).expect("consistent parts");
    (grid, v, omega, fam)
}

/// Full sorted spectra of the position-space operator and of the comoving
/// operator on the same periodic lattice.
fn frame_suite(rng: &mut ChaCha8Rng, pot: &PotentialSpec, max_dim: usize, out: &mut Vec<OracleCase>) -> Result<()> {
    let mut instance = 0;
    let mut attempts = 0;
    while instance < 6 && attempts < 200 {
        attempts += 1;
        let sites = rng.gen_range(3..=7usize);
        // lattice of length 2 pi admits every integer mode momentum
        let lat = LatticeGrid::new(sites, 2.0 * PI / sites as f64).map_err(|e| fail("oracle frame")(&e))?;
        let modes = rng.gen_range(1..=3usize);
        let n_max = rng.gen_range(1..=2usize);
        let (grid, v, omega, fam) = random_fiber(rng, &[-2.0, -1.0, 0.0, 1.0, 2.0], modes, n_max, Kinetic::Lattice { spacing: lat.spacing });
        let dim = 2 * sites * fam.dim();
        if dim > max_dim {
            continue;
        }
        let lambda = rng.gen_range(0.3..1.0);
        let direct = assemble_direct_tensor(lambda, &grid, &v, &omega, &fam.basis, &lat, Some(pot))
            .map_err(|e| fail("oracle frame")(&e))?;
        let ds = dense_spectrum(&direct).map_err(|e| fail("oracle frame")(&e))?;
        let e0 = dense_ground(&fam.assemble(Momentum::ZERO)).map_err(|e| fail("oracle frame")(&e))?.ground();
        let a = lattice_llp_operator(lambda, e0, &fam, &lat, Some(pot)).map_err(|e| fail("oracle frame")(&e))?;
        let ls: Vec<f64> = dense_spectrum(&a)
            .map_err(|e| fail("oracle frame")(&e))?
            .iter()
            .flat_map(|&x| {
                let y = x * lambda * lambda + e0;
                [y, y]
            })
            .collect();
        let dev = if ls.len() == ds.len() {
            ls.iter().zip(&ds).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        out.push(case("frame", instance, dim, ds[0], ls[0], dev, ORACLE_TOL));
        instance += 1;
    }
    Ok(())
}

/// Ground energies from Lanczos against dense diagonalization, alternating
/// fiber operators and small coupled operators.
fn lanczos_suite(rng: &mut ChaCha8Rng, pot: &PotentialSpec, opts: &SolverOptions, count: usize, out: &mut Vec<OracleCase>) -> Result<()> {
    let choices: Vec<f64> = (-6..=6).map(|i| 0.5 * i as f64).collect();
    for instance in 0..count {
        let (dim, reference, candidate) = if instance % 2 == 0 {
            let modes = rng.gen_range(4..=8usize);
            let n_max = rng.gen_range(2..=3usize);
            let (_, _, _, fam) = random_fiber(rng, &choices, modes, n_max, Kinetic::Quadratic);
            let p = Momentum::along_x(rng.gen_range(-1.0..1.0));
            let h = fam.assemble(p);
            let d = dense_ground(&h).map_err(|e| fail("oracle lanczos")(&e))?.ground();
            let l = ground_state(&fam.fiber(p), opts).map_err(|e| fail("oracle lanczos")(&e))?.ground();
            (fam.dim(), d, l)
        } else {
            let modes = rng.gen_range(2..=4usize);
            let (_, _, _, fam) = random_fiber(rng, &choices, modes, 2, Kinetic::Quadratic);
            let egrid = ElectronGrid::new(1, 0.5, rng.gen_range(1.5..3.0)).map_err(|e| fail("oracle lanczos")(&e))?;
            let w = SchrodingerGrid::new(pot, &egrid).w;
            let e0 = dense_ground(&fam.assemble(Momentum::ZERO)).map_err(|e| fail("oracle lanczos")(&e))?.ground();
            let lambda = rng.gen_range(0.2..0.8);
            let a = CoupledLlpOperator::new(lambda, e0, &fam, &egrid.momenta, w).map_err(|e| fail("oracle lanczos")(&e))?;
            let d = dense_ground(&a.to_sparse()).map_err(|e| fail("oracle lanczos")(&e))?.ground();
            let l = ground_state(&a, opts).map_err(|e| fail("oracle lanczos")(&e))?.ground();
            (fam.dim() * egrid.len(), d, l)
        };
        out.push(case("lanczos", instance, dim, reference, candidate, (reference - candidate).abs(), ORACLE_TOL));
    }
    Ok(())
}

/// Particle-only checks: the Poschl-Teller ground `-1` at mass 1/2 after one
/// refinement, strict monotonicity in the mass, and the scaling identity
/// `infspec(p^2/2m + s^2 V(s x)) = s^2 E(m)`.
fn particle_suite(pot: &PotentialSpec, egrid: &ElectronGrid, opts: &SolverOptions, out: &mut Vec<OracleCase>) -> Result<()> {
    let pt = PotentialSpec::poschl_teller(2.0);
    let pt_grid = ElectronGrid::new(1, egrid.spacing, egrid.q_max().max(8.0)).map_err(|e| fail("oracle particle")(&e))?;
    let r = schrodinger_energy(0.5, &pt, &pt_grid, opts).map_err(|e| fail("oracle particle")(&e))?;
    out.push(case("poschl_teller", 0, pt_grid.refined().len(), -1.0, r.richardson, (r.richardson + 1.0).abs(), 1e-4));

    let grid = SchrodingerGrid::new(pot, egrid);
    let energies: Vec<f64> = MONOTONE_MASSES
        .iter()
        .map(|&m| grid.ground(m, opts))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| fail("oracle particle")(&e))?;
    for (i, pair) in energies.windows(2).enumerate() {
        // deviation > 0 exactly when the energy fails to drop
        out.push(case("monotone", i, egrid.len(), pair[0], pair[1], pair[1] - pair[0], -f64::MIN_POSITIVE));
    }

    let s = 0.3;
    let scaled_grid = ElectronGrid::new(egrid.dimension, s * egrid.spacing, s * egrid.q_max()).map_err(|e| fail("oracle particle")(&e))?;
    for (i, &m) in [0.5, 1.0].iter().enumerate() {
        let base = grid.ground(m, opts).map_err(|e| fail("oracle particle")(&e))?;
        let scaled = SchrodingerGrid::new(&pot.scaled(s), &scaled_grid);
        let h = schrodinger_from_matrix(m, &scaled.momenta, &scaled.w);
        let e = dense_ground(&h).map_err(|e| fail("oracle particle")(&e))?.ground();
        let want = s * s * base;
        out.push(case("scaling", i, egrid.len(), want, e, ((e - want) / want).abs(), 1e-8));
    }
    Ok(())
}

pub fn run_oracles(setup: &Setup) -> Result<OracleStage> {
    let cfg = &setup.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.solver.seed);
    let pot1 = one_dimensional(&setup.potential);
    let mut cases = Vec::new();
    frame_suite(&mut rng, &pot1, cfg.run.oracle.max_dim, &mut cases)?;
    lanczos_suite(&mut rng, &pot1, &setup.opts, cfg.run.oracle.instances, &mut cases)?;
    particle_suite(&setup.potential, &setup.egrid, &setup.opts, &mut cases)?;
    Ok(OracleStage { cases })
}
