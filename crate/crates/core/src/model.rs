//! Physical model: phonon dispersion, particle-field coupling, the external
//! potential and the trial-function family, together with the discretization
//! of mode integrals into finite mode sums.
//!
//! Units: `hbar = 1` and the bare particle mass is fixed at `1/2`, so the bare
//! kinetic energy is `p^2`.
//!
//! Fourier convention used everywhere in the crate:
//!
//! ```text
//! V^(q) = (2 pi)^(-d/2) \int V(x) e^{-i q x} dx
//! ```

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use thiserror::Error;

/// Bare particle mass. Kinetic energy is `p^2 / (2 * PARTICLE_MASS) = p^2`.
pub const PARTICLE_MASS: f64 = 0.5;

/// Prefactor `c` in the Froehlich coupling `v(k) = c * sqrt(alpha) / |k|`.
pub const FROEHLICH_PREFACTOR: f64 = 1.0 / (std::f64::consts::SQRT_2 * PI);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("coupling is singular at retained mode k = {k:?}; use a positive ir_cutoff")]
    SingularCoupling { k: [f64; 3] },
}

type Result<T> = std::result::Result<T, ModelError>;

/// Momentum (or position) vector in up to three dimensions. Unused trailing
/// components are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Momentum(pub [f64; 3]);

impl Momentum {
    pub const ZERO: Momentum = Momentum([0.0; 3]);

    pub fn new(c: &[f64]) -> Self {
        let mut v = [0.0; 3];
        v[..c.len()].copy_from_slice(c);
        Momentum(v)
    }

    /// `p` times the first unit vector.
    pub fn along_x(p: f64) -> Self {
        Momentum([p, 0.0, 0.0])
    }

    pub fn dot(&self, other: &Momentum) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }
}

impl Add for Momentum {
    type Output = Momentum;
    fn add(self, o: Momentum) -> Momentum {
        Momentum([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Momentum {
    type Output = Momentum;
    fn sub(self, o: Momentum) -> Momentum {
        Momentum([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for Momentum {
    type Output = Momentum;
    fn neg(self) -> Momentum {
        Momentum([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl Mul<f64> for Momentum {
    type Output = Momentum;
    fn mul(self, s: f64) -> Momentum {
        Momentum([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

/// Phonon dispersion `omega(k)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Dispersion {
    Constant { omega0: f64 },
    /// Radial table of `(|k|, omega)` pairs, sorted by `|k|`, linearly
    /// interpolated and clamped at both ends.
    Tabulated { samples: Vec<(f64, f64)> },
}

impl Dispersion {
    pub fn omega(&self, k: Momentum) -> f64 {
        match self {
            Dispersion::Constant { omega0 } => *omega0,
            Dispersion::Tabulated { samples } => {
                let r = k.norm();
                let first = samples[0];
                let last = samples[samples.len() - 1];
                if r <= first.0 {
                    return first.1;
                }
                if r >= last.0 {
                    return last.1;
                }
                let hi = samples.partition_point(|s| s.0 <= r);
                let (k0, w0) = samples[hi - 1];
                let (k1, w1) = samples[hi];
                w0 + (w1 - w0) * (r - k0) / (k1 - k0)
            }
        }
    }
}

/// Coupling family `v(k)`. All shipped families are real and even in `k`.
#[derive(Clone, Debug, PartialEq)]
pub enum Coupling {
    Zero,
    Constant { g: f64 },
    /// `v(k) = g |k|^{-s}`
    PowerLaw { g: f64, s: f64 },
    /// `v(k) = FROEHLICH_PREFACTOR * sqrt(alpha) / |k|`, three dimensions only.
    Froehlich { alpha: f64 },
}

impl Coupling {
    fn is_singular_at_origin(&self) -> bool {
        match self {
            Coupling::PowerLaw { s, .. } => *s > 0.0,
            Coupling::Froehlich { .. } => true,
            _ => false,
        }
    }

    /// Continuum coupling function `v(k)`; `None` where it is singular.
    pub fn value(&self, k: Momentum) -> Option<f64> {
        let r = k.norm();
        match self {
            Coupling::Zero => Some(0.0),
            Coupling::Constant { g } => Some(*g),
            Coupling::PowerLaw { g, s } => {
                if *s == 0.0 {
                    Some(*g)
                } else if r == 0.0 {
                    None
                } else {
                    Some(g * r.powf(-s))
                }
            }
            Coupling::Froehlich { alpha } => {
                if r == 0.0 {
                    None
                } else {
                    Some(FROEHLICH_PREFACTOR * alpha.sqrt() / r)
                }
            }
        }
    }
}

/// Full description of the particle-field model and its discretization.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub dimension: usize,
    pub dispersion: Dispersion,
    pub coupling: Coupling,
    /// Mode lattice spacing `dk`.
    pub mode_spacing: f64,
    pub uv_cutoff: f64,
    pub ir_cutoff: f64,
    /// Cap on the total phonon number.
    pub n_max: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dimension) {
            return Err(ModelError::Config(format!(
                "dimension must be 1, 2 or 3 (got {})",
                self.dimension
            )));
        }
        match &self.dispersion {
            Dispersion::Constant { omega0 } => {
                if !(*omega0 > 0.0 && omega0.is_finite()) {
                    return Err(ModelError::Config(format!(
                        "omega0 must be positive (got {omega0})"
                    )));
                }
            }
            Dispersion::Tabulated { samples } => {
                if samples.is_empty() {
                    return Err(ModelError::Config("tabulated dispersion is empty".into()));
                }
                if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(ModelError::Config(
                        "tabulated dispersion must be strictly increasing in |k|".into(),
                    ));
                }
                if samples.iter().any(|s| !(s.1 > 0.0) || s.0 < 0.0) {
                    return Err(ModelError::Config(
                        "tabulated dispersion needs |k| >= 0 and omega > 0".into(),
                    ));
                }
            }
        }
        match &self.coupling {
            Coupling::Froehlich { alpha } => {
                if self.dimension != 3 {
                    return Err(ModelError::Config(format!(
                        "Froehlich coupling requires dimension 3 (got {})",
                        self.dimension
                    )));
                }
                if !(*alpha >= 0.0) {
                    return Err(ModelError::Config("alpha must be non-negative".into()));
                }
            }
            Coupling::PowerLaw { g, s } => {
                if !g.is_finite() || !(*s >= 0.0) {
                    return Err(ModelError::Config(
                        "power-law coupling needs finite g and s >= 0".into(),
                    ));
                }
            }
            Coupling::Constant { g } => {
                if !g.is_finite() {
                    return Err(ModelError::Config("coupling g must be finite".into()));
                }
            }
            Coupling::Zero => {}
        }
        if !(self.mode_spacing > 0.0) {
            return Err(ModelError::Config("mode spacing dk must be positive".into()));
        }
        if !(self.ir_cutoff >= 0.0) || !(self.uv_cutoff > self.ir_cutoff) {
            return Err(ModelError::Config(format!(
                "need uv_cutoff > ir_cutoff >= 0 (got uv {}, ir {})",
                self.uv_cutoff, self.ir_cutoff
            )));
        }
        if self.coupling.is_singular_at_origin() && self.ir_cutoff < 0.5 * self.mode_spacing {
            return Err(ModelError::Config(format!(
                "singular coupling requires ir_cutoff >= dk/2 = {} (got {})",
                0.5 * self.mode_spacing,
                self.ir_cutoff
            )));
        }
        Ok(())
    }

    pub fn omega(&self, k: Momentum) -> f64 {
        self.dispersion.omega(k)
    }
}

/// A single discretized mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub k: Momentum,
    pub weight: f64,
}

/// Finite set of field modes with midpoint quadrature weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeGrid {
    pub dimension: usize,
    pub modes: Vec<Mode>,
}

impl ModeGrid {
    /// Hand-built grid. Symmetry under `k -> -k` is not enforced here; see
    /// [`ModeGrid::is_symmetric`].
    pub fn from_modes(dimension: usize, modes: Vec<Mode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(ModelError::Config("mode grid is empty".into()));
        }
        if modes.iter().any(|m| !(m.weight > 0.0)) {
            return Err(ModelError::Config("mode weights must be positive".into()));
        }
        Ok(ModeGrid { dimension, modes })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Index of the mode at `-k_i` for every `i`, if the grid is symmetric.
    pub fn reflection(&self) -> Option<Vec<usize>> {
        self.modes
            .iter()
            .map(|m| {
                self.modes
                    .iter()
                    .position(|o| o.k == -m.k && o.weight == m.weight)
            })
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.reflection().is_some()
    }
}

/// All lattice points `k = dk * n` with `ir_cutoff <= |k| <= uv_cutoff`,
/// ordered lexicographically in `n`, each with weight `dk^d`.
pub fn build_mode_grid(spec: &ModelSpec) -> Result<ModeGrid> {
    spec.validate()?;
    let d = spec.dimension;
    let dk = spec.mode_spacing;
    let nmax = (spec.uv_cutoff / dk + 1e-9).floor() as i64;
    let weight = dk.powi(d as i32);
    let slack = 1e-12 * spec.uv_cutoff.max(1.0);
    let mut modes = Vec::new();
    let span = |active: bool| if active { -nmax..=nmax } else { 0..=0 };
    for n0 in span(true) {
        for n1 in span(d >= 2) {
            for n2 in span(d >= 3) {
                let k = Momentum([n0 as f64 * dk, n1 as f64 * dk, n2 as f64 * dk]);
                let r = k.norm();
                if r + slack >= spec.ir_cutoff && r <= spec.uv_cutoff + slack {
                    modes.push(Mode { k, weight });
                }
            }
        }
    }
    if modes.is_empty() {
        return Err(ModelError::Config(format!(
            "no modes with {} <= |k| <= {} on a lattice of spacing {}",
            spec.ir_cutoff, spec.uv_cutoff, dk
        )));
    }
    Ok(ModeGrid { dimension: d, modes })
}

/// Quadrature amplitudes `v_i = v(k_i) * sqrt(w_i)`.
pub fn effective_couplings(spec: &ModelSpec, grid: &ModeGrid) -> Result<Vec<Complex64>> {
    grid.modes
        .iter()
        .map(|m| {
            let v = spec
                .coupling
                .value(m.k)
                .ok_or(ModelError::SingularCoupling { k: m.k.0 })?;
            Ok(Complex64::new(v * m.weight.sqrt(), 0.0))
        })
        .collect()
}

/// Shape of the external potential. Every family is non-positive.
#[derive(Clone, Debug, PartialEq)]
pub enum PotentialKind {
    /// `V(x) = -V0 exp(-|x|^2 / (2 sigma^2))`, any dimension.
    GaussianWell { depth: f64, width: f64 },
    /// `V(x) = -V0 sech^2(x)`, one dimension.
    PoschlTeller { depth: f64 },
    /// `V(x) = -(V0/2) [tanh((x+a)/w) - tanh((x-a)/w)]`, one dimension.
    SoftStep { depth: f64, width: f64, half_width: f64 },
}

/// External potential with closed-form Fourier transform. `scale = s`
/// represents `s^2 V(s x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub dimension: usize,
    pub scale: f64,
}

impl PotentialSpec {
    pub fn new(kind: PotentialKind, dimension: usize) -> Result<Self> {
        let p = PotentialSpec { kind, dimension, scale: 1.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn poschl_teller(depth: f64) -> Self {
        PotentialSpec { kind: PotentialKind::PoschlTeller { depth }, dimension: 1, scale: 1.0 }
    }

    pub fn gaussian_well(depth: f64, width: f64, dimension: usize) -> Self {
        PotentialSpec { kind: PotentialKind::GaussianWell { depth, width }, dimension, scale: 1.0 }
    }

    /// The potential `s^2 V(s x)`.
    pub fn scaled(&self, s: f64) -> Self {
        PotentialSpec { scale: self.scale * s, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let one_d = |name: &str| {
            if self.dimension != 1 {
                Err(ModelError::Config(format!("{name} potential is one-dimensional")))
            } else {
                Ok(())
            }
        };
        match self.kind {
            PotentialKind::GaussianWell { depth, width } => {
                if !(depth > 0.0 && width > 0.0) {
                    return Err(ModelError::Config(
                        "gaussian well needs depth > 0 and width > 0".into(),
                    ));
                }
            }
            PotentialKind::PoschlTeller { depth } => {
                one_d("Poschl-Teller")?;
                if !(depth > 0.0) {
                    return Err(ModelError::Config("Poschl-Teller depth must be positive".into()));
                }
            }
            PotentialKind::SoftStep { depth, width, half_width } => {
                one_d("soft-step")?;
                if !(depth > 0.0 && width > 0.0 && half_width > 0.0) {
                    return Err(ModelError::Config(
                        "soft step needs positive depth, width and half_width".into(),
                    ));
                }
            }
        }
        if !(1..=3).contains(&self.dimension) || !(self.scale > 0.0) {
            return Err(ModelError::Config("invalid potential dimension or scale".into()));
        }
        Ok(())
    }

    fn unscaled_value(&self, x: Momentum) -> f64 {
        match self.kind {
            PotentialKind::GaussianWell { depth, width } => {
                -depth * (-x.norm_sq() / (2.0 * width * width)).exp()
            }
            PotentialKind::PoschlTeller { depth } => {
                let c = x.x().cosh();
                -depth / (c * c)
            }
            PotentialKind::SoftStep { depth, width, half_width } => {
                let t = x.x();
                -0.5 * depth * (((t + half_width) / width).tanh() - ((t - half_width) / width).tanh())
            }
        }
    }

    fn unscaled_fourier(&self, q: Momentum) -> f64 {
        match self.kind {
            PotentialKind::GaussianWell { depth, width } => {
                -depth * width.powi(self.dimension as i32) * (-0.5 * width * width * q.norm_sq()).exp()
            }
            PotentialKind::PoschlTeller { depth } => {
                // \int sech^2(x) e^{-iqx} dx = pi q / sinh(pi q / 2)
                let a = 0.5 * PI * q.x();
                let ratio = if a.abs() < 1e-8 { 1.0 - a * a / 6.0 } else { a / a.sinh() };
                -depth * 2.0 * ratio / (2.0 * PI).sqrt()
            }
            PotentialKind::SoftStep { depth, width, half_width } => {
                // box(a) * sech^2(./w)/w convolution
                let q = q.x();
                let b = 0.5 * PI * q * width;
                let (num, den) = if q.abs() < 1e-8 {
                    (half_width, 0.5 * PI * width)
                } else {
                    ((q * half_width).sin() / q, b.sinh() / q)
                };
                -depth * width * (0.5 * PI).sqrt() * num / den
            }
        }
    }

    /// `V(x)`.
    pub fn value(&self, x: Momentum) -> f64 {
        let s = self.scale;
        s * s * self.unscaled_value(x * s)
    }

    pub fn values(&self, xs: &[Momentum]) -> Vec<f64> {
        xs.iter().map(|&x| self.value(x)).collect()
    }

    /// `V^(q)` in the crate-wide convention. Real and even for all families.
    pub fn fourier(&self, q: Momentum) -> f64 {
        let s = self.scale;
        s.powi(2 - self.dimension as i32) * self.unscaled_fourier(q * (1.0 / s))
    }

    /// `sup |V|`.
    pub fn sup_norm(&self) -> f64 {
        let s2 = self.scale * self.scale;
        let v = match self.kind {
            PotentialKind::GaussianWell { depth, .. } => depth,
            PotentialKind::PoschlTeller { depth } => depth,
            PotentialKind::SoftStep { depth, width, half_width } => depth * (half_width / width).tanh(),
        };
        s2 * v
    }

    /// All shipped families satisfy `V <= 0`, so the positive part vanishes.
    pub fn is_nonpositive(&self) -> bool {
        true
    }

    /// `\int |V^(q)| dq`. Closed form for sign-definite transforms, where it
    /// equals `(2 pi)^{d/2} |V(0)|`; quadrature for the soft step.
    pub fn fourier_l1_norm(&self) -> f64 {
        match self.kind {
            PotentialKind::GaussianWell { .. } | PotentialKind::PoschlTeller { .. } => {
                (2.0 * PI).powf(0.5 * self.dimension as f64) * self.value(Momentum::ZERO).abs()
            }
            PotentialKind::SoftStep { width, .. } => {
                let decay = 0.5 * PI * width / self.scale;
                let q_end = 60.0 / decay;
                let n = 200_000;
                let h = q_end / n as f64;
                let mut sum = 0.0;
                for i in 0..=n {
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    sum += w * self.fourier(Momentum::along_x(i as f64 * h)).abs();
                }
                2.0 * sum * h
            }
        }
    }
}

/// Trial-function family with compact Fourier support.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrialFunctionSpec {
    /// `f^(P) ~ (1 - (|P|/R)^2)^2` for `|P| < R`.
    FourierBump { radius: f64 },
    /// `f^(P) ~ exp(-|P|^2 / (2 sigma^2))` for `|P| < R`.
    TruncatedGaussian { sigma: f64, radius: f64 },
}

impl TrialFunctionSpec {
    pub fn radius(&self) -> f64 {
        match *self {
            TrialFunctionSpec::FourierBump { radius } => radius,
            TrialFunctionSpec::TruncatedGaussian { radius, .. } => radius,
        }
    }

    pub fn with_radius(&self, radius: f64) -> Self {
        match *self {
            TrialFunctionSpec::FourierBump { .. } => TrialFunctionSpec::FourierBump { radius },
            TrialFunctionSpec::TruncatedGaussian { sigma, .. } => {
                TrialFunctionSpec::TruncatedGaussian { sigma, radius }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TrialFunctionSpec::FourierBump { radius } => radius > 0.0,
            TrialFunctionSpec::TruncatedGaussian { sigma, radius } => sigma > 0.0 && radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::Config("trial function parameters must be positive".into()))
        }
    }

    /// Unnormalized `f^(P)`; exactly zero for `|P| >= R`.
    pub fn amplitude(&self, p: Momentum) -> f64 {
        let r = p.norm();
        let radius = self.radius();
        if r >= radius {
            return 0.0;
        }
        match *self {
            TrialFunctionSpec::FourierBump { radius } => {
                let u = 1.0 - (r / radius).powi(2);
                u * u
            }
            TrialFunctionSpec::TruncatedGaussian { sigma, .. } => (-0.5 * (r / sigma).powi(2)).exp(),
        }
    }

    /// Samples of `f^` on `nodes`, normalized so that
    /// `sum_j |f^(P_j)|^2 * cell_volume = 1`.
    pub fn normalized_samples(&self, nodes: &[Momentum], cell_volume: f64) -> Result<Vec<f64>> {
        let mut f: Vec<f64> = nodes.iter().map(|&p| self.amplitude(p)).collect();
        let norm_sq: f64 = f.iter().map(|a| a * a).sum::<f64>() * cell_volume;
        if !(norm_sq > 0.0) {
            return Err(ModelError::Config(format!(
                "trial function {self:?} vanishes on every grid node"
            )));
        }
        let inv = norm_sq.sqrt().recip();
        f.iter_mut().for_each(|a| *a *= inv);
        Ok(f)
    }

    /// Short `key=value` description used in CSV output.
    pub fn describe(&self) -> String {
        match *self {
            TrialFunctionSpec::FourierBump { radius } => format!("R={radius:.10}"),
            TrialFunctionSpec::TruncatedGaussian { sigma, radius } => {
                format!("sigma={sigma:.10};R={radius:.10}")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec_1d(dk: f64, uv: f64, ir: f64) -> ModelSpec {
        ModelSpec {
            dimension: 1,
            dispersion: Dispersion::Constant { omega0: 1.0 },
            coupling: Coupling::Constant { g: 0.2 },
            mode_spacing: dk,
            uv_cutoff: uv,
            ir_cutoff: ir,
            n_max: 1,
        }
    }

    #[test]
    fn lattice_enumeration_1d() {
        let grid = build_mode_grid(&spec_1d(1.0, 2.0, 0.5)).unwrap();
        let ks: Vec<f64> = grid.modes.iter().map(|m| m.k.x()).collect();
        assert_eq!(ks, vec![-2.0, -1.0, 1.0, 2.0]);
        assert!(grid.modes.iter().all(|m| m.weight == 1.0));
        assert!(grid.is_symmetric());
    }

    #[test]
    fn empty_grid_is_config_error() {
        let err = build_mode_grid(&spec_1d(1.0, 0.4, 0.5));
        assert!(matches!(err, Err(ModelError::Config(_))));
    }

    #[test]
    fn lattice_enumeration_2d() {
        let mut spec = spec_1d(1.0, 1.0, 0.0);
        spec.dimension = 2;
        let grid = build_mode_grid(&spec).unwrap();
        let mut ks: Vec<(i64, i64)> =
            grid.modes.iter().map(|m| (m.k.0[0] as i64, m.k.0[1] as i64)).collect();
        ks.sort();
        assert_eq!(ks, vec![(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)]);
        assert!(grid.modes.iter().all(|m| m.weight == 1.0));
    }

    #[test]
    fn coupling_examples() {
        let mut spec = spec_1d(1.0, 2.0, 0.5);
        let grid = build_mode_grid(&spec).unwrap();
        let v = effective_couplings(&spec, &grid).unwrap();
        assert!(v.iter().all(|c| (c.re - 0.2).abs() < 1e-15 && c.im == 0.0));

        spec.coupling = Coupling::Zero;
        let v = effective_couplings(&spec, &grid).unwrap();
        assert!(v.iter().all(|c| c.norm() == 0.0));

        let froehlich = ModelSpec {
            dimension: 3,
            coupling: Coupling::Froehlich { alpha: 1.0 },
            ir_cutoff: 0.5,
            ..spec_1d(1.0, 1.0, 0.5)
        };
        let grid = build_mode_grid(&froehlich).unwrap();
        let v = effective_couplings(&froehlich, &grid).unwrap();
        let i = grid.modes.iter().position(|m| m.k == Momentum([1.0, 0.0, 0.0])).unwrap();
        assert_relative_eq!(v[i].re, FROEHLICH_PREFACTOR, max_relative = 1e-15);
    }

    #[test]
    fn singular_coupling_rejected() {
        let spec = ModelSpec {
            coupling: Coupling::PowerLaw { g: 0.1, s: 1.0 },
            ..spec_1d(1.0, 2.0, 0.0)
        };
        assert!(spec.validate().is_err());
        // a hand-built grid bypasses validation but still hits the singularity
        let grid = ModeGrid::from_modes(1, vec![Mode { k: Momentum::ZERO, weight: 1.0 }]).unwrap();
        assert!(matches!(
            effective_couplings(&spec, &grid),
            Err(ModelError::SingularCoupling { .. })
        ));
    }

    #[test]
    fn froehlich_needs_three_dimensions() {
        let spec = ModelSpec { coupling: Coupling::Froehlich { alpha: 1.0 }, ..spec_1d(1.0, 2.0, 0.5) };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn coupling_reality_pairing() {
        let spec = ModelSpec {
            dimension: 2,
            coupling: Coupling::PowerLaw { g: 0.3, s: 0.7 },
            ..spec_1d(0.5, 2.0, 0.25)
        };
        let grid = build_mode_grid(&spec).unwrap();
        let v = effective_couplings(&spec, &grid).unwrap();
        let refl = grid.reflection().unwrap();
        for (i, &j) in refl.iter().enumerate() {
            assert!((v[j] - v[i].conj()).norm() <= 1e-14);
        }
    }

    #[test]
    fn potential_values_at_origin() {
        let g = PotentialSpec::gaussian_well(1.0, 1.0, 1);
        assert_eq!(g.value(Momentum::ZERO), -1.0);
        let pt = PotentialSpec::poschl_teller(2.0);
        assert_eq!(pt.value(Momentum::ZERO), -2.0);
        assert_eq!(pt.sup_norm(), 2.0);
    }

    /// Trapezoid quadrature of `(2 pi)^{-1/2} \int V(x) cos(q x) dx`.
    fn quadrature_fourier_1d(v: &PotentialSpec, q: f64) -> f64 {
        let (a, n) = (40.0, 80_000);
        let h = 2.0 * a / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let x = -a + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            s += w * v.value(Momentum::along_x(x)) * (q * x).cos();
        }
        s * h / (2.0 * PI).sqrt()
    }

    #[test]
    fn fourier_matches_quadrature() {
        let pots = [
            PotentialSpec::gaussian_well(1.3, 0.8, 1),
            PotentialSpec::poschl_teller(2.0),
            PotentialSpec::new(
                PotentialKind::SoftStep { depth: 1.5, width: 0.7, half_width: 2.0 },
                1,
            )
            .unwrap(),
            PotentialSpec::poschl_teller(2.0).scaled(0.5),
        ];
        for v in &pots {
            for &q in &[0.0, 0.3, 1.0, 2.5, 4.0] {
                let closed = v.fourier(Momentum::along_x(q));
                let num = quadrature_fourier_1d(v, q);
                let scale = closed.abs().max(1e-3 * v.fourier(Momentum::ZERO).abs());
                assert!(
                    (closed - num).abs() <= 1e-6 * scale,
                    "{v:?} q={q}: closed {closed} vs quadrature {num}"
                );
            }
        }
    }

    #[test]
    fn gaussian_fourier_at_origin_in_d_dims() {
        for d in 1..=3 {
            let v = PotentialSpec::gaussian_well(1.0, 1.5, d);
            assert_relative_eq!(v.fourier(Momentum::ZERO), -1.5f64.powi(d as i32), max_relative = 1e-14);
        }
    }

    #[test]
    fn fourier_l1_norms() {
        let pt = PotentialSpec::poschl_teller(2.0);
        assert_relative_eq!(pt.fourier_l1_norm(), 2.0 * (2.0 * PI).sqrt(), max_relative = 1e-14);
        let step = PotentialSpec::new(
            PotentialKind::SoftStep { depth: 1.0, width: 1.0, half_width: 0.5 },
            1,
        )
        .unwrap();
        let l1 = step.fourier_l1_norm();
        // bounded below by |\int V^| = sqrt(2 pi) |V(0)|
        assert!(l1 >= (2.0 * PI).sqrt() * step.value(Momentum::ZERO).abs() - 1e-9);
        assert!(l1.is_finite());
    }

    #[test]
    fn trial_functions_are_compact_and_normalized() {
        let nodes: Vec<Momentum> = (-20..=20).map(|j| Momentum::along_x(0.1 * j as f64)).collect();
        for f in [
            TrialFunctionSpec::FourierBump { radius: 1.05 },
            TrialFunctionSpec::TruncatedGaussian { sigma: 0.5, radius: 1.5 },
        ] {
            let s = f.normalized_samples(&nodes, 0.1).unwrap();
            let norm: f64 = s.iter().map(|a| a * a).sum::<f64>() * 0.1;
            assert!((norm - 1.0).abs() < 1e-12);
            for (p, a) in nodes.iter().zip(&s) {
                if p.norm() >= f.radius() {
                    assert_eq!(*a, 0.0);
                }
            }
        }
    }

    #[test]
    fn tabulated_dispersion_interpolates() {
        let d = Dispersion::Tabulated { samples: vec![(0.0, 1.0), (1.0, 2.0), (2.0, 2.0)] };
        assert_eq!(d.omega(Momentum::along_x(0.5)), 1.5);
        assert_eq!(d.omega(Momentum::along_x(-3.0)), 2.0);
    }
}
