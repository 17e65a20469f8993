//! Truncated multimode bosonic Fock basis with a total-phonon cap.
//!
//! States are ordered by total phonon number, and within one total in
//! descending lexicographic order of the occupation vector, so the vacuum is
//! index 0 and the one-phonon states follow as `e_0, e_1, ...`. The index map
//! is a combinatorial ranking, `O(m_modes)` per lookup.

use thiserror::Error;

use crate::model::{ModeGrid, Momentum};

/// Default cap on the basis dimension.
pub const DEFAULT_MAX_DIM: usize = 5_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FockError {
    #[error("Fock basis dimension {dim} exceeds the limit {limit}")]
    Capacity { dim: u128, limit: usize },
    #[error("invalid Fock basis parameters: {0}")]
    Invalid(String),
}

/// Occupation vector with its cached total.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OccupationState {
    pub occ: Vec<u32>,
    pub total: u32,
}

impl OccupationState {
    pub fn new(occ: Vec<u32>) -> Self {
        let total = occ.iter().sum();
        OccupationState { occ, total }
    }

    pub fn vacuum(m_modes: usize) -> Self {
        OccupationState { occ: vec![0; m_modes], total: 0 }
    }

    /// Field momentum `sum_i occ_i k_i`.
    pub fn field_momentum(&self, grid: &ModeGrid) -> Momentum {
        self.occ
            .iter()
            .zip(&grid.modes)
            .fold(Momentum::ZERO, |acc, (&n, m)| acc + m.k * n as f64)
    }
}

/// Result of applying a ladder operator to a basis state.
#[derive(Clone, Debug, PartialEq)]
pub enum LadderResult {
    State(OccupationState, f64),
    /// Creation would exceed the phonon cap.
    OutOfTruncation,
    /// Annihilation on an empty mode.
    Vanishes,
}

pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Basis dimension `C(m_modes + n_max, n_max)`.
pub fn basis_dimension(m_modes: usize, n_max: usize) -> u128 {
    binomial((m_modes + n_max) as u64, n_max as u64)
}

#[derive(Clone, Debug)]
pub struct FockBasis {
    m_modes: usize,
    n_max: usize,
    /// Occupations, row-major `dim x m_modes`.
    occ: Vec<u8>,
    totals: Vec<u8>,
    /// `binom[a][t] = C(a, t)` for `t < m_modes`.
    binom: Vec<Vec<u64>>,
    /// Index of the first state with each total.
    grade_offsets: Vec<usize>,
}

impl FockBasis {
    pub fn enumerate(m_modes: usize, n_max: usize) -> Result<Self, FockError> {
        Self::enumerate_with_limit(m_modes, n_max, DEFAULT_MAX_DIM)
    }

    pub fn enumerate_with_limit(m_modes: usize, n_max: usize, limit: usize) -> Result<Self, FockError> {
        if m_modes == 0 {
            return Err(FockError::Invalid("need at least one mode".into()));
        }
        if n_max > u8::MAX as usize {
            return Err(FockError::Invalid(format!("n_max {n_max} too large")));
        }
        let dim = basis_dimension(m_modes, n_max);
        if dim > limit as u128 {
            return Err(FockError::Capacity { dim, limit });
        }
        let dim = dim as usize;
        let rows = m_modes + n_max + 1;
        let binom: Vec<Vec<u64>> = (0..rows)
            .map(|a| (0..m_modes).map(|t| binomial(a as u64, t as u64) as u64).collect())
            .collect();

        let mut occ = Vec::with_capacity(dim * m_modes);
        let mut totals = Vec::with_capacity(dim);
        let mut cur = vec![0u8; m_modes];
        for n in 0..=n_max {
            // first state of the grade in descending lex order: all in mode 0
            cur.iter_mut().for_each(|c| *c = 0);
            cur[0] = n as u8;
            loop {
                occ.extend_from_slice(&cur);
                totals.push(n as u8);
                if !prev_descending(&mut cur) {
                    break;
                }
            }
        }
        debug_assert_eq!(totals.len(), dim);
        let grade_offsets = (0..=n_max)
            .map(|n| if n == 0 { 0 } else { binomial((n - 1 + m_modes) as u64, m_modes as u64) as usize })
            .collect();
        Ok(FockBasis { m_modes, n_max, occ, totals, binom, grade_offsets })
    }

    pub fn dim(&self) -> usize {
        self.totals.len()
    }

    pub fn m_modes(&self) -> usize {
        self.m_modes
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn occupations(&self, j: usize) -> &[u8] {
        &self.occ[j * self.m_modes..(j + 1) * self.m_modes]
    }

    pub fn total(&self, j: usize) -> usize {
        self.totals[j] as usize
    }

    pub fn state(&self, j: usize) -> OccupationState {
        OccupationState::new(self.occupations(j).iter().map(|&o| o as u32).collect())
    }

    fn c(&self, a: usize, t: usize) -> usize {
        self.binom[a][t] as usize
    }

    /// Index of an occupation vector given as raw counts, `None` if it is
    /// outside the truncation.
    pub fn index_of_occ(&self, occ: &[u8]) -> Option<usize> {
        if occ.len() != self.m_modes {
            return None;
        }
        let n: usize = occ.iter().map(|&o| o as usize).sum();
        if n > self.n_max {
            return None;
        }
        let m = self.m_modes;
        let offset = self.grade_offsets[n];
        let mut rank = 0;
        let mut remaining = n;
        for (i, &o) in occ.iter().enumerate().take(m.saturating_sub(1)) {
            let o = o as usize;
            if o < remaining {
                let t = m - i - 1;
                rank += self.c(remaining - o - 1 + t, t);
            }
            remaining -= o;
        }
        Some(offset + rank)
    }

    pub fn index_of(&self, s: &OccupationState) -> Option<usize> {
        if s.occ.iter().any(|&o| o > u8::MAX as u32) {
            return None;
        }
        let raw: Vec<u8> = s.occ.iter().map(|&o| o as u8).collect();
        self.index_of_occ(&raw)
    }

    /// `a_i^dagger |s>`.
    pub fn apply_creation(&self, i: usize, s: &OccupationState) -> LadderResult {
        assert!(i < self.m_modes, "mode index {i} out of range");
        if s.total as usize >= self.n_max {
            return LadderResult::OutOfTruncation;
        }
        let mut t = s.clone();
        t.occ[i] += 1;
        t.total += 1;
        let amp = (t.occ[i] as f64).sqrt();
        LadderResult::State(t, amp)
    }

    /// `a_i |s>`.
    pub fn apply_annihilation(&self, i: usize, s: &OccupationState) -> LadderResult {
        assert!(i < self.m_modes, "mode index {i} out of range");
        if s.occ[i] == 0 {
            return LadderResult::Vanishes;
        }
        let amp = (s.occ[i] as f64).sqrt();
        let mut t = s.clone();
        t.occ[i] -= 1;
        t.total -= 1;
        LadderResult::State(t, amp)
    }

    /// Index permutation induced by a permutation of modes (used for the
    /// reflection `k -> -k`).
    pub fn mode_permutation(&self, mode_perm: &[usize]) -> Vec<usize> {
        let mut buf = vec![0u8; self.m_modes];
        (0..self.dim())
            .map(|j| {
                let occ = self.occupations(j);
                for (i, &o) in occ.iter().enumerate() {
                    buf[mode_perm[i]] = o;
                }
                self.index_of_occ(&buf).expect("permutation preserves the total")
            })
            .collect()
    }
}

/// Step to the next state of the same total in descending lexicographic
/// order. Returns `false` after the last one.
fn prev_descending(cur: &mut [u8]) -> bool {
    let m = cur.len();
    if m < 2 {
        return false;
    }
    // rightmost position before the last that can give one unit to its right
    let mut i = m - 1;
    loop {
        if i == 0 {
            return false;
        }
        i -= 1;
        if cur[i] > 0 {
            break;
        }
    }
    let tail: u8 = cur[i + 1..].iter().sum();
    cur[i] -= 1;
    cur[i + 1..].iter_mut().for_each(|c| *c = 0);
    cur[i + 1] = tail + 1;
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dimensions() {
        assert_eq!(FockBasis::enumerate(2, 2).unwrap().dim(), 6);
        assert_eq!(FockBasis::enumerate(1, 3).unwrap().dim(), 4);
        assert_eq!(FockBasis::enumerate(3, 1).unwrap().dim(), 4);
        assert_eq!(FockBasis::enumerate(20, 4).unwrap().dim(), 10626);
    }

    #[test]
    fn ordering_is_graded_descending_lex() {
        let b = FockBasis::enumerate(2, 2).unwrap();
        let all: Vec<Vec<u8>> = (0..b.dim()).map(|j| b.occupations(j).to_vec()).collect();
        assert_eq!(all, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn capacity_error() {
        assert!(matches!(
            FockBasis::enumerate_with_limit(20, 4, 1000),
            Err(FockError::Capacity { dim: 10626, .. })
        ));
    }

    #[test]
    fn ladder_examples() {
        let b = FockBasis::enumerate(2, 3).unwrap();
        let s = OccupationState::new(vec![0, 0]);
        assert_eq!(b.apply_creation(0, &s), LadderResult::State(OccupationState::new(vec![1, 0]), 1.0));
        let s = OccupationState::new(vec![2, 0]);
        match b.apply_creation(0, &s) {
            LadderResult::State(t, a) => {
                assert_eq!(t.occ, vec![3, 0]);
                assert!((a - 3f64.sqrt()).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
        let b2 = FockBasis::enumerate(2, 2).unwrap();
        assert_eq!(b2.apply_creation(1, &OccupationState::new(vec![1, 1])), LadderResult::OutOfTruncation);
        assert_eq!(b2.apply_annihilation(1, &OccupationState::new(vec![1, 0])), LadderResult::Vanishes);
    }

    #[test]
    fn bijection_exhaustive() {
        for (m, n) in [(1, 5), (3, 3), (5, 2), (7, 4)] {
            let b = FockBasis::enumerate(m, n).unwrap();
            assert_eq!(b.dim() as u128, basis_dimension(m, n));
            assert_eq!(b.total(0), 0);
            for j in 0..b.dim() {
                assert_eq!(b.index_of(&b.state(j)), Some(j));
                if j > 0 {
                    assert!(b.total(j - 1) <= b.total(j));
                }
            }
        }
    }

    #[test]
    fn mode_reflection_is_involution() {
        let b = FockBasis::enumerate(4, 3).unwrap();
        let perm = b.mode_permutation(&[3, 2, 1, 0]);
        for j in 0..b.dim() {
            assert_eq!(perm[perm[j]], j);
        }
    }

    proptest! {
        #[test]
        fn creation_annihilation_round_trip(occ in prop::collection::vec(0u32..3, 4), i in 0usize..4) {
            let b = FockBasis::enumerate(4, 9).unwrap();
            let s = OccupationState::new(occ);
            if let LadderResult::State(t, a) = b.apply_creation(i, &s) {
                match b.apply_annihilation(i, &t) {
                    LadderResult::State(back, a2) => {
                        prop_assert_eq!(&back, &s);
                        prop_assert!((a * a2 - (s.occ[i] + 1) as f64).abs() < 1e-12);
                    }
                    other => prop_assert!(false, "unexpected {:?}", other),
                }
            }
        }

        #[test]
        fn index_round_trip(m in 1usize..6, n in 0usize..5, pick in 0usize..10_000) {
            let b = FockBasis::enumerate(m, n).unwrap();
            let j = pick % b.dim();
            prop_assert_eq!(b.index_of(&b.state(j)), Some(j));
        }
    }
}
