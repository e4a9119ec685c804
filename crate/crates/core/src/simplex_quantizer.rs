//! Quantization of beliefs onto the type lattice
//! `{(k_1/n, ..., k_m/n) : k_i >= 0, sum k_i = n}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov_source::ProbabilityVector;

/// Largest lattice [`enumerate_lattice`] will walk by default.
pub const ENUMERATION_BUDGET: u64 = 50_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("lattice size C({top}, {bottom}) overflows u64")]
    Overflow { top: u64, bottom: u64 },
    #[error("lattice has {size} points, budget is {budget}")]
    BudgetExceeded { size: u64, budget: u64 },
    #[error("counts sum to {sum}, expected {n}")]
    BadCounts { sum: u64, n: u32 },
}

/// A lattice point, stored as its integer counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeVector {
    counts: Box<[u32]>,
}

impl TypeVector {
    /// Validates that `counts` sums to `n`.
    pub fn new(counts: Vec<u32>, n: u32) -> Result<Self, LatticeError> {
        let sum: u64 = counts.iter().map(|&k| u64::from(k)).sum();
        if sum != u64::from(n) {
            return Err(LatticeError::BadCounts { sum, n });
        }
        Ok(Self { counts: counts.into_boxed_slice() })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn n(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn dimension(&self) -> usize {
        self.counts.len()
    }

    pub fn to_probabilities(&self) -> ProbabilityVector {
        let n = f64::from(self.n());
        ProbabilityVector::from_raw(self.counts.iter().map(|&k| f64::from(k) / n).collect())
    }

    /// Canonical Q-table key: the counts themselves.
    pub fn table_key(&self) -> StateKey {
        StateKey(self.counts.clone())
    }
}

/// Injective key for a lattice point; round-trips to the counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateKey(Box<[u32]>);

impl StateKey {
    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn to_type_vector(&self) -> TypeVector {
        TypeVector { counts: self.0.clone() }
    }
}

/// Nearest lattice point (Euclidean) to `pi` with denominator `n`.
///
/// Round every `n p_i` to the nearest integer; if the rounded counts do not
/// sum to `n`, order the rounding errors `k_i - n p_i` ascending (stable in
/// the index) and fix the surplus on the largest errors or the deficit on
/// the smallest.
pub fn quantize(pi: &ProbabilityVector, n: u32) -> TypeVector {
    assert!(n >= 1, "lattice parameter must be positive");
    let scaled = pi.as_slice().iter().map(|p| f64::from(n) * p);
    let mut counts: Vec<i64> = scaled.clone().map(|s| (s + 0.5).floor() as i64).collect();
    let total: i64 = counts.iter().sum();
    let surplus = total - i64::from(n);
    if surplus != 0 {
        let errors: Vec<f64> = counts.iter().zip(scaled).map(|(&k, s)| k as f64 - s).collect();
        // ties broken by index, which is what a stable sort would do
        let by_error = |a: &usize, b: &usize| errors[*a].total_cmp(&errors[*b]).then(a.cmp(b));
        let mut order: Vec<usize> = (0..counts.len()).collect();
        let fix = surplus.unsigned_abs() as usize;
        if surplus > 0 {
            let cut = order.len() - fix;
            if cut > 0 {
                order.select_nth_unstable_by(cut - 1, by_error);
            }
            for &i in &order[cut..] {
                counts[i] -= 1;
            }
        } else {
            if fix < order.len() {
                order.select_nth_unstable_by(fix, by_error);
            }
            for &i in &order[..fix] {
                counts[i] += 1;
            }
        }
    }
    debug_assert!(counts.iter().all(|&k| k >= 0));
    TypeVector { counts: counts.into_iter().map(|k| k as u32).collect() }
}

/// `C(n + m - 1, m - 1)`, the number of lattice points.
pub fn lattice_size(m: usize, n: u32) -> Result<u64, LatticeError> {
    assert!(m >= 1, "alphabet must be non-empty");
    binomial(u64::from(n) + m as u64 - 1, m as u64 - 1)
}

pub(crate) fn binomial(top: u64, bottom: u64) -> Result<u64, LatticeError> {
    if bottom > top {
        return Ok(0);
    }
    let k = bottom.min(top - bottom);
    let mut acc: u128 = 1;
    for i in 1..=u128::from(k) {
        // exact: acc * (top - k + i) is divisible by i at every step
        acc = acc * (u128::from(top - k) + i) / i;
        if acc > u128::from(u64::MAX) {
            return Err(LatticeError::Overflow { top, bottom });
        }
    }
    Ok(acc as u64)
}

/// Every lattice point for `(m, n)` in descending lexicographic order of the
/// counts: `(n, 0, ..), (n-1, 1, ..), ..., (.., 0, n)`.
pub fn enumerate_lattice(m: usize, n: u32) -> Result<LatticeIter, LatticeError> {
    enumerate_lattice_within(m, n, ENUMERATION_BUDGET)
}

pub fn enumerate_lattice_within(m: usize, n: u32, budget: u64) -> Result<LatticeIter, LatticeError> {
    let size = lattice_size(m, n)?;
    if size > budget {
        return Err(LatticeError::BudgetExceeded { size, budget });
    }
    let mut first = vec![0; m];
    first[0] = n;
    Ok(LatticeIter { next: Some(first) })
}

#[derive(Debug, Clone)]
pub struct LatticeIter {
    next: Option<Vec<u32>>,
}

impl Iterator for LatticeIter {
    type Item = TypeVector;

    fn next(&mut self) -> Option<TypeVector> {
        let current = self.next.take()?;
        let m = current.len();
        let mut succ = current.clone();
        let tail = succ[m - 1];
        succ[m - 1] = 0;
        if let Some(i) = (0..m.saturating_sub(1)).rev().find(|&i| succ[i] > 0) {
            succ[i] -= 1;
            succ[i + 1] = tail + 1;
            self.next = Some(succ);
        }
        Some(TypeVector { counts: current.into_boxed_slice() })
    }
}

/// Upper bound `sqrt(m) / n` on the distance from a belief to its lattice
/// point.
pub fn max_bin_radius(m: usize, n: u32) -> f64 {
    (m as f64).sqrt() / f64::from(n)
}
