//! Finite-alphabet Markov sources.
//!
//! A [`FiniteSource`] couples a row-stochastic transition matrix with the
//! numeric value of every symbol (used by the distortion measure) and an
//! initial law. Construction validates stochasticity, irreducibility and
//! aperiodicity, so every source handed to the learner has a unique
//! invariant distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Tolerance on row sums of a transition matrix.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Tolerance on the total mass of a [`ProbabilityVector`].
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

const POWER_ITERATION_TOLERANCE: f64 = 1e-12;
const POWER_ITERATION_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SourceError {
    #[error("transition matrix must be square and non-empty (got {rows} rows, row {row} has {cols} columns)")]
    NotSquare { rows: usize, row: usize, cols: usize },
    #[error("row {row} is not stochastic (sum {sum}, min entry {min})")]
    NonStochasticRow { row: usize, sum: f64, min: f64 },
    #[error("chain is reducible: state {unreachable} is not mutually reachable from state 0")]
    Reducible { unreachable: usize },
    #[error("chain is periodic with period {period}")]
    Periodic { period: usize },
    #[error("expected {expected} alphabet values, got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),
    #[error("power iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("correlation coefficient must satisfy |rho| < 1 (got {0})")]
    InvalidCorrelation(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// A point on the probability simplex over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, SourceError> {
        if probs.is_empty() {
            return Err(SourceError::InvalidDistribution("empty vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(SourceError::InvalidDistribution(format!(
                "entry {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(SourceError::InvalidDistribution(format!(
                "entries sum to {sum}"
            )));
        }
        Ok(Self(probs))
    }

    /// Wraps a vector that is already known to be a distribution.
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!(
            (probs.iter().sum::<f64>() - 1.0).abs() <= PROBABILITY_SUM_TOLERANCE,
            "not normalized: {probs:?}"
        );
        Self(probs)
    }

    /// Divides by the total mass. The caller guarantees the mass is positive.
    pub(crate) fn normalized(mut probs: Vec<f64>) -> Self {
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= sum);
        Self(probs)
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn point_mass(m: usize, at: usize) -> Self {
        let mut probs = vec![0.0; m];
        probs[at] = 1.0;
        Self(probs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Draws an index according to this distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.0, rng.gen::<f64>())
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = SourceError;

    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(value: ProbabilityVector) -> Self {
        value.0
    }
}

impl std::ops::Index<usize> for ProbabilityVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

/// Inverse-CDF draw from an (unnormalized-safe) probability slice.
fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the accumulated mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// A validated, immutable finite-alphabet Markov source.
#[derive(Debug, Clone)]
pub struct FiniteSource {
    m: usize,
    transition: Vec<f64>,
    cumulative: Vec<f64>,
    values: Vec<f64>,
    initial: ProbabilityVector,
    memoryless: bool,
}

impl FiniteSource {
    /// Builds a source from a row-stochastic matrix, checking that the chain
    /// is irreducible and aperiodic.
    pub fn new(
        matrix: Vec<Vec<f64>>,
        values: Vec<f64>,
        initial: ProbabilityVector,
    ) -> Result<Self, SourceError> {
        let m = matrix.len();
        for (row, r) in matrix.iter().enumerate() {
            if r.len() != m {
                return Err(SourceError::NotSquare { rows: m, row, cols: r.len() });
            }
        }
        if m == 0 {
            return Err(SourceError::NotSquare { rows: 0, row: 0, cols: 0 });
        }
        for (row, r) in matrix.iter().enumerate() {
            let sum: f64 = r.iter().sum();
            let min = r.iter().copied().fold(f64::INFINITY, f64::min);
            if !(min >= 0.0) || !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
                return Err(SourceError::NonStochasticRow { row, sum, min });
            }
        }
        if values.len() != m {
            return Err(SourceError::ValueCount { expected: m, got: values.len() });
        }
        if initial.len() != m {
            return Err(SourceError::InvalidDistribution(format!(
                "initial distribution has {} entries, alphabet has {m}",
                initial.len()
            )));
        }
        let transition: Vec<f64> = matrix.into_iter().flatten().collect();
        check_ergodic(m, &transition)?;
        Ok(Self::assemble(m, transition, values, initial))
    }

    /// Like [`FiniteSource::new`], but first divides every row by its sum.
    ///
    /// Published matrices are often rounded to a few decimals, so their rows
    /// miss 1 by far more than [`ROW_SUM_TOLERANCE`].
    pub fn with_normalized_rows(
        matrix: Vec<Vec<f64>>,
        values: Vec<f64>,
        initial: ProbabilityVector,
    ) -> Result<Self, SourceError> {
        let mut matrix = matrix;
        for (row, r) in matrix.iter_mut().enumerate() {
            let sum: f64 = r.iter().sum();
            let min = r.iter().copied().fold(f64::INFINITY, f64::min);
            if !(sum > 0.0) || !(min >= 0.0) {
                return Err(SourceError::NonStochasticRow { row, sum, min });
            }
            r.iter_mut().for_each(|p| *p /= sum);
        }
        Self::new(matrix, values, initial)
    }

    /// Skips all validation. Only for exercising degenerate dynamics in tests.
    #[doc(hidden)]
    pub fn new_unchecked(matrix: Vec<Vec<f64>>, values: Vec<f64>, initial: ProbabilityVector) -> Self {
        let m = matrix.len();
        Self::assemble(m, matrix.into_iter().flatten().collect(), values, initial)
    }

    fn assemble(m: usize, transition: Vec<f64>, values: Vec<f64>, initial: ProbabilityVector) -> Self {
        let cumulative = transition
            .chunks(m)
            .flat_map(|row| {
                row.iter()
                    .scan(0.0, |acc, p| {
                        *acc += p;
                        Some(*acc)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let memoryless = transition.chunks(m).all(|row| row == &transition[..m]);
        Self { m, transition, cumulative, values, initial, memoryless }
    }

    /// True when every row of the transition matrix is the same, i.e. the
    /// source is i.i.d.
    pub fn is_memoryless(&self) -> bool {
        self.memoryless
    }

    /// Alphabet size.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial(&self) -> &ProbabilityVector {
        &self.initial
    }

    /// Row `x` of the transition matrix, i.e. `P(. | x)`.
    pub fn row(&self, x: usize) -> &[f64] {
        &self.transition[x * self.m..(x + 1) * self.m]
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.m + to]
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.transition.chunks(self.m).map(<[f64]>::to_vec).collect()
    }

    /// One step of the chain from symbol `x`.
    pub fn step<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let cum = &self.cumulative[x * self.m..(x + 1) * self.m];
        let i = cum.partition_point(|c| *c <= u);
        if i < self.m {
            i
        } else {
            self.row(x).iter().rposition(|p| *p > 0.0).unwrap_or(self.m - 1)
        }
    }

    /// Row vector times matrix: `(pi P)(x') = sum_x pi(x) P(x'|x)`.
    pub fn propagate(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (x, &w) in pi.iter().enumerate() {
            if w != 0.0 {
                for (o, p) in out.iter_mut().zip(self.row(x)) {
                    *o += w * p;
                }
            }
        }
        out
    }

    /// The unique invariant distribution, by power iteration from the
    /// uniform law.
    pub fn invariant_distribution(&self) -> Result<ProbabilityVector, SourceError> {
        let mut current = vec![1.0 / self.m as f64; self.m];
        for _ in 0..POWER_ITERATION_CAP {
            let mut next = self.propagate(&current);
            let sum: f64 = next.iter().sum();
            next.iter_mut().for_each(|p| *p /= sum);
            let diff: f64 = next.iter().zip(&current).map(|(a, b)| (a - b).abs()).sum();
            current = next;
            if diff < POWER_ITERATION_TOLERANCE {
                return Ok(ProbabilityVector(current));
            }
        }
        Err(SourceError::NoConvergence(POWER_ITERATION_CAP))
    }

    /// Mean and variance of the symbol values under `dist`.
    pub fn moments(&self, dist: &ProbabilityVector) -> (f64, f64) {
        let mean: f64 = dist.as_slice().iter().zip(&self.values).map(|(p, v)| p * v).sum();
        let var = dist
            .as_slice()
            .iter()
            .zip(&self.values)
            .map(|(p, v)| p * (v - mean) * (v - mean))
            .sum();
        (mean, var)
    }

    /// Draws `len` symbols with `X_0` from the source's initial law.
    pub fn sample_path<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        let mut path = Vec::with_capacity(len);
        if len == 0 {
            return path;
        }
        let mut x = self.initial.sample(rng);
        path.push(x);
        for _ in 1..len {
            x = self.step(x, rng);
            path.push(x);
        }
        path
    }
}

/// Strong connectivity via forward and backward reachability from state 0,
/// then the period as the gcd of `level(u) + 1 - level(v)` over all edges of
/// a breadth-first level assignment.
fn check_ergodic(m: usize, transition: &[f64]) -> Result<(), SourceError> {
    let edge = |u: usize, v: usize| transition[u * m + v] > 0.0;
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut level = vec![usize::MAX; m];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        level[0] = 0;
        while let Some(u) = queue.pop_front() {
            for v in 0..m {
                let e = if forward { edge(u, v) } else { edge(v, u) };
                if e && !seen[v] {
                    seen[v] = true;
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (seen, level)
    };
    let (fwd, level) = reach(true);
    let (bwd, _) = reach(false);
    if let Some(unreachable) = (0..m).find(|&s| !fwd[s] || !bwd[s]) {
        return Err(SourceError::Reducible { unreachable });
    }
    let mut period = 0usize;
    for u in 0..m {
        for v in 0..m {
            if edge(u, v) {
                let d = (level[u] + 1).abs_diff(level[v]);
                period = gcd(period, d);
            }
        }
    }
    if period != 1 {
        return Err(SourceError::Periodic { period });
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Mass of `N(mean, sd^2)` in `(lo, hi]`, evaluated on whichever tail keeps
/// the subtraction well conditioned.
fn gaussian_cell_mass(lo: f64, hi: f64, mean: f64, sd: f64) -> f64 {
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

/// Masses of `N(mean, sd^2)` on the cells of a uniform grid; the outer cells
/// absorb the tails.
fn gaussian_on_grid(grid_min: f64, grid_step: f64, grid_count: usize, mean: f64, sd: f64) -> Vec<f64> {
    (0..grid_count)
        .map(|i| {
            let v = grid_min + grid_step * i as f64;
            let lo = if i == 0 { f64::NEG_INFINITY } else { v - grid_step / 2.0 };
            let hi = if i + 1 == grid_count { f64::INFINITY } else { v + grid_step / 2.0 };
            gaussian_cell_mass(lo, hi, mean, sd)
        })
        .collect()
}

/// Discretizes the Gauss-Markov source `X_{t+1} = rho X_t + W_t`,
/// `W_t ~ N(0, 1 - rho^2)`, onto the grid `grid_min + grid_step * i`.
///
/// The stationary marginal of the continuous process is `N(0, 1)`; the
/// initial law is that marginal discretized onto the same grid.
pub fn discretize_gauss_markov(
    rho: f64,
    grid_min: f64,
    grid_step: f64,
    grid_count: usize,
) -> Result<FiniteSource, SourceError> {
    if !(rho.abs() < 1.0) {
        return Err(SourceError::InvalidCorrelation(rho));
    }
    if grid_count < 2 {
        return Err(SourceError::InvalidGrid(format!("grid_count {grid_count} < 2")));
    }
    if !(grid_step > 0.0) || !grid_min.is_finite() {
        return Err(SourceError::InvalidGrid(format!(
            "grid_min {grid_min}, grid_step {grid_step}"
        )));
    }
    let sd = (1.0 - rho * rho).sqrt();
    let values: Vec<f64> = (0..grid_count).map(|i| grid_min + grid_step * i as f64).collect();
    let matrix: Vec<Vec<f64>> = values
        .iter()
        .map(|v| gaussian_on_grid(grid_min, grid_step, grid_count, rho * v, sd))
        .collect();
    let initial = ProbabilityVector::normalized(gaussian_on_grid(grid_min, grid_step, grid_count, 0.0, 1.0));
    FiniteSource::new(matrix, values, initial)
}

/// An i.i.d. standard Gaussian source discretized onto a grid.
pub fn discretize_iid_gaussian(
    grid_min: f64,
    grid_step: f64,
    grid_count: usize,
) -> Result<FiniteSource, SourceError> {
    discretize_gauss_markov(0.0, grid_min, grid_step, grid_count)
}

/// The 8-state benchmark source (alphabet `{1, ..., 8}`, rows as published
/// to four decimals and renormalized), started from its invariant law.
pub fn eight_state_benchmark() -> FiniteSource {
    let matrix = vec![
        vec![0.1331, 0.0824, 0.0311, 0.2131, 0.2623, 0.0714, 0.0417, 0.1645],
        vec![0.1207, 0.1501, 0.1268, 0.1974, 0.0952, 0.0862, 0.1870, 0.0362],
        vec![0.2320, 0.0491, 0.1770, 0.1476, 0.1530, 0.1691, 0.0215, 0.05043],
        vec![0.0162, 0.1930, 0.2511, 0.1935, 0.0688, 0.1280, 0.0893, 0.0597],
        vec![0.0420, 0.1496, 0.1130, 0.0478, 0.1073, 0.2345, 0.0692, 0.2363],
        vec![0.1382, 0.1720, 0.1378, 0.1369, 0.0396, 0.1923, 0.1383, 0.0445],
        vec![0.1710, 0.2153, 0.1579, 0.0366, 0.1530, 0.1144, 0.0439, 0.1075],
        vec![0.1292, 0.0534, 0.1309, 0.0315, 0.2837, 0.2617, 0.0103, 0.0988],
    ];
    let values = (1..=8).map(f64::from).collect();
    let source = FiniteSource::with_normalized_rows(matrix, values, ProbabilityVector::uniform(8))
        .expect("benchmark matrix is ergodic");
    let zeta = source.invariant_distribution().expect("benchmark chain mixes");
    FiniteSource { initial: zeta, ..source }
}

/// Published invariant vector of [`eight_state_benchmark`], four decimals.
pub const EIGHT_STATE_INVARIANT: [f64; 8] =
    [0.1211, 0.1326, 0.1416, 0.1328, 0.1360, 0.1580, 0.0806, 0.0973];

/// JSON description of a source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceSpec {
    GaussMarkov {
        gauss_markov: GaussMarkovSpec,
    },
    IidGaussian {
        iid_gaussian: GridSpec,
    },
    Matrix {
        matrix: Vec<Vec<f64>>,
        values: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial: Option<Vec<f64>>,
        /// Renormalize rows that were published with rounding.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        normalize_rows: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussMarkovSpec {
    pub rho: f64,
    pub grid_min: f64,
    pub grid_step: f64,
    pub grid_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub grid_min: f64,
    pub grid_step: f64,
    pub grid_count: usize,
}

impl SourceSpec {
    pub fn build(&self) -> Result<FiniteSource, SourceError> {
        match self {
            SourceSpec::GaussMarkov { gauss_markov: g } => {
                discretize_gauss_markov(g.rho, g.grid_min, g.grid_step, g.grid_count)
            }
            SourceSpec::IidGaussian { iid_gaussian: g } => {
                discretize_iid_gaussian(g.grid_min, g.grid_step, g.grid_count)
            }
            SourceSpec::Matrix { matrix, values, initial, normalize_rows } => {
                let m = matrix.len();
                let initial = match initial {
                    Some(p) => ProbabilityVector::new(p.clone())?,
                    None => ProbabilityVector::uniform(m.max(1)),
                };
                if *normalize_rows {
                    FiniteSource::with_normalized_rows(matrix.clone(), values.clone(), initial)
                } else {
                    FiniteSource::new(matrix.clone(), values.clone(), initial)
                }
            }
        }
    }
}
