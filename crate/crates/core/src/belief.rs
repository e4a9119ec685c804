//! Predictor and filter recursions for the coding belief, the per-stage
//! cost of a quantizer at a belief, and the optimal decoder.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov_source::{FiniteSource, ProbabilityVector};

/// Beliefs assigning less than this mass to the received bin are rejected.
pub const ZERO_MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("channel symbol {symbol} carries belief mass {mass:e}")]
    ZeroMassBin { symbol: u8, mass: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// A map from source symbols `0..m` to channel symbols `0..M`.
///
/// Serialized as the bare integer array `[Q(0), ..., Q(m-1)]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Quantizer {
    map: Box<[u8]>,
}

impl Quantizer {
    pub fn new(map: Vec<u8>) -> Self {
        Self { map: map.into_boxed_slice() }
    }

    /// `Q(x) = x`; needs `m <= 256`.
    pub fn identity(m: usize) -> Self {
        Self::new((0..m).map(|x| x as u8).collect())
    }

    /// Sends every symbol to channel symbol 0.
    pub fn uninformative(m: usize) -> Self {
        Self::new(vec![0; m])
    }

    pub fn map(&self) -> &[u8] {
        &self.map
    }

    /// Number of source symbols.
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Smallest channel alphabet this map fits in.
    pub fn span(&self) -> usize {
        self.map.iter().map(|&q| q as usize + 1).max().unwrap_or(0)
    }

    /// `Q(x)`, or `None` for a symbol outside the alphabet.
    pub fn get(&self, x: usize) -> Option<u8> {
        self.map.get(x).copied()
    }

    /// Applies `f` to every channel symbol.
    pub fn relabel(&self, f: impl Fn(u8) -> u8) -> Self {
        Self::new(self.map.iter().map(|&q| f(q)).collect())
    }
}

/// Built-in per-letter distortion measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionMeasure {
    SquaredError,
    AbsoluteError,
}

/// Reproduction alphabet plus a (scaled) distortion measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub reproduction: Vec<f64>,
    pub measure: DistortionMeasure,
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl DistortionSpec {
    pub fn squared_error(reproduction: Vec<f64>) -> Self {
        Self { reproduction, measure: DistortionMeasure::SquaredError, scale: 1.0 }
    }

    /// Squared error with the source alphabet as reproduction alphabet.
    pub fn squared_error_for(source: &FiniteSource) -> Self {
        Self::squared_error(source.values().to_vec())
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.scale *= factor;
        self
    }

    #[inline]
    pub fn d(&self, x: f64, xhat: f64) -> f64 {
        let raw = match self.measure {
            DistortionMeasure::SquaredError => (x - xhat) * (x - xhat),
            DistortionMeasure::AbsoluteError => (x - xhat).abs(),
        };
        self.scale * raw
    }

    /// `max_{x, xhat} d(x, xhat)`, the sup-norm of the stage cost.
    pub fn max_distortion(&self, source_values: &[f64]) -> f64 {
        source_values
            .iter()
            .flat_map(|&x| self.reproduction.iter().map(move |&y| (x, y)))
            .map(|(x, y)| self.d(x, y))
            .fold(0.0, f64::max)
    }

    /// Index of the reproduction value nearest to `target`, lowest index on
    /// ties.
    fn nearest(&self, target: f64) -> usize {
        let mut best = 0;
        let mut best_gap = f64::INFINITY;
        for (i, &y) in self.reproduction.iter().enumerate() {
            let gap = (y - target).abs();
            if gap < best_gap {
                best = i;
                best_gap = gap;
            }
        }
        best
    }

    /// Minimizer over the reproduction alphabet of `sum_x w(x) d(x, xhat)`
    /// restricted to the symbols in `members`; returns (index, cost).
    fn best_reproduction(
        &self,
        members: impl Iterator<Item = usize> + Clone,
        weights: &[f64],
        values: &[f64],
    ) -> (usize, f64) {
        match self.measure {
            DistortionMeasure::SquaredError => {
                // sum w (x - y)^2 = W (y - mean)^2 + const
                let (mass, first) = members
                    .clone()
                    .fold((0.0, 0.0), |(w, s), x| (w + weights[x], s + weights[x] * values[x]));
                if mass <= 0.0 {
                    return (0, 0.0);
                }
                let best = self.nearest(first / mass);
                let y = self.reproduction[best];
                let cost = members.map(|x| weights[x] * self.d(values[x], y)).sum();
                (best, cost)
            }
            DistortionMeasure::AbsoluteError => {
                let mut best = (0, f64::INFINITY);
                for (i, &y) in self.reproduction.iter().enumerate() {
                    let cost: f64 = members.clone().map(|x| weights[x] * self.d(values[x], y)).sum();
                    if cost < best.1 {
                        best = (i, cost);
                    }
                }
                best
            }
        }
    }
}

/// Belief mass of the bin `Q^{-1}(q)`.
pub fn bin_mass(pi: &ProbabilityVector, quantizer: &Quantizer, q: u8) -> f64 {
    pi.as_slice()
        .iter()
        .zip(quantizer.map())
        .filter(|(_, &c)| c == q)
        .map(|(p, _)| p)
        .sum()
}

/// Bayes update of the predictor on observing channel symbol `q`:
/// `pibar(x) = pi(x) 1{Q(x) = q} / pi(Q^{-1}(q))`.
pub fn filter_from_predictor(
    pi: &ProbabilityVector,
    quantizer: &Quantizer,
    q: u8,
) -> Result<ProbabilityVector, BeliefError> {
    if pi.len() != quantizer.len() {
        return Err(BeliefError::DimensionMismatch(pi.len(), quantizer.len()));
    }
    let mass = bin_mass(pi, quantizer, q);
    if !(mass > ZERO_MASS_TOLERANCE) {
        return Err(BeliefError::ZeroMassBin { symbol: q, mass });
    }
    let probs = pi
        .as_slice()
        .iter()
        .zip(quantizer.map())
        .map(|(&p, &c)| if c == q { p / mass } else { 0.0 })
        .collect();
    Ok(ProbabilityVector::normalized(probs))
}

/// Next predictor after sending `q` through `quantizer`:
/// `pi'(x') = sum_{x in Q^{-1}(q)} P(x'|x) pi(x) / pi(Q^{-1}(q))`,
/// renormalized to unit mass.
pub fn predictor_update(
    pi: &ProbabilityVector,
    quantizer: &Quantizer,
    q: u8,
    source: &FiniteSource,
) -> Result<ProbabilityVector, BeliefError> {
    let m = source.m();
    if pi.len() != m || quantizer.len() != m {
        return Err(BeliefError::DimensionMismatch(pi.len(), quantizer.len()));
    }
    if source.is_memoryless() {
        let mass = bin_mass(pi, quantizer, q);
        if !(mass > ZERO_MASS_TOLERANCE) {
            return Err(BeliefError::ZeroMassBin { symbol: q, mass });
        }
        return Ok(ProbabilityVector::normalized(source.row(0).to_vec()));
    }
    let mut next = vec![0.0; m];
    let mut mass = 0.0;
    for (x, (&p, &c)) in pi.as_slice().iter().zip(quantizer.map()).enumerate() {
        if c == q && p != 0.0 {
            mass += p;
            for (o, t) in next.iter_mut().zip(source.row(x)) {
                *o += p * t;
            }
        }
    }
    if !(mass > ZERO_MASS_TOLERANCE) {
        return Err(BeliefError::ZeroMassBin { symbol: q, mass });
    }
    Ok(ProbabilityVector::normalized(next))
}

/// Expected distortion of encoding with `quantizer` when the predictor is
/// `pi` and the decoder reconstructs optimally:
/// `c(pi, Q) = sum_i min_xhat sum_{x in Q^{-1}(i)} pi(x) d(x, xhat)`.
pub fn stage_cost(
    pi: &ProbabilityVector,
    quantizer: &Quantizer,
    source_values: &[f64],
    dist: &DistortionSpec,
) -> f64 {
    let weights = pi.as_slice();
    if dist.measure == DistortionMeasure::SquaredError {
        // one pass for the bin means, one for the cost
        let span = quantizer.span();
        let mut mass = vec![0.0; span];
        let mut first = vec![0.0; span];
        for ((&w, &c), &v) in weights.iter().zip(quantizer.map()).zip(source_values) {
            mass[c as usize] += w;
            first[c as usize] += w * v;
        }
        let centers: Vec<f64> = mass
            .iter()
            .zip(&first)
            .map(|(&w, &s)| if w > 0.0 { dist.reproduction[dist.nearest(s / w)] } else { 0.0 })
            .collect();
        return weights
            .iter()
            .zip(quantizer.map())
            .zip(source_values)
            .map(|((&w, &c), &v)| w * dist.d(v, centers[c as usize]))
            .sum();
    }
    (0..quantizer.span())
        .map(|i| {
            let members = quantizer
                .map()
                .iter()
                .enumerate()
                .filter(move |(_, &c)| c as usize == i)
                .map(|(x, _)| x);
            dist.best_reproduction(members, weights, source_values).1
        })
        .sum()
}

/// Decoder output for filter `pi_bar`: the reproduction value minimizing the
/// conditional expected distortion, lowest index on ties. Returns
/// (index into the reproduction alphabet, value).
pub fn optimal_reconstruction(
    pi_bar: &ProbabilityVector,
    source_values: &[f64],
    dist: &DistortionSpec,
) -> (usize, f64) {
    let weights = pi_bar.as_slice();
    let support = (0..weights.len()).filter(|&x| weights[x] > 0.0);
    let (i, _) = dist.best_reproduction(support, weights, source_values);
    (i, dist.reproduction[i])
}

/// `sum_i |a_i - b_i|`, in `[0, 2]`.
pub fn tv_distance(a: &ProbabilityVector, b: &ProbabilityVector) -> Result<f64, BeliefError> {
    if a.len() != b.len() {
        return Err(BeliefError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).sum())
}
