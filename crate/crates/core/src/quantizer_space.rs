//! The action space: quantizers from the source alphabet to the channel
//! alphabet.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::Quantizer;

/// Largest space [`QuantizerSpace::enumerate`] will walk by default.
pub const ENUMERATION_BUDGET: u128 = 50_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpaceError {
    #[error("space has {size} quantizers, budget is {budget}")]
    BudgetExceeded { size: String, budget: u128 },
    #[error("uniform sampling over all maps requires the full space (got {0:?})")]
    ModeMismatch(SpaceMode),
    #[error("source symbol {symbol} outside alphabet of size {m}")]
    SymbolOutOfRange { symbol: usize, m: usize },
    #[error("invalid space: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceMode {
    /// Every map `X -> M`.
    Full,
    /// Maps that use every channel symbol.
    Surjective,
    /// Maps whose bins are contiguous in value order, labelled in increasing
    /// order (empty bins allowed).
    ConvexBins,
}

/// A set of quantizers `{0..m} -> {0..levels}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizerSpace {
    m: usize,
    levels: usize,
    mode: SpaceMode,
    /// Source symbols sorted by value; `ConvexBins` is contiguous in this order.
    order: Vec<usize>,
}

impl QuantizerSpace {
    pub fn new(m: usize, levels: usize, mode: SpaceMode) -> Result<Self, SpaceError> {
        if m == 0 || levels == 0 || levels > 256 {
            return Err(SpaceError::Invalid(format!("m = {m}, levels = {levels}")));
        }
        Ok(Self { m, levels, mode, order: (0..m).collect() })
    }

    /// A space over the given alphabet, with `ConvexBins` following the
    /// ascending order of `values`.
    pub fn for_values(values: &[f64], levels: usize, mode: SpaceMode) -> Result<Self, SpaceError> {
        let mut space = Self::new(values.len(), levels, mode)?;
        space.order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        Ok(space)
    }

    pub fn full(m: usize, levels: usize) -> Result<Self, SpaceError> {
        Self::new(m, levels, SpaceMode::Full)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn mode(&self) -> SpaceMode {
        self.mode
    }

    /// `log2(levels)`.
    pub fn rate_bits(&self) -> f64 {
        (self.levels as f64).log2()
    }

    /// Number of members, `None` when it does not fit in a `u128`.
    pub fn size(&self) -> Option<u128> {
        let (m, k) = (self.m as u32, self.levels as u128);
        match self.mode {
            SpaceMode::Full => k.checked_pow(m),
            SpaceMode::Surjective => {
                // inclusion-exclusion: sum_j (-1)^j C(k, j) (k - j)^m
                let mut total: i128 = 0;
                for j in 0..=k {
                    let term = i128::try_from(binomial_u128(k, j)?)
                        .ok()?
                        .checked_mul(i128::try_from((k - j).checked_pow(m)?).ok()?)?;
                    total = if j % 2 == 0 { total.checked_add(term)? } else { total.checked_sub(term)? };
                }
                u128::try_from(total).ok()
            }
            SpaceMode::ConvexBins => binomial_u128(self.m as u128 + k - 1, k - 1),
        }
    }

    pub fn contains(&self, q: &Quantizer) -> bool {
        if q.len() != self.m || q.map().iter().any(|&c| c as usize >= self.levels) {
            return false;
        }
        match self.mode {
            SpaceMode::Full => true,
            SpaceMode::Surjective => q.span() == self.levels && {
                let mut seen = vec![false; self.levels];
                q.map().iter().for_each(|&c| seen[c as usize] = true);
                seen.into_iter().all(|s| s)
            },
            SpaceMode::ConvexBins => self.order.windows(2).all(|w| q.map()[w[0]] <= q.map()[w[1]]),
        }
    }

    /// Every member exactly once: lexicographic in the map for `Full` and
    /// `Surjective`, lexicographic in the value-ordered labels for
    /// `ConvexBins`.
    pub fn enumerate(&self) -> Result<QuantizerIter<'_>, SpaceError> {
        self.enumerate_within(ENUMERATION_BUDGET)
    }

    pub fn enumerate_within(&self, budget: u128) -> Result<QuantizerIter<'_>, SpaceError> {
        match self.size() {
            Some(size) if size <= budget => Ok(QuantizerIter { space: self, digits: Some(vec![0; self.m]) }),
            size => Err(SpaceError::BudgetExceeded {
                size: size.map_or_else(|| "more than 2^128".to_string(), |s| s.to_string()),
                budget,
            }),
        }
    }

    /// Uniform draw from the full space: one independent uniform channel
    /// symbol per source symbol.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Quantizer, SpaceError> {
        if self.mode != SpaceMode::Full {
            return Err(SpaceError::ModeMismatch(self.mode));
        }
        Ok(Quantizer::new((0..self.m).map(|_| rng.gen_range(0..self.levels) as u8).collect()))
    }

    /// Uniform draw from whatever this space contains.
    pub fn sample_member<R: Rng + ?Sized>(&self, rng: &mut R) -> Quantizer {
        match self.mode {
            SpaceMode::Full => self.sample_uniform(rng).expect("full mode"),
            SpaceMode::Surjective => loop {
                let q = Quantizer::new((0..self.m).map(|_| rng.gen_range(0..self.levels) as u8).collect());
                if self.contains(&q) {
                    break q;
                }
            },
            SpaceMode::ConvexBins => {
                // stars and bars: levels - 1 bars among m + levels - 1 slots
                let slots = self.m + self.levels - 1;
                let mut bars = index::sample(rng, slots, self.levels - 1).into_vec();
                bars.sort_unstable();
                let mut map = vec![0u8; self.m];
                let (mut label, mut bar, mut star) = (0u8, 0usize, 0usize);
                for slot in 0..slots {
                    if bar < bars.len() && bars[bar] == slot {
                        label += 1;
                        bar += 1;
                    } else {
                        map[self.order[star]] = label;
                        star += 1;
                    }
                }
                Quantizer::new(map)
            }
        }
    }

    /// `Q(x)` with a range check on `x`.
    pub fn apply(&self, q: &Quantizer, x: usize) -> Result<u8, SpaceError> {
        apply(q, x)
    }
}

/// `Q(x)`, failing for a symbol outside the alphabet.
pub fn apply(q: &Quantizer, x: usize) -> Result<u8, SpaceError> {
    q.get(x).ok_or(SpaceError::SymbolOutOfRange { symbol: x, m: q.len() })
}

fn binomial_u128(top: u128, bottom: u128) -> Option<u128> {
    if bottom > top {
        return Some(0);
    }
    let k = bottom.min(top - bottom);
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc.checked_mul(top - k + i)? / i;
    }
    Some(acc)
}

/// Odometer over label sequences; the last position turns fastest.
#[derive(Debug, Clone)]
pub struct QuantizerIter<'a> {
    space: &'a QuantizerSpace,
    /// Labels in enumeration position order (value order for `ConvexBins`).
    digits: Option<Vec<u8>>,
}

impl QuantizerIter<'_> {
    fn advance(&mut self) {
        let Some(digits) = self.digits.as_mut() else { return };
        let top = self.space.levels as u8 - 1;
        let mut pos = digits.len();
        loop {
            if pos == 0 {
                self.digits = None;
                return;
            }
            pos -= 1;
            if digits[pos] < top {
                digits[pos] += 1;
                let fill = if self.space.mode == SpaceMode::ConvexBins { digits[pos] } else { 0 };
                digits[pos + 1..].iter_mut().for_each(|d| *d = fill);
                return;
            }
        }
    }

    fn current(&self) -> Option<Quantizer> {
        let digits = self.digits.as_ref()?;
        Some(match self.space.mode {
            SpaceMode::ConvexBins => {
                let mut map = vec![0u8; digits.len()];
                for (pos, &d) in digits.iter().enumerate() {
                    map[self.space.order[pos]] = d;
                }
                Quantizer::new(map)
            }
            _ => Quantizer::new(digits.clone()),
        })
    }
}

impl Iterator for QuantizerIter<'_> {
    type Item = Quantizer;

    fn next(&mut self) -> Option<Quantizer> {
        loop {
            let q = self.current()?;
            self.advance();
            if self.space.mode != SpaceMode::Surjective || self.space.contains(&q) {
                return Some(q);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn full_space_sizes() {
        let s = QuantizerSpace::full(8, 2).unwrap();
        assert_eq!(s.size(), Some(256));
        assert_eq!(s.enumerate().unwrap().count(), 256);
        let s = QuantizerSpace::full(2, 1).unwrap();
        assert_eq!(s.enumerate().unwrap().collect::<Vec<_>>(), vec![Quantizer::uninformative(2)]);
        assert_eq!(QuantizerSpace::full(8, 6).unwrap().size(), Some(1_679_616));
        assert_eq!(QuantizerSpace::full(241, 2).unwrap().size(), None);
    }

    #[test]
    fn enumeration_is_lexicographic_and_unique() {
        let s = QuantizerSpace::full(3, 3).unwrap();
        let all: Vec<_> = s.enumerate().unwrap().collect();
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(all.len(), 27);
    }

    #[test]
    fn convex_bins_small_case() {
        let s = QuantizerSpace::new(3, 2, SpaceMode::ConvexBins).unwrap();
        let all: Vec<Vec<u8>> = s.enumerate().unwrap().map(|q| q.map().to_vec()).collect();
        assert_eq!(all, vec![vec![0, 0, 0], vec![0, 0, 1], vec![0, 1, 1], vec![1, 1, 1]]);
        assert_eq!(s.size(), Some(4));
        let s = QuantizerSpace::new(8, 6, SpaceMode::ConvexBins).unwrap();
        assert_eq!(s.size(), Some(1287));
        assert_eq!(s.enumerate().unwrap().count(), 1287);
    }

    #[test]
    fn convex_bins_follow_value_order() {
        let s = QuantizerSpace::for_values(&[3.0, 1.0, 2.0], 2, SpaceMode::ConvexBins).unwrap();
        let all: Vec<_> = s.enumerate().unwrap().collect();
        assert_eq!(all.len(), 4);
        // symbol 1 is smallest, then 2, then 0
        assert!(all.contains(&Quantizer::new(vec![1, 0, 0])));
        assert!(all.contains(&Quantizer::new(vec![1, 0, 1])));
        assert!(all.iter().all(|q| s.contains(q)));
    }

    #[test]
    fn surjective_count() {
        let s = QuantizerSpace::new(4, 3, SpaceMode::Surjective).unwrap();
        assert_eq!(s.size(), Some(36));
        assert_eq!(s.enumerate().unwrap().count(), 36);
    }

    #[test]
    fn budget_is_enforced() {
        let s = QuantizerSpace::full(8, 6).unwrap();
        assert!(matches!(s.enumerate_within(1000), Err(SpaceError::BudgetExceeded { .. })));
    }

    #[test]
    fn sample_uniform_requires_full_mode() {
        let s = QuantizerSpace::new(3, 2, SpaceMode::ConvexBins).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(s.sample_uniform(&mut rng), Err(SpaceError::ModeMismatch(SpaceMode::ConvexBins)));
    }

    #[test]
    fn single_symbol_draws_are_fair() {
        let s = QuantizerSpace::full(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ones = (0..10_000).filter(|_| s.sample_uniform(&mut rng).unwrap().map()[0] == 1).count();
        assert!((ones as f64 / 1e4 - 0.5).abs() < 0.01);
    }

    #[test]
    fn two_symbol_draws_cover_all_maps() {
        let s = QuantizerSpace::full(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut freq: HashMap<Quantizer, usize> = HashMap::new();
        for _ in 0..100_000 {
            *freq.entry(s.sample_uniform(&mut rng).unwrap()).or_default() += 1;
        }
        assert_eq!(freq.len(), 4);
        for (_, c) in freq {
            assert!((c as f64 / 1e5 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn convex_draws_are_uniform() {
        let s = QuantizerSpace::new(3, 2, SpaceMode::ConvexBins).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut freq: HashMap<Quantizer, usize> = HashMap::new();
        for _ in 0..40_000 {
            let q = s.sample_member(&mut rng);
            assert!(s.contains(&q));
            *freq.entry(q).or_default() += 1;
        }
        assert_eq!(freq.len(), 4);
        assert!(freq.values().all(|&c| (c as f64 / 4e4 - 0.25).abs() < 0.015));
    }

    #[test]
    fn sampling_is_reproducible() {
        let s = QuantizerSpace::full(8, 3).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| s.sample_uniform(&mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn apply_is_table_lookup() {
        assert_eq!(apply(&Quantizer::identity(4), 3), Ok(3));
        assert_eq!(apply(&Quantizer::uninformative(4), 2), Ok(0));
        assert_eq!(apply(&Quantizer::new(vec![1, 0]), 0), Ok(1));
        assert_eq!(apply(&Quantizer::new(vec![1, 0]), 2), Err(SpaceError::SymbolOutOfRange { symbol: 2, m: 2 }));
    }

    #[test]
    fn every_symbol_pair_is_reachable_in_full_mode() {
        let s = QuantizerSpace::full(3, 3).unwrap();
        for x in 0..3 {
            for q in 0..3u8 {
                assert!(s.enumerate().unwrap().any(|quant| quant.map()[x] == q));
            }
        }
    }
}
