//! Lloyd-Max scalar quantizers and the omniscient finite-state scalar
//! quantizer (O-FSSQ) used as comparison methods.
//!
//! Both are designed for squared error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::RunReport;
use crate::markov_source::{FiniteSource, SourceError};

pub const LLOYD_TOLERANCE: f64 = 1e-9;
pub const LLOYD_MAX_ITERATIONS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("need at least {levels} distinct support points, found {distinct}")]
    InsufficientSupport { distinct: usize, levels: usize },
    #[error("state class {state} received no training data")]
    EmptyBucket { state: usize },
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Source(#[from] SourceError),
}

/// Fixed-rate scalar quantizer with nearest-neighbour cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CodebookFile", into = "CodebookFile")]
pub struct ScalarQuantizer {
    codebook: Vec<f64>,
    thresholds: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    codebook: Vec<f64>,
}

impl TryFrom<CodebookFile> for ScalarQuantizer {
    type Error = BaselineError;
    fn try_from(file: CodebookFile) -> Result<Self, BaselineError> {
        ScalarQuantizer::new(file.codebook)
    }
}

impl From<ScalarQuantizer> for CodebookFile {
    fn from(q: ScalarQuantizer) -> Self {
        CodebookFile { codebook: q.codebook }
    }
}

impl ScalarQuantizer {
    /// Codebook must be finite, non-empty and ascending; thresholds are the
    /// midpoints of adjacent levels.
    pub fn new(codebook: Vec<f64>) -> Result<Self, BaselineError> {
        if codebook.is_empty() {
            return Err(BaselineError::InvalidCodebook("empty codebook".into()));
        }
        if codebook.iter().any(|c| !c.is_finite()) {
            return Err(BaselineError::InvalidCodebook("non-finite level".into()));
        }
        if codebook.windows(2).any(|w| w[0] > w[1]) {
            return Err(BaselineError::InvalidCodebook("levels not ascending".into()));
        }
        let thresholds = codebook.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(Self { codebook, thresholds })
    }

    pub fn codebook(&self) -> &[f64] {
        &self.codebook
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn levels(&self) -> usize {
        self.codebook.len()
    }

    /// Cell index of `x`; a value on a threshold goes to the lower cell.
    pub fn encode(&self, x: f64) -> usize {
        self.thresholds.partition_point(|&t| t < x)
    }

    pub fn decode(&self, index: usize) -> f64 {
        self.codebook[index]
    }

    pub fn reproduce(&self, x: f64) -> f64 {
        self.decode(self.encode(x))
    }
}

/// What Lloyd-Max is fitted to.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingData<'a> {
    Samples(&'a [f64]),
    Distribution { values: &'a [f64], weights: &'a [f64] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydResult {
    pub quantizer: ScalarQuantizer,
    /// Mean squared error of each iterate under its nearest-neighbour cells.
    pub trace: Vec<f64>,
}

impl LloydResult {
    pub fn distortion(&self) -> f64 {
        *self.trace.last().expect("at least one iteration")
    }
}

/// Sorted distinct support points with positive weights.
struct Points {
    x: Vec<f64>,
    w: Vec<f64>,
}

impl Points {
    fn from_data(data: &TrainingData<'_>) -> Result<Self, BaselineError> {
        let mut pairs: Vec<(f64, f64)> = match data {
            TrainingData::Samples(s) => s.iter().map(|&x| (x, 1.0)).collect(),
            TrainingData::Distribution { values, weights } => {
                if values.len() != weights.len() {
                    return Err(BaselineError::InvalidInput(format!(
                        "{} values but {} weights",
                        values.len(),
                        weights.len()
                    )));
                }
                values.iter().copied().zip(weights.iter().copied()).collect()
            }
        };
        if pairs.iter().any(|(x, w)| !x.is_finite() || !w.is_finite() || *w < 0.0) {
            return Err(BaselineError::InvalidInput("non-finite value or negative weight".into()));
        }
        pairs.retain(|&(_, w)| w > 0.0);
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut x: Vec<f64> = Vec::new();
        let mut w: Vec<f64> = Vec::new();
        for (v, wt) in pairs {
            match x.last() {
                Some(&last) if last == v => *w.last_mut().unwrap() += wt,
                _ => {
                    x.push(v);
                    w.push(wt);
                }
            }
        }
        Ok(Self { x, w })
    }

    fn total(&self) -> f64 {
        self.w.iter().sum()
    }

    fn centroid(&self, range: std::ops::Range<usize>) -> f64 {
        let (mut sw, mut swx) = (0.0, 0.0);
        for i in range {
            sw += self.w[i];
            swx += self.w[i] * self.x[i];
        }
        swx / sw
    }

    fn weight(&self, range: std::ops::Range<usize>) -> f64 {
        self.w[range].iter().sum()
    }

    /// Nearest-neighbour cells of an ascending codebook, as index ranges.
    fn cells(&self, codebook: &[f64]) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        let mut cells = Vec::with_capacity(codebook.len());
        for j in 0..codebook.len() {
            let end = if j + 1 == codebook.len() {
                self.x.len()
            } else {
                let t = 0.5 * (codebook[j] + codebook[j + 1]);
                start + self.x[start..].partition_point(|&v| v <= t)
            };
            cells.push(start..end);
            start = end;
        }
        cells
    }

    fn distortion(&self, codebook: &[f64], cells: &[std::ops::Range<usize>]) -> f64 {
        let mut acc = 0.0;
        for (c, cell) in codebook.iter().zip(cells) {
            for i in cell.clone() {
                let e = self.x[i] - c;
                acc += self.w[i] * e * e;
            }
        }
        acc / self.total()
    }
}

/// Nearest member of an ascending alphabet, lower member on ties.
fn snap(alphabet: Option<&[f64]>, v: f64) -> f64 {
    let Some(a) = alphabet else { return v };
    let i = a.partition_point(|&s| s < v);
    if i == 0 {
        a[0]
    } else if i == a.len() {
        a[a.len() - 1]
    } else if v - a[i - 1] <= a[i] - v {
        a[i - 1]
    } else {
        a[i]
    }
}

fn sorted_alphabet(reproduction: Option<&[f64]>) -> Result<Option<Vec<f64>>, BaselineError> {
    let Some(r) = reproduction else { return Ok(None) };
    if r.iter().any(|v| !v.is_finite()) {
        return Err(BaselineError::InvalidInput("non-finite reproduction value".into()));
    }
    let mut a = r.to_vec();
    a.sort_by(f64::total_cmp);
    a.dedup();
    Ok(Some(a))
}

/// Lloyd-Max design under squared error.
///
/// Starts from the uniform quantiles of the data and alternates centroid and
/// nearest-neighbour steps until the relative drop in distortion falls below
/// [`LLOYD_TOLERANCE`] or [`LLOYD_MAX_ITERATIONS`] is reached. With a
/// reproduction alphabet every centroid is replaced by the nearest alphabet
/// member. Empty cells take over one half of the heaviest splittable cell.
pub fn lloyd_max(
    data: &TrainingData<'_>,
    levels: usize,
    reproduction: Option<&[f64]>,
) -> Result<LloydResult, BaselineError> {
    if levels == 0 {
        return Err(BaselineError::InvalidInput("levels must be positive".into()));
    }
    let points = Points::from_data(data)?;
    let alphabet = sorted_alphabet(reproduction)?;
    let distinct = points.x.len().min(alphabet.as_ref().map_or(usize::MAX, Vec::len));
    if distinct < levels {
        return Err(BaselineError::InsufficientSupport { distinct, levels });
    }
    let alphabet = alphabet.as_deref();

    let total = points.total();
    let mut codebook: Vec<f64> = (0..levels)
        .map(|j| {
            let target = (j as f64 + 0.5) / levels as f64 * total;
            let mut acc = 0.0;
            let i = points
                .w
                .iter()
                .position(|&w| {
                    acc += w;
                    acc >= target
                })
                .unwrap_or(points.x.len() - 1);
            snap(alphabet, points.x[i])
        })
        .collect();

    let mut trace = Vec::new();
    for _ in 0..LLOYD_MAX_ITERATIONS {
        let cells = points.cells(&codebook);
        let d = points.distortion(&codebook, &cells);
        if let Some(&prev) = trace.last() {
            trace.push(d);
            if prev - d <= LLOYD_TOLERANCE * prev {
                break;
            }
        } else {
            trace.push(d);
            if d == 0.0 {
                break;
            }
        }
        codebook = centroid_step(&points, &cells, &codebook, alphabet);
    }
    Ok(LloydResult { quantizer: ScalarQuantizer::new(codebook)?, trace })
}

fn centroid_step(
    points: &Points,
    cells: &[std::ops::Range<usize>],
    codebook: &[f64],
    alphabet: Option<&[f64]>,
) -> Vec<f64> {
    let mut cells = cells.to_vec();
    let mut next: Vec<f64> = codebook.to_vec();
    for (j, cell) in cells.iter().enumerate() {
        if !cell.is_empty() {
            next[j] = snap(alphabet, points.centroid(cell.clone()));
        }
    }
    for j in 0..cells.len() {
        if !cells[j].is_empty() {
            continue;
        }
        let donor = (0..cells.len())
            .filter(|&i| cells[i].len() >= 2)
            .max_by(|&a, &b| points.weight(cells[a].clone()).total_cmp(&points.weight(cells[b].clone())));
        let Some(i) = donor else { break };
        let cell = cells[i].clone();
        let half = 0.5 * points.weight(cell.clone());
        let mut acc = 0.0;
        let mut split = cell.start + 1;
        for k in cell.clone() {
            acc += points.w[k];
            if acc >= half {
                split = (k + 1).clamp(cell.start + 1, cell.end - 1);
                break;
            }
        }
        next[i] = snap(alphabet, points.centroid(cell.start..split));
        next[j] = snap(alphabet, points.centroid(split..cell.end));
        cells[i] = cell.start..split;
        cells[j] = split..cell.end;
    }
    next.sort_by(f64::total_cmp);
    next
}

/// State classifier of an O-FSSQ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    /// One class per reproduction value; needs `K` equal to the alphabet size.
    Identity,
    /// A `K`-level Lloyd-Max quantizer of the training values.
    LloydMax,
}

/// Per-state codebooks indexed by the class of the previous reproduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OfssqFile", into = "OfssqFile")]
pub struct OfssqCodebooks {
    k: usize,
    reproduction: Vec<f64>,
    classifier: Vec<usize>,
    per_state: Vec<ScalarQuantizer>,
    fallback_states: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OfssqFile {
    k: usize,
    reproduction: Vec<f64>,
    classifier: Vec<usize>,
    per_state: Vec<ScalarQuantizer>,
    #[serde(default)]
    fallback_states: Vec<usize>,
}

impl TryFrom<OfssqFile> for OfssqCodebooks {
    type Error = BaselineError;
    fn try_from(f: OfssqFile) -> Result<Self, BaselineError> {
        OfssqCodebooks::new(f.k, f.reproduction, f.classifier, f.per_state, f.fallback_states)
    }
}

impl From<OfssqCodebooks> for OfssqFile {
    fn from(c: OfssqCodebooks) -> Self {
        OfssqFile {
            k: c.k,
            reproduction: c.reproduction,
            classifier: c.classifier,
            per_state: c.per_state,
            fallback_states: c.fallback_states,
        }
    }
}

impl OfssqCodebooks {
    pub fn new(
        k: usize,
        reproduction: Vec<f64>,
        classifier: Vec<usize>,
        per_state: Vec<ScalarQuantizer>,
        fallback_states: Vec<usize>,
    ) -> Result<Self, BaselineError> {
        let invalid = |msg: String| Err(BaselineError::InvalidCodebook(msg));
        if k == 0 || per_state.len() != k {
            return invalid(format!("{} codebooks for K = {k}", per_state.len()));
        }
        if reproduction.is_empty() || reproduction.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("reproduction alphabet must be strictly ascending".into());
        }
        if classifier.len() != reproduction.len() || classifier.iter().any(|&s| s >= k) {
            return invalid("classifier must assign every reproduction value a class below K".into());
        }
        let levels = per_state[0].levels();
        if per_state.iter().any(|q| q.levels() != levels) {
            return invalid("codebooks differ in size".into());
        }
        Ok(Self { k, reproduction, classifier, per_state, fallback_states })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn levels(&self) -> usize {
        self.per_state[0].levels()
    }

    pub fn reproduction(&self) -> &[f64] {
        &self.reproduction
    }

    pub fn per_state(&self) -> &[ScalarQuantizer] {
        &self.per_state
    }

    /// States whose bucket could not support its own design and reuse the
    /// codebook fitted to all training data.
    pub fn fallback_states(&self) -> &[usize] {
        &self.fallback_states
    }

    /// Class `V(v)` of the reproduction value nearest `v`.
    pub fn class_of(&self, v: f64) -> usize {
        let r = &self.reproduction;
        let i = r.partition_point(|&s| s < v);
        let idx = if i == 0 {
            0
        } else if i == r.len() || v - r[i - 1] <= r[i] - v {
            i - 1
        } else {
            i
        };
        self.classifier[idx]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("codebooks serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Fits an O-FSSQ to a training path of source symbols.
///
/// `x_{t+1}` is sorted into the bucket of the class of the true `x_t`; each
/// bucket gets a Lloyd-Max codebook over the reproduction alphabet `values`.
/// A bucket that is empty or has fewer than `levels` distinct values falls
/// back to the codebook designed on all training data.
pub fn train_ofssq(
    path: &[usize],
    values: &[f64],
    k: usize,
    levels: usize,
    mode: ClassifierMode,
) -> Result<OfssqCodebooks, BaselineError> {
    if path.len() < 2 {
        return Err(BaselineError::InvalidInput("training path needs at least two samples".into()));
    }
    if let Some(&bad) = path.iter().find(|&&x| x >= values.len()) {
        return Err(BaselineError::InvalidInput(format!("symbol {bad} outside alphabet of {}", values.len())));
    }
    let alphabet = sorted_alphabet(Some(values))?.expect("alphabet given");
    let alpha_index: Vec<usize> = values
        .iter()
        .map(|v| alphabet.partition_point(|&a| a < *v))
        .collect();
    let a = alphabet.len();

    let mut all = vec![0.0; a];
    for &x in &path[1..] {
        all[alpha_index[x]] += 1.0;
    }

    let classifier: Vec<usize> = match mode {
        ClassifierMode::Identity => {
            if k != a {
                return Err(BaselineError::InvalidInput(format!(
                    "identity classifier needs K = {a}, got {k}"
                )));
            }
            (0..a).collect()
        }
        ClassifierMode::LloydMax => {
            let mut hist = vec![0.0; a];
            for &x in path {
                hist[alpha_index[x]] += 1.0;
            }
            let fit = lloyd_max(
                &TrainingData::Distribution { values: &alphabet, weights: &hist },
                k,
                Some(&alphabet),
            )?;
            alphabet.iter().map(|&v| fit.quantizer.encode(v)).collect()
        }
    };

    let mut buckets = vec![vec![0.0; a]; k];
    for pair in path.windows(2) {
        let state = classifier[alpha_index[pair[0]]];
        buckets[state][alpha_index[pair[1]]] += 1.0;
    }

    let global = lloyd_max(
        &TrainingData::Distribution { values: &alphabet, weights: &all },
        levels,
        Some(&alphabet),
    )?
    .quantizer;
    let mut per_state = Vec::with_capacity(k);
    let mut fallback_states = Vec::new();
    for (state, weights) in buckets.iter().enumerate() {
        match lloyd_max(&TrainingData::Distribution { values: &alphabet, weights }, levels, Some(&alphabet)) {
            Ok(fit) => per_state.push(fit.quantizer),
            Err(BaselineError::InsufficientSupport { .. }) => {
                let reason = if weights.iter().all(|&w| w == 0.0) {
                    BaselineError::EmptyBucket { state }
                } else {
                    BaselineError::InsufficientSupport {
                        distinct: weights.iter().filter(|&&w| w > 0.0).count(),
                        levels,
                    }
                };
                log::warn!("O-FSSQ state {state}: {reason}; using the global codebook");
                fallback_states.push(state);
                per_state.push(global.clone());
            }
            Err(e) => return Err(e),
        }
    }
    OfssqCodebooks::new(k, alphabet, classifier, per_state, fallback_states)
}

/// Closed-loop squared-error run of an O-FSSQ over `samples` steps.
///
/// `X_0` is drawn from the invariant distribution. The state used to code
/// `X_t` is the class of the previous reproduction; the first state is the
/// class of the reproduction value nearest the stationary mean.
pub fn ofssq_run(
    codebooks: &OfssqCodebooks,
    source: &FiniteSource,
    samples: u64,
    seed: u64,
) -> Result<RunReport, BaselineError> {
    if samples == 0 {
        return Err(BaselineError::InvalidInput("samples must be positive".into()));
    }
    let zeta = source.invariant_distribution()?;
    let (mean, var_x) = source.moments(&zeta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = zeta.sample(&mut rng);
    let mut state = codebooks.class_of(mean);
    let mut total = 0.0;
    for t in 0..samples {
        let value = source.values()[x];
        let xhat = codebooks.per_state[state].reproduce(value);
        let e = value - xhat;
        total += e * e;
        state = codebooks.class_of(xhat);
        if t + 1 < samples {
            x = source.step(x, &mut rng);
        }
    }
    Ok(RunReport::new(samples, total, codebooks.levels(), var_x, seed))
}

/// Single-codebook O-FSSQ wrapping a plain scalar quantizer.
pub fn single_state(quantizer: ScalarQuantizer, reproduction: &[f64]) -> Result<OfssqCodebooks, BaselineError> {
    let alphabet = sorted_alphabet(Some(reproduction))?.expect("alphabet given");
    let classifier = vec![0; alphabet.len()];
    OfssqCodebooks::new(1, alphabet, classifier, vec![quantizer], Vec::new())
}

/// Closed-loop run of a memoryless scalar quantizer.
pub fn scalar_run(
    quantizer: &ScalarQuantizer,
    source: &FiniteSource,
    samples: u64,
    seed: u64,
) -> Result<RunReport, BaselineError> {
    ofssq_run(&single_state(quantizer.clone(), source.values())?, source, samples, seed)
}

/// Lloyd-Max design on the invariant distribution of `source`, with the
/// source values as reproduction alphabet.
pub fn lloyd_max_for_source(source: &FiniteSource, levels: usize) -> Result<LloydResult, BaselineError> {
    let zeta = source.invariant_distribution()?;
    lloyd_max(
        &TrainingData::Distribution { values: source.values(), weights: zeta.as_slice() },
        levels,
        Some(source.values()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov_source::{discretize_iid_gaussian, eight_state_benchmark, ProbabilityVector};
    use rand::Rng;

    fn fine_gaussian() -> (Vec<f64>, Vec<f64>) {
        // midpoints of a 1e-3 grid on [-8, 8]; no atom at 0
        let h = 1e-3;
        let xs: Vec<f64> = (0..16_000).map(|i| -8.0 + (i as f64 + 0.5) * h).collect();
        let ws = xs.iter().map(|x| (-0.5 * x * x).exp()).collect();
        (xs, ws)
    }

    #[test]
    fn scalar_quantizer_cells() {
        let q = ScalarQuantizer::new(vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(q.thresholds(), &[-0.5, 1.0]);
        assert_eq!(q.encode(-3.0), 0);
        assert_eq!(q.encode(-0.5), 0);
        assert_eq!(q.encode(-0.49), 1);
        assert_eq!(q.encode(1.0), 1);
        assert_eq!(q.encode(7.0), 2);
        assert_eq!(q.reproduce(1.5), 2.0);
        assert!(ScalarQuantizer::new(vec![1.0, 0.0]).is_err());
        assert!(ScalarQuantizer::new(vec![]).is_err());
    }

    #[test]
    fn single_level_is_the_mean() {
        let data = [1.0, 2.0, 6.0];
        let fit = lloyd_max(&TrainingData::Samples(&data), 1, None).unwrap();
        assert!((fit.quantizer.codebook()[0] - 3.0).abs() < 1e-12);
        let snapped = lloyd_max(&TrainingData::Samples(&data), 1, Some(&[0.0, 2.5, 3.4, 10.0])).unwrap();
        assert_eq!(snapped.quantizer.codebook(), &[3.4]);
    }

    #[test]
    fn gaussian_two_levels() {
        let (xs, ws) = fine_gaussian();
        let fit = lloyd_max(&TrainingData::Distribution { values: &xs, weights: &ws }, 2, None).unwrap();
        let target = (2.0 / std::f64::consts::PI).sqrt();
        let c = fit.quantizer.codebook();
        assert!((c[0] + target).abs() < 1e-3 && (c[1] - target).abs() < 1e-3, "{c:?}");
        // closed-form distortion 1 - 2/pi
        assert!((fit.distortion() - (1.0 - 2.0 / std::f64::consts::PI)).abs() < 1e-3);
    }

    #[test]
    fn gaussian_four_levels_match_known_table() {
        let (xs, ws) = fine_gaussian();
        let fit = lloyd_max(&TrainingData::Distribution { values: &xs, weights: &ws }, 4, None).unwrap();
        let c = fit.quantizer.codebook();
        assert!((c[2] - 0.4528).abs() < 2e-3 && (c[3] - 1.510).abs() < 2e-3, "{c:?}");
        assert!((fit.distortion() - 0.1175).abs() < 1e-3);
    }

    #[test]
    fn insufficient_support() {
        let data = [1.0, 1.0, 2.0];
        assert_eq!(
            lloyd_max(&TrainingData::Samples(&data), 3, None).unwrap_err(),
            BaselineError::InsufficientSupport { distinct: 2, levels: 3 }
        );
        assert!(matches!(
            lloyd_max(&TrainingData::Samples(&[1.0, 2.0, 3.0]), 3, Some(&[0.0, 1.0])),
            Err(BaselineError::InsufficientSupport { distinct: 2, levels: 3 })
        ));
    }

    #[test]
    fn atoms_force_reseeding() {
        // heavy atom makes the quantile start collapse onto one level
        let values = [0.0, 1.0, 2.0, 3.0];
        let weights = [100.0, 1.0, 1.0, 1.0];
        let fit = lloyd_max(&TrainingData::Distribution { values: &values, weights: &weights }, 3, Some(&values))
            .unwrap();
        let c = fit.quantizer.codebook();
        assert!(c.windows(2).all(|w| w[0] < w[1]), "{c:?}");
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn descent_is_monotone_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..5000).map(|_| rng.gen::<f64>().powi(3) * 10.0).collect();
        let fit = lloyd_max(&TrainingData::Samples(&data), 5, None).unwrap();
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert!(fit.trace.len() >= 2);
    }

    #[test]
    fn one_state_ofssq_is_lloyd_max() {
        let src = eight_state_benchmark();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let path = src.sample_path(20_000, &mut rng);
        let cb = train_ofssq(&path, src.values(), 1, 3, ClassifierMode::LloydMax).unwrap();
        let data: Vec<f64> = path[1..].iter().map(|&x| src.values()[x]).collect();
        let direct = lloyd_max(&TrainingData::Samples(&data), 3, Some(src.values())).unwrap();
        assert_eq!(cb.per_state()[0], direct.quantizer);

        let a = ofssq_run(&cb, &src, 5000, 4).unwrap();
        let b = scalar_run(&direct.quantizer, &src, 5000, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_classifier_tracks_previous_reproduction() {
        // training path is the deterministic cycle 0 -> 1 -> 2 -> 0
        let values = [0.0, 1.0, 2.0];
        let path: Vec<usize> = (0..3000).map(|t| t % 3).collect();
        let cb = train_ofssq(&path, &values, 3, 1, ClassifierMode::Identity).unwrap();
        // after value v the next value is (v + 1) mod 3
        for s in 0..3 {
            assert_eq!(cb.per_state()[s].codebook(), &[((s + 1) % 3) as f64]);
        }
        assert_eq!(cb.class_of(2.0), 2);
        assert!(matches!(
            train_ofssq(&path, &values, 2, 1, ClassifierMode::Identity),
            Err(BaselineError::InvalidInput(_))
        ));
    }

    #[test]
    fn empty_bucket_falls_back_to_global() {
        let values = [0.0, 1.0, 2.0];
        let path = [0usize, 1, 0, 1, 0, 1, 0, 1];
        let cb = train_ofssq(&path, &values, 3, 2, ClassifierMode::Identity).unwrap();
        // state 2 is never the previous symbol; states 0 and 1 see a single
        // successor value each
        assert_eq!(cb.fallback_states(), &[0, 1, 2]);
        assert_eq!(cb.per_state()[2].codebook(), &[0.0, 1.0]);
    }

    #[test]
    fn iid_buckets_agree() {
        let src = discretize_iid_gaussian(-4.0, 0.1, 81).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let path = src.sample_path(400_000, &mut rng);
        let cb = train_ofssq(&path, src.values(), 4, 2, ClassifierMode::LloydMax).unwrap();
        let first = cb.per_state()[0].codebook().to_vec();
        for q in cb.per_state() {
            for (a, b) in q.codebook().iter().zip(&first) {
                assert!((a - b).abs() <= 0.1 + 1e-9, "{:?} vs {first:?}", q.codebook());
            }
        }
    }

    #[test]
    fn codebooks_json_round_trip() {
        let src = eight_state_benchmark();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let path = src.sample_path(5000, &mut rng);
        let cb = train_ofssq(&path, src.values(), 8, 2, ClassifierMode::Identity).unwrap();
        let back = OfssqCodebooks::from_json(&cb.to_json()).unwrap();
        assert_eq!(back, cb);
        assert!(OfssqCodebooks::from_json(r#"{"k":1,"reproduction":[0.0],"classifier":[1],"per_state":[{"codebook":[0.0]}]}"#).is_err());
    }

    #[test]
    fn lossless_when_levels_cover_the_alphabet() {
        let src = FiniteSource::new(
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![0.0, 1.0],
            ProbabilityVector::uniform(2),
        )
        .unwrap();
        let fit = lloyd_max_for_source(&src, 2).unwrap();
        let report = scalar_run(&fit.quantizer, &src, 1000, 1).unwrap();
        assert_eq!(report.avg_distortion, 0.0);
    }
}
