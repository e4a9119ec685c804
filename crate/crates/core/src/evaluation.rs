//! Closed-loop replay of an encoder policy through encoder, noiseless
//! channel and decoder, plus the discounted-cost and filter-stability
//! diagnostics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::belief::{
    filter_from_predictor, optimal_reconstruction, predictor_update, tv_distance, BeliefError, DistortionSpec,
};
use crate::markov_source::{FiniteSource, ProbabilityVector, SourceError};
use crate::qlearning::{Policy, StartLaw};
use crate::quantizer_space::QuantizerSpace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("zero-mass bin at step {step}: {source}")]
    ZeroMassAt { step: usize, source: BeliefError },
    #[error("policy uses n = {policy}, evaluation requested n = {requested}")]
    PolicyConfigMismatch { policy: u32, requested: u32 },
    #[error("policy is over {policy} symbols, source has {source_m}")]
    AlphabetMismatch { policy: usize, source_m: usize },
    #[error("encoder and decoder beliefs diverged at step {0}")]
    Desynchronized(u64),
    #[error("SNR needs positive variance and distortion (got {variance}, {distortion})")]
    NonPositiveInput { variance: f64, distortion: f64 },
    #[error("invalid evaluation parameter: {0}")]
    Invalid(String),
}

/// Signal-to-noise ratio in dB; a zero-distortion run is reported as
/// `Lossless` and serialized as the string `"lossless"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Db(f64),
    Lossless,
}

impl Snr {
    pub fn db(&self) -> Option<f64> {
        match self {
            Snr::Db(v) => Some(*v),
            Snr::Lossless => None,
        }
    }
}

impl std::fmt::Display for Snr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Snr::Db(v) => write!(f, "{v}"),
            Snr::Lossless => f.write_str("lossless"),
        }
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Snr::Db(v) => s.serialize_f64(*v),
            Snr::Lossless => s.serialize_str("lossless"),
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Snr::Db(v)),
            Raw::Text(t) if t == "lossless" => Ok(Snr::Lossless),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unknown SNR sentinel {t:?}"))),
        }
    }
}

/// Outcome of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub samples: u64,
    pub avg_distortion: f64,
    pub snr_db: Snr,
    pub rate_bits: f64,
    pub var_x: f64,
    pub seed: u64,
}

impl RunReport {
    pub fn new(samples: u64, total_distortion: f64, levels: usize, var_x: f64, seed: u64) -> Self {
        let avg_distortion = total_distortion / samples as f64;
        let snr_db = if avg_distortion > 0.0 {
            Snr::Db(10.0 * (var_x / avg_distortion).log10())
        } else {
            Snr::Lossless
        };
        Self { samples, avg_distortion, snr_db, rate_bits: (levels as f64).log2(), var_x, seed }
    }
}

/// `10 log10(variance / distortion)`.
pub fn snr_db(variance: f64, distortion: f64) -> Result<f64, EvalError> {
    if !(variance > 0.0 && distortion > 0.0) {
        return Err(EvalError::NonPositiveInput { variance, distortion });
    }
    Ok(10.0 * (variance / distortion).log10())
}

/// Variance of the source values under the invariant distribution.
pub fn stationary_variance(source: &FiniteSource) -> Result<f64, SourceError> {
    let zeta = source.invariant_distribution()?;
    Ok(source.moments(&zeta).1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub samples: u64,
    pub seed: u64,
    /// Lattice parameter the caller expects the policy to use.
    pub expected_n: Option<u32>,
    pub start: StartLaw,
    /// Track encoder and decoder beliefs separately and compare them.
    pub check_sync: bool,
}

impl EvalOptions {
    pub fn new(samples: u64, seed: u64) -> Self {
        Self { samples, seed, expected_n: None, start: StartLaw::Invariant, check_sync: cfg!(debug_assertions) }
    }
}

fn check_policy(source: &FiniteSource, policy: &Policy, expected_n: Option<u32>) -> Result<(), EvalError> {
    if let Some(requested) = expected_n {
        if requested != policy.n() {
            return Err(EvalError::PolicyConfigMismatch { policy: policy.n(), requested });
        }
    }
    if policy.m() != source.m() {
        return Err(EvalError::AlphabetMismatch { policy: policy.m(), source_m: source.m() });
    }
    Ok(())
}

/// One step of the coding loop: the encoder picks a quantizer from its
/// belief and sends `Q(x)`; the decoder picks the same quantizer from its own
/// copy of the belief, filters and reconstructs; both advance the predictor.
/// `step` returns the distortion incurred.
struct CodingLoop<'a> {
    source: &'a FiniteSource,
    policy: &'a Policy,
    dist: &'a DistortionSpec,
    encoder: ProbabilityVector,
    decoder: Option<ProbabilityVector>,
}

impl CodingLoop<'_> {
    fn step(&mut self, x: usize, step: u64) -> Result<f64, EvalError> {
        let at = |source: BeliefError| EvalError::ZeroMassAt { step: step as usize, source };
        let quantizer = self.policy.act(&self.encoder);
        let q = quantizer.map()[x];
        let (decoder_belief, decoder_quantizer) = match self.decoder.as_ref() {
            Some(belief) => (belief, self.policy.act(belief)),
            None => (&self.encoder, quantizer),
        };
        let filter = filter_from_predictor(decoder_belief, decoder_quantizer, q).map_err(at)?;
        let (_, xhat) = optimal_reconstruction(&filter, self.source.values(), self.dist);
        let next = predictor_update(&self.encoder, quantizer, q, self.source).map_err(at)?;
        if let Some(decoder) = self.decoder.as_mut() {
            let next_decoder = predictor_update(decoder, decoder_quantizer, q, self.source).map_err(at)?;
            if next_decoder != next {
                return Err(EvalError::Desynchronized(step));
            }
            *decoder = next_decoder;
        }
        self.encoder = next;
        Ok(self.dist.d(self.source.values()[x], xhat))
    }
}

fn start_belief(source: &FiniteSource, start: StartLaw) -> Result<ProbabilityVector, SourceError> {
    match start {
        StartLaw::Invariant => source.invariant_distribution(),
        StartLaw::SourceInitial => Ok(source.initial().clone()),
    }
}

/// Average distortion and SNR of `policy` over `opts.samples` steps.
///
/// Encoder and decoder both start from the invariant distribution (or the
/// source's initial law), and `X_0` is drawn from that same law.
pub fn evaluate_policy(
    source: &FiniteSource,
    policy: &Policy,
    dist: &DistortionSpec,
    opts: &EvalOptions,
) -> Result<RunReport, EvalError> {
    check_policy(source, policy, opts.expected_n)?;
    if opts.samples == 0 {
        return Err(EvalError::Invalid("samples must be positive".into()));
    }
    let var_x = stationary_variance(source)?;
    let start = start_belief(source, opts.start)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = start.sample(&mut rng);
    let mut coding = CodingLoop {
        source,
        policy,
        dist,
        decoder: opts.check_sync.then(|| start.clone()),
        encoder: start,
    };
    let mut total = 0.0;
    for t in 0..opts.samples {
        total += coding.step(x, t)?;
        x = source.step(x, &mut rng);
    }
    Ok(RunReport::new(opts.samples, total, policy.levels(), var_x, opts.seed))
}

/// Monte Carlo estimate of a discounted cost and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountedEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub runs: usize,
    pub horizon: usize,
}

/// Smallest horizon `H` with `beta^H * c_max / (1 - beta) <= tolerance`.
pub fn truncation_horizon(beta: f64, c_max: f64, tolerance: f64) -> usize {
    if c_max <= 0.0 {
        return 1;
    }
    let h = (tolerance * (1.0 - beta) / c_max).ln() / beta.ln();
    h.ceil().max(1.0) as usize
}

/// Average over `num_runs` independent paths, each started at the invariant
/// distribution, of `sum_{t < horizon} beta^t d(X_t, Xhat_t)`.
pub fn discounted_cost_estimate(
    source: &FiniteSource,
    policy: &Policy,
    dist: &DistortionSpec,
    beta: f64,
    horizon: usize,
    num_runs: usize,
    seed: u64,
) -> Result<DiscountedEstimate, EvalError> {
    check_policy(source, policy, None)?;
    if !(beta > 0.0 && beta < 1.0) || horizon == 0 || num_runs == 0 {
        return Err(EvalError::Invalid(format!("beta {beta}, horizon {horizon}, runs {num_runs}")));
    }
    let zeta = source.invariant_distribution()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..num_runs {
        let mut x = zeta.sample(&mut rng);
        let mut coding = CodingLoop { source, policy, dist, encoder: zeta.clone(), decoder: None };
        let (mut acc, mut weight) = (0.0, 1.0);
        for t in 0..horizon {
            acc += weight * coding.step(x, t as u64)?;
            weight *= beta;
            x = source.step(x, &mut rng);
        }
        sum += acc;
        sum_sq += acc * acc;
    }
    let runs = num_runs as f64;
    let mean = sum / runs;
    let var = if num_runs > 1 { ((sum_sq - runs * mean * mean) / (runs - 1.0)).max(0.0) } else { 0.0 };
    Ok(DiscountedEstimate { mean, std_error: (var / runs).sqrt(), runs: num_runs, horizon })
}

/// Total-variation distance between two predictors driven by the same
/// uniformly explored quantizers and the same channel symbols, with the
/// true path started from `prior_a`. Entry `t` is the distance after `t`
/// updates, so the trace has `steps + 1` entries.
pub fn filter_stability_diagnostic(
    source: &FiniteSource,
    space: &QuantizerSpace,
    prior_a: &ProbabilityVector,
    prior_b: &ProbabilityVector,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = prior_a.clone();
    let mut b = prior_b.clone();
    let mut x = prior_a.sample(&mut rng);
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(tv_distance(&a, &b)?);
    for step in 0..steps {
        let quantizer = space.sample_member(&mut rng);
        let q = quantizer.map()[x];
        a = predictor_update(&a, &quantizer, q, source).map_err(|e| EvalError::ZeroMassAt { step, source: e })?;
        b = predictor_update(&b, &quantizer, q, source).map_err(|e| EvalError::ZeroMassAt { step, source: e })?;
        trace.push(tv_distance(&a, &b)?);
        x = source.step(x, &mut rng);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::Quantizer;
    use crate::markov_source::eight_state_benchmark;

    #[test]
    fn snr_examples() {
        assert!((snr_db(1.0, 0.1).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(snr_db(1.0, 1.0).unwrap(), 0.0);
        assert!((snr_db(2.0, 0.5).unwrap() - 6.020599913279624).abs() < 1e-12);
        assert!(matches!(snr_db(1.0, 0.0), Err(EvalError::NonPositiveInput { .. })));
        assert!(matches!(snr_db(-1.0, 1.0), Err(EvalError::NonPositiveInput { .. })));
    }

    #[test]
    fn snr_sentinel_serialization() {
        assert_eq!(serde_json::to_string(&Snr::Lossless).unwrap(), "\"lossless\"");
        assert_eq!(serde_json::from_str::<Snr>("\"lossless\"").unwrap(), Snr::Lossless);
        assert_eq!(serde_json::from_str::<Snr>("3.5").unwrap(), Snr::Db(3.5));
        assert!(serde_json::from_str::<Snr>("\"inf\"").is_err());
    }

    #[test]
    fn identity_policy_is_lossless() {
        let src = eight_state_benchmark();
        let policy = Policy::constant(2, 8, Quantizer::identity(8));
        let dist = DistortionSpec::squared_error_for(&src);
        let report = evaluate_policy(&src, &policy, &dist, &EvalOptions::new(5_000, 1)).unwrap();
        assert_eq!(report.avg_distortion, 0.0);
        assert_eq!(report.snr_db, Snr::Lossless);
        assert_eq!(report.rate_bits, 3.0);
        let disc = discounted_cost_estimate(&src, &policy, &dist, 0.9, 50, 10, 3).unwrap();
        assert_eq!(disc.mean, 0.0);
    }

    #[test]
    fn mismatched_n_is_reported() {
        let src = eight_state_benchmark();
        let policy = Policy::constant(2, 8, Quantizer::identity(8));
        let dist = DistortionSpec::squared_error_for(&src);
        let opts = EvalOptions { expected_n: Some(5), ..EvalOptions::new(10, 1) };
        assert_eq!(
            evaluate_policy(&src, &policy, &dist, &opts),
            Err(EvalError::PolicyConfigMismatch { policy: 2, requested: 5 })
        );
    }

    #[test]
    fn horizon_formula() {
        let h = truncation_horizon(0.9999, 1.0, 1e-6);
        assert!((200_000..=240_000).contains(&h), "{h}");
        assert!(0.9999f64.powi(h as i32) / 1e-4 <= 1e-6 * 1.0001);
    }

    #[test]
    fn identical_priors_never_separate() {
        let src = eight_state_benchmark();
        let space = QuantizerSpace::full(8, 2).unwrap();
        let zeta = src.invariant_distribution().unwrap();
        let trace = filter_stability_diagnostic(&src, &space, &zeta, &zeta, 500, 4).unwrap();
        assert!(trace.iter().all(|&d| d == 0.0));
        assert_eq!(trace.len(), 501);
    }

    #[test]
    fn iid_source_forgets_the_prior_in_one_step() {
        let zeta = vec![0.25, 0.25, 0.5];
        let src = FiniteSource::new(vec![zeta.clone(); 3], vec![0.0, 1.0, 2.0], ProbabilityVector::new(zeta).unwrap())
            .unwrap();
        let space = QuantizerSpace::full(3, 2).unwrap();
        let a = ProbabilityVector::new(vec![0.6, 0.2, 0.2]).unwrap();
        let b = ProbabilityVector::uniform(3);
        let trace = filter_stability_diagnostic(&src, &space, &a, &b, 100, 9).unwrap();
        assert!(trace[0] > 0.0);
        assert!(trace[1..].iter().all(|&d| d < 1e-15));
    }

    #[test]
    fn degenerate_prior_is_reported_with_its_step() {
        // sparse rows: a point-mass prior rules out symbols the true path visits
        let src = FiniteSource::new(
            vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5]],
            vec![0.0, 1.0, 2.0],
            ProbabilityVector::uniform(3),
        )
        .unwrap();
        let space = QuantizerSpace::full(3, 3).unwrap();
        let a = ProbabilityVector::point_mass(3, 2);
        let b = ProbabilityVector::point_mass(3, 0);
        // a quantizer separating 0 from 2 exposes the contradiction at once;
        // merging maps can let the priors coalesce instead, so scan seeds
        let err = (0..20)
            .find_map(|seed| filter_stability_diagnostic(&src, &space, &a, &b, 10, seed).err())
            .expect("some seed separates the priors");
        assert!(matches!(err, EvalError::ZeroMassAt { step: 0, .. }), "{err:?}");
    }
}
