//! Zero-delay lossy coding of finite-alphabet Markov sources.
//!
//! Encoders are learned by quantized Q-learning over the belief simplex and
//! compared against Lloyd-Max and omniscient finite-state scalar quantizers.

pub mod baselines;
pub mod belief;
pub mod evaluation;
pub mod markov_source;
pub mod qlearning;
pub mod quantizer_space;
pub mod simplex_quantizer;

pub use belief::{DistortionMeasure, DistortionSpec, Quantizer};
pub use markov_source::{FiniteSource, ProbabilityVector, SourceSpec};
pub use qlearning::{extract_policy, train, Policy, QTable, TrainConfig, TrainStats};
pub use quantizer_space::{QuantizerSpace, SpaceMode};
pub use simplex_quantizer::{quantize, TypeVector};
