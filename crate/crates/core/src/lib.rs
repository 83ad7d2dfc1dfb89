//! Verifiable multi-objective rewards for structured document QA, optimized
//! end-to-end with group-relative policy optimization on a synthetic
//! document environment.
//!
//! The crate is organized around the training loop:
//!
//! 1. [`synth`] generates documents (keyed fields with values at known
//!    boxes) and QA samples with verifiable ground truth.
//! 2. [`policy`] holds a pluggable policy interface and a slot-filling
//!    softmax policy with analytic gradients.
//! 3. [`structured`] parses and renders the tagged `<think>`/`<answer>`
//!    output schema; [`reward`] turns outputs into format, accuracy,
//!    localization and rephrase rewards.
//! 4. [`grpo`] normalizes group rewards into advantages and evaluates the
//!    simplified or clipped objective with KL regularization;
//!    [`trainer`] wires the loop together.
//! 5. [`eval`] computes benchmark-style metrics over prediction files.
//!
//! All numeric code is generic over [`scalar::Scalar`]; the aliases below
//! fix `f64`, which is what the pipeline and CLI use.

pub mod bbox;
pub mod error;
pub mod grpo;
pub mod jsonl;
pub mod optim;
pub mod policy;
pub mod prompt;
pub mod reward;
pub mod rng;
pub mod scalar;
pub mod structured;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Bounding box over `f64` pixel coordinates.
pub type Bbox = bbox::BoundingBox<f64>;
/// Parsed structured response over `f64`.
pub type Response = structured::StructuredResponse<f64>;
/// Parse outcome over `f64`.
pub type Outcome = structured::ParseOutcome<f64>;
/// Ground truth over `f64`.
pub type GroundTruth = reward::GroundTruth<f64>;
/// Reward weights over `f64`.
pub type Weights = reward::RewardWeights<f64>;
/// Reward configuration over `f64`.
pub type RewardConfig = reward::RewardConfig<f64>;
/// Reward breakdown over `f64`.
pub type Breakdown = reward::RewardBreakdown<f64>;
/// GRPO configuration over `f64`.
pub type GrpoConfig = grpo::GrpoConfig<f64>;
/// QA sample over `f64`.
pub type QaSample = synth::QaSample<f64>;
/// Synthetic document over `f64`.
pub type SynthDoc = synth::SynthDoc<f64>;
/// Slot policy over `f64`.
pub type SlotPolicy = policy::SlotPolicy<f64>;
/// Optimizer state over `f64`.
pub type OptimizerState = optim::OptimizerState<f64>;
/// Policy checkpoint over `f64`.
pub type Checkpoint = policy::Checkpoint<f64>;
