//! The four verifiable rewards over structured document-QA outputs and
//! their weighted total.
//!
//! For one output the engine produces:
//! - a binary format reward (does the output parse against the schema),
//! - a binary answer-accuracy reward (normalized match against ground truth),
//! - a binary localization reward (IoU against the ground-truth region at a
//!   threshold, 0.5 by default),
//! - a soft rephrase reward in [0, 1] combining term-frequency cosine
//!   similarity with the new-word ratio, granted only when the answer is
//!   correct.
//!
//! An unparseable output zeroes every component: without a parsed answer,
//! box and rephrase there is nothing to verify.

use serde::{Deserialize, Serialize};

use crate::bbox::{iou, BoundingBox};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::structured::{parse, ParseOutcome};
use crate::text::{cosine_similarity_tf, new_word_ratio, normalize_answer};

/// How predicted answers are compared with the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyMode {
    /// Normalized exact match.
    #[default]
    Exact,
    /// Exact match, or the normalized ground truth contained in the
    /// normalized prediction.
    Contain,
}

/// Reference answer and region for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<F> {
    answer: String,
    roi: BoundingBox<F>,
}

impl<F: Scalar> GroundTruth<F> {
    pub fn new(answer: impl Into<String>, roi: BoundingBox<F>) -> Result<Self> {
        let answer = answer.into();
        if answer.is_empty() {
            return Err(Error::data("ground-truth answer must be non-empty"));
        }
        Ok(Self { answer, roi })
    }

    pub fn answer(&self) -> &str {
        &self.answer
    }

    pub fn roi(&self) -> &BoundingBox<F> {
        &self.roi
    }
}

/// Non-negative weights for the four reward components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    default,
    bound(serialize = "F: Serialize", deserialize = "F: serde::Deserialize<'de> + Scalar")
)]
pub struct RewardWeights<F> {
    pub format: F,
    pub accuracy: F,
    pub roi: F,
    pub rephrase: F,
}

impl<F: Scalar> Default for RewardWeights<F> {
    fn default() -> Self {
        Self {
            format: F::one(),
            accuracy: F::one(),
            roi: F::one(),
            rephrase: F::one(),
        }
    }
}

impl<F: Scalar> RewardWeights<F> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("weights.format", self.format),
            ("weights.accuracy", self.accuracy),
            ("weights.roi", self.roi),
            ("weights.rephrase", self.rephrase),
        ] {
            if !v.is_finite() || v < F::zero() {
                return Err(Error::config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Largest attainable total, `sum of weights`.
    pub fn max_total(&self) -> F {
        self.format + self.accuracy + self.roi + self.rephrase
    }
}

/// Full reward-engine configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    default,
    bound(serialize = "F: Serialize", deserialize = "F: serde::Deserialize<'de> + Scalar")
)]
pub struct RewardConfig<F> {
    pub weights: RewardWeights<F>,
    pub roi_threshold: F,
    pub accuracy_mode: AccuracyMode,
}

impl<F: Scalar> Default for RewardConfig<F> {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            roi_threshold: F::of(0.5),
            accuracy_mode: AccuracyMode::Exact,
        }
    }
}

impl<F: Scalar> RewardConfig<F> {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.roi_threshold > F::zero() && self.roi_threshold <= F::one()) {
            return Err(Error::config(format!(
                "roi.threshold must lie in (0, 1], got {}",
                self.roi_threshold
            )));
        }
        Ok(())
    }
}

/// Per-component rewards, diagnostics and the weighted total for one output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<F> {
    pub r_format: F,
    pub r_accuracy: F,
    pub r_roi: F,
    pub r_rephrase: F,
    pub r_total: F,
    /// IoU between the predicted and ground-truth boxes (0 when unparsed).
    pub iou: F,
    /// Cosine similarity between original and rephrased question.
    pub sim_s: F,
    /// New-word ratio of the rephrased question.
    pub ratio_r: F,
}

impl<F: Scalar> RewardBreakdown<F> {
    /// The all-zero breakdown assigned to unparseable outputs.
    pub fn zero() -> Self {
        Self {
            r_format: F::zero(),
            r_accuracy: F::zero(),
            r_roi: F::zero(),
            r_rephrase: F::zero(),
            r_total: F::zero(),
            iou: F::zero(),
            sim_s: F::zero(),
            ratio_r: F::zero(),
        }
    }
}

/// 1 iff the output parsed against the full schema (tags, JSON keys, valid
/// bounding box).
pub fn reward_format<F: Scalar>(outcome: &ParseOutcome<F>) -> F {
    if outcome.is_ok() {
        F::one()
    } else {
        F::zero()
    }
}

/// 1 iff the normalized prediction matches the normalized ground truth
/// (under the configured mode).
pub fn reward_accuracy<F: Scalar>(pred_answer: &str, gt_answer: &str, mode: AccuracyMode) -> F {
    let pred = normalize_answer(pred_answer);
    let gt = normalize_answer(gt_answer);
    let hit = match mode {
        AccuracyMode::Exact => pred == gt,
        AccuracyMode::Contain => pred == gt || pred.contains(&gt),
    };
    if hit {
        F::one()
    } else {
        F::zero()
    }
}

/// 1 iff a predicted box is present and reaches the IoU threshold against
/// the ground-truth region.
pub fn reward_roi<F: Scalar>(
    pred: Option<&BoundingBox<F>>,
    gt: &BoundingBox<F>,
    threshold: F,
) -> F {
    match pred {
        None => F::zero(),
        Some(p) => {
            if iou(p, gt) >= threshold {
                F::one()
            } else {
                F::zero()
            }
        }
    }
}

/// Soft rephrase reward: `(s + r) / 2` with `s` the TF cosine similarity and
/// `r` the new-word ratio, normalized into [0, 1]. Zero whenever the answer
/// was wrong, denying the clarity bonus to incorrect responses.
pub fn reward_rephrase<F: Scalar>(q_orig: &str, q_reph: &str, accuracy: F) -> F {
    if accuracy <= F::zero() {
        return F::zero();
    }
    let s: F = cosine_similarity_tf(q_orig, q_reph);
    let r: F = new_word_ratio(q_orig, q_reph);
    (s + r) / F::of(2.0)
}

/// Score one raw output against its question and ground truth. Parse
/// failures are a valid zero-reward outcome, never an error.
pub fn score<F: Scalar>(
    raw_output: &str,
    question: &str,
    gt: &GroundTruth<F>,
    config: &RewardConfig<F>,
) -> RewardBreakdown<F> {
    let outcome = parse::<F>(raw_output);
    let response = match &outcome {
        Ok(r) => r,
        Err(_) => return RewardBreakdown::zero(),
    };

    let r_format = F::one();
    let r_accuracy = reward_accuracy(response.final_answer(), gt.answer(), config.accuracy_mode);
    let box_iou = iou(response.bbox(), gt.roi());
    let r_roi = if box_iou >= config.roi_threshold {
        F::one()
    } else {
        F::zero()
    };
    let sim_s: F = cosine_similarity_tf(question, response.rephrase_question());
    let ratio_r: F = new_word_ratio(question, response.rephrase_question());
    let r_rephrase = reward_rephrase(question, response.rephrase_question(), r_accuracy);

    let w = &config.weights;
    let r_total =
        w.format * r_format + w.accuracy * r_accuracy + w.roi * r_roi + w.rephrase * r_rephrase;

    RewardBreakdown {
        r_format,
        r_accuracy,
        r_roi,
        r_rephrase,
        r_total,
        iou: box_iou,
        sim_s,
        ratio_r,
    }
}
