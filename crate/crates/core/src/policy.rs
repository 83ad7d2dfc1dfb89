//! The desk-scale policy: independent softmax-linear heads over a
//! slot-filling action space, with hand-derived gradients so the full
//! training loop runs without any neural framework.
//!
//! One action fills: an output template (one valid rendering plus three
//! deliberately malformed ones, so format failures stay reachable), an
//! answer token from the value vocabulary, four quantized bounding-box
//! coordinates, and a subset of descriptor phrases for the rephrased
//! question. Each decision head is `softmax(W_h . features)`; the per-head
//! decisions are the "tokens" of one sampled output, each carrying its own
//! log-probability.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::bbox::{iou, BoundingBox};
use crate::error::{Error, Result};
use crate::optim::OptimizerState;
use crate::scalar::Scalar;
use crate::structured::StructuredResponse;
use crate::synth::{QaSample, Vocab};

/// Output templates: index 0 renders the valid schema, the rest are
/// malformed in a designed way.
pub const N_TEMPLATES: usize = 4;
pub const TEMPLATE_VALID: usize = 0;
/// Renders without think tags.
pub const TEMPLATE_NO_THINK: usize = 1;
/// Renders without the closing answer tag.
pub const TEMPLATE_UNCLOSED_ANSWER: usize = 2;
/// Renders broken JSON inside the answer block.
pub const TEMPLATE_BROKEN_JSON: usize = 3;

/// Action space geometry shared between the policy, the renderer and the
/// feature extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSpace {
    pub vocab: Vocab,
    pub bbox_bins: usize,
    pub canvas_width: u32,
    pub canvas_height: u32,
}

impl SlotSpace {
    pub fn new(vocab: Vocab, bbox_bins: usize, canvas_width: u32, canvas_height: u32) -> Result<Self> {
        if bbox_bins < 2 || bbox_bins > 64 {
            return Err(Error::config(format!(
                "policy.bbox_bins must lie in [2, 64], got {bbox_bins}"
            )));
        }
        if canvas_width < 64 || canvas_height < 64 {
            return Err(Error::config("canvas must be at least 64x64"));
        }
        Ok(Self {
            vocab,
            bbox_bins,
            canvas_width,
            canvas_height,
        })
    }

    /// Sizes of the categorical decision heads, in decision order:
    /// template, answer token, four box coordinates, one binary head per
    /// descriptor.
    pub fn head_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![N_TEMPLATES, self.vocab.values.len()];
        sizes.extend([self.bbox_bins; 4]);
        sizes.extend(vec![2; self.vocab.descriptors.len()]);
        sizes
    }

    /// Number of decisions (tokens) in one action.
    pub fn decisions(&self) -> usize {
        6 + self.vocab.descriptors.len()
    }

    fn cell_size(&self) -> (f64, f64) {
        (
            self.canvas_width as f64 / self.bbox_bins as f64,
            self.canvas_height as f64 / self.bbox_bins as f64,
        )
    }

    /// Decode four coordinate bins into a pixel box. Order-free on each
    /// axis: the pair is sorted and the upper cell edge is exclusive, so
    /// every bin combination yields a valid box.
    pub fn decode_bbox<F: Scalar>(&self, bins: [usize; 4]) -> BoundingBox<F> {
        let (cw, ch) = self.cell_size();
        let (x_lo, x_hi) = (bins[0].min(bins[2]), bins[0].max(bins[2]));
        let (y_lo, y_hi) = (bins[1].min(bins[3]), bins[1].max(bins[3]));
        BoundingBox::new(
            F::of(x_lo as f64 * cw),
            F::of(y_lo as f64 * ch),
            F::of((x_hi + 1) as f64 * cw),
            F::of((y_hi + 1) as f64 * ch),
        )
        .expect("cell-aligned boxes are always valid")
    }
}

/// One sampled action over the slot space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotAction {
    pub template_id: usize,
    pub answer_token: usize,
    pub bbox_bins: [usize; 4],
    pub descriptor_mask: Vec<bool>,
}

impl SlotAction {
    /// Flatten into per-head action indices, in decision order.
    pub fn indices(&self) -> Vec<usize> {
        let mut idx = vec![self.template_id, self.answer_token];
        idx.extend(self.bbox_bins);
        idx.extend(self.descriptor_mask.iter().map(|&on| usize::from(on)));
        idx
    }

    pub fn from_indices(indices: &[usize], space: &SlotSpace) -> Result<Self> {
        if indices.len() != space.decisions() {
            return Err(Error::numeric(format!(
                "action has {} decisions, space expects {}",
                indices.len(),
                space.decisions()
            )));
        }
        Ok(Self {
            template_id: indices[0],
            answer_token: indices[1],
            bbox_bins: [indices[2], indices[3], indices[4], indices[5]],
            descriptor_mask: indices[6..].iter().map(|&i| i == 1).collect(),
        })
    }

    pub fn validate(&self, space: &SlotSpace) -> Result<()> {
        let sizes = space.head_sizes();
        let indices = self.indices();
        if indices.len() != sizes.len() {
            return Err(Error::numeric("action arity does not match the slot space"));
        }
        for (t, (&idx, &size)) in indices.iter().zip(&sizes).enumerate() {
            if idx >= size {
                return Err(Error::numeric(format!(
                    "decision {t} index {idx} out of range {size}"
                )));
            }
        }
        Ok(())
    }
}

/// Behavioral contract every trainable policy fulfills: sampling with
/// per-decision log-probs, re-scoring of given actions, accumulation of
/// `sum_t c_t * grad log pi_t` into a parameter gradient, and optimizer
/// updates. `snapshot` yields a frozen evaluable copy for use as the
/// reference or old policy.
pub trait Policy<F: Scalar>: Clone {
    fn decisions(&self) -> usize;
    fn num_params(&self) -> usize;
    fn sample(&self, features: &[F], rng: &mut ChaCha8Rng) -> Result<(SlotAction, Vec<F>)>;
    fn logprobs(&self, features: &[F], action: &SlotAction) -> Result<Vec<F>>;
    fn add_scaled_grad_logprob(
        &self,
        features: &[F],
        action: &SlotAction,
        coeffs: &[F],
        grad: &mut [F],
    ) -> Result<()>;
    fn apply_update(&mut self, grad: &[F], optimizer: &mut OptimizerState<F>) -> Result<()>;

    fn snapshot(&self) -> Self {
        self.clone()
    }
}

/// Softmax-linear policy: one weight matrix per head over a shared feature
/// vector, zero-initialized (uniform distributions).
#[derive(Debug, Clone, PartialEq)]
pub struct SlotPolicy<F> {
    space: SlotSpace,
    feat_dim: usize,
    head_sizes: Vec<usize>,
    head_offsets: Vec<usize>,
    params: Vec<F>,
}

impl<F: Scalar> SlotPolicy<F> {
    pub fn new(space: SlotSpace, feat_dim: usize) -> Self {
        let head_sizes = space.head_sizes();
        let mut head_offsets = Vec::with_capacity(head_sizes.len());
        let mut offset = 0;
        for &size in &head_sizes {
            head_offsets.push(offset);
            offset += size * feat_dim;
        }
        Self {
            space,
            feat_dim,
            head_sizes,
            head_offsets,
            params: vec![F::zero(); offset],
        }
    }

    pub fn from_params(space: SlotSpace, feat_dim: usize, params: Vec<F>) -> Result<Self> {
        let mut policy = Self::new(space, feat_dim);
        if params.len() != policy.params.len() {
            return Err(Error::data(format!(
                "checkpoint has {} parameters, space expects {}",
                params.len(),
                policy.params.len()
            )));
        }
        policy.params = params;
        Ok(policy)
    }

    pub fn space(&self) -> &SlotSpace {
        &self.space
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    fn check_features(&self, features: &[F]) -> Result<()> {
        if features.len() != self.feat_dim {
            return Err(Error::numeric(format!(
                "feature vector has dimension {}, policy expects {}",
                features.len(),
                self.feat_dim
            )));
        }
        Ok(())
    }

    fn head_logits(&self, features: &[F], head: usize) -> Vec<F> {
        let size = self.head_sizes[head];
        let base = self.head_offsets[head];
        let mut logits = vec![F::zero(); size];
        for (f, &x) in features.iter().enumerate() {
            if x == F::zero() {
                continue;
            }
            for (a, logit) in logits.iter_mut().enumerate() {
                *logit = *logit + self.params[base + a * self.feat_dim + f] * x;
            }
        }
        logits
    }

    fn head_logprobs(&self, features: &[F], head: usize) -> Vec<F> {
        let mut logits = self.head_logits(features, head);
        let max = logits
            .iter()
            .fold(F::neg_infinity(), |acc, &v| acc.max(v));
        let lse = max
            + logits
                .iter()
                .map(|&v| (v - max).exp())
                .fold(F::zero(), |acc, v| acc + v)
                .ln();
        for v in logits.iter_mut() {
            *v = *v - lse;
        }
        logits
    }

    /// Per-head categorical distributions (probabilities).
    pub fn forward(&self, features: &[F]) -> Result<Vec<Vec<F>>> {
        self.check_features(features)?;
        Ok((0..self.head_sizes.len())
            .map(|h| {
                self.head_logprobs(features, h)
                    .into_iter()
                    .map(|lp| lp.exp())
                    .collect()
            })
            .collect())
    }

    /// Deterministic argmax action, used for prediction.
    pub fn greedy(&self, features: &[F]) -> Result<SlotAction> {
        self.check_features(features)?;
        let mut indices = Vec::with_capacity(self.head_sizes.len());
        for h in 0..self.head_sizes.len() {
            let logits = self.head_logits(features, h);
            let mut best = 0;
            for (a, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = a;
                }
            }
            indices.push(best);
        }
        SlotAction::from_indices(&indices, &self.space)
    }
}

impl<F: Scalar> Policy<F> for SlotPolicy<F> {
    fn decisions(&self) -> usize {
        self.head_sizes.len()
    }

    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn sample(&self, features: &[F], rng: &mut ChaCha8Rng) -> Result<(SlotAction, Vec<F>)> {
        self.check_features(features)?;
        let mut indices = Vec::with_capacity(self.head_sizes.len());
        let mut logps = Vec::with_capacity(self.head_sizes.len());
        for h in 0..self.head_sizes.len() {
            let logprobs = self.head_logprobs(features, h);
            let u = F::of(rng.gen::<f64>());
            let mut acc = F::zero();
            let mut chosen = logprobs.len() - 1;
            for (a, &lp) in logprobs.iter().enumerate() {
                acc = acc + lp.exp();
                if u < acc {
                    chosen = a;
                    break;
                }
            }
            indices.push(chosen);
            logps.push(logprobs[chosen]);
        }
        let action = SlotAction::from_indices(&indices, &self.space)?;
        Ok((action, logps))
    }

    fn logprobs(&self, features: &[F], action: &SlotAction) -> Result<Vec<F>> {
        self.check_features(features)?;
        action.validate(&self.space)?;
        Ok(action
            .indices()
            .iter()
            .enumerate()
            .map(|(h, &a)| self.head_logprobs(features, h)[a])
            .collect())
    }

    fn add_scaled_grad_logprob(
        &self,
        features: &[F],
        action: &SlotAction,
        coeffs: &[F],
        grad: &mut [F],
    ) -> Result<()> {
        self.check_features(features)?;
        action.validate(&self.space)?;
        if coeffs.len() != self.head_sizes.len() {
            return Err(Error::numeric(format!(
                "got {} per-decision coefficients for {} decisions",
                coeffs.len(),
                self.head_sizes.len()
            )));
        }
        if grad.len() != self.params.len() {
            return Err(Error::numeric("gradient buffer size mismatch"));
        }
        for (h, &chosen) in action.indices().iter().enumerate() {
            let c = coeffs[h];
            if c == F::zero() {
                continue;
            }
            let probs: Vec<F> = self
                .head_logprobs(features, h)
                .into_iter()
                .map(|lp| lp.exp())
                .collect();
            let base = self.head_offsets[h];
            for (f, &x) in features.iter().enumerate() {
                if x == F::zero() {
                    continue;
                }
                for (a, &p) in probs.iter().enumerate() {
                    let indicator = if a == chosen { F::one() } else { F::zero() };
                    let slot = base + a * self.feat_dim + f;
                    grad[slot] = grad[slot] + c * (indicator - p) * x;
                }
            }
        }
        Ok(())
    }

    fn apply_update(&mut self, grad: &[F], optimizer: &mut OptimizerState<F>) -> Result<()> {
        optimizer.apply(&mut self.params, grad)
    }
}

/// Gradient of `sum_t log pi(action_t)` with respect to the parameters:
/// for each head, `(onehot(action) - probs) (x) features`.
pub fn grad_logprob<F: Scalar, P: Policy<F>>(
    policy: &P,
    features: &[F],
    action: &SlotAction,
) -> Result<Vec<F>> {
    let mut grad = vec![F::zero(); policy.num_params()];
    let ones = vec![F::one(); policy.decisions()];
    policy.add_scaled_grad_logprob(features, action, &ones, &mut grad)?;
    Ok(grad)
}

// --- Rendering -------------------------------------------------------------

/// Decode an action into raw output text for a question. The valid template
/// goes through the canonical renderer; malformed templates produce their
/// designed schema violation.
pub fn render_action<F: Scalar + Serialize>(
    space: &SlotSpace,
    action: &SlotAction,
    question: &str,
) -> Result<String> {
    action.validate(space)?;
    let answer = space
        .vocab
        .values
        .get(action.answer_token)
        .ok_or_else(|| Error::numeric("answer token out of vocabulary"))?
        .clone();
    let bbox: BoundingBox<F> = space.decode_bbox(action.bbox_bins);
    let rephrase = rephrase_text(space, action, question);
    let think = format!("The question asks about a document field. {question}");

    let response = StructuredResponse::<F>::new(&think, &rephrase, bbox, &answer)
        .map_err(|e| Error::data(format!("unrenderable slot content: {e}")))?;
    let valid = response.render();

    Ok(match action.template_id {
        TEMPLATE_VALID => valid,
        TEMPLATE_NO_THINK => {
            let body = valid
                .split_once('\n')
                .map(|(_, rest)| rest.to_owned())
                .unwrap_or(valid);
            body
        }
        TEMPLATE_UNCLOSED_ANSWER => valid
            .strip_suffix("</answer>")
            .map(str::to_owned)
            .unwrap_or(valid),
        TEMPLATE_BROKEN_JSON => {
            format!("<think>{think}</think>\n<answer>{{\"rephrase_question\": </answer>")
        }
        other => return Err(Error::numeric(format!("unknown template id {other}"))),
    })
}

/// The rephrase the renderer emits: the original question followed by the
/// selected descriptor phrases, in vocabulary order.
pub fn rephrase_text(space: &SlotSpace, action: &SlotAction, question: &str) -> String {
    let selected: Vec<&str> = action
        .descriptor_mask
        .iter()
        .zip(&space.vocab.descriptors)
        .filter_map(|(&on, d)| on.then_some(d.as_str()))
        .collect();
    if selected.is_empty() {
        question.to_owned()
    } else {
        format!("{} {}", question, selected.join(" "))
    }
}

// --- Oracle action ----------------------------------------------------------

/// Constructively build the best action for a sample: valid template, the
/// ground-truth value token, the bin box maximizing IoU with the target
/// region (exhaustive search over bin pairs), and the target field's
/// descriptors. Returns `None` when the answer value is outside the
/// vocabulary.
pub fn oracle_action<F: Scalar>(space: &SlotSpace, sample: &QaSample<F>) -> Option<SlotAction> {
    let answer_token = space
        .vocab
        .values
        .iter()
        .position(|v| v == sample.gt.answer())?;

    let bins = space.bbox_bins;
    let gt = sample.gt.roi();
    let mut best = ([0usize; 4], F::neg_infinity());
    for x_lo in 0..bins {
        for x_hi in x_lo..bins {
            for y_lo in 0..bins {
                for y_hi in y_lo..bins {
                    let candidate: BoundingBox<F> =
                        space.decode_bbox([x_lo, y_lo, x_hi, y_hi]);
                    let v = iou(&candidate, gt);
                    if v > best.1 {
                        best = ([x_lo, y_lo, x_hi, y_hi], v);
                    }
                }
            }
        }
    }

    let target = sample.doc.field(&sample.target_key)?;
    let descriptor_mask = space
        .vocab
        .descriptors
        .iter()
        .map(|d| target.descriptors.contains(d))
        .collect();

    Some(SlotAction {
        template_id: TEMPLATE_VALID,
        answer_token,
        bbox_bins: best.0,
        descriptor_mask,
    })
}

// --- Checkpointing -----------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned dump of the policy and optimizer: parameters, vocabularies,
/// bin configuration and optimizer state. `load(save(x)) == x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Serialize", deserialize = "F: serde::Deserialize<'de> + Scalar"))]
pub struct Checkpoint<F> {
    pub version: u32,
    pub space: SlotSpace,
    pub feat_dim: usize,
    pub params: Vec<F>,
    pub optimizer: OptimizerState<F>,
}

impl<F: Scalar + Serialize + serde::de::DeserializeOwned> Checkpoint<F> {
    pub fn new(policy: &SlotPolicy<F>, optimizer: &OptimizerState<F>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            space: policy.space().clone(),
            feat_dim: policy.feat_dim(),
            params: policy.params().to_vec(),
            optimizer: optimizer.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::data(format!("cannot serialize checkpoint: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Self = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("cannot parse checkpoint: {e}")))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::data(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn into_parts(self) -> Result<(SlotPolicy<F>, OptimizerState<F>)> {
        let policy = SlotPolicy::from_params(self.space, self.feat_dim, self.params)?;
        Ok((policy, self.optimizer))
    }
}
