//! Synthetic document environment: documents made of keyed text fields at
//! known boxes, QA samples with verifiable ground truth, and the feature
//! encoding the toy policy conditions on.
//!
//! Documents are abstract field lists rather than rasterized images; the
//! reward and optimization math only needs boxes and text. Fields are laid
//! out on a shuffled, jittered grid snapped to a 16x16 cell lattice over
//! the canvas, which keeps boxes disjoint and keeps the best quantized
//! bounding box at IoU 1.0 for the default policy bin count.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::reward::GroundTruth;
use crate::rng::stream;
use crate::scalar::Scalar;

/// Cell lattice the field layout snaps to, per axis.
pub const LAYOUT_CELLS: u32 = 16;

const KEYS: [&str; 10] = [
    "total", "date", "vendor", "amount", "tax", "status", "owner", "category", "region", "invoice",
];
const VALUES: [&str; 12] = [
    "42", "blue", "paris", "alpha", "2024", "pending", "north", "zebra", "nine", "crimson", "oak",
    "delta",
];
const DESCRIPTORS: [&str; 8] = [
    "near the header",
    "in the left column",
    "beside the logo",
    "under the title",
    "at the bottom margin",
    "inside the summary panel",
    "next to the official seal",
    "within the highlighted row",
];

/// Question template words, kept disjoint from field keys.
const QUESTION_WORDS: [&str; 3] = ["what", "is", "the"];

/// The small fixed vocabulary documents draw from. The seed shuffles the
/// built-in lists so differently seeded environments enumerate them in a
/// different deterministic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub keys: Vec<String>,
    pub values: Vec<String>,
    pub descriptors: Vec<String>,
}

impl Vocab {
    pub fn builtin(vocab_seed: u64) -> Self {
        let mut rng = stream(vocab_seed, &[0x766f_6361]);
        let shuffle = |items: &[&str], rng: &mut ChaCha8Rng| {
            let mut v: Vec<String> = items.iter().map(|s| s.to_string()).collect();
            for i in (1..v.len()).rev() {
                let j = rng.gen_range(0..=i);
                v.swap(i, j);
            }
            v
        };
        Self {
            keys: shuffle(&KEYS, &mut rng),
            values: shuffle(&VALUES, &mut rng),
            descriptors: shuffle(&DESCRIPTORS, &mut rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub n_fields: usize,
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub vocab_seed: u64,
    /// Default dataset sizes used by the end-to-end run.
    pub train_size: usize,
    pub eval_size: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_fields: 4,
            canvas_width: 512,
            canvas_height: 512,
            vocab_seed: 0,
            train_size: 1000,
            eval_size: 200,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fields < 1 {
            return Err(Error::config("env.n_fields must be at least 1"));
        }
        if self.n_fields > KEYS.len() {
            return Err(Error::config(format!(
                "env.n_fields must not exceed the key vocabulary size {}",
                KEYS.len()
            )));
        }
        if self.canvas_width < 64 || self.canvas_height < 64 {
            return Err(Error::config(format!(
                "canvas too small to place fields: {}x{} (minimum 64x64)",
                self.canvas_width, self.canvas_height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Serialize + Scalar", deserialize = "F: serde::Deserialize<'de> + Scalar"))]
pub struct Field<F> {
    pub key: String,
    pub value: String,
    pub bbox: BoundingBox<F>,
    pub descriptors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Serialize + Scalar", deserialize = "F: serde::Deserialize<'de> + Scalar"))]
pub struct SynthDoc<F> {
    pub width: u32,
    pub height: u32,
    pub fields: Vec<Field<F>>,
}

impl<F: Scalar> SynthDoc<F> {
    /// Check the document invariants: boxes inside the canvas, pairwise
    /// IoU at most 0.3, unique keys.
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (F::of(self.width as f64), F::of(self.height as f64));
        let mut keys = BTreeSet::new();
        for f in &self.fields {
            if !keys.insert(&f.key) {
                return Err(Error::data(format!("duplicate field key {}", f.key)));
            }
            if f.bbox.x_max() > w || f.bbox.y_max() > h {
                return Err(Error::data(format!(
                    "field {} extends beyond the canvas",
                    f.key
                )));
            }
        }
        let limit = F::of(0.3);
        for (i, a) in self.fields.iter().enumerate() {
            for b in &self.fields[i + 1..] {
                if crate::bbox::iou(&a.bbox, &b.bbox) > limit {
                    return Err(Error::data(format!(
                        "fields {} and {} overlap with IoU above 0.3",
                        a.key, b.key
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn field(&self, key: &str) -> Option<&Field<F>> {
        self.fields.iter().find(|f| f.key == key)
    }
}

/// One synthetic question over a document, with verifiable ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct QaSample<F> {
    pub id: String,
    pub doc: SynthDoc<F>,
    pub question: String,
    pub gt: GroundTruth<F>,
    pub target_key: String,
}

/// Generator over one environment configuration.
#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    vocab: Vocab,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let vocab = Vocab::builtin(config.vocab_seed);
        Ok(Self { config, vocab })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Generate one document: `n_fields` disjoint fields on a shuffled
    /// jittered grid, keys and values drawn from the vocabulary.
    pub fn gen_document<F: Scalar>(&self, rng: &mut ChaCha8Rng) -> Result<SynthDoc<F>> {
        let cfg = &self.config;
        let n = cfg.n_fields;
        // smallest square grid holding n fields
        let grid = (1..=LAYOUT_CELLS)
            .find(|g| (g * g) as usize >= n)
            .expect("n_fields validated against vocabulary size")
            .max(2);
        let slot_cells = LAYOUT_CELLS / grid;
        if slot_cells < 4 {
            return Err(Error::data(format!(
                "canvas layout cannot place {n} fields: slots of {slot_cells} cells are too small"
            )));
        }
        let size_lo = (slot_cells - 3).max(3);
        let size_hi = slot_cells - 1;

        let cell_w = cfg.canvas_width as f64 / LAYOUT_CELLS as f64;
        let cell_h = cfg.canvas_height as f64 / LAYOUT_CELLS as f64;

        let key_picks = index_sample(rng, self.vocab.keys.len(), n);
        let slot_picks = index_sample(rng, (grid * grid) as usize, n);

        let mut fields = Vec::with_capacity(n);
        for (key_idx, slot_idx) in key_picks.iter().zip(slot_picks.iter()) {
            let key = self.vocab.keys[key_idx].clone();
            let value = self.vocab.values[rng.gen_range(0..self.vocab.values.len())].clone();
            let n_desc = rng.gen_range(1..=2usize);
            let descriptors: Vec<String> = index_sample(rng, self.vocab.descriptors.len(), n_desc)
                .iter()
                .map(|i| self.vocab.descriptors[i].clone())
                .collect();

            let (sx, sy) = (slot_idx as u32 % grid, slot_idx as u32 / grid);
            let w_cells = rng.gen_range(size_lo..=size_hi);
            let h_cells = rng.gen_range(size_lo..=size_hi);
            let dx = rng.gen_range(0..=(slot_cells - w_cells));
            let dy = rng.gen_range(0..=(slot_cells - h_cells));
            let x0 = (sx * slot_cells + dx) as f64 * cell_w;
            let y0 = (sy * slot_cells + dy) as f64 * cell_h;
            let x1 = x0 + w_cells as f64 * cell_w;
            let y1 = y0 + h_cells as f64 * cell_h;
            let bbox = BoundingBox::new(F::of(x0), F::of(y0), F::of(x1), F::of(y1))
                .map_err(|e| Error::data(format!("field placement produced {e}")))?;

            fields.push(Field {
                key,
                value,
                bbox,
                descriptors,
            });
        }

        let doc = SynthDoc {
            width: cfg.canvas_width,
            height: cfg.canvas_height,
            fields,
        };
        doc.validate()?;
        Ok(doc)
    }

    /// Build one QA sample over a document: a uniformly chosen target field,
    /// the templated question, and ground truth taken from the field.
    pub fn gen_sample<F: Scalar>(
        &self,
        id: impl Into<String>,
        doc: SynthDoc<F>,
        rng: &mut ChaCha8Rng,
    ) -> QaSample<F> {
        let target = rng.gen_range(0..doc.fields.len());
        let field = &doc.fields[target];
        let question = format!("What is the {}?", field.key);
        let gt = GroundTruth::new(field.value.clone(), field.bbox)
            .expect("vocabulary values are non-empty");
        let target_key = field.key.clone();
        QaSample {
            id: id.into(),
            doc,
            question,
            gt,
            target_key,
        }
    }

    /// Deterministic dataset: sample `i` is generated from an RNG stream
    /// derived from `(seed, i)`, independent of every other sample.
    pub fn gen_dataset<F: Scalar>(&self, n: usize, seed: u64) -> Result<Vec<QaSample<F>>> {
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = stream(seed, &[0x646f_6373, i as u64]);
            let doc = self.gen_document(&mut rng)?;
            samples.push(self.gen_sample(format!("q{i:05}"), doc, &mut rng));
        }
        Ok(samples)
    }
}

// --- JSONL dataset schema -------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "F: Serialize + Scalar", deserialize = "F: serde::Deserialize<'de> + Scalar"))]
struct DatasetRecord<F> {
    id: String,
    question: String,
    answer: String,
    bbox: BoundingBox<F>,
    doc: SynthDoc<F>,
}

impl<F: Scalar> From<&QaSample<F>> for DatasetRecord<F> {
    fn from(s: &QaSample<F>) -> Self {
        DatasetRecord {
            id: s.id.clone(),
            question: s.question.clone(),
            answer: s.gt.answer().to_owned(),
            bbox: *s.gt.roi(),
            doc: s.doc.clone(),
        }
    }
}

impl<F: Scalar> DatasetRecord<F> {
    fn into_sample(self) -> Result<QaSample<F>> {
        self.doc.validate()?;
        let target = self
            .doc
            .fields
            .iter()
            .find(|f| f.bbox == self.bbox && f.value == self.answer)
            .ok_or_else(|| {
                Error::data(format!(
                    "record {}: ground truth does not match any document field",
                    self.id
                ))
            })?;
        let target_key = target.key.clone();
        let gt = GroundTruth::new(self.answer, self.bbox)?;
        Ok(QaSample {
            id: self.id,
            doc: self.doc,
            question: self.question,
            gt,
            target_key,
        })
    }
}

pub fn write_dataset<F: Scalar + Serialize>(path: &Path, samples: &[QaSample<F>]) -> Result<()> {
    let records: Vec<DatasetRecord<F>> = samples.iter().map(DatasetRecord::from).collect();
    jsonl::write_jsonl(path, &records)
}

pub fn read_dataset<F: Scalar + serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<Vec<QaSample<F>>> {
    let records: Vec<DatasetRecord<F>> = jsonl::read_jsonl(path)?;
    records.into_iter().map(DatasetRecord::into_sample).collect()
}

// --- Prompt features -------------------------------------------------------

/// Fixed-dimension, order-invariant encoding of one sample: a bag of
/// question tokens, per-document key and descriptor indicators, and the
/// content of the queried field (value identity, quantized box cells and
/// descriptors), resolved by matching question tokens against field keys.
/// The queried-field block is the desk-scale stand-in for reading the
/// document; without it no fixed linear policy could bind the question to
/// the right field content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    question_tokens: Vec<String>,
    keys: Vec<String>,
    values: Vec<String>,
    descriptors: Vec<String>,
    bins: usize,
}

impl FeatureExtractor {
    pub fn new(vocab: &Vocab, bins: usize) -> Self {
        let mut question_tokens: Vec<String> =
            QUESTION_WORDS.iter().map(|s| s.to_string()).collect();
        question_tokens.extend(vocab.keys.iter().cloned());
        Self {
            question_tokens,
            keys: vocab.keys.clone(),
            values: vocab.values.clone(),
            descriptors: vocab.descriptors.clone(),
            bins,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Feature dimension: bias, question bag (+1 OOV slot), key indicators,
    /// document descriptor indicators, target value one-hot (+1 none slot),
    /// four blocks of target box cell indicators, target descriptor
    /// indicators.
    pub fn dim(&self) -> usize {
        1 + (self.question_tokens.len() + 1)
            + self.keys.len()
            + self.descriptors.len()
            + (self.values.len() + 1)
            + 4 * self.bins
            + self.descriptors.len()
    }

    pub fn features<F: Scalar>(&self, sample: &QaSample<F>) -> Vec<F> {
        let mut x = vec![F::zero(); self.dim()];
        x[0] = F::one();
        let q_bag = 1;
        let oov = q_bag + self.question_tokens.len();
        let keys_at = oov + 1;
        let descs_at = keys_at + self.keys.len();
        let value_at = descs_at + self.descriptors.len();
        let value_none = value_at + self.values.len();
        let bins_at = value_none + 1;
        let target_desc_at = bins_at + 4 * self.bins;

        let tokens = crate::text::tokenize(&sample.question);
        for tok in &tokens {
            match self.question_tokens.iter().position(|t| t == tok) {
                Some(i) => x[q_bag + i] = x[q_bag + i] + F::one(),
                None => x[oov] = x[oov] + F::one(),
            }
        }

        for field in &sample.doc.fields {
            if let Some(i) = self.keys.iter().position(|k| *k == field.key) {
                x[keys_at + i] = F::one();
            }
            for d in &field.descriptors {
                if let Some(i) = self.descriptors.iter().position(|v| v == d) {
                    x[descs_at + i] = F::one();
                }
            }
        }

        // resolve the queried field from the question text alone
        let token_set: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();
        let mut matches = sample
            .doc
            .fields
            .iter()
            .filter(|f| token_set.contains(f.key.to_lowercase().as_str()));
        let target = match (matches.next(), matches.next()) {
            (Some(f), None) => Some(f),
            _ => None,
        };

        match target {
            None => x[value_none] = F::one(),
            Some(field) => {
                match self.values.iter().position(|v| *v == field.value) {
                    Some(i) => x[value_at + i] = F::one(),
                    None => x[value_none] = F::one(),
                }
                let cells = self.quantize(&field.bbox, sample.doc.width, sample.doc.height);
                for (axis, cell) in cells.iter().enumerate() {
                    x[bins_at + axis * self.bins + cell] = F::one();
                }
                for d in &field.descriptors {
                    if let Some(i) = self.descriptors.iter().position(|v| v == d) {
                        x[target_desc_at + i] = F::one();
                    }
                }
            }
        }
        x
    }

    /// Cover quantization of a box onto the bin lattice:
    /// `(x_min_cell, y_min_cell, x_max_cell, y_max_cell)` with the max cells
    /// inclusive.
    pub fn quantize<F: Scalar>(&self, bbox: &BoundingBox<F>, width: u32, height: u32) -> [usize; 4] {
        let quant = |lo: F, hi: F, extent: u32| -> (usize, usize) {
            let cell = extent as f64 / self.bins as f64;
            let lo_cell = (lo.lossy_f64() / cell).floor() as i64;
            let hi_cell = (hi.lossy_f64() / cell).ceil() as i64 - 1;
            let clamp = |v: i64| v.clamp(0, self.bins as i64 - 1) as usize;
            (clamp(lo_cell), clamp(hi_cell.max(lo_cell)))
        };
        let (x0, x1) = quant(bbox.x_min(), bbox.x_max(), width);
        let (y0, y1) = quant(bbox.y_min(), bbox.y_max(), height);
        [x0, y0, x1, y1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> Environment {
        Environment::new(EnvConfig::default()).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        stream(seed, &[1])
    }

    #[test]
    fn documents_are_deterministic() {
        let e = env();
        let a: SynthDoc<f64> = e.gen_document(&mut rng(7)).unwrap();
        let b: SynthDoc<f64> = e.gen_document(&mut rng(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_field_document_is_valid() {
        let e = Environment::new(EnvConfig {
            n_fields: 1,
            ..EnvConfig::default()
        })
        .unwrap();
        let doc: SynthDoc<f64> = e.gen_document(&mut rng(3)).unwrap();
        assert_eq!(doc.fields.len(), 1);
        doc.validate().unwrap();
    }

    #[test]
    fn random_documents_respect_invariants() {
        let e = env();
        for i in 0..1000u64 {
            let doc: SynthDoc<f64> = e.gen_document(&mut rng(i)).unwrap();
            doc.validate().unwrap();
            assert_eq!(doc.fields.len(), 4);
        }
    }

    #[test]
    fn too_small_canvas_is_rejected() {
        let err = Environment::new(EnvConfig {
            canvas_width: 32,
            ..EnvConfig::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("canvas too small"));
    }

    #[test]
    fn samples_use_the_target_field() {
        let e = env();
        let mut r = rng(11);
        let doc: SynthDoc<f64> = e.gen_document(&mut r).unwrap();
        let sample = e.gen_sample("s0", doc, &mut r);
        let field = sample.doc.field(&sample.target_key).unwrap();
        assert_eq!(sample.question, format!("What is the {}?", field.key));
        assert_eq!(sample.gt.answer(), field.value);
        assert_eq!(sample.gt.roi(), &field.bbox);
    }

    #[test]
    fn target_choice_is_roughly_uniform() {
        let e = env();
        let doc: SynthDoc<f64> = e.gen_document(&mut rng(5)).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        let n = 10_000;
        for i in 0..n {
            let mut r = stream(99, &[i]);
            let s = e.gen_sample("x", doc.clone(), &mut r);
            *counts.entry(s.target_key).or_insert(0usize) += 1;
        }
        let expect = n as f64 / 4.0;
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for (key, count) in counts {
            assert!(
                (count as f64 - expect).abs() <= 3.0 * sigma,
                "target {key} drawn {count} times, expected about {expect}"
            );
        }
    }

    #[test]
    fn dataset_round_trips_through_jsonl() {
        let e = env();
        let samples: Vec<QaSample<f64>> = e.gen_dataset(25, 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_dataset(&path, &samples).unwrap();
        let back: Vec<QaSample<f64>> = read_dataset(&path).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn dataset_generation_is_deterministic() {
        let e = env();
        let a: Vec<QaSample<f64>> = e.gen_dataset(10, 1).unwrap();
        let b: Vec<QaSample<f64>> = e.gen_dataset(10, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn features_are_deterministic_and_order_invariant() {
        let e = env();
        let fx = FeatureExtractor::new(e.vocab(), 16);
        let mut r = rng(23);
        let doc: SynthDoc<f64> = e.gen_document(&mut r).unwrap();
        let sample = e.gen_sample("s", doc, &mut r);

        let a: Vec<f64> = fx.features(&sample);
        let b: Vec<f64> = fx.features(&sample);
        assert_eq!(a, b);

        let mut permuted = sample.clone();
        permuted.doc.fields.reverse();
        let c: Vec<f64> = fx.features(&permuted);
        assert_eq!(a, c);
        assert_eq!(a.len(), fx.dim());
    }

    #[test]
    fn feature_dim_matches_layout() {
        let e = env();
        let fx = FeatureExtractor::new(e.vocab(), 16);
        // bias + (13 question tokens + oov) + 10 keys + 8 descriptors
        //  + (12 values + none) + 4*16 bins + 8 target descriptors
        assert_eq!(fx.dim(), 1 + 14 + 10 + 8 + 13 + 64 + 8);
    }

    #[test]
    fn quantization_covers_snapped_boxes_exactly() {
        let e = env();
        let fx = FeatureExtractor::new(e.vocab(), 16);
        let doc: SynthDoc<f64> = e.gen_document(&mut rng(31)).unwrap();
        for f in &doc.fields {
            let [x0, y0, x1, y1] = fx.quantize(&f.bbox, doc.width, doc.height);
            let cell_w = doc.width as f64 / 16.0;
            let cell_h = doc.height as f64 / 16.0;
            assert!((x0 as f64 * cell_w - f.bbox.x_min()).abs() < 1e-9);
            assert!(((x1 + 1) as f64 * cell_w - f.bbox.x_max()).abs() < 1e-9);
            assert!((y0 as f64 * cell_h - f.bbox.y_min()).abs() < 1e-9);
            assert!(((y1 + 1) as f64 * cell_h - f.bbox.y_max()).abs() < 1e-9);
        }
    }

    #[test]
    fn vocab_seed_changes_enumeration_order_only() {
        let a = Vocab::builtin(0);
        let b = Vocab::builtin(1);
        let sorted = |v: &[String]| {
            let mut v = v.to_vec();
            v.sort();
            v
        };
        assert_eq!(sorted(&a.keys), sorted(&b.keys));
        assert_ne!(a, b);
    }
}
