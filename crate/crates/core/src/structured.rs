//! Parsing and rendering of the structured response schema: a reasoning
//! trace in `<think>...</think>` followed by an `<answer>...</answer>` block
//! whose body is a JSON object with the keys `rephrase_question`, `bbox_2d`
//! and `final_answer`.

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::bbox::BoundingBox;
use crate::scalar::Scalar;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

const TAGS: [&str; 4] = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];

/// Why a raw output failed to parse. The kind reports the first violated
/// rule in document order: think tags, answer tags, JSON body, required
/// keys (in template order), bounding-box validity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseFailureKind {
    MissingThinkTags,
    MissingAnswerTags,
    MalformedJson,
    MissingKey(String),
    InvalidBBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?}: {detail}")]
pub struct ParseFailure {
    pub kind: ParseFailureKind,
    pub detail: String,
}

impl ParseFailure {
    fn new(kind: ParseFailureKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

pub type ParseOutcome<F> = Result<StructuredResponse<F>, ParseFailure>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResponseError {
    /// A text field contains one of the schema tags, which would make the
    /// rendered string unparseable.
    #[error("field {0} contains the reserved tag {1}")]
    ReservedTag(&'static str, &'static str),
}

/// A parsed model output: think trace, rephrased question, bounding box and
/// final answer. Text fields never contain the schema tags, so rendering
/// and re-parsing is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredResponse<F> {
    think_text: String,
    rephrase_question: String,
    bbox: BoundingBox<F>,
    final_answer: String,
}

impl<F: Scalar> StructuredResponse<F> {
    pub fn new(
        think_text: impl Into<String>,
        rephrase_question: impl Into<String>,
        bbox: BoundingBox<F>,
        final_answer: impl Into<String>,
    ) -> Result<Self, ResponseError> {
        let think_text = think_text.into();
        let rephrase_question = rephrase_question.into();
        let final_answer = final_answer.into();
        for (name, value) in [
            ("think_text", &think_text),
            ("rephrase_question", &rephrase_question),
            ("final_answer", &final_answer),
        ] {
            for tag in TAGS {
                if value.contains(tag) {
                    return Err(ResponseError::ReservedTag(name, tag));
                }
            }
        }
        Ok(Self {
            think_text,
            rephrase_question,
            bbox,
            final_answer,
        })
    }

    pub fn think_text(&self) -> &str {
        &self.think_text
    }

    pub fn rephrase_question(&self) -> &str {
        &self.rephrase_question
    }

    pub fn bbox(&self) -> &BoundingBox<F> {
        &self.bbox
    }

    pub fn final_answer(&self) -> &str {
        &self.final_answer
    }
}

impl<F: Scalar + Serialize> StructuredResponse<F> {
    /// Canonical text form: think block, newline, answer block with the JSON
    /// keys in fixed order. `parse(render(x))` returns `x`.
    pub fn render(&self) -> String {
        #[derive(Serialize)]
        struct Payload<'a, F> {
            rephrase_question: &'a str,
            bbox_2d: [F; 4],
            final_answer: &'a str,
        }
        let payload = Payload {
            rephrase_question: &self.rephrase_question,
            bbox_2d: self.bbox.to_array(),
            final_answer: &self.final_answer,
        };
        let json = serde_json::to_string(&payload).expect("payload serializes");
        format!(
            "{THINK_OPEN}{}{THINK_CLOSE}\n{ANSWER_OPEN}{}{ANSWER_CLOSE}",
            self.think_text, json
        )
    }
}

/// Positions of exactly one `open`/`close` pair, or an explanation of the
/// violation.
fn single_block(
    raw: &str,
    open: &str,
    close: &str,
    not_before: usize,
) -> Result<(usize, usize), String> {
    let opens: Vec<usize> = raw.match_indices(open).map(|(i, _)| i).collect();
    let closes: Vec<usize> = raw.match_indices(close).map(|(i, _)| i).collect();
    if opens.len() != 1 || closes.len() != 1 {
        return Err(format!(
            "expected exactly one {open}...{close} block, found {} opening and {} closing tags",
            opens.len(),
            closes.len()
        ));
    }
    let (start, end) = (opens[0], closes[0]);
    if end < start {
        return Err(format!("{close} appears before {open}"));
    }
    if start < not_before {
        return Err(format!("{open} block must follow the preceding block"));
    }
    Ok((start + open.len(), end))
}

fn string_key(obj: &serde_json::Map<String, Value>, key: &str) -> Result<String, ParseFailure> {
    match obj.get(key) {
        None => Err(ParseFailure::new(
            ParseFailureKind::MissingKey(key.to_owned()),
            format!("answer JSON has no \"{key}\" key"),
        )),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(ParseFailure::new(
            ParseFailureKind::MissingKey(key.to_owned()),
            format!("\"{key}\" must be a string, got {other}"),
        )),
    }
}

/// Parse a raw model output against the response schema. Total over
/// arbitrary UTF-8 input; failures report the first violated rule.
/// Extraneous text outside the tag blocks and unknown JSON keys are
/// tolerated.
pub fn parse<F: Scalar>(raw_output: &str) -> ParseOutcome<F> {
    let (think_start, think_end) = single_block(raw_output, THINK_OPEN, THINK_CLOSE, 0)
        .map_err(|detail| ParseFailure::new(ParseFailureKind::MissingThinkTags, detail))?;
    let think_text = &raw_output[think_start..think_end];

    let after_think = think_end + THINK_CLOSE.len();
    let (ans_start, ans_end) = single_block(raw_output, ANSWER_OPEN, ANSWER_CLOSE, after_think)
        .map_err(|detail| ParseFailure::new(ParseFailureKind::MissingAnswerTags, detail))?;
    let body = raw_output[ans_start..ans_end].trim();

    let value: Value = serde_json::from_str(body)
        .map_err(|e| ParseFailure::new(ParseFailureKind::MalformedJson, e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| {
        ParseFailure::new(
            ParseFailureKind::MalformedJson,
            "answer body is valid JSON but not an object",
        )
    })?;

    let rephrase_question = string_key(obj, "rephrase_question")?;

    let coords = match obj.get("bbox_2d") {
        None => {
            return Err(ParseFailure::new(
                ParseFailureKind::MissingKey("bbox_2d".to_owned()),
                "answer JSON has no \"bbox_2d\" key",
            ))
        }
        Some(Value::Array(items)) => {
            let mut coords = Vec::with_capacity(items.len());
            for item in items {
                let n = item.as_f64().ok_or_else(|| {
                    ParseFailure::new(
                        ParseFailureKind::InvalidBBox,
                        format!("bbox_2d element {item} is not a number"),
                    )
                })?;
                coords.push(F::of(n));
            }
            coords
        }
        Some(other) => {
            return Err(ParseFailure::new(
                ParseFailureKind::MissingKey("bbox_2d".to_owned()),
                format!("\"bbox_2d\" must be an array, got {other}"),
            ))
        }
    };
    let bbox = BoundingBox::from_array(&coords)
        .map_err(|e| ParseFailure::new(ParseFailureKind::InvalidBBox, e.to_string()))?;

    let final_answer = string_key(obj, "final_answer")?;

    // Parse success implies the tag substrings appear exactly once each, so
    // no extracted field can contain them and the constructor cannot fail.
    Ok(
        StructuredResponse::new(think_text, rephrase_question, bbox, final_answer)
            .expect("parsed fields are tag-free"),
    )
}
