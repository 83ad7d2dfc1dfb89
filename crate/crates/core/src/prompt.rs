//! Prompt construction from the template asset shipped under `assets/`.
//! The template carries a literal `{Question}` placeholder that is replaced
//! verbatim, without escaping.

use std::path::Path;

use crate::error::{Error, Result};

pub const QUESTION_PLACEHOLDER: &str = "{Question}";

/// Path of the template asset inside this repository.
pub fn bundled_template_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/prompt_template.txt")
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn from_text(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if !text.contains(QUESTION_PLACEHOLDER) {
            return Err(Error::Template(format!(
                "template has no {QUESTION_PLACEHOLDER} placeholder"
            )));
        }
        Ok(Self { text })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Template(format!("cannot read template {}: {e}", path.display()))
        })?;
        Self::from_text(text)
    }

    /// The template shipped with this crate.
    pub fn bundled() -> Result<Self> {
        Self::load(&bundled_template_path())
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitute the question into the placeholder. The question is
    /// inserted verbatim and must be non-empty.
    pub fn build_prompt(&self, question: &str) -> Result<String> {
        if question.is_empty() {
            return Err(Error::Template("question must be non-empty".into()));
        }
        Ok(self.text.replace(QUESTION_PLACEHOLDER, question))
    }
}
