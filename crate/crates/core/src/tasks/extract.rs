//! Final-answer extraction from model output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionError {
    #[error("no <answer>...</answer> span")]
    MissingAnswerTag,
    #[error("the last <answer> span is empty")]
    EmptyAnswer,
}

/// Trimmed content of the last well-formed `<answer>...</answer>` span.
pub fn extract_answer(raw: &str) -> Result<String, ExtractionError> {
    let close = raw.rfind("</answer>").ok_or(ExtractionError::MissingAnswerTag)?;
    let open = raw[..close].rfind("<answer>").ok_or(ExtractionError::MissingAnswerTag)?;
    let inner = raw[open + "<answer>".len()..close].trim();
    if inner.is_empty() {
        Err(ExtractionError::EmptyAnswer)
    } else {
        Ok(inner.to_string())
    }
}

/// A scored model output. Exactly one of `extracted_answer` and
/// `extraction_error` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub task_id: String,
    pub question_id: String,
    pub raw_output: String,
    pub extracted_answer: Option<String>,
    pub extraction_error: Option<ExtractionError>,
}

impl Prediction {
    pub fn from_raw(task_id: &str, question_id: &str, raw_output: &str) -> Prediction {
        let (extracted_answer, extraction_error) = match extract_answer(raw_output) {
            Ok(a) => (Some(a), None),
            Err(e) => (None, Some(e)),
        };
        Prediction {
            task_id: task_id.to_string(),
            question_id: question_id.to_string(),
            raw_output: raw_output.to_string(),
            extracted_answer,
            extraction_error,
        }
    }

    /// A prediction whose answer is already known (no tag parsing).
    pub fn from_answer(task_id: &str, question_id: &str, answer: &str) -> Prediction {
        let trimmed = answer.trim();
        Prediction {
            task_id: task_id.to_string(),
            question_id: question_id.to_string(),
            raw_output: answer.to_string(),
            extracted_answer: (!trimmed.is_empty()).then(|| trimmed.to_string()),
            extraction_error: trimmed.is_empty().then_some(ExtractionError::EmptyAnswer),
        }
    }
}
