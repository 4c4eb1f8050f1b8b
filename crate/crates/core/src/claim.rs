use serde::{Deserialize, Serialize};

use crate::model::Label;

/// A claim to be judged, with its ground truth when known.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
}

impl ClaimRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label) -> Self {
        ClaimRecord {
            id: id.into(),
            text: text.into(),
            label: Some(label),
            background: None,
        }
    }

    pub fn background_text(&self) -> &str {
        self.background.as_deref().unwrap_or("")
    }
}
