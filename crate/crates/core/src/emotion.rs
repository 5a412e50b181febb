use serde::{Deserialize, Serialize};

use crate::{Error, Result, NEUTRAL};

/// Ordered emotion classes; neutral is always class 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmotionVocab {
    labels: Vec<String>,
}

impl EmotionVocab {
    /// Neutral followed by the distinct non-neutral labels in sorted order.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let mut others: Vec<String> = labels
            .into_iter()
            .filter(|l| *l != NEUTRAL)
            .map(str::to_string)
            .collect();
        others.sort();
        others.dedup();
        let mut all = vec![NEUTRAL.to_string()];
        all.extend(others);
        Self { labels: all }
    }

    pub fn from_vec(labels: Vec<String>) -> Result<Self> {
        if labels.first().map(String::as_str) != Some(NEUTRAL) {
            return Err(Error::Invalid("emotion vocabulary must start with neutral".into()));
        }
        let mut seen = labels.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != labels.len() {
            return Err(Error::Invalid("duplicate emotion label".into()));
        }
        Ok(Self { labels })
    }

    pub const NEUTRAL_CLASS: usize = 0;

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn non_neutral(&self) -> impl Iterator<Item = (usize, &str)> {
        self.labels.iter().enumerate().skip(1).map(|(i, l)| (i, l.as_str()))
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Invalid(format!("unknown emotion {label:?}")))
    }

    pub fn label(&self, class: usize) -> &str {
        &self.labels[class]
    }
}
