use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoded form of a BIO label id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
}

/// Sub-event type inventory and its BIO label ids: `O = 0`, then
/// `B-t = 1 + 2t`, `I-t = 2 + 2t` in type order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    types: Vec<String>,
}

pub const OUTSIDE: usize = 0;

impl LabelScheme {
    pub fn new<S: Into<String>>(types: impl IntoIterator<Item = S>) -> Result<Self> {
        let types: Vec<String> = types.into_iter().map(Into::into).collect();
        for (i, t) in types.iter().enumerate() {
            if t.is_empty() || t == "O" {
                return Err(Error::config(format!("invalid sub-event type name `{t}`")));
            }
            if types[..i].contains(t) {
                return Err(Error::config(format!("duplicate sub-event type `{t}`")));
            }
        }
        Ok(LabelScheme { types })
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn num_labels(&self) -> usize {
        2 * self.types.len() + 1
    }

    pub fn type_id(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t == name)
    }

    pub fn type_name(&self, type_id: usize) -> &str {
        &self.types[type_id]
    }

    pub fn begin(type_id: usize) -> usize {
        1 + 2 * type_id
    }

    pub fn inside(type_id: usize) -> usize {
        2 + 2 * type_id
    }

    pub fn tag(label: usize) -> Tag {
        match label {
            0 => Tag::Outside,
            l if l % 2 == 1 => Tag::Begin((l - 1) / 2),
            l => Tag::Inside((l - 2) / 2),
        }
    }

    /// Sub-event type of a label with the B/I prefix dropped.
    pub fn type_of(label: usize) -> Option<usize> {
        match Self::tag(label) {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }

    pub fn label_name(&self, label: usize) -> String {
        match Self::tag(label) {
            Tag::Outside => "O".to_string(),
            Tag::Begin(t) => format!("B-{}", self.types[t]),
            Tag::Inside(t) => format!("I-{}", self.types[t]),
        }
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        if name == "O" {
            return Some(OUTSIDE);
        }
        let (prefix, ty) = name.split_once('-')?;
        let t = self.type_id(ty)?;
        match prefix {
            "B" => Some(Self::begin(t)),
            "I" => Some(Self::inside(t)),
            _ => None,
        }
    }
}
