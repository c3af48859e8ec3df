use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeType, AttributeValue, Lexicon};
use crate::error::{GramError, Result};

/// Longest code, in attributes.
pub const MAX_CODE_ATTRIBUTES: usize = 6;

/// Delimiter between attribute values in serialized codes.
pub const CODE_DELIMITER: char = ',';

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One or two attributes.
    Coarse,
    /// Exactly three attributes.
    Medium,
    /// Four or more.
    Fine,
}

impl Granularity {
    pub fn from_len(n: usize) -> Result<Self> {
        match n {
            0 => Err(GramError::InvalidCode("a code needs at least one attribute".into())),
            1 | 2 => Ok(Granularity::Coarse),
            3 => Ok(Granularity::Medium),
            n if n <= MAX_CODE_ATTRIBUTES => Ok(Granularity::Fine),
            n => Err(GramError::InvalidCode(format!(
                "{n} attributes exceed the maximum of {MAX_CODE_ATTRIBUTES}"
            ))),
        }
    }
}

/// An identifier shared by queries and products: 1..=6 attribute values in
/// canonical type order, at most one value per type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<AttributeValue>", into = "Vec<AttributeValue>")]
pub struct Code {
    attributes: Vec<AttributeValue>,
}

impl Code {
    /// Builds a code from any attribute collection, sorting it into canonical
    /// order.
    pub fn new(attributes: impl IntoIterator<Item = AttributeValue>) -> Result<Self> {
        let mut attributes: Vec<AttributeValue> = attributes.into_iter().collect();
        attributes.sort();
        attributes.dedup();
        Granularity::from_len(attributes.len())?;
        for w in attributes.windows(2) {
            if w[0].ty == w[1].ty {
                return Err(GramError::InvalidCode(format!(
                    "two values of type {}: {:?} and {:?}",
                    w[0].ty, w[0].value, w[1].value
                )));
            }
        }
        for a in &attributes {
            if a.value.is_empty() || a.value.chars().any(crate::corpus::is_reserved_char) {
                return Err(GramError::InvalidCode(format!("bad attribute value {:?}", a.value)));
            }
        }
        Ok(Self { attributes })
    }

    /// Like [`Code::new`] but keeps only the first `MAX_CODE_ATTRIBUTES`
    /// attributes in canonical order.
    pub fn truncated(attributes: impl IntoIterator<Item = AttributeValue>) -> Result<Self> {
        let mut attributes: Vec<AttributeValue> = attributes.into_iter().collect();
        attributes.sort();
        attributes.dedup_by(|a, b| a.ty == b.ty);
        attributes.truncate(MAX_CODE_ATTRIBUTES);
        Self::new(attributes)
    }

    pub fn attributes(&self) -> &[AttributeValue] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn granularity(&self) -> Granularity {
        Granularity::from_len(self.attributes.len()).expect("validated on construction")
    }

    pub fn category(&self) -> Option<&AttributeValue> {
        self.attributes.iter().find(|a| a.ty == AttributeType::Category)
    }

    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.value.as_str())
    }

    /// True if every attribute of the code is in `set`.
    pub fn is_subset_of(&self, set: &[AttributeValue]) -> bool {
        self.attributes.iter().all(|a| set.contains(a))
    }

    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.values().enumerate() {
            if i > 0 {
                s.push(CODE_DELIMITER);
            }
            s.push_str(v);
        }
        s
    }

    /// Parses a comma-joined code. Values must be known to the lexicon and
    /// appear in canonical order.
    pub fn parse(input: &str, lexicon: &Lexicon) -> Result<Self> {
        let err = |position: usize, reason: String| GramError::CodeParse {
            input: input.to_string(),
            position,
            reason,
        };
        if input.is_empty() {
            return Err(err(0, "empty code".into()));
        }
        let mut attributes: Vec<AttributeValue> = Vec::new();
        let mut offset = 0;
        for segment in input.split(CODE_DELIMITER) {
            if segment.is_empty() {
                return Err(err(offset, "empty attribute".into()));
            }
            if attributes.len() == MAX_CODE_ATTRIBUTES {
                return Err(err(
                    offset,
                    format!("more than {MAX_CODE_ATTRIBUTES} attributes"),
                ));
            }
            let ty = lexicon
                .type_of(segment)
                .ok_or_else(|| err(offset, format!("unknown attribute value {segment:?}")))?;
            if let Some(prev) = attributes.last() {
                if prev.ty >= ty {
                    return Err(err(
                        offset,
                        format!("{ty} value after {} value breaks canonical order", prev.ty),
                    ));
                }
            }
            attributes.push(AttributeValue::new(ty, segment));
            offset += segment.len() + CODE_DELIMITER.len_utf8();
        }
        Ok(Self { attributes })
    }
}

impl TryFrom<Vec<AttributeValue>> for Code {
    type Error = GramError;

    fn try_from(v: Vec<AttributeValue>) -> Result<Self> {
        Code::new(v)
    }
}

impl From<Code> for Vec<AttributeValue> {
    fn from(c: Code) -> Self {
        c.attributes
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_string())
    }
}
