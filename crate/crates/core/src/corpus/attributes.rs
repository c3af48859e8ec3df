use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GramError, Result};

/// Structured attribute classes a code is assembled from.
///
/// Declaration order is the canonical order of attributes inside a code:
/// category first, then brand, then the remaining classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeType {
    Category,
    Brand,
    Series,
    Model,
    Function,
    Material,
    Style,
    Color,
    SalesSpec,
    TechSpec,
    ApplicableTime,
    Audience,
    Scenario,
    Modifier,
    Marketing,
}

impl AttributeType {
    pub const ALL: [AttributeType; 15] = [
        AttributeType::Category,
        AttributeType::Brand,
        AttributeType::Series,
        AttributeType::Model,
        AttributeType::Function,
        AttributeType::Material,
        AttributeType::Style,
        AttributeType::Color,
        AttributeType::SalesSpec,
        AttributeType::TechSpec,
        AttributeType::ApplicableTime,
        AttributeType::Audience,
        AttributeType::Scenario,
        AttributeType::Modifier,
        AttributeType::Marketing,
    ];

    /// Stable integer id (also the canonical sort rank).
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AttributeType::Category => "category",
            AttributeType::Brand => "brand",
            AttributeType::Series => "series",
            AttributeType::Model => "model",
            AttributeType::Function => "function",
            AttributeType::Material => "material",
            AttributeType::Style => "style",
            AttributeType::Color => "color",
            AttributeType::SalesSpec => "sales_spec",
            AttributeType::TechSpec => "tech_spec",
            AttributeType::ApplicableTime => "applicable_time",
            AttributeType::Audience => "audience",
            AttributeType::Scenario => "scenario",
            AttributeType::Modifier => "modifier",
            AttributeType::Marketing => "marketing",
        }
    }
}

impl fmt::Display for AttributeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One typed attribute value, e.g. `{brand: "acme"}`.
///
/// The derived ordering sorts by type rank first, which is the canonical
/// in-code order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttributeValue {
    #[serde(rename = "type")]
    pub ty: AttributeType,
    pub value: String,
}

impl AttributeValue {
    pub fn new(ty: AttributeType, value: impl Into<String>) -> Self {
        Self {
            ty,
            value: value.into(),
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ty, self.value)
    }
}

/// Characters that may never appear inside an attribute value.
pub(crate) fn is_reserved_char(c: char) -> bool {
    c == ',' || c.is_whitespace()
}

/// Finite per-type value lists. Values are globally unique so a bare value
/// string identifies its type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<AttributeType, Vec<String>>", into = "BTreeMap<AttributeType, Vec<String>>")]
pub struct Lexicon {
    values: BTreeMap<AttributeType, Vec<String>>,
    reverse: BTreeMap<String, AttributeType>,
}

impl Lexicon {
    pub fn new(values: BTreeMap<AttributeType, Vec<String>>) -> Result<Self> {
        let mut reverse = BTreeMap::new();
        for (&ty, list) in &values {
            for v in list {
                if v.is_empty() || v.chars().any(is_reserved_char) {
                    return Err(GramError::Config(format!(
                        "attribute value {v:?} is empty or contains a separator"
                    )));
                }
                if let Some(prev) = reverse.insert(v.clone(), ty) {
                    return Err(GramError::Config(format!(
                        "attribute value {v:?} appears under both {prev} and {ty}"
                    )));
                }
            }
        }
        Ok(Self { values, reverse })
    }

    pub fn values(&self, ty: AttributeType) -> &[String] {
        self.values.get(&ty).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn type_of(&self, value: &str) -> Option<AttributeType> {
        self.reverse.get(value).copied()
    }

    pub fn lookup(&self, value: &str) -> Option<AttributeValue> {
        self.type_of(value).map(|ty| AttributeValue::new(ty, value))
    }

    pub fn contains(&self, attr: &AttributeValue) -> bool {
        self.type_of(&attr.value) == Some(attr.ty)
    }

    /// Types with at least one value, in canonical order.
    pub fn active_types(&self) -> impl Iterator<Item = AttributeType> + '_ {
        self.values
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(ty, _)| *ty)
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = AttributeValue> + '_ {
        self.values
            .iter()
            .flat_map(|(ty, vs)| vs.iter().map(move |v| AttributeValue::new(*ty, v.clone())))
    }
}

impl TryFrom<BTreeMap<AttributeType, Vec<String>>> for Lexicon {
    type Error = GramError;

    fn try_from(values: BTreeMap<AttributeType, Vec<String>>) -> Result<Self> {
        Lexicon::new(values)
    }
}

impl From<Lexicon> for BTreeMap<AttributeType, Vec<String>> {
    fn from(lex: Lexicon) -> Self {
        lex.values
    }
}

/// Returns the category attribute of a set, if any.
pub fn category_of(attrs: &[AttributeValue]) -> Option<&AttributeValue> {
    attrs.iter().find(|a| a.ty == AttributeType::Category)
}
