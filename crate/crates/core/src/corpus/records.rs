use std::fmt;

use serde::{Deserialize, Serialize};

use super::attributes::AttributeValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProductId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryId(pub u32);

impl fmt::Display for ProductId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

/// A catalog item. `attributes` is sorted canonically with at most one value
/// per type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub product_id: ProductId,
    pub title: String,
    pub attributes: Vec<AttributeValue>,
}

/// A search query with its ground-truth attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: QueryId,
    pub text: String,
    pub attributes: Vec<AttributeValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickEvent {
    pub query_id: QueryId,
    pub product_id: ProductId,
    pub count: u32,
}

/// Anything carrying ground-truth attributes.
pub trait Attributed {
    fn attributes(&self) -> &[AttributeValue];
}

impl Attributed for ProductRecord {
    fn attributes(&self) -> &[AttributeValue] {
        &self.attributes
    }
}

impl Attributed for QueryRecord {
    fn attributes(&self) -> &[AttributeValue] {
        &self.attributes
    }
}
