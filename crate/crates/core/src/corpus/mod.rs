//! Synthetic e-commerce world: lexicon, catalog, queries, click log,
//! attribute extraction and the initial code tables.

mod attributes;
mod extract;
mod generate;
mod oracle;
mod pairs;
mod records;
mod spec;

pub use attributes::{category_of, AttributeType, AttributeValue, Lexicon};
pub(crate) use attributes::is_reserved_char;
pub use extract::{extract_attributes, extract_product_attributes, extract_query_attributes};
pub use generate::{
    generate_catalog, generate_lexicon, generate_queries_and_clicks, generate_world, Catalog, World,
    FILLER_WORDS,
};
pub(crate) use generate::rng_for;
pub use oracle::{jaccard, relevance_oracle};
pub use pairs::{build_initial_code_pairs, CodeTables, PairConfig};
pub use records::{Attributed, ClickEvent, ProductId, ProductRecord, QueryId, QueryRecord};
pub use spec::{CatalogSpec, ClickModel, NoiseSpec};
