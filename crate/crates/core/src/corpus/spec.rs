use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::attributes::AttributeType;
use crate::error::{GramError, Result};

/// Parameters of the synthetic e-commerce world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogSpec {
    pub n_products: usize,
    pub n_queries: usize,
    /// Number of distinct values per attribute type. Types mapped to zero (or
    /// absent) are not used, which is how the taxonomy size is configured.
    pub lexicon_sizes: BTreeMap<AttributeType, usize>,
    /// Relative weight of each non-category type when filling a product.
    pub type_prevalence: BTreeMap<AttributeType, f64>,
    /// Probability of a product carrying `n` attributes (category included).
    pub attribute_count_dist: BTreeMap<usize, f64>,
    /// Size of each category's brand pool.
    pub brands_per_category: usize,
    /// Probability of a query carrying `n` attributes.
    pub query_attribute_count_dist: BTreeMap<usize, f64>,
    /// Maximum query length in tokens.
    pub max_query_len: usize,
    /// Probability of a query replacing one non-category attribute by a
    /// random value of the same type.
    pub query_noise_rate: f64,
    /// Probability of appending a filler word to a query.
    pub query_filler_rate: f64,
    /// Maximum number of filler words in a title.
    pub max_title_filler: usize,
    pub click: ClickModel,
    /// Attribute-extraction noise applied when building code pairs.
    pub extraction: NoiseSpec,
    pub seed: u64,
}

/// Click probability as a logistic function of attribute Jaccard overlap,
/// gated on matching category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClickModel {
    pub base_rate: f64,
    pub steepness: f64,
    pub midpoint: f64,
    /// Extra Bernoulli(overlap) trials added to a click's count.
    pub max_extra_clicks: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub p_drop: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { p_drop: 0.1 }
    }
}

impl Default for ClickModel {
    fn default() -> Self {
        Self {
            base_rate: 0.3,
            steepness: 14.0,
            midpoint: 0.45,
            max_extra_clicks: 3,
        }
    }
}

impl Default for CatalogSpec {
    fn default() -> Self {
        use AttributeType::*;
        let lexicon_sizes = [
            (Category, 20),
            (Brand, 40),
            (Series, 12),
            (Model, 16),
            (Function, 10),
            (Material, 8),
            (Style, 8),
            (Color, 10),
            (SalesSpec, 8),
            (TechSpec, 10),
            (ApplicableTime, 4),
            (Audience, 6),
            (Scenario, 6),
            (Modifier, 6),
            (Marketing, 6),
        ]
        .into_iter()
        .collect();
        let type_prevalence = [
            (Brand, 6.0),
            (Series, 1.5),
            (Model, 1.5),
            (Function, 1.0),
            (Material, 1.0),
            (Style, 1.0),
            (Color, 2.0),
            (SalesSpec, 1.0),
            (TechSpec, 1.0),
            (ApplicableTime, 0.5),
            (Audience, 0.8),
            (Scenario, 0.8),
            (Modifier, 0.5),
            (Marketing, 0.5),
        ]
        .into_iter()
        .collect();
        Self {
            n_products: 2000,
            n_queries: 600,
            lexicon_sizes,
            type_prevalence,
            attribute_count_dist: [(2, 0.2), (3, 0.35), (4, 0.25), (5, 0.15), (6, 0.05)]
                .into_iter()
                .collect(),
            brands_per_category: 5,
            query_attribute_count_dist: [(1, 0.25), (2, 0.5), (3, 0.25)].into_iter().collect(),
            max_query_len: 16,
            query_noise_rate: 0.05,
            query_filler_rate: 0.2,
            max_title_filler: 2,
            click: ClickModel::default(),
            extraction: NoiseSpec::default(),
            seed: 1,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(GramError::Config(format!("{name} = {p} is not in [0, 1]")));
    }
    Ok(())
}

fn check_dist(name: &str, dist: &BTreeMap<usize, f64>, lo: usize, hi: usize) -> Result<()> {
    if dist.is_empty() {
        return Err(GramError::Config(format!("{name} is empty")));
    }
    let mut total = 0.0;
    for (&n, &w) in dist {
        if n < lo || n > hi {
            return Err(GramError::Config(format!("{name}: count {n} outside {lo}..={hi}")));
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(GramError::Config(format!("{name}: weight {w} for {n} is invalid")));
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(GramError::Config(format!("{name} has zero total weight")));
    }
    Ok(())
}

impl CatalogSpec {
    pub fn active_types(&self) -> Vec<AttributeType> {
        AttributeType::ALL
            .into_iter()
            .filter(|t| self.lexicon_sizes.get(t).copied().unwrap_or(0) > 0)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let active = self.active_types();
        if !active.contains(&AttributeType::Category) {
            return Err(GramError::Config("category lexicon must be non-empty".into()));
        }
        if active.len() < 2 {
            return Err(GramError::Config(
                "at least one non-category attribute type is required".into(),
            ));
        }
        check_dist(
            "attribute_count_dist",
            &self.attribute_count_dist,
            2,
            active.len().min(crate::codec::MAX_CODE_ATTRIBUTES),
        )?;
        check_dist("query_attribute_count_dist", &self.query_attribute_count_dist, 1, 6)?;
        for (ty, w) in &self.type_prevalence {
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(GramError::Config(format!("type_prevalence[{ty}] = {w} is invalid")));
            }
        }
        if self.brands_per_category == 0 {
            return Err(GramError::Config("brands_per_category must be positive".into()));
        }
        if self.max_query_len == 0 {
            return Err(GramError::Config("max_query_len must be positive".into()));
        }
        check_prob("query_noise_rate", self.query_noise_rate)?;
        check_prob("query_filler_rate", self.query_filler_rate)?;
        check_prob("click.base_rate", self.click.base_rate)?;
        check_prob("click.midpoint", self.click.midpoint)?;
        check_prob("extraction.p_drop", self.extraction.p_drop)?;
        if !(self.click.steepness > 0.0 && self.click.steepness.is_finite()) {
            return Err(GramError::Config("click.steepness must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        CatalogSpec::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_probability() {
        let mut s = CatalogSpec::default();
        s.query_noise_rate = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn default_taxonomy_has_fifteen_types() {
        assert_eq!(CatalogSpec::default().active_types().len(), 15);
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<CatalogSpec, _> =
            serde_json::from_str(r#"{"n_products": 3, "bogus": 1}"#);
        assert!(r.is_err());
    }
}
