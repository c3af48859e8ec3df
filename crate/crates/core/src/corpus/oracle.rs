use std::collections::BTreeSet;

use super::attributes::{category_of, AttributeValue};

/// Jaccard overlap of two attribute sets.
pub fn jaccard(a: &[AttributeValue], b: &[AttributeValue]) -> f64 {
    let a: BTreeSet<&AttributeValue> = a.iter().collect();
    let b: BTreeSet<&AttributeValue> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Ground-truth relevance of a product to a query: Jaccard overlap of their
/// attribute sets, forced to zero unless both carry the same category.
pub fn relevance_oracle(query: &[AttributeValue], product: &[AttributeValue]) -> f64 {
    match (category_of(query), category_of(product)) {
        (Some(a), Some(b)) if a == b => jaccard(query, product),
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AttributeType::*;

    fn av(ty: crate::corpus::AttributeType, v: &str) -> AttributeValue {
        AttributeValue::new(ty, v)
    }

    #[test]
    fn identical_sets_score_one() {
        let a = vec![av(Category, "kettle"), av(Brand, "acme")];
        assert_eq!(relevance_oracle(&a, &a), 1.0);
    }

    #[test]
    fn category_mismatch_scores_zero() {
        let a = vec![av(Category, "kettle"), av(Brand, "acme")];
        let b = vec![av(Category, "toaster"), av(Brand, "acme")];
        assert_eq!(relevance_oracle(&a, &b), 0.0);
    }

    #[test]
    fn partial_overlap_is_jaccard() {
        let a = vec![av(Category, "kettle"), av(Brand, "acme"), av(Color, "red")];
        let b = vec![av(Category, "kettle"), av(Brand, "acme"), av(Material, "steel")];
        assert_eq!(relevance_oracle(&a, &b), 0.5);
        assert_eq!(relevance_oracle(&b, &a), 0.5);
    }

    #[test]
    fn one_only_if_equal() {
        let a = vec![av(Category, "kettle"), av(Brand, "acme")];
        let b = vec![av(Category, "kettle")];
        assert!(relevance_oracle(&a, &b) < 1.0);
    }
}
