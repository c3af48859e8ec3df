use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::attributes::{AttributeType, AttributeValue, Lexicon};
use super::oracle::jaccard;
use super::records::{ClickEvent, ProductId, ProductRecord, QueryId, QueryRecord};
use super::spec::CatalogSpec;
use crate::error::{GramError, Result};

/// Filler words mixed into titles and queries. They never carry attributes.
pub const FILLER_WORDS: [&str; 12] = [
    "new", "hot", "sale", "official", "genuine", "deal", "2024", "premium", "free", "gift",
    "classic", "plus",
];

const ONSETS: [&str; 18] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "br", "tr", "st",
];
const VOWELS: [&str; 7] = ["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: [&str; 7] = ["", "", "n", "r", "s", "x", "l"];

// Independent random streams per generation phase.
const STREAM_LEXICON: u64 = 1;
const STREAM_CATALOG: u64 = 2;
const STREAM_QUERIES: u64 = 3;
const STREAM_CLICKS: u64 = 4;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The generated catalog together with the lexicon it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub lexicon: Lexicon,
    pub products: Vec<ProductRecord>,
    /// Brand pool of each category value.
    pub category_brands: BTreeMap<String, Vec<String>>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = if rng.gen_bool(0.7) { 2 } else { 3 };
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
    }
    w.push_str(CODAS.choose(rng).unwrap());
    w
}

/// Draws the per-type value lists. Values are unique across all types and
/// never collide with filler words.
pub fn generate_lexicon(spec: &CatalogSpec) -> Result<Lexicon> {
    let mut rng = rng_for(spec.seed, STREAM_LEXICON);
    let mut seen: BTreeSet<String> = FILLER_WORDS.iter().map(|s| s.to_string()).collect();
    let mut values = BTreeMap::new();
    for ty in spec.active_types() {
        let n = spec.lexicon_sizes[&ty];
        let mut list = Vec::with_capacity(n);
        while list.len() < n {
            let w = pseudo_word(&mut rng);
            if seen.insert(w.clone()) {
                list.push(w);
            }
        }
        values.insert(ty, list);
    }
    Lexicon::new(values)
}

fn sample_count(dist: &BTreeMap<usize, f64>, cap: usize, rng: &mut ChaCha8Rng) -> usize {
    let keys: Vec<usize> = dist.keys().copied().collect();
    let weights: Vec<f64> = dist.values().copied().collect();
    let idx = WeightedIndex::new(&weights).expect("validated distribution");
    keys[idx.sample(rng)].min(cap)
}

/// Generates `spec.n_products` products. Deterministic in `spec`.
pub fn generate_catalog(spec: &CatalogSpec) -> Result<Catalog> {
    spec.validate()?;
    let lexicon = generate_lexicon(spec)?;
    let mut rng = rng_for(spec.seed, STREAM_CATALOG);

    let categories = lexicon.values(AttributeType::Category).to_vec();
    let brands = lexicon.values(AttributeType::Brand);
    let mut category_brands = BTreeMap::new();
    for c in &categories {
        let k = spec.brands_per_category.min(brands.len());
        let pool: Vec<String> = brands.choose_multiple(&mut rng, k).cloned().collect();
        category_brands.insert(c.clone(), pool);
    }

    let others: Vec<AttributeType> = spec
        .active_types()
        .into_iter()
        .filter(|t| *t != AttributeType::Category)
        .collect();
    let prevalence: Vec<f64> = others
        .iter()
        .map(|t| spec.type_prevalence.get(t).copied().unwrap_or(1.0))
        .collect();
    if prevalence.iter().all(|w| *w <= 0.0) {
        return Err(GramError::Config("all type prevalences are zero".into()));
    }

    let mut products = Vec::with_capacity(spec.n_products);
    for i in 0..spec.n_products {
        let category = categories.choose(&mut rng).unwrap().clone();
        let n = sample_count(&spec.attribute_count_dist, others.len() + 1, &mut rng);

        // Weighted draw of n-1 distinct non-category types.
        let mut weights = prevalence.clone();
        let mut types = Vec::with_capacity(n - 1);
        while types.len() < n - 1 {
            let Ok(idx) = WeightedIndex::new(&weights) else {
                break;
            };
            let j = idx.sample(&mut rng);
            types.push(others[j]);
            weights[j] = 0.0;
        }

        let mut attributes = vec![AttributeValue::new(AttributeType::Category, category.clone())];
        for ty in types {
            let value = if ty == AttributeType::Brand && !category_brands[&category].is_empty() {
                category_brands[&category].choose(&mut rng).unwrap().clone()
            } else {
                lexicon.values(ty).choose(&mut rng).unwrap().clone()
            };
            attributes.push(AttributeValue::new(ty, value));
        }
        attributes.sort();
        let title = render_title(&attributes, spec.max_title_filler, &mut rng);
        products.push(ProductRecord {
            product_id: ProductId(i as u32),
            title,
            attributes,
        });
    }
    Ok(Catalog {
        lexicon,
        products,
        category_brands,
    })
}

/// Title word order: brand, series, model, the remaining attributes shuffled,
/// category last; filler words inserted at random positions.
fn render_title(attrs: &[AttributeValue], max_filler: usize, rng: &mut ChaCha8Rng) -> String {
    let lead = [AttributeType::Brand, AttributeType::Series, AttributeType::Model];
    let mut words: Vec<&str> = lead
        .iter()
        .filter_map(|t| attrs.iter().find(|a| a.ty == *t))
        .map(|a| a.value.as_str())
        .collect();
    let mut middle: Vec<&str> = attrs
        .iter()
        .filter(|a| a.ty != AttributeType::Category && !lead.contains(&a.ty))
        .map(|a| a.value.as_str())
        .collect();
    middle.shuffle(rng);
    words.extend(middle);
    if let Some(c) = attrs.iter().find(|a| a.ty == AttributeType::Category) {
        words.push(&c.value);
    }
    let n_filler = rng.gen_range(0..=max_filler);
    for _ in 0..n_filler {
        let pos = rng.gen_range(0..=words.len());
        words.insert(pos, FILLER_WORDS.choose(rng).unwrap());
    }
    words.join(" ")
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Samples queries from random source products and simulates a click log.
///
/// Every query clicks its source product; any other product of the same
/// category is clicked with probability
/// `base_rate * logistic(steepness * (jaccard - midpoint))`. A click's count
/// is `1 + Binomial(max_extra_clicks, jaccard)`.
pub fn generate_queries_and_clicks(
    catalog: &Catalog,
    spec: &CatalogSpec,
) -> Result<(Vec<QueryRecord>, Vec<ClickEvent>)> {
    spec.validate()?;
    if catalog.products.is_empty() {
        return Err(GramError::Config("cannot generate queries over an empty catalog".into()));
    }
    let mut rng = rng_for(spec.seed, STREAM_QUERIES);
    let mut queries = Vec::with_capacity(spec.n_queries);
    let mut sources = Vec::with_capacity(spec.n_queries);
    for i in 0..spec.n_queries {
        let src = catalog.products.choose(&mut rng).unwrap();
        let m = sample_count(
            &spec.query_attribute_count_dist,
            src.attributes.len(),
            &mut rng,
        );
        let mut attributes: Vec<AttributeValue> = src
            .attributes
            .iter()
            .filter(|a| a.ty == AttributeType::Category)
            .cloned()
            .collect();
        let rest: Vec<&AttributeValue> = src
            .attributes
            .iter()
            .filter(|a| a.ty != AttributeType::Category)
            .collect();
        attributes.extend(
            rest.choose_multiple(&mut rng, m.saturating_sub(attributes.len()))
                .map(|a| (*a).clone()),
        );
        attributes.sort();

        if attributes.len() > 1 && rng.gen_bool(spec.query_noise_rate) {
            let j = rng.gen_range(1..attributes.len());
            let ty = attributes[j].ty;
            let choices: Vec<&String> = catalog
                .lexicon
                .values(ty)
                .iter()
                .filter(|v| **v != attributes[j].value)
                .collect();
            if let Some(v) = choices.choose(&mut rng) {
                attributes[j].value = (*v).clone();
            }
        }

        let mut words: Vec<&str> = attributes.iter().map(|a| a.value.as_str()).collect();
        words.shuffle(&mut rng);
        if rng.gen_bool(spec.query_filler_rate) {
            let pos = rng.gen_range(0..=words.len());
            words.insert(pos, FILLER_WORDS.choose(&mut rng).unwrap());
        }
        words.truncate(spec.max_query_len);
        queries.push(QueryRecord {
            query_id: QueryId(i as u32),
            text: words.join(" "),
            attributes,
        });
        sources.push(src.product_id);
    }

    let mut by_category: BTreeMap<&str, Vec<&ProductRecord>> = BTreeMap::new();
    for p in &catalog.products {
        if let Some(c) = super::attributes::category_of(&p.attributes) {
            by_category.entry(c.value.as_str()).or_default().push(p);
        }
    }

    let cm = &spec.click;
    let mut rng = rng_for(spec.seed, STREAM_CLICKS);
    let mut clicks = Vec::new();
    for (q, src) in queries.iter().zip(&sources) {
        let Some(cat) = super::attributes::category_of(&q.attributes) else {
            continue;
        };
        let candidates = by_category.get(cat.value.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        for p in candidates {
            let overlap = jaccard(&q.attributes, &p.attributes);
            let forced = p.product_id == *src;
            let prob = cm.base_rate * logistic(cm.steepness * (overlap - cm.midpoint));
            let clicked = rng.gen_bool(prob.clamp(0.0, 1.0));
            if !(forced || clicked) {
                continue;
            }
            let extra = (0..cm.max_extra_clicks)
                .filter(|_| rng.gen_bool(overlap.clamp(0.0, 1.0)))
                .count() as u32;
            clicks.push(ClickEvent {
                query_id: q.query_id,
                product_id: p.product_id,
                count: 1 + extra,
            });
        }
        // Category is never swapped by noise, so the source is always a candidate.
        debug_assert!(clicks.iter().any(|c| c.query_id == q.query_id));
    }
    Ok((queries, clicks))
}

/// Convenience bundle of the whole simulated world.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub catalog: Catalog,
    pub queries: Vec<QueryRecord>,
    pub clicks: Vec<ClickEvent>,
}

pub fn generate_world(spec: &CatalogSpec) -> Result<World> {
    let catalog = generate_catalog(spec)?;
    let (queries, clicks) = if catalog.products.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        generate_queries_and_clicks(&catalog, spec)?
    };
    Ok(World {
        catalog,
        queries,
        clicks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(n_products: usize, seed: u64) -> CatalogSpec {
        CatalogSpec {
            n_products,
            n_queries: 50,
            seed,
            ..CatalogSpec::default()
        }
    }

    #[test]
    fn empty_catalog() {
        let c = generate_catalog(&small_spec(0, 1)).unwrap();
        assert!(c.products.is_empty());
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_world(&small_spec(3, 7)).unwrap();
        let b = generate_world(&small_spec(3, 7)).unwrap();
        let ser = |w: &World| serde_json::to_string(&(&w.catalog.products, &w.queries, &w.clicks)).unwrap();
        assert_eq!(ser(&a), ser(&b));
        let c = generate_world(&small_spec(3, 8)).unwrap();
        assert_ne!(ser(&a), ser(&c));
    }

    #[test]
    fn attribute_count_histogram_matches_config() {
        let spec = CatalogSpec {
            n_products: 2000,
            seed: 1,
            ..CatalogSpec::default()
        };
        let cat = generate_catalog(&spec).unwrap();
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for p in &cat.products {
            assert!(p.attributes.len() >= 2 && p.attributes.len() <= 6);
            *hist.entry(p.attributes.len()).or_default() += 1;
        }
        let total: f64 = spec.attribute_count_dist.values().sum();
        for (n, w) in &spec.attribute_count_dist {
            let expected = w / total * 2000.0;
            let got = *hist.get(n).unwrap_or(&0) as f64;
            assert!(
                (got - expected).abs() <= 0.1 * expected,
                "count {n}: got {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn titles_contain_every_attribute_value() {
        let cat = generate_catalog(&small_spec(200, 3)).unwrap();
        for p in &cat.products {
            let words: BTreeSet<&str> = p.title.split_whitespace().collect();
            for a in &p.attributes {
                assert!(words.contains(a.value.as_str()));
                assert!(cat.lexicon.contains(a));
            }
            let types: BTreeSet<_> = p.attributes.iter().map(|a| a.ty).collect();
            assert_eq!(types.len(), p.attributes.len());
        }
    }

    #[test]
    fn single_product_single_query_clicks_it() {
        let mut spec = small_spec(1, 5);
        spec.n_queries = 1;
        let cat = generate_catalog(&spec).unwrap();
        let (qs, clicks) = generate_queries_and_clicks(&cat, &spec).unwrap();
        assert_eq!(qs.len(), 1);
        assert_eq!(clicks.len(), 1);
        assert_eq!(clicks[0].product_id, cat.products[0].product_id);
    }

    #[test]
    fn noiseless_queries_are_subsets_of_a_product() {
        let mut spec = small_spec(300, 11);
        spec.query_noise_rate = 0.0;
        let cat = generate_catalog(&spec).unwrap();
        let (qs, _) = generate_queries_and_clicks(&cat, &spec).unwrap();
        for q in &qs {
            assert!(cat
                .products
                .iter()
                .any(|p| q.attributes.iter().all(|a| p.attributes.contains(a))));
            assert!(q.text.split_whitespace().count() <= spec.max_query_len);
        }
    }

    #[test]
    fn click_volume_in_range() {
        let spec = CatalogSpec {
            n_products: 2000,
            n_queries: 500,
            seed: 1,
            ..CatalogSpec::default()
        };
        let w = generate_world(&spec).unwrap();
        let per_query = w.clicks.len() as f64 / w.queries.len() as f64;
        assert!((1.0..=20.0).contains(&per_query), "{per_query}");
        let qids: BTreeSet<_> = w.clicks.iter().map(|c| c.query_id).collect();
        assert_eq!(qids.len(), w.queries.len());
        let mut pairs = BTreeSet::new();
        for c in &w.clicks {
            assert!(c.count >= 1);
            assert!(pairs.insert((c.query_id, c.product_id)));
        }
    }
}
