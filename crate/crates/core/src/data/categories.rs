use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DataError, Split, TripleStore};

/// Relation cardinality class from mean tails-per-head and heads-per-tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "1-to-1")]
    OneToOne,
    #[serde(rename = "1-to-n")]
    OneToMany,
    #[serde(rename = "n-to-1")]
    ManyToOne,
    #[serde(rename = "m-to-n")]
    ManyToMany,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::OneToOne, Category::OneToMany, Category::ManyToOne, Category::ManyToMany];

    pub fn label(self) -> &'static str {
        match self {
            Category::OneToOne => "1-to-1",
            Category::OneToMany => "1-to-n",
            Category::ManyToOne => "n-to-1",
            Category::ManyToMany => "m-to-n",
        }
    }

    fn from_averages(tails_per_head: f64, heads_per_tail: f64, threshold: f64) -> Self {
        match (tails_per_head > threshold, heads_per_tail > threshold) {
            (false, false) => Category::OneToOne,
            (true, false) => Category::OneToMany,
            (false, true) => Category::ManyToOne,
            (true, true) => Category::ManyToMany,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationStats {
    pub triples: usize,
    /// Mean number of tails per `(h, r)` key.
    pub tails_per_head: f64,
    /// Mean number of heads per `(t, r)` key.
    pub heads_per_tail: f64,
}

/// Categories of every original relation; `None` where the relation has no
/// training triples.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationCategories {
    threshold: f64,
    stats: Vec<Option<RelationStats>>,
    categories: Vec<Option<Category>>,
}

impl RelationCategories {
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Category of an original relation id.
    pub fn get(&self, relation: usize) -> Option<Category> {
        self.categories.get(relation).copied().flatten()
    }

    pub fn stats(&self, relation: usize) -> Option<RelationStats> {
        self.stats.get(relation).copied().flatten()
    }

    /// Relations whose category is undefined (no training triples).
    pub fn undefined(&self) -> Vec<usize> {
        (0..self.categories.len()).filter(|&r| self.categories[r].is_none()).collect()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Fraction of `split`'s original triples falling in each category.
    pub fn triple_shares(&self, store: &TripleStore, split: Split) -> HashMap<Category, f64> {
        let mut counts: HashMap<Category, usize> = HashMap::new();
        let mut total = 0usize;
        for t in store.original_triples(split) {
            if let Some(c) = self.get(t.relation) {
                *counts.entry(c).or_default() += 1;
                total += 1;
            }
        }
        counts.into_iter().map(|(c, n)| (c, n as f64 / total.max(1) as f64)).collect()
    }
}

/// Classifies each original relation by comparing its mean tails-per-head and
/// heads-per-tail over the training split against `threshold`.
pub fn classify_relations(store: &TripleStore, threshold: f64) -> Result<RelationCategories, DataError> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(DataError::Invalid(format!("category threshold must be positive, got {threshold}")));
    }
    let base = store.base_relations();
    let mut tails: Vec<HashMap<usize, usize>> = vec![HashMap::new(); base];
    let mut heads: Vec<HashMap<usize, usize>> = vec![HashMap::new(); base];
    let mut counts = vec![0usize; base];
    for t in store.original_triples(Split::Train) {
        *tails[t.relation].entry(t.head).or_default() += 1;
        *heads[t.relation].entry(t.tail).or_default() += 1;
        counts[t.relation] += 1;
    }
    let mut stats = Vec::with_capacity(base);
    let mut categories = Vec::with_capacity(base);
    for r in 0..base {
        if counts[r] == 0 {
            stats.push(None);
            categories.push(None);
            continue;
        }
        let tph = counts[r] as f64 / tails[r].len() as f64;
        let hpt = counts[r] as f64 / heads[r].len() as f64;
        stats.push(Some(RelationStats { triples: counts[r], tails_per_head: tph, heads_per_tail: hpt }));
        categories.push(Some(Category::from_averages(tph, hpt, threshold)));
    }
    Ok(RelationCategories { threshold, stats, categories })
}
