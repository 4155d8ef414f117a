use std::collections::BTreeMap;

use super::{DataError, Split, Triple, TripleStore};

/// Exact `(anchor, relation) -> {answer}` sets over a union of splits.
///
/// Built over tails it maps `(h, r)` to every `t` with `(h, r, t)` present;
/// built over heads it maps `(t, r)` to every such `h`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelIndex {
    map: BTreeMap<(usize, usize), Vec<usize>>,
    splits: Vec<Split>,
}

impl LabelIndex {
    pub fn tails(store: &TripleStore, splits: &[Split]) -> Result<Self, DataError> {
        Self::build(store, splits, |t| ((t.head, t.relation), t.tail))
    }

    pub fn heads(store: &TripleStore, splits: &[Split]) -> Result<Self, DataError> {
        Self::build(store, splits, |t| ((t.tail, t.relation), t.head))
    }

    fn build(
        store: &TripleStore,
        splits: &[Split],
        key: impl Fn(&Triple) -> ((usize, usize), usize),
    ) -> Result<Self, DataError> {
        if splits.is_empty() {
            return Err(DataError::Invalid("label index needs at least one split".into()));
        }
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for &split in splits {
            for t in store.split(split) {
                let (k, v) = key(t);
                map.entry(k).or_default().push(v);
            }
        }
        for answers in map.values_mut() {
            answers.sort_unstable();
            answers.dedup();
        }
        let mut splits = splits.to_vec();
        splits.sort();
        splits.dedup();
        Ok(LabelIndex { map, splits })
    }

    /// Sorted answers for a query; empty when the query never occurs.
    pub fn get(&self, anchor: usize, relation: usize) -> &[usize] {
        self.map.get(&(anchor, relation)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, anchor: usize, relation: usize, answer: usize) -> bool {
        self.get(anchor, relation).binary_search(&answer).is_ok()
    }

    /// Queries in ascending `(anchor, relation)` order.
    pub fn queries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.map.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &[usize])> + '_ {
        self.map.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }
}
