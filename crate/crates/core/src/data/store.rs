use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, Split, Triple, Vocabulary};

/// Deduplicated id triples for the train/valid/test splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleStore {
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    num_entities: usize,
    num_relations: usize,
    base_relations: usize,
    reciprocal: bool,
    provenance: PathBuf,
    duplicates: [usize; 3],
}

/// Counts in the layout of the usual dataset statistics table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "E={} R={} train={} valid={} test={}",
            self.entities, self.relations, self.train, self.valid, self.test
        )
    }
}

fn dedup(triples: Vec<Triple>) -> (Vec<Triple>, usize) {
    let mut seen = HashSet::with_capacity(triples.len());
    let before = triples.len();
    let kept: Vec<Triple> = triples.into_iter().filter(|t| seen.insert(*t)).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

impl TripleStore {
    /// Builds a store from id triples, dropping duplicates within each split.
    pub fn from_splits(
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
        num_entities: usize,
        num_relations: usize,
    ) -> Result<Self, DataError> {
        let mut duplicates = [0; 3];
        let mut splits = [train, valid, test];
        for (i, split) in splits.iter_mut().enumerate() {
            let (kept, dropped) = dedup(std::mem::take(split));
            if let Some(bad) =
                kept.iter().find(|t| t.head >= num_entities || t.tail >= num_entities || t.relation >= num_relations)
            {
                return Err(DataError::Invalid(format!(
                    "triple {bad:?} out of range for {num_entities} entities / {num_relations} relations"
                )));
            }
            *split = kept;
            duplicates[i] = dropped;
        }
        let [train, valid, test] = splits;
        Ok(TripleStore {
            train,
            valid,
            test,
            num_entities,
            num_relations,
            base_relations: num_relations,
            reciprocal: false,
            provenance: PathBuf::new(),
            duplicates,
        })
    }

    pub fn with_provenance(mut self, path: impl Into<PathBuf>) -> Self {
        self.provenance = path.into();
        self
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    /// Relation count including reciprocal relations when present.
    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Relation count of the original data.
    pub fn base_relations(&self) -> usize {
        self.base_relations
    }

    pub fn is_reciprocal(&self) -> bool {
        self.reciprocal
    }

    pub fn provenance(&self) -> &Path {
        &self.provenance
    }

    pub fn duplicates_dropped(&self, split: Split) -> usize {
        self.duplicates[split as usize]
    }

    /// Triples of `split` whose relation is an original (non-reciprocal) one.
    pub fn original_triples(&self, split: Split) -> impl Iterator<Item = &Triple> {
        let base = self.base_relations;
        self.split(split).iter().filter(move |t| t.relation < base)
    }

    pub fn stats(&self) -> DatasetStats {
        let count = |s| self.original_triples(s).count();
        DatasetStats {
            entities: self.num_entities,
            relations: self.base_relations,
            train: count(Split::Train),
            valid: count(Split::Valid),
            test: count(Split::Test),
        }
    }

    /// Entities that never occur in the training split.
    pub fn unseen_entities(&self) -> BTreeSet<usize> {
        let mut seen = vec![false; self.num_entities];
        for t in &self.train {
            seen[t.head] = true;
            seen[t.tail] = true;
        }
        (0..self.num_entities).filter(|&e| !seen[e]).collect()
    }

    /// Id of the reciprocal of `relation` (an involution).
    pub fn inverse_relation(&self, relation: usize) -> usize {
        if relation < self.base_relations {
            relation + self.base_relations
        } else {
            relation - self.base_relations
        }
    }

    /// `(h, r, t) -> (t, r_inv, h)`. Only meaningful on reciprocal stores.
    pub fn mirror(&self, triple: Triple) -> Triple {
        Triple::new(triple.tail, self.inverse_relation(triple.relation), triple.head)
    }

    /// Adds `r_inv = r + R` for every relation and the mirrored triple for
    /// every triple, split by split.
    pub fn add_reciprocals(&self) -> Result<TripleStore, DataError> {
        if self.reciprocal {
            return Err(DataError::AlreadyReciprocal);
        }
        let base = self.base_relations;
        let mirror = |split: &[Triple]| -> Vec<Triple> {
            split.iter().copied().chain(split.iter().map(|t| Triple::new(t.tail, t.relation + base, t.head))).collect()
        };
        Ok(TripleStore {
            train: mirror(&self.train),
            valid: mirror(&self.valid),
            test: mirror(&self.test),
            num_entities: self.num_entities,
            num_relations: base * 2,
            base_relations: base,
            reciprocal: true,
            provenance: self.provenance.clone(),
            duplicates: self.duplicates,
        })
    }

    pub(crate) fn from_parts(
        splits: [Vec<Triple>; 3],
        num_entities: usize,
        base_relations: usize,
        reciprocal: bool,
        provenance: PathBuf,
    ) -> Result<Self, DataError> {
        let [train, valid, test] = splits;
        let store = TripleStore::from_splits(
            train,
            valid,
            test,
            num_entities,
            base_relations * if reciprocal { 2 } else { 1 },
        )?;
        Ok(TripleStore { base_relations, reciprocal, provenance, ..store })
    }
}

/// Parses one `head relation tail` file, interning names into `vocab`.
///
/// Columns are separated by tabs or runs of whitespace; blank lines are
/// skipped. Returns the deduplicated triples and the number of duplicates.
pub fn load_split(path: &Path, vocab: &mut Vocabulary) -> Result<(Vec<Triple>, usize), DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let mut triples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [h, r, t] = cols[..] else {
            return Err(DataError::Malformed { path: path.to_path_buf(), line: lineno + 1, found: cols.len() });
        };
        let head = vocab.add_entity(h);
        let relation = vocab.add_relation(r);
        let tail = vocab.add_entity(t);
        triples.push(Triple::new(head, relation, tail));
    }
    if triples.is_empty() {
        return Err(DataError::Empty { path: path.to_path_buf() });
    }
    let (kept, dropped) = dedup(triples);
    if dropped > 0 {
        log::info!("{}: dropped {dropped} duplicate triples", path.display());
    }
    Ok((kept, dropped))
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
///
/// Ids are assigned in first-appearance order over train, then valid, then
/// test. When `vocab` is given its ids are kept and new names are appended.
pub fn load_dataset(dir: &Path, vocab: Option<Vocabulary>) -> Result<(TripleStore, Vocabulary), DataError> {
    let mut vocab = vocab.unwrap_or_default();
    let mut splits: [Vec<Triple>; 3] = Default::default();
    let mut duplicates = [0; 3];
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        let (triples, dropped) = load_split(&path, &mut vocab)?;
        splits[split as usize] = triples;
        duplicates[split as usize] = dropped;
    }
    let [train, valid, test] = splits;
    let mut store =
        TripleStore::from_splits(train, valid, test, vocab.num_entities(), vocab.num_relations())?.with_provenance(dir);
    store.duplicates = duplicates;
    let unseen = store.unseen_entities();
    if !unseen.is_empty() {
        log::warn!(
            "{}: {} entities appear only in valid/test and keep their random initialization",
            dir.display(),
            unseen.len()
        );
    }
    Ok((store, vocab))
}
