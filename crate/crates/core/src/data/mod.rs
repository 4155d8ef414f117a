//! Triple datasets: parsing, vocabularies, reciprocal augmentation, 1-N label
//! indices and relation categories.

mod cache;
mod categories;
mod labels;
mod store;
mod vocab;

pub use cache::{read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use categories::{classify_relations, Category, RelationCategories, RelationStats};
pub use labels::LabelIndex;
pub use store::{load_dataset, load_split, DatasetStats, TripleStore};
pub use vocab::Vocabulary;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple { head, relation, tail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, valid or test)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected 3 columns (head relation tail), found {found}")]
    Malformed { path: PathBuf, line: usize, found: usize },
    #[error("{path}: file contains no triples")]
    Empty { path: PathBuf },
    #[error("reciprocal relations were already added to this store")]
    AlreadyReciprocal,
    #[error("{path}: invalid cache: {reason}")]
    Cache { path: PathBuf, reason: String },
    #[error("{0}")]
    Invalid(String),
}
