//! Plain-text cache of a parsed dataset.
//!
//! ```text
//! ACRE-TRIPLES 1
//! source <dataset path>
//! reciprocal <0|1>
//! base-relations <R>
//! entities <N>
//! <entity name, one per line, in id order>
//! relations <R>
//! <relation name, one per line, in id order>
//! train <count>
//! <head id>\t<relation id>\t<tail id>
//! valid <count>
//! ...
//! test <count>
//! ...
//! ```
//!
//! Names never contain whitespace (the triple format forbids it), so every
//! line is unambiguous. Writing the same store twice yields identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, Split, Triple, TripleStore, Vocabulary};

pub const CACHE_MAGIC: &str = "ACRE-TRIPLES";
pub const CACHE_VERSION: u32 = 1;

pub fn write_cache(store: &TripleStore, vocab: &Vocabulary, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    let _ = writeln!(out, "{CACHE_MAGIC} {CACHE_VERSION}");
    let _ = writeln!(out, "source {}", store.provenance().display());
    let _ = writeln!(out, "reciprocal {}", u8::from(store.is_reciprocal()));
    let _ = writeln!(out, "base-relations {}", store.base_relations());
    let _ = writeln!(out, "entities {}", vocab.num_entities());
    for e in vocab.entities() {
        let _ = writeln!(out, "{e}");
    }
    let _ = writeln!(out, "relations {}", vocab.num_relations());
    for r in vocab.relations() {
        let _ = writeln!(out, "{r}");
    }
    for split in Split::ALL {
        let triples = store.split(split);
        let _ = writeln!(out, "{} {}", split.name(), triples.len());
        for t in triples {
            let _ = writeln!(out, "{}\t{}\t{}", t.head, t.relation, t.tail);
        }
    }
    fs::write(path, out).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn err(&self, reason: impl Into<String>) -> DataError {
        DataError::Cache { path: self.path.to_path_buf(), reason: reason.into() }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str), DataError> {
        self.inner.next().map(|(i, l)| (i + 1, l)).ok_or_else(|| self.err("unexpected end of file"))
    }

    fn header(&mut self, key: &str) -> Result<&'a str, DataError> {
        let (lineno, line) = self.next_line()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| self.err(format!("line {lineno}: expected `{key} ...`")))
    }

    fn count(&mut self, key: &str) -> Result<usize, DataError> {
        let v = self.header(key)?;
        v.parse().map_err(|_| self.err(format!("bad count for `{key}`: {v}")))
    }
}

pub fn read_cache(path: &Path) -> Result<(TripleStore, Vocabulary), DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let mut lines = Lines { path, inner: text.lines().enumerate() };
    let version = lines.header(CACHE_MAGIC)?;
    if version != CACHE_VERSION.to_string() {
        return Err(lines.err(format!("unsupported version {version}")));
    }
    let source = PathBuf::from(lines.header("source")?);
    let reciprocal = match lines.header("reciprocal")? {
        "0" => false,
        "1" => true,
        other => return Err(lines.err(format!("bad reciprocal flag {other}"))),
    };
    let base_relations = lines.count("base-relations")?;
    let n = lines.count("entities")?;
    let entities = (0..n).map(|_| lines.next_line().map(|(_, l)| l.to_owned())).collect::<Result<Vec<_>, _>>()?;
    let r = lines.count("relations")?;
    let relations = (0..r).map(|_| lines.next_line().map(|(_, l)| l.to_owned())).collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocabulary::from_names(entities, relations).map_err(|e| lines.err(e))?;
    let mut splits: [Vec<Triple>; 3] = Default::default();
    for split in Split::ALL {
        let count = lines.count(split.name())?;
        let mut triples = Vec::with_capacity(count);
        for _ in 0..count {
            let (lineno, line) = lines.next_line()?;
            let ids: Vec<usize> = line
                .split('\t')
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| lines.err(format!("line {lineno}: bad triple `{line}`")))?;
            let [h, rel, t] = ids[..] else {
                return Err(lines.err(format!("line {lineno}: expected 3 ids")));
            };
            triples.push(Triple::new(h, rel, t));
        }
        splits[split as usize] = triples;
    }
    let store = TripleStore::from_parts(splits, vocab.num_entities(), base_relations, reciprocal, source)?;
    Ok((store, vocab))
}
