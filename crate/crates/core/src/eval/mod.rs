//! Filtered link-prediction ranking and its summary metrics.

mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, LabelIndex, RelationCategories, Split, Triple, TripleStore};
use crate::model::{AcrE, ModelError};

pub use report::{rank_dump, CategoryCell, CategoryReport, REPORT_SCHEMA};

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold id {gold} out of range for {len} scores")]
    GoldOutOfRange { gold: usize, len: usize },
    #[error("score vector contains NaN")]
    NaNScore,
    #[error("split `{0}` has no triples to evaluate")]
    EmptySplit(&'static str),
    #[error("reciprocal head mode needs a store with reciprocal relations")]
    NotReciprocal,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Where the gold entity lands among candidates with an equal score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// Mean of the best and worst positions.
    #[default]
    Mean,
    /// Ahead of every tied candidate.
    Optimistic,
    /// Behind every tied candidate.
    Pessimistic,
}

/// How `(?, r, t)` queries are answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// As tail prediction `(t, r_inv, ?)` on the inverse relation.
    #[default]
    Reciprocal,
    /// Score `(h', r)` for every candidate `h'` and read column `t`.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Head,
    Tail,
    /// Pooled head and tail entries.
    #[default]
    Both,
}

/// Which slot of the triple was hidden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

macro_rules! text_enum {
    ($ty:ty { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!(
                        "unknown value `{other}` (expected one of: {})",
                        [$($name),+].join(", ")
                    )),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

text_enum!(TiePolicy { "mean" => TiePolicy::Mean, "optimistic" => TiePolicy::Optimistic, "pessimistic" => TiePolicy::Pessimistic });
text_enum!(HeadMode { "reciprocal" => HeadMode::Reciprocal, "direct" => HeadMode::Direct });
text_enum!(Direction { "head" => Direction::Head, "tail" => Direction::Tail, "both" => Direction::Both });
text_enum!(Side { "head" => Side::Head, "tail" => Side::Tail });

/// Rank of `gold` among `scores`, ignoring candidates listed in `known`
/// (other than `gold` itself). Higher scores rank first.
///
/// Ranks are half-integers under [`TiePolicy::Mean`], so they are `f64`.
pub fn filtered_rank(scores: &[f64], gold: usize, known: &[usize], policy: TiePolicy) -> Result<f64, EvalError> {
    if gold >= scores.len() {
        return Err(EvalError::GoldOutOfRange { gold, len: scores.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NaNScore);
    }
    let target = scores[gold];
    let (mut greater, mut equal) = (0usize, 0usize);
    for (j, &s) in scores.iter().enumerate() {
        if j == gold {
            continue;
        }
        if s > target {
            greater += 1;
        } else if s == target {
            equal += 1;
        }
    }
    let mut filtered: Vec<usize> = known.iter().copied().filter(|&j| j != gold && j < scores.len()).collect();
    filtered.sort_unstable();
    filtered.dedup();
    for j in filtered {
        if scores[j] > target {
            greater -= 1;
        } else if scores[j] == target {
            equal -= 1;
        }
    }
    let (greater, equal) = (greater as f64, equal as f64);
    Ok(match policy {
        TiePolicy::Optimistic => 1.0 + greater,
        TiePolicy::Pessimistic => 1.0 + greater + equal,
        TiePolicy::Mean => 1.0 + greater + equal / 2.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub triple: Triple,
    pub side: Side,
    /// The hidden entity.
    pub gold: usize,
    pub rank: f64,
}

/// MRR and Hits@k over a set of ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
}

impl Metrics {
    pub fn from_ranks(ranks: impl IntoIterator<Item = f64>) -> Self {
        let mut count = 0usize;
        let mut reciprocal = 0.0;
        let mut hits = [0usize; HITS_AT.len()];
        for r in ranks {
            count += 1;
            reciprocal += 1.0 / r;
            for (h, &k) in hits.iter_mut().zip(&HITS_AT) {
                if r <= k as f64 {
                    *h += 1;
                }
            }
        }
        let denom = count.max(1) as f64;
        Metrics {
            count,
            mrr: reciprocal / denom,
            hits: HITS_AT.iter().zip(hits).map(|(&k, h)| (k, h as f64 / denom)).collect(),
        }
    }

    pub fn hits_at(&self, k: usize) -> f64 {
        self.hits.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Anything that can score `(h, r)` queries against all entities.
pub trait Scorer {
    fn num_entities(&self) -> usize;
    /// Row-major `[queries.len(), N]` scores; larger is more plausible.
    fn score_queries(&self, queries: &[(usize, usize)]) -> Result<Vec<f64>, EvalError>;
}

impl Scorer for AcrE {
    fn num_entities(&self) -> usize {
        AcrE::num_entities(self)
    }

    fn score_queries(&self, queries: &[(usize, usize)]) -> Result<Vec<f64>, EvalError> {
        Ok(self.scores(queries)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub tie_policy: TiePolicy,
    pub head_mode: HeadMode,
    pub direction: Direction,
    /// `false` gives the raw setting (nothing filtered but the gold itself).
    pub filtered: bool,
    /// Queries scored per forward pass.
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            tie_policy: TiePolicy::Mean,
            head_mode: HeadMode::Reciprocal,
            direction: Direction::Both,
            filtered: true,
            batch_size: 256,
        }
    }
}

/// Known answers over train, valid and test, used to filter rankings.
#[derive(Debug, Clone)]
pub struct Filters {
    tails: LabelIndex,
    heads: LabelIndex,
}

impl Filters {
    pub fn new(store: &TripleStore) -> Result<Self, EvalError> {
        Ok(Filters { tails: LabelIndex::tails(store, &Split::ALL)?, heads: LabelIndex::heads(store, &Split::ALL)? })
    }

    /// Every `t` with `(h, r, t)` known.
    pub fn tails(&self, head: usize, relation: usize) -> &[usize] {
        self.tails.get(head, relation)
    }

    /// Every `h` with `(h, r, t)` known.
    pub fn heads(&self, tail: usize, relation: usize) -> &[usize] {
        self.heads.get(tail, relation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: Split,
    pub options: EvalOptions,
    /// Metrics over every entry of the requested direction.
    pub overall: Metrics,
    pub head: Option<Metrics>,
    pub tail: Option<Metrics>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub entries: Vec<RankEntry>,
    pub report: MetricReport,
}

fn score_in_batches<S: Scorer + ?Sized>(
    scorer: &S,
    queries: &[(usize, usize)],
    batch_size: usize,
    mut visit: impl FnMut(usize, &[f64]) -> Result<(), EvalError>,
) -> Result<(), EvalError> {
    let n = scorer.num_entities();
    for (c, chunk) in queries.chunks(batch_size.max(1)).enumerate() {
        let scores = scorer.score_queries(chunk)?;
        for (i, row) in scores.chunks(n).enumerate() {
            visit(c * batch_size.max(1) + i, row)?;
        }
    }
    Ok(())
}

/// Ranks every original triple of `split` in the requested directions.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    store: &TripleStore,
    filters: &Filters,
    split: Split,
    options: EvalOptions,
) -> Result<Evaluation, EvalError> {
    let triples: Vec<Triple> = store.original_triples(split).copied().collect();
    if triples.is_empty() {
        return Err(EvalError::EmptySplit(split.name()));
    }
    let policy = options.tie_policy;
    let empty: &[usize] = &[];
    let mut entries = Vec::new();

    if options.direction != Direction::Head {
        let queries: Vec<(usize, usize)> = triples.iter().map(|t| (t.head, t.relation)).collect();
        score_in_batches(scorer, &queries, options.batch_size, |i, row| {
            let t = triples[i];
            let known = if options.filtered { filters.tails(t.head, t.relation) } else { empty };
            let rank = filtered_rank(row, t.tail, known, policy)?;
            entries.push(RankEntry { triple: t, side: Side::Tail, gold: t.tail, rank });
            Ok(())
        })?;
    }

    if options.direction != Direction::Tail {
        match options.head_mode {
            HeadMode::Reciprocal => {
                if !store.is_reciprocal() {
                    return Err(EvalError::NotReciprocal);
                }
                let queries: Vec<(usize, usize)> =
                    triples.iter().map(|t| (t.tail, store.inverse_relation(t.relation))).collect();
                score_in_batches(scorer, &queries, options.batch_size, |i, row| {
                    let t = triples[i];
                    let known = if options.filtered { filters.heads(t.tail, t.relation) } else { empty };
                    let rank = filtered_rank(row, t.head, known, policy)?;
                    entries.push(RankEntry { triple: t, side: Side::Head, gold: t.head, rank });
                    Ok(())
                })?;
            }
            HeadMode::Direct => head_ranks_direct(scorer, &triples, filters, options, &mut entries)?,
        }
    }

    let report = summarize(&entries, split, options);
    Ok(Evaluation { entries, report })
}

/// Scores `(h', r)` for every candidate head once per relation, then reads
/// the column of each gold tail.
fn head_ranks_direct<S: Scorer + ?Sized>(
    scorer: &S,
    triples: &[Triple],
    filters: &Filters,
    options: EvalOptions,
    entries: &mut Vec<RankEntry>,
) -> Result<(), EvalError> {
    let n = scorer.num_entities();
    let mut by_relation: BTreeMap<usize, Vec<Triple>> = BTreeMap::new();
    for &t in triples {
        by_relation.entry(t.relation).or_default().push(t);
    }
    let mut column = vec![0.0; n];
    for (relation, group) in by_relation {
        let queries: Vec<(usize, usize)> = (0..n).map(|h| (h, relation)).collect();
        let mut matrix = vec![0.0; n * n];
        score_in_batches(scorer, &queries, options.batch_size, |h, row| {
            matrix[h * n..(h + 1) * n].copy_from_slice(row);
            Ok(())
        })?;
        for t in group {
            for (h, c) in column.iter_mut().enumerate() {
                *c = matrix[h * n + t.tail];
            }
            let known = if options.filtered { filters.heads(t.tail, t.relation) } else { &[] };
            let rank = filtered_rank(&column, t.head, known, options.tie_policy)?;
            entries.push(RankEntry { triple: t, side: Side::Head, gold: t.head, rank });
        }
    }
    Ok(())
}

/// Recomputes the summary of a set of rank entries.
pub fn summarize(entries: &[RankEntry], split: Split, options: EvalOptions) -> MetricReport {
    let side = |s: Side| {
        let ranks: Vec<f64> = entries.iter().filter(|e| e.side == s).map(|e| e.rank).collect();
        (!ranks.is_empty()).then(|| Metrics::from_ranks(ranks))
    };
    MetricReport {
        split,
        options,
        overall: Metrics::from_ranks(entries.iter().map(|e| e.rank)),
        head: side(Side::Head),
        tail: side(Side::Tail),
    }
}

/// Hits@10 (and MRR) per relation category and side.
pub fn category_report(entries: &[RankEntry], categories: &RelationCategories) -> CategoryReport {
    let mut groups: BTreeMap<(crate::data::Category, Side), Vec<f64>> = BTreeMap::new();
    let mut uncategorized = 0;
    for e in entries {
        match categories.get(e.triple.relation) {
            Some(c) => groups.entry((c, e.side)).or_default().push(e.rank),
            None => uncategorized += 1,
        }
    }
    CategoryReport {
        cells: groups
            .into_iter()
            .map(|((category, side), ranks)| CategoryCell { category, side, metrics: Metrics::from_ranks(ranks) })
            .collect(),
        uncategorized,
    }
}
