use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{MetricReport, Metrics, RankEntry, Side, HITS_AT};
use crate::data::Category;

/// Version tag carried by every structured record.
pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCell {
    pub category: Category,
    pub side: Side,
    pub metrics: Metrics,
}

/// Metrics per relation category and side; cells without entries are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub cells: Vec<CategoryCell>,
    /// Entries whose relation has no category (no training triples).
    pub uncategorized: usize,
}

impl CategoryReport {
    pub fn get(&self, category: Category, side: Side) -> Option<&Metrics> {
        self.cells.iter().find(|c| c.category == category && c.side == side).map(|c| &c.metrics)
    }

    /// Hits@10 table laid out as sides by categories.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "H@10");
        for c in Category::ALL {
            let _ = write!(out, "{:>10}", c.label());
        }
        out.push('\n');
        for side in [Side::Head, Side::Tail] {
            let _ = write!(out, "{:<8}", side.to_string());
            for c in Category::ALL {
                match self.get(c, side) {
                    Some(m) => {
                        let _ = write!(out, "{:>10.1}", 100.0 * m.hits_at(10));
                    }
                    None => {
                        let _ = write!(out, "{:>10}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn jsonl(&self) -> String {
        self.cells
            .iter()
            .map(|c| {
                serde_json::json!({
                    "schema": REPORT_SCHEMA,
                    "kind": "category",
                    "category": c.category,
                    "side": c.side,
                    "count": c.metrics.count,
                    "mrr": c.metrics.mrr,
                    "hits@10": c.metrics.hits_at(10),
                })
                .to_string()
                    + "\n"
            })
            .collect()
    }
}

fn row(out: &mut String, label: &str, m: &Metrics) {
    let _ = write!(out, "{label:<8}{:>8}{:>9.4}", m.count, m.mrr);
    for k in HITS_AT {
        let _ = write!(out, "{:>9.4}", m.hits_at(k));
    }
    out.push('\n');
}

impl MetricReport {
    /// Aligned text table, one row per available direction.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}{:>8}{:>9}", "", "count", "MRR");
        for k in HITS_AT {
            let _ = write!(out, "{:>9}", format!("H@{k}"));
        }
        out.push('\n');
        if let Some(m) = &self.head {
            row(&mut out, "head", m);
        }
        if let Some(m) = &self.tail {
            row(&mut out, "tail", m);
        }
        row(&mut out, "both", &self.overall);
        out
    }

    /// One structured record per direction row.
    pub fn jsonl(&self) -> String {
        let mut out = String::new();
        let rows = [("head", self.head.as_ref()), ("tail", self.tail.as_ref()), ("both", Some(&self.overall))];
        for (direction, m) in rows {
            let Some(m) = m else { continue };
            let mut record = serde_json::json!({
                "schema": REPORT_SCHEMA,
                "kind": "metrics",
                "split": self.split,
                "direction": direction,
                "tie_policy": self.options.tie_policy,
                "head_mode": self.options.head_mode,
                "filtered": self.options.filtered,
                "count": m.count,
                "mrr": m.mrr,
            });
            for k in HITS_AT {
                record[format!("hits@{k}")] = m.hits_at(k).into();
            }
            out.push_str(&record.to_string());
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

/// Tab-separated per-query ranks for error analysis.
pub fn rank_dump(entries: &[RankEntry]) -> String {
    let mut out = String::from("head\trelation\ttail\tside\trank\n");
    for e in entries {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", e.triple.head, e.triple.relation, e.triple.tail, e.side, e.rank);
    }
    out
}
