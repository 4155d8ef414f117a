use std::fmt::Write as _;

use log::info;
use serde::{Deserialize, Serialize};

use super::{train, TrainConfig, TrainError, TrainOutcome};
use crate::data::TripleStore;

/// Cartesian search space over the validation split. A dropout value is
/// applied at all three dropout positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub learning_rates: Vec<f64>,
    pub dropouts: Vec<f64>,
    pub rates: Vec<Vec<usize>>,
    pub label_smoothings: Vec<f64>,
}

impl Default for GridSpace {
    fn default() -> Self {
        GridSpace {
            learning_rates: vec![1e-3, 5e-4],
            dropouts: vec![0.1, 0.2, 0.3],
            rates: vec![vec![1, 2, 4], vec![2, 3, 5]],
            label_smoothings: vec![0.0, 0.1],
        }
    }
}

impl GridSpace {
    /// A space containing exactly `base`'s own values.
    pub fn single(base: &TrainConfig) -> Self {
        GridSpace {
            learning_rates: vec![base.learning_rate],
            dropouts: vec![],
            rates: vec![base.model.rates.clone()],
            label_smoothings: vec![base.label_smoothing],
        }
    }

    /// Every cell applied to `base`, in row-major order over the fields.
    /// An empty `dropouts` list keeps `base`'s dropout values.
    pub fn cells(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let dropouts: Vec<Option<f64>> =
            if self.dropouts.is_empty() { vec![None] } else { self.dropouts.iter().copied().map(Some).collect() };
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &dropout in &dropouts {
                for rates in &self.rates {
                    for &ls in &self.label_smoothings {
                        let mut cfg = base.clone();
                        cfg.learning_rate = lr;
                        cfg.label_smoothing = ls;
                        cfg.model.rates = rates.clone();
                        if let Some(p) = dropout {
                            cfg.model.input_dropout = p;
                            cfg.model.feature_dropout = p;
                            cfg.model.hidden_dropout = p;
                        }
                        out.push(cfg);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub learning_rate: f64,
    pub dropout: [f64; 3],
    pub rates: Vec<usize>,
    pub label_smoothing: f64,
    pub epochs_run: usize,
    pub valid_mrr: f64,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// One row per cell, in [`GridSpace::cells`] order.
    pub rows: Vec<GridRow>,
    pub best_index: usize,
    pub best: TrainConfig,
    /// `best` retrained at the full epoch budget.
    pub outcome: TrainOutcome,
}

impl GridResult {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:>4} {:>9} {:>15} {:>10} {:>6} {:>7} {:>9}\n",
            "cell", "lr", "dropout", "rates", "ls", "epochs", "valid MRR"
        );
        for (i, r) in self.rows.iter().enumerate() {
            let marker = if i == self.best_index { "*" } else { " " };
            let rates = r.rates.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
            let drop = format!("{}/{}/{}", r.dropout[0], r.dropout[1], r.dropout[2]);
            let _ = writeln!(
                out,
                "{i:>3}{marker} {:>9.1e} {drop:>15} {rates:>10} {:>6} {:>7} {:>9.4}",
                r.learning_rate, r.label_smoothing, r.epochs_run, r.valid_mrr
            );
        }
        out
    }
}

/// Trains each cell for at most `short_epochs`, keeps the cell with the
/// highest validation MRR (earliest on ties) and retrains it for its full
/// budget.
pub fn grid_search(
    store: &TripleStore,
    base: &TrainConfig,
    space: &GridSpace,
    short_epochs: usize,
) -> Result<GridResult, TrainError> {
    let cells = space.cells(base);
    if cells.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    if short_epochs == 0 {
        return Err(TrainError::Config(vec!["grid search needs a positive short budget".into()]));
    }
    let mut rows = Vec::with_capacity(cells.len());
    let mut best_index = 0;
    for (i, cell) in cells.iter().enumerate() {
        let short = TrainConfig { epochs: short_epochs.min(cell.epochs), ..cell.clone() };
        let outcome = train(store, &short, |_| {})?;
        let valid_mrr = outcome.checkpoint.best_valid_mrr;
        info!("grid cell {i}: valid MRR {valid_mrr:.4}");
        let m = &cell.model;
        rows.push(GridRow {
            learning_rate: cell.learning_rate,
            dropout: [m.input_dropout, m.feature_dropout, m.hidden_dropout],
            rates: m.rates.clone(),
            label_smoothing: cell.label_smoothing,
            epochs_run: outcome.history.len(),
            valid_mrr,
        });
        if valid_mrr > rows[best_index].valid_mrr {
            best_index = i;
        }
    }
    let best = cells[best_index].clone();
    let outcome = train(store, &best, |_| {})?;
    Ok(GridResult { rows, best_index, best, outcome })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_space_has_24_cells() {
        let cells = GridSpace::default().cells(&TrainConfig::default());
        assert_eq!(cells.len(), 24);
        assert_eq!(cells[0].model.rates, vec![1, 2, 4]);
        assert_eq!(cells[23].learning_rate, 5e-4);
    }

    #[test]
    fn single_space_is_base() {
        let base = TrainConfig::default();
        assert_eq!(GridSpace::single(&base).cells(&base), vec![base]);
    }
}
