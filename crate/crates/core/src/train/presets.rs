//! Named configurations for the benchmark datasets.
//!
//! The FB15k-237 presets pick `m` and the reshape grid so that the trainable
//! parameter count lands near the published totals for each structure; the
//! rest of the architecture is the library default.

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::model::{count_for_config, Integration, ModelConfig, Structure};

/// Vocabulary sizes of a dataset, before reciprocal relations are added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetShape {
    pub name: &'static str,
    pub entities: usize,
    pub relations: usize,
}

impl DatasetShape {
    pub const KINSHIP: DatasetShape = DatasetShape { name: "kinship", entities: 104, relations: 25 };
    pub const FB15K_237: DatasetShape = DatasetShape { name: "fb15k-237", entities: 14541, relations: 237 };
    pub const FB15K: DatasetShape = DatasetShape { name: "fb15k", entities: 14951, relations: 1345 };
    pub const WN18RR: DatasetShape = DatasetShape { name: "wn18rr", entities: 40943, relations: 11 };
    pub const WN18: DatasetShape = DatasetShape { name: "wn18", entities: 40943, relations: 18 };
    pub const DB100K: DatasetShape = DatasetShape { name: "db100k", entities: 99604, relations: 470 };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub dataset: DatasetShape,
    pub train: TrainConfig,
}

impl Preset {
    /// Parameter count with reciprocal relations, as trained.
    pub fn param_count(&self) -> usize {
        count_for_config(&self.train.model, self.dataset.entities, 2 * self.dataset.relations)
    }
}

/// Narrow filters and small batches keep a full run to minutes on one core.
fn kinship(structure: Structure) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        learning_rate: 3e-3,
        epochs: 200,
        eval_every: 10,
        patience: 10,
        label_smoothing: 0.1,
        model: ModelConfig { filters: 8, structure, integration: Integration::Concat, ..ModelConfig::default() },
        ..TrainConfig::default()
    }
}

fn fb15k_237(structure: Structure) -> TrainConfig {
    let (m, rows, cols) = match structure {
        Structure::Serial => (352, 22, 32),
        Structure::Parallel => (392, 28, 28),
    };
    TrainConfig {
        epochs: 500,
        model: ModelConfig {
            embedding_dim: m,
            reshape_rows: rows,
            reshape_cols: cols,
            structure,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn generic(structure: Structure) -> TrainConfig {
    TrainConfig { epochs: 500, model: ModelConfig { structure, ..ModelConfig::default() }, ..TrainConfig::default() }
}

const SHAPES: [DatasetShape; 6] = [
    DatasetShape::KINSHIP,
    DatasetShape::FB15K_237,
    DatasetShape::FB15K,
    DatasetShape::WN18RR,
    DatasetShape::WN18,
    DatasetShape::DB100K,
];

/// All preset names, `<dataset>-<structure>`.
pub fn preset_names() -> Vec<String> {
    SHAPES.iter().flat_map(|d| ["serial", "parallel"].map(|s| format!("{}-{s}", d.name))).collect()
}

pub fn preset(name: &str) -> Option<Preset> {
    let (dataset, structure) = name.rsplit_once('-')?;
    let structure: Structure = structure.parse().ok()?;
    let shape = *SHAPES.iter().find(|d| d.name == dataset)?;
    let train = match shape.name {
        "kinship" => kinship(structure),
        "fb15k-237" => fb15k_237(structure),
        _ => generic(structure),
    };
    Some(Preset { name: name.to_string(), dataset: shape, train })
}
