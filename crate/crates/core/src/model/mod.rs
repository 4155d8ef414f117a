//! Serial and parallel AcrE: a 2-D reshape of `[e; r]`, a standard
//! convolution followed by atrous convolutions, a residual shortcut back to
//! the reshaped input, and a 1-N score head against every entity.

mod config;
mod forward;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{Integration, ModelConfig, Structure};
pub use forward::{forward, integrate, reshape_2d, score_all, ForwardPass, Mode, NormUpdate, ParamVars};
pub use params::{count_for_config, BatchNorm, ConvStage, ModelParams, Norms, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM};

use crate::tensor::{Tape, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{kind} id {id} out of range (have {len})")]
    InvalidId { kind: &'static str, id: usize, len: usize },
    #[error("{0}")]
    Shape(String),
}

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AcrE {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl AcrE {
    pub fn new(config: ModelConfig, num_entities: usize, num_relations: usize, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&config, num_entities, num_relations, &mut rng)?;
        Ok(AcrE { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Self {
        AcrE { config, params }
    }

    pub fn num_entities(&self) -> usize {
        self.params.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.params.num_relations()
    }

    /// Eval-mode raw scores, `[queries.len() * N]` row-major.
    pub fn scores(&self, queries: &[(usize, usize)]) -> Result<Vec<f64>, ModelError> {
        self.run(queries, |p| p.scores)
    }

    /// Eval-mode probabilities, `[queries.len() * N]` row-major.
    pub fn predict(&self, queries: &[(usize, usize)]) -> Result<Vec<f64>, ModelError> {
        self.run(queries, |p| p.probs)
    }

    fn run(
        &self,
        queries: &[(usize, usize)],
        pick: impl Fn(&ForwardPass) -> crate::tensor::Var,
    ) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, &self.params);
        // eval mode never draws from the rng
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = forward(&mut tape, &vars, &self.params, &self.config, queries, Mode::Eval, &mut rng)?;
        Ok(tape.value(pick(&pass)).to_vec())
    }

    /// Probabilities for one query, requiring the serial structure.
    pub fn forward_serial(&self, head: usize, relation: usize) -> Result<Vec<f64>, ModelError> {
        self.require(Structure::Serial)?;
        self.predict(&[(head, relation)])
    }

    /// Probabilities for one query, requiring the parallel structure.
    pub fn forward_parallel(&self, head: usize, relation: usize) -> Result<Vec<f64>, ModelError> {
        self.require(Structure::Parallel)?;
        self.predict(&[(head, relation)])
    }

    fn require(&self, structure: Structure) -> Result<(), ModelError> {
        if self.config.structure != structure {
            return Err(ModelError::Config(vec![format!("model is {}, not {structure}", self.config.structure)]));
        }
        Ok(())
    }
}
