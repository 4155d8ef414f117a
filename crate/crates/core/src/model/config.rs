use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// How the standard and atrous convolution stages are wired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// Each stage convolves the previous stage's output.
    Serial,
    /// Every stage convolves the reshaped input; results are integrated.
    Parallel,
}

/// How parallel stage outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integration {
    Add,
    Concat,
}

impl FromStr for Structure {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "serial" => Ok(Structure::Serial),
            "parallel" => Ok(Structure::Parallel),
            other => Err(format!("unknown structure `{other}` (serial | parallel)")),
        }
    }
}

impl FromStr for Integration {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "add" => Ok(Integration::Add),
            "concat" | "con" => Ok(Integration::Concat),
            other => Err(format!("unknown integration `{other}` (add | concat)")),
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Structure::Serial => "serial",
            Structure::Parallel => "parallel",
        })
    }
}

impl fmt::Display for Integration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Integration::Add => "add",
            Integration::Concat => "concat",
        })
    }
}

/// Architectural hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Entity and relation embedding width `m`.
    pub embedding_dim: usize,
    /// Rows `n1` of the 2-D reshape; `n1 * n2 == 2 * m`.
    pub reshape_rows: usize,
    /// Columns `n2` of the 2-D reshape.
    pub reshape_cols: usize,
    /// Square kernel size `k` of every stage.
    pub kernel_size: usize,
    /// Filters `F` per convolution stage.
    pub filters: usize,
    /// Atrous rate of each of the `T` atrous stages.
    pub rates: Vec<usize>,
    pub structure: Structure,
    /// Only used by the parallel structure.
    pub integration: Integration,
    pub input_dropout: f64,
    pub feature_dropout: f64,
    pub hidden_dropout: f64,
    pub batch_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 200,
            reshape_rows: 20,
            reshape_cols: 20,
            kernel_size: 3,
            filters: 32,
            rates: vec![1, 2, 4],
            structure: Structure::Serial,
            integration: Integration::Concat,
            input_dropout: 0.2,
            feature_dropout: 0.2,
            hidden_dropout: 0.3,
            batch_norm: true,
        }
    }
}

impl ModelConfig {
    /// Number of atrous stages `T`.
    pub fn atrous_stages(&self) -> usize {
        self.rates.len()
    }

    /// Length of the flattened feature vector fed to the score head.
    pub fn feature_len(&self) -> usize {
        self.reshape_rows * self.reshape_cols
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if self.embedding_dim == 0 {
            errors.push("embedding_dim must be positive".to_string());
        }
        if 2 * self.embedding_dim != self.reshape_rows * self.reshape_cols {
            errors.push(format!(
                "reshape {}x{} must hold 2 * embedding_dim = {} values",
                self.reshape_rows,
                self.reshape_cols,
                2 * self.embedding_dim
            ));
        }
        if self.kernel_size == 0 {
            errors.push("kernel_size must be positive".to_string());
        }
        if self.filters == 0 {
            errors.push("filters must be positive".to_string());
        }
        if self.rates.contains(&0) {
            errors.push(format!("atrous rates must be >= 1, got {:?}", self.rates));
        }
        for (name, p) in [
            ("input_dropout", self.input_dropout),
            ("feature_dropout", self.feature_dropout),
            ("hidden_dropout", self.hidden_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                errors.push(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}
