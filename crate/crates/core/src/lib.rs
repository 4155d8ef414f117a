//! AcrE: knowledge graph embeddings from atrous convolutions with residual
//! learning, together with the tensor, data, training and evaluation pieces
//! needed to train and score it.

pub mod config;
pub mod data;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod train;
