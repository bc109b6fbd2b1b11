//! Principal component analysis and exact t-SNE.

mod pca;
mod tsne;

use thiserror::Error;

pub use pca::{
    fix_sign, jacobi_eigen, pca_decode, pca_encode, pca_fit, pca_reconstruct, PcaConfig, PcaModel,
    GRAM_TRICK_DIM,
};
pub use tsne::{
    conditional_affinities, entropy_bits, symmetrize, tsne_affinities, tsne_gradient, tsne_kl,
    tsne_q, tsne_run, tsne_run_observed, write_embedding_csv, Affinities, Embedding, TsneConfig,
    TsneStep,
};

#[derive(Debug, Error)]
pub enum DimredError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("all pairwise distances are zero")]
    DegenerateDistances,
    #[error("Q is zero where P is positive")]
    SupportMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
