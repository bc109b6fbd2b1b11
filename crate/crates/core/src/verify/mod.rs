//! Oracle suite behind the `verify` command.

pub mod oracles;
mod suite;

pub use suite::{
    auc_pair_counting, fault_injection, layer_gradients, pca_jacobi, run_check, run_suite,
    smo_dual_optimum, tsne_gradient_check, CheckOutcome, CHECKS,
};
