//! JSON config file whose keys mirror the command-line flags.

use std::path::{Path, PathBuf};

use dmcnet_core::harness::Overrides;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub root: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub method: Option<String>,
    pub repeats: Option<usize>,
    pub seed: Option<u64>,
    pub algo: Option<String>,
    pub perplexity: Option<f64>,
    pub iterations: Option<usize>,
    pub embed: Option<String>,
    pub counts: Option<[usize; 3]>,
    pub side: Option<usize>,
    pub overrides: Overrides,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }
}

/// Field-wise merge; values already set (from flags) win.
pub fn merge_overrides(flags: Overrides, file: &Overrides) -> Overrides {
    let f = file.clone();
    Overrides {
        epochs: flags.epochs.or(f.epochs),
        batch: flags.batch.or(f.batch),
        lr: flags.lr.or(f.lr),
        head_epochs: flags.head_epochs.or(f.head_epochs),
        head_lr: flags.head_lr.or(f.head_lr),
        svm_c: flags.svm_c.or(f.svm_c),
        svm_gamma: flags.svm_gamma.or(f.svm_gamma),
        svm_tol: flags.svm_tol.or(f.svm_tol),
        train_fraction: flags.train_fraction.or(f.train_fraction),
        balance_count: flags.balance_count.or(f.balance_count),
        channels: flags.channels.or(f.channels),
        side: flags.side.or(f.side),
    }
}

pub fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T, CliError> {
    flag.or(file)
        .ok_or_else(|| CliError::Invalid(format!("--{name} is required (flag or config file)")))
}
