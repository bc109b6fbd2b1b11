//! Seeded end-to-end experiments over the eight benchmark methods, with
//! aggregate statistics and report files.

mod pipeline;
mod reduce;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, DatasetManifest};
use crate::dimred::DimredError;
use crate::features::FeatureError;
use crate::metrics::{MetricReport, MetricsError, PerClass};
use crate::nn::NnError;
use crate::svm::SvmError;

pub use pipeline::{run_method, run_method_with, FeatureCache};
pub use reduce::{reduce, ReduceAlgo, ReduceConfig, Reduction};
pub use report::{emit_report, render_table, write_reduction_csv, REPORT_FILES};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("train and test sets share {0} image(s)")]
    Leakage(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dimred(#[from] DimredError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Whether the failure came from the filesystem rather than from the inputs.
    pub fn is_io(&self) -> bool {
        match self {
            HarnessError::Io { .. } => true,
            HarnessError::Dataset(DatasetError::Io { .. }) => true,
            HarnessError::Feature(FeatureError::Io(_)) => true,
            HarnessError::Nn(NnError::Io(_)) => true,
            HarnessError::Dimred(DimredError::Io(_)) => true,
            _ => false,
        }
    }
}

/// The eight benchmark methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    Cnn,
    HogSvm,
    HogCnn,
    HogSiftSvm,
    SurfSvm,
    Densenet121,
    Resnet18,
    Mobilenetv1,
}

impl MethodId {
    pub const ALL: [MethodId; 8] = [
        MethodId::Cnn,
        MethodId::HogSvm,
        MethodId::HogCnn,
        MethodId::HogSiftSvm,
        MethodId::SurfSvm,
        MethodId::Densenet121,
        MethodId::Resnet18,
        MethodId::Mobilenetv1,
    ];

    pub fn id(self) -> &'static str {
        match self {
            MethodId::Cnn => "cnn",
            MethodId::HogSvm => "hog_svm",
            MethodId::HogCnn => "hog_cnn",
            MethodId::HogSiftSvm => "hog_sift_svm",
            MethodId::SurfSvm => "surf_svm",
            MethodId::Densenet121 => "densenet121",
            MethodId::Resnet18 => "resnet18",
            MethodId::Mobilenetv1 => "mobilenetv1",
        }
    }

    /// Row label used in the rendered results table.
    pub fn label(self) -> &'static str {
        match self {
            MethodId::Cnn => "CNN",
            MethodId::HogSvm => "HOG+SVM",
            MethodId::HogCnn => "HOG+CNN",
            MethodId::HogSiftSvm => "HOG+SIFT+SVM",
            MethodId::SurfSvm => "SURF+SVM",
            MethodId::Densenet121 => "DenseNet",
            MethodId::Resnet18 => "ResNet",
            MethodId::Mobilenetv1 => "MobileNet",
        }
    }

    /// 20 runs for the small CNN, 10 for everything else.
    pub fn default_repeats(self) -> usize {
        if self == MethodId::Cnn {
            20
        } else {
            10
        }
    }

    pub fn is_neural(self) -> bool {
        !matches!(
            self,
            MethodId::HogSvm | MethodId::HogSiftSvm | MethodId::SurfSvm
        )
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MethodId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| HarnessError::UnknownMethod(s.to_string()))
    }
}

/// Optional hyper-parameter overrides. Unset fields keep the method defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub head_epochs: Option<usize>,
    pub head_lr: Option<f64>,
    pub svm_c: Option<f64>,
    pub svm_gamma: Option<f64>,
    pub svm_tol: Option<f64>,
    pub train_fraction: Option<f64>,
    pub balance_count: Option<usize>,
    /// 1 for grayscale network input, 3 for RGB.
    pub channels: Option<usize>,
    /// Side length the network input is resized to.
    pub side: Option<usize>,
}

impl Overrides {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_string()));
        if matches!(self.channels, Some(c) if c != 1 && c != 3) {
            return bad("channels must be 1 or 3");
        }
        if matches!(self.side, Some(s) if s < 8) {
            return bad("side must be at least 8");
        }
        if self.epochs == Some(0) || self.batch == Some(0) || self.head_epochs == Some(0) {
            return bad("epochs and batch must be at least 1");
        }
        for (name, v) in [
            ("lr", self.lr),
            ("head_lr", self.head_lr),
            ("svm_c", self.svm_c),
            ("svm_gamma", self.svm_gamma),
        ] {
            if matches!(v, Some(v) if !(v > 0.0 && v.is_finite())) {
                return bad(&format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: MethodId,
    pub repeats: usize,
    /// Run `k` uses seed `base_seed + k`.
    pub base_seed: u64,
    #[serde(default)]
    pub overrides: Overrides,
}

impl ExperimentConfig {
    pub fn new(method: MethodId, base_seed: u64) -> Self {
        Self {
            method,
            repeats: method.default_repeats(),
            base_seed,
            overrides: Overrides::default(),
        }
    }

    pub fn seed(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub report: MetricReport,
    /// Kept in memory for logging; never written to report files.
    #[serde(skip)]
    pub wall_seconds: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// Mean training loss per epoch for neural methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_history: Option<Vec<f64>>,
    /// Fused-head loss per epoch for hog_cnn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_loss_history: Option<Vec<f64>>,
}

/// Five-number summary plus mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl AccuracyStats {
    /// Quartiles interpolate linearly between order statistics. The standard
    /// deviation uses n − 1 and is 0 for a single value.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        };
        Some(Self {
            mean,
            std,
            min: sorted[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: sorted[n - 1],
        })
    }
}

/// Aggregate of repeated runs of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: MethodId,
    pub repeats: usize,
    pub base_seed: u64,
    pub dataset_checksum: String,
    pub accuracy: AccuracyStats,
    /// Per-class metrics averaged over runs.
    pub mean_report: MetricReport,
    pub runs: Vec<RunResult>,
}

impl Summary {
    pub fn from_runs(
        method: MethodId,
        base_seed: u64,
        dataset_checksum: &str,
        runs: Vec<RunResult>,
    ) -> Result<Self, HarnessError> {
        let accs: Vec<f64> = runs.iter().map(|r| r.report.acc).collect();
        let accuracy = AccuracyStats::from_values(&accs)
            .ok_or_else(|| HarnessError::InvalidConfig("no finite run accuracies".into()))?;
        let mean_report = mean_report(method, &runs);
        Ok(Self {
            method,
            repeats: runs.len(),
            base_seed,
            dataset_checksum: dataset_checksum.to_string(),
            accuracy,
            mean_report,
            runs,
        })
    }
}

fn mean_report(method: MethodId, runs: &[RunResult]) -> MetricReport {
    let n = runs.len() as f64;
    let avg = |get: fn(&MetricReport) -> &PerClass| {
        let mut out = PerClass::new();
        for r in runs {
            for (k, v) in get(&r.report) {
                *out.entry(k.clone()).or_insert(0.0) += v / n;
            }
        }
        out
    };
    let mut flags: Vec<String> = runs
        .iter()
        .flat_map(|r| r.report.flags.iter().cloned())
        .collect();
    flags.sort();
    flags.dedup();
    MetricReport {
        method: method.id().to_string(),
        acc: runs.iter().map(|r| r.report.acc).sum::<f64>() / n,
        gini: avg(|r| &r.gini),
        auc: avg(|r| &r.auc),
        agf: avg(|r| &r.agf),
        sensitivity: avg(|r| &r.sensitivity),
        precision: avg(|r| &r.precision),
        flags,
    }
}

/// Run `cfg.repeats` seeded experiments in order and aggregate them.
pub fn repeat_experiments(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
) -> Result<Summary, HarnessError> {
    let mut cache = FeatureCache::default();
    repeat_experiments_with(cfg, manifest, &mut cache)
}

/// As [`repeat_experiments`], reusing descriptors already held in `cache`.
pub fn repeat_experiments_with(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    cache: &mut FeatureCache,
) -> Result<Summary, HarnessError> {
    if cfg.repeats == 0 {
        return Err(HarnessError::InvalidConfig(
            "repeats must be at least 1".into(),
        ));
    }
    let mut runs = Vec::with_capacity(cfg.repeats);
    for k in 0..cfg.repeats {
        let seed = cfg.seed(k);
        let run = run_method_with(cfg.method, seed, manifest, &cfg.overrides, cache)?;
        log::info!(
            "{} run {}/{} seed {seed}: acc {:.4} ({:.1}s)",
            cfg.method,
            k + 1,
            cfg.repeats,
            run.report.acc,
            run.wall_seconds
        );
        runs.push(run);
    }
    Summary::from_runs(cfg.method, cfg.base_seed, &manifest.checksum, runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn method_ids_round_trip() {
        for m in MethodId::ALL {
            assert_eq!(m.id().parse::<MethodId>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.id())
            );
        }
        assert_eq!(MethodId::ALL.len(), 8);
    }

    #[test]
    fn vgg_is_unknown() {
        assert!(
            matches!("vgg".parse::<MethodId>(), Err(HarnessError::UnknownMethod(s)) if s == "vgg")
        );
    }

    #[test]
    fn default_repeats() {
        assert_eq!(MethodId::Cnn.default_repeats(), 20);
        for m in MethodId::ALL.into_iter().filter(|&m| m != MethodId::Cnn) {
            assert_eq!(m.default_repeats(), 10);
        }
    }

    #[test]
    fn run_seeds_count_up_from_base() {
        let cfg = ExperimentConfig::new(MethodId::HogSvm, 7);
        assert_eq!(
            (0..3).map(|k| cfg.seed(k)).collect::<Vec<_>>(),
            vec![7, 8, 9]
        );
    }

    #[test]
    fn single_value_stats() {
        let s = AccuracyStats::from_values(&[0.42]).unwrap();
        assert_eq!(
            (s.mean, s.std, s.min, s.median, s.max),
            (0.42, 0.0, 0.42, 0.42, 0.42)
        );
    }

    #[test]
    fn five_number_summary() {
        let s = AccuracyStats::from_values(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            (s.min, s.q1, s.median, s.q3, s.max),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-15);
        let even = AccuracyStats::from_values(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((even.q1, even.median, even.q3), (1.75, 2.5, 3.25));
    }

    #[test]
    fn overrides_reject_unknown_keys() {
        assert!(serde_json::from_str::<Overrides>(r#"{"epochs": 3}"#).is_ok());
        assert!(serde_json::from_str::<Overrides>(r#"{"epoch": 3}"#).is_err());
        assert!(Overrides {
            channels: Some(2),
            ..Overrides::default()
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn stats_are_ordered_and_mean_is_arithmetic(v in proptest::collection::vec(0.0f64..1.0, 1..30)) {
            let s = AccuracyStats::from_values(&v).unwrap();
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!((s.mean - mean).abs() <= 1e-12);
            prop_assert!(s.std >= 0.0);
        }
    }
}
