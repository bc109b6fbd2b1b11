//! Soft-margin SVMs trained with SMO, combined one-vs-rest over three classes.

mod smo;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::NUM_CLASSES;

pub use smo::{gram_matrix, smo_train_binary, smo_train_binary_observed};

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training labels contain a single class")]
    DegenerateLabels,
    #[error("binary labels must be +1 or -1")]
    InvalidLabel,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite feature value")]
    NonFiniteInput,
    #[error("class {0} missing from training labels")]
    MissingClass(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    /// RBF with γ = 1 / (dimension · variance of all feature values).
    pub fn rbf_auto(x: &[Vec<f64>]) -> KernelSpec {
        let dim = x.first().map_or(1, Vec::len).max(1);
        let n = (x.len() * dim) as f64;
        let mean = x.iter().flatten().sum::<f64>() / n;
        let var = x.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let var = if var > 0.0 { var } else { 1.0 };
        KernelSpec::Rbf {
            gamma: 1.0 / (dim as f64 * var),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    fn validate(&self) -> Result<(), SvmError> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma.is_finite() && gamma > 0.0) => Err(
                SvmError::InvalidConfig(format!("rbf gamma {gamma} must be positive and finite")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Box constraint.
    pub c: f64,
    /// KKT tolerance.
    pub tol: f64,
    /// Consecutive update-free sweeps before stopping.
    pub max_passes: usize,
    /// Hard cap on sweeps.
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-3,
            max_passes: 10,
            max_sweeps: 10_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), SvmError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SvmError::InvalidConfig("C must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(SvmError::InvalidConfig("tol must lie in (0, 1)".into()));
        }
        if self.max_passes == 0 || self.max_sweeps == 0 {
            return Err(SvmError::InvalidConfig(
                "max_passes must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Support vectors with their dual coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub labels: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub dim: usize,
}

impl SvmModel {
    /// Σ αᵢyᵢK(xᵢ, x) + b.
    pub fn decision(&self, x: &[f64]) -> Result<f64, SvmError> {
        if x.len() != self.dim {
            return Err(SvmError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(self.alphas.iter().zip(&self.labels))
            .map(|(sv, (a, y))| a * y * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias)
    }

    /// Primal weights Σ αᵢyᵢxᵢ; only meaningful for the linear kernel.
    pub fn primal_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.dim];
        for (sv, (a, y)) in self
            .support_vectors
            .iter()
            .zip(self.alphas.iter().zip(&self.labels))
        {
            for (wi, xi) in w.iter_mut().zip(sv) {
                *wi += a * y * xi;
            }
        }
        w
    }
}

/// Per-dimension zero-mean, unit-variance scaling from training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let dim = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Three one-vs-rest machines behind a shared standardizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrClassifier {
    pub standardizer: Option<Standardizer>,
    pub models: Vec<SvmModel>,
}

/// Kernel used when none is given: RBF with the data-derived γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum KernelChoice {
    #[default]
    RbfAuto,
    Fixed(KernelSpec),
}

/// Train class-vs-rest machines for labels in {0,1,2} over one shared Gram matrix.
pub fn ovr_train(
    x: &[Vec<f64>],
    labels: &[usize],
    cfg: &TrainConfig,
    kernel: KernelChoice,
    standardize: bool,
) -> Result<OvrClassifier, SvmError> {
    if x.len() != labels.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.len(),
            got: labels.len(),
        });
    }
    for c in 0..NUM_CLASSES {
        if !labels.contains(&c) {
            return Err(SvmError::MissingClass(c));
        }
    }
    cfg.validate()?;
    let standardizer = standardize.then(|| Standardizer::fit(x));
    let xs: Vec<Vec<f64>> = match &standardizer {
        Some(s) => x.iter().map(|r| s.apply(r)).collect(),
        None => x.to_vec(),
    };
    let kernel = match kernel {
        KernelChoice::RbfAuto => KernelSpec::rbf_auto(&xs),
        KernelChoice::Fixed(k) => k,
    };
    kernel.validate()?;
    let gram = gram_matrix(&xs, &kernel);
    let mut models = Vec::with_capacity(NUM_CLASSES);
    for c in 0..NUM_CLASSES {
        let y: Vec<f64> = labels
            .iter()
            .map(|&l| if l == c { 1.0 } else { -1.0 })
            .collect();
        smo::validate(&xs, &y)?;
        let sol = smo::solve_dual(&gram, &y, cfg, &mut |_| {});
        models.push(smo::into_model(&xs, &y, sol, kernel));
    }
    Ok(OvrClassifier {
        standardizer,
        models,
    })
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl OvrClassifier {
    pub fn scores(&self, x: &[f64]) -> Result<[f64; NUM_CLASSES], SvmError> {
        let xs = match &self.standardizer {
            Some(s) => {
                if x.len() != s.mean.len() {
                    return Err(SvmError::DimensionMismatch {
                        expected: s.mean.len(),
                        got: x.len(),
                    });
                }
                s.apply(x)
            }
            None => x.to_vec(),
        };
        let mut out = [0.0; NUM_CLASSES];
        for (o, m) in out.iter_mut().zip(&self.models) {
            *o = m.decision(&xs)?;
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize, SvmError> {
        Ok(argmax_lowest(&self.scores(x)?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SvmError> {
        serde_json::from_str(s).map_err(|e| SvmError::Json(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::oracles::{
        jacobi_eigen_classic, svm_dual_exact, svm_dual_grid_search, svm_dual_objective,
    };
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn tight() -> TrainConfig {
        TrainConfig {
            c: 10.0,
            tol: 1e-6,
            max_passes: 20,
            ..Default::default()
        }
    }

    fn dual_alphas(model: &SvmModel, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter()
            .map(|xi| {
                model
                    .support_vectors
                    .iter()
                    .position(|sv| sv == xi)
                    .map_or(0.0, |k| model.alphas[k])
            })
            .collect()
    }

    #[test]
    fn symmetric_pair() {
        let x = vec![vec![1.0], vec![-1.0]];
        let y = [1.0, -1.0];
        let m = smo_train_binary(
            &x,
            &y,
            &TrainConfig {
                c: 10.0,
                ..Default::default()
            },
            KernelSpec::Linear,
        )
        .unwrap();
        assert!(m.decision(&[1.0]).unwrap() > 0.0);
        assert!(m.decision(&[-1.0]).unwrap() < 0.0);
        assert!(m.decision(&[0.0]).unwrap().abs() < 1e-6);
        assert!((m.decision(&[1.0]).unwrap() + m.decision(&[-1.0]).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn xor_with_rbf() {
        let x = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ];
        let y = [-1.0, -1.0, 1.0, 1.0];
        let kernel = KernelSpec::Rbf { gamma: 1.0 };
        let m = smo_train_binary(&x, &y, &tight(), kernel).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!(m.decision(xi).unwrap() * yi > 0.0);
        }
        let gram = gram_matrix(&x, &kernel);
        let smo_w = svm_dual_objective(&dual_alphas(&m, &x), &y, &gram);
        let grid_w = svm_dual_grid_search(&gram, &y, 10.0, 0.1);
        let (exact_w, _) = svm_dual_exact(&gram, &y, 10.0);
        assert!(smo_w >= grid_w - 1e-3, "smo {smo_w} grid {grid_w}");
        assert!((smo_w - exact_w).abs() <= 1e-3);
    }

    #[test]
    fn label_errors() {
        let x = vec![vec![1.0], vec![2.0]];
        assert_eq!(
            smo_train_binary(&x, &[1.0, 1.0], &TrainConfig::default(), KernelSpec::Linear),
            Err(SvmError::DegenerateLabels)
        );
        let bad = vec![vec![1.0], vec![2.0, 3.0]];
        assert!(matches!(
            smo_train_binary(
                &bad,
                &[1.0, -1.0],
                &TrainConfig::default(),
                KernelSpec::Linear
            ),
            Err(SvmError::DimensionMismatch { .. })
        ));
        let nan = vec![vec![f64::NAN], vec![2.0]];
        assert_eq!(
            smo_train_binary(
                &nan,
                &[1.0, -1.0],
                &TrainConfig::default(),
                KernelSpec::Linear
            ),
            Err(SvmError::NonFiniteInput)
        );
        let m = smo_train_binary(
            &x,
            &[1.0, -1.0],
            &TrainConfig::default(),
            KernelSpec::Linear,
        )
        .unwrap();
        assert!(m.decision(&[1.0, 2.0]).is_err());
    }

    fn random_set(rng: &mut crate::rng::Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let mut y: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        y[0] = 1.0;
        y[1] = -1.0;
        (x, y)
    }

    #[test]
    fn kkt_conditions_hold() {
        let mut rng = crate::rng::seeded(41);
        let (x, y) = random_set(&mut rng, 40, 3);
        let cfg = TrainConfig {
            c: 2.0,
            tol: 1e-3,
            ..Default::default()
        };
        let kernel = KernelSpec::Rbf { gamma: 0.5 };
        let m = smo_train_binary(&x, &y, &cfg, kernel).unwrap();
        let alpha = dual_alphas(&m, &x);
        let slack = 2.0 * cfg.tol;
        for i in 0..x.len() {
            let margin = y[i] * m.decision(&x[i]).unwrap();
            if alpha[i] == 0.0 {
                assert!(margin >= 1.0 - slack, "i={i} margin {margin}");
            } else if alpha[i] < cfg.c {
                assert!((margin - 1.0).abs() <= slack, "free i={i} margin {margin}");
            } else {
                assert!(margin <= 1.0 + slack);
            }
        }
        let eq: f64 = m.alphas.iter().zip(&m.labels).map(|(a, l)| a * l).sum();
        assert!(eq.abs() < 1e-6);
    }

    #[test]
    fn feasibility_and_monotone_objective_at_every_step() {
        let mut rng = crate::rng::seeded(42);
        let (x, y) = random_set(&mut rng, 25, 2);
        let kernel = KernelSpec::Rbf { gamma: 1.0 };
        let gram = gram_matrix(&x, &kernel);
        let cfg = TrainConfig {
            c: 1.5,
            ..Default::default()
        };
        let mut last = 0.0;
        let mut steps = 0;
        smo_train_binary_observed(&x, &y, &cfg, kernel, &mut |a| {
            steps += 1;
            let eq: f64 = a.iter().zip(&y).map(|(ai, yi)| ai * yi).sum();
            assert!(eq.abs() < 1e-6);
            assert!(a.iter().all(|&ai| (0.0..=cfg.c).contains(&ai)));
            let w = svm_dual_objective(a, &y, &gram);
            assert!(w >= last - 1e-12, "objective fell from {last} to {w}");
            last = w;
        })
        .unwrap();
        assert!(steps > 0);
    }

    #[test]
    fn linear_decision_equals_primal_form() {
        let mut rng = crate::rng::seeded(5);
        let (x, y) = random_set(&mut rng, 20, 3);
        let m = smo_train_binary(&x, &y, &TrainConfig::default(), KernelSpec::Linear).unwrap();
        let w = m.primal_weights();
        for _ in 0..10 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let primal: f64 = w.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() + m.bias;
            assert!((m.decision(&p).unwrap() - primal).abs() < 1e-9);
        }
    }

    #[test]
    fn free_support_vectors_sit_on_the_margin() {
        let mut rng = crate::rng::seeded(6);
        let (x, y) = random_set(&mut rng, 30, 2);
        let cfg = TrainConfig {
            c: 5.0,
            tol: 1e-4,
            ..Default::default()
        };
        let m = smo_train_binary(&x, &y, &cfg, KernelSpec::Rbf { gamma: 0.7 }).unwrap();
        for (k, sv) in m.support_vectors.iter().enumerate() {
            if m.alphas[k] < cfg.c {
                let v = m.labels[k] * m.decision(sv).unwrap();
                assert!((v - 1.0).abs() <= 2.0 * cfg.tol, "{v}");
            }
        }
    }

    #[test]
    fn order_does_not_change_training_predictions() {
        let mut rng = crate::rng::seeded(7);
        let (x, y) = random_set(&mut rng, 30, 2);
        let kernel = KernelSpec::Rbf { gamma: 1.0 };
        let cfg = TrainConfig {
            c: 1.0,
            tol: 1e-4,
            ..Default::default()
        };
        let a = smo_train_binary(&x, &y, &cfg, kernel).unwrap();
        let perm: Vec<usize> = (0..x.len()).rev().collect();
        let xp: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let b = smo_train_binary(&xp, &yp, &TrainConfig { seed: 99, ..cfg }, kernel).unwrap();
        for xi in &x {
            let (da, db) = (a.decision(xi).unwrap(), b.decision(xi).unwrap());
            assert_eq!(da > 0.0, db > 0.0, "{da} vs {db}");
        }
    }

    #[test]
    fn rbf_gram_is_psd() {
        let mut rng = crate::rng::seeded(8);
        for _ in 0..20 {
            let (x, _) = random_set(&mut rng, 10, 3);
            let g = gram_matrix(&x, &KernelSpec::Rbf { gamma: 0.8 });
            let (vals, _) = jacobi_eigen_classic(&g);
            assert!(*vals.last().unwrap() >= -1e-8);
        }
    }

    fn clusters(rng: &mut crate::rng::Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
        let noise = Normal::new(0.0, 0.1).unwrap();
        let centres = [(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)];
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for (c, &(cx, cy)) in centres.iter().enumerate() {
            for _ in 0..20 {
                x.push(vec![cx + noise.sample(rng), cy + noise.sample(rng)]);
                labels.push(c);
            }
        }
        (x, labels)
    }

    #[test]
    fn ovr_separates_three_clusters() {
        let mut rng = crate::rng::seeded(9);
        let (x, labels) = clusters(&mut rng);
        let centres = [(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)];
        let clf = ovr_train(
            &x,
            &labels,
            &TrainConfig::default(),
            KernelChoice::Fixed(KernelSpec::Rbf { gamma: 0.5 }),
            false,
        )
        .unwrap();
        for (xi, &l) in x.iter().zip(&labels) {
            let nearest = (0..3)
                .min_by(|&a, &b| {
                    let da = (xi[0] - centres[a].0).hypot(xi[1] - centres[a].1);
                    let db = (xi[0] - centres[b].0).hypot(xi[1] - centres[b].1);
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(nearest, l);
            assert_eq!(clf.predict(xi).unwrap(), l);
        }
        let back = OvrClassifier::from_json(&clf.to_json()).unwrap();
        assert_eq!(back, clf);
    }

    #[test]
    fn ties_go_to_lowest_class() {
        assert_eq!(argmax_lowest(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax_lowest(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn missing_class() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(
            ovr_train(
                &x,
                &[0, 1, 1],
                &TrainConfig::default(),
                KernelChoice::RbfAuto,
                true
            ),
            Err(SvmError::MissingClass(2))
        );
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let x = vec![
            vec![1.0, 5.0, 3.0],
            vec![3.0, 5.0, -1.0],
            vec![5.0, 5.0, 7.0],
        ];
        let s = Standardizer::fit(&x);
        let z: Vec<Vec<f64>> = x.iter().map(|r| s.apply(r)).collect();
        for d in 0..3 {
            let mean: f64 = z.iter().map(|r| r[d]).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
        }
        assert!(z.iter().all(|r| r[1] == 0.0));
    }
}
