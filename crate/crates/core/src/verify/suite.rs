use std::time::Instant;

use rand::Rng as _;

use super::oracles::{
    central_difference, jacobi_eigen_classic, max_relative_error, pair_counting_auc,
    svm_dual_exact, svm_dual_grid_search, svm_dual_objective,
};
use crate::dimred::{
    fix_sign, pca_fit, pca_reconstruct, symmetrize, tsne_gradient, tsne_kl, tsne_q, PcaConfig,
};
use crate::metrics::roc_auc;
use crate::nn::{
    build_module, gradient_check, gradient_check_with, module_gradient_check, ConvSpec, LayerSpec,
    LossKind, Network, NetworkSpec, Tensor,
};
use crate::rng::{self, Rng};
use crate::svm::{gram_matrix, smo_train_binary_observed, KernelSpec, TrainConfig};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = fn(u64) -> Result<String, String>;

pub const CHECKS: [(&str, Check); 6] = [
    ("auc_pair_counting", auc_pair_counting),
    ("smo_dual_optimum", smo_dual_optimum),
    ("pca_jacobi", pca_jacobi),
    ("layer_gradients", layer_gradients),
    ("tsne_gradient", tsne_gradient_check),
    ("fault_injection", fault_injection),
];

pub fn run_check(name: &'static str, check: Check, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let result = check(seed);
    let seconds = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => CheckOutcome {
            name,
            passed: true,
            detail,
            seconds,
        },
        Err(detail) => CheckOutcome {
            name,
            passed: false,
            detail,
            seconds,
        },
    }
}

/// Every check in order, all derived from `seed`.
pub fn run_suite(seed: u64) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|&(name, check)| run_check(name, check, seed))
        .collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Trapezoidal AUC against the pair-counting definition on 500 random
/// instances with up to 200 tied or distinct scores.
pub fn auc_pair_counting(seed: u64) -> Result<String, String> {
    let mut r = rng::seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = r.random_range(2..=200);
        let coarse = r.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    r.random_range(0..5) as f64 / 4.0
                } else {
                    r.random_range(-3.0..3.0)
                }
            })
            .collect();
        let mut truth: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        truth[0] = true;
        truth[1] = false;
        let (_, auc) = roc_auc(&scores, &truth).map_err(|e| e.to_string())?;
        worst = worst.max((auc - pair_counting_auc(&scores, &truth)).abs());
    }
    ensure(worst <= 1e-9, || {
        format!("max |AUC − pair count| = {worst:e}")
    })?;
    Ok(format!("500 instances, max deviation {worst:.1e}"))
}

fn random_binary(r: &mut Rng, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)])
        .collect();
    let mut y: Vec<f64> = (0..n)
        .map(|_| if r.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    y[0] = 1.0;
    y[1] = -1.0;
    (x, y)
}

/// Multipliers SMO ends with, as reported by its per-update observer.
fn smo_alphas(
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &TrainConfig,
    kernel: KernelSpec,
) -> Result<Vec<f64>, String> {
    let mut last = vec![0.0; y.len()];
    smo_train_binary_observed(x, y, cfg, kernel, &mut |a| last = a.to_vec())
        .map_err(|e| e.to_string())?;
    Ok(last)
}

/// On 100 random datasets of 2–6 points, SMO's dual objective must reach the
/// exact optimum (face enumeration) within 1e-3 and, for up to 4 points, be no
/// worse than a dense grid search by more than 1e-3. XOR under RBF must be
/// separated.
pub fn smo_dual_optimum(seed: u64) -> Result<String, String> {
    let mut r = rng::seeded(seed);
    let (mut worst_exact, mut worst_grid) = (0.0f64, f64::NEG_INFINITY);
    for case in 0..100 {
        let n = r.random_range(2..=6);
        let (x, y) = random_binary(&mut r, n);
        let kernel = if r.random_bool(0.5) {
            KernelSpec::Linear
        } else {
            KernelSpec::Rbf {
                gamma: r.random_range(0.2..2.0),
            }
        };
        let c = [0.5, 1.0, 4.0][r.random_range(0..3)];
        let cfg = TrainConfig {
            c,
            tol: 1e-5,
            max_passes: 20,
            seed: seed.wrapping_add(case),
            ..TrainConfig::default()
        };
        let gram = gram_matrix(&x, &kernel);
        let w = svm_dual_objective(&smo_alphas(&x, &y, &cfg, kernel)?, &y, &gram);
        let (exact, _) = svm_dual_exact(&gram, &y, c);
        worst_exact = worst_exact.max((w - exact).abs());
        if n <= 4 {
            worst_grid = worst_grid.max(svm_dual_grid_search(&gram, &y, c, c / 100.0) - w);
        }
    }
    ensure(worst_exact <= 1e-3, || {
        format!("SMO misses exact optimum by {worst_exact:e}")
    })?;
    ensure(worst_grid <= 1e-3, || {
        format!("grid search beats SMO by {worst_grid:e}")
    })?;

    let x = vec![
        vec![0.0, 0.0],
        vec![1.0, 1.0],
        vec![0.0, 1.0],
        vec![1.0, 0.0],
    ];
    let y = [-1.0, -1.0, 1.0, 1.0];
    let cfg = TrainConfig {
        c: 10.0,
        ..TrainConfig::default()
    };
    let m = crate::svm::smo_train_binary(&x, &y, &cfg, KernelSpec::Rbf { gamma: 1.0 })
        .map_err(|e| e.to_string())?;
    let correct = x
        .iter()
        .zip(&y)
        .filter(|(xi, yi)| m.decision(xi).map_or(false, |d| d * *yi > 0.0))
        .count();
    ensure(correct == 4, || format!("XOR train accuracy {correct}/4"))?;
    Ok(format!(
        "100 datasets, exact gap {worst_exact:.1e}, grid margin {:.1e}, XOR 4/4",
        -worst_grid
    ))
}

/// PCA components against a classical Jacobi eigensolve of the covariance on
/// 50 random 10×6 datasets, plus monotone reconstruction error in l.
pub fn pca_jacobi(seed: u64) -> Result<String, String> {
    let mut r = rng::seeded(seed);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let x: Vec<Vec<f64>> = (0..10)
            .map(|_| {
                (0..6)
                    .map(|j| r.random_range(-1.0..1.0) * (j + 1) as f64)
                    .collect()
            })
            .collect();
        let mean: Vec<f64> = (0..6)
            .map(|j| x.iter().map(|row| row[j]).sum::<f64>() / 10.0)
            .collect();
        let cov: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                (0..6)
                    .map(|j| {
                        x.iter()
                            .map(|row| (row[i] - mean[i]) * (row[j] - mean[j]))
                            .sum::<f64>()
                            / 9.0
                    })
                    .collect()
            })
            .collect();
        let (values, vectors) = jacobi_eigen_classic(&cov);
        let model = pca_fit(&x, &PcaConfig::new(6)).map_err(|e| e.to_string())?;
        for k in 0..6 {
            let mut ours = model.components[k].clone();
            fix_sign(&mut ours);
            let mut theirs = vectors[k].clone();
            fix_sign(&mut theirs);
            for (a, b) in ours.iter().zip(&theirs) {
                worst = worst.max((a - b).abs());
            }
            worst = worst.max((model.variances[k] - values[k]).abs());
        }
        let mut prev = f64::INFINITY;
        for l in 1..=6 {
            let m = pca_fit(&x, &PcaConfig::new(l)).map_err(|e| e.to_string())?;
            let mut err = 0.0;
            for row in &x {
                let rec = pca_reconstruct(&m, row).map_err(|e| e.to_string())?;
                err += row
                    .iter()
                    .zip(&rec)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>();
            }
            ensure(err <= prev + 1e-9, || {
                format!("case {case}: error rose from {prev} to {err} at l={l}")
            })?;
            prev = err;
        }
    }
    ensure(worst <= 1e-8, || {
        format!("max component deviation {worst:e}")
    })?;
    Ok(format!("50 datasets, max deviation {worst:.1e}"))
}

fn random_tensor(shape: [usize; 4], r: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())
        .expect("shape matches data")
}

fn linear_net(loss: LossKind) -> NetworkSpec {
    NetworkSpec {
        name: "probe".into(),
        input: [1, 2, 2],
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Linear {
                inputs: 4,
                outputs: 3,
            },
        ],
        loss,
        classes: 3,
    }
}

fn tiny_conv_net() -> NetworkSpec {
    NetworkSpec {
        name: "probe_conv".into(),
        input: [1, 8, 8],
        layers: vec![
            LayerSpec::conv(ConvSpec::new(1, 2, 3, 1, 1)),
            LayerSpec::Relu,
            LayerSpec::conv(ConvSpec::new(2, 2, 3, 1, 1)),
            LayerSpec::Flatten,
            LayerSpec::Linear {
                inputs: 128,
                outputs: 3,
            },
        ],
        loss: LossKind::SoftmaxCrossEntropy,
        classes: 3,
    }
}

/// Central-difference gradient checks for every layer kind, a residual and
/// a dense block, and both softmax losses, each below 1e-3 relative error.
pub fn layer_gradients(seed: u64) -> Result<String, String> {
    let mut r = rng::seeded(seed);
    let cases: Vec<(&str, LayerSpec, [usize; 4])> = vec![
        (
            "conv",
            LayerSpec::conv(ConvSpec::new(2, 3, 3, 1, 1)),
            [2, 2, 5, 5],
        ),
        (
            "strided_grouped_conv",
            LayerSpec::conv(ConvSpec {
                groups: 2,
                ..ConvSpec::new(4, 4, 3, 2, 1)
            }),
            [2, 4, 6, 6],
        ),
        (
            "depthwise",
            LayerSpec::conv(ConvSpec::depthwise(4, 1)),
            [2, 4, 6, 6],
        ),
        (
            "batch_norm",
            LayerSpec::BatchNorm { channels: 4 },
            [2, 4, 6, 6],
        ),
        ("relu", LayerSpec::Relu, [2, 4, 6, 6]),
        (
            "max_pool",
            LayerSpec::MaxPool {
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            [2, 4, 6, 6],
        ),
        (
            "avg_pool",
            LayerSpec::AvgPool {
                kernel: 2,
                stride: 2,
            },
            [2, 4, 6, 6],
        ),
        ("global_avg_pool", LayerSpec::GlobalAvgPool, [2, 4, 6, 6]),
        ("flatten", LayerSpec::Flatten, [2, 4, 3, 3]),
        (
            "linear",
            LayerSpec::Linear {
                inputs: 5,
                outputs: 3,
            },
            [3, 5, 1, 1],
        ),
        (
            "separable",
            LayerSpec::DepthwiseSeparable {
                in_channels: 3,
                out_channels: 4,
                stride: 2,
            },
            [2, 3, 6, 6],
        ),
        (
            "residual",
            LayerSpec::Residual {
                in_channels: 4,
                out_channels: 4,
                stride: 1,
            },
            [1, 4, 6, 6],
        ),
        (
            "residual_projection",
            LayerSpec::Residual {
                in_channels: 4,
                out_channels: 6,
                stride: 2,
            },
            [1, 4, 6, 6],
        ),
        (
            "dense_block",
            LayerSpec::DenseBlock {
                in_channels: 2,
                layers: 2,
                growth: 2,
                bottleneck: true,
            },
            [2, 2, 4, 4],
        ),
    ];
    let mut worst = 0.0f64;
    for (i, (name, spec, shape)) in cases.into_iter().enumerate() {
        let mut module = build_module(&spec, &mut rng::stream(seed, 100 + i as u64))
            .map_err(|e| e.to_string())?;
        let x = random_tensor(shape, &mut r);
        let err = module_gradient_check(module.as_mut(), &x, 1e-5, seed.wrapping_add(i as u64))
            .map_err(|e| e.to_string())?;
        ensure(err < 1e-3, || format!("{name}: relative error {err:e}"))?;
        worst = worst.max(err);
    }
    for (name, loss) in [
        ("softmax_mse", LossKind::SoftmaxMse),
        ("softmax_ce", LossKind::SoftmaxCrossEntropy),
    ] {
        let mut net = Network::<f64>::new(linear_net(loss), seed).map_err(|e| e.to_string())?;
        let x = random_tensor([3, 1, 2, 2], &mut r);
        let err = gradient_check(&mut net, &x, &[0, 1, 2], 1e-5).map_err(|e| e.to_string())?;
        ensure(err < 1e-3, || format!("{name}: relative error {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("16 probes, worst relative error {worst:.1e}"))
}

/// Analytic t-SNE gradient against central differences of KL(P‖Q(Y)).
pub fn tsne_gradient_check(seed: u64) -> Result<String, String> {
    let mut r = rng::seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let n = 12;
        let cond: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            r.random_range(0.05..1.0)
                        }
                    })
                    .collect();
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
                row
            })
            .collect();
        let p = symmetrize(&cond);
        let y: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)])
            .collect();
        let flat: Vec<f64> = y.iter().flatten().copied().collect();
        let numeric = central_difference(&flat, 1e-6, |v| {
            let pts: Vec<Vec<f64>> = v.chunks(2).map(<[f64]>::to_vec).collect();
            tsne_kl(&p, &tsne_q(&pts)).expect("Q is positive off the diagonal")
        });
        let analytic: Vec<f64> = tsne_gradient(&p, &y).into_iter().flatten().collect();
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    ensure(worst < 1e-4, || format!("relative error {worst:e}"))?;
    Ok(format!("5 embeddings, worst relative error {worst:.1e}"))
}

/// Doubling one backprop gradient entry must push the check above 0.3.
pub fn fault_injection(seed: u64) -> Result<String, String> {
    let mut r = rng::seeded(seed);
    let mut net = Network::<f64>::new(tiny_conv_net(), seed).map_err(|e| e.to_string())?;
    let x = random_tensor([2, 1, 8, 8], &mut r);
    let clean = gradient_check(&mut net, &x, &[1, 2], 1e-3).map_err(|e| e.to_string())?;
    ensure(clean < 1e-3, || format!("clean network fails: {clean:e}"))?;
    let corrupted = gradient_check_with(&mut net, &x, &[1, 2], 1e-3, &mut |g| {
        let (i, _) = g[0]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("non-empty gradient");
        g[0][i] *= 2.0;
    })
    .map_err(|e| e.to_string())?;
    ensure(corrupted > 0.3, || {
        format!("corrupted backward only reaches {corrupted:e}")
    })?;
    Ok(format!("clean {clean:.1e}, corrupted {corrupted:.2}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_for_two_seeds() {
        for seed in [0, 1] {
            for outcome in run_suite(seed) {
                assert!(
                    outcome.passed,
                    "seed {seed} {}: {}",
                    outcome.name, outcome.detail
                );
            }
        }
    }
}
