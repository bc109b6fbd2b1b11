use rand::Rng as _;

use super::{KernelSpec, SvmError, SvmModel, TrainConfig};
use crate::rng::{self, streams};

/// Dense kernel matrix.
pub fn gram_matrix(x: &[Vec<f64>], kernel: &KernelSpec) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let k = kernel.eval(&x[i], &x[j]);
            g[i][j] = k;
            g[j][i] = k;
        }
    }
    g
}

pub(crate) fn validate(x: &[Vec<f64>], y: &[f64]) -> Result<usize, SvmError> {
    if x.len() != y.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let dim = x.first().map(Vec::len).ok_or(SvmError::DegenerateLabels)?;
    for row in x {
        if row.len() != dim {
            return Err(SvmError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(SvmError::NonFiniteInput);
        }
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(SvmError::InvalidLabel);
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(SvmError::DegenerateLabels);
    }
    Ok(dim)
}

/// Round multipliers within rounding noise of a bound onto it.
fn snap(a: f64, c: f64) -> f64 {
    let eps = 1e-12 * c;
    if a < eps {
        0.0
    } else if a > c - eps {
        c
    } else {
        a
    }
}

/// Bias from the KKT conditions: the mean over free multipliers, or the
/// midpoint of the feasible interval when every multiplier sits at a bound.
fn threshold(alpha: &[f64], g: &[f64], y: &[f64], c: f64) -> f64 {
    let (mut sum, mut free) = (0.0, 0usize);
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..alpha.len() {
        let r = y[k] - g[k];
        if alpha[k] > 0.0 && alpha[k] < c {
            sum += r;
            free += 1;
        } else if (alpha[k] == 0.0) == (y[k] > 0.0) {
            lo = lo.max(r);
        } else {
            hi = hi.min(r);
        }
    }
    if free > 0 {
        sum / free as f64
    } else if lo.is_finite() && hi.is_finite() {
        (lo + hi) / 2.0
    } else if lo.is_finite() {
        lo
    } else {
        hi
    }
}

/// Result of the dual solve before support vectors are extracted.
pub(crate) struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
}

/// Simplified SMO over a precomputed kernel matrix.
///
/// Each KKT violator `i` is paired first with a seeded random `j`; when that
/// pair cannot move, the remaining indices are tried in order from a random
/// offset. The bias is re-derived from all multipliers after every update.
/// Training stops after `max_passes` consecutive sweeps without an update.
/// `observer` sees the multipliers after every accepted pair update.
pub(crate) fn solve_dual(
    gram: &[Vec<f64>],
    y: &[f64],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&[f64]),
) -> DualSolution {
    let n = y.len();
    let c = cfg.c;
    let mut alpha = vec![0.0; n];
    // g[k] = Σ αⱼyⱼK(j,k)
    let mut g = vec![0.0; n];
    let mut bias = 0.0;
    let mut rng = rng::stream(cfg.seed, streams::SMO);
    let mut quiet = 0;
    let mut sweeps = 0;
    let min_step = 1e-12 * c.max(1.0);

    let try_pair = |i: usize, j: usize, alpha: &mut Vec<f64>, g: &mut Vec<f64>| -> bool {
        if i == j {
            return false;
        }
        let (ai, aj) = (alpha[i], alpha[j]);
        let (yi, yj) = (y[i], y[j]);
        let ei = g[i] - yi;
        let ej = g[j] - yj;
        let (lo, hi) = if yi != yj {
            ((aj - ai).max(0.0), (c + aj - ai).min(c))
        } else {
            ((ai + aj - c).max(0.0), (ai + aj).min(c))
        };
        if hi - lo < min_step {
            return false;
        }
        let eta = 2.0 * gram[i][j] - gram[i][i] - gram[j][j];
        if eta >= -1e-12 {
            return false;
        }
        let aj_new = snap((aj - yj * (ei - ej) / eta).clamp(lo, hi), c);
        if (aj_new - aj).abs() < min_step {
            return false;
        }
        let ai_new = snap((ai + yi * yj * (aj - aj_new)).clamp(0.0, c), c);
        let (dai, daj) = (ai_new - ai, aj_new - aj);
        for (k, gk) in g.iter_mut().enumerate() {
            *gk += yi * dai * gram[i][k] + yj * daj * gram[j][k];
        }
        alpha[i] = ai_new;
        alpha[j] = aj_new;
        true
    };

    while quiet < cfg.max_passes && sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut changed = 0;
        for i in 0..n {
            let ri = y[i] * (g[i] + bias) - 1.0;
            let violates = (ri < -cfg.tol && alpha[i] < c) || (ri > cfg.tol && alpha[i] > 0.0);
            if !violates {
                continue;
            }
            let offset = rng.random_range(0..n);
            let first = if n > 1 {
                (i + 1 + rng.random_range(0..n - 1)) % n
            } else {
                i
            };
            let mut moved = try_pair(i, first, &mut alpha, &mut g);
            let mut k = 0;
            while !moved && k < n {
                let j = (offset + k) % n;
                if j != first {
                    moved = try_pair(i, j, &mut alpha, &mut g);
                }
                k += 1;
            }
            if moved {
                changed += 1;
                bias = threshold(&alpha, &g, y, c);
                observer(&alpha);
            }
        }
        if changed == 0 {
            quiet += 1;
        } else {
            quiet = 0;
        }
    }
    if sweeps >= cfg.max_sweeps {
        log::warn!("SMO stopped after {sweeps} sweeps without converging");
    }
    DualSolution { alpha, bias }
}

pub(crate) fn into_model(
    x: &[Vec<f64>],
    y: &[f64],
    sol: DualSolution,
    kernel: KernelSpec,
) -> SvmModel {
    let mut support_vectors = Vec::new();
    let mut alphas = Vec::new();
    let mut labels = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(x[i].clone());
            alphas.push(a);
            labels.push(y[i]);
        }
    }
    SvmModel {
        support_vectors,
        alphas,
        labels,
        bias: sol.bias,
        kernel,
        dim: x[0].len(),
    }
}

/// Train a binary soft-margin SVM; labels must be ±1.
pub fn smo_train_binary(
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &TrainConfig,
    kernel: KernelSpec,
) -> Result<SvmModel, SvmError> {
    smo_train_binary_observed(x, y, cfg, kernel, &mut |_| {})
}

/// As [`smo_train_binary`], calling `observer` with the multipliers after each pair update.
pub fn smo_train_binary_observed(
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &TrainConfig,
    kernel: KernelSpec,
    observer: &mut dyn FnMut(&[f64]),
) -> Result<SvmModel, SvmError> {
    cfg.validate()?;
    kernel.validate()?;
    validate(x, y)?;
    let gram = gram_matrix(x, &kernel);
    let sol = solve_dual(&gram, y, cfg, observer);
    Ok(into_model(x, y, sol, kernel))
}
