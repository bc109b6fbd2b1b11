use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DimredError;
use crate::rng::{self, streams};

const SEARCH_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub dims: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    /// Iteration at which momentum switches to `momentum_final`.
    pub momentum_switch: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            dims: 2,
            iterations: 1000,
            learning_rate: 200.0,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch: 250,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            seed: 0,
        }
    }
}

impl TsneConfig {
    fn validate(&self, n: usize) -> Result<(), DimredError> {
        if !(self.perplexity > 1.0 && self.perplexity < n as f64) {
            return Err(DimredError::InvalidConfig(format!(
                "perplexity {} must lie in (1, {n})",
                self.perplexity
            )));
        }
        if self.iterations == 0 || self.dims == 0 {
            return Err(DimredError::InvalidConfig(
                "iterations and dims must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DimredError::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Input affinities: conditionals p_{j|i}, their symmetrisation and the
/// per-row bandwidths.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub conditional: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Shannon entropy in bits of a distribution (zeros skipped).
pub fn entropy_bits(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

/// Gaussian conditional row for precision β = 1/(2σ²) over squared distances `d` (self excluded as NaN).
fn gaussian_row(d: &[f64], beta: f64) -> Vec<f64> {
    let dmin = d
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::INFINITY, f64::min);
    let mut row: Vec<f64> = d
        .iter()
        .map(|&v| {
            if v.is_nan() {
                0.0
            } else {
                (-beta * (v - dmin)).exp()
            }
        })
        .collect();
    let z: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= z);
    row
}

/// Bisection on β so each row's entropy equals log₂(perplexity).
pub fn conditional_affinities(
    x: &[Vec<f64>],
    perplexity: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), DimredError> {
    let n = x.len();
    let target = perplexity.log2();
    let mut rows = Vec::with_capacity(n);
    let mut sigmas = Vec::with_capacity(n);
    let mut any_positive = false;
    for i in 0..n {
        let d: Vec<f64> = (0..n)
            .map(|j| {
                if i == j {
                    f64::NAN
                } else {
                    sq_dist(&x[i], &x[j])
                }
            })
            .collect();
        let spread: f64 = d.iter().filter(|v| !v.is_nan()).sum::<f64>() / (n - 1) as f64;
        any_positive |= spread > 0.0;
        let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut row = gaussian_row(&d, beta);
        for _ in 0..SEARCH_STEPS {
            let h = entropy_bits(&row);
            if (h - target).abs() < 1e-12 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() {
                    (beta + hi) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            row = gaussian_row(&d, beta);
        }
        sigmas.push((1.0 / (2.0 * beta)).sqrt());
        rows.push(row);
    }
    if !any_positive {
        return Err(DimredError::DegenerateDistances);
    }
    Ok((rows, sigmas))
}

/// p_ij = (p_{j|i} + p_{i|j}) / 2N
pub fn symmetrize(conditional: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = conditional.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (conditional[i][j] + conditional[j][i]) / (2.0 * n as f64))
                .collect()
        })
        .collect()
}

pub fn tsne_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<Affinities, DimredError> {
    if x.len() < 4 {
        return Err(DimredError::InvalidInput(format!(
            "t-SNE needs at least 4 points, got {}",
            x.len()
        )));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DimredError::InvalidInput("non-finite value".into()));
    }
    let (conditional, sigmas) = conditional_affinities(x, perplexity)?;
    let p = symmetrize(&conditional);
    Ok(Affinities {
        conditional,
        p,
        sigmas,
    })
}

fn kernel_matrix(y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = y.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        1.0 / (1.0 + sq_dist(&y[i], &y[j]))
                    }
                })
                .collect()
        })
        .collect()
}

/// q_ij ∝ (1 + ‖yᵢ − yⱼ‖²)⁻¹ over ordered pairs i ≠ j.
pub fn tsne_q(y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut k = kernel_matrix(y);
    let z: f64 = k.iter().flatten().sum();
    k.iter_mut().flatten().for_each(|v| *v /= z);
    k
}

/// Σ p log(p/q) in nats, skipping p = 0.
pub fn tsne_kl(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<f64, DimredError> {
    if p.len() != q.len() || p.iter().zip(q).any(|(a, b)| a.len() != b.len()) {
        return Err(DimredError::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let mut kl = 0.0;
    for (i, (pr, qr)) in p.iter().zip(q).enumerate() {
        for (j, (&pv, &qv)) in pr.iter().zip(qr).enumerate() {
            if i == j || pv == 0.0 {
                continue;
            }
            if qv <= 0.0 {
                return Err(DimredError::SupportMismatch);
            }
            kl += pv * (pv / qv).ln();
        }
    }
    Ok(kl)
}

/// ∂KL/∂yᵢ = 4 Σⱼ (p_ij − q_ij)(yᵢ − yⱼ)(1 + ‖yᵢ − yⱼ‖²)⁻¹
pub fn tsne_gradient(p: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = kernel_matrix(y);
    let z: f64 = k.iter().flatten().sum();
    let n = y.len();
    let d = y.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let mut g = vec![0.0; d];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = 4.0 * (p[i][j] - k[i][j] / z) * k[i][j];
                for (gk, (a, b)) in g.iter_mut().zip(y[i].iter().zip(&y[j])) {
                    *gk += w * (a - b);
                }
            }
            g
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Embedding {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub initial_kl: f64,
    pub kl: f64,
}

impl Embedding {
    pub fn labeled(mut self, labels: &[usize]) -> Self {
        self.labels = labels.to_vec();
        self
    }
}

/// State visible to an observer after each iteration.
pub struct TsneStep<'a> {
    pub iteration: usize,
    pub p: &'a [Vec<f64>],
    pub q: &'a [Vec<f64>],
    pub y: &'a [Vec<f64>],
    pub kl: f64,
}

pub fn tsne_run(x: &[Vec<f64>], cfg: &TsneConfig) -> Result<Embedding, DimredError> {
    tsne_run_observed(x, cfg, &mut |_| {})
}

/// Exact t-SNE by gradient descent with momentum and early exaggeration.
pub fn tsne_run_observed(
    x: &[Vec<f64>],
    cfg: &TsneConfig,
    observer: &mut dyn FnMut(&TsneStep),
) -> Result<Embedding, DimredError> {
    cfg.validate(x.len())?;
    let aff = tsne_affinities(x, cfg.perplexity)?;
    let p = aff.p;
    let n = x.len();
    let mut rng = rng::stream(cfg.seed, streams::TSNE);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..cfg.dims).map(|_| init.sample(&mut rng)).collect())
        .collect();
    let mut vel = vec![vec![0.0; cfg.dims]; n];
    let initial_kl = tsne_kl(&p, &tsne_q(&y))?;
    let exaggerated: Vec<Vec<f64>> = p
        .iter()
        .map(|r| r.iter().map(|v| v * cfg.exaggeration).collect())
        .collect();
    let mut kl = initial_kl;
    for it in 0..cfg.iterations {
        let target = if it < cfg.exaggeration_iters {
            &exaggerated
        } else {
            &p
        };
        let grad = tsne_gradient(target, &y);
        let mom = if it < cfg.momentum_switch {
            cfg.momentum_initial
        } else {
            cfg.momentum_final
        };
        for (yi, (vi, gi)) in y.iter_mut().zip(vel.iter_mut().zip(&grad)) {
            for ((a, v), g) in yi.iter_mut().zip(vi.iter_mut()).zip(gi) {
                *v = mom * *v - cfg.learning_rate * g;
                *a += *v;
            }
        }
        for k in 0..cfg.dims {
            let mean = y.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|r| r[k] -= mean);
        }
        let q = tsne_q(&y);
        kl = tsne_kl(&p, &q)?;
        observer(&TsneStep {
            iteration: it,
            p: &p,
            q: &q,
            y: &y,
            kl,
        });
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DimredError::InvalidInput("embedding diverged".into()));
    }
    Ok(Embedding {
        points: y,
        labels: Vec::new(),
        initial_kl,
        kl,
    })
}

/// `x,y,label` rows (further dimensions add `c2`, `c3`, ... columns before the label).
pub fn write_embedding_csv<W: Write>(
    out: &mut W,
    points: &[Vec<f64>],
    labels: &[usize],
) -> Result<(), DimredError> {
    if points.len() != labels.len() {
        return Err(DimredError::DimensionMismatch {
            expected: points.len(),
            got: labels.len(),
        });
    }
    let d = points.first().map_or(2, Vec::len);
    let mut header: Vec<String> = ["x", "y"].iter().take(d).map(|s| s.to_string()).collect();
    header.extend((2..d).map(|k| format!("c{k}")));
    header.push("label".into());
    writeln!(out, "{}", header.join(","))?;
    for (p, l) in points.iter().zip(labels) {
        if p.len() != d {
            return Err(DimredError::DimensionMismatch {
                expected: d,
                got: p.len(),
            });
        }
        let cells: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{l}", cells.join(","))?;
    }
    Ok(())
}
