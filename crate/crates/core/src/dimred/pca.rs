use serde::{Deserialize, Serialize};

use super::DimredError;

/// Above this many dimensions the eigenvectors come from the m×m Gram matrix.
pub const GRAM_TRICK_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaConfig {
    pub components: usize,
    /// Subtract the sample mean before the eigendecomposition.
    pub center: bool,
}

impl PcaConfig {
    pub fn new(components: usize) -> Self {
        Self {
            components,
            center: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// l orthonormal columns, each of length n.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the sample covariance, descending.
    pub variances: Vec<f64>,
    /// Count of strictly positive variances among the l requested.
    pub positive_rank: usize,
}

impl PcaModel {
    /// Fewer than `l` positive eigenvalues; the trailing columns span the null space.
    pub fn rank_deficient(&self) -> bool {
        self.positive_rank < self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &[f64]) -> Result<(), DimredError> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(DimredError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            })
        }
    }
}

/// c = Dᵀ(x − mean)
pub fn pca_encode(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>, DimredError> {
    model.check(x)?;
    Ok(model
        .components
        .iter()
        .map(|d| {
            d.iter()
                .zip(x.iter().zip(&model.mean))
                .map(|(di, (xi, mi))| di * (xi - mi))
                .sum()
        })
        .collect())
}

/// x̂ = Dc + mean
pub fn pca_decode(model: &PcaModel, c: &[f64]) -> Result<Vec<f64>, DimredError> {
    if c.len() != model.components.len() {
        return Err(DimredError::DimensionMismatch {
            expected: model.components.len(),
            got: c.len(),
        });
    }
    let mut out = model.mean.clone();
    for (d, &ci) in model.components.iter().zip(c) {
        out.iter_mut().zip(d).for_each(|(o, di)| *o += ci * di);
    }
    Ok(out)
}

/// r(x) = decode(encode(x))
pub fn pca_reconstruct(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>, DimredError> {
    pca_decode(model, &pca_encode(model, x)?)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix stored row-major.
/// Returns eigenvalues and the matching eigenvectors as columns, unsorted.
pub fn jacobi_eigen(a: &mut [f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        if off <= 1e-30 * norm {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vp, vq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vp - s * vq;
                    v[k * n + q] = s * vp + c * vq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    let vectors = (0..n)
        .map(|col| (0..n).map(|r| v[r * n + col]).collect())
        .collect();
    (values, vectors)
}

/// Flip `v` so its largest-magnitude entry (first on ties) is positive.
pub fn fix_sign(v: &mut [f64]) {
    let lead = v
        .iter()
        .copied()
        .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Extend `basis` with unit vectors orthogonal to it, taken from the
/// standard basis by Gram-Schmidt, until it has `want` columns.
fn complete_basis(basis: &mut Vec<Vec<f64>>, n: usize, want: usize) {
    for e in 0..n {
        if basis.len() >= want {
            return;
        }
        let mut v = vec![0.0; n];
        v[e] = 1.0;
        for _ in 0..2 {
            for b in basis.iter() {
                let d = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, bi)| *x -= d * bi);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
}

/// Top-`l` principal components of the rows of `x`.
pub fn pca_fit(x: &[Vec<f64>], cfg: &PcaConfig) -> Result<PcaModel, DimredError> {
    fit(x, cfg, GRAM_TRICK_DIM)
}

fn fit(x: &[Vec<f64>], cfg: &PcaConfig, gram_above: usize) -> Result<PcaModel, DimredError> {
    let m = x.len();
    let n = x.first().map_or(0, Vec::len);
    let l = cfg.components;
    if m < 2 {
        return Err(DimredError::InvalidInput(format!(
            "PCA needs at least 2 samples, got {m}"
        )));
    }
    if x.iter().any(|r| r.len() != n) {
        return Err(DimredError::InvalidInput("rows differ in length".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DimredError::InvalidInput("non-finite value".into()));
    }
    let max_l = if cfg.center { (m - 1).min(n) } else { m.min(n) };
    if l == 0 || l > max_l {
        return Err(DimredError::InvalidConfig(format!(
            "{l} components requested, at most {max_l} available"
        )));
    }
    let mean: Vec<f64> = if cfg.center {
        (0..n)
            .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / m as f64)
            .collect()
    } else {
        vec![0.0; n]
    };
    let xc: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(a, b)| a - b).collect())
        .collect();
    let denom = (m - 1) as f64;

    let (mut pairs, gram): (Vec<(f64, Vec<f64>)>, bool) = if n <= gram_above {
        let mut cov = vec![0.0; n * n];
        for r in &xc {
            for i in 0..n {
                if r[i] == 0.0 {
                    continue;
                }
                for j in i..n {
                    cov[i * n + j] += r[i] * r[j];
                }
            }
        }
        for i in 0..n {
            for j in i..n {
                cov[i * n + j] /= denom;
                cov[j * n + i] = cov[i * n + j];
            }
        }
        let (vals, vecs) = jacobi_eigen(&mut cov, n);
        (vals.into_iter().zip(vecs).collect(), false)
    } else {
        let mut g = vec![0.0; m * m];
        for i in 0..m {
            for j in i..m {
                let v = dot(&xc[i], &xc[j]) / denom;
                g[i * m + j] = v;
                g[j * m + i] = v;
            }
        }
        let (vals, vecs) = jacobi_eigen(&mut g, m);
        let lifted = vals
            .into_iter()
            .zip(vecs)
            .map(|(lam, u)| {
                let mut v = vec![0.0; n];
                for (row, &ui) in xc.iter().zip(&u) {
                    v.iter_mut().zip(row).for_each(|(a, b)| *a += ui * b);
                }
                let norm = dot(&v, &v).sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|a| *a /= norm);
                }
                (lam, v)
            })
            .collect();
        (lifted, true)
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = pairs.first().map_or(0.0, |p| p.0).max(0.0);
    let tol = 1e-12 * top.max(1e-300);
    let positive_rank = pairs.iter().take(l).filter(|p| p.0 > tol).count();

    let mut components: Vec<Vec<f64>> = pairs
        .iter()
        .take(positive_rank)
        .map(|p| p.1.clone())
        .collect();
    if positive_rank < l {
        if gram {
            // directions lifted from a zero Gram eigenvalue carry no information
            complete_basis(&mut components, n, l);
        } else {
            components.extend(pairs[positive_rank..l].iter().map(|p| p.1.clone()));
        }
    }
    components.iter_mut().for_each(|c| fix_sign(c));
    let variances = pairs
        .iter()
        .take(l)
        .map(|p| if p.0 > tol { p.0 } else { 0.0 })
        .collect();
    Ok(PcaModel {
        mean,
        components,
        variances,
        positive_rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::oracles::jacobi_eigen_classic;
    use rand::Rng;

    fn random(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = crate::rng::seeded(seed);
        (0..m)
            .map(|_| (0..n).map(|_| r.random_range(-3.0..3.0)).collect())
            .collect()
    }

    fn sq_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
    }

    #[test]
    fn points_on_a_line() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let model = pca_fit(&x, &PcaConfig::new(2)).unwrap();
        let s5 = 5f64.sqrt();
        assert!((model.components[0][0] - 1.0 / s5).abs() < 1e-12);
        assert!((model.components[0][1] - 2.0 / s5).abs() < 1e-12);
        assert_eq!(model.variances[1], 0.0);
        assert!(model.rank_deficient());
        assert_eq!(model.positive_rank, 1);
    }

    #[test]
    fn complete_basis_reconstructs_exactly() {
        let x = random(8, 4, 1);
        let model = pca_fit(&x, &PcaConfig::new(4)).unwrap();
        for r in &x {
            assert!(sq_err(r, &pca_reconstruct(&model, r).unwrap()) < 1e-18);
        }
    }

    #[test]
    fn matches_classical_jacobi_oracle() {
        let x = random(6, 4, 2);
        let model = pca_fit(&x, &PcaConfig::new(3)).unwrap();
        let m = x.len() as f64;
        let mean: Vec<f64> = (0..4)
            .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / m)
            .collect();
        let cov: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                (0..4)
                    .map(|j| {
                        x.iter()
                            .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                            .sum::<f64>()
                            / (m - 1.0)
                    })
                    .collect()
            })
            .collect();
        let (vals, vecs) = jacobi_eigen_classic(&cov);
        for k in 0..3 {
            assert!((model.variances[k] - vals[k]).abs() < 1e-8);
            for j in 0..4 {
                assert!((model.components[k][j] - vecs[k][j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn orthonormal_and_sorted() {
        let x = random(12, 7, 3);
        let model = pca_fit(&x, &PcaConfig::new(5)).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let d = dot(&model.components[i], &model.components[j]);
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        assert!(model
            .variances
            .windows(2)
            .all(|w| w[0] >= w[1] && w[1] >= 0.0));
    }

    #[test]
    fn encode_decode_semantics() {
        let x = random(10, 6, 4);
        let model = pca_fit(&x, &PcaConfig::new(2)).unwrap();
        let c = pca_encode(&model, &model.mean).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(pca_reconstruct(&model, &model.mean).unwrap(), model.mean);
        let inside = pca_decode(&model, &[1.5, -0.5]).unwrap();
        assert!(sq_err(&inside, &pca_reconstruct(&model, &inside).unwrap()).sqrt() < 1e-9);
        for r in &x {
            let rx = pca_reconstruct(&model, r).unwrap();
            assert!(sq_err(&rx, &pca_reconstruct(&model, &rx).unwrap()) < 1e-18);
            let resid: Vec<f64> = r.iter().zip(&rx).map(|(a, b)| a - b).collect();
            for d in &model.components {
                assert!(dot(&resid, d).abs() < 1e-8);
            }
        }
        assert!(matches!(
            pca_encode(&model, &[0.0; 5]),
            Err(DimredError::DimensionMismatch {
                expected: 6,
                got: 5
            })
        ));
    }

    #[test]
    fn reconstruction_error_non_increasing_in_l() {
        let x = random(10, 6, 5);
        let errs: Vec<f64> = (1..=4)
            .map(|l| {
                let model = pca_fit(&x, &PcaConfig::new(l)).unwrap();
                x.iter()
                    .map(|r| sq_err(r, &pca_reconstruct(&model, r).unwrap()))
                    .sum()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{errs:?}");
    }

    #[test]
    fn gram_trick_agrees_with_covariance_route() {
        let x = random(7, 40, 6);
        let cov = fit(&x, &PcaConfig::new(3), usize::MAX).unwrap();
        let gram = fit(&x, &PcaConfig::new(3), 0).unwrap();
        for k in 0..3 {
            assert!((cov.variances[k] - gram.variances[k]).abs() < 1e-8 * cov.variances[0]);
            for j in 0..40 {
                assert!((cov.components[k][j] - gram.components[k][j]).abs() < 1e-8);
            }
        }
        let x = random(4, 10, 7);
        let deficient = fit(
            &x,
            &PcaConfig {
                components: 4,
                center: false,
            },
            0,
        )
        .unwrap();
        assert_eq!(deficient.positive_rank, 4);
        let dup: Vec<Vec<f64>> = vec![x[0].clone(), x[1].clone(), x[0].clone()];
        let m = fit(&dup, &PcaConfig::new(2), 0).unwrap();
        assert_eq!(m.positive_rank, 1);
        assert!(dot(&m.components[0], &m.components[1]).abs() < 1e-10);
        assert!((dot(&m.components[1], &m.components[1]) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn wide_input_projection() {
        let x = random(5, 30_000, 7);
        let model = pca_fit(&x, &PcaConfig::new(2)).unwrap();
        assert_eq!(model.components.len(), 2);
        assert_eq!(pca_encode(&model, &x[0]).unwrap().len(), 2);
        assert!((dot(&model.components[0], &model.components[1])).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_requests() {
        let x = random(3, 4, 8);
        assert!(pca_fit(&x, &PcaConfig::new(3)).is_err());
        assert!(pca_fit(&x[..1], &PcaConfig::new(1)).is_err());
    }
}
