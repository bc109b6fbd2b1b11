//! Brute-force reference computations.
//!
//! Nothing here calls into the implementations it is used to check: each
//! oracle solves its problem by enumeration or a textbook method written out
//! independently.

/// Fraction of (positive, negative) pairs ordered correctly, ties counting ½.
pub fn pair_counting_auc(scores: &[f64], truth: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0usize;
    for (i, &ti) in truth.iter().enumerate() {
        if !ti {
            continue;
        }
        for (j, &tj) in truth.iter().enumerate() {
            if tj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs as f64
}

/// Σα − ½ ΣΣ αᵢαⱼyᵢyⱼKᵢⱼ.
pub fn svm_dual_objective(alpha: &[f64], y: &[f64], gram: &[Vec<f64>]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * gram[i][j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Best dual objective over the grid `{0, step, 2·step, …, C}` for the first
/// n−1 multipliers, with the last one fixed by Σαᵢyᵢ = 0 and kept only when it
/// lands inside [0, C]. Cost is (C/step + 1)^(n−1); intended for n ≤ 4.
pub fn svm_dual_grid_search(gram: &[Vec<f64>], y: &[f64], c: f64, step: f64) -> f64 {
    let n = y.len();
    let levels = (c / step).round() as usize + 1;
    let mut alpha = vec![0.0; n];
    let mut idx = vec![0usize; n - 1];
    let mut best = f64::NEG_INFINITY;
    loop {
        for (a, &k) in alpha.iter_mut().zip(&idx) {
            *a = (k as f64 * step).min(c);
        }
        let partial: f64 = (0..n - 1).map(|i| alpha[i] * y[i]).sum();
        let last = -partial * y[n - 1];
        if (-1e-12..=c + 1e-12).contains(&last) {
            alpha[n - 1] = last.clamp(0.0, c);
            best = best.max(svm_dual_objective(&alpha, y, gram));
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == n - 1 {
                return best;
            }
            idx[pos] += 1;
            if idx[pos] < levels {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Solve a dense linear system by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Exact dual optimum by enumerating every face of the box: each multiplier is
/// pinned at 0, pinned at C, or free; free ones solve yᵢf(xᵢ) = 1 jointly with
/// Σαᵢyᵢ = 0. Returns the best feasible objective and its multipliers.
pub fn svm_dual_exact(gram: &[Vec<f64>], y: &[f64], c: f64) -> (f64, Vec<f64>) {
    let n = y.len();
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    let faces = 3usize.pow(n as u32);
    for code in 0..faces {
        let mut state = vec![0u8; n];
        let mut rest = code;
        for s in state.iter_mut() {
            *s = (rest % 3) as u8;
            rest /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state
            .iter()
            .map(|&s| if s == 1 { c } else { 0.0 })
            .collect();
        if free.is_empty() {
            let eq: f64 = alpha.iter().zip(y).map(|(a, yy)| a * yy).sum();
            if eq.abs() > 1e-9 {
                continue;
            }
        } else {
            // unknowns: α_free…, b
            let m = free.len();
            let mut a = vec![vec![0.0; m + 1]; m + 1];
            let mut rhs = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                for (k, &j) in free.iter().enumerate() {
                    a[r][k] = y[i] * y[j] * gram[i][j];
                }
                a[r][m] = y[i];
                let fixed: f64 = (0..n)
                    .filter(|j| state[*j] == 1)
                    .map(|j| c * y[i] * y[j] * gram[i][j])
                    .sum();
                rhs[r] = 1.0 - fixed;
            }
            for (k, &j) in free.iter().enumerate() {
                a[m][k] = y[j];
            }
            rhs[m] = -(0..n)
                .filter(|j| state[*j] == 1)
                .map(|j| c * y[j])
                .sum::<f64>();
            let Some(sol) = solve_linear(a, rhs) else {
                continue;
            };
            if free
                .iter()
                .zip(&sol)
                .any(|(_, &v)| !(-1e-9..=c + 1e-9).contains(&v))
            {
                continue;
            }
            for (&i, &v) in free.iter().zip(&sol) {
                alpha[i] = v.clamp(0.0, c);
            }
        }
        let obj = svm_dual_objective(&alpha, y, gram);
        if obj > best.0 {
            best = (obj, alpha);
        }
    }
    best
}

/// Classical Jacobi (largest off-diagonal pivot) for a symmetric matrix.
/// Returns eigenvalues descending and unit eigenvectors as columns, each with
/// its largest-magnitude entry made positive.
pub fn jacobi_eigen_classic(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..100 * n * n {
        let (mut p, mut q, mut big) = (0, 1.min(n - 1), 0.0);
        for i in 0..n {
            for j in i + 1..n {
                if a[i][j].abs() > big {
                    big = a[i][j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        let scale: f64 = (0..n).map(|i| a[i][i].abs()).sum::<f64>().max(1e-300);
        if big <= 1e-15 * scale {
            break;
        }
        let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let t = if theta == 0.0 { 1.0 } else { t };
        let cs = 1.0 / (t * t + 1.0).sqrt();
        let sn = t * cs;
        for k in 0..n {
            let (akp, akq) = (a[k][p], a[k][q]);
            a[k][p] = cs * akp - sn * akq;
            a[k][q] = sn * akp + cs * akq;
        }
        for k in 0..n {
            let (apk, aqk) = (a[p][k], a[q][k]);
            a[p][k] = cs * apk - sn * aqk;
            a[q][k] = sn * apk + cs * aqk;
        }
        for row in v.iter_mut() {
            let (vp, vq) = (row[p], row[q]);
            row[p] = cs * vp - sn * vq;
            row[q] = sn * vp + cs * vq;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&col| {
            let mut vec: Vec<f64> = (0..n).map(|r| v[r][col]).collect();
            let lead = vec
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                vec.iter_mut().for_each(|x| *x = -*x);
            }
            vec
        })
        .collect();
    (values, vectors)
}

/// Central difference of `f` in every coordinate of `x`.
pub fn central_difference(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// max |a−b| / max(|a|, |b|, 1e-8) over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_counting_basics() {
        assert_eq!(pair_counting_auc(&[1.0, 0.0], &[true, false]), 1.0);
        assert_eq!(pair_counting_auc(&[0.5, 0.5], &[true, false]), 0.5);
    }

    #[test]
    fn exact_and_grid_agree_on_symmetric_pair() {
        // x = ±1, linear kernel, optimum α = (0.5, 0.5), W = 0.5
        let gram = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        let y = [1.0, -1.0];
        let (w, alpha) = svm_dual_exact(&gram, &y, 10.0);
        assert!((w - 0.5).abs() < 1e-12);
        assert!((alpha[0] - 0.5).abs() < 1e-12);
        assert!((svm_dual_grid_search(&gram, &y, 10.0, 0.1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn classic_jacobi_diagonalises() {
        let m = vec![
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 1.0],
        ];
        let (vals, vecs) = jacobi_eigen_classic(&m);
        for (k, v) in vecs.iter().enumerate() {
            for i in 0..3 {
                let mv: f64 = (0..3).map(|j| m[i][j] * v[j]).sum();
                assert!((mv - vals[k] * v[i]).abs() < 1e-10);
            }
        }
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
    }
}
