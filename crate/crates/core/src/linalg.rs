//! Small dense linear-algebra helpers: orthonormal embeddings for synthetic
//! manifolds and a cyclic Jacobi eigensolver for covariance spectra.

use crate::error::Result;
use crate::invalid_arg;
use crate::rng::Rng;

/// `rows x cols` matrix (row-major) with orthonormal columns, from modified
/// Gram-Schmidt on a random Gaussian matrix. Requires `cols <= rows`.
pub fn random_orthonormal(rows: usize, cols: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if cols > rows {
        return Err(invalid_arg!(
            "cannot build {cols} orthonormal columns in dimension {rows}"
        ));
    }
    let mut m: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
    for j in 0..cols {
        for prev in 0..j {
            let mut dot = 0.0;
            for r in 0..rows {
                dot += m[r * cols + j] * m[r * cols + prev];
            }
            for r in 0..rows {
                m[r * cols + j] -= dot * m[r * cols + prev];
            }
        }
        let norm: f64 = (0..rows).map(|r| m[r * cols + j] * m[r * cols + j]).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(invalid_arg!("degenerate random matrix during orthonormalization"));
        }
        for r in 0..rows {
            m[r * cols + j] /= norm;
        }
    }
    Ok(m)
}

/// Eigendecomposition of a symmetric `n x n` matrix by cyclic Jacobi
/// rotations. Returns `(eigenvalues, eigenvectors)` sorted by descending
/// eigenvalue; eigenvector `k` is the column `k` of the returned row-major
/// matrix, sign-fixed so its first nonzero coordinate is positive.
pub fn symmetric_eigen(mut a: Vec<f64>, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(invalid_arg!("matrix length {} != {n}x{n}", a.len()));
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).expect("finite eigenvalues"));
    let eigvals: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut eigvecs = vec![0.0; n * n];
    for (newcol, &oldcol) in order.iter().enumerate() {
        // Deterministic sign convention: first coordinate above threshold
        // is positive.
        let mut sign = 1.0;
        for r in 0..n {
            let val = v[r * n + oldcol];
            if val.abs() > 1e-12 {
                sign = val.signum();
                break;
            }
        }
        for r in 0..n {
            eigvecs[r * n + newcol] = sign * v[r * n + oldcol];
        }
    }
    Ok((eigvals, eigvecs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_columns_are_orthonormal() {
        let mut rng = Rng::from_seed(4);
        let m = random_orthonormal(10, 3, &mut rng).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..10).map(|r| m[r * 3 + a] * m[r * 3 + b]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "col {a}.col {b} = {dot}");
            }
        }
        assert!(random_orthonormal(2, 3, &mut rng).is_err());
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // diag(5, 2, 1) conjugated by a rotation in the (0,1) plane.
        let (c, s) = (0.6, 0.8);
        // A = R diag R^T with R = [[c,-s,0],[s,c,0],[0,0,1]]
        let d = [5.0, 2.0, 1.0];
        let r = [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0];
        let mut a = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    a[i * 3 + j] += r[i * 3 + k] * d[k] * r[j * 3 + k];
                }
            }
        }
        let (vals, vecs) = symmetric_eigen(a.clone(), 3).unwrap();
        assert!((vals[0] - 5.0).abs() < 1e-10);
        assert!((vals[1] - 2.0).abs() < 1e-10);
        assert!((vals[2] - 1.0).abs() < 1e-10);
        // A v = lambda v for the top eigenvector.
        for i in 0..3 {
            let av: f64 = (0..3).map(|j| a[i * 3 + j] * vecs[j * 3]).sum();
            assert!((av - vals[0] * vecs[i * 3]).abs() < 1e-9);
        }
    }
}
