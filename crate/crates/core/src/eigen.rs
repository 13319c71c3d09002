//! Symmetric eigenvalue decomposition by cyclic Jacobi rotations.
//!
//! Plane rotations annihilate one off-diagonal element at a time; repeated
//! sweeps drive the off-diagonal mass to zero. Robust for every real
//! symmetric matrix and plenty fast at the desk-scale orders used here.

use crate::error::{Error, Result};

/// Eigenvalues in ascending order with matching eigenvectors.
///
/// `vectors` is row-major n x n; column `j` is the eigenvector for
/// `values[j]`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
    pub n: usize,
}

const MAX_SWEEPS: usize = 64;

/// Decomposes a symmetric matrix given as a flat row-major `n x n` slice.
pub fn eigh(a: &[f64], n: usize) -> Result<SymEigen> {
    if a.len() != n * n {
        return Err(Error::contract(format!(
            "matrix slice holds {} values, expected {}",
            a.len(),
            n * n
        )));
    }
    if n == 0 {
        return Err(Error::contract("empty matrix"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let fro: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = if fro > 0.0 { 1e-14 * fro } else { 0.0 };

    for _sweep in 0..MAX_SWEEPS {
        let off: f64 = {
            let mut s = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    s += m[p * n + q] * m[p * n + q];
                }
            }
            s.sqrt()
        };
        if off <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                // Smaller-angle root keeps the rotation stable.
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
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
    order.sort_by(|&i, &j| {
        m[i * n + i]
            .partial_cmp(&m[j * n + j])
            .expect("finite eigenvalues")
    });
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + new_col] = v[row * n + old_col];
        }
    }
    Ok(SymEigen {
        values,
        vectors,
        n,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn smallest_eigenvalue(a: &[f64], n: usize) -> Result<f64> {
    Ok(eigh(a, n)?.values[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += a[i * n + k] * b[k * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        // G * G^T with a random n x (n+2) factor.
        let cols = n + 2;
        let g: Vec<f64> = (0..n * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..cols {
                    s += g[i * cols + k] * g[j * cols + k];
                }
                h[i * n + j] = s;
            }
        }
        h
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let n = 4;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        let e = eigh(&a, n).unwrap();
        for v in e.values {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_matrix_sorted() {
        let a = vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        let e = eigh(&a, 3).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 2.0).abs() < 1e-14);
        assert!((e.values[2] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn reconstructs_and_stays_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n in [2usize, 3, 5, 8, 13] {
            let a = random_psd(n, &mut rng);
            let e = eigh(&a, n).unwrap();
            // V^T V = I
            let mut vt = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    vt[i * n + j] = e.vectors[j * n + i];
                }
            }
            let id = matmul(&vt, &e.vectors, n);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((id[i * n + j] - want).abs() < 1e-10);
                }
            }
            // V diag(L) V^T = A
            let mut vl = e.vectors.clone();
            for row in 0..n {
                for col in 0..n {
                    vl[row * n + col] *= e.values[col];
                }
            }
            let back = matmul(&vl, &vt, n);
            let fro: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (x, y) in back.iter().zip(&a) {
                assert!((x - y).abs() <= 1e-10 * fro.max(1.0));
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(eigh(&[1.0, 2.0], 2).is_err());
        assert!(eigh(&[f64::NAN], 1).is_err());
    }
}
