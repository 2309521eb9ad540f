//! Dense eigendecomposition oracle for small operators.
//!
//! Ground truth for spectral tests: eigenvalues, spectral multipliers
//! U f(Lambda) U^T x, and exact lambda_max. Capped at dimension 500.

use nalgebra::{DMatrix, DVector};

use crate::cochain::Cochain;
use crate::error::{Error, Result};
use crate::laplacian::BlockSparseOperator;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Chosen over the
/// QR-based solver because the oracle is the accuracy reference for filter
/// tests: Jacobi keeps the eigenbasis orthonormal to O(n * eps) even when
/// eigenvalues cluster, where QR iteration can lose several digits in the
/// reconstruction. Returns unsorted (eigenvalues, columns).
fn jacobi_eigen(mut a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut v = DMatrix::<f64>::identity(n, n);
    let target = f64::EPSILON * a.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..50 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if (2.0 * off).sqrt() <= target {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                // Rotation angle zeroing a[(p, q)]; the tau formula is safe
                // for any nonzero apq (tau = +-inf degrades to t = 0).
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..n {
                    if i == p || i == q {
                        continue;
                    }
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = c * aip - s * aiq;
                    a[(p, i)] = a[(i, p)];
                    a[(i, q)] = s * aip + c * aiq;
                    a[(q, i)] = a[(i, q)];
                }
                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// Largest N*d the oracle accepts.
pub const ORACLE_MAX_DIM: usize = 500;

/// Full symmetric eigendecomposition of a block-sparse operator.
#[derive(Debug, Clone)]
pub struct SpectralOracle {
    num_nodes: usize,
    d: usize,
    /// Ascending.
    eigenvalues: Vec<f64>,
    /// Column k is the eigenvector of eigenvalues[k].
    u: DMatrix<f64>,
}

impl SpectralOracle {
    pub fn new(op: &BlockSparseOperator) -> Result<Self> {
        let dim = op.dim();
        if dim > ORACLE_MAX_DIM {
            return Err(Error::OracleCapacity {
                dim,
                max: ORACLE_MAX_DIM,
            });
        }
        let dense = op.to_dense();
        // Symmetrize before factorizing; Jacobi assumes exact symmetry and
        // assembly round-off can break it in the last bit.
        let sym = (&dense + dense.transpose()) * 0.5;
        let (vals, vecs) = jacobi_eigen(sym);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let eigenvalues: Vec<f64> = order.iter().map(|&k| vals[k]).collect();
        let mut u = DMatrix::zeros(dim, dim);
        for (col, &k) in order.iter().enumerate() {
            u.set_column(col, &vecs.column(k));
        }
        Ok(Self {
            num_nodes: op.num_nodes(),
            d: op.d(),
            eigenvalues,
            u,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// ||U^T U - I||_F, basis orthonormality defect.
    pub fn orthonormality_defect(&self) -> f64 {
        let dim = self.u.nrows();
        (self.u.transpose() * &self.u - DMatrix::identity(dim, dim)).norm()
    }

    /// ||U Lambda U^T - A||_F against a dense reference.
    pub fn reconstruction_defect(&self, reference: &DMatrix<f64>) -> f64 {
        let lam = DMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues.clone()));
        (&self.u * lam * self.u.transpose() - reference).norm()
    }

    /// Apply the spectral multiplier U f(Lambda) U^T to every channel.
    pub fn apply_multiplier<F: Fn(f64) -> f64>(&self, f: F, x: &Cochain) -> Result<Cochain> {
        if x.num_nodes() != self.num_nodes || x.d() != self.d {
            return Err(Error::ShapeMismatch {
                context: "oracle multiplier input",
                expected: format!("{} nodes x d={}", self.num_nodes, self.d),
                found: format!("{} nodes x d={}", x.num_nodes(), x.d()),
            });
        }
        let fvals: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut out = Cochain::zeros(self.num_nodes, self.d, x.channels());
        for ch in 0..x.channels() {
            let xv = DVector::from_vec(x.channel_vec(ch));
            let coeffs = self.u.transpose() * &xv;
            let mut scaled = coeffs;
            for (c, f) in scaled.iter_mut().zip(&fvals) {
                *c *= f;
            }
            let yv = &self.u * scaled;
            for node in 0..self.num_nodes {
                for coord in 0..self.d {
                    out.set(node, coord, ch, yv[node * self.d + coord]);
                }
            }
        }
        Ok(out)
    }
}
