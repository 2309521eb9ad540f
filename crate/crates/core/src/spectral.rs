//! Spectral machinery: lambda_max estimation, rescaling to [-1, 1], and
//! polynomial filters in the Chebyshev and monomial bases.
//!
//! The rescaled operator is L~ = (2/lambda_max) L - I. Chebyshev filtering
//! uses the three-term recurrence T_0 = x, T_1 = L~ x,
//! T_{k+1} = 2 L~ T_k - T_{k-1} and a convex coefficient vector
//! theta = softmax(eta), so the filter is an operator-norm contraction.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cochain::Cochain;
use crate::error::{Error, Result};
use crate::laplacian::BlockSparseOperator;

/// Safety factor applied to the power-iteration Rayleigh quotient so the
/// returned value upper-bounds lambda_max with high probability.
pub const POWER_SAFETY: f64 = 1.01;
/// Fixed seed for the deterministic power-iteration start vector.
const POWER_SEED: u64 = 0x5EED;

/// How to obtain the spectral upper bound used for rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaMaxStrategy {
    /// Degree-normalized Laplacians have spectrum in [0, 2]; use 2 exactly.
    AnalyticNormalized,
    /// 2 * max_v ||D_v||_2 over diagonal blocks. Always an upper bound for
    /// operators of the form delta^T delta.
    Gershgorin,
    /// Power iteration with a Rayleigh-quotient convergence test; the result
    /// is inflated by [`POWER_SAFETY`] and capped at the Gershgorin bound.
    PowerIteration { max_iters: usize, tol: f64 },
}

impl LambdaMaxStrategy {
    pub fn power_default() -> Self {
        LambdaMaxStrategy::PowerIteration {
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

/// lambda_max estimate plus a convergence flag (only PowerIteration can
/// report non-convergence; the other strategies always converge).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaMaxEstimate {
    pub value: f64,
    pub converged: bool,
}

/// 2 * max_v ||D_v||_2 from the diagonal blocks. Valid upper bound for any
/// L = delta^T delta since <x, Lx> <= 2 <x, Dx>.
pub fn gershgorin_bound(op: &BlockSparseOperator) -> f64 {
    let mut bound: f64 = 0.0;
    for u in 0..op.num_nodes() {
        let b = op.diag_block(u);
        let norm = if op.d() == 1 {
            b[(0, 0)].abs()
        } else {
            SymmetricEigen::new((b + b.transpose()) * 0.5)
                .eigenvalues
                .iter()
                .fold(0.0f64, |m, &l| m.max(l.abs()))
        };
        bound = bound.max(norm);
    }
    2.0 * bound
}

/// Power iteration for the dominant eigenvalue of a symmetric PSD operator.
/// Deterministic seeded start; returns 0 for the zero operator; on
/// non-convergence returns the last Rayleigh quotient with `converged: false`.
pub fn power_iteration(op: &BlockSparseOperator, max_iters: usize, tol: f64) -> LambdaMaxEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = Cochain::zeros(op.num_nodes(), op.d(), 1);
    for x in v.as_mut_slice() {
        *x = rng.gen_range(-1.0..1.0);
    }
    let norm = v.norm();
    if norm == 0.0 || op.dim() == 0 {
        return LambdaMaxEstimate {
            value: 0.0,
            converged: true,
        };
    }
    v.scale(1.0 / norm);
    let mut w = Cochain::zeros(op.num_nodes(), op.d(), 1);
    let mut rayleigh = 0.0;
    let mut converged = false;
    for _ in 0..max_iters {
        op.matvec_into(&v, &mut w);
        let new_rayleigh = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            // x in the kernel and no growth anywhere: zero operator (PSD case).
            return LambdaMaxEstimate {
                value: 0.0,
                converged: true,
            };
        }
        w.scale(1.0 / wn);
        std::mem::swap(&mut v, &mut w);
        if (new_rayleigh - rayleigh).abs() <= tol * new_rayleigh.abs().max(f64::MIN_POSITIVE) {
            rayleigh = new_rayleigh;
            converged = true;
            break;
        }
        rayleigh = new_rayleigh;
    }
    let capped = (POWER_SAFETY * rayleigh).min(gershgorin_bound(op));
    LambdaMaxEstimate {
        value: capped,
        converged,
    }
}

/// Spectral upper bound per strategy. See [`LambdaMaxStrategy`].
pub fn lambda_max(op: &BlockSparseOperator, strategy: LambdaMaxStrategy) -> LambdaMaxEstimate {
    match strategy {
        LambdaMaxStrategy::AnalyticNormalized => LambdaMaxEstimate {
            value: 2.0,
            converged: true,
        },
        LambdaMaxStrategy::Gershgorin => LambdaMaxEstimate {
            value: gershgorin_bound(op),
            converged: true,
        },
        LambdaMaxStrategy::PowerIteration { max_iters, tol } => {
            power_iteration(op, max_iters, tol)
        }
    }
}

/// L~ = (2/lambda_max) L - I. Errors unless lambda_max > 0.
pub fn rescale(l: &BlockSparseOperator, lambda_max: f64) -> Result<BlockSparseOperator> {
    if !(lambda_max > 0.0) {
        return Err(Error::RescaleDomain { lambda_max });
    }
    Ok(l.scale_shift(2.0 / lambda_max, -1.0))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

/// Polynomial filter basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterBasis {
    /// Chebyshev basis with convex weights theta = softmax(eta); applied to
    /// the rescaled operator.
    ChebyshevConvex,
    /// Raw monomial coefficients c_k for p(L) = sum c_k L^k; reference route.
    Monomial,
}

/// A degree-K polynomial filter: logits (Chebyshev) or raw coefficients
/// (monomial), length K + 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub basis: FilterBasis,
    pub coeffs: Vec<f64>,
}

impl FilterSpec {
    pub fn chebyshev(eta: Vec<f64>) -> Self {
        Self {
            basis: FilterBasis::ChebyshevConvex,
            coeffs: eta,
        }
    }

    pub fn monomial(c: Vec<f64>) -> Self {
        Self {
            basis: FilterBasis::Monomial,
            coeffs: c,
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// Convex weights for the Chebyshev basis.
    pub fn theta(&self) -> Vec<f64> {
        debug_assert_eq!(self.basis, FilterBasis::ChebyshevConvex);
        softmax(&self.coeffs)
    }
}

/// y = sum_k theta_k T_k(L~) x with the three-term recurrence, two work
/// buffers, O(K * nnz * C) time. `theta` are the convex weights themselves
/// (already softmaxed), length K + 1.
pub fn cheb_apply(rescaled: &BlockSparseOperator, theta: &[f64], x: &Cochain) -> Result<Cochain> {
    if theta.is_empty() {
        return Err(Error::ShapeMismatch {
            context: "chebyshev coefficients",
            expected: "at least 1".into(),
            found: "0".into(),
        });
    }
    let mut y = x.clone();
    y.scale(theta[0]);
    if theta.len() == 1 {
        return Ok(y);
    }
    let mut t_prev = x.clone();
    let mut t_cur = rescaled.matvec(x)?;
    y.axpy(theta[1], &t_cur);
    let mut t_next = Cochain::zeros(x.num_nodes(), x.d(), x.channels());
    for &th in &theta[2..] {
        rescaled.matvec_into(&t_cur, &mut t_next);
        t_next.scale(2.0);
        t_next.axpy(-1.0, &t_prev);
        y.axpy(th, &t_next);
        // Rotate buffers: prev <- cur, cur <- next, next <- old prev storage.
        std::mem::swap(&mut t_prev, &mut t_cur);
        std::mem::swap(&mut t_cur, &mut t_next);
    }
    Ok(y)
}

/// Like [`cheb_apply`] but returns every T_k; the training path replays the
/// recurrence in reverse from these.
pub fn cheb_apply_recorded(
    rescaled: &BlockSparseOperator,
    theta: &[f64],
    x: &Cochain,
) -> Result<(Cochain, Vec<Cochain>)> {
    let mut ts = Vec::with_capacity(theta.len());
    ts.push(x.clone());
    if theta.len() > 1 {
        ts.push(rescaled.matvec(x)?);
    }
    for k in 2..theta.len() {
        let mut t = rescaled.matvec(&ts[k - 1])?;
        t.scale(2.0);
        t.axpy(-1.0, &ts[k - 2]);
        ts.push(t);
    }
    let mut y = Cochain::zeros(x.num_nodes(), x.d(), x.channels());
    for (t, &th) in ts.iter().zip(theta) {
        y.axpy(th, t);
    }
    Ok((y, ts))
}

/// p(L) x = sum_k c_k L^k x by Horner's rule: y = c_K x, then repeatedly
/// y = L y + c_k x.
pub fn monomial_apply(l: &BlockSparseOperator, c: &[f64], x: &Cochain) -> Result<Cochain> {
    if c.is_empty() {
        return Err(Error::ShapeMismatch {
            context: "monomial coefficients",
            expected: "at least 1".into(),
            found: "0".into(),
        });
    }
    let mut y = x.clone();
    y.scale(c[c.len() - 1]);
    let mut tmp = Cochain::zeros(x.num_nodes(), x.d(), x.channels());
    for &ck in c[..c.len() - 1].iter().rev() {
        l.matvec_into(&y, &mut tmp);
        std::mem::swap(&mut y, &mut tmp);
        y.axpy(ck, x);
    }
    Ok(y)
}

/// Per-channel Dirichlet energy <x_c, L x_c>.
pub fn dirichlet_energy(l: &BlockSparseOperator, x: &Cochain) -> Result<Vec<f64>> {
    let lx = l.matvec(x)?;
    let mut out = Vec::with_capacity(x.channels());
    for ch in 0..x.channels() {
        let mut s = 0.0;
        for node in 0..x.num_nodes() {
            for coord in 0..x.d() {
                s += x.get(node, coord, ch) * lx.get(node, coord, ch);
            }
        }
        out.push(s);
    }
    Ok(out)
}

/// Power-iteration estimate of the operator norm of a symmetric linear map
/// given as a closure (e.g. a whole polynomial filter).
pub fn operator_norm_estimate<F>(
    num_nodes: usize,
    d: usize,
    apply: F,
    iters: usize,
    seed: u64,
) -> f64
where
    F: Fn(&Cochain) -> Cochain,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Cochain::zeros(num_nodes, d, 1);
    for x in v.as_mut_slice() {
        *x = rng.gen_range(-1.0..1.0);
    }
    let n = v.norm();
    if n == 0.0 {
        return 0.0;
    }
    v.scale(1.0 / n);
    let mut norm = 0.0;
    for _ in 0..iters {
        let w = apply(&v);
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        norm = wn;
        v = w;
        v.scale(1.0 / wn);
    }
    norm
}

/// Expand convex Chebyshev weights into monomial coefficients in the
/// rescaled variable: sum_k theta_k T_k(t) = sum_k m_k t^k. Reference route
/// for basis-equivalence tests; K <= 8 stays well conditioned.
pub fn chebyshev_to_monomial(theta: &[f64]) -> Vec<f64> {
    let k = theta.len();
    // Rows: T_0..T_K as monomial coefficient vectors.
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    rows.push(vec![1.0]);
    if k > 1 {
        rows.push(vec![0.0, 1.0]);
    }
    for i in 2..k {
        let mut next = vec![0.0; i + 1];
        for (p, &c) in rows[i - 1].iter().enumerate() {
            next[p + 1] += 2.0 * c;
        }
        for (p, &c) in rows[i - 2].iter().enumerate() {
            next[p] -= c;
        }
        rows.push(next);
    }
    let mut out = vec![0.0; k];
    for (row, &th) in rows.iter().zip(theta) {
        for (p, &c) in row.iter().enumerate() {
            out[p] += th * c;
        }
    }
    out
}
