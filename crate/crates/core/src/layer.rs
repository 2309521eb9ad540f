//! Diffusion layers: the polynomial layer with high-pass skip and gated
//! residual, the first-order baseline layer, and the closed-form bridge
//! between them at K = 1.
//!
//! Polynomial layer update (per node, stalk coordinate, channel):
//!
//! ```text
//! h_hp = x - (1/lambda_max) L x
//! z    = p_theta(L~) x' + alpha_hp * h_hp      x' = optionally mixed x
//! x+   = (1 + tanh eps) .* x - phi(z)
//! ```
//!
//! Baseline layer: x+ = A .* x - B .* sigma(L (I (x) W1) x W2).
//!
//! At K = 1 with phi = Identity and no mixing both are members of the
//! operator class a I + b L with
//!
//! ```text
//! a = (1 + tanh eps) - (theta0 - theta1 + alpha_hp)
//! b = -(theta1 * 2/lambda_max - alpha_hp / lambda_max)
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cochain::Cochain;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::laplacian::{assemble_laplacian, normalize_laplacian, BlockSparseOperator, NORMALIZE_EPS};
use crate::sheaf::{restriction_from_params, MapKind, SheafStructure};
use crate::spectral::{cheb_apply, lambda_max, rescale, softmax, LambdaMaxStrategy};

/// Pointwise activation phi; both choices are 1-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Nonlinearity {
    Elu,
    Identity,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Nonlinearity::Identity => x,
        }
    }

    #[inline]
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Nonlinearity::Identity => 1.0,
        }
    }
}

/// Two-layer perceptron that maps concatenated endpoint features (2d) to
/// restriction-map parameters. The map for endpoint u of edge (u, v) is
/// built from input [x_u || x_v], the one for v from [x_v || x_u], so the
/// two endpoints generally get different maps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SheafLearner {
    pub kind: MapKind,
    pub d: usize,
    /// hidden x 2d
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// param_count(kind, d) x hidden
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl SheafLearner {
    pub fn zeros(kind: MapKind, d: usize, hidden: usize) -> Self {
        let arity = kind.param_count(d);
        Self {
            kind,
            d,
            w1: DMatrix::zeros(hidden, 2 * d),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(arity, hidden),
            b2: DVector::zeros(arity),
        }
    }

    /// Uniform(-s, s) init with s = 1/sqrt(fan_in) per matrix.
    pub fn random<R: Rng>(kind: MapKind, d: usize, hidden: usize, rng: &mut R) -> Self {
        let mut out = Self::zeros(kind, d, hidden);
        let s1 = 1.0 / ((2 * d) as f64).sqrt();
        for v in out.w1.iter_mut() {
            *v = rng.gen_range(-s1..s1);
        }
        let s2 = 1.0 / (hidden as f64).sqrt();
        for v in out.w2.iter_mut() {
            *v = rng.gen_range(-s2..s2);
        }
        out
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    /// Raw parameter head for one ordered endpoint pair; ELU on the hidden
    /// layer, no squashing on the output (the caller applies tanh where the
    /// family wants bounded entries).
    pub fn head(&self, first: &[f64], second: &[f64]) -> Vec<f64> {
        self.head_traced(first, second).2
    }

    /// (pre-activation, hidden, raw output); the training path records the
    /// first two for the backward pass.
    pub(crate) fn head_traced(
        &self,
        first: &[f64],
        second: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.d;
        debug_assert_eq!(first.len(), d);
        debug_assert_eq!(second.len(), d);
        let h = self.hidden();
        let arity = self.w2.nrows();
        let mut pre = vec![0.0; h];
        let mut hid = vec![0.0; h];
        for r in 0..h {
            let mut s = self.b1[r];
            for j in 0..d {
                s += self.w1[(r, j)] * first[j] + self.w1[(r, d + j)] * second[j];
            }
            pre[r] = s;
            hid[r] = Nonlinearity::Elu.apply(s);
        }
        let mut out = vec![0.0; arity];
        for r in 0..arity {
            let mut s = self.b2[r];
            for (j, hj) in hid.iter().enumerate() {
                s += self.w2[(r, j)] * hj;
            }
            out[r] = s;
        }
        (pre, hid, out)
    }

    /// One restriction map from the raw head output.
    pub fn map_from_head(&self, raw: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.map_traced(raw)?.0)
    }

    /// Restriction map plus, for the orthogonal family, the (I + S)^{-1}
    /// factor the backward pass reuses.
    pub(crate) fn map_traced(&self, raw: &[f64]) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>)> {
        match self.kind {
            MapKind::Orthogonal => {
                let s = crate::sheaf::skew_from_params(self.d, raw)?;
                let (q, minv) = crate::sheaf::cayley_parts(&s)?;
                Ok((q, Some(minv)))
            }
            MapKind::Diagonal | MapKind::General => {
                let squashed: Vec<f64> = raw.iter().map(|&v| v.tanh()).collect();
                Ok((restriction_from_params(self.kind, self.d, &squashed)?, None))
            }
        }
    }
}

/// Mean over channels: pooled[n][i] = (1/C) sum_ch x[n, i, ch].
pub fn pool_channels(x: &Cochain) -> Vec<Vec<f64>> {
    let c = x.channels() as f64;
    (0..x.num_nodes())
        .map(|n| {
            (0..x.d())
                .map(|i| (0..x.channels()).map(|ch| x.get(n, i, ch)).sum::<f64>() / c)
                .collect()
        })
        .collect()
}

/// Predict a full sheaf from node features. Maps are recomputed from the
/// current features on every call; identical endpoint features give the two
/// endpoints identical maps.
pub fn sheaf_learner_forward(
    graph: &Graph,
    x: &Cochain,
    learner: &SheafLearner,
) -> Result<SheafStructure> {
    if x.num_nodes() != graph.num_nodes() || x.d() != learner.d {
        return Err(Error::ShapeMismatch {
            context: "sheaf learner input",
            expected: format!("{} nodes x d={}", graph.num_nodes(), learner.d),
            found: format!("{} nodes x d={}", x.num_nodes(), x.d()),
        });
    }
    let pooled = pool_channels(x);
    let mut maps = Vec::with_capacity(graph.num_edges());
    for &(u, v) in graph.edges() {
        let (pu, pv) = (&pooled[u as usize], &pooled[v as usize]);
        let f_u = learner.map_from_head(&learner.head(pu, pv))?;
        let f_v = learner.map_from_head(&learner.head(pv, pu))?;
        maps.push((f_u, f_v));
    }
    SheafStructure::new(graph.clone(), learner.d, learner.kind, maps)
}

/// Polynomial layer parameters (everything except the sheaf learner weights
/// lives here; the learner is carried alongside).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyFilterParams {
    /// Chebyshev logits, length K + 1; theta = softmax(eta).
    pub eta: Vec<f64>,
    pub alpha_hp: f64,
    /// Gate, one entry per (stalk coordinate, channel); broadcast over nodes.
    pub epsilon_gate: DMatrix<f64>,
    pub stalk_mix: Option<DMatrix<f64>>,
    pub channel_mix: Option<DMatrix<f64>>,
}

impl PolyFilterParams {
    pub fn new(k: usize, d: usize, channels: usize) -> Self {
        Self {
            eta: vec![0.0; k + 1],
            alpha_hp: 0.0,
            epsilon_gate: DMatrix::zeros(d, channels),
            stalk_mix: None,
            channel_mix: None,
        }
    }

    /// Same gate value everywhere (the closed-form K = 1 analysis assumes a
    /// scalar gate).
    pub fn with_uniform_gate(mut self, eps: f64) -> Self {
        self.epsilon_gate.fill(eps);
        self
    }

    pub fn order(&self) -> usize {
        self.eta.len() - 1
    }

    pub fn theta(&self) -> Vec<f64> {
        softmax(&self.eta)
    }
}

/// Shared layer-level configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LayerSettings {
    pub normalize: bool,
    pub normalize_eps: f64,
    pub lambda_strategy: LambdaMaxStrategy,
    pub phi: Nonlinearity,
}

impl Default for LayerSettings {
    fn default() -> Self {
        Self {
            normalize: true,
            normalize_eps: NORMALIZE_EPS,
            lambda_strategy: LambdaMaxStrategy::AnalyticNormalized,
            phi: Nonlinearity::Elu,
        }
    }
}

/// Assembled operator state reused by forward passes: the (optionally
/// normalized) Laplacian and its spectral bound.
pub struct OperatorState {
    pub l: BlockSparseOperator,
    pub lambda: f64,
    pub converged: bool,
}

/// Assemble (and normalize) L from the sheaf and bound its spectrum.
pub fn operator_state(sheaf: &SheafStructure, s: &LayerSettings) -> Result<OperatorState> {
    let raw = assemble_laplacian(sheaf)?;
    let l = if s.normalize {
        normalize_laplacian(&raw, s.normalize_eps)?
    } else {
        raw
    };
    let est = lambda_max(&l, s.lambda_strategy);
    Ok(OperatorState {
        l,
        lambda: est.value,
        converged: est.converged,
    })
}

pub fn apply_stalk_mix(m: &DMatrix<f64>, x: &Cochain) -> Cochain {
    let (n, d, c) = (x.num_nodes(), x.d(), x.channels());
    let mut y = Cochain::zeros(n, d, c);
    for node in 0..n {
        for i in 0..d {
            for j in 0..d {
                let w = m[(i, j)];
                if w == 0.0 {
                    continue;
                }
                for ch in 0..c {
                    *y.at_mut(node, i, ch) += w * x.get(node, j, ch);
                }
            }
        }
    }
    y
}

pub fn apply_channel_mix(m: &DMatrix<f64>, x: &Cochain) -> Cochain {
    let (n, d, c) = (x.num_nodes(), x.d(), x.channels());
    let mut y = Cochain::zeros(n, d, c);
    for node in 0..n {
        for i in 0..d {
            for cj in 0..c {
                let mut s = 0.0;
                for ci in 0..c {
                    s += x.get(node, i, ci) * m[(ci, cj)];
                }
                y.set(node, i, cj, s);
            }
        }
    }
    y
}

/// High-pass residual x - (1/lambda) L x; for the zero operator
/// (lambda = 0) this degenerates to x itself.
pub fn high_pass(l: &BlockSparseOperator, lambda: f64, x: &Cochain) -> Result<Cochain> {
    if lambda <= 0.0 {
        return Ok(x.clone());
    }
    let mut h = x.clone();
    let lx = l.matvec(x)?;
    h.axpy(-1.0 / lambda, &lx);
    Ok(h)
}

/// Rescaled operator, taking the L -> 0 limit (-I) when lambda = 0.
pub fn rescaled_or_limit(l: &BlockSparseOperator, lambda: f64) -> Result<BlockSparseOperator> {
    if lambda <= 0.0 {
        Ok(l.scale_shift(0.0, -1.0))
    } else {
        rescale(l, lambda)
    }
}

/// Polynomial layer forward on a fixed sheaf.
///
/// Pipeline: assemble/normalize L -> bound lambda -> rescale -> mix the
/// filter input -> Chebyshev filter -> high-pass skip -> gated residual.
/// The residual and high-pass paths take the unmixed input.
pub fn polynsd_forward_with_sheaf(
    x: &Cochain,
    sheaf: &SheafStructure,
    params: &PolyFilterParams,
    s: &LayerSettings,
) -> Result<Cochain> {
    let state = operator_state(sheaf, s)?;
    polynsd_forward_with_operator(x, &state, params, s)
}

/// Forward given an already-assembled operator state.
pub fn polynsd_forward_with_operator(
    x: &Cochain,
    state: &OperatorState,
    params: &PolyFilterParams,
    s: &LayerSettings,
) -> Result<Cochain> {
    let (d, c) = (x.d(), x.channels());
    if params.epsilon_gate.nrows() != d || params.epsilon_gate.ncols() != c {
        return Err(Error::ShapeMismatch {
            context: "gate shape",
            expected: format!("{d}x{c}"),
            found: format!(
                "{}x{}",
                params.epsilon_gate.nrows(),
                params.epsilon_gate.ncols()
            ),
        });
    }
    let rescaled = rescaled_or_limit(&state.l, state.lambda)?;
    let mut mixed = x.clone();
    if let Some(m) = &params.stalk_mix {
        mixed = apply_stalk_mix(m, &mixed);
    }
    if let Some(m) = &params.channel_mix {
        mixed = apply_channel_mix(m, &mixed);
    }
    let theta = params.theta();
    let mut z = cheb_apply(&rescaled, &theta, &mixed)?;
    if params.alpha_hp != 0.0 {
        let h = high_pass(&state.l, state.lambda, x)?;
        z.axpy(params.alpha_hp, &h);
    }
    let mut out = Cochain::zeros(x.num_nodes(), d, c);
    for node in 0..x.num_nodes() {
        for i in 0..d {
            for ch in 0..c {
                let gate = 1.0 + params.epsilon_gate[(i, ch)].tanh();
                let v = gate * x.get(node, i, ch) - s.phi.apply(z.get(node, i, ch));
                out.set(node, i, ch, v);
            }
        }
    }
    Ok(out)
}

/// Full polynomial layer forward: learn the sheaf from x, then filter.
pub fn polynsd_forward(
    x: &Cochain,
    graph: &Graph,
    learner: &SheafLearner,
    params: &PolyFilterParams,
    s: &LayerSettings,
) -> Result<Cochain> {
    let sheaf = sheaf_learner_forward(graph, x, learner)?;
    polynsd_forward_with_sheaf(x, &sheaf, params, s)
}

/// First-order baseline parameters: per-channel scalars A, B plus the two
/// mixing matrices of X+ = A .* X - B .* sigma(L (I (x) W1) X W2).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NsdParams {
    pub a_scale: Vec<f64>,
    pub b_scale: Vec<f64>,
    /// d x d stalk mixing.
    pub w1: DMatrix<f64>,
    /// C x C channel mixing.
    pub w2: DMatrix<f64>,
}

impl NsdParams {
    pub fn new(d: usize, channels: usize) -> Self {
        Self {
            a_scale: vec![1.0; channels],
            b_scale: vec![1.0; channels],
            w1: DMatrix::identity(d, d),
            w2: DMatrix::identity(channels, channels),
        }
    }

    pub fn with_scalars(mut self, a: f64, b: f64) -> Self {
        self.a_scale.fill(a);
        self.b_scale.fill(b);
        self
    }
}

/// Baseline layer forward on a fixed sheaf.
pub fn nsd_forward_with_sheaf(
    x: &Cochain,
    sheaf: &SheafStructure,
    params: &NsdParams,
    s: &LayerSettings,
) -> Result<Cochain> {
    let state = operator_state(sheaf, s)?;
    nsd_forward_with_operator(x, &state, params, s)
}

pub fn nsd_forward_with_operator(
    x: &Cochain,
    state: &OperatorState,
    params: &NsdParams,
    s: &LayerSettings,
) -> Result<Cochain> {
    let c = x.channels();
    if params.a_scale.len() != c || params.b_scale.len() != c {
        return Err(Error::ShapeMismatch {
            context: "per-channel scales",
            expected: format!("{c}"),
            found: format!("{}/{}", params.a_scale.len(), params.b_scale.len()),
        });
    }
    let mixed = apply_channel_mix(&params.w2, &apply_stalk_mix(&params.w1, x));
    let diffused = state.l.matvec(&mixed)?;
    let mut out = Cochain::zeros(x.num_nodes(), x.d(), c);
    for node in 0..x.num_nodes() {
        for i in 0..x.d() {
            for ch in 0..c {
                let v = params.a_scale[ch] * x.get(node, i, ch)
                    - params.b_scale[ch] * s.phi.apply(diffused.get(node, i, ch));
                out.set(node, i, ch, v);
            }
        }
    }
    Ok(out)
}

/// Full baseline forward: learn the sheaf from x, then diffuse.
pub fn nsd_forward(
    x: &Cochain,
    graph: &Graph,
    learner: &SheafLearner,
    params: &NsdParams,
    s: &LayerSettings,
) -> Result<Cochain> {
    let sheaf = sheaf_learner_forward(graph, x, learner)?;
    nsd_forward_with_sheaf(x, &sheaf, params, s)
}

/// Closed-form coefficients of the K = 1 polynomial layer as a member of the
/// operator class a I + b L (phi = Identity, scalar gate, no mixing).
pub fn first_order_coefficients(
    theta: &[f64],
    alpha_hp: f64,
    epsilon: f64,
    lambda_max: f64,
) -> (f64, f64) {
    let (t0, t1) = (theta[0], theta[1]);
    let a = (1.0 + epsilon.tanh()) - (t0 - t1 + alpha_hp);
    let b = -(t1 * 2.0 / lambda_max - alpha_hp / lambda_max);
    (a, b)
}

/// K = 1 parameters realizing the target, or a representability error.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderMatch {
    /// (theta0, theta1), inside the open simplex.
    pub theta: Vec<f64>,
    pub alpha_hp: f64,
    pub epsilon_gate: f64,
}

/// Solve for K = 1 polynomial-layer parameters that realize
/// x -> A x - B L x exactly (alpha_hp = 0):
///
/// ```text
/// theta1 = B * lambda_max / 2      theta0 = 1 - theta1
/// 1 + tanh(eps) = A + (theta0 - theta1)
/// ```
///
/// The gate multiplier at lambda = lambda_max is always tanh(eps) in (-1, 1),
/// so targets with |A - B*lambda_max| >= 1 are rejected; likewise theta must
/// stay inside the open simplex, so B must be in (0, 2/lambda_max).
pub fn nsd_to_polynsd(a: f64, b: f64, lambda_max: f64) -> Result<FirstOrderMatch> {
    if !(lambda_max > 0.0) {
        return Err(Error::RescaleDomain { lambda_max });
    }
    let theta1 = b * lambda_max / 2.0;
    let theta0 = 1.0 - theta1;
    if !(theta1 > 0.0 && theta1 < 1.0) {
        return Err(Error::Representability {
            reason: format!(
                "theta = ({theta0}, {theta1}) is outside the open simplex; \
                 need B in (0, {}) at lambda_max = {lambda_max}",
                2.0 / lambda_max
            ),
        });
    }
    let t = a + (theta0 - theta1) - 1.0;
    if !(t > -1.0 && t < 1.0) {
        return Err(Error::Representability {
            reason: format!(
                "gate target tanh(eps) = {t} is outside (-1, 1); need |A - B*lambda_max| < 1"
            ),
        });
    }
    let epsilon = 0.5 * ((1.0 + t) / (1.0 - t)).ln();
    Ok(FirstOrderMatch {
        theta: vec![theta0, theta1],
        alpha_hp: 0.0,
        epsilon_gate: epsilon,
    })
}

/// Dense materialization of the linear core of the polynomial layer
/// (phi = Identity, scalar gate, no mixing): (1 + tanh eps) I - p_theta(L~)
/// - alpha_hp (I - L / lambda). Test support for operator-level comparisons.
pub fn polynsd_dense_operator(
    l: &BlockSparseOperator,
    theta: &[f64],
    alpha_hp: f64,
    epsilon: f64,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let n = l.dim();
    let eye = DMatrix::<f64>::identity(n, n);
    let ld = l.to_dense();
    let rescaled = if lambda > 0.0 {
        &ld * (2.0 / lambda) - &eye
    } else {
        -eye.clone()
    };
    let mut filt = &eye * theta[0];
    if theta.len() > 1 {
        let mut t_prev = eye.clone();
        let mut t_cur = rescaled.clone();
        filt += &t_cur * theta[1];
        for &th in &theta[2..] {
            let t_next = &rescaled * &t_cur * 2.0 - &t_prev;
            filt += &t_next * th;
            t_prev = t_cur;
            t_cur = t_next;
        }
    }
    let hp = if lambda > 0.0 {
        &eye - &ld / lambda
    } else {
        eye.clone()
    };
    Ok(&eye * (1.0 + epsilon.tanh()) - (filt + hp * alpha_hp))
}

/// Dense a I - b L, the baseline layer's linear core.
pub fn nsd_dense_operator(l: &BlockSparseOperator, a: f64, b: f64) -> DMatrix<f64> {
    let n = l.dim();
    DMatrix::<f64>::identity(n, n) * a - l.to_dense() * b
}
