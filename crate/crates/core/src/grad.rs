//! Traced forward pass and hand-written reverse pass for the full model.
//!
//! There is no general-purpose tape: the model is a fixed composition of
//! primitives (dense affine maps, the per-edge restriction-map perceptron,
//! Cayley transform, Laplacian assembly, block normalization, Chebyshev
//! recurrence, block-sparse matvec, softmax, tanh, ELU, dropout), and each
//! primitive's adjoint is written out below. The forward trace stores
//! exactly what the adjoints need; every T_k of the Chebyshev recurrence is
//! kept (the two-buffer economy is inference-only).
//!
//! lambda_max is a stop-gradient scalar: no gradient flows through the
//! spectral bound. Finite-difference checks therefore pin lambda via
//! `ForwardSettings::lambda_override` so both sides differentiate the same
//! function.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cochain::Cochain;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::laplacian::{assemble_laplacian, normalization_eigen, BlockSparseOperator, InvSqrtEigen};
use crate::layer::{
    apply_channel_mix, apply_stalk_mix, high_pass, pool_channels, rescaled_or_limit, LayerSettings,
    Nonlinearity, SheafLearner,
};
use crate::model::{LayerParams, LinearParams, ModelParams};
use crate::sheaf::{MapKind, SheafStructure};
use crate::spectral::{cheb_apply_recorded, lambda_max};

/// Forward-pass behavior switches.
#[derive(Debug, Clone, Copy)]
pub struct ForwardSettings<'a> {
    pub layer: LayerSettings,
    pub training: bool,
    pub input_dropout: f64,
    pub layer_dropout: f64,
    /// Pin per-layer lambda_max instead of recomputing (cache mode and
    /// finite-difference checks).
    pub lambda_override: Option<&'a [f64]>,
}

impl<'a> ForwardSettings<'a> {
    pub fn eval(layer: LayerSettings) -> Self {
        Self {
            layer,
            training: false,
            input_dropout: 0.0,
            layer_dropout: 0.0,
            lambda_override: None,
        }
    }

    pub fn train(layer: LayerSettings, input_dropout: f64, layer_dropout: f64) -> Self {
        Self {
            layer,
            training: true,
            input_dropout,
            layer_dropout,
            lambda_override: None,
        }
    }

    pub fn with_lambda(mut self, lambdas: &'a [f64]) -> Self {
        self.lambda_override = Some(lambdas);
        self
    }
}

/// One endpoint's perceptron trace for one edge.
struct SideTrace {
    /// Concatenated endpoint features, length 2d.
    input: Vec<f64>,
    pre: Vec<f64>,
    hid: Vec<f64>,
    /// Orthogonal family only: (I + S)^{-1}.
    minv: Option<DMatrix<f64>>,
}

struct EdgeTrace {
    u: SideTrace,
    v: SideTrace,
}

enum LayerInner {
    Poly {
        rescaled: BlockSparseOperator,
        /// Input after the stalk mix, present iff stalk_mix is present.
        after_stalk: Option<Cochain>,
        /// Final filter input x'.
        mixed: Cochain,
        /// T_0 .. T_K.
        t_list: Vec<Cochain>,
        theta: Vec<f64>,
        /// High-pass residual x - L x / lambda.
        hp: Cochain,
        /// Pre-activation of phi.
        z: Cochain,
    },
    Nsd {
        /// After stalk mix W1.
        m1: Cochain,
        /// After channel mix W2.
        m2: Cochain,
        /// L * m2, pre-activation.
        y: Cochain,
    },
}

struct LayerTrace {
    input: Cochain,
    edges: Vec<EdgeTrace>,
    sheaf: SheafStructure,
    raw_l: BlockSparseOperator,
    /// Present iff the layer normalized.
    norm: Option<Vec<InvSqrtEigen>>,
    /// The operator the layer actually diffused with.
    op: BlockSparseOperator,
    lambda: f64,
    inner: LayerInner,
    output: Cochain,
    /// Inverted-dropout mask applied to `output` to form the next layer's
    /// input (entries 0 or 1/(1-p)); None after the last layer.
    dropout_mask: Option<Vec<f64>>,
}

/// Everything the backward pass needs from one forward run.
pub struct ModelTrace {
    /// Raw features after input dropout (the lift's actual input).
    lift_input: DMatrix<f64>,
    pub x0: Cochain,
    layers: Vec<LayerTrace>,
    readout_input: Cochain,
    pub logits: DMatrix<f64>,
    /// Per-layer lambda_max used (0.0 recorded for baseline layers, which
    /// never consume it).
    pub lambdas: Vec<f64>,
}

fn dropout_mask(rng: &mut ChaCha8Rng, p: f64, len: usize) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

fn side_forward(learner: &SheafLearner, first: &[f64], second: &[f64]) -> Result<(SideTrace, DMatrix<f64>)> {
    let (pre, hid, raw) = learner.head_traced(first, second);
    let (map, minv) = learner.map_traced(&raw)?;
    let input: Vec<f64> = first.iter().chain(second.iter()).copied().collect();
    Ok((SideTrace { input, pre, hid, minv }, map))
}

/// Normalized operator from the raw Laplacian and its per-node inverse
/// square roots.
fn normalize_with(raw_l: &BlockSparseOperator, eig: &[InvSqrtEigen]) -> BlockSparseOperator {
    let mut op = raw_l.pattern_zeros();
    for (u, v, b) in raw_l.iter_blocks() {
        let nb = &eig[u as usize].r * b * &eig[v as usize].r;
        *op.block_mut(u as usize, v as usize).expect("same pattern") = nb;
    }
    op
}

fn layer_forward_traced(
    input: &Cochain,
    graph: &Graph,
    layer: &LayerParams,
    fs: &ForwardSettings,
    lambda_pin: Option<f64>,
) -> Result<LayerTrace> {
    let learner = layer.learner();
    let pooled = pool_channels(input);
    let mut edges = Vec::with_capacity(graph.num_edges());
    let mut maps = Vec::with_capacity(graph.num_edges());
    for &(u, v) in graph.edges() {
        let (pu, pv) = (&pooled[u as usize], &pooled[v as usize]);
        let (side_u, f_u) = side_forward(learner, pu, pv)?;
        let (side_v, f_v) = side_forward(learner, pv, pu)?;
        edges.push(EdgeTrace { u: side_u, v: side_v });
        maps.push((f_u, f_v));
    }
    let sheaf = SheafStructure::new(graph.clone(), learner.d, learner.kind, maps)?;
    let raw_l = assemble_laplacian(&sheaf)?;
    let (norm, op) = if fs.layer.normalize {
        let eig = normalization_eigen(&raw_l, fs.layer.normalize_eps)?;
        let op = normalize_with(&raw_l, &eig);
        (Some(eig), op)
    } else {
        (None, raw_l.clone())
    };

    match layer {
        LayerParams::Poly(p) => {
            let lambda = match lambda_pin {
                Some(l) => l,
                None => lambda_max(&op, fs.layer.lambda_strategy).value,
            };
            let rescaled = rescaled_or_limit(&op, lambda)?;
            let mut after_stalk = None;
            let mut mixed = input.clone();
            if let Some(m) = &p.filter.stalk_mix {
                mixed = apply_stalk_mix(m, &mixed);
                after_stalk = Some(mixed.clone());
            }
            if let Some(m) = &p.filter.channel_mix {
                mixed = apply_channel_mix(m, &mixed);
            }
            let theta = p.filter.theta();
            let (filtered, t_list) = cheb_apply_recorded(&rescaled, &theta, &mixed)?;
            // hp is always materialized in training: d loss / d alpha_hp
            // needs it even when alpha_hp is currently zero.
            let hp = high_pass(&op, lambda, input)?;
            let mut z = filtered;
            z.axpy(p.filter.alpha_hp, &hp);
            let (d, c) = (input.d(), input.channels());
            let mut output = Cochain::zeros(input.num_nodes(), d, c);
            for n in 0..input.num_nodes() {
                for i in 0..d {
                    for ch in 0..c {
                        let gate = 1.0 + p.filter.epsilon_gate[(i, ch)].tanh();
                        let v = gate * input.get(n, i, ch) - fs.layer.phi.apply(z.get(n, i, ch));
                        output.set(n, i, ch, v);
                    }
                }
            }
            Ok(LayerTrace {
                input: input.clone(),
                edges,
                sheaf,
                raw_l,
                norm,
                op,
                lambda,
                inner: LayerInner::Poly {
                    rescaled,
                    after_stalk,
                    mixed,
                    t_list,
                    theta,
                    hp,
                    z,
                },
                output,
                dropout_mask: None,
            })
        }
        LayerParams::Nsd(p) => {
            let m1 = apply_stalk_mix(&p.nsd.w1, input);
            let m2 = apply_channel_mix(&p.nsd.w2, &m1);
            let y = op.matvec(&m2)?;
            let (d, c) = (input.d(), input.channels());
            let mut output = Cochain::zeros(input.num_nodes(), d, c);
            for n in 0..input.num_nodes() {
                for i in 0..d {
                    for ch in 0..c {
                        let v = p.nsd.a_scale[ch] * input.get(n, i, ch)
                            - p.nsd.b_scale[ch] * fs.layer.phi.apply(y.get(n, i, ch));
                        output.set(n, i, ch, v);
                    }
                }
            }
            Ok(LayerTrace {
                input: input.clone(),
                edges,
                sheaf,
                raw_l,
                norm,
                op,
                lambda: 0.0,
                inner: LayerInner::Nsd { m1, m2, y },
                output,
                dropout_mask: None,
            })
        }
    }
}

/// Full traced forward: input dropout, lift, diffusion layers with
/// between-layer dropout, linear readout. The RNG is only consulted when
/// training with a nonzero dropout rate.
pub fn model_forward_traced(
    params: &ModelParams,
    graph: &Graph,
    raw: &DMatrix<f64>,
    fs: &ForwardSettings,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ModelTrace> {
    let n = graph.num_nodes();
    if raw.nrows() != n {
        return Err(Error::ShapeMismatch {
            context: "feature rows",
            expected: format!("{n}"),
            found: format!("{}", raw.nrows()),
        });
    }
    let dc = params.lift.w.nrows();
    let c = params.readout.w.ncols() / params.lift.w.nrows().max(1);
    // Infer (d, C) from the first layer when present; a layerless model
    // treats the lift output as d = dc, C = 1.
    let (d, c) = match params.layers.first() {
        Some(lp) => {
            let d = lp.learner().d;
            (d, dc / d)
        }
        None => {
            let _ = c;
            (dc, 1)
        }
    };
    if d * c != dc {
        return Err(Error::ShapeMismatch {
            context: "lift output",
            expected: format!("divisible into {d} x channels"),
            found: format!("{dc}"),
        });
    }

    let mut lift_input = raw.clone();
    if fs.training && fs.input_dropout > 0.0 {
        let r = rng
            .as_deref_mut()
            .ok_or(Error::Config("dropout requires an RNG".into()))?;
        let mask = dropout_mask(r, fs.input_dropout, n * raw.ncols());
        // Row-major mask order: node-by-node, feature within node.
        for i in 0..n {
            for j in 0..raw.ncols() {
                lift_input[(i, j)] *= mask[i * raw.ncols() + j];
            }
        }
    }

    let mut x0 = Cochain::zeros(n, d, c);
    let mut row = vec![0.0; raw.ncols()];
    for node in 0..n {
        for j in 0..raw.ncols() {
            row[j] = lift_input[(node, j)];
        }
        let y = params.lift.apply(&row);
        for i in 0..d {
            for ch in 0..c {
                x0.set(node, i, ch, y[i * c + ch]);
            }
        }
    }

    let mut layers = Vec::with_capacity(params.layers.len());
    let mut lambdas = Vec::with_capacity(params.layers.len());
    let mut x = x0.clone();
    let last = params.layers.len().saturating_sub(1);
    for (l, lp) in params.layers.iter().enumerate() {
        let pin = fs.lambda_override.map(|ls| ls[l]);
        let mut t = layer_forward_traced(&x, graph, lp, fs, pin)?;
        lambdas.push(t.lambda);
        if fs.training && fs.layer_dropout > 0.0 && l < last {
            let r = rng
                .as_deref_mut()
                .ok_or(Error::Config("dropout requires an RNG".into()))?;
            let mask = dropout_mask(r, fs.layer_dropout, t.output.as_slice().len());
            let mut next = t.output.clone();
            for (v, m) in next.as_mut_slice().iter_mut().zip(&mask) {
                *v *= m;
            }
            t.dropout_mask = Some(mask);
            x = next;
        } else {
            x = t.output.clone();
        }
        layers.push(t);
    }

    let num_classes = params.readout.w.nrows();
    let mut logits = DMatrix::zeros(n, num_classes);
    let mut flat = vec![0.0; dc];
    for node in 0..n {
        for i in 0..d {
            for ch in 0..c {
                flat[i * c + ch] = x.get(node, i, ch);
            }
        }
        let y = params.readout.apply(&flat);
        for (k, v) in y.iter().enumerate() {
            logits[(node, k)] = *v;
        }
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "logits" });
    }
    Ok(ModelTrace {
        lift_input,
        x0,
        layers,
        readout_input: x,
        logits,
        lambdas,
    })
}

/// Evaluation-mode logits (no dropout, no trace retention beyond the call).
pub fn model_logits(
    params: &ModelParams,
    graph: &Graph,
    raw: &DMatrix<f64>,
    settings: &LayerSettings,
) -> Result<DMatrix<f64>> {
    Ok(model_forward_traced(params, graph, raw, &ForwardSettings::eval(*settings), None)?.logits)
}

/// Mean softmax cross-entropy over the mask entries, plus d loss / d logits.
/// A node listed twice contributes twice (the mask is a list, not a set).
pub fn masked_cross_entropy(
    logits: &DMatrix<f64>,
    labels: &[usize],
    mask: &[usize],
) -> Result<(f64, DMatrix<f64>)> {
    if mask.is_empty() {
        return Err(Error::Config("loss mask is empty".into()));
    }
    let k = logits.ncols();
    let m = mask.len() as f64;
    let mut loss = 0.0;
    let mut grad = DMatrix::zeros(logits.nrows(), k);
    for &node in mask {
        let label = labels[node];
        let mut mx = f64::NEG_INFINITY;
        for j in 0..k {
            mx = mx.max(logits[(node, j)]);
        }
        let mut sum = 0.0;
        for j in 0..k {
            sum += (logits[(node, j)] - mx).exp();
        }
        let lse = mx + sum.ln();
        loss += lse - logits[(node, label)];
        for j in 0..k {
            let p = (logits[(node, j)] - mx).exp() / sum;
            grad[(node, j)] += (p - if j == label { 1.0 } else { 0.0 }) / m;
        }
    }
    loss /= m;
    if !loss.is_finite() {
        return Err(Error::NonFinite { context: "loss" });
    }
    Ok((loss, grad))
}

/// Fraction of mask entries whose argmax logit equals the label (ties go to
/// the lowest class index).
pub fn accuracy(logits: &DMatrix<f64>, labels: &[usize], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let mut hit = 0usize;
    for &node in mask {
        let mut best = 0;
        for j in 1..logits.ncols() {
            if logits[(node, j)] > logits[(node, best)] {
                best = j;
            }
        }
        if best == labels[node] {
            hit += 1;
        }
    }
    hit as f64 / mask.len() as f64
}

fn linear_backward(
    p: &LinearParams,
    input: &[f64],
    ybar: &[f64],
    gw: &mut DMatrix<f64>,
    gb: &mut nalgebra::DVector<f64>,
    xbar: Option<&mut [f64]>,
) {
    for r in 0..p.w.nrows() {
        gb[r] += ybar[r];
        for c in 0..p.w.ncols() {
            gw[(r, c)] += ybar[r] * input[c];
        }
    }
    if let Some(xbar) = xbar {
        for c in 0..p.w.ncols() {
            let mut s = 0.0;
            for r in 0..p.w.nrows() {
                s += p.w[(r, c)] * ybar[r];
            }
            xbar[c] += s;
        }
    }
}

/// Adjoint of the restriction-map construction: gradient on the map F to
/// gradient on the raw perceptron output.
fn map_backward(
    kind: MapKind,
    d: usize,
    fbar: &DMatrix<f64>,
    map: &DMatrix<f64>,
    minv: Option<&DMatrix<f64>>,
) -> Vec<f64> {
    match kind {
        MapKind::Diagonal => (0..d)
            .map(|i| fbar[(i, i)] * (1.0 - map[(i, i)] * map[(i, i)]))
            .collect(),
        MapKind::General => {
            let mut out = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] = fbar[(i, j)] * (1.0 - map[(i, j)] * map[(i, j)]);
                }
            }
            out
        }
        MapKind::Orthogonal => {
            // Q = (I - S)(I + S)^{-1}: dQ = -(I + Q) dS (I + S)^{-1}, so
            // S_bar = -(I + Q)^T Q_bar (I + S)^{-T}; skew coordinates pick up
            // S_bar[i][j] - S_bar[j][i].
            let minv = minv.expect("orthogonal trace keeps (I + S)^{-1}");
            let q = map;
            let d_eye = DMatrix::<f64>::identity(d, d);
            let sbar = -(&d_eye + q).transpose() * fbar * minv.transpose();
            let mut out = Vec::with_capacity(d * (d - 1) / 2);
            for i in 0..d {
                for j in (i + 1)..d {
                    out.push(sbar[(i, j)] - sbar[(j, i)]);
                }
            }
            out
        }
    }
}

/// Adjoint of one perceptron side; returns the gradient on the concatenated
/// input features (length 2d).
fn learner_backward(
    learner: &SheafLearner,
    side: &SideTrace,
    rawbar: &[f64],
    g: &mut SheafLearner,
) -> Vec<f64> {
    let h = learner.hidden();
    let mut hbar = vec![0.0; h];
    for (r, rb) in rawbar.iter().enumerate() {
        g.b2[r] += rb;
        for j in 0..h {
            g.w2[(r, j)] += rb * side.hid[j];
            hbar[j] += learner.w2[(r, j)] * rb;
        }
    }
    let mut inbar = vec![0.0; 2 * learner.d];
    for r in 0..h {
        let pbar = hbar[r] * Nonlinearity::Elu.deriv(side.pre[r]);
        g.b1[r] += pbar;
        for c in 0..2 * learner.d {
            g.w1[(r, c)] += pbar * side.input[c];
            inbar[c] += learner.w1[(r, c)] * pbar;
        }
    }
    inbar
}

/// Adjoint of assembly + (optional) normalization: a gradient on the
/// diffusion operator becomes gradients on the restriction maps, which then
/// flow through the map construction and the perceptron into the learner
/// weights and the layer input.
fn operator_backward(
    t: &LayerTrace,
    dop: &BlockSparseOperator,
    learner: &SheafLearner,
    g_learner: &mut SheafLearner,
    xbar: &mut Cochain,
) {
    let d = learner.d;
    // Normalization backward: Delta_uv = R_u L_uv R_v.
    let dl = match &t.norm {
        Some(eig) => {
            let mut dl = t.raw_l.pattern_zeros();
            let n = t.raw_l.num_nodes();
            let mut rbar: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); n];
            for (u, v, db) in dop.iter_blocks() {
                let (u, v) = (u as usize, v as usize);
                let (ru, rv) = (&eig[u].r, &eig[v].r);
                let luv = t.raw_l.block(u, v).expect("same pattern");
                *dl.block_mut(u, v).expect("same pattern") += ru * db * rv;
                rbar[u] += db * rv * luv.transpose();
                rbar[v] += (ru * luv).transpose() * db;
            }
            for (u, rb) in rbar.iter().enumerate() {
                *dl.block_mut(u, u).expect("diagonal stored") += eig[u].pullback(rb);
            }
            dl
        }
        None => dop.clone(),
    };

    // Assembly backward: L_uu += w F_u^T F_u, L_uv = -w F_u^T F_v.
    let mut poolbar: Vec<Vec<f64>> = vec![vec![0.0; d]; t.input.num_nodes()];
    for (e, &(u, v)) in t.sheaf.graph.edges().iter().enumerate() {
        let (u, v) = (u as usize, v as usize);
        let w = t.sheaf.weight(e);
        let (f_u, f_v) = &t.sheaf.maps[e];
        let luu = dl.block(u, u).expect("diagonal stored");
        let lvv = dl.block(v, v).expect("diagonal stored");
        let luv = dl.block(u, v).expect("edge block stored");
        let lvu = dl.block(v, u).expect("edge block stored");
        let fbar_u = (f_u * (luu + luu.transpose()) - f_v * (luv.transpose() + lvu)) * w;
        let fbar_v = (f_v * (lvv + lvv.transpose()) - f_u * (luv + lvu.transpose())) * w;
        let et = &t.edges[e];
        let raw_u = map_backward(learner.kind, d, &fbar_u, f_u, et.u.minv.as_ref());
        let raw_v = map_backward(learner.kind, d, &fbar_v, f_v, et.v.minv.as_ref());
        let in_u = learner_backward(learner, &et.u, &raw_u, g_learner);
        let in_v = learner_backward(learner, &et.v, &raw_v, g_learner);
        // Side u saw [pooled_u || pooled_v], side v the reverse.
        for i in 0..d {
            poolbar[u][i] += in_u[i] + in_v[d + i];
            poolbar[v][i] += in_u[d + i] + in_v[i];
        }
    }
    // Mean channel pool backward.
    let c = t.input.channels();
    let inv_c = 1.0 / c as f64;
    for n in 0..t.input.num_nodes() {
        for i in 0..d {
            let pb = poolbar[n][i] * inv_c;
            for ch in 0..c {
                *xbar.at_mut(n, i, ch) += pb;
            }
        }
    }
}

fn layer_backward(
    layer: &LayerParams,
    t: &LayerTrace,
    obar: &Cochain,
    g: &mut LayerParams,
    fs: &ForwardSettings,
) -> Result<Cochain> {
    let x = &t.input;
    let (n, d, c) = (x.num_nodes(), x.d(), x.channels());
    let mut xbar = Cochain::zeros(n, d, c);
    match (layer, &t.inner, g) {
        (
            LayerParams::Poly(p),
            LayerInner::Poly {
                rescaled,
                after_stalk,
                mixed,
                t_list,
                theta,
                hp,
                z,
            },
            LayerParams::Poly(gp),
        ) => {
            // Gate and residual: out = (1 + tanh eps) x - phi(z).
            let mut zbar = Cochain::zeros(n, d, c);
            for node in 0..n {
                for i in 0..d {
                    for ch in 0..c {
                        let ob = obar.get(node, i, ch);
                        let th = p.filter.epsilon_gate[(i, ch)].tanh();
                        gp.filter.epsilon_gate[(i, ch)] +=
                            ob * x.get(node, i, ch) * (1.0 - th * th);
                        *xbar.at_mut(node, i, ch) += ob * (1.0 + th);
                        zbar.set(node, i, ch, -ob * fs.layer.phi.deriv(z.get(node, i, ch)));
                    }
                }
            }
            // z = filtered + alpha_hp * hp.
            gp.filter.alpha_hp += zbar.dot(hp);
            let mut dop = t.op.pattern_zeros();
            if p.filter.alpha_hp != 0.0 {
                let mut hbar = zbar.clone();
                hbar.scale(p.filter.alpha_hp);
                // hp = x - op x / lambda.
                xbar.axpy(1.0, &hbar);
                if t.lambda > 0.0 {
                    dop.accumulate_outer(&hbar, x, -1.0 / t.lambda);
                    let back = t.op.matvec(&hbar)?;
                    xbar.axpy(-1.0 / t.lambda, &back);
                }
            }
            // Chebyshev reverse accumulation; tbar[k] starts at theta_k zbar.
            let kk = theta.len() - 1;
            let mut thetabar = vec![0.0; theta.len()];
            for (k, tk) in t_list.iter().enumerate() {
                thetabar[k] = zbar.dot(tk);
            }
            let mut tbar: Vec<Cochain> = theta
                .iter()
                .map(|&th| {
                    let mut b = zbar.clone();
                    b.scale(th);
                    b
                })
                .collect();
            let mut drescaled = rescaled.pattern_zeros();
            for k in (2..=kk).rev() {
                drescaled.accumulate_outer(&tbar[k], &t_list[k - 1], 2.0);
                let back = rescaled.matvec(&tbar[k])?;
                tbar[k - 1].axpy(2.0, &back);
                let (lo, hi) = tbar.split_at_mut(k);
                lo[k - 2].axpy(-1.0, &hi[0]);
            }
            let mut mixedbar = tbar[0].clone();
            if kk >= 1 {
                drescaled.accumulate_outer(&tbar[1], mixed, 1.0);
                let back = rescaled.matvec(&tbar[1])?;
                mixedbar.axpy(1.0, &back);
            }
            // eta through softmax: etabar = theta .* (thetabar - <thetabar, theta>).
            let dot: f64 = thetabar.iter().zip(theta).map(|(a, b)| a * b).sum();
            for (ge, (tb, th)) in gp.filter.eta.iter_mut().zip(thetabar.iter().zip(theta)) {
                *ge += th * (tb - dot);
            }
            // rescaled = (2 / lambda) op - I; lambda = 0 means rescaled = -I
            // (constant) and no operator gradient from the filter path.
            if t.lambda > 0.0 {
                dop.add_scaled(&drescaled, 2.0 / t.lambda);
            }
            // Mixing backward (filter input path only).
            let mut g2 = mixedbar;
            if let (Some(mc), Some(gmc)) = (&p.filter.channel_mix, gp.filter.channel_mix.as_mut())
            {
                let cin = after_stalk.as_ref().unwrap_or(x);
                for ci in 0..c {
                    for cj in 0..c {
                        let mut s = 0.0;
                        for node in 0..n {
                            for i in 0..d {
                                s += cin.get(node, i, ci) * g2.get(node, i, cj);
                            }
                        }
                        gmc[(ci, cj)] += s;
                    }
                }
                let mut prev = Cochain::zeros(n, d, c);
                for node in 0..n {
                    for i in 0..d {
                        for ci in 0..c {
                            let mut s = 0.0;
                            for cj in 0..c {
                                s += g2.get(node, i, cj) * mc[(ci, cj)];
                            }
                            prev.set(node, i, ci, s);
                        }
                    }
                }
                g2 = prev;
            }
            if let (Some(ms), Some(gms)) = (&p.filter.stalk_mix, gp.filter.stalk_mix.as_mut()) {
                for i in 0..d {
                    for j in 0..d {
                        let mut s = 0.0;
                        for node in 0..n {
                            for ch in 0..c {
                                s += g2.get(node, i, ch) * x.get(node, j, ch);
                            }
                        }
                        gms[(i, j)] += s;
                    }
                }
                for node in 0..n {
                    for j in 0..d {
                        for ch in 0..c {
                            let mut s = 0.0;
                            for i in 0..d {
                                s += ms[(i, j)] * g2.get(node, i, ch);
                            }
                            *xbar.at_mut(node, j, ch) += s;
                        }
                    }
                }
            } else {
                xbar.axpy(1.0, &g2);
            }
            operator_backward(t, &dop, &p.learner, &mut gp.learner, &mut xbar);
        }
        (LayerParams::Nsd(p), LayerInner::Nsd { m1, m2, y }, LayerParams::Nsd(gp)) => {
            // out = A .* x - B .* phi(y).
            let mut ybar = Cochain::zeros(n, d, c);
            for node in 0..n {
                for i in 0..d {
                    for ch in 0..c {
                        let ob = obar.get(node, i, ch);
                        let s = fs.layer.phi.apply(y.get(node, i, ch));
                        gp.nsd.a_scale[ch] += ob * x.get(node, i, ch);
                        gp.nsd.b_scale[ch] -= ob * s;
                        *xbar.at_mut(node, i, ch) += ob * p.nsd.a_scale[ch];
                        ybar.set(
                            node,
                            i,
                            ch,
                            -ob * p.nsd.b_scale[ch] * fs.layer.phi.deriv(y.get(node, i, ch)),
                        );
                    }
                }
            }
            // y = op m2.
            let mut dop = t.op.pattern_zeros();
            dop.accumulate_outer(&ybar, m2, 1.0);
            let m2bar = t.op.matvec(&ybar)?;
            // m2 = m1 W2 (channel mix).
            for ci in 0..c {
                for cj in 0..c {
                    let mut s = 0.0;
                    for node in 0..n {
                        for i in 0..d {
                            s += m1.get(node, i, ci) * m2bar.get(node, i, cj);
                        }
                    }
                    gp.nsd.w2[(ci, cj)] += s;
                }
            }
            let mut m1bar = Cochain::zeros(n, d, c);
            for node in 0..n {
                for i in 0..d {
                    for ci in 0..c {
                        let mut s = 0.0;
                        for cj in 0..c {
                            s += m2bar.get(node, i, cj) * p.nsd.w2[(ci, cj)];
                        }
                        m1bar.set(node, i, ci, s);
                    }
                }
            }
            // m1 = W1 x (stalk mix).
            for i in 0..d {
                for j in 0..d {
                    let mut s = 0.0;
                    for node in 0..n {
                        for ch in 0..c {
                            s += m1bar.get(node, i, ch) * x.get(node, j, ch);
                        }
                    }
                    gp.nsd.w1[(i, j)] += s;
                }
            }
            for node in 0..n {
                for j in 0..d {
                    for ch in 0..c {
                        let mut s = 0.0;
                        for i in 0..d {
                            s += p.nsd.w1[(i, j)] * m1bar.get(node, i, ch);
                        }
                        *xbar.at_mut(node, j, ch) += s;
                    }
                }
            }
            operator_backward(t, &dop, &p.learner, &mut gp.learner, &mut xbar);
        }
        _ => unreachable!("trace kind always matches layer kind"),
    }
    Ok(xbar)
}

/// Reverse pass over a recorded forward; returns parameter gradients in a
/// container shaped like the parameters themselves.
pub fn model_backward(
    params: &ModelParams,
    trace: &ModelTrace,
    dlogits: &DMatrix<f64>,
    fs: &ForwardSettings,
) -> Result<ModelParams> {
    let mut grads = params.zeros_like();
    let n = trace.logits.nrows();
    let x_last = &trace.readout_input;
    let (d, c) = (x_last.d(), x_last.channels());
    let dc = d * c;

    // Readout backward.
    let mut xbar = Cochain::zeros(n, d, c);
    let mut flat = vec![0.0; dc];
    let mut fbar = vec![0.0; dc];
    let mut ybar = vec![0.0; trace.logits.ncols()];
    for node in 0..n {
        for i in 0..d {
            for ch in 0..c {
                flat[i * c + ch] = x_last.get(node, i, ch);
            }
        }
        for k in 0..ybar.len() {
            ybar[k] = dlogits[(node, k)];
        }
        fbar.iter_mut().for_each(|v| *v = 0.0);
        linear_backward(
            &params.readout,
            &flat,
            &ybar,
            &mut grads.readout.w,
            &mut grads.readout.b,
            Some(&mut fbar),
        );
        for i in 0..d {
            for ch in 0..c {
                *xbar.at_mut(node, i, ch) += fbar[i * c + ch];
            }
        }
    }

    // Layers in reverse.
    for (l, (lp, lt)) in params.layers.iter().zip(&trace.layers).enumerate().rev() {
        if let Some(mask) = &lt.dropout_mask {
            for (v, m) in xbar.as_mut_slice().iter_mut().zip(mask) {
                *v *= m;
            }
        }
        let glayer = &mut grads.layers[l];
        xbar = layer_backward(lp, lt, &xbar, glayer, fs)?;
    }

    // Lift backward (input gradient is discarded).
    let f_in = trace.lift_input.ncols();
    let mut row = vec![0.0; f_in];
    for node in 0..n {
        for j in 0..f_in {
            row[j] = trace.lift_input[(node, j)];
        }
        for i in 0..d {
            for ch in 0..c {
                ybar_lift_set(&mut flat, i, c, ch, xbar.get(node, i, ch));
            }
        }
        linear_backward(
            &params.lift,
            &row,
            &flat,
            &mut grads.lift.w,
            &mut grads.lift.b,
            None,
        );
    }
    Ok(grads)
}

#[inline]
fn ybar_lift_set(flat: &mut [f64], i: usize, c: usize, ch: usize, v: f64) {
    flat[i * c + ch] = v;
}

/// Loss and parameter gradients in one call. Returns the per-layer
/// lambda_max values so callers can pin them (cache mode).
pub fn loss_and_grad(
    params: &ModelParams,
    graph: &Graph,
    raw: &DMatrix<f64>,
    labels: &[usize],
    mask: &[usize],
    fs: &ForwardSettings,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, ModelParams, Vec<f64>)> {
    let trace = model_forward_traced(params, graph, raw, fs, rng)?;
    let (loss, dlogits) = masked_cross_entropy(&trace.logits, labels, mask)?;
    let grads = model_backward(params, &trace, &dlogits, fs)?;
    Ok((loss, grads, trace.lambdas))
}

/// Outcome of a central finite-difference sweep over model parameters.
#[derive(Clone, Copy, Debug, Default)]
pub struct FdCheckReport {
    /// Parameters whose analytic gradient cleared the reporting floor.
    pub checked: usize,
    /// Parameters skipped because the gradient sat below the floor (a
    /// relative comparison against ~0 is noise).
    pub skipped_small: usize,
    pub failed: usize,
    pub max_rel_err: f64,
}

/// Compare analytic gradients against central finite differences
/// (f(p+h) - f(p-h)) / 2h for every `stride`-th parameter, in eval mode.
///
/// lambda_max is pinned to the values the analytic pass produced, so both
/// sides differentiate the same function: the rescale constant is defined as
/// a stop-gradient, and letting the perturbation leak through the bound
/// estimate would test a different (and wrong) derivative.
pub fn finite_difference_report(
    params: &ModelParams,
    graph: &Graph,
    raw: &DMatrix<f64>,
    labels: &[usize],
    mask: &[usize],
    layer: LayerSettings,
    stride: usize,
    step: f64,
    rel_tol: f64,
) -> Result<FdCheckReport> {
    let fs = ForwardSettings::eval(layer);
    let (_, grads, lambdas) = loss_and_grad(params, graph, raw, labels, mask, &fs, None)?;
    let pinned = fs.with_lambda(&lambdas);
    let gflat = grads.to_vec();
    let mut probe = params.clone();
    let mut flat = params.to_vec();
    let mut report = FdCheckReport::default();
    let eval = |probe: &mut ModelParams, flat: &[f64]| -> Result<f64> {
        probe.assign_from(flat)?;
        let trace = model_forward_traced(probe, graph, raw, &pinned, None)?;
        Ok(masked_cross_entropy(&trace.logits, labels, mask)?.0)
    };
    for i in (0..flat.len()).step_by(stride.max(1)) {
        let orig = flat[i];
        flat[i] = orig + step;
        let lp = eval(&mut probe, &flat)?;
        flat[i] = orig - step;
        let lm = eval(&mut probe, &flat)?;
        flat[i] = orig;
        let fd = (lp - lm) / (2.0 * step);
        if gflat[i].abs() <= 1e-8 {
            report.skipped_small += 1;
            continue;
        }
        let rel = (fd - gflat[i]).abs() / gflat[i].abs().max(fd.abs());
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(rel);
        if rel > rel_tol {
            report.failed += 1;
        }
    }
    Ok(report)
}
