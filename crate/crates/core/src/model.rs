//! End-to-end model: feature lift, a stack of diffusion layers, linear
//! readout. Parameters live in one nested container with a fixed traversal
//! order so they can be flattened for the optimizer and for
//! finite-difference checks.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplacian::NORMALIZE_EPS;
use crate::layer::{LayerSettings, Nonlinearity, PolyFilterParams, NsdParams, SheafLearner};
use crate::sheaf::MapKind;
use crate::spectral::LambdaMaxStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    PolyNsd,
    Nsd,
}

/// Every searchable knob of a run. Loadable from TOML; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layer_kind: LayerKind,
    /// Number of diffusion layers; 0 degenerates to lift + readout.
    pub num_layers: usize,
    pub stalk_dim: usize,
    pub hidden_channels: usize,
    /// Chebyshev degree K; the filter carries K + 1 coefficients.
    pub degree: usize,
    pub map_kind: MapKind,
    /// Hidden width of the per-edge restriction-map perceptron.
    pub learner_hidden: usize,
    pub normalize: bool,
    pub lambda_max_strategy: LambdaMaxStrategy,
    pub phi: Nonlinearity,
    pub input_dropout: f64,
    pub layer_dropout: f64,
    pub learning_rate: f64,
    pub weight_decay_model: f64,
    pub weight_decay_sheaf: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Reuse the first forward pass's lambda_max per layer for the rest of
    /// training instead of recomputing every pass.
    pub cache_lambda: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layer_kind: LayerKind::PolyNsd,
            num_layers: 2,
            stalk_dim: 2,
            hidden_channels: 16,
            degree: 8,
            map_kind: MapKind::Diagonal,
            learner_hidden: 16,
            normalize: true,
            lambda_max_strategy: LambdaMaxStrategy::AnalyticNormalized,
            phi: Nonlinearity::Elu,
            input_dropout: 0.0,
            layer_dropout: 0.0,
            learning_rate: 0.01,
            weight_decay_model: 5e-4,
            weight_decay_sheaf: 5e-4,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            cache_lambda: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("stalk_dim", self.stalk_dim),
            ("hidden_channels", self.hidden_channels),
            ("learner_hidden", self.learner_hidden),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("input_dropout", self.input_dropout),
            ("layer_dropout", self.layer_dropout),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.weight_decay_model < 0.0 || self.weight_decay_sheaf < 0.0 {
            return Err(Error::Config("weight decay must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn layer_settings(&self) -> LayerSettings {
        LayerSettings {
            normalize: self.normalize,
            normalize_eps: NORMALIZE_EPS,
            lambda_strategy: self.lambda_max_strategy,
            phi: self.phi,
        }
    }
}

/// Dense affine map y = W x + b.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearParams {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearParams {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: DMatrix::zeros(out, inp),
            b: DVector::zeros(out),
        }
    }

    /// Uniform(-s, s) with s = 1/sqrt(fan_in) for weights and bias.
    pub fn random<R: Rng>(out: usize, inp: usize, rng: &mut R) -> Self {
        let s = 1.0 / (inp as f64).sqrt();
        let mut p = Self::zeros(out, inp);
        for v in p.w.iter_mut() {
            *v = rng.gen_range(-s..s);
        }
        for v in p.b.iter_mut() {
            *v = rng.gen_range(-s..s);
        }
        p
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.w.nrows()];
        for r in 0..self.w.nrows() {
            let mut s = self.b[r];
            for (c, xc) in x.iter().enumerate() {
                s += self.w[(r, c)] * xc;
            }
            y[r] = s;
        }
        y
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyLayerParams {
    pub learner: SheafLearner,
    pub filter: PolyFilterParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NsdLayerParams {
    pub learner: SheafLearner,
    pub nsd: NsdParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum LayerParams {
    Poly(PolyLayerParams),
    Nsd(NsdLayerParams),
}

impl LayerParams {
    pub fn learner(&self) -> &SheafLearner {
        match self {
            LayerParams::Poly(p) => &p.learner,
            LayerParams::Nsd(p) => &p.learner,
        }
    }
}

/// Optimizer grouping: the sheaf-learner weights get their own weight-decay
/// rate, everything else decays at the model rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Sheaf,
    Model,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    /// (d * C) x in_features.
    pub lift: LinearParams,
    pub layers: Vec<LayerParams>,
    /// num_classes x (d * C).
    pub readout: LinearParams,
}

impl ModelParams {
    /// Fresh parameters for a config. Draw order is fixed (lift, then each
    /// layer's learner and mixing weights, then readout), so a seeded RNG
    /// makes initialization reproducible.
    pub fn init<R: Rng>(
        config: &ModelConfig,
        in_features: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        let (d, c, k) = (config.stalk_dim, config.hidden_channels, config.degree);
        let lift = LinearParams::random(d * c, in_features, rng);
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            let learner = SheafLearner::random(config.map_kind, d, config.learner_hidden, rng);
            let sd = 1.0 / (d as f64).sqrt();
            let sc = 1.0 / (c as f64).sqrt();
            match config.layer_kind {
                LayerKind::PolyNsd => {
                    let mut filter = PolyFilterParams::new(k, d, c);
                    let mut stalk = DMatrix::zeros(d, d);
                    for v in stalk.iter_mut() {
                        *v = rng.gen_range(-sd..sd);
                    }
                    let mut chan = DMatrix::zeros(c, c);
                    for v in chan.iter_mut() {
                        *v = rng.gen_range(-sc..sc);
                    }
                    filter.stalk_mix = Some(stalk);
                    filter.channel_mix = Some(chan);
                    layers.push(LayerParams::Poly(PolyLayerParams { learner, filter }));
                }
                LayerKind::Nsd => {
                    let mut nsd = NsdParams::new(d, c);
                    for v in nsd.w1.iter_mut() {
                        *v = rng.gen_range(-sd..sd);
                    }
                    for v in nsd.w2.iter_mut() {
                        *v = rng.gen_range(-sc..sc);
                    }
                    layers.push(LayerParams::Nsd(NsdLayerParams { learner, nsd }));
                }
            }
        }
        let readout = LinearParams::random(num_classes, d * c, rng);
        Self {
            lift,
            layers,
            readout,
        }
    }

    /// Same shapes, all parameters zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, v| *v = 0.0);
        z
    }

    /// Visit every trainable scalar in the canonical order with its group
    /// tag. All flat views (to_vec, assign_from, group_tags) derive from
    /// this one traversal.
    pub fn visit_mut(&mut self, f: &mut impl FnMut(ParamGroup, &mut f64)) {
        fn linear(p: &mut LinearParams, g: ParamGroup, f: &mut impl FnMut(ParamGroup, &mut f64)) {
            for v in p.w.iter_mut() {
                f(g, v);
            }
            for v in p.b.iter_mut() {
                f(g, v);
            }
        }
        fn learner(p: &mut SheafLearner, f: &mut impl FnMut(ParamGroup, &mut f64)) {
            for v in p.w1.iter_mut() {
                f(ParamGroup::Sheaf, v);
            }
            for v in p.b1.iter_mut() {
                f(ParamGroup::Sheaf, v);
            }
            for v in p.w2.iter_mut() {
                f(ParamGroup::Sheaf, v);
            }
            for v in p.b2.iter_mut() {
                f(ParamGroup::Sheaf, v);
            }
        }
        linear(&mut self.lift, ParamGroup::Model, f);
        for layer in &mut self.layers {
            match layer {
                LayerParams::Poly(p) => {
                    learner(&mut p.learner, f);
                    for v in p.filter.eta.iter_mut() {
                        f(ParamGroup::Model, v);
                    }
                    f(ParamGroup::Model, &mut p.filter.alpha_hp);
                    for v in p.filter.epsilon_gate.iter_mut() {
                        f(ParamGroup::Model, v);
                    }
                    if let Some(m) = &mut p.filter.stalk_mix {
                        for v in m.iter_mut() {
                            f(ParamGroup::Model, v);
                        }
                    }
                    if let Some(m) = &mut p.filter.channel_mix {
                        for v in m.iter_mut() {
                            f(ParamGroup::Model, v);
                        }
                    }
                }
                LayerParams::Nsd(p) => {
                    learner(&mut p.learner, f);
                    for v in p.nsd.a_scale.iter_mut() {
                        f(ParamGroup::Model, v);
                    }
                    for v in p.nsd.b_scale.iter_mut() {
                        f(ParamGroup::Model, v);
                    }
                    for v in p.nsd.w1.iter_mut() {
                        f(ParamGroup::Model, v);
                    }
                    for v in p.nsd.w2.iter_mut() {
                        f(ParamGroup::Model, v);
                    }
                }
            }
        }
        linear(&mut self.readout, ParamGroup::Model, f);
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut c = self.clone();
        c.visit_mut(&mut |_, v| out.push(*v));
        out
    }

    pub fn group_tags(&self) -> Vec<ParamGroup> {
        let mut out = Vec::new();
        let mut c = self.clone();
        c.visit_mut(&mut |g, _| out.push(g));
        out
    }

    pub fn assign_from(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "flat parameter vector",
                expected: format!("{expected}"),
                found: format!("{}", flat.len()),
            });
        }
        let mut it = flat.iter();
        self.visit_mut(&mut |_, v| *v = *it.next().unwrap());
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut c = self.clone();
        c.visit_mut(&mut |_, _| n += 1);
        n
    }
}

/// Hand-derived parameter count for a config; must agree with
/// `ModelParams::param_count` on freshly initialized parameters.
pub fn param_count_formula(config: &ModelConfig, in_features: usize, num_classes: usize) -> usize {
    let (d, c, k, h) = (
        config.stalk_dim,
        config.hidden_channels,
        config.degree,
        config.learner_hidden,
    );
    let lift = d * c * in_features + d * c;
    let learner = h * 2 * d + h + config.map_kind.param_count(d) * h
        + config.map_kind.param_count(d);
    let per_layer = match config.layer_kind {
        // eta (K+1) + alpha + gate (d*C) + stalk mix (d^2) + channel mix (C^2)
        LayerKind::PolyNsd => learner + (k + 1) + 1 + d * c + d * d + c * c,
        // A (C) + B (C) + W1 (d^2) + W2 (C^2)
        LayerKind::Nsd => learner + c + c + d * d + c * c,
    };
    let readout = num_classes * d * c + num_classes;
    lift + config.num_layers * per_layer + readout
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned on-disk snapshot: config header, seed, and the flat parameter
/// vector in canonical traversal order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub in_features: usize,
    pub num_classes: usize,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize checkpoint: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("parse checkpoint: {e}")))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        let expected = param_count_formula(&ck.config, ck.in_features, ck.num_classes);
        if ck.params.len() != expected {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, config implies {expected}",
                ck.params.len()
            )));
        }
        Ok(ck)
    }

    /// Reconstruct the parameter container this checkpoint describes.
    pub fn rebuild(&self) -> Result<ModelParams> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let mut params =
            ModelParams::init(&self.config, self.in_features, self.num_classes, &mut rng);
        params.assign_from(&self.params)?;
        Ok(params)
    }
}
