//! Bayesian (variational) dropout, MAP-L2 toward a prior and tuneout.
//!
//! Every weight-matrix application in the model goes through [`Route`]: a
//! pair of an optional fixed matrix and a learned matrix, applied as
//! `fixed·h + learned·(m ⊙ h)`. Plain and dropout training use only the
//! learned (live) matrix; tuneout uses the prior as the fixed part and the
//! difference tensor as the learned part. Masks act on the input columns,
//! which equals `W·diag(m)·h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ModelDims, Param, ParamBundle, TensorSet, PARAM_COUNT};
use crate::tensor::{axpy, matvec_acc, matvec_t_acc, outer_acc, Tensor};

/// Identifies one mask: one per matrix, training example and epoch.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskKey {
    pub matrix_name: String,
    pub example_id: u64,
    pub epoch: u64,
}

impl MaskKey {
    pub fn new(matrix_name: impl Into<String>, example_id: u64, epoch: u64) -> Self {
        MaskKey {
            matrix_name: matrix_name.into(),
            example_id,
            epoch,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegMode {
    Off,
    Dropout,
    Tuneout,
}

impl RegMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RegMode::Off => "off",
            RegMode::Dropout => "dropout",
            RegMode::Tuneout => "tuneout",
        }
    }
}

/// Retention probabilities for word-level (embedding) and all other matrices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Retention {
    pub word: f64,
    pub other: f64,
}

impl Retention {
    pub const DROPOUT: Retention = Retention { word: 0.9, other: 0.8 };
    pub const TUNEOUT: Retention = Retention { word: 0.6, other: 0.2 };
    /// Setting tuned for the English→Russian systems, used for both dropout and tuneout.
    pub const ALTERNATE: Retention = Retention { word: 0.95, other: 0.89 };

    pub fn validate(&self) -> Result<()> {
        check_probability(self.word)?;
        check_probability(self.other)
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("retention probability {p} outside (0, 1]")));
    }
    Ok(())
}

/// Mask-sampling state for one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskSet {
    pub retention_word: f64,
    pub retention_other: f64,
    pub mode: RegMode,
    pub seed: u64,
}

impl MaskSet {
    pub fn off(seed: u64) -> Self {
        MaskSet {
            retention_word: 1.0,
            retention_other: 1.0,
            mode: RegMode::Off,
            seed,
        }
    }

    pub fn retention_for(&self, p: Param) -> f64 {
        if p.is_word_level() {
            self.retention_word
        } else {
            self.retention_other
        }
    }

    /// Masks of every matrix for one `(example, epoch)`. Biases never get a
    /// mask; mode `off` (or retention 1) yields identity masks.
    pub fn example_masks(&self, dims: &ModelDims, example_id: u64, epoch: u64) -> Result<ExampleMasks> {
        let mut masks: Vec<Option<Vec<f64>>> = vec![None; PARAM_COUNT];
        if self.mode != RegMode::Off {
            for &p in Param::ALL.iter().filter(|p| !p.is_bias()) {
                let prob = self.retention_for(p);
                if prob < 1.0 {
                    let key = MaskKey::new(p.name(), example_id, epoch);
                    masks[p.index()] = Some(sample_mask(self.seed, &key, p.input_dim(dims), prob)?);
                }
            }
        }
        Ok(ExampleMasks { masks })
    }
}

/// Per-matrix diagonal masks for one training example; `None` is identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleMasks {
    masks: Vec<Option<Vec<f64>>>,
}

impl ExampleMasks {
    pub fn identity() -> Self {
        ExampleMasks {
            masks: vec![None; PARAM_COUNT],
        }
    }

    #[inline]
    pub fn get(&self, p: Param) -> Option<&[f64]> {
        self.masks[p.index()].as_deref()
    }

    pub fn set(&mut self, p: Param, mask: Option<Vec<f64>>) {
        self.masks[p.index()] = mask;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegConfig {
    pub lambda_map_l2: f64,
    pub dropout: Option<Retention>,
    pub tuneout: Option<Retention>,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig::none()
    }
}

impl RegConfig {
    pub const DEFAULT_LAMBDA: f64 = 1e-3;

    pub fn none() -> Self {
        RegConfig {
            lambda_map_l2: 0.0,
            dropout: None,
            tuneout: None,
        }
    }

    pub fn dropout() -> Self {
        RegConfig {
            dropout: Some(Retention::DROPOUT),
            ..RegConfig::none()
        }
    }

    pub fn map_l2() -> Self {
        RegConfig {
            lambda_map_l2: Self::DEFAULT_LAMBDA,
            ..RegConfig::none()
        }
    }

    pub fn tuneout() -> Self {
        RegConfig {
            tuneout: Some(Retention::TUNEOUT),
            ..RegConfig::none()
        }
    }

    pub fn dropout_map_l2() -> Self {
        RegConfig {
            lambda_map_l2: Self::DEFAULT_LAMBDA,
            dropout: Some(Retention::DROPOUT),
            tuneout: None,
        }
    }

    /// Parses `none|dropout|map_l2|tuneout|dropout+map_l2`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "none" | "off" => Ok(RegConfig::none()),
            "dropout" => Ok(RegConfig::dropout()),
            "map_l2" => Ok(RegConfig::map_l2()),
            "tuneout" => Ok(RegConfig::tuneout()),
            "dropout+map_l2" => Ok(RegConfig::dropout_map_l2()),
            other => Err(Error::Config(format!("unknown regularizer `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_map_l2 >= 0.0) || !self.lambda_map_l2.is_finite() {
            return Err(Error::Config(format!(
                "MAP-L2 lambda must be a finite non-negative number, got {}",
                self.lambda_map_l2
            )));
        }
        if self.dropout.is_some() && self.tuneout.is_some() {
            return Err(Error::Config("dropout and tuneout cannot both be enabled".into()));
        }
        if let Some(r) = &self.dropout {
            r.validate()?;
        }
        if let Some(r) = &self.tuneout {
            r.validate()?;
        }
        Ok(())
    }

    pub fn mode(&self) -> RegMode {
        if self.tuneout.is_some() {
            RegMode::Tuneout
        } else if self.dropout.is_some() {
            RegMode::Dropout
        } else {
            RegMode::Off
        }
    }

    pub fn mask_set(&self, seed: u64) -> MaskSet {
        match (self.dropout, self.tuneout) {
            (_, Some(r)) => MaskSet {
                retention_word: r.word,
                retention_other: r.other,
                mode: RegMode::Tuneout,
                seed,
            },
            (Some(r), None) => MaskSet {
                retention_word: r.word,
                retention_other: r.other,
                mode: RegMode::Dropout,
                seed,
            },
            (None, None) => MaskSet::off(seed),
        }
    }

    pub fn uses_prior(&self) -> bool {
        self.lambda_map_l2 > 0.0 || self.tuneout.is_some()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mask_stream_seed(seed: u64, key: &MaskKey) -> u64 {
    // FNV-1a over the name, then mix in the indices.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.matrix_name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    let mut s = splitmix64(seed ^ h);
    s = splitmix64(s ^ key.example_id);
    splitmix64(s ^ key.epoch.rotate_left(32))
}

/// Diagonal of an inverted-dropout mask: i.i.d. Bernoulli(p) scaled by `1/p`.
pub fn sample_mask(seed: u64, key: &MaskKey, dim: usize, p: f64) -> Result<Vec<f64>> {
    check_probability(p)?;
    if p == 1.0 {
        return Ok(vec![1.0; dim]);
    }
    let keep = 1.0 / p;
    let mut rng = ChaCha8Rng::seed_from_u64(mask_stream_seed(seed, key));
    Ok((0..dim)
        .map(|_| if rng.gen::<f64>() < p { keep } else { 0.0 })
        .collect())
}

/// How one parameter tensor is applied: `fixed·h + learned·(m ⊙ h)`.
#[derive(Clone, Copy)]
pub struct Route<'a> {
    pub fixed: Option<&'a Tensor>,
    pub learned: &'a Tensor,
}

impl<'a> Route<'a> {
    /// `out += fixed·h + learned·(m ⊙ h)`. Writes the masked input into
    /// `masked_input` when a mask is given, for reuse in the backward pass.
    #[inline]
    pub(crate) fn forward(&self, mask: Option<&[f64]>, h: &[f64], masked_input: &mut Vec<f64>, out: &mut [f64]) {
        if let Some(fixed) = self.fixed {
            matvec_acc(fixed, h, out);
        }
        match mask {
            Some(m) => {
                masked_input.clear();
                masked_input.extend(h.iter().zip(m).map(|(x, k)| x * k));
                matvec_acc(self.learned, masked_input, out);
            }
            None => matvec_acc(self.learned, h, out),
        }
    }

    /// Accumulates `dlearned += dv·(m⊙h)ᵀ` and `dh += fixedᵀdv + m ⊙ (learnedᵀdv)`.
    /// `input` is the masked input recorded by `forward` when masked, else `h`.
    #[inline]
    pub(crate) fn backward(
        &self,
        mask: Option<&[f64]>,
        input: &[f64],
        dv: &[f64],
        grad: &mut Tensor,
        dh: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        outer_acc(grad, dv, input);
        if let Some(fixed) = self.fixed {
            matvec_t_acc(fixed, dv, dh);
        }
        match mask {
            Some(m) => {
                scratch.clear();
                scratch.resize(dh.len(), 0.0);
                matvec_t_acc(self.learned, dv, scratch);
                for ((d, s), k) in dh.iter_mut().zip(scratch.iter()).zip(m) {
                    *d += s * k;
                }
            }
            None => matvec_t_acc(self.learned, dv, dh),
        }
    }

    /// Embedding row of `token`: `fixed[token] + m[token]·learned[token]`.
    #[inline]
    pub(crate) fn embed_row(&self, mask: Option<&[f64]>, token: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        if let Some(fixed) = self.fixed {
            axpy(1.0, fixed.row(token), out);
        }
        let scale = mask.map_or(1.0, |m| m[token]);
        if scale != 0.0 {
            axpy(scale, self.learned.row(token), out);
        }
    }

    #[inline]
    pub(crate) fn embed_backward(&self, mask: Option<&[f64]>, token: usize, dx: &[f64], grad: &mut Tensor) {
        let scale = mask.map_or(1.0, |m| m[token]);
        if scale != 0.0 {
            axpy(scale, dx, grad.row_mut(token));
        }
    }

    /// Bias vector: `fixed + learned`.
    #[inline]
    pub(crate) fn add_bias(&self, out: &mut [f64]) {
        if let Some(fixed) = self.fixed {
            axpy(1.0, fixed.data(), out);
        }
        axpy(1.0, self.learned.data(), out);
    }
}

/// Resolves the [`Route`] of every parameter for a training-time pass.
pub struct Routes<'a> {
    routes: Vec<Route<'a>>,
}

impl<'a> Routes<'a> {
    /// Training view: in tuneout parametrization the prior is fixed and the
    /// differences are learned.
    pub fn training(params: &'a ParamBundle) -> Self {
        let routes = match (params.prior(), params.delta()) {
            (Some(prior), Some(delta)) => prior
                .iter()
                .zip(delta)
                .map(|(p, d)| Route {
                    fixed: Some(p),
                    learned: d,
                })
                .collect(),
            _ => params
                .live()
                .iter()
                .map(|t| Route {
                    fixed: None,
                    learned: t,
                })
                .collect(),
        };
        Routes { routes }
    }

    /// Plain view over already-materialized tensors.
    pub fn plain(tensors: &'a [Tensor]) -> Self {
        Routes {
            routes: tensors
                .iter()
                .map(|t| Route {
                    fixed: None,
                    learned: t,
                })
                .collect(),
        }
    }

    #[inline]
    pub fn get(&self, p: Param) -> &Route<'a> {
        &self.routes[p.index()]
    }
}

/// What mask context a weight application happens in.
#[derive(Clone, Debug)]
pub enum Application {
    Inference,
    Training(MaskKey),
}

/// Applies weight matrix `name` to the column vector `h` under `reg`.
///
/// * inference, or no dropout/tuneout: `W·h` (tuneout: `Ŵ·h + ΔW·h`)
/// * dropout: `W·(m ⊙ h)`
/// * tuneout: `Ŵ·h + ΔW·(m ⊙ h)`
pub fn apply_weight(
    name: &str,
    h: &Tensor,
    params: &ParamBundle,
    reg: &RegConfig,
    seed: u64,
    application: &Application,
) -> Result<Tensor> {
    let param = Param::from_name(name).ok_or_else(|| Error::Config(format!("unknown matrix `{name}`")))?;
    let mode = reg.mode();
    if mode == RegMode::Tuneout && (params.prior().is_none() || params.delta().is_none()) {
        return Err(Error::Config("tuneout needs a prior snapshot and difference tensors".into()));
    }
    let routes = Routes::training(params);
    let route = routes.get(param);
    let (rows, cols) = route.learned.shape();
    let input_dim = param.input_dim(&params.dims());
    if h.cols() != 1 || h.rows() != input_dim {
        return Err(Error::Dimension {
            op: "apply_weight",
            left: (rows, cols),
            right: h.shape(),
        });
    }
    let mask = match application {
        Application::Training(key) if mode != RegMode::Off && !param.is_bias() => {
            let masks = reg.mask_set(seed);
            Some(sample_mask(seed, key, input_dim, masks.retention_for(param))?)
        }
        _ => None,
    };
    let mut scratch = Vec::new();
    if param.is_word_level() {
        // One-hot inputs select rows; a general input is a weighted row sum.
        let mut out = vec![0.0; cols];
        let mut row = vec![0.0; cols];
        for (token, &weight) in h.data().iter().enumerate() {
            if weight != 0.0 {
                route.embed_row(mask.as_deref(), token, &mut row);
                axpy(weight, &row, &mut out);
            }
        }
        return Tensor::from_vec(cols, 1, out);
    }
    let mut out = vec![0.0; rows];
    route.forward(mask.as_deref(), h.data(), &mut scratch, &mut out);
    Tensor::from_vec(rows, 1, out)
}

/// `λ·Σ‖W − Ŵ‖²` over every tensor (biases included), and its gradient
/// `2λ(W − Ŵ)` per tensor. In tuneout parametrization `W − Ŵ = ΔW`.
pub fn map_l2_penalty(params: &ParamBundle, lambda: f64) -> Result<(f64, TensorSet)> {
    let mut grads = crate::params::zeros_like(params.trainable());
    let penalty = add_map_l2(params, lambda, &mut grads)?;
    Ok((penalty, grads))
}

/// Adds the MAP-L2 gradient into `grads` and returns the penalty.
pub fn add_map_l2(params: &ParamBundle, lambda: f64, grads: &mut [Tensor]) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("negative MAP-L2 lambda {lambda}")));
    }
    let prior = params
        .prior()
        .ok_or_else(|| Error::Config("MAP-L2 requires a prior snapshot".into()))?;
    let mut penalty = 0.0;
    match params.delta() {
        Some(delta) => {
            for (d, g) in delta.iter().zip(grads.iter_mut()) {
                penalty += d.squared_norm();
                axpy(2.0 * lambda, d.data(), g.data_mut());
            }
        }
        None => {
            for ((w, p), g) in params.live().iter().zip(prior).zip(grads.iter_mut()) {
                for ((&wi, &pi), gi) in w.data().iter().zip(p.data()).zip(g.data_mut()) {
                    let diff = wi - pi;
                    penalty += diff * diff;
                    *gi += 2.0 * lambda * diff;
                }
            }
        }
    }
    Ok(lambda * penalty)
}

/// Parameters as used for decoding: `Ŵ + ΔW` in tuneout mode, the live
/// tensors otherwise. The returned bundle keeps the prior but no differences.
pub fn effective_params(params: &ParamBundle, mode: RegMode) -> ParamBundle {
    let live = match mode {
        RegMode::Tuneout => params.effective_tensors(),
        RegMode::Off | RegMode::Dropout => params.live().to_vec(),
    };
    ParamBundle::from_parts(params.dims(), live, params.prior().map(<[Tensor]>::to_vec), None)
        .expect("shapes are congruent by construction")
}
