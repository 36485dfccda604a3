//! Single-layer GRU encoder-decoder without attention.
//!
//! The decoder starts from the encoder's final hidden state and reads `<s>`
//! at step 0. Training uses teacher forcing; the loss is summed over target
//! positions (including `</s>`) and averaged over the examples of a batch.
//! Every matrix application goes through a [`Route`], so dropout and tuneout
//! masks apply uniformly.

use crate::error::{Error, Result};
use crate::params::{ModelDims, Param, ParamBundle};
use crate::regularization::{add_map_l2, ExampleMasks, MaskSet, RegConfig, Route, Routes};
use crate::tensor::{axpy, sigmoid, softmax_xent_in_place, Tensor};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_decode_len: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 64,
            max_decode_len: 32,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= UNK || self.embed_dim == 0 || self.hidden_dim == 0 || self.max_decode_len == 0 {
            return Err(Error::Config(format!("invalid model configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Src,
    Tgt,
}

impl Side {
    fn embedding(self) -> Param {
        match self {
            Side::Src => Param::SrcEmbed,
            Side::Tgt => Param::TgtEmbed,
        }
    }
}

#[derive(Clone, Copy)]
struct Gru {
    wz: Param,
    wr: Param,
    wh: Param,
    uz: Param,
    ur: Param,
    uh: Param,
    bz: Param,
    br: Param,
    bh: Param,
}

const ENCODER: Gru = Gru {
    wz: Param::EncWz,
    wr: Param::EncWr,
    wh: Param::EncWh,
    uz: Param::EncUz,
    ur: Param::EncUr,
    uh: Param::EncUh,
    bz: Param::EncBz,
    br: Param::EncBr,
    bh: Param::EncBh,
};

const DECODER: Gru = Gru {
    wz: Param::DecWz,
    wr: Param::DecWr,
    wh: Param::DecWh,
    uz: Param::DecUz,
    ur: Param::DecUr,
    uh: Param::DecUh,
    bz: Param::DecBz,
    br: Param::DecBr,
    bh: Param::DecBh,
};

/// Masked copies of a route's input, kept only when the route was masked.
#[derive(Clone, Debug, Default)]
struct MaskedInputs {
    wz: Vec<f64>,
    wr: Vec<f64>,
    wh: Vec<f64>,
    uz: Vec<f64>,
    ur: Vec<f64>,
    uh: Vec<f64>,
}

#[derive(Clone, Debug)]
struct StepCache {
    token: usize,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    q: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    masked: MaskedInputs,
}

/// Encoder output: final hidden state plus what backward needs.
#[derive(Clone, Debug)]
pub struct EncoderState {
    pub final_hidden: Vec<f64>,
    steps: Vec<StepCache>,
}

impl EncoderState {
    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.steps.iter().map(|s| s.h.as_slice())
    }
}

#[derive(Clone, Debug)]
pub struct DecoderPass {
    pub loss: f64,
    /// `softmax - onehot` at each target position.
    pub dlogits: Vec<Vec<f64>>,
    steps: Vec<StepCache>,
    out_inputs: Vec<Vec<f64>>,
}

/// A forward/backward context: parameter routes plus the masks of one example.
pub struct Pass<'a> {
    dims: ModelDims,
    routes: Routes<'a>,
    masks: &'a ExampleMasks,
}

impl<'a> Pass<'a> {
    pub fn new(params: &'a ParamBundle, masks: &'a ExampleMasks) -> Self {
        Pass {
            dims: params.dims(),
            routes: Routes::training(params),
            masks,
        }
    }

    pub fn plain(dims: ModelDims, tensors: &'a [Tensor], masks: &'a ExampleMasks) -> Self {
        Pass {
            dims,
            routes: Routes::plain(tensors),
            masks,
        }
    }

    #[inline]
    fn route(&self, p: Param) -> (&Route<'a>, Option<&[f64]>) {
        (self.routes.get(p), self.masks.get(p))
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.dims.vocab_size) {
            Some(&token) => Err(Error::Vocab {
                token,
                vocab_size: self.dims.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Embedding rows of `tokens`, with word-level masking when present.
    pub fn embed_lookup(&self, tokens: &[usize], side: Side) -> Result<Vec<Tensor>> {
        self.check_tokens(tokens)?;
        let (route, mask) = self.route(side.embedding());
        tokens
            .iter()
            .map(|&t| {
                let mut row = vec![0.0; self.dims.embed_dim];
                route.embed_row(mask, t, &mut row);
                Tensor::from_vec(self.dims.embed_dim, 1, row)
            })
            .collect()
    }

    /// One encoder GRU step on column vectors.
    pub fn gru_step(&self, x: &Tensor, h_prev: &Tensor) -> Result<Tensor> {
        if x.shape() != (self.dims.embed_dim, 1) || h_prev.shape() != (self.dims.hidden_dim, 1) {
            return Err(Error::Dimension {
                op: "gru_step",
                left: x.shape(),
                right: h_prev.shape(),
            });
        }
        let cache = self.gru_forward(ENCODER, 0, x.data().to_vec(), h_prev.data());
        Tensor::from_vec(self.dims.hidden_dim, 1, cache.h)
    }

    fn gru_forward(&self, gru: Gru, token: usize, x: Vec<f64>, h_prev: &[f64]) -> StepCache {
        let hd = self.dims.hidden_dim;
        let mut masked = MaskedInputs::default();

        let mut az = vec![0.0; hd];
        self.routes.get(gru.bz).add_bias(&mut az);
        let (route, mask) = self.route(gru.wz);
        route.forward(mask, &x, &mut masked.wz, &mut az);
        let (route, mask) = self.route(gru.uz);
        route.forward(mask, h_prev, &mut masked.uz, &mut az);

        let mut ar = vec![0.0; hd];
        self.routes.get(gru.br).add_bias(&mut ar);
        let (route, mask) = self.route(gru.wr);
        route.forward(mask, &x, &mut masked.wr, &mut ar);
        let (route, mask) = self.route(gru.ur);
        route.forward(mask, h_prev, &mut masked.ur, &mut ar);

        let z: Vec<f64> = az.iter().map(|&a| sigmoid(a)).collect();
        let r: Vec<f64> = ar.iter().map(|&a| sigmoid(a)).collect();
        let q: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();

        let mut ac = vec![0.0; hd];
        self.routes.get(gru.bh).add_bias(&mut ac);
        let (route, mask) = self.route(gru.wh);
        route.forward(mask, &x, &mut masked.wh, &mut ac);
        let (route, mask) = self.route(gru.uh);
        route.forward(mask, &q, &mut masked.uh, &mut ac);
        let c: Vec<f64> = ac.iter().map(|a| a.tanh()).collect();

        let h = (0..hd).map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * c[i]).collect();
        StepCache {
            token,
            x,
            h_prev: h_prev.to_vec(),
            q,
            z,
            r,
            c,
            h,
            masked,
        }
    }

    /// Backward through one GRU step. Adds into `grads`; returns `(dx, dh_prev)`.
    fn gru_backward(&self, gru: Gru, s: &StepCache, dh_new: &[f64], grads: &mut [Tensor], scratch: &mut Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        let hd = self.dims.hidden_dim;
        let mut dx = vec![0.0; self.dims.embed_dim];
        let mut dh = vec![0.0; hd];
        let mut daz = vec![0.0; hd];
        let mut dac = vec![0.0; hd];
        for i in 0..hd {
            let dz = dh_new[i] * (s.c[i] - s.h_prev[i]);
            let dc = dh_new[i] * s.z[i];
            dh[i] = dh_new[i] * (1.0 - s.z[i]);
            dac[i] = dc * (1.0 - s.c[i] * s.c[i]);
            daz[i] = dz * s.z[i] * (1.0 - s.z[i]);
        }

        axpy(1.0, &dac, grads[gru.bh.index()].data_mut());
        let (route, mask) = self.route(gru.wh);
        route.backward(mask, pick(mask, &s.masked.wh, &s.x), &dac, &mut grads[gru.wh.index()], &mut dx, scratch);
        let mut dq = vec![0.0; hd];
        let (route, mask) = self.route(gru.uh);
        route.backward(mask, pick(mask, &s.masked.uh, &s.q), &dac, &mut grads[gru.uh.index()], &mut dq, scratch);

        let mut dar = vec![0.0; hd];
        for i in 0..hd {
            dh[i] += dq[i] * s.r[i];
            let dr = dq[i] * s.h_prev[i];
            dar[i] = dr * s.r[i] * (1.0 - s.r[i]);
        }

        axpy(1.0, &dar, grads[gru.br.index()].data_mut());
        let (route, mask) = self.route(gru.wr);
        route.backward(mask, pick(mask, &s.masked.wr, &s.x), &dar, &mut grads[gru.wr.index()], &mut dx, scratch);
        let (route, mask) = self.route(gru.ur);
        route.backward(mask, pick(mask, &s.masked.ur, &s.h_prev), &dar, &mut grads[gru.ur.index()], &mut dh, scratch);

        axpy(1.0, &daz, grads[gru.bz.index()].data_mut());
        let (route, mask) = self.route(gru.wz);
        route.backward(mask, pick(mask, &s.masked.wz, &s.x), &daz, &mut grads[gru.wz.index()], &mut dx, scratch);
        let (route, mask) = self.route(gru.uz);
        route.backward(mask, pick(mask, &s.masked.uz, &s.h_prev), &daz, &mut grads[gru.uz.index()], &mut dh, scratch);

        (dx, dh)
    }

    fn embed(&self, side: Side, token: usize) -> Vec<f64> {
        let (route, mask) = self.route(side.embedding());
        let mut x = vec![0.0; self.dims.embed_dim];
        route.embed_row(mask, token, &mut x);
        x
    }

    pub fn encode(&self, src: &[usize]) -> Result<EncoderState> {
        self.check_tokens(src)?;
        let mut h = vec![0.0; self.dims.hidden_dim];
        let mut steps = Vec::with_capacity(src.len());
        for &t in src {
            let x = self.embed(Side::Src, t);
            let step = self.gru_forward(ENCODER, t, x, &h);
            h.clone_from(&step.h);
            steps.push(step);
        }
        Ok(EncoderState {
            final_hidden: h,
            steps,
        })
    }

    fn logits(&self, h: &[f64], out_input: &mut Vec<f64>) -> Vec<f64> {
        let mut logits = vec![0.0; self.dims.vocab_size];
        self.routes.get(Param::OutB).add_bias(&mut logits);
        let (route, mask) = self.route(Param::OutW);
        route.forward(mask, h, out_input, &mut logits);
        logits
    }

    /// Teacher-forced decoder pass over `tgt` (without `</s>`, which is
    /// appended as the final target).
    pub fn decode_train(&self, enc: &EncoderState, tgt: &[usize]) -> Result<DecoderPass> {
        self.check_tokens(tgt)?;
        let positions = tgt.len() + 1;
        let mut h = enc.final_hidden.clone();
        let mut loss = 0.0;
        let mut steps = Vec::with_capacity(positions);
        let mut dlogits = Vec::with_capacity(positions);
        let mut out_inputs = Vec::with_capacity(positions);
        for t in 0..positions {
            let input = if t == 0 { BOS } else { tgt[t - 1] };
            let target = if t < tgt.len() { tgt[t] } else { EOS };
            let x = self.embed(Side::Tgt, input);
            let step = self.gru_forward(DECODER, input, x, &h);
            h.clone_from(&step.h);
            let mut out_input = Vec::new();
            let mut logits = self.logits(&step.h, &mut out_input);
            loss += softmax_xent_in_place(&mut logits, target);
            steps.push(step);
            dlogits.push(logits);
            out_inputs.push(out_input);
        }
        Ok(DecoderPass {
            loss,
            dlogits,
            steps,
            out_inputs,
        })
    }

    /// Backpropagates `scale · loss` of one example into `grads` (indexed by
    /// [`Param`], shaped like the trainable tensors).
    pub fn backward(&self, enc: &EncoderState, dec: &DecoderPass, scale: f64, grads: &mut [Tensor]) {
        let hd = self.dims.hidden_dim;
        let mut scratch = Vec::with_capacity(hd);
        let mut dh_next = vec![0.0; hd];
        let mut dl = vec![0.0; self.dims.vocab_size];
        for t in (0..dec.steps.len()).rev() {
            let step = &dec.steps[t];
            dl.iter_mut().zip(&dec.dlogits[t]).for_each(|(d, g)| *d = scale * g);
            axpy(1.0, &dl, grads[Param::OutB.index()].data_mut());
            let (route, mask) = self.route(Param::OutW);
            let input = pick(mask, &dec.out_inputs[t], &step.h);
            route.backward(mask, input, &dl, &mut grads[Param::OutW.index()], &mut dh_next, &mut scratch);
            let (dx, dh_prev) = self.gru_backward(DECODER, step, &dh_next, grads, &mut scratch);
            let (route, mask) = self.route(Param::TgtEmbed);
            route.embed_backward(mask, step.token, &dx, &mut grads[Param::TgtEmbed.index()]);
            dh_next = dh_prev;
        }
        for step in enc.steps.iter().rev() {
            let (dx, dh_prev) = self.gru_backward(ENCODER, step, &dh_next, grads, &mut scratch);
            let (route, mask) = self.route(Param::SrcEmbed);
            route.embed_backward(mask, step.token, &dx, &mut grads[Param::SrcEmbed.index()]);
            dh_next = dh_prev;
        }
    }

    /// Argmax decoding until `</s>` or `max_len` tokens.
    pub fn greedy_decode(&self, enc: &EncoderState, max_len: usize) -> Vec<usize> {
        let mut h = enc.final_hidden.clone();
        let mut out = Vec::new();
        let mut input = BOS;
        let mut scratch = Vec::new();
        while out.len() < max_len {
            let x = self.embed(Side::Tgt, input);
            let step = self.gru_forward(DECODER, input, x, &h);
            h = step.h;
            let logits = self.logits(&h, &mut scratch);
            let best = argmax(&logits);
            if best == EOS {
                break;
            }
            out.push(best);
            input = best;
        }
        out
    }
}

#[inline]
fn pick<'s>(mask: Option<&[f64]>, masked: &'s [f64], raw: &'s [f64]) -> &'s [f64] {
    if mask.is_some() {
        masked
    } else {
        raw
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// One training pair with its stable corpus line index.
#[derive(Clone, Copy, Debug)]
pub struct TrainingExample<'c> {
    pub id: u64,
    pub src: &'c [usize],
    pub tgt: &'c [usize],
}

/// Loss of one example under the given masks; adds `scale·∂loss` into `grads`.
pub fn example_loss_and_grad(
    params: &ParamBundle,
    masks: &ExampleMasks,
    src: &[usize],
    tgt: &[usize],
    scale: f64,
    grads: &mut [Tensor],
) -> Result<f64> {
    let pass = Pass::new(params, masks);
    let enc = pass.encode(src)?;
    let dec = pass.decode_train(&enc, tgt)?;
    pass.backward(&enc, &dec, scale, grads);
    Ok(dec.loss)
}

/// Mean-over-examples loss of a mini-batch plus the MAP-L2 penalty (added
/// once, unscaled by batch size). Gradients are accumulated into `grads`,
/// which the caller zeroes.
pub fn batch_loss_and_grad(
    params: &ParamBundle,
    reg: &RegConfig,
    masks: &MaskSet,
    batch: &[TrainingExample<'_>],
    epoch: u64,
    grads: &mut [Tensor],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Data("empty mini-batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let dims = params.dims();
    let mut loss = 0.0;
    for ex in batch {
        let example_masks = masks.example_masks(&dims, ex.id, epoch)?;
        loss += example_loss_and_grad(params, &example_masks, ex.src, ex.tgt, scale, grads)?;
    }
    loss *= scale;
    if reg.lambda_map_l2 > 0.0 {
        loss += add_map_l2(params, reg.lambda_map_l2, grads)?;
    }
    Ok(loss)
}

/// Mini-batch loss without gradients (same masks and penalty).
pub fn batch_loss(
    params: &ParamBundle,
    reg: &RegConfig,
    masks: &MaskSet,
    batch: &[TrainingExample<'_>],
    epoch: u64,
) -> Result<f64> {
    let dims = params.dims();
    let mut loss = 0.0;
    for ex in batch {
        let example_masks = masks.example_masks(&dims, ex.id, epoch)?;
        let pass = Pass::new(params, &example_masks);
        let enc = pass.encode(ex.src)?;
        loss += pass.decode_train(&enc, ex.tgt)?.loss;
    }
    loss /= batch.len() as f64;
    if reg.lambda_map_l2 > 0.0 {
        let mut discard = crate::params::zeros_like(params.trainable());
        loss += add_map_l2(params, reg.lambda_map_l2, &mut discard)?;
    }
    Ok(loss)
}

/// Decoding-time model: effective tensors, identity masks.
#[derive(Clone, Debug)]
pub struct Translator {
    dims: ModelDims,
    tensors: Vec<Tensor>,
    identity: ExampleMasks,
    max_len: usize,
}

impl Translator {
    pub fn new(params: &ParamBundle, max_len: usize) -> Self {
        Translator {
            dims: params.dims(),
            tensors: params.effective_tensors(),
            identity: ExampleMasks::identity(),
            max_len,
        }
    }

    pub fn translate(&self, src: &[usize]) -> Result<Vec<usize>> {
        let pass = Pass::plain(self.dims, &self.tensors, &self.identity);
        let enc = pass.encode(src)?;
        Ok(pass.greedy_decode(&enc, self.max_len))
    }

    pub fn translate_all<'s>(&self, sources: impl IntoIterator<Item = &'s [usize]>) -> Result<Vec<Vec<usize>>> {
        sources.into_iter().map(|s| self.translate(s)).collect()
    }
}

/// Greedy decode of one source sentence with identity masks and effective
/// (`Ŵ + ΔW` in tuneout mode) weights.
pub fn greedy_decode(params: &ParamBundle, src: &[usize], max_len: usize) -> Result<Vec<usize>> {
    Translator::new(params, max_len).translate(src)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference_check_report;
    use crate::params::{zeros_like, TensorSet};
    use crate::regularization::Retention;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DIMS: ModelDims = ModelDims {
        vocab_size: 9,
        embed_dim: 4,
        hidden_dim: 5,
    };

    fn params(seed: u64) -> ParamBundle {
        let mut p = ParamBundle::init(DIMS, &mut ChaCha8Rng::seed_from_u64(seed));
        // Non-zero biases so their gradients are exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        for &b in Param::ALL.iter().filter(|b| b.is_bias()) {
            p.get_mut(b).data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
        }
        p
    }

    fn batch() -> Vec<(u64, Vec<usize>, Vec<usize>)> {
        vec![(0, vec![4, 5, 6, 5], vec![7, 8, 4]), (1, vec![8, 4], vec![5, 5, 6, 7])]
    }

    fn check(params: &ParamBundle, reg: &RegConfig) -> f64 {
        let masks = reg.mask_set(42);
        let data = batch();
        let examples: Vec<TrainingExample<'_>> = data
            .iter()
            .map(|(id, s, t)| TrainingExample { id: *id, src: s, tgt: t })
            .collect();
        let loss_fn = |p: &ParamBundle| -> Result<(f64, TensorSet)> {
            let mut grads = zeros_like(p.trainable());
            let loss = batch_loss_and_grad(p, reg, &masks, &examples, 3, &mut grads)?;
            Ok((loss, grads))
        };
        let report = finite_difference_check_report(loss_fn, params, 1e-5).unwrap();
        assert!(report.checked == params.scalar_count());
        report.max_relative_error
    }

    #[test]
    fn gradient_check_plain() {
        let err = check(&params(1), &RegConfig::none());
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradient_check_dropout() {
        let reg = RegConfig {
            dropout: Some(Retention { word: 0.7, other: 0.6 }),
            ..RegConfig::none()
        };
        let err = check(&params(2), &reg);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradient_check_map_l2_and_tuneout() {
        let mut p = params(3);
        p.snapshot_prior();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in p.live_mut() {
            t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
        }
        let reg = RegConfig {
            lambda_map_l2: 0.05,
            ..RegConfig::dropout()
        };
        let err = check(&p, &reg);
        assert!(err < 1e-4, "map-l2 {err}");

        let mut t = params(4);
        t.snapshot_prior();
        t.start_tuneout().unwrap();
        for d in t.delta_mut().unwrap() {
            d.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.2..0.2));
        }
        let reg = RegConfig {
            tuneout: Some(Retention { word: 0.6, other: 0.5 }),
            ..RegConfig::none()
        };
        let err = check(&t, &reg);
        assert!(err < 1e-4, "tuneout {err}");
    }

    #[test]
    fn gru_step_with_zero_weights_halves_state() {
        let p = ParamBundle::zeros(DIMS);
        let masks = ExampleMasks::identity();
        let pass = Pass::new(&p, &masks);
        let h_prev = Tensor::column(&[1.0, -2.0, 0.5, 4.0, 0.0]);
        let h = pass.gru_step(&Tensor::column(&[0.3; 4]), &h_prev).unwrap();
        assert_eq!(h.data(), &[0.5, -1.0, 0.25, 2.0, 0.0]);
        assert!(matches!(pass.gru_step(&Tensor::column(&[0.3; 3]), &h_prev), Err(Error::Dimension { .. })));
    }

    #[test]
    fn masks_are_shared_across_time_steps() {
        // A sentence repeating one token: with the same masks at every step
        // the encoder follows the same map, so re-encoding step by step with
        // the example's masks reproduces the full pass exactly.
        let p = params(5);
        let maskset = RegConfig::dropout().mask_set(7);
        let masks = maskset.example_masks(&DIMS, 11, 2).unwrap();
        let pass = Pass::new(&p, &masks);
        let src = [4, 6, 4, 4, 5, 4, 4, 4];
        let enc = pass.encode(&src).unwrap();
        let mut h = Tensor::zeros(DIMS.hidden_dim, 1);
        let xs = pass.embed_lookup(&src, Side::Src).unwrap();
        for (x, state) in xs.iter().zip(enc.states()) {
            h = pass.gru_step(x, &h).unwrap();
            assert_eq!(h.data(), state);
        }
        assert_eq!(xs[0], xs[6]);
        let again = maskset.example_masks(&DIMS, 11, 2).unwrap();
        assert_eq!(masks, again);
    }

    #[test]
    fn embed_lookup_modes() {
        let p = params(6);
        let identity = ExampleMasks::identity();
        let rows = Pass::new(&p, &identity).embed_lookup(&[4, 8], Side::Tgt).unwrap();
        assert_eq!(rows[0].data(), p.get(Param::TgtEmbed).row(4));
        let full = RegConfig {
            dropout: Some(Retention { word: 1.0, other: 1.0 }),
            ..RegConfig::none()
        };
        let m = full.mask_set(1).example_masks(&DIMS, 0, 0).unwrap();
        let rows = Pass::new(&p, &m).embed_lookup(&[4, 8], Side::Src).unwrap();
        assert_eq!(rows[1].data(), p.get(Param::SrcEmbed).row(8));
        assert!(matches!(
            Pass::new(&p, &identity).embed_lookup(&[9], Side::Src),
            Err(Error::Vocab { token: 9, vocab_size: 9 })
        ));
    }

    #[test]
    fn word_dropout_is_unbiased() {
        let p = params(7);
        let reg = RegConfig {
            dropout: Some(Retention { word: 0.5, other: 1.0 }),
            ..RegConfig::none()
        };
        let maskset = reg.mask_set(3);
        let draws = 20_000;
        let row = p.get(Param::SrcEmbed).row(5).to_vec();
        let mut sum = vec![0.0; DIMS.embed_dim];
        let mut sum_sq = vec![0.0; DIMS.embed_dim];
        for ex in 0..draws {
            let masks = maskset.example_masks(&DIMS, ex, 0).unwrap();
            let x = Pass::new(&p, &masks).embed_lookup(&[5], Side::Src).unwrap();
            for (i, v) in x[0].data().iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
        let n = draws as f64;
        for i in 0..DIMS.embed_dim {
            let mean = sum[i] / n;
            let var = sum_sq[i] / n - mean * mean;
            let se = (var / n).sqrt();
            assert!((mean - row[i]).abs() <= 4.0 * se, "coord {i}: {mean} vs {}", row[i]);
        }
    }

    #[test]
    fn decoding_is_deterministic_and_tuneout_zero_matches_prior() {
        let mut p = params(8);
        let src = [4, 5, 6, 7, 8];
        let a = greedy_decode(&p, &src, 10).unwrap();
        assert_eq!(a, greedy_decode(&p, &src, 10).unwrap());
        assert!(a.len() <= 10);
        p.snapshot_prior();
        p.start_tuneout().unwrap();
        assert_eq!(greedy_decode(&p, &src, 10).unwrap(), a);
    }

    #[test]
    fn tuneout_forward_equals_plain_forward_with_summed_weights() {
        let mut p = params(9);
        p.snapshot_prior();
        p.start_tuneout().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for d in p.delta_mut().unwrap() {
            d.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.3..0.3));
        }
        let identity = ExampleMasks::identity();
        let summed = p.effective_tensors();
        let tuned = Pass::new(&p, &identity);
        let plain = Pass::plain(DIMS, &summed, &identity);
        let (src, tgt) = ([4, 6, 8, 5], [7, 7, 4]);
        let a = tuned.decode_train(&tuned.encode(&src).unwrap(), &tgt).unwrap();
        let b = plain.decode_train(&plain.encode(&src).unwrap(), &tgt).unwrap();
        assert!((a.loss - b.loss).abs() <= 1e-12);
        for (x, y) in a.dlogits.iter().flatten().zip(b.dlogits.iter().flatten()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_position_target() {
        let p = params(11);
        let identity = ExampleMasks::identity();
        let pass = Pass::new(&p, &identity);
        let enc = pass.encode(&[4, 5]).unwrap();
        let dec = pass.decode_train(&enc, &[]).unwrap();
        assert_eq!(dec.dlogits.len(), 1);
        let mut logits = vec![0.0; DIMS.vocab_size];
        let mut h = enc.final_hidden.clone();
        let step = pass.gru_forward(DECODER, BOS, pass.embed(Side::Tgt, BOS), &h);
        h = step.h;
        let mut scratch = Vec::new();
        logits.copy_from_slice(&pass.logits(&h, &mut scratch));
        let (loss, _) = crate::tensor::softmax_cross_entropy(&Tensor::column(&logits), EOS).unwrap();
        assert!((dec.loss - loss).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_is_mean_of_examples() {
        let p = params(12);
        let data = batch();
        let reg = RegConfig::none();
        let masks = reg.mask_set(0);
        let ex: Vec<TrainingExample<'_>> = data
            .iter()
            .map(|(id, s, t)| TrainingExample { id: *id, src: s, tgt: t })
            .collect();
        let joint = batch_loss(&p, &reg, &masks, &ex, 0).unwrap();
        let each: f64 = ex.iter().map(|e| batch_loss(&p, &reg, &masks, &[*e], 0).unwrap()).sum();
        assert!((joint - each / 2.0).abs() < 1e-12);
    }
}
