//! Named parameter tensors of the encoder-decoder, with the optional frozen
//! prior snapshot and the tuneout difference tensors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Every parameter tensor of the model, in canonical (checkpoint) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(usize)]
pub enum Param {
    SrcEmbed,
    TgtEmbed,
    EncWz,
    EncWr,
    EncWh,
    EncUz,
    EncUr,
    EncUh,
    EncBz,
    EncBr,
    EncBh,
    DecWz,
    DecWr,
    DecWh,
    DecUz,
    DecUr,
    DecUh,
    DecBz,
    DecBr,
    DecBh,
    OutW,
    OutB,
}

pub const PARAM_COUNT: usize = 22;

impl Param {
    pub const ALL: [Param; PARAM_COUNT] = [
        Param::SrcEmbed,
        Param::TgtEmbed,
        Param::EncWz,
        Param::EncWr,
        Param::EncWh,
        Param::EncUz,
        Param::EncUr,
        Param::EncUh,
        Param::EncBz,
        Param::EncBr,
        Param::EncBh,
        Param::DecWz,
        Param::DecWr,
        Param::DecWh,
        Param::DecUz,
        Param::DecUr,
        Param::DecUh,
        Param::DecBz,
        Param::DecBr,
        Param::DecBh,
        Param::OutW,
        Param::OutB,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::SrcEmbed => "E_src",
            Param::TgtEmbed => "E_tgt",
            Param::EncWz => "enc.W_z",
            Param::EncWr => "enc.W_r",
            Param::EncWh => "enc.W_h",
            Param::EncUz => "enc.U_z",
            Param::EncUr => "enc.U_r",
            Param::EncUh => "enc.U_h",
            Param::EncBz => "enc.b_z",
            Param::EncBr => "enc.b_r",
            Param::EncBh => "enc.b_h",
            Param::DecWz => "dec.W_z",
            Param::DecWr => "dec.W_r",
            Param::DecWh => "dec.W_h",
            Param::DecUz => "dec.U_z",
            Param::DecUr => "dec.U_r",
            Param::DecUh => "dec.U_h",
            Param::DecBz => "dec.b_z",
            Param::DecBr => "dec.b_r",
            Param::DecBh => "dec.b_h",
            Param::OutW => "W_out",
            Param::OutB => "b_out",
        }
    }

    pub fn from_name(name: &str) -> Option<Param> {
        Param::ALL.iter().copied().find(|p| p.name() == name)
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            Param::EncBz
                | Param::EncBr
                | Param::EncBh
                | Param::DecBz
                | Param::DecBr
                | Param::DecBh
                | Param::OutB
        )
    }

    /// Embedding tables take one-hot word inputs; their masks act on word types.
    pub fn is_word_level(self) -> bool {
        matches!(self, Param::SrcEmbed | Param::TgtEmbed)
    }

    pub fn shape(self, dims: &ModelDims) -> (usize, usize) {
        let (v, e, h) = (dims.vocab_size, dims.embed_dim, dims.hidden_dim);
        match self {
            Param::SrcEmbed | Param::TgtEmbed => (v, e),
            Param::EncWz | Param::EncWr | Param::EncWh | Param::DecWz | Param::DecWr | Param::DecWh => (h, e),
            Param::EncUz | Param::EncUr | Param::EncUh | Param::DecUz | Param::DecUr | Param::DecUh => (h, h),
            Param::EncBz | Param::EncBr | Param::EncBh | Param::DecBz | Param::DecBr | Param::DecBh => (h, 1),
            Param::OutW => (v, h),
            Param::OutB => (v, 1),
        }
    }

    /// Dimension of the input a mask for this matrix acts on.
    pub fn input_dim(self, dims: &ModelDims) -> usize {
        if self.is_word_level() {
            dims.vocab_size
        } else {
            self.shape(dims).1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

/// One tensor per [`Param`], in canonical order.
pub type TensorSet = Vec<Tensor>;

pub fn zeros_like(set: &[Tensor]) -> TensorSet {
    set.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBundle {
    dims: ModelDims,
    live: TensorSet,
    prior: Option<TensorSet>,
    delta: Option<TensorSet>,
}

impl ParamBundle {
    /// Uniform initialization in `±1/sqrt(fan_in)` for matrices, `±0.1` for
    /// embeddings, zero biases.
    pub fn init<R: Rng>(dims: ModelDims, rng: &mut R) -> Self {
        let live = Param::ALL
            .iter()
            .map(|&p| {
                let (rows, cols) = p.shape(&dims);
                let mut t = Tensor::zeros(rows, cols);
                if !p.is_bias() {
                    let scale = if p.is_word_level() { 0.1 } else { 1.0 / (cols as f64).sqrt() };
                    t.data_mut()
                        .iter_mut()
                        .for_each(|x| *x = rng.gen_range(-scale..scale));
                }
                t
            })
            .collect();
        ParamBundle {
            dims,
            live,
            prior: None,
            delta: None,
        }
    }

    pub fn zeros(dims: ModelDims) -> Self {
        let live = Param::ALL
            .iter()
            .map(|&p| {
                let (r, c) = p.shape(&dims);
                Tensor::zeros(r, c)
            })
            .collect();
        ParamBundle {
            dims,
            live,
            prior: None,
            delta: None,
        }
    }

    pub fn from_parts(
        dims: ModelDims,
        live: TensorSet,
        prior: Option<TensorSet>,
        delta: Option<TensorSet>,
    ) -> Result<Self> {
        if delta.is_some() && prior.is_none() {
            return Err(Error::Config("difference tensors require a prior snapshot".into()));
        }
        let check = |set: &TensorSet, what: &str| -> Result<()> {
            if set.len() != PARAM_COUNT {
                return Err(Error::Config(format!(
                    "{what} set holds {} tensors, expected {PARAM_COUNT}",
                    set.len()
                )));
            }
            for (&p, t) in Param::ALL.iter().zip(set) {
                if t.shape() != p.shape(&dims) {
                    return Err(Error::Dimension {
                        op: "param bundle",
                        left: p.shape(&dims),
                        right: t.shape(),
                    });
                }
            }
            Ok(())
        };
        check(&live, "live")?;
        if let Some(p) = &prior {
            check(p, "prior")?;
        }
        if let Some(d) = &delta {
            check(d, "delta")?;
        }
        Ok(ParamBundle {
            dims,
            live,
            prior,
            delta,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn live(&self) -> &[Tensor] {
        &self.live
    }

    pub fn live_mut(&mut self) -> &mut [Tensor] {
        &mut self.live
    }

    pub fn get(&self, p: Param) -> &Tensor {
        &self.live[p.index()]
    }

    pub fn get_mut(&mut self, p: Param) -> &mut Tensor {
        &mut self.live[p.index()]
    }

    pub fn prior(&self) -> Option<&[Tensor]> {
        self.prior.as_deref()
    }

    pub fn delta(&self) -> Option<&[Tensor]> {
        self.delta.as_deref()
    }

    pub fn delta_mut(&mut self) -> Option<&mut [Tensor]> {
        self.delta.as_deref_mut()
    }

    pub fn is_tuneout(&self) -> bool {
        self.delta.is_some()
    }

    /// Freezes a copy of the live tensors as the prior.
    pub fn snapshot_prior(&mut self) {
        self.prior = Some(self.live.clone());
    }

    /// Switches to the prior-plus-difference parametrization with zero differences.
    pub fn start_tuneout(&mut self) -> Result<()> {
        let prior = self
            .prior
            .as_ref()
            .ok_or_else(|| Error::Config("tuneout requires a prior snapshot".into()))?;
        self.delta = Some(zeros_like(prior));
        Ok(())
    }

    /// The tensors an optimizer updates: the differences in tuneout mode, the
    /// live tensors otherwise.
    pub fn trainable(&self) -> &[Tensor] {
        self.delta.as_deref().unwrap_or(&self.live)
    }

    pub fn trainable_mut(&mut self) -> &mut [Tensor] {
        match &mut self.delta {
            Some(d) => d,
            None => &mut self.live,
        }
    }

    /// `prior + delta` in tuneout mode, else a copy of the live tensors.
    pub fn effective_tensors(&self) -> TensorSet {
        match (&self.prior, &self.delta) {
            (Some(prior), Some(delta)) => prior
                .iter()
                .zip(delta)
                .map(|(p, d)| {
                    let mut t = p.clone();
                    t.data_mut().iter_mut().zip(d.data()).for_each(|(x, y)| *x += y);
                    t
                })
                .collect(),
            _ => self.live.clone(),
        }
    }

    /// Writes `prior + delta` into the live tensors.
    pub fn materialize(&mut self) {
        if self.delta.is_some() {
            self.live = self.effective_tensors();
        }
    }

    pub fn into_parts(self) -> (ModelDims, TensorSet, Option<TensorSet>, Option<TensorSet>) {
        (self.dims, self.live, self.prior, self.delta)
    }

    pub fn ensure_finite(&self) -> Result<()> {
        let sets = std::iter::once(("live", &self.live))
            .chain(self.prior.iter().map(|p| ("prior", p)))
            .chain(self.delta.iter().map(|d| ("delta", d)));
        for (what, set) in sets {
            for (p, t) in Param::ALL.iter().zip(set) {
                t.ensure_finite(&format!("{what}.{}", p.name()))?;
            }
        }
        Ok(())
    }

    pub fn scalar_count(&self) -> usize {
        self.trainable().iter().map(Tensor::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DIMS: ModelDims = ModelDims {
        vocab_size: 9,
        embed_dim: 3,
        hidden_dim: 4,
    };

    #[test]
    fn names_are_unique_and_round_trip() {
        let mut names: Vec<_> = Param::ALL.iter().map(|p| p.name()).collect();
        for (i, p) in Param::ALL.iter().enumerate() {
            assert_eq!(p.index(), i);
            assert_eq!(Param::from_name(p.name()), Some(*p));
        }
        names.sort();
        names.dedup();
        assert_eq!(names.len(), PARAM_COUNT);
    }

    #[test]
    fn tuneout_starts_from_zero_differences() {
        let mut b = ParamBundle::init(DIMS, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(b.start_tuneout().is_err());
        b.snapshot_prior();
        b.start_tuneout().unwrap();
        assert!(b.delta().unwrap().iter().all(|t| t.max_abs() == 0.0));
        assert_eq!(b.effective_tensors(), b.prior().unwrap().to_vec());
    }

    #[test]
    fn from_parts_rejects_bad_shapes() {
        let b = ParamBundle::zeros(DIMS);
        let (dims, mut live, _, _) = b.into_parts();
        live[3] = Tensor::zeros(1, 1);
        assert!(ParamBundle::from_parts(dims, live, None, None).is_err());
    }
}
