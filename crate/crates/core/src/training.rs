//! Mini-batched training, early stopping and the fine-tuning protocol.
//!
//! Fine-tuning continues from a base checkpoint with a fresh optimizer, a
//! learning rate four times smaller and validations four times more
//! frequent than the base run. The base tensors are frozen as the prior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, TrainingMeta};
use crate::data::{make_batches, Corpus, Vocab};
use crate::error::{Error, Result};
use crate::evaluation::bleu;
use crate::model::{batch_loss_and_grad, ModelConfig, TrainingExample, Translator};
use crate::optimizer::{OptimizerKind, OptimizerState, DEFAULT_CLIP_NORM, DEFAULT_LEARNING_RATE};
use crate::params::{zeros_like, ParamBundle};
use crate::regularization::RegConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Scratch,
    Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    EarlyStop,
    FixedEpochs(usize),
}

impl Strategy {
    /// Parses `early_stop` or `epochs:<k>`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "early_stop" {
            return Ok(Strategy::EarlyStop);
        }
        s.strip_prefix("epochs:")
            .and_then(|k| k.parse().ok())
            .map(Strategy::FixedEpochs)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}` (expected early_stop or epochs:<k>)")))
    }

    pub fn name(&self) -> String {
        match self {
            Strategy::EarlyStop => "early_stop".into(),
            Strategy::FixedEpochs(k) => format!("epochs:{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: Option<f64>,
    /// Updates between validations.
    pub validation_frequency: usize,
    /// Validations without improvement before stopping.
    pub patience: usize,
    /// Return the best-validating parameters and stop on patience; otherwise
    /// run all epochs and return the final parameters.
    pub early_stopping: bool,
    pub seed: u64,
    pub reg: RegConfig,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            max_epochs: 20,
            learning_rate: DEFAULT_LEARNING_RATE,
            optimizer: OptimizerKind::Adam,
            clip_norm: Some(DEFAULT_CLIP_NORM),
            validation_frequency: 500,
            patience: 10,
            early_stopping: true,
            seed: 1,
            reg: RegConfig::none(),
            mode: TrainMode::Scratch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.validation_frequency == 0 {
            return Err(Error::Config("validation_frequency must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        self.reg.validate()
    }

    fn optimizer(&self) -> OptimizerState {
        let state = match self.optimizer {
            OptimizerKind::Adam => OptimizerState::adam(self.learning_rate),
            OptimizerKind::Sgd => OptimizerState::sgd(self.learning_rate),
        };
        state.with_clip(self.clip_norm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationPoint {
    pub updates: u64,
    pub epoch: usize,
    pub bleu: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<ValidationPoint>,
    /// Mean mini-batch loss over the last epoch run.
    pub final_epoch_loss: f64,
    pub updates: u64,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn peak_validation(&self) -> Option<f64> {
        self.history.iter().map(|p| p.bleu).fold(None, |m, b| Some(m.map_or(b, |m: f64| m.max(b))))
    }

    pub fn final_validation(&self) -> Option<f64> {
        self.history.last().map(|p| p.bleu)
    }
}

/// `updates,epoch,valid_bleu` rows, one per validation.
pub fn history_csv(history: &[ValidationPoint]) -> String {
    let mut out = String::from("updates,epoch,valid_bleu\n");
    for p in history {
        out.push_str(&format!("{},{},{:.4}\n", p.updates, p.epoch, p.bleu));
    }
    out
}

/// Greedy-decode corpus BLEU of `params` on `corpus`.
pub fn corpus_bleu(params: &ParamBundle, corpus: &Corpus, max_len: usize) -> Result<f64> {
    let translator = Translator::new(params, max_len);
    let hyps = translator.translate_all(corpus.sources())?;
    let refs: Vec<&[usize]> = corpus.targets().collect();
    Ok(bleu(&hyps, &refs)?.bleu)
}

/// Trains a model from scratch with BLEU-based validation on `valid`.
pub fn train(
    config: &TrainConfig,
    model: ModelConfig,
    vocab: &Vocab,
    train_corpus: &Corpus,
    valid: &Corpus,
) -> Result<TrainOutcome> {
    model.validate()?;
    if vocab.len() != model.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary holds {} tokens but the model expects {}",
            vocab.len(),
            model.vocab_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = ParamBundle::init(model.dims(), &mut rng);
    let max_len = model.max_decode_len;
    let mut validator = |p: &ParamBundle| corpus_bleu(p, valid, max_len);
    let validator: Option<&mut dyn FnMut(&ParamBundle) -> Result<f64>> =
        if valid.is_empty() { None } else { Some(&mut validator) };
    run(config, model, vocab.clone(), params, train_corpus, validator)
}

/// Like [`train`]/[`finetune`] but with a caller-supplied validation metric
/// (higher is better) and starting parameters.
pub fn train_with_validator(
    config: &TrainConfig,
    model: ModelConfig,
    vocab: &Vocab,
    params: ParamBundle,
    train_corpus: &Corpus,
    validator: &mut dyn FnMut(&ParamBundle) -> Result<f64>,
) -> Result<TrainOutcome> {
    run(config, model, vocab.clone(), params, train_corpus, Some(validator))
}

fn run(
    config: &TrainConfig,
    model: ModelConfig,
    vocab: Vocab,
    mut params: ParamBundle,
    train_corpus: &Corpus,
    mut validator: Option<&mut dyn FnMut(&ParamBundle) -> Result<f64>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_corpus.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    if config.early_stopping && validator.is_none() {
        return Err(Error::Config("early stopping needs a validation corpus".into()));
    }
    let longest = train_corpus.max_target_len();
    if model.max_decode_len < longest + 2 {
        return Err(Error::Config(format!(
            "max_decode_len {} is below longest training target {longest} + 2",
            model.max_decode_len
        )));
    }
    let reg_mode = config.reg.mode();
    if reg_mode == crate::regularization::RegMode::Tuneout && !params.is_tuneout() {
        return Err(Error::Config("tuneout training needs prior and difference tensors".into()));
    }
    if config.reg.lambda_map_l2 > 0.0 && params.prior().is_none() {
        return Err(Error::Config("MAP-L2 needs a prior snapshot".into()));
    }

    let masks = config.reg.mask_set(config.seed);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0BA7_C0DE);
    let mut optimizer = config.optimizer();
    let mut grads = zeros_like(params.trainable());
    let mut history = Vec::new();
    let mut best: Option<(f64, ParamBundle, u64)> = None;
    let mut since_best = 0usize;
    let mut updates = 0u64;
    let mut stopped_early = false;
    let mut final_epoch_loss = f64::NAN;

    let has_validator = validator.is_some();
    let mut validate = |params: &ParamBundle,
                        updates: u64,
                        epoch: usize,
                        history: &mut Vec<ValidationPoint>,
                        best: &mut Option<(f64, ParamBundle, u64)>,
                        since_best: &mut usize|
     -> Result<()> {
        if let Some(v) = validator.as_mut() {
            let score = v(params)?;
            history.push(ValidationPoint { updates, epoch, bleu: score });
            // Ties keep the earlier checkpoint.
            if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
                *best = Some((score, params.clone(), updates));
                *since_best = 0;
            } else {
                *since_best += 1;
            }
        }
        Ok(())
    };

    validate(&params, 0, 0, &mut history, &mut best, &mut since_best)?;
    'epochs: for epoch in 0..config.max_epochs {
        let batches = make_batches(train_corpus, config.batch_size, &mut batch_rng);
        let mut epoch_loss = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let examples: Vec<TrainingExample<'_>> = batch
                .iter()
                .map(|&i| {
                    let p = &train_corpus.pairs[i];
                    TrainingExample {
                        id: p.line,
                        src: &p.src,
                        tgt: &p.tgt,
                    }
                })
                .collect();
            grads.iter_mut().for_each(|g| g.fill(0.0));
            let loss = batch_loss_and_grad(&params, &config.reg, &masks, &examples, epoch as u64, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at update {updates}")));
            }
            epoch_loss += loss;
            optimizer.update(params.trainable_mut(), &mut grads)?;
            updates += 1;
            if has_validator && updates % config.validation_frequency as u64 == 0 {
                validate(&params, updates, epoch, &mut history, &mut best, &mut since_best)?;
                if config.early_stopping && since_best >= config.patience {
                    stopped_early = true;
                    final_epoch_loss = epoch_loss / (bi + 1) as f64;
                    break 'epochs;
                }
            }
        }
        final_epoch_loss = epoch_loss / batches.len() as f64;
        params.ensure_finite()?;
    }
    if has_validator && history.last().map(|p| p.updates) != Some(updates) {
        let epoch = config.max_epochs.saturating_sub(1);
        validate(&params, updates, epoch, &mut history, &mut best, &mut since_best)?;
    }

    let (mut params, best_bleu, returned_updates) = match (config.early_stopping, best) {
        (true, Some((score, p, at))) => (p, Some(score), at),
        (_, best) => (params, best.map(|b| b.0), updates),
    };
    params.materialize();
    let meta = TrainingMeta {
        updates: returned_updates,
        best_valid_bleu: best_bleu,
        learning_rate: config.learning_rate,
        validation_frequency: config.validation_frequency as u64,
        mode: config.mode,
    };
    let checkpoint = Checkpoint {
        model,
        vocab,
        params,
        reg: config.reg.clone(),
        optimizer,
        meta,
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        final_epoch_loss,
        updates,
        stopped_early,
    })
}

/// Knobs of a fine-tuning run besides the regularizer and strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOptions {
    pub batch_size: usize,
    /// Epoch cap for the early-stopping strategy.
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Overrides the base learning rate / 4 rule.
    pub learning_rate: Option<f64>,
    /// Overrides the base validation frequency / 4 rule.
    pub validation_frequency: Option<usize>,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        FinetuneOptions {
            batch_size: 16,
            max_epochs: 30,
            patience: 10,
            seed: 1,
            learning_rate: None,
            validation_frequency: None,
        }
    }
}

/// The train config a fine-tuning run uses under the base-÷4 rule.
pub fn finetune_config(base: &Checkpoint, reg: &RegConfig, strategy: Strategy, options: &FinetuneOptions) -> TrainConfig {
    let (early_stopping, max_epochs) = match strategy {
        Strategy::EarlyStop => (true, options.max_epochs),
        Strategy::FixedEpochs(k) => (false, k),
    };
    TrainConfig {
        batch_size: options.batch_size,
        max_epochs,
        learning_rate: options.learning_rate.unwrap_or(base.meta.learning_rate / 4.0),
        optimizer: base.optimizer.kind,
        clip_norm: base.optimizer.clip_norm,
        validation_frequency: options
            .validation_frequency
            .unwrap_or_else(|| (base.meta.validation_frequency as usize / 4).max(1)),
        patience: options.patience,
        early_stopping,
        seed: options.seed,
        reg: reg.clone(),
        mode: TrainMode::Finetune,
    }
}

/// Continues training `base` on in-domain data under `reg`.
///
/// The base tensors become the frozen prior; tuneout starts from zero
/// differences; the optimizer state starts fresh.
pub fn finetune(
    base: &Checkpoint,
    vocab: &Vocab,
    in_domain: &Corpus,
    valid: &Corpus,
    reg: &RegConfig,
    strategy: Strategy,
    options: &FinetuneOptions,
) -> Result<TrainOutcome> {
    let config = finetune_config(base, reg, strategy, options);
    let max_len = base.model.max_decode_len;
    let mut validator = |p: &ParamBundle| corpus_bleu(p, valid, max_len);
    let validator: Option<&mut dyn FnMut(&ParamBundle) -> Result<f64>> =
        if valid.is_empty() { None } else { Some(&mut validator) };
    finetune_inner(base, vocab, in_domain, &config, validator)
}

pub fn finetune_with_validator(
    base: &Checkpoint,
    vocab: &Vocab,
    in_domain: &Corpus,
    config: &TrainConfig,
    validator: &mut dyn FnMut(&ParamBundle) -> Result<f64>,
) -> Result<TrainOutcome> {
    finetune_inner(base, vocab, in_domain, config, Some(validator))
}

fn finetune_inner(
    base: &Checkpoint,
    vocab: &Vocab,
    in_domain: &Corpus,
    config: &TrainConfig,
    validator: Option<&mut dyn FnMut(&ParamBundle) -> Result<f64>>,
) -> Result<TrainOutcome> {
    config.reg.validate()?;
    if config.early_stopping && validator.is_none() {
        return Err(Error::Config("early stopping needs an in-domain validation corpus".into()));
    }
    if vocab != &base.vocab {
        return Err(Error::Config("in-domain vocabulary differs from the base checkpoint".into()));
    }
    let mut params = crate::regularization::effective_params(&base.params, crate::regularization::RegMode::Tuneout);
    params.snapshot_prior();
    if config.reg.tuneout.is_some() {
        params.start_tuneout()?;
    }
    run(config, base.model, base.vocab.clone(), params, in_domain, validator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DomainSpec, Substitution};

    fn tiny_spec() -> DomainSpec {
        DomainSpec {
            vocab_size: 8,
            min_len: 2,
            max_len: 4,
            ..DomainSpec::default()
        }
    }

    fn tiny_model(spec: &DomainSpec) -> ModelConfig {
        ModelConfig {
            vocab_size: spec.vocab().len(),
            embed_dim: 8,
            hidden_dim: 16,
            max_decode_len: 8,
        }
    }

    #[test]
    fn fixed_epoch_update_count() {
        let spec = tiny_spec();
        let corpus = generate(&spec, 37, 1).unwrap();
        let config = TrainConfig {
            max_epochs: 1,
            early_stopping: false,
            ..TrainConfig::default()
        };
        let out = train(&config, tiny_model(&spec), &spec.vocab(), &corpus, &Corpus::default()).unwrap();
        assert_eq!(out.updates, 3);
        assert!(out.history.is_empty());
    }

    #[test]
    fn constant_metric_with_patience_one_stops_at_second_validation() {
        let spec = tiny_spec();
        let corpus = generate(&spec, 64, 1).unwrap();
        let config = TrainConfig {
            max_epochs: 10,
            validation_frequency: 2,
            patience: 1,
            ..TrainConfig::default()
        };
        let params = ParamBundle::init(tiny_model(&spec).dims(), &mut ChaCha8Rng::seed_from_u64(0));
        let mut constant = |_: &ParamBundle| Ok(5.0);
        let out = train_with_validator(&config, tiny_model(&spec), &spec.vocab(), params.clone(), &corpus, &mut constant).unwrap();
        assert_eq!(out.history.len(), 2);
        assert!(out.stopped_early);
        assert_eq!(out.updates, 2);
        // Ties keep the earlier (initial) parameters.
        assert_eq!(out.checkpoint.params.live(), params.live());
    }

    #[test]
    fn empty_corpus_and_missing_validation() {
        let spec = tiny_spec();
        let config = TrainConfig::default();
        let err = train(&config, tiny_model(&spec), &spec.vocab(), &Corpus::default(), &Corpus::default());
        assert!(matches!(err, Err(Error::Config(_)) | Err(Error::Data(_))));
        let corpus = generate(&spec, 5, 1).unwrap();
        assert!(matches!(
            train(&config, tiny_model(&spec), &spec.vocab(), &corpus, &Corpus::default()),
            Err(Error::Config(_))
        ));
        let fixed = TrainConfig {
            early_stopping: false,
            ..config
        };
        assert!(matches!(
            train(&fixed, tiny_model(&spec), &spec.vocab(), &Corpus::default(), &Corpus::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn copy_task_learns() {
        let spec = DomainSpec {
            substitution: Substitution::Identity,
            reverse: false,
            ..tiny_spec()
        };
        let corpus = generate(&spec, 10, 3).unwrap();
        let config = TrainConfig {
            max_epochs: 300,
            early_stopping: false,
            learning_rate: 0.01,
            seed: 4,
            ..TrainConfig::default()
        };
        let out = train(&config, tiny_model(&spec), &spec.vocab(), &corpus, &Corpus::default()).unwrap();
        assert!(out.final_epoch_loss < 0.1, "{}", out.final_epoch_loss);
    }
}
