//! Desk-scale experiment harness: the strategy comparison table, the
//! in-domain data-size sweep with its logarithmic fit, and the
//! overfitting probe on a small in-domain subset.
//!
//! Every number is a pure function of an [`ExperimentConfig`] and its
//! seeds. One out-of-domain base model is trained per configuration and
//! shared by all fine-tuning runs; seeds vary the in-domain-only model,
//! the fine-tuning shuffle and masks, and the subsamples.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::KeyValues;
use crate::data::{generate, read_corpus, subsample, write_corpus, Corpus, DomainId, DomainSpec, Substitution, Vocab};
use crate::error::{Error, Result};
use crate::evaluation::{bleu, bootstrap_significance, SignificanceResult, DEFAULT_RESAMPLES};
use crate::model::{ModelConfig, Translator};
use crate::optimizer::OptimizerKind;
use crate::regularization::{RegConfig, Retention};
use crate::training::{finetune, train, FinetuneOptions, Strategy, TrainConfig, TrainOutcome};

/// Everything an experiment run depends on besides its seeds' outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Out-of-domain generator; the in-domain one is the same `DomainSpec` with
    /// domain B.
    pub domain: DomainSpec,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_decode_len: usize,
    pub out_domain_size: usize,
    pub in_domain_size: usize,
    pub out_valid_size: usize,
    pub in_valid_size: usize,
    pub test_size: usize,
    pub data_seed: u64,
    /// Out-of-domain base run; also used for the in-domain-only model.
    pub base: TrainConfig,
    pub finetune: FinetuneOptions,
    pub lambda: f64,
    pub dropout: Retention,
    pub tuneout: Retention,
    pub seeds: Vec<u64>,
    pub sizes: Vec<usize>,
    pub resamples: usize,
    /// Epoch counts of the short and long fixed-epoch curve strategies.
    pub short_epochs: usize,
    pub long_epochs: usize,
    pub overfit_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            domain: DomainSpec::default(),
            embed_dim: 32,
            hidden_dim: 64,
            max_decode_len: 32,
            out_domain_size: 20_000,
            in_domain_size: 2_000,
            out_valid_size: 500,
            in_valid_size: 500,
            test_size: 1_000,
            data_seed: 2024,
            base: TrainConfig {
                max_epochs: 40,
                validation_frequency: 1_250,
                patience: 10,
                ..TrainConfig::default()
            },
            finetune: FinetuneOptions {
                max_epochs: 200,
                ..FinetuneOptions::default()
            },
            lambda: RegConfig::DEFAULT_LAMBDA,
            dropout: Retention::DROPOUT,
            tuneout: Retention::TUNEOUT,
            seeds: vec![1, 2, 3, 4, 5],
            sizes: vec![10, 30, 100, 300, 1_000, 2_000],
            resamples: DEFAULT_RESAMPLES,
            short_epochs: 1,
            long_epochs: 5,
            overfit_size: 500,
        }
    }
}

/// Keys accepted by [`ExperimentConfig::apply`].
pub const CONFIG_KEYS: &[&str] = &[
    "domain.vocab_size",
    "domain.min_len",
    "domain.max_len",
    "domain.shared_map_fraction",
    "domain.substitution",
    "domain.reverse",
    "domain.zipf",
    "domain.map_seed",
    "model.embed_dim",
    "model.hidden_dim",
    "model.max_decode_len",
    "data.out_domain_size",
    "data.in_domain_size",
    "data.out_valid_size",
    "data.in_valid_size",
    "data.test_size",
    "data.seed",
    "train.batch_size",
    "train.max_epochs",
    "train.learning_rate",
    "train.optimizer",
    "train.clip_norm",
    "train.validation_frequency",
    "train.patience",
    "train.early_stopping",
    "train.seed",
    "finetune.batch_size",
    "finetune.max_epochs",
    "finetune.patience",
    "finetune.learning_rate",
    "finetune.validation_frequency",
    "reg.lambda",
    "reg.dropout_word",
    "reg.dropout_other",
    "reg.tuneout_word",
    "reg.tuneout_other",
    "experiment.seeds",
    "experiment.sizes",
    "experiment.resamples",
    "experiment.short_epochs",
    "experiment.long_epochs",
    "experiment.overfit_size",
];

impl ExperimentConfig {
    /// A reduced task (24 content tokens, sentences of 3 to 6) with small
    /// corpora and two seeds; a table or curve on it takes about a minute.
    pub fn quick() -> Self {
        let mut c = ExperimentConfig::default();
        c.domain.vocab_size = 24;
        c.domain.max_len = 6;
        c.out_domain_size = 4_000;
        c.in_domain_size = 400;
        c.out_valid_size = 200;
        c.in_valid_size = 200;
        c.test_size = 300;
        c.base.max_epochs = 20;
        c.base.validation_frequency = 250;
        c.finetune.max_epochs = 60;
        c.seeds = vec![1, 2];
        c.sizes = vec![10, 30, 100, 400];
        c.overfit_size = 100;
        c
    }

    /// Overrides fields from `kv`; unknown keys are a config error.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.reject_unknown(CONFIG_KEYS)?;
        let d = &mut self.domain;
        kv.set("domain.vocab_size", &mut d.vocab_size)?;
        kv.set("domain.min_len", &mut d.min_len)?;
        kv.set("domain.max_len", &mut d.max_len)?;
        kv.set("domain.shared_map_fraction", &mut d.shared_map_fraction)?;
        kv.set("domain.reverse", &mut d.reverse)?;
        kv.set_optional("domain.zipf", &mut d.zipf)?;
        kv.set("domain.map_seed", &mut d.map_seed)?;
        if let Some(s) = kv.get("domain.substitution") {
            d.substitution = match s {
                "random" => Substitution::Random,
                "identity" => Substitution::Identity,
                other => return Err(Error::Config(format!("unknown substitution `{other}`"))),
            };
        }
        kv.set("model.embed_dim", &mut self.embed_dim)?;
        kv.set("model.hidden_dim", &mut self.hidden_dim)?;
        kv.set("model.max_decode_len", &mut self.max_decode_len)?;
        kv.set("data.out_domain_size", &mut self.out_domain_size)?;
        kv.set("data.in_domain_size", &mut self.in_domain_size)?;
        kv.set("data.out_valid_size", &mut self.out_valid_size)?;
        kv.set("data.in_valid_size", &mut self.in_valid_size)?;
        kv.set("data.test_size", &mut self.test_size)?;
        kv.set("data.seed", &mut self.data_seed)?;
        apply_train(kv, &mut self.base)?;
        let f = &mut self.finetune;
        kv.set("finetune.batch_size", &mut f.batch_size)?;
        kv.set("finetune.max_epochs", &mut f.max_epochs)?;
        kv.set("finetune.patience", &mut f.patience)?;
        kv.set_optional("finetune.learning_rate", &mut f.learning_rate)?;
        kv.set_optional("finetune.validation_frequency", &mut f.validation_frequency)?;
        kv.set("reg.lambda", &mut self.lambda)?;
        kv.set("reg.dropout_word", &mut self.dropout.word)?;
        kv.set("reg.dropout_other", &mut self.dropout.other)?;
        kv.set("reg.tuneout_word", &mut self.tuneout.word)?;
        kv.set("reg.tuneout_other", &mut self.tuneout.other)?;
        kv.set_list("experiment.seeds", &mut self.seeds)?;
        kv.set_list("experiment.sizes", &mut self.sizes)?;
        kv.set("experiment.resamples", &mut self.resamples)?;
        kv.set("experiment.short_epochs", &mut self.short_epochs)?;
        kv.set("experiment.long_epochs", &mut self.long_epochs)?;
        kv.set("experiment.overfit_size", &mut self.overfit_size)?;
        self.validate()
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        config.apply(kv)?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.sizes.is_empty() || self.sizes.windows(2).any(|w| w[0] >= w[1]) || self.sizes[0] == 0 {
            return Err(Error::Config("curve sizes must be positive and strictly ascending".into()));
        }
        if self.resamples == 0 {
            return Err(Error::Config("resamples must be at least 1".into()));
        }
        for (name, n) in [
            ("out_domain_size", self.out_domain_size),
            ("in_domain_size", self.in_domain_size),
            ("in_valid_size", self.in_valid_size),
            ("test_size", self.test_size),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("data.{name} must be at least 1")));
            }
        }
        self.dropout.validate()?;
        self.tuneout.validate()?;
        self.reg(RegKind::DropoutMapL2).validate()?;
        self.model()?.validate()?;
        self.base.validate()
    }

    pub fn model(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            vocab_size: self.domain.vocab().len(),
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            max_decode_len: self.max_decode_len,
        })
    }

    /// The regularizer of `kind` with this config's λ and retentions.
    pub fn reg(&self, kind: RegKind) -> RegConfig {
        let mut reg = RegConfig::none();
        match kind {
            RegKind::None => {}
            RegKind::Dropout => reg.dropout = Some(self.dropout),
            RegKind::MapL2 => reg.lambda_map_l2 = self.lambda,
            RegKind::Tuneout => reg.tuneout = Some(self.tuneout),
            RegKind::DropoutMapL2 => {
                reg.dropout = Some(self.dropout);
                reg.lambda_map_l2 = self.lambda;
            }
        }
        reg
    }

    fn finetune_options(&self, seed: u64) -> FinetuneOptions {
        FinetuneOptions {
            seed,
            ..self.finetune.clone()
        }
    }
}

/// Applies `train.*` keys to a [`TrainConfig`].
pub fn apply_train(kv: &KeyValues, t: &mut TrainConfig) -> Result<()> {
    kv.set("train.batch_size", &mut t.batch_size)?;
    kv.set("train.max_epochs", &mut t.max_epochs)?;
    kv.set("train.learning_rate", &mut t.learning_rate)?;
    if let Some(s) = kv.get("train.optimizer") {
        t.optimizer = OptimizerKind::parse(s)?;
    }
    kv.set_optional("train.clip_norm", &mut t.clip_norm)?;
    kv.set("train.validation_frequency", &mut t.validation_frequency)?;
    kv.set("train.patience", &mut t.patience)?;
    kv.set("train.early_stopping", &mut t.early_stopping)?;
    kv.set("train.seed", &mut t.seed)?;
    Ok(())
}

/// The regularizer families compared by the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegKind {
    None,
    Dropout,
    MapL2,
    Tuneout,
    DropoutMapL2,
}

impl RegKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RegKind::None),
            "dropout" => Ok(RegKind::Dropout),
            "map_l2" => Ok(RegKind::MapL2),
            "tuneout" => Ok(RegKind::Tuneout),
            "dropout+map_l2" => Ok(RegKind::DropoutMapL2),
            other => Err(Error::Config(format!(
                "unknown regularizer `{other}` (expected dropout|map_l2|tuneout|dropout+map_l2|none)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::Dropout => "dropout",
            RegKind::MapL2 => "map_l2",
            RegKind::Tuneout => "tuneout",
            RegKind::DropoutMapL2 => "dropout+map_l2",
        }
    }
}

/// Generated corpora of one experiment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpora {
    pub vocab: Vocab,
    pub out_train: Corpus,
    pub out_valid: Corpus,
    pub in_train: Corpus,
    pub in_valid: Corpus,
    pub in_test: Corpus,
}

impl Corpora {
    pub fn generate(config: &ExperimentConfig) -> Result<Self> {
        let a = config.domain.with_domain(DomainId::A);
        let b = config.domain.with_domain(DomainId::B);
        let s = config.data_seed;
        Ok(Corpora {
            vocab: a.vocab(),
            out_train: generate(&a, config.out_domain_size, s)?,
            out_valid: generate(&a, config.out_valid_size.max(1), s.wrapping_add(1))?,
            in_train: generate(&b, config.in_domain_size, s.wrapping_add(2))?,
            in_valid: generate(&b, config.in_valid_size, s.wrapping_add(3))?,
            in_test: generate(&b, config.test_size, s.wrapping_add(4))?,
        })
    }
}

/// File stems of [`Corpora::write`]; each stem gets `.src` and `.tgt`.
pub const CORPUS_STEMS: [&str; 5] = ["out.train", "out.valid", "in.train", "in.valid", "in.test"];

pub const VOCAB_FILE: &str = "vocab.txt";

impl Corpora {
    fn parts(&self) -> [&Corpus; 5] {
        [&self.out_train, &self.out_valid, &self.in_train, &self.in_valid, &self.in_test]
    }

    /// Writes the vocabulary and every corpus as plain text under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.vocab.write(&dir.join(VOCAB_FILE))?;
        for (stem, corpus) in CORPUS_STEMS.iter().zip(self.parts()) {
            let (src, tgt) = corpus_paths(dir, stem);
            write_corpus(&self.vocab.decode_corpus(corpus), &src, &tgt)?;
        }
        Ok(())
    }

    /// Reads what [`Corpora::write`] wrote.
    pub fn read(dir: &Path) -> Result<Self> {
        let vocab = Vocab::read(&dir.join(VOCAB_FILE))?;
        let mut parts = Vec::with_capacity(CORPUS_STEMS.len());
        for stem in CORPUS_STEMS {
            let (src, tgt) = corpus_paths(dir, stem);
            parts.push(vocab.encode_corpus(&read_corpus(&src, &tgt)?));
        }
        let [out_train, out_valid, in_train, in_valid, in_test]: [Corpus; 5] =
            parts.try_into().expect("one corpus per stem");
        Ok(Corpora {
            vocab,
            out_train,
            out_valid,
            in_train,
            in_valid,
            in_test,
        })
    }
}

/// `<dir>/<stem>.src` and `<dir>/<stem>.tgt`.
pub fn corpus_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.src")), dir.join(format!("{stem}.tgt")))
}

/// Trains the out-of-domain base model.
pub fn train_base(config: &ExperimentConfig, corpora: &Corpora) -> Result<TrainOutcome> {
    train(&config.base, config.model()?, &corpora.vocab, &corpora.out_train, &corpora.out_valid)
}

/// Greedy translations of every source sentence in `corpus`.
pub fn translate_corpus(ckpt: &Checkpoint, corpus: &Corpus) -> Result<Vec<Vec<usize>>> {
    Translator::new(&ckpt.params, ckpt.model.max_decode_len).translate_all(corpus.sources())
}

fn test_bleu(ckpt: &Checkpoint, corpus: &Corpus) -> Result<(f64, Vec<Vec<usize>>)> {
    let hyps = translate_corpus(ckpt, corpus)?;
    let refs: Vec<&[usize]> = corpus.targets().collect();
    Ok((bleu(&hyps, &refs)?.bleu, hyps))
}

/// Rows of the strategy comparison, in report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableSystem {
    OutDomainOnly,
    InDomainOnly,
    Finetune,
    Dropout,
    MapL2,
    Tuneout,
    DropoutMapL2,
}

impl TableSystem {
    pub const ALL: [TableSystem; 7] = [
        TableSystem::OutDomainOnly,
        TableSystem::InDomainOnly,
        TableSystem::Finetune,
        TableSystem::Dropout,
        TableSystem::MapL2,
        TableSystem::Tuneout,
        TableSystem::DropoutMapL2,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TableSystem::OutDomainOnly => "out-domain only",
            TableSystem::InDomainOnly => "in-domain only",
            TableSystem::Finetune => "fine-tuning",
            TableSystem::Dropout => "fine-tuning + dropout",
            TableSystem::MapL2 => "fine-tuning + MAP-L2",
            TableSystem::Tuneout => "fine-tuning + tuneout",
            TableSystem::DropoutMapL2 => "fine-tuning + dropout + MAP-L2",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            TableSystem::OutDomainOnly => "out_domain_only",
            TableSystem::InDomainOnly => "in_domain_only",
            TableSystem::Finetune => "finetune",
            TableSystem::Dropout => "finetune_dropout",
            TableSystem::MapL2 => "finetune_map_l2",
            TableSystem::Tuneout => "finetune_tuneout",
            TableSystem::DropoutMapL2 => "finetune_dropout_map_l2",
        }
    }

    fn finetune_reg(self) -> Option<RegKind> {
        match self {
            TableSystem::OutDomainOnly | TableSystem::InDomainOnly => None,
            TableSystem::Finetune => Some(RegKind::None),
            TableSystem::Dropout => Some(RegKind::Dropout),
            TableSystem::MapL2 => Some(RegKind::MapL2),
            TableSystem::Tuneout => Some(RegKind::Tuneout),
            TableSystem::DropoutMapL2 => Some(RegKind::DropoutMapL2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub system: TableSystem,
    /// Test BLEU per seed, in seed order.
    pub bleu: Vec<f64>,
    /// BLEU of the test set concatenated over seeds.
    pub concatenated_bleu: f64,
    /// Against plain fine-tuning on the concatenated test sets; `None` for
    /// the fine-tuning row itself.
    pub significance: Option<SignificanceResult>,
}

impl TableRow {
    pub fn mean(&self) -> f64 {
        mean(&self.bleu)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableReport {
    pub seeds: Vec<u64>,
    pub resamples: usize,
    pub rows: Vec<TableRow>,
}

impl TableReport {
    pub fn row(&self, system: TableSystem) -> &TableRow {
        self.rows
            .iter()
            .find(|r| r.system == system)
            .expect("every system has a row")
    }

    /// Human-readable table. A dagger marks rows better than plain
    /// fine-tuning at 5% (one-sided paired bootstrap on the concatenated
    /// test sets).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "in-domain test BLEU, mean over seeds {}", seeds.join(","));
        let _ = writeln!(out, "{:<32} {:>7}  {}", "system", "BLEU", "per-seed");
        for row in &self.rows {
            let dagger = match &row.significance {
                Some(s) if s.significant_at_5pct => "\u{2020}",
                _ => " ",
            };
            let per_seed: Vec<String> = row.bleu.iter().map(|b| format!("{b:.2}")).collect();
            let _ = writeln!(
                out,
                "{:<32} {:>6.2}{dagger}  {}",
                row.system.label(),
                row.mean(),
                per_seed.join(" ")
            );
        }
        let _ = writeln!(
            out,
            "\u{2020}: better than fine-tuning at p < 0.05 (paired bootstrap, {} resamples, one-sided)",
            self.resamples
        );
        out
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "seeds={}", seeds.join(","));
        let _ = writeln!(out, "resamples={}", self.resamples);
        for row in &self.rows {
            let k = row.system.key();
            let _ = writeln!(out, "{k}.mean_bleu={:.4}", row.mean());
            let _ = writeln!(out, "{k}.concatenated_bleu={:.4}", row.concatenated_bleu);
            let per: Vec<String> = row.bleu.iter().map(|b| format!("{b:.4}")).collect();
            let _ = writeln!(out, "{k}.bleu={}", per.join(","));
            if let Some(s) = &row.significance {
                let _ = writeln!(out, "{k}.p_value={:.4}", s.p_value);
                let _ = writeln!(out, "{k}.significant={}", s.significant_at_5pct);
            }
        }
        out
    }
}

/// Evaluates every [`TableSystem`] on the in-domain test set for each seed.
pub fn run_table(config: &ExperimentConfig, corpora: &Corpora, base: &Checkpoint) -> Result<TableReport> {
    config.validate()?;
    require(&corpora.in_train, "in-domain training")?;
    require(&corpora.in_test, "in-domain test")?;
    let refs: Vec<&[usize]> = corpora.in_test.targets().collect();
    let concat_refs: Vec<&[usize]> = config.seeds.iter().flat_map(|_| refs.iter().copied()).collect();

    let mut hyps: Vec<Vec<Vec<usize>>> = Vec::new();
    let mut rows = Vec::new();
    for system in TableSystem::ALL {
        let mut per_seed = Vec::new();
        let mut concat = Vec::new();
        for &seed in &config.seeds {
            let ckpt = match (system, system.finetune_reg()) {
                (TableSystem::OutDomainOnly, _) => None,
                (TableSystem::InDomainOnly, _) => {
                    let train_config = TrainConfig {
                        seed,
                        ..config.base.clone()
                    };
                    let outcome = train(
                        &train_config,
                        config.model()?,
                        &corpora.vocab,
                        &corpora.in_train,
                        &corpora.in_valid,
                    )?;
                    Some(outcome.checkpoint)
                }
                (_, Some(kind)) => {
                    let outcome = finetune(
                        base,
                        &corpora.vocab,
                        &corpora.in_train,
                        &corpora.in_valid,
                        &config.reg(kind),
                        Strategy::EarlyStop,
                        &config.finetune_options(seed),
                    )?;
                    Some(outcome.checkpoint)
                }
                (_, None) => unreachable!("only the first two systems skip fine-tuning"),
            };
            let (score, h) = test_bleu(ckpt.as_ref().unwrap_or(base), &corpora.in_test)?;
            per_seed.push(score);
            concat.extend(h);
        }
        let concatenated_bleu = bleu(&concat, &concat_refs)?.bleu;
        hyps.push(concat);
        rows.push(TableRow {
            system,
            bleu: per_seed,
            concatenated_bleu,
            significance: None,
        });
    }
    let reference = TableSystem::ALL.iter().position(|&s| s == TableSystem::Finetune).unwrap();
    for (i, row) in rows.iter_mut().enumerate() {
        if i != reference {
            row.significance = Some(bootstrap_significance(
                &hyps[i],
                &hyps[reference],
                &concat_refs,
                config.resamples,
                config.data_seed,
            )?);
        }
    }
    Ok(TableReport {
        seeds: config.seeds.clone(),
        resamples: config.resamples,
        rows,
    })
}

fn require(corpus: &Corpus, what: &str) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Data(format!("{what} corpus is missing or empty")));
    }
    Ok(())
}

/// Strategies of the data-size sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveStrategy {
    ShortEpochs,
    LongEpochs,
    EarlyStop,
    EarlyStopRegularized,
    LongEpochsRegularized,
}

impl CurveStrategy {
    pub const ALL: [CurveStrategy; 5] = [
        CurveStrategy::ShortEpochs,
        CurveStrategy::LongEpochs,
        CurveStrategy::EarlyStop,
        CurveStrategy::EarlyStopRegularized,
        CurveStrategy::LongEpochsRegularized,
    ];

    /// CSV name, with the epoch counts of `config`.
    pub fn name(self, config: &ExperimentConfig) -> String {
        let epochs = |k: usize| if k == 1 { "1_epoch".to_string() } else { format!("{k}_epochs") };
        match self {
            CurveStrategy::ShortEpochs => epochs(config.short_epochs),
            CurveStrategy::LongEpochs => epochs(config.long_epochs),
            CurveStrategy::EarlyStop => "early_stop".into(),
            CurveStrategy::EarlyStopRegularized => "early_stop+dropout+map_l2".into(),
            CurveStrategy::LongEpochsRegularized => format!("{}+dropout+map_l2", epochs(config.long_epochs)),
        }
    }

    pub fn parse(s: &str, config: &ExperimentConfig) -> Result<Self> {
        CurveStrategy::ALL
            .into_iter()
            .find(|c| c.name(config) == s)
            .ok_or_else(|| Error::Config(format!("unknown curve strategy `{s}`")))
    }

    pub fn strategy(self, config: &ExperimentConfig) -> Strategy {
        match self {
            CurveStrategy::ShortEpochs => Strategy::FixedEpochs(config.short_epochs),
            CurveStrategy::LongEpochs | CurveStrategy::LongEpochsRegularized => {
                Strategy::FixedEpochs(config.long_epochs)
            }
            CurveStrategy::EarlyStop | CurveStrategy::EarlyStopRegularized => Strategy::EarlyStop,
        }
    }

    pub fn reg_kind(self) -> RegKind {
        match self {
            CurveStrategy::EarlyStopRegularized | CurveStrategy::LongEpochsRegularized => RegKind::DropoutMapL2,
            _ => RegKind::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub in_domain_size: usize,
    pub strategy: String,
    pub seed: u64,
    pub test_bleu: f64,
    pub peak_valid_bleu: f64,
    pub final_valid_bleu: f64,
}

pub const CURVE_CSV_HEADER: &str = "size,strategy,seed,test_bleu,peak_valid_bleu,final_valid_bleu";

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = format!("{CURVE_CSV_HEADER}\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.4},{:.4}",
            p.in_domain_size, p.strategy, p.seed, p.test_bleu, p.peak_valid_bleu, p.final_valid_bleu
        );
    }
    out
}

/// Seed of the in-domain subsample for one (size, seed) cell. All
/// strategies of a cell see the same subsample.
pub fn subsample_seed(size: usize, seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ size as u64
}

/// One fine-tuning cell: subsample, fine-tune, score. At the full corpus
/// size the corpus is used as is, which makes the cell identical to the
/// corresponding [`run_table`] row.
pub fn run_cell(
    config: &ExperimentConfig,
    corpora: &Corpora,
    base: &Checkpoint,
    size: usize,
    reg: RegKind,
    strategy: Strategy,
    seed: u64,
) -> Result<(f64, TrainOutcome)> {
    let sample = if size == corpora.in_train.len() {
        corpora.in_train.clone()
    } else {
        subsample(&corpora.in_train, size, subsample_seed(size, seed))?
    };
    let outcome = finetune(
        base,
        &corpora.vocab,
        &sample,
        &corpora.in_valid,
        &config.reg(reg),
        strategy,
        &config.finetune_options(seed),
    )?;
    let (score, _) = test_bleu(&outcome.checkpoint, &corpora.in_test)?;
    Ok((score, outcome))
}

/// Runs every (size, strategy, seed) cell in canonical order.
pub fn run_curve(
    config: &ExperimentConfig,
    corpora: &Corpora,
    base: &Checkpoint,
    sizes: &[usize],
    strategies: &[CurveStrategy],
    seeds: &[u64],
) -> Result<Vec<CurvePoint>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("curve sizes must be strictly ascending".into()));
    }
    let mut points = Vec::with_capacity(sizes.len() * strategies.len() * seeds.len());
    for &size in sizes {
        for &strategy in strategies {
            for &seed in seeds {
                let (test_bleu, outcome) = run_cell(
                    config,
                    corpora,
                    base,
                    size,
                    strategy.reg_kind(),
                    strategy.strategy(config),
                    seed,
                )?;
                points.push(CurvePoint {
                    in_domain_size: size,
                    strategy: strategy.name(config),
                    seed,
                    test_bleu,
                    peak_valid_bleu: outcome.peak_validation().unwrap_or(f64::NAN),
                    final_valid_bleu: outcome.final_validation().unwrap_or(f64::NAN),
                });
            }
        }
    }
    Ok(points)
}

/// Seed-averaged test BLEU per size for one strategy, in size order.
pub fn seed_averaged(points: &[CurvePoint], strategy: &str) -> Vec<(usize, f64)> {
    let mut sizes: Vec<usize> = points
        .iter()
        .filter(|p| p.strategy == strategy)
        .map(|p| p.in_domain_size)
        .collect();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|size| {
            let scores: Vec<f64> = points
                .iter()
                .filter(|p| p.strategy == strategy && p.in_domain_size == size)
                .map(|p| p.test_bleu)
                .collect();
            (size, mean(&scores))
        })
        .collect()
}

/// Peak and final validation BLEU of a fixed-epoch fine-tune on a subset.
#[derive(Clone, Debug, PartialEq)]
pub struct OverfitRun {
    pub seed: u64,
    pub peak: f64,
    pub last: f64,
    pub history: Vec<f64>,
}

impl OverfitRun {
    pub fn gap(&self) -> f64 {
        self.peak - self.last
    }
}

/// Fine-tunes `long_epochs` epochs on `overfit_size` pairs per seed and
/// records the validation curve.
pub fn run_overfit(config: &ExperimentConfig, corpora: &Corpora, base: &Checkpoint, reg: RegKind) -> Result<Vec<OverfitRun>> {
    config
        .seeds
        .iter()
        .map(|&seed| {
            let (_, outcome) = run_cell(
                config,
                corpora,
                base,
                config.overfit_size,
                reg,
                Strategy::FixedEpochs(config.long_epochs),
                seed,
            )?;
            Ok(OverfitRun {
                seed,
                peak: outcome.peak_validation().unwrap_or(f64::NAN),
                last: outcome.final_validation().unwrap_or(f64::NAN),
                history: outcome.history.iter().map(|p| p.bleu).collect(),
            })
        })
        .collect()
}

/// Least-squares fit of `bleu = intercept + slope * ln(size)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogFit {
    pub intercept: f64,
    pub slope: f64,
    /// `1 - SS_res / SS_tot`, clamped to [0, 1]; 0 when `SS_tot` is 0.
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn fit_log(points: &[(f64, f64)]) -> Result<LogFit> {
    if points.len() < 2 {
        return Err(Error::Argument(format!("a log fit needs at least 2 points, got {}", points.len())));
    }
    if let Some(&(s, _)) = points.iter().find(|(s, _)| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Argument(format!("log fit sizes must be positive, got {s}")));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(s, _)| s.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, b)| b).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Argument("degenerate log fit: all sizes are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let r_squared = if ss_tot == 0.0 {
        0.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(LogFit {
        intercept,
        slope,
        r_squared,
        n_points: points.len(),
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Argument(format!(
            "rank correlation needs two equal-length series of at least 2 values, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
