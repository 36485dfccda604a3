use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ftforge::checkpoint::{load_checkpoint, save_checkpoint};
use ftforge::config::KeyValues;
use ftforge::data::{read_corpus, read_sentences, write_lines, Corpus, Vocab};
use ftforge::evaluation::{bleu, bootstrap_significance};
use ftforge::experiments::{
    curve_csv, fit_log, run_curve, run_table, seed_averaged, train_base, Corpora, CurveStrategy, ExperimentConfig,
    RegKind,
};
use ftforge::model::Translator;
use ftforge::training::{finetune, history_csv, train, Strategy, TrainOutcome};
use ftforge::{Error, Result};

#[derive(Parser)]
#[command(name = "ftforge", version, about = "Regularized fine-tuning of a GRU translation model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    #[arg(long)]
    seed: Option<u64>,
    /// key=value file of experiment, training, regularizer and domain fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the out-of-domain and in-domain corpora and the vocabulary.
    GenData(Shared),
    /// Train a model from scratch on `<train>.src/.tgt`.
    Train {
        #[command(flatten)]
        shared: Shared,
        /// Corpus stem; reads `<stem>.src` and `<stem>.tgt`.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Continue training a base checkpoint on in-domain data.
    Finetune {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long, default_value = "none")]
        reg: String,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long = "retain-word")]
        retain_word: Option<f64>,
        #[arg(long = "retain-other")]
        retain_other: Option<f64>,
        #[arg(long, default_value = "early_stop")]
        strategy: String,
    },
    /// Greedy-decode a file of source sentences.
    Decode {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Bleu {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Paired bootstrap test that system A beats system B.
    Significance {
        #[command(flatten)]
        shared: Shared,
        #[arg(long = "hyp-a")]
        hyp_a: PathBuf,
        #[arg(long = "hyp-b")]
        hyp_b: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        resamples: Option<usize>,
    },
    /// Strategy comparison on the in-domain test set.
    Table {
        #[command(flatten)]
        shared: Shared,
        /// Directory written by gen-data; generated in memory when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Reuse a base checkpoint instead of training one.
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// In-domain data-size sweep with a logarithmic fit per strategy.
    Curve {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        base: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ftforge: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn experiment_config(shared: &Shared) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &shared.config {
        config.apply(&KeyValues::read(path)?)?;
    }
    Ok(config)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn stem_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".src"), with(".tgt"))
}

fn load_stem(stem: &Path, vocab: &Vocab) -> Result<Corpus> {
    let (src, tgt) = stem_paths(stem);
    Ok(vocab.encode_corpus(&read_corpus(&src, &tgt)?))
}

fn save_outcome(out: &Path, outcome: &TrainOutcome) -> Result<()> {
    prepare_out(out)?;
    save_checkpoint(&outcome.checkpoint, &out.join("model.ckpt"))?;
    write_text(&out.join("history.csv"), &history_csv(&outcome.history))?;
    println!(
        "updates={} best_valid_bleu={} stopped_early={}",
        outcome.updates,
        outcome.peak_validation().map_or("none".into(), |b| format!("{b:.2}")),
        outcome.stopped_early
    );
    Ok(())
}

fn corpora_for(config: &ExperimentConfig, data: Option<&Path>) -> Result<Corpora> {
    match data {
        Some(dir) => Corpora::read(dir),
        None => Corpora::generate(config),
    }
}

fn base_for(
    config: &ExperimentConfig,
    corpora: &Corpora,
    base: Option<&Path>,
    out: &Path,
) -> Result<ftforge::checkpoint::Checkpoint> {
    match base {
        Some(path) => load_checkpoint(path),
        None => {
            let outcome = train_base(config, corpora)?;
            save_checkpoint(&outcome.checkpoint, &out.join("base.ckpt"))?;
            Ok(outcome.checkpoint)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(shared) => {
            let mut config = experiment_config(&shared)?;
            if let Some(seed) = shared.seed {
                config.data_seed = seed;
            }
            let corpora = Corpora::generate(&config)?;
            corpora.write(&shared.out)?;
            println!("wrote corpora and vocabulary to {}", shared.out.display());
            Ok(())
        }
        Command::Train {
            shared,
            train: stem,
            valid,
            vocab,
        } => {
            let mut config = experiment_config(&shared)?;
            if let Some(seed) = shared.seed {
                config.base.seed = seed;
            }
            let vocab = Vocab::read(&vocab)?;
            let train_corpus = load_stem(&stem, &vocab)?;
            let valid_corpus = match &valid {
                Some(v) => load_stem(v, &vocab)?,
                None => Corpus::default(),
            };
            if valid.is_none() {
                config.base.early_stopping = false;
            }
            let mut model = config.model()?;
            model.vocab_size = vocab.len();
            let outcome = train(&config.base, model, &vocab, &train_corpus, &valid_corpus)?;
            save_outcome(&shared.out, &outcome)
        }
        Command::Finetune {
            shared,
            base,
            train: stem,
            valid,
            reg,
            lambda,
            retain_word,
            retain_other,
            strategy,
        } => {
            let mut config = experiment_config(&shared)?;
            let strategy = Strategy::parse(&strategy)?;
            let kind = RegKind::parse(&reg)?;
            let mut reg = config.reg(kind);
            if let Some(l) = lambda {
                reg.lambda_map_l2 = l;
            }
            if let Some(r) = reg.dropout.as_mut().or(reg.tuneout.as_mut()) {
                if let Some(w) = retain_word {
                    r.word = w;
                }
                if let Some(o) = retain_other {
                    r.other = o;
                }
            } else if retain_word.is_some() || retain_other.is_some() {
                return Err(Error::Config(format!("--retain-* needs a dropout or tuneout regularizer, got `{}`", kind.name())));
            }
            let base = load_checkpoint(&base)?;
            let in_domain = load_stem(&stem, &base.vocab)?;
            let valid = match &valid {
                Some(v) => load_stem(v, &base.vocab)?,
                None => Corpus::default(),
            };
            if let Some(seed) = shared.seed {
                config.finetune.seed = seed;
            }
            let outcome = finetune(&base, &base.vocab, &in_domain, &valid, &reg, strategy, &config.finetune)?;
            save_outcome(&shared.out, &outcome)
        }
        Command::Decode { shared, ckpt, input } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let sources: Vec<Vec<usize>> = read_sentences(&input)?
                .iter()
                .map(|s| ckpt.vocab.encode(s))
                .collect();
            let translator = Translator::new(&ckpt.params, ckpt.model.max_decode_len);
            let hyps = translator.translate_all(sources.iter().map(Vec::as_slice))?;
            let words: Vec<Vec<String>> = hyps.iter().map(|h| ckpt.vocab.decode(h)).collect();
            prepare_out(&shared.out)?;
            let path = shared.out.join("hyp.txt");
            write_lines(&path, words.iter())?;
            println!("wrote {} translations to {}", words.len(), path.display());
            Ok(())
        }
        Command::Bleu { shared, hyp, reference } => {
            let hyps = read_sentences(&hyp)?;
            let refs = read_sentences(&reference)?;
            let report = bleu(&hyps, &refs)?;
            print!("{report}\n{}", report.to_key_values());
            prepare_out(&shared.out)?;
            write_text(&shared.out.join("bleu.txt"), &report.to_key_values())
        }
        Command::Significance {
            shared,
            hyp_a,
            hyp_b,
            reference,
            resamples,
        } => {
            let config = experiment_config(&shared)?;
            let a = read_sentences(&hyp_a)?;
            let b = read_sentences(&hyp_b)?;
            let refs = read_sentences(&reference)?;
            let result = bootstrap_significance(
                &a,
                &b,
                &refs,
                resamples.unwrap_or(config.resamples),
                shared.seed.unwrap_or(config.data_seed),
            )?;
            print!("{}", result.to_key_values());
            prepare_out(&shared.out)?;
            write_text(&shared.out.join("significance.txt"), &result.to_key_values())
        }
        Command::Table { shared, data, base } => {
            let mut config = experiment_config(&shared)?;
            if let Some(seed) = shared.seed {
                config.data_seed = seed;
            }
            prepare_out(&shared.out)?;
            let corpora = corpora_for(&config, data.as_deref())?;
            let base = base_for(&config, &corpora, base.as_deref(), &shared.out)?;
            let report = run_table(&config, &corpora, &base)?;
            print!("{}", report.to_text());
            write_text(&shared.out.join("table.txt"), &report.to_text())?;
            write_text(&shared.out.join("table.kv"), &report.to_key_values())
        }
        Command::Curve { shared, data, base } => {
            let mut config = experiment_config(&shared)?;
            if let Some(seed) = shared.seed {
                config.data_seed = seed;
            }
            prepare_out(&shared.out)?;
            let corpora = corpora_for(&config, data.as_deref())?;
            let base = base_for(&config, &corpora, base.as_deref(), &shared.out)?;
            let points = run_curve(&config, &corpora, &base, &config.sizes, &CurveStrategy::ALL, &config.seeds)?;
            write_text(&shared.out.join("curve.csv"), &curve_csv(&points))?;
            let mut summary = String::new();
            for strategy in CurveStrategy::ALL {
                let name = strategy.name(&config);
                let avg = seed_averaged(&points, &name);
                let pts: Vec<(f64, f64)> = avg.iter().map(|&(s, b)| (s as f64, b)).collect();
                let fit = fit_log(&pts)?;
                summary.push_str(&format!(
                    "{name}.intercept={:.4}\n{name}.slope={:.4}\n{name}.r_squared={:.4}\n{name}.n_points={}\n",
                    fit.intercept, fit.slope, fit.r_squared, fit.n_points
                ));
            }
            print!("{summary}");
            write_text(&shared.out.join("curve_fit.kv"), &summary)
        }
    }
}
