//! Trains a small out-of-domain model, then fine-tunes it on in-domain
//! data under each regularizer and reports in-domain test BLEU.
//!
//! ```text
//! cargo run --release --example finetune
//! ```

use ftforge::experiments::{train_base, Corpora, ExperimentConfig, RegKind};
use ftforge::training::{corpus_bleu, finetune, Strategy};

fn main() -> ftforge::Result<()> {
    let config = ExperimentConfig::quick();

    let corpora = Corpora::generate(&config)?;
    let base = train_base(&config, &corpora)?;
    let max_len = config.max_decode_len;
    println!(
        "base: {} updates, out-domain valid BLEU {:.2}, in-domain test BLEU {:.2}",
        base.updates,
        base.peak_validation().unwrap_or(0.0),
        corpus_bleu(&base.checkpoint.params, &corpora.in_test, max_len)?
    );

    for kind in [RegKind::None, RegKind::Dropout, RegKind::MapL2, RegKind::Tuneout, RegKind::DropoutMapL2] {
        let outcome = finetune(
            &base.checkpoint,
            &corpora.vocab,
            &corpora.in_train,
            &corpora.in_valid,
            &config.reg(kind),
            Strategy::EarlyStop,
            &config.finetune,
        )?;
        println!(
            "fine-tune {:<15} {:>4} updates, test BLEU {:.2}",
            kind.name(),
            outcome.updates,
            corpus_bleu(&outcome.checkpoint.params, &corpora.in_test, max_len)?
        );
    }
    Ok(())
}
