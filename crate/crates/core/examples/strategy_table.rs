//! The strategy comparison table on the in-domain test set, with
//! bootstrap daggers against plain fine-tuning.
//!
//! ```text
//! cargo run --release --example strategy_table -- [config.kv]
//! ```
//!
//! Without a config file a reduced setting runs in a few minutes; pass a
//! file (possibly empty) to start from the full defaults.

use ftforge::config::KeyValues;
use ftforge::experiments::{run_table, train_base, Corpora, ExperimentConfig};

fn main() -> ftforge::Result<()> {
    let config = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::from_key_values(&KeyValues::read(path.as_ref())?)?,
        None => ExperimentConfig::quick(),
    };
    let corpora = Corpora::generate(&config)?;
    let base = train_base(&config, &corpora)?;
    let report = run_table(&config, &corpora, &base.checkpoint)?;
    print!("{}", report.to_text());
    Ok(())
}
