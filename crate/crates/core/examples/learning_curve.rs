//! The in-domain data-size sweep: CSV of every (size, strategy, seed) cell
//! and a logarithmic fit per strategy.
//!
//! ```text
//! cargo run --release --example learning_curve -- [config.kv]
//! ```

use ftforge::config::KeyValues;
use ftforge::experiments::{curve_csv, fit_log, run_curve, seed_averaged, train_base, Corpora, CurveStrategy, ExperimentConfig};

fn main() -> ftforge::Result<()> {
    let config = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::from_key_values(&KeyValues::read(path.as_ref())?)?,
        None => ExperimentConfig::quick(),
    };
    let corpora = Corpora::generate(&config)?;
    let base = train_base(&config, &corpora)?;
    let points = run_curve(&config, &corpora, &base.checkpoint, &config.sizes, &CurveStrategy::ALL, &config.seeds)?;
    print!("{}", curve_csv(&points));
    for strategy in CurveStrategy::ALL {
        let name = strategy.name(&config);
        let avg: Vec<(f64, f64)> = seed_averaged(&points, &name).into_iter().map(|(s, b)| (s as f64, b)).collect();
        let fit = fit_log(&avg)?;
        println!(
            "{name:<28} BLEU ≈ {:.2} + {:.2}·ln(size), R² = {:.3}",
            fit.intercept, fit.slope, fit.r_squared
        );
    }
    Ok(())
}
