//! Saves a tuneout checkpoint and reloads it bit-exactly.
//!
//! ```text
//! cargo run --example checkpoint_roundtrip
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ftforge::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta};
use ftforge::data::DomainSpec;
use ftforge::model::ModelConfig;
use ftforge::optimizer::OptimizerState;
use ftforge::regularization::RegConfig;
use ftforge::training::TrainMode;
use ftforge::ParamBundle;

fn main() -> ftforge::Result<()> {
    let vocab = DomainSpec::default().vocab();
    let model = ModelConfig {
        embed_dim: 8,
        hidden_dim: 8,
        ..ModelConfig::new(vocab.len())
    };
    let mut params = ParamBundle::init(model.dims(), &mut ChaCha8Rng::seed_from_u64(1));
    params.snapshot_prior();
    params.start_tuneout()?;
    for d in params.delta_mut().expect("tuneout has deltas") {
        d.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = (i as f64).sqrt() * 1e-3);
    }
    let ckpt = Checkpoint {
        model,
        vocab,
        params,
        reg: RegConfig::tuneout(),
        optimizer: OptimizerState::adam(2.5e-4),
        meta: TrainingMeta {
            updates: 0,
            best_valid_bleu: None,
            learning_rate: 2.5e-4,
            validation_frequency: 125,
            mode: TrainMode::Finetune,
        },
    };

    let dir = std::env::temp_dir().join("ftforge-checkpoint-example");
    std::fs::create_dir_all(&dir).map_err(|e| ftforge::Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("tuneout.ckpt");
    save_checkpoint(&ckpt, &path)?;
    let loaded = load_checkpoint(&path)?;
    let text = ckpt.to_text();
    println!("{} bytes, header:", text.len());
    for line in text.lines().take(2) {
        println!("  {}", &line[..line.len().min(160)]);
    }
    println!("reloaded equals saved: {}", loaded == ckpt);
    println!("re-saved bytes identical: {}", loaded.to_text() == text);

    let mut truncated = text.clone();
    truncated.truncate(text.len() / 2);
    match Checkpoint::from_text(&truncated) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => println!("truncated file unexpectedly loaded"),
    }
    Ok(())
}
