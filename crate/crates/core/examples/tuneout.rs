//! Tuneout: fine-tune `ΔW` on top of a frozen prior `Ŵ`, with dropout on
//! the difference only. With `ΔW = 0` the model is exactly the prior.
//!
//! ```text
//! cargo run --release --example tuneout
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ftforge::model::{batch_loss, greedy_decode, ModelConfig, TrainingExample};
use ftforge::regularization::RegConfig;
use ftforge::ParamBundle;

fn main() -> ftforge::Result<()> {
    let model = ModelConfig::new(16);
    let mut prior = ParamBundle::init(model.dims(), &mut ChaCha8Rng::seed_from_u64(4));
    let src = [4, 7, 9, 5];
    let example = [TrainingExample { id: 0, src: &src, tgt: &[5, 9, 7, 4] }];

    let plain_loss = batch_loss(&prior, &RegConfig::none(), &RegConfig::none().mask_set(0), &example, 0)?;
    let before = greedy_decode(&prior, &src, model.max_decode_len)?;

    prior.snapshot_prior();
    let mut tuned = prior.clone();
    tuned.start_tuneout()?;
    let reg = RegConfig::tuneout();
    for epoch in 0..3 {
        let loss = batch_loss(&tuned, &reg, &reg.mask_set(9), &example, epoch)?;
        println!("epoch {epoch}: tuneout loss with ΔW = 0 is {loss:.12} (prior {plain_loss:.12})");
    }
    println!("decode with ΔW = 0 matches the prior: {}", greedy_decode(&tuned, &src, model.max_decode_len)? == before);

    for d in tuned.delta_mut().expect("tuneout has deltas") {
        d.data_mut().iter_mut().for_each(|x| *x = 0.01);
    }
    let mut materialized = tuned.clone();
    materialized.materialize();
    println!(
        "materialized Ŵ + ΔW decodes like the tuneout bundle: {}",
        greedy_decode(&materialized, &src, model.max_decode_len)? == greedy_decode(&tuned, &src, model.max_decode_len)?
    );
    Ok(())
}
