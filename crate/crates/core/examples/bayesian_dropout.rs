//! Variational dropout masks: sampled once per (matrix, example, epoch),
//! reused at every time step, identity at inference.
//!
//! ```text
//! cargo run --release --example bayesian_dropout
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ftforge::model::ModelConfig;
use ftforge::regularization::{apply_weight, sample_mask, Application, MaskKey, RegConfig};
use ftforge::{ParamBundle, Tensor};

fn main() -> ftforge::Result<()> {
    let reg = RegConfig::dropout();
    let seed = 5;
    let key = MaskKey::new("enc.U_z", 42, 3);
    let mask = sample_mask(seed, &key, 16, 0.8)?;
    println!("mask for {key:?}:");
    println!("  {:?}", mask);
    println!("  resampled with the same key: identical = {}", mask == sample_mask(seed, &key, 16, 0.8)?);
    let next_epoch = MaskKey::new("enc.U_z", 42, 4);
    println!("  next epoch differs = {}", mask != sample_mask(seed, &next_epoch, 16, 0.8)?);

    // Averaging the masked product over many keys recovers the inference
    // output, since each kept column is scaled by 1/p.
    let model = ModelConfig::new(20);
    let params = ParamBundle::init(model.dims(), &mut ChaCha8Rng::seed_from_u64(1));
    let h = Tensor::column(&(0..model.hidden_dim).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>());
    let exact = apply_weight("dec.U_h", &h, &params, &reg, seed, &Application::Inference)?;
    let draws = 20_000;
    let mut mean = vec![0.0; exact.rows()];
    for example in 0..draws {
        let key = MaskKey::new("dec.U_h", example, 0);
        let y = apply_weight("dec.U_h", &h, &params, &reg, seed, &Application::Training(key))?;
        for (m, v) in mean.iter_mut().zip(y.data()) {
            *m += v / draws as f64;
        }
    }
    let worst = mean
        .iter()
        .zip(exact.data())
        .map(|(m, e)| (m - e).abs())
        .fold(0.0, f64::max);
    println!("max |MC mean - inference| over {} coordinates after {draws} draws: {worst:.4}", exact.rows());
    Ok(())
}
