//! The MAP-L2 penalty `λ·Σ‖W − Ŵ‖²` pulls fine-tuned weights back to the
//! out-of-domain prior.
//!
//! ```text
//! cargo run --example map_l2
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ftforge::optimizer::OptimizerState;
use ftforge::params::ModelDims;
use ftforge::regularization::map_l2_penalty;
use ftforge::ParamBundle;

fn main() -> ftforge::Result<()> {
    let dims = ModelDims {
        vocab_size: 8,
        embed_dim: 4,
        hidden_dim: 4,
    };
    let mut params = ParamBundle::init(dims, &mut ChaCha8Rng::seed_from_u64(2));
    params.snapshot_prior();
    let (at_prior, _) = map_l2_penalty(&params, 1e-3)?;
    println!("penalty at W = prior: {at_prior}");

    for t in params.live_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += 0.5);
    }
    let lambda = 0.1;
    let mut sgd = OptimizerState::sgd(0.5);
    for step in 0..=40 {
        let (penalty, mut grads) = map_l2_penalty(&params, lambda)?;
        if step % 10 == 0 {
            let drift = params
                .live()
                .iter()
                .zip(params.prior().expect("prior was snapshotted"))
                .map(|(w, p)| w.data().iter().zip(p.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            println!("step {step:>2}: penalty {penalty:.6}, max |W - prior| {drift:.6}");
        }
        sgd.update(params.trainable_mut(), &mut grads)?;
    }
    Ok(())
}
