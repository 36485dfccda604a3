//! Finite-difference check of the full model gradient under each
//! regularizer, on a small model so every scalar can be perturbed.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ftforge::gradcheck::finite_difference_check_report;
use ftforge::model::{batch_loss_and_grad, TrainingExample};
use ftforge::params::{zeros_like, ModelDims, Param, TensorSet};
use ftforge::regularization::{RegConfig, Retention};
use ftforge::ParamBundle;

fn main() -> ftforge::Result<()> {
    let dims = ModelDims {
        vocab_size: 10,
        embed_dim: 5,
        hidden_dim: 6,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Entries uniform in [-1, 1]: near-zero gradients sit under the ~1e-10
    // roundoff floor of a central difference and inflate relative error.
    let mut plain = ParamBundle::init(dims, &mut rng);
    for t in plain.live_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
    }

    let mut shifted = plain.clone();
    shifted.snapshot_prior();
    for t in shifted.live_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
    }
    let mut tuned = plain.clone();
    tuned.snapshot_prior();
    tuned.start_tuneout()?;
    for d in tuned.delta_mut().expect("tuneout has deltas") {
        d.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.1..0.1));
    }

    let cases = [
        ("plain", plain.clone(), RegConfig::none()),
        ("dropout", plain, RegConfig::dropout()),
        ("map_l2", shifted, RegConfig { lambda_map_l2: 0.05, ..RegConfig::none() }),
        ("tuneout", tuned, RegConfig { tuneout: Some(Retention::TUNEOUT), ..RegConfig::none() }),
    ];
    let batch = [(0u64, vec![4, 5, 6, 7], vec![8, 9, 4]), (1, vec![9, 4], vec![5, 6, 7, 5])];
    let examples: Vec<TrainingExample<'_>> = batch
        .iter()
        .map(|(id, src, tgt)| TrainingExample { id: *id, src, tgt })
        .collect();

    for (name, params, reg) in cases {
        let masks = reg.mask_set(11);
        let loss_fn = |p: &ParamBundle| -> ftforge::Result<(f64, TensorSet)> {
            let mut grads = zeros_like(p.trainable());
            let loss = batch_loss_and_grad(p, &reg, &masks, &examples, 0, &mut grads)?;
            Ok((loss, grads))
        };
        let report = finite_difference_check_report(loss_fn, &params, 1e-5)?;
        println!(
            "{name:<8} {} scalars, max relative error {:.2e} (worst at {} [{}]: analytic {:.6e}, numeric {:.6e})",
            report.checked,
            report.max_relative_error,
            Param::ALL[report.worst.0].name(),
            report.worst.1,
            report.analytic,
            report.numeric
        );
    }
    Ok(())
}
