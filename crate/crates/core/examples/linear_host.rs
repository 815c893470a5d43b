//! A program cannot reprogram a linear host: it shifts every input's logits
//! by the same vector.
//!
//!     cargo run --release --example linear_host

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reprog::host::{init_random, DESK_LINEAR};
use reprog::nn::forward;
use reprog::reprogram::{adv_image, embed, AdversarialProgram, Geometry};
use reprog::Tensor;

fn main() -> Result<()> {
    let host = init_random(DESK_LINEAR, 0)?;
    let geometry = Geometry::centered(64, 28)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = Tensor::from_fn(geometry.shape(), |_| rng.random_range(-3.0f32..3.0));
    let p = AdversarialProgram::from_weights(geometry, w)?.squash();

    for i in 0..4 {
        let x = Tensor::from_fn(vec![28, 28, 3], |_| rng.random_range(-1.0f32..=1.0));
        let x_tilde = embed(&x, &geometry)?;
        let (plain, _) = forward(&host, &x_tilde)?;
        let (shifted, _) = forward(&host, &adv_image(&x_tilde, &p)?)?;
        let delta: Vec<String> = shifted
            .data()
            .iter()
            .zip(plain.data())
            .take(4)
            .map(|(a, b)| format!("{:+.5}", a - b))
            .collect();
        println!("input {i}: logit shift {} ...", delta.join(" "));
    }
    Ok(())
}
