use crate::real::Real;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_video<F: Real>(
    rng: &mut ChaCha8Rng,
    batch: usize,
    time: usize,
    h: usize,
    w: usize,
) -> Tensor<F> {
    Tensor::from_vec(
        &[batch, 3, time, h, w],
        (0..batch * 3 * time * h * w)
            .map(|_| F::from_f64(rng.gen_range(0.0..1.0)))
            .collect(),
    )
}
