use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

/// `(fan_in, fan_out)` following the usual convention: a matrix is
/// `[fan_out, fan_in]`, trailing axes of a conv kernel are its receptive field.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [rows, cols] => (*cols, *rows),
        [out, inp, rest @ ..] => {
            let field: usize = rest.iter().product();
            (inp * field, out * field)
        }
    }
}

pub fn xavier_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = fans(shape);
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform Glorot initialisation drawn from `rng`.
pub fn xavier_uniform<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let bound = xavier_bound(shape);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree")
}

/// Uniform Glorot initialisation from a fixed seed.
pub fn xavier_init(shape: &[usize], seed: u64) -> Tensor {
    xavier_uniform(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}
