use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// Fan-in of a weight shape: `Kh·Kw·Cin` for `[Kh, Kw, Cin, Cout]` kernels,
/// otherwise the product of all but the last extent (1 for vectors).
pub fn fan_in(shape: &[usize]) -> usize {
    match shape {
        [] | [_] => 1,
        [rest @ .., _] => rest.iter().product(),
    }
}

/// He-normal initialisation: `N(0, sqrt(2 / fan_in))` from a seeded ChaCha stream.
pub fn he_init(shape: &[usize], seed: u64) -> Tensor {
    let std = (2.0 / fan_in(shape) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

pub fn bias_init(len: usize) -> Tensor {
    Tensor::zeros(&[len])
}

/// SplitMix64 finaliser, used to derive independent per-parameter seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
