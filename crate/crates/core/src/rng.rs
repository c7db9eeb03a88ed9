//! Seeded random streams.
//!
//! All randomness flows through ChaCha8 generators so that every run is
//! reproducible across platforms. Independent streams are derived from a
//! base seed with [`derive_seed`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream label (splitmix64 finalizer).
pub fn derive_seed(base: u64, label: u64) -> u64 {
    let mut z = base ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal draw by Box–Muller.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform point on the sphere of radius `r` in `n` dimensions.
pub fn on_sphere(rng: &mut impl Rng, n: usize, r: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
        let len = crate::numerics::norm2(&v);
        if len > 1e-12 {
            return v.into_iter().map(|x| x * r / len).collect();
        }
    }
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix via
/// Gram–Schmidt with sign correction).
pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> crate::numerics::Matrix {
    use crate::numerics::{axpy, dot, norm2, Matrix};
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
        for c in &cols {
            let p = dot(&v, c);
            axpy(-p, c, &mut v);
        }
        let len = norm2(&v);
        if len > 1e-8 {
            cols.push(v.into_iter().map(|x| x / len).collect());
        }
    }
    Matrix::from_fn(n, n, |i, j| cols[j][i])
}
