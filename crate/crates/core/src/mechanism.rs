//! ℓ1 sensitivity, Laplace calibration and sampling, and the per-output
//! privacy-loss check.
//!
//! Sensitivity is computed exactly over the rows handed in, which in practice
//! is the training set: the guarantee therefore holds for inputs inside the
//! convex hull of that set. Reports carry this caveat.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{l1_distance, Matrix};
use crate::rng::{self, Stream};

/// Text emitted with every sensitivity report.
pub const EMPIRICAL_CAVEAT: &str =
    "sensitivity measured on the supplied samples; the guarantee covers inputs within their convex hull";

/// Row count above which the pair scan is split across threads.
const PARALLEL_THRESHOLD: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityReport {
    pub delta1: f64,
    /// Lowest-index pair attaining `delta1`.
    pub arg: (usize, usize),
    pub samples: usize,
}

/// Exact `max_{i<j} ‖row_i − row_j‖₁`; ties resolve to the lexicographically
/// smallest `(i, j)`.
pub fn sensitivity_exact(encoded: &Matrix) -> Result<SensitivityReport> {
    let n = encoded.rows();
    if n < 2 {
        return Err(Error::EmptyData);
    }
    let best_for = |i: usize| -> (f64, usize, usize) {
        let ri = encoded.row(i);
        let mut best = (f64::NEG_INFINITY, i, i);
        for j in i + 1..n {
            let d = l1_distance(ri, encoded.row(j));
            if d > best.0 {
                best = (d, i, j);
            }
        }
        best
    };
    let per_row: Vec<(f64, usize, usize)> = if n >= PARALLEL_THRESHOLD {
        (0..n - 1).into_par_iter().map(best_for).collect()
    } else {
        (0..n - 1).map(best_for).collect()
    };
    // rows are visited in order, so strict `>` keeps the smallest pair
    let (delta1, i, j) = per_row
        .into_iter()
        .fold((f64::NEG_INFINITY, 0, 0), |acc, cand| if cand.0 > acc.0 { cand } else { acc });
    Ok(SensitivityReport { delta1, arg: (i, j), samples: n })
}

/// ℓ1 diameter of the ellipsoid `{diag(σ)·h : ‖h‖₂ ≤ r}`: `2r·√(Σσ_i²)`.
pub fn sensitivity_ellipsoid(r: f64, sigmas: &[f64]) -> f64 {
    2.0 * r * sigmas.iter().map(|s| s * s).sum::<f64>().sqrt()
}

/// Product-Laplace noise source with scale `b = Δ1/ε` per coordinate.
#[derive(Clone)]
pub struct LaplaceMechanism {
    scale: f64,
    dim: usize,
    epsilon: f64,
    delta1: f64,
    seed: u64,
    rng: Stream,
}

impl fmt::Debug for LaplaceMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LaplaceMechanism")
            .field("scale", &self.scale)
            .field("dim", &self.dim)
            .field("epsilon", &self.epsilon)
            .field("delta1", &self.delta1)
            .field("seed", &self.seed)
            .finish()
    }
}

/// `σ_w² = 2(Δ1/ε)²`, the per-coordinate Laplace variance.
pub fn noise_variance(delta1: f64, epsilon: f64) -> f64 {
    let b = delta1 / epsilon;
    2.0 * b * b
}

/// Calibrates a mechanism on `dim` coordinates for sensitivity `delta1`.
pub fn calibrate(delta1: f64, epsilon: f64, dim: usize, seed: u64) -> Result<LaplaceMechanism> {
    if !(epsilon > 0.0) {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    if !(delta1 >= 0.0) || !delta1.is_finite() {
        return Err(Error::InvalidArgument(format!("sensitivity must be finite and non-negative, got {delta1}")));
    }
    Ok(LaplaceMechanism { scale: delta1 / epsilon, dim, epsilon, delta1, seed, rng: rng::stream(seed) })
}

impl LaplaceMechanism {
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta1(&self) -> f64 {
        self.delta1
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.scale * self.scale
    }

    /// Draws `count` vectors of i.i.d. Laplace coordinates.
    pub fn sample_noise(&mut self, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.sample_one()).collect()
    }

    pub fn sample_one(&mut self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.fill(&mut out);
        out
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        fill_laplace(&mut self.rng, self.scale, out);
    }

    /// `|log p(z | φ) − log p(z | φ′)|` under the product-Laplace density.
    pub fn ldp_density_check(&self, phi: &[f64], phi_prime: &[f64], z: &[f64]) -> Result<f64> {
        if phi.len() != phi_prime.len() || phi.len() != z.len() {
            return Err(Error::dims("density check vectors differ in length"));
        }
        if self.scale == 0.0 {
            return if phi == phi_prime { Ok(0.0) } else { Err(Error::ScaleZero) };
        }
        // the normalising constants cancel
        let diff: f64 = z
            .iter()
            .zip(phi)
            .zip(phi_prime)
            .map(|((z, a), b)| (z - b).abs() - (z - a).abs())
            .sum();
        Ok((diff / self.scale).abs())
    }

    /// Key-value report lines.
    pub fn report(&self, sens: Option<&SensitivityReport>) -> String {
        let mut s = String::new();
        if let Some(r) = sens {
            s.push_str(&format!("delta1={:?}\narg_i={}\narg_j={}\nsamples={}\n", r.delta1, r.arg.0, r.arg.1, r.samples));
        } else {
            s.push_str(&format!("delta1={:?}\n", self.delta1));
        }
        s.push_str(&format!(
            "b={:?}\nsigma_w2={:?}\nepsilon={:?}\nnote={EMPIRICAL_CAVEAT}\n",
            self.scale,
            self.variance(),
            self.epsilon
        ));
        s
    }
}

/// Inverse-CDF Laplace draws: `x = −b·sgn(u)·ln(1 − 2|u|)`, `u ~ U(−½, ½)`.
pub fn fill_laplace(rng: &mut impl Rng, scale: f64, out: &mut [f64]) {
    for o in out.iter_mut() {
        // always consume one uniform so streams stay aligned regardless of b
        let u: f64 = rng.gen::<f64>() - 0.5;
        *o = if scale == 0.0 { 0.0 } else { -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln() };
    }
}
