//! Closed-form codecs for a linear task `y = Kx` under squared loss.
//!
//! Everything is expressed in whitened coordinates `h = L⁻¹(x − μ)` with task
//! matrix `P = K·L`. For an encoder `E` and noise variance `σ_w²` the optimal
//! decoder is `D = Eᵀ(EEᵀ + σ_w²I)⁻¹`. If the hull of the whitened data is a
//! centred sphere of radius `r`, the optimal encoder is `E = diag(σ)·Qᵀ` with
//! `Q` the eigenvectors of `PᵀP` and the scales `σ_i²` given by a
//! water-filling rule over `√λ_i` ([`kkt_sigmas`]). For other hulls the sphere
//! of radius `r_max` is used for the design and the noise is then recalibrated
//! on the data actually encoded.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data_io::DataMatrix;
use crate::error::{Error, Result};
use crate::mechanism::{self, fill_laplace};
use crate::numerics::{self, Matrix};
use crate::rng;
use crate::whitening::{radius_bounds, WhitenedTask, WhiteningModel};

/// Water-filling test values closer to zero than this are flagged as ties.
pub const TIE_TOL: f64 = 1e-12;

/// How the encoder was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Approach {
    /// Encoder co-designed with the task and the noise.
    TaskAware,
    /// Identity encoder; noise added to the (centred) data directly.
    TaskAgnostic,
    /// Encoder designed ignoring noise, with a fixed latent size.
    PrivacyAgnostic,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::TaskAware, Approach::TaskAgnostic, Approach::PrivacyAgnostic];

    pub fn tag(self) -> &'static str {
        match self {
            Approach::TaskAware => "task-aware",
            Approach::TaskAgnostic => "task-agnostic",
            Approach::PrivacyAgnostic => "privacy-agnostic",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task-aware" | "aware" => Ok(Approach::TaskAware),
            "task-agnostic" | "agnostic" => Ok(Approach::TaskAgnostic),
            "privacy-agnostic" => Ok(Approach::PrivacyAgnostic),
            other => Err(Error::InvalidArgument(format!(
                "approach must be aware, task-agnostic or privacy-agnostic, got {other:?}"
            ))),
        }
    }
}

/// A deployable linear anonymizer:
/// `x̂ = μ + L·D·(E·L⁻¹(x − μ) + w)` with `w ~ Lap^Z(0, Δ1/ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCodec {
    pub approach: Approach,
    pub whitening: WhiteningModel,
    /// `Z × n`, acting on whitened inputs.
    pub encoder: Matrix,
    /// `n × Z`, producing whitened outputs.
    pub decoder: Matrix,
    pub sigma_w2: f64,
    pub delta1: f64,
    pub epsilon: f64,
}

impl LinearCodec {
    pub fn input_dim(&self) -> usize {
        self.encoder.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.rows()
    }

    /// Laplace scale `b = Δ1/ε`.
    pub fn noise_scale(&self) -> f64 {
        if self.delta1 == 0.0 {
            0.0
        } else {
            self.delta1 / self.epsilon
        }
    }

    /// `φ = E·L⁻¹(x − μ)`, the quantity whose sensitivity is calibrated.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.matvec(&self.whitening.whiten(x)?)
    }

    pub fn decode(&self, noisy: &[f64]) -> Result<Vec<f64>> {
        self.whitening.unwhiten(&self.decoder.matvec(noisy)?)
    }

    /// One privatized release of `x`.
    pub fn anonymize(&self, x: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let mut phi = self.encode(x)?;
        let mut w = vec![0.0; phi.len()];
        fill_laplace(rng, self.noise_scale(), &mut w);
        numerics::axpy(1.0, &w, &mut phi);
        self.decode(&phi)
    }

    /// Privatizes every row; row `i` draws from a stream derived from
    /// `(seed, i)` so the output does not depend on evaluation order.
    pub fn anonymize_data(&self, data: &DataMatrix, seed: u64) -> Result<DataMatrix> {
        let mut i = 0u64;
        let out = data.matrix().map_rows(self.input_dim(), |r| {
            let mut s = rng::stream(rng::derive_seed(seed, i));
            i += 1;
            self.anonymize(r, &mut s)
        })?;
        DataMatrix::new(out)
    }

    /// Expected task loss over whitened data with identity covariance:
    /// `‖P(DE − I)‖²_F + σ_w²‖PD‖²_F`.
    pub fn expected_loss(&self, p: &Matrix) -> Result<f64> {
        decoder_loss(p, &self.encoder, &self.decoder, self.sigma_w2)
    }

    /// Monte-Carlo estimate of `E‖K(x̂ − x)‖²` over `data` and fresh noise.
    pub fn monte_carlo_loss(&self, k: &Matrix, data: &DataMatrix, draws: usize, seed: u64) -> Result<MonteCarloLoss> {
        if k.cols() != self.input_dim() || data.dim() != self.input_dim() {
            return Err(Error::dims("task matrix, data and codec dimensions disagree"));
        }
        let n = self.input_dim();
        let mut acc = LossAccumulator::new(draws, n);
        let mut diff = vec![0.0; n];
        for (i, x) in data.rows().enumerate() {
            let mut s = rng::stream(rng::derive_seed(seed, i as u64));
            acc.begin_sample();
            for _ in 0..draws {
                let xh = self.anonymize(x, &mut s)?;
                for ((d, a), b) in diff.iter_mut().zip(&xh).zip(x) {
                    *d = a - b;
                }
                let kd = k.matvec(&diff)?;
                acc.push(numerics::dot(&kd, &kd), &diff);
            }
            acc.end_sample();
        }
        Ok(acc.finish())
    }
}

/// Result of a Monte-Carlo loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloLoss {
    pub mean: f64,
    /// Standard error due to the noise draws.
    pub std_error: f64,
    /// Mean squared reconstruction error per input coordinate.
    pub per_dim_mse: Vec<f64>,
}

/// Streaming mean / noise-only standard error.
///
/// The standard error treats the data set as fixed: per sample the variance
/// across noise draws is estimated, and `SE² = Σ_i s_i² / (k·N²)`. With a
/// single draw per sample the variance across all losses is used instead.
pub(crate) struct LossAccumulator {
    draws: usize,
    samples: usize,
    total: f64,
    within_var: f64,
    all: Vec<f64>,
    cur: Vec<f64>,
    per_dim: Vec<f64>,
}

impl LossAccumulator {
    pub(crate) fn new(draws: usize, dim: usize) -> Self {
        Self {
            draws: draws.max(1),
            samples: 0,
            total: 0.0,
            within_var: 0.0,
            all: Vec::new(),
            cur: Vec::with_capacity(draws),
            per_dim: vec![0.0; dim],
        }
    }

    pub(crate) fn begin_sample(&mut self) {
        self.cur.clear();
    }

    pub(crate) fn push(&mut self, loss: f64, diff: &[f64]) {
        self.cur.push(loss);
        for (p, d) in self.per_dim.iter_mut().zip(diff) {
            *p += d * d;
        }
    }

    pub(crate) fn end_sample(&mut self) {
        let k = self.cur.len() as f64;
        let m = self.cur.iter().sum::<f64>() / k;
        self.total += m;
        if self.cur.len() > 1 {
            // shifted by the first draw so identical draws give exactly zero
            let l0 = self.cur[0];
            let (s1, s2) = self.cur.iter().fold((0.0, 0.0), |(a, b), l| (a + (l - l0), b + (l - l0) * (l - l0)));
            self.within_var += ((s2 - s1 * s1 / k) / (k - 1.0)).max(0.0);
        } else {
            self.all.extend_from_slice(&self.cur);
        }
        self.samples += 1;
    }

    pub(crate) fn finish(self) -> MonteCarloLoss {
        let n = self.samples as f64;
        let mean = self.total / n;
        let std_error = if self.draws > 1 {
            (self.within_var / self.draws as f64).sqrt() / n
        } else if self.all.len() > 1 {
            let v = self.all.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / (n - 1.0);
            (v / n).sqrt()
        } else {
            0.0
        };
        let denom = n * self.draws as f64;
        MonteCarloLoss { mean, std_error, per_dim_mse: self.per_dim.into_iter().map(|v| v / denom).collect() }
    }
}

/// Spectrum, scale allocation, and loss figures behind a linear codec.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub lambda: Vec<f64>,
    /// Number of directions with positive scale (`Z′`).
    pub effective_dim: usize,
    /// Squared encoder scales, one per input direction; zero beyond `Z′`.
    pub sigma2: Vec<f64>,
    /// Total scale `Σσ_i²`.
    pub total_scale: f64,
    pub sigma_w2: f64,
    pub delta1: f64,
    pub epsilon: f64,
    pub predicted_loss: f64,
    /// Sphere-optimal loss at `r_min`.
    pub lower_bound: f64,
    /// Sphere-optimal loss at `r_max`.
    pub upper_bound: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// Some water-filling test expression was within [`TIE_TOL`] of zero.
    pub tie: bool,
    /// The task has no energy (`λ = 0`); the codec transmits nothing.
    pub degenerate: bool,
}

impl SolveReport {
    /// Key-value text rendering.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        format!(
            "lambda={}\nz_prime={}\nsigma2={}\nm={:?}\nsigma_w2={:?}\ndelta1={:?}\nepsilon={:?}\n\
             predicted_loss={:?}\nlower_bound={:?}\nupper_bound={:?}\nr_min={:?}\nr_max={:?}\ntie={}\ndegenerate={}\n",
            list(&self.lambda),
            self.effective_dim,
            list(&self.sigma2),
            self.total_scale,
            self.sigma_w2,
            self.delta1,
            self.epsilon,
            self.predicted_loss,
            self.lower_bound,
            self.upper_bound,
            self.r_min,
            self.r_max,
            self.tie,
            self.degenerate
        )
    }
}

/// `D = Eᵀ(EEᵀ + σ_w²I)⁻¹`.
pub fn optimal_decoder(e: &Matrix, sigma_w2: f64) -> Result<Matrix> {
    if !(sigma_w2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be non-negative, got {sigma_w2}")));
    }
    let mut g = e.transpose().gram();
    g.add_diag(sigma_w2);
    // (EEᵀ + σ_w²I)⁻¹E, transposed, is Eᵀ(EEᵀ + σ_w²I)⁻¹ by symmetry
    match numerics::solve_spd(&g, e) {
        Ok(x) => Ok(x.transpose()),
        Err(Error::NotPositiveDefinite { .. }) => Err(Error::SingularNoiselessEncoder),
        Err(other) => Err(other),
    }
}

/// `Tr(PᵀP) − Tr(PᵀP·Eᵀ(EEᵀ + σ_w²I)⁻¹E)`, the loss at the optimal decoder.
pub fn encoder_loss(p: &Matrix, e: &Matrix, sigma_w2: f64) -> Result<f64> {
    if e.cols() != p.cols() {
        return Err(Error::dims("encoder and task act on different dimensions"));
    }
    let d = optimal_decoder(e, sigma_w2)?;
    let ptp = p.gram();
    let proj = d.matmul(e)?;
    let inner: f64 = (0..ptp.rows())
        .map(|i| (0..ptp.cols()).map(|j| ptp[(i, j)] * proj[(j, i)]).sum::<f64>())
        .sum();
    Ok(ptp.trace() - inner)
}

/// Loss of an arbitrary decoder on identity-covariance inputs:
/// `‖P(DE − I)‖²_F + σ_w²‖PD‖²_F`.
pub fn decoder_loss(p: &Matrix, e: &Matrix, d: &Matrix, sigma_w2: f64) -> Result<f64> {
    let n = p.cols();
    if e.cols() != n || d.rows() != n || d.cols() != e.rows() {
        return Err(Error::dims("decoder, encoder and task shapes disagree"));
    }
    let mut de = d.matmul(e)?;
    for i in 0..n {
        de[(i, i)] -= 1.0;
    }
    let bias = p.matmul(&de)?.frobenius().powi(2);
    let noise = p.matmul(d)?.frobenius().powi(2);
    Ok(bias + sigma_w2 * noise)
}

/// `Σ_i λ_i·σ_w²/(σ_i² + σ_w²)`.
///
/// A direction with `σ_i² = 0` contributes `λ_i` (nothing is transmitted);
/// with `σ_w² = 0` and `σ_i² > 0` it contributes `0`.
pub fn loss_given_sigmas(lambda: &[f64], sigma2: &[f64], sigma_w2: f64) -> Result<f64> {
    if lambda.len() != sigma2.len() {
        return Err(Error::dims(format!("{} eigenvalues but {} scales", lambda.len(), sigma2.len())));
    }
    if lambda.iter().chain(sigma2).any(|v| !(*v >= 0.0)) || !(sigma_w2 >= 0.0) {
        return Err(Error::InvalidArgument("eigenvalues and variances must be non-negative".into()));
    }
    Ok(lambda
        .iter()
        .zip(sigma2)
        .map(|(&l, &s)| if s == 0.0 { l } else { l * sigma_w2 / (s + sigma_w2) })
        .sum())
}

/// `8r²/ε²`: the noise-to-scale ratio `σ_w²/M` of a sphere-calibrated encoder.
pub fn noise_ratio(r: f64, epsilon: f64) -> f64 {
    8.0 * r * r / (epsilon * epsilon)
}

/// Optimal scale allocation under the hypersphere assumption.
///
/// `Z′` is the largest index with
/// `√λ_Z′ / Σ_{i≤Z′}√λ_i · (1 + Z′c) − c > 0`, `c = 8r²/ε²`; then
/// `σ_i² = M·(√λ_i / Σ√λ · (1 + Z′c) − c)` for `i ≤ Z′` and the loss is
/// `c/(1 + Z′c)·(Σ_{i≤Z′}√λ_i)² + Σ_{i>Z′}λ_i`.
pub fn kkt_sigmas(lambda: &[f64], r: f64, epsilon: f64, total_scale: f64) -> Result<SolveReport> {
    if !(epsilon > 0.0) {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("radius must be finite and non-negative, got {r}")));
    }
    if !(total_scale > 0.0) || !total_scale.is_finite() {
        return Err(Error::InvalidArgument(format!("total scale must be positive, got {total_scale}")));
    }
    if lambda.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidArgument("eigenvalues must be finite and non-negative".into()));
    }
    if lambda.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument("eigenvalues must be sorted in non-increasing order".into()));
    }
    if lambda.first().map_or(true, |l| *l == 0.0) {
        return Err(Error::AllEigenvaluesZero);
    }

    let c = noise_ratio(r, epsilon);
    let roots: Vec<f64> = lambda.iter().map(|l| l.sqrt()).collect();
    let mut z_prime = 0;
    let mut tie = false;
    let mut prefix = 0.0;
    for (i, &root) in roots.iter().enumerate() {
        prefix += root;
        let k = (i + 1) as f64;
        let expr = root / prefix * (1.0 + k * c) - c;
        if expr.abs() < TIE_TOL {
            tie = true;
        }
        if expr > 0.0 {
            z_prime = i + 1;
        }
    }
    let head: f64 = roots[..z_prime].iter().sum();
    let zc = 1.0 + z_prime as f64 * c;
    let sigma2: Vec<f64> = roots
        .iter()
        .enumerate()
        .map(|(i, &root)| if i < z_prime { (total_scale * (root / head * zc - c)).max(0.0) } else { 0.0 })
        .collect();
    let tail: f64 = lambda[z_prime..].iter().sum();
    let loss = c / zc * head * head + tail;
    let sigma_w2 = c * total_scale;
    Ok(SolveReport {
        lambda: lambda.to_vec(),
        effective_dim: z_prime,
        total_scale: sigma2.iter().sum(),
        sigma2,
        sigma_w2,
        delta1: 2.0 * r * total_scale.sqrt(),
        epsilon,
        predicted_loss: loss,
        lower_bound: loss,
        upper_bound: loss,
        r_min: r,
        r_max: r,
        tie,
        degenerate: false,
    })
}

/// Sphere-optimal loss `L(r; λ, ε)`; zero when the task has no energy.
pub fn sphere_optimal_loss(lambda: &[f64], r: f64, epsilon: f64) -> Result<f64> {
    let mut sorted = lambda.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    match kkt_sigmas(&sorted, r, epsilon, 1.0) {
        Ok(rep) => Ok(rep.predicted_loss),
        Err(Error::AllEigenvaluesZero) => Ok(0.0),
        Err(e) => Err(e),
    }
}

fn check_inputs(model: &WhiteningModel, task: &WhitenedTask, whitened: &DataMatrix, epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    let n = model.dim();
    if task.dim() != n || whitened.dim() != n {
        return Err(Error::dims(format!(
            "whitening has dimension {n}, task {}, data {}",
            task.dim(),
            whitened.dim()
        )));
    }
    Ok(())
}

/// Rows `0..z` of `diag(scales)·Qᵀ`.
fn scaled_projection(q: &Matrix, scales: &[f64]) -> Matrix {
    Matrix::from_fn(scales.len(), q.rows(), |i, j| scales[i] * q[(j, i)])
}

fn empirical_sensitivity(whitened: &DataMatrix, e: &Matrix) -> Result<f64> {
    let encoded = whitened.matrix().matmul(&e.transpose())?;
    Ok(mechanism::sensitivity_exact(&encoded)?.delta1)
}

/// The task-aware linear codec.
///
/// 1. Bound the whitened data between spheres `r_min ≤ ‖h‖ ≤ r_max`.
/// 2. Design `E = diag(σ)·Qᵀ` for the sphere of radius `r_max` with
///    `Σσ_i² = 1`, keeping only the `Z′` rows with positive scale.
/// 3. Recalibrate `σ_w²` from the exact sensitivity of the encoded data and
///    take the optimal decoder for it.
pub fn solve_task_aware(
    model: &WhiteningModel,
    task: &WhitenedTask,
    whitened: &DataMatrix,
    epsilon: f64,
) -> Result<(LinearCodec, SolveReport)> {
    check_inputs(model, task, whitened, epsilon)?;
    let n = model.dim();
    let bounds = radius_bounds(whitened)?;

    let design = match kkt_sigmas(&task.lambda, bounds.r_max, epsilon, 1.0) {
        Ok(rep) => rep,
        Err(Error::AllEigenvaluesZero) => {
            let codec = LinearCodec {
                approach: Approach::TaskAware,
                whitening: model.clone(),
                encoder: Matrix::zeros(1, n),
                decoder: Matrix::zeros(n, 1),
                sigma_w2: 0.0,
                delta1: 0.0,
                epsilon,
            };
            let report = SolveReport {
                lambda: task.lambda.clone(),
                effective_dim: 0,
                sigma2: vec![0.0; n],
                total_scale: 0.0,
                sigma_w2: 0.0,
                delta1: 0.0,
                epsilon,
                predicted_loss: 0.0,
                lower_bound: 0.0,
                upper_bound: 0.0,
                r_min: bounds.r_min,
                r_max: bounds.r_max,
                tie: false,
                degenerate: true,
            };
            return Ok((codec, report));
        }
        Err(e) => return Err(e),
    };

    let z = design.effective_dim;
    let scales: Vec<f64> = design.sigma2[..z].iter().map(|s| s.sqrt()).collect();
    let encoder = scaled_projection(&task.q, &scales);
    let delta1 = empirical_sensitivity(whitened, &encoder)?;
    let sigma_w2 = mechanism::noise_variance(delta1, epsilon);
    let decoder = optimal_decoder(&encoder, sigma_w2)?;
    let predicted = loss_given_sigmas(&task.lambda, &design.sigma2, sigma_w2)?;

    let report = SolveReport {
        sigma_w2,
        delta1,
        predicted_loss: predicted,
        lower_bound: sphere_optimal_loss(&task.lambda, bounds.r_min, epsilon)?,
        upper_bound: design.predicted_loss,
        r_min: bounds.r_min,
        r_max: bounds.r_max,
        ..design
    };
    let codec = LinearCodec {
        approach: Approach::TaskAware,
        whitening: model.clone(),
        encoder,
        decoder,
        sigma_w2,
        delta1,
        epsilon,
    };
    Ok((codec, report))
}

/// Task-agnostic benchmark: noise is added to the centred data itself
/// (encoder `E = L` in whitened coordinates), then decoded optimally.
pub fn solve_task_agnostic(
    model: &WhiteningModel,
    task: &WhitenedTask,
    whitened: &DataMatrix,
    epsilon: f64,
) -> Result<(LinearCodec, f64)> {
    check_inputs(model, task, whitened, epsilon)?;
    let encoder = model.factor().clone();
    let delta1 = empirical_sensitivity(whitened, &encoder)?;
    let sigma_w2 = mechanism::noise_variance(delta1, epsilon);
    let decoder = optimal_decoder(&encoder, sigma_w2)?;
    let loss = encoder_loss(&task.p, &encoder, sigma_w2)?;
    let codec = LinearCodec {
        approach: Approach::TaskAgnostic,
        whitening: model.clone(),
        encoder,
        decoder,
        sigma_w2,
        delta1,
        epsilon,
    };
    Ok((codec, loss))
}

/// Privacy-agnostic benchmark: project onto the top `z` eigen-directions of
/// `PᵀP` with equal scales, then calibrate noise and decode optimally.
pub fn solve_privacy_agnostic(
    model: &WhiteningModel,
    task: &WhitenedTask,
    whitened: &DataMatrix,
    epsilon: f64,
    z: usize,
) -> Result<(LinearCodec, f64)> {
    check_inputs(model, task, whitened, epsilon)?;
    let n = model.dim();
    if z == 0 || z > n {
        return Err(Error::BadLatentDim { z, n });
    }
    let s2 = 1.0 / z as f64;
    let encoder = scaled_projection(&task.q, &vec![s2.sqrt(); z]);
    let delta1 = empirical_sensitivity(whitened, &encoder)?;
    let sigma_w2 = mechanism::noise_variance(delta1, epsilon);
    let decoder = optimal_decoder(&encoder, sigma_w2)?;
    let sigma2: Vec<f64> = (0..n).map(|i| if i < z { s2 } else { 0.0 }).collect();
    let loss = loss_given_sigmas(&task.lambda, &sigma2, sigma_w2)?;
    let codec = LinearCodec {
        approach: Approach::PrivacyAgnostic,
        whitening: model.clone(),
        encoder,
        decoder,
        sigma_w2,
        delta1,
        epsilon,
    };
    Ok((codec, loss))
}

/// One row of a theoretical loss table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub inv_epsilon: f64,
    pub task_aware: f64,
    pub task_agnostic: f64,
    pub privacy_agnostic: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

pub const CURVE_HEADER: [&str; 7] = [
    "epsilon",
    "inv_epsilon",
    "loss_task_aware",
    "loss_task_agnostic",
    "loss_privacy_agnostic",
    "lower_bound",
    "upper_bound",
];

/// Closed-form losses of the three designs with `L = I` on a sphere of
/// radius `r`, for every `ε` in the grid.
pub fn theory_curves(lambda: &[f64], r: f64, epsilons: &[f64], z_pa: usize) -> Result<Vec<CurvePoint>> {
    theory_curves_banded(lambda, r, r, epsilons, z_pa)
}

/// As [`theory_curves`], with the task-aware band evaluated at
/// `r_min ≤ r_max` and the point curves at `r_max`.
pub fn theory_curves_banded(
    lambda: &[f64],
    r_min: f64,
    r_max: f64,
    epsilons: &[f64],
    z_pa: usize,
) -> Result<Vec<CurvePoint>> {
    let n = lambda.len();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if z_pa == 0 || z_pa > n {
        return Err(Error::BadLatentDim { z: z_pa, n });
    }
    if !(r_min >= 0.0) || r_min > r_max {
        return Err(Error::InvalidArgument(format!("need 0 <= r_min <= r_max, got {r_min} and {r_max}")));
    }
    let mut sorted = lambda.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().sum();
    let head: f64 = sorted[..z_pa].iter().sum();

    epsilons
        .iter()
        .map(|&eps| {
            if !(eps > 0.0) {
                return Err(Error::NonPositiveEpsilon(eps));
            }
            let c = noise_ratio(r_max, eps);
            let nc = n as f64 * c;
            let zc = z_pa as f64 * c;
            Ok(CurvePoint {
                epsilon: eps,
                inv_epsilon: 1.0 / eps,
                task_aware: sphere_optimal_loss(&sorted, r_max, eps)?,
                task_agnostic: nc / (1.0 + nc) * total,
                privacy_agnostic: zc / (1.0 + zc) * head + (total - head),
                lower_bound: sphere_optimal_loss(&sorted, r_min, eps)?,
                upper_bound: sphere_optimal_loss(&sorted, r_max, eps)?,
            })
        })
        .collect()
}

/// Writes a curve table as CSV.
pub fn write_curves_csv(path: impl AsRef<std::path::Path>, rows: &[CurvePoint]) -> Result<()> {
    let path = path.as_ref();
    let io = |source| Error::Io { path: path.into(), source };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(CURVE_HEADER).map_err(|e| io(e.into()))?;
    for p in rows {
        let fields = [
            p.epsilon,
            p.inv_epsilon,
            p.task_aware,
            p.task_agnostic,
            p.privacy_agnostic,
            p.lower_bound,
            p.upper_bound,
        ];
        w.write_record(fields.iter().map(|v| format!("{v:?}"))).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{on_sphere, random_orthogonal};
    use crate::whitening::build_task;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    /// Scalar decoder minimising `(1 − dσ)²λ + d²σ_w²λ` by grid search.
    fn grid_scalar_decoder(sigma: f64, sigma_w2: f64) -> (f64, f64) {
        (0..=200_000)
            .map(|k| {
                let d = k as f64 / 100_000.0;
                (d, (1.0 - d * sigma).powi(2) + d * d * sigma_w2)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
    }

    #[test]
    fn scalar_decoder_matches_grid() {
        let d = optimal_decoder(&Matrix::identity(1), 1.0).unwrap();
        assert!(close(d[(0, 0)], 0.5, 1e-15));
        let (gd, gl) = grid_scalar_decoder(1.0, 1.0);
        assert!((gd - 0.5).abs() < 1e-5 && (gl - 0.5).abs() < 1e-9);
        let p = Matrix::identity(1);
        assert!(close(encoder_loss(&p, &Matrix::identity(1), 1.0).unwrap(), 0.5, 1e-12));
    }

    #[test]
    fn noiseless_invertible_decoder_is_inverse() {
        let e = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.5, 3.0]]).unwrap();
        let d = optimal_decoder(&e, 0.0).unwrap();
        let id = d.matmul(&e).unwrap();
        assert!(id.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-12);
        let p = Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        assert!(encoder_loss(&p, &e, 0.0).unwrap().abs() < 1e-12);

        let singular = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(matches!(optimal_decoder(&singular, 0.0), Err(Error::SingularNoiselessEncoder)));
    }

    #[test]
    fn diagonal_decoder_example() {
        let p = Matrix::from_diag(&[2.0, 1.0]);
        let e = Matrix::identity(2);
        let d = optimal_decoder(&e, 1.0).unwrap();
        assert!(d.sub(&Matrix::from_diag(&[0.5, 0.5])).unwrap().max_abs() < 1e-15);
        let l6 = encoder_loss(&p, &e, 1.0).unwrap();
        assert!(close(l6, 2.5, 1e-12));
        // coordinatewise λσ_w²/(σ² + σ_w²)
        let scalar = loss_given_sigmas(&[4.0, 1.0], &[1.0, 1.0], 1.0).unwrap();
        assert!(close(scalar, 2.5, 1e-12));
        assert!(close(decoder_loss(&p, &e, &d, 1.0).unwrap(), 2.5, 1e-12));
    }

    #[test]
    fn decoder_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let n = rng.gen_range(1..=4);
            let z = rng.gen_range(1..=4);
            let m = rng.gen_range(1..=4);
            let e = Matrix::from_fn(z, n, |_, _| rng.gen_range(-2.0..2.0));
            let p = Matrix::from_fn(m, n, |_, _| rng.gen_range(-2.0..2.0));
            let s = rng.gen_range(0.01..3.0);
            let d = optimal_decoder(&e, s).unwrap();
            let base = decoder_loss(&p, &e, &d, s).unwrap();
            assert!(close(base, encoder_loss(&p, &e, s).unwrap(), 1e-9));
            let delta = Matrix::from_fn(n, z, |_, _| rng.gen_range(-1.0..1.0));
            let delta = delta.scale(1e-3 / delta.frobenius());
            let moved = decoder_loss(&p, &e, &d.add(&delta).unwrap(), s).unwrap();
            assert!(moved >= base - 1e-8);
        }
    }

    #[test]
    fn sigma_loss_conventions() {
        assert_eq!(loss_given_sigmas(&[3.0, 2.0], &[1.0, 0.5], 0.0).unwrap(), 0.0);
        assert_eq!(loss_given_sigmas(&[3.0, 2.0], &[0.0, 0.0], 1.0).unwrap(), 5.0);
        assert_eq!(loss_given_sigmas(&[3.0, 2.0], &[0.0, 0.0], 0.0).unwrap(), 5.0);
        assert_eq!(loss_given_sigmas(&[4.0, 1.0], &[1.0, 0.0], 1.0).unwrap(), 3.0);
        assert!(matches!(loss_given_sigmas(&[1.0], &[1.0, 2.0], 1.0), Err(Error::DimensionMismatch(_))));
    }

    /// Best `loss_given_sigmas` value over a grid on the simplex `Σσ² = M` in 2-D.
    fn simplex_grid_2d(lambda: &[f64; 2], sigma_w2: f64) -> f64 {
        (0..=10_000)
            .map(|k| {
                let a = k as f64 / 10_000.0;
                loss_given_sigmas(lambda, &[a, 1.0 - a], sigma_w2).unwrap()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn kkt_examples() {
        // 8r²/ε² = 1 with r = 1 needs ε = √8
        let eps = 8f64.sqrt();
        let rep = kkt_sigmas(&[4.0, 1.0], 1.0, eps, 1.0).unwrap();
        assert_eq!(rep.effective_dim, 1);
        assert!(rep.tie, "Z′ = 2 expression is exactly zero");
        assert!(close(rep.sigma2[0], 1.0, 1e-12) && rep.sigma2[1] == 0.0);
        assert!(close(rep.predicted_loss, 3.0, 1e-12));
        assert!(close(rep.sigma_w2, 1.0, 1e-12));
        assert!(simplex_grid_2d(&[4.0, 1.0], 1.0) >= rep.predicted_loss - 1e-9);

        let rep = kkt_sigmas(&[4.0, 0.0, 0.0, 0.0], 1.0, eps, 1.0).unwrap();
        assert_eq!(rep.effective_dim, 1);
        assert!(close(rep.predicted_loss, 2.0, 1e-12));

        let rep = kkt_sigmas(&[4.0, 1.0, 0.0], 1.0, f64::INFINITY, 1.0).unwrap();
        assert_eq!(rep.effective_dim, 2);
        assert_eq!(rep.predicted_loss, 0.0);
        let rep = kkt_sigmas(&[4.0, 1.0, 0.5], 1.0, 1e9, 1.0).unwrap();
        assert_eq!(rep.effective_dim, 3);
        assert!(rep.predicted_loss < 1e-15);

        assert!(matches!(kkt_sigmas(&[0.0, 0.0], 1.0, 1.0, 1.0), Err(Error::AllEigenvaluesZero)));
        assert!(matches!(kkt_sigmas(&[1.0, 2.0], 1.0, 1.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(kkt_sigmas(&[1.0], 1.0, 0.0, 1.0), Err(Error::NonPositiveEpsilon(_))));
    }

    #[test]
    fn kkt_report_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..500 {
            let n = rng.gen_range(1..=6);
            let mut lambda: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            lambda.sort_by(|a, b| b.total_cmp(a));
            let r = rng.gen_range(0.1..3.0);
            let eps = rng.gen_range(0.1..10.0);
            let m = rng.gen_range(0.1..5.0);
            let rep = kkt_sigmas(&lambda, r, eps, m).unwrap();
            assert!(close(rep.total_scale, m, 1e-9));
            assert!(rep.sigma2[..rep.effective_dim].iter().all(|s| *s > 0.0));
            assert!(rep.sigma2[rep.effective_dim..].iter().all(|s| *s == 0.0));
            assert!(rep.sigma2.windows(2).all(|w| w[0] >= w[1]));
            let direct = loss_given_sigmas(&lambda, &rep.sigma2, rep.sigma_w2).unwrap();
            assert!(close(direct, rep.predicted_loss, 1e-9));
            // scale invariance in M
            let unit = kkt_sigmas(&lambda, r, eps, 1.0).unwrap();
            assert!(close(unit.predicted_loss, rep.predicted_loss, 1e-12));
        }
    }

    #[test]
    fn sphere_loss_monotone() {
        let lambda = [5.0, 2.0, 1.0, 0.3];
        let mut prev = 0.0;
        for k in 1..100 {
            let r = k as f64 * 0.05;
            let l = sphere_optimal_loss(&lambda, r, 1.0).unwrap();
            assert!(l >= prev - 1e-12);
            prev = l;
        }
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let eps = k as f64 * 0.1;
            let l = sphere_optimal_loss(&lambda, 1.0, eps).unwrap();
            assert!(l <= prev + 1e-12);
            prev = l;
        }
        assert_eq!(sphere_optimal_loss(&[0.0, 0.0], 1.0, 1.0).unwrap(), 0.0);
    }

    fn sphere_with_extremes(rng: &mut ChaCha8Rng, n: usize, r: f64, count: usize, extra: &[Vec<f64>]) -> DataMatrix {
        let mut rows: Vec<Vec<f64>> = (0..count).map(|_| on_sphere(rng, n, r)).collect();
        for v in extra {
            rows.push(v.iter().map(|x| x * r).collect());
            rows.push(v.iter().map(|x| -x * r).collect());
        }
        DataMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn task_aware_on_circle_hits_sphere_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = sphere_with_extremes(&mut rng, 2, 1.0, 200, &[vec![H, H]]);
        let model = WhiteningModel::identity(2);
        let task = build_task(&model, &Matrix::identity(2)).unwrap();
        let eps = 8f64.sqrt();
        let (codec, rep) = solve_task_aware(&model, &task, &data, eps).unwrap();
        let l1 = sphere_optimal_loss(&task.lambda, 1.0, eps).unwrap();
        assert_eq!(rep.effective_dim, 2);
        assert!(close(rep.delta1, 2.0, 1e-12));
        assert!(close(rep.predicted_loss, l1, 1e-9));
        assert!(close(rep.upper_bound, l1, 1e-9));
        assert!(rep.lower_bound <= rep.predicted_loss + 1e-9);
        assert!(close(codec.expected_loss(&task.p).unwrap(), rep.predicted_loss, 1e-9));
        assert_eq!((codec.latent_dim(), codec.input_dim()), (2, 2));
    }

    #[test]
    fn task_aware_two_point_line() {
        let data = DataMatrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let model = WhiteningModel::identity(1);
        let task = build_task(&model, &Matrix::identity(1)).unwrap();
        let (codec, rep) = solve_task_aware(&model, &task, &data, 2.0).unwrap();
        let s1 = rep.sigma2[0].sqrt();
        assert!(close(rep.delta1, 2.0 * s1, 1e-12));
        assert!(close(codec.noise_scale(), s1, 1e-12));
        assert!(close(rep.sigma_w2, 2.0 * s1 * s1, 1e-12));
        assert!(close(rep.predicted_loss, 2.0 / 3.0, 1e-12));
        // scalar grid oracle over the decoder gain
        let (_, gl) = grid_scalar_decoder(s1, rep.sigma_w2);
        assert!((gl - 2.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn zero_task_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = sphere_with_extremes(&mut rng, 3, 1.0, 20, &[]);
        let model = WhiteningModel::identity(3);
        let task = build_task(&model, &Matrix::zeros(2, 3)).unwrap();
        let (codec, rep) = solve_task_aware(&model, &task, &data, 1.0).unwrap();
        assert!(rep.degenerate);
        assert_eq!((rep.effective_dim, rep.predicted_loss), (0, 0.0));
        assert_eq!(codec.noise_scale(), 0.0);
    }

    #[test]
    fn task_agnostic_examples() {
        let data = DataMatrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let model = WhiteningModel::identity(1);
        let task = build_task(&model, &Matrix::from_diag(&[3.0])).unwrap();
        let (codec, loss) = solve_task_agnostic(&model, &task, &data, 2.0).unwrap();
        assert_eq!((codec.delta1, codec.sigma_w2), (2.0, 2.0));
        assert!(close(loss, 2.0 / 3.0 * 9.0, 1e-12));

        let (_, loss) = solve_task_agnostic(&model, &task, &data, 1e12).unwrap();
        assert!(loss < 1e-20);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = sphere_with_extremes(&mut rng, 4, 1.0, 100, &[vec![0.5; 4]]);
        let model = WhiteningModel::identity(4);
        let task = build_task(&model, &Matrix::from_diag(&[2.0, 0.0, 0.0, 0.0])).unwrap();
        let (_, loss) = solve_task_agnostic(&model, &task, &data, 8f64.sqrt()).unwrap();
        assert!(close(loss, 3.2, 1e-12), "{loss}");
    }

    #[test]
    fn privacy_agnostic_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = WhiteningModel::identity(4);
        let task = build_task(&model, &Matrix::from_diag(&[2.0, 0.0, 0.0, 0.0])).unwrap();
        let data = sphere_with_extremes(&mut rng, 4, 1.0, 100, &[vec![H, H, 0.0, 0.0]]);
        let (codec, loss) = solve_privacy_agnostic(&model, &task, &data, 8f64.sqrt(), 2).unwrap();
        assert_eq!(codec.latent_dim(), 2);
        assert!(close(loss, 8.0 / 3.0, 1e-12), "{loss}");
        assert!(close(codec.expected_loss(&task.p).unwrap(), loss, 1e-9));

        let (_, loss) = solve_privacy_agnostic(&model, &task, &data, 1e12, 1).unwrap();
        assert!(loss < 1e-20);
        assert!(matches!(
            solve_privacy_agnostic(&model, &task, &data, 1.0, 5),
            Err(Error::BadLatentDim { z: 5, n: 4 })
        ));
        assert!(matches!(
            solve_privacy_agnostic(&model, &task, &data, 1.0, 0),
            Err(Error::BadLatentDim { .. })
        ));
    }

    #[test]
    fn privacy_agnostic_matches_task_aware_only_for_equal_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = WhiteningModel::identity(3);
        let extremes = [vec![1.0 / 3f64.sqrt(); 3]];
        let data = sphere_with_extremes(&mut rng, 3, 1.0, 200, &extremes);
        let eps = 2.0;

        let flat = build_task(&model, &Matrix::identity(3)).unwrap();
        let (_, aware) = solve_task_aware(&model, &flat, &data, eps).unwrap();
        let (_, pa) = solve_privacy_agnostic(&model, &flat, &data, eps, 3).unwrap();
        assert!(close(aware.predicted_loss, pa, 1e-9));

        let skew = build_task(&model, &Matrix::from_diag(&[3.0, 1.0, 0.5])).unwrap();
        let (_, aware) = solve_task_aware(&model, &skew, &data, eps).unwrap();
        let (_, pa) = solve_privacy_agnostic(&model, &skew, &data, eps, 3).unwrap();
        assert!(aware.predicted_loss < pa - 1e-6);
    }

    #[test]
    fn figure_setting_one() {
        let rows = theory_curves(&[4.0, 0.0, 0.0, 0.0], 1.0, &[8f64.sqrt()], 2).unwrap();
        let p = rows[0];
        assert!((p.task_aware - 2.0).abs() < 1e-9);
        assert!((p.task_agnostic - 3.2).abs() < 1e-9);
        assert!((p.privacy_agnostic - 8.0 / 3.0).abs() < 1e-9);
        assert_eq!(p.lower_bound, p.upper_bound);
    }

    #[test]
    fn figure_properties() {
        let grid: Vec<f64> = (1..=60).map(|k| 0.1 * k as f64).collect();
        for tail in [0.0, 1.0, 2.0] {
            let lambda = [4.0, tail, tail, tail];
            let rows = theory_curves(&lambda, 1.0, &grid, 2).unwrap();
            let total: f64 = lambda.iter().sum();
            for w in rows.windows(2) {
                assert!(w[1].task_aware <= w[0].task_aware + 1e-12);
                assert!(w[1].task_agnostic <= w[0].task_agnostic + 1e-12);
                assert!(w[1].privacy_agnostic <= w[0].privacy_agnostic + 1e-12);
            }
            for p in &rows {
                assert!(p.task_aware <= p.task_agnostic + 1e-9);
                assert!(p.task_aware <= p.privacy_agnostic + 1e-9);
                assert!(p.task_agnostic <= total && p.privacy_agnostic <= total);
            }
        }
        let equal = theory_curves(&[2.0; 4], 1.0, &grid, 2).unwrap();
        for p in &equal {
            assert!((p.task_aware - p.task_agnostic).abs() < 1e-9);
        }
        let zero = theory_curves(&[0.0; 4], 1.0, &grid, 2).unwrap();
        assert!(zero.iter().all(|p| p.task_aware == 0.0 && p.task_agnostic == 0.0 && p.privacy_agnostic == 0.0));
        let far = theory_curves(&[4.0, 1.0, 1.0, 1.0], 1.0, &[1e12], 4).unwrap()[0];
        assert!(far.task_aware < 1e-20 && far.task_agnostic < 1e-20 && far.privacy_agnostic < 1e-20);
        assert!(theory_curves(&[1.0], 1.0, &[1.0], 2).is_err());
    }

    #[test]
    fn dominance_on_random_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..300 {
            let n = rng.gen_range(1..=6);
            let lambda: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let r = rng.gen_range(0.1..3.0);
            let z = rng.gen_range(1..=n);
            let eps = [rng.gen_range(0.05..20.0)];
            let p = theory_curves(&lambda, r, &eps, z).unwrap()[0];
            assert!(p.task_aware <= p.task_agnostic + 1e-9);
            assert!(p.task_aware <= p.privacy_agnostic + 1e-9);
        }
    }

    #[test]
    fn monte_carlo_matches_expected_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 3;
        let rows: Vec<Vec<f64>> = (0..3000).map(|_| on_sphere(&mut rng, n, 3f64.sqrt())).collect();
        let data = DataMatrix::from_rows(&rows).unwrap();
        let model = crate::whitening::fit_whitening(&data).unwrap();
        let h = model.whiten_data(&data).unwrap();
        let k = Matrix::from_diag(&[2.0, 1.0, 0.5]).matmul(&random_orthogonal(&mut rng, n)).unwrap();
        let task = build_task(&model, &k).unwrap();
        let (codec, rep) = solve_task_aware(&model, &task, &h, 2.0).unwrap();
        let mc = codec.monte_carlo_loss(&k, &data, 20, 1).unwrap();
        // sample covariance is I over N − 1, the empirical mean uses N
        let expected = rep.predicted_loss;
        assert!((mc.mean - expected).abs() < 4.0 * mc.std_error + 2e-3 * expected, "{} vs {expected}", mc.mean);
        assert_eq!(mc.per_dim_mse.len(), n);

        let quiet = LinearCodec { delta1: 0.0, sigma_w2: 0.0, ..codec.clone() };
        let mc0 = quiet.monte_carlo_loss(&k, &data, 3, 1).unwrap();
        assert_eq!(mc0.std_error, 0.0);

        let a = codec.anonymize_data(&data, 5).unwrap();
        let b = codec.anonymize_data(&data, 5).unwrap();
        assert_eq!(a, b);
    }
}
