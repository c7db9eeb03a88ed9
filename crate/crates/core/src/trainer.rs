//! Training of neural encoder/decoder pairs against a frozen task network.
//!
//! The task-aware loop alternates two steps per epoch: a fixed number of
//! full-batch updates with the noise held fixed, then recomputation of the
//! encoder's ℓ1 sensitivity on the training set and a fresh noise draw at the
//! recalibrated scale. The two benchmark procedures share the same plumbing.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::data_io::{DataMatrix, ExperimentConfig, NormalizationSpec};
use crate::error::{Error, Result};
use crate::linear_solver::{LossAccumulator, MonteCarloLoss};
use crate::mechanism::{fill_laplace, noise_variance, sensitivity_exact, SensitivityReport};
use crate::neural::{self, Activation, Adam, Gradients, LossFn, Net};
use crate::numerics::{self, Matrix};
use crate::rng;

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Encoder, decoder and frozen task network with the calibrated noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct NetCodec {
    pub encoder: Net,
    pub decoder: Net,
    pub task: Net,
    pub loss: LossFn,
    pub delta1: f64,
    pub epsilon: f64,
    /// Input normalization applied before encoding, if the codec was fitted
    /// on normalized data.
    pub normalization: Option<NormalizationSpec>,
}

impl NetCodec {
    pub fn new(encoder: Net, decoder: Net, task: Net, loss: LossFn, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::NonPositiveEpsilon(epsilon));
        }
        if encoder.output_dim() != decoder.input_dim() {
            return Err(Error::dims(format!(
                "encoder emits {} latents but decoder expects {}",
                encoder.output_dim(),
                decoder.input_dim()
            )));
        }
        if decoder.output_dim() != encoder.input_dim() || task.input_dim() != encoder.input_dim() {
            return Err(Error::dims(format!(
                "encoder input {}, decoder output {}, task input {} must agree",
                encoder.input_dim(),
                decoder.output_dim(),
                task.input_dim()
            )));
        }
        if loss == LossFn::BinaryCrossEntropy && task.output_activation() != Activation::Logistic {
            return Err(Error::InvalidArgument("cross-entropy needs a logistic task head".into()));
        }
        Ok(Self { encoder, decoder, task, loss, delta1: 0.0, epsilon, normalization: None })
    }

    /// Randomly initialised encoder and decoder of the given architecture.
    pub fn init(arch: &CodecArch, n: usize, task: Net, loss: LossFn, epsilon: f64, seed: u64) -> Result<Self> {
        let mut s = rng::stream(seed);
        let encoder = arch.build(n, arch.latent, &mut s)?;
        let decoder = arch.build(arch.latent, n, &mut s)?;
        Self::new(encoder, decoder, task, loss, epsilon)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Laplace scale `b = Δ1/ε`.
    pub fn noise_scale(&self) -> f64 {
        if self.delta1 == 0.0 {
            0.0
        } else {
            self.delta1 / self.epsilon
        }
    }

    pub fn sigma_w2(&self) -> f64 {
        noise_variance(self.delta1, self.epsilon)
    }

    pub fn encode_data(&self, data: &DataMatrix) -> Result<Matrix> {
        data.matrix().map_rows(self.latent_dim(), |x| self.encoder.predict(x))
    }

    /// Sets `Δ1` to the exact ℓ1 diameter of the encoded rows.
    pub fn recalibrate(&mut self, data: &DataMatrix) -> Result<SensitivityReport> {
        let rep = sensitivity_exact(&self.encode_data(data)?)?;
        self.delta1 = rep.delta1;
        Ok(rep)
    }

    /// `g_d(g_e(x) + w)` for an explicit noise vector.
    pub fn reconstruct(&self, x: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        let mut phi = self.encoder.predict(x)?;
        if noise.len() != phi.len() {
            return Err(Error::dims(format!("noise of length {} for {} latents", noise.len(), phi.len())));
        }
        numerics::axpy(1.0, noise, &mut phi);
        self.decoder.predict(&phi)
    }

    /// One privatized release of `x` (in the codec's working coordinates).
    pub fn anonymize(&self, x: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let mut w = vec![0.0; self.latent_dim()];
        fill_laplace(rng, self.noise_scale(), &mut w);
        self.reconstruct(x, &w)
    }

    /// Privatizes raw rows: applies the stored normalization, releases, and
    /// maps back. Row `i` uses a stream derived from `(seed, i)`.
    pub fn anonymize_data(&self, data: &DataMatrix, seed: u64) -> Result<DataMatrix> {
        if data.dim() != self.input_dim() {
            return Err(Error::dims(format!("data has {} columns, codec expects {}", data.dim(), self.input_dim())));
        }
        let mut i = 0u64;
        let out = data.matrix().map_rows(self.input_dim(), |r| {
            let mut s = rng::stream(rng::derive_seed(seed, i));
            i += 1;
            match &self.normalization {
                Some(norm) => Ok(norm.invert(&self.anonymize(&norm.apply(r), &mut s)?)),
                None => self.anonymize(r, &mut s),
            }
        })?;
        DataMatrix::new(out)
    }
}

/// Shape shared by encoder and decoder: optional hidden layer, latent width.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecArch {
    pub latent: usize,
    pub hidden: Option<usize>,
    pub hidden_activation: Activation,
}

impl CodecArch {
    /// Single affine layer each way.
    pub fn linear(latent: usize) -> Self {
        Self { latent, hidden: None, hidden_activation: Activation::Identity }
    }

    pub fn one_hidden(latent: usize, width: usize) -> Self {
        Self { latent, hidden: Some(width), hidden_activation: Activation::Relu }
    }

    fn build(&self, input: usize, output: usize, rng: &mut impl Rng) -> Result<Net> {
        match self.hidden {
            None => Net::init(&[input, output], &[Activation::Identity], rng),
            Some(h) => Net::init(&[input, h, output], &[self.hidden_activation, Activation::Identity], rng),
        }
    }
}

/// Optimisation settings for one training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub inner_steps: usize,
    pub lr: f64,
    /// Weight of the `η‖θ_e‖²` penalty.
    pub eta: f64,
    pub seed: u64,
    /// Rotate the latent axes onto the principal axes of the encodings after
    /// each epoch's updates, when that lowers `Δ1`. See [`align_latent`].
    pub align_latent: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be non-negative, got {}", self.eta)));
        }
        Ok(())
    }
}

impl From<&ExperimentConfig> for TrainConfig {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            epochs: c.epochs,
            inner_steps: c.inner_steps,
            lr: c.lr,
            eta: c.eta,
            seed: c.seed,
            align_latent: c.align_latent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss at the last inner step, under that epoch's noise.
    pub loss: f64,
    /// Sensitivity after the epoch's recalibration.
    pub delta1: f64,
    pub sigma_w2: f64,
    pub enc_norm2: f64,
}

/// Per-epoch training log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub const HEADER: &'static str = "epoch,loss,delta1,sigma_w2,enc_norm2";

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{},{:?},{:?},{:?},{:?}", r.epoch, r.loss, r.delta1, r.sigma_w2, r.enc_norm2);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|source| Error::Io { path: path.into(), source })
    }
}

/// Which parameters a step updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Trainable {
    Both,
    DecoderOnly,
}

/// Full-batch optimiser state for one run.
struct Run<'a> {
    data: &'a DataMatrix,
    targets: Matrix,
    enc_opt: Adam,
    dec_opt: Adam,
    enc_params: Vec<f64>,
    dec_params: Vec<f64>,
    cfg: TrainConfig,
}

impl<'a> Run<'a> {
    fn new(data: &'a DataMatrix, codec: &NetCodec, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if data.dim() != codec.input_dim() {
            return Err(Error::dims(format!("data has {} columns, codec expects {}", data.dim(), codec.input_dim())));
        }
        let targets = codec.task.predict_data(data)?;
        Ok(Self {
            data,
            targets,
            enc_opt: Adam::new(cfg.lr, codec.encoder.num_params()),
            dec_opt: Adam::new(cfg.lr, codec.decoder.num_params()),
            enc_params: codec.encoder.params(),
            dec_params: codec.decoder.params(),
            cfg,
        })
    }

    /// Mean loss and gradients over the batch with latent noise `noise`
    /// (one row per sample, or `None` for a noiseless pass).
    fn batch(&self, codec: &NetCodec, noise: Option<&Matrix>, want_encoder: bool) -> Result<(f64, Gradients, Gradients)> {
        let n = self.data.len() as f64;
        let mut total = 0.0;
        let mut ge = Gradients::zeros_like(&codec.encoder);
        let mut gd = Gradients::zeros_like(&codec.decoder);
        for (i, x) in self.data.rows().enumerate() {
            let (mut phi, etape) = codec.encoder.forward(x)?;
            if let Some(w) = noise {
                numerics::axpy(1.0, w.row(i), &mut phi);
            }
            let (xh, dtape) = codec.decoder.forward(&phi)?;
            let (pred, ftape) = codec.task.forward(&xh)?;
            let (value, g) = codec.loss.value_and_grad(&pred, self.targets.row(i))?;
            let (_, dxh) = codec.task.backward(&ftape, &g)?;
            let (dgrads, dphi) = codec.decoder.backward(&dtape, &dxh)?;
            gd.accumulate(&dgrads, 1.0 / n);
            if want_encoder {
                let (egrads, _) = codec.encoder.backward(&etape, &dphi)?;
                ge.accumulate(&egrads, 1.0 / n);
            }
            total += value;
        }
        Ok((total / n, ge, gd))
    }

    /// `inner_steps` updates; returns the loss seen at the last step.
    fn steps(&mut self, codec: &mut NetCodec, noise: Option<&Matrix>, which: Trainable, eta: f64) -> Result<f64> {
        let mut last = f64::NAN;
        for _ in 0..self.cfg.inner_steps {
            let want_encoder = which == Trainable::Both;
            let (loss, ge, gd) = self.batch(codec, noise, want_encoder)?;
            last = loss;
            if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                return Ok(loss);
            }
            if want_encoder {
                let mut g = ge.flatten();
                numerics::axpy(2.0 * eta, &self.enc_params, &mut g);
                self.enc_opt.step(&mut self.enc_params, &g);
                codec.encoder.set_params(&self.enc_params)?;
            }
            self.dec_opt.step(&mut self.dec_params, &gd.flatten());
            codec.decoder.set_params(&self.dec_params)?;
        }
        Ok(last)
    }

    /// One Laplace vector per sample at scale `b`, from the epoch's stream.
    fn draw_noise(&self, z: usize, scale: f64, epoch: u64) -> Matrix {
        let mut s = rng::stream(rng::derive_seed(self.cfg.seed, epoch));
        let mut m = Matrix::zeros(self.data.len(), z);
        fill_laplace(&mut s, scale, m.as_mut_slice());
        m
    }
}

fn record(trace: &mut TrainTrace, epoch: usize, loss: f64, codec: &NetCodec) -> Result<()> {
    trace.records.push(EpochRecord {
        epoch,
        loss,
        delta1: codec.delta1,
        sigma_w2: codec.sigma_w2(),
        enc_norm2: codec.encoder.param_norm2(),
    });
    if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
        return Err(Error::Diverged { epoch, loss, trace: Box::new(trace.clone()) });
    }
    Ok(())
}

/// Task-aware training with alternating sensitivity recalibration.
///
/// Each epoch runs `inner_steps` Adam updates with the encoder gradient
/// augmented by `2η·θ_e`, then recomputes `Δ1` on the updated encodings and
/// resamples one noise vector per sample at scale `Δ1/ε`.
pub fn train_task_aware(data: &DataMatrix, seed_codec: NetCodec, cfg: TrainConfig) -> Result<(NetCodec, TrainTrace)> {
    let mut codec = seed_codec;
    let mut trace = TrainTrace::default();
    if cfg.epochs == 0 {
        return Ok((codec, trace));
    }
    let mut run = Run::new(data, &codec, cfg)?;
    codec.recalibrate(data)?;
    let z = codec.latent_dim();
    let mut noise = run.draw_noise(z, codec.noise_scale(), 0);
    for epoch in 0..cfg.epochs {
        let loss = run.steps(&mut codec, Some(&noise), Trainable::Both, cfg.eta)?;
        if cfg.align_latent && align_latent(&mut codec, data)? {
            run.enc_params = codec.encoder.params();
            run.dec_params = codec.decoder.params();
        }
        codec.recalibrate(data)?;
        noise = run.draw_noise(z, codec.noise_scale(), epoch as u64 + 1);
        record(&mut trace, epoch, loss, &codec)?;
    }
    Ok((codec, trace))
}

/// Applies an orthogonal change of latent basis `φ ↦ Uᵀφ` (decoder input
/// weights `V ↦ V·U`) with `U` the eigenvectors of the encoding covariance,
/// if this strictly lowers the exact `Δ1` of the encodings.
///
/// The noiseless chain is unchanged and so is the noise power, but the ℓ1
/// diameter depends on the basis: on centred spherical data it is smallest
/// when the encoder rows are orthogonal. Eigenvectors are matched to the
/// current axes greedily and sign-fixed so that repeated calls stay close to
/// the identity. Returns whether the rotation was applied.
pub fn align_latent(codec: &mut NetCodec, data: &DataMatrix) -> Result<bool> {
    let z = codec.latent_dim();
    if z < 2 {
        return Ok(false);
    }
    let enc = codec.encode_data(data)?;
    let current = sensitivity_exact(&enc)?.delta1;
    let (_, cov) = crate::whitening::sample_moments(&DataMatrix::new(enc.clone())?);
    let (_, vecs) = numerics::sym_eig(&cov)?;
    let u = match_axes(&vecs);
    let rotated = enc.matmul(&u)?;
    if sensitivity_exact(&rotated)?.delta1 >= current * (1.0 - 1e-12) {
        return Ok(false);
    }
    let ut = u.transpose();
    let last = codec.encoder.layers().len() - 1;
    let mut enc_layers = codec.encoder.layers().to_vec();
    let l = &mut enc_layers[last];
    l.weights = ut.matmul(&l.weights)?;
    l.bias = ut.matvec(&l.bias)?;
    let mut dec_layers = codec.decoder.layers().to_vec();
    dec_layers[0].weights = dec_layers[0].weights.matmul(&u)?;
    codec.encoder = Net::new(enc_layers)?;
    codec.decoder = Net::new(dec_layers)?;
    Ok(true)
}

/// Reorders and sign-flips the columns of an orthogonal matrix so column `j`
/// is the unused column with the largest `|entry j|`, made positive there.
fn match_axes(vecs: &Matrix) -> Matrix {
    let z = vecs.rows();
    let mut used = vec![false; z];
    let mut out = Matrix::zeros(z, z);
    for j in 0..z {
        let (best, _) = (0..z)
            .filter(|&c| !used[c])
            .map(|c| (c, vecs[(j, c)].abs()))
            .fold((usize::MAX, -1.0), |acc, cand| if cand.1 > acc.1 { cand } else { acc });
        used[best] = true;
        let sign = if vecs[(j, best)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..z {
            out.row_mut(i)[j] = sign * vecs[(i, best)];
        }
    }
    out
}

/// Benchmark that ignores privacy while designing the encoder.
///
/// Phase 1 trains both networks on noiseless latents for `epochs` epochs.
/// Phase 2 freezes the encoder and trains the decoder on noisy latents for
/// another `epochs` epochs, recomputing `Δ1` at the start of each. The trace
/// holds phase-1 epochs first, with `σ_w² = 0`.
pub fn train_privacy_agnostic(data: &DataMatrix, seed_codec: NetCodec, cfg: TrainConfig) -> Result<(NetCodec, TrainTrace)> {
    let mut codec = seed_codec;
    let mut trace = TrainTrace::default();
    if cfg.epochs == 0 {
        return Ok((codec, trace));
    }
    let mut run = Run::new(data, &codec, cfg)?;
    for epoch in 0..cfg.epochs {
        let loss = run.steps(&mut codec, None, Trainable::Both, 0.0)?;
        codec.delta1 = 0.0;
        record(&mut trace, epoch, loss, &codec)?;
    }
    let z = codec.latent_dim();
    for epoch in cfg.epochs..2 * cfg.epochs {
        codec.recalibrate(data)?;
        let noise = run.draw_noise(z, codec.noise_scale(), epoch as u64);
        let loss = run.steps(&mut codec, Some(&noise), Trainable::DecoderOnly, 0.0)?;
        record(&mut trace, epoch, loss, &codec)?;
    }
    Ok((codec, trace))
}

/// Benchmark that adds calibrated noise to the data itself.
///
/// The encoder is replaced by the identity, so `Δ1` is the ℓ1 diameter of the
/// data and stays fixed; only the decoder is trained, on `x + w`.
pub fn train_task_agnostic(data: &DataMatrix, seed_codec: NetCodec, cfg: TrainConfig) -> Result<(NetCodec, TrainTrace)> {
    let n = seed_codec.input_dim();
    if seed_codec.decoder.input_dim() != n {
        return Err(Error::dims(format!("decoder expects {} inputs, identity encoder emits {n}", seed_codec.decoder.input_dim())));
    }
    let mut codec = NetCodec { encoder: Net::identity(n), ..seed_codec };
    let mut trace = TrainTrace::default();
    codec.recalibrate(data)?;
    if cfg.epochs == 0 {
        return Ok((codec, trace));
    }
    let mut run = Run::new(data, &codec, cfg)?;
    for epoch in 0..cfg.epochs {
        let noise = run.draw_noise(n, codec.noise_scale(), epoch as u64);
        let loss = run.steps(&mut codec, Some(&noise), Trainable::DecoderOnly, 0.0)?;
        record(&mut trace, epoch, loss, &codec)?;
    }
    Ok((codec, trace))
}

/// Monte-Carlo task loss over `data` with `draws` fresh noise vectors per
/// sample. Samples run in parallel on streams derived from `(seed, i)` and
/// are reduced in index order.
pub fn evaluate(codec: &NetCodec, data: &DataMatrix, draws: usize, seed: u64) -> Result<MonteCarloLoss> {
    if data.dim() != codec.input_dim() {
        return Err(Error::dims(format!("data has {} columns, codec expects {}", data.dim(), codec.input_dim())));
    }
    let draws = draws.max(1);
    let per_sample: Vec<Result<Vec<(f64, Vec<f64>)>>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            let target = codec.task.predict(x)?;
            let mut s = rng::stream(rng::derive_seed(seed, i as u64));
            (0..draws)
                .map(|_| {
                    let xh = codec.anonymize(x, &mut s)?;
                    let (value, _) = codec.loss.value_and_grad(&codec.task.predict(&xh)?, &target)?;
                    let diff = xh.iter().zip(x).map(|(a, b)| a - b).collect();
                    Ok((value, diff))
                })
                .collect()
        })
        .collect();
    let mut acc = LossAccumulator::new(draws, codec.input_dim());
    for sample in per_sample {
        acc.begin_sample();
        for (value, diff) in sample? {
            acc.push(value, &diff);
        }
        acc.end_sample();
    }
    Ok(acc.finish())
}

/// Task loss of the noiseless chain `g_d(g_e(x))`, averaged over `data`.
pub fn noiseless_loss(codec: &NetCodec, data: &DataMatrix) -> Result<f64> {
    let mut total = 0.0;
    for x in data.rows() {
        let xh = codec.decoder.predict(&codec.encoder.predict(x)?)?;
        let target = codec.task.predict(x)?;
        total += neural::task_loss_with_target(&codec.task, codec.loss, &xh, &target)?.0;
    }
    Ok(total / data.len() as f64)
}
