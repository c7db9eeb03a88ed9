//! End-to-end experiment recipes and result tables.
//!
//! Each recipe returns an [`ExperimentResult`]: one row per `(ε, approach)`
//! plus a provenance block identifying the seed, the configuration and the
//! dataset. Per-ε runs are independent and execute in parallel on derived
//! seeds; results are collected in grid order, so output is reproducible.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data_io::{format_f64, normalize, DataMatrix, ExperimentConfig};
use crate::error::{Error, Result};
use crate::linear_solver::{
    self, solve_privacy_agnostic, solve_task_agnostic, solve_task_aware, Approach, CurvePoint, LinearCodec,
    MonteCarloLoss,
};
use crate::neural::{pretrain_task, Pretrained, TaskArch};
use crate::numerics::Matrix;
use crate::rng::{self, derive_seed, standard_normal};
use crate::trainer::{self, CodecArch, NetCodec, TrainConfig, TrainTrace};
use crate::whitening::{build_task, fit_whitening};

/// One `(ε, approach)` measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub epsilon: f64,
    pub approach: String,
    /// Monte-Carlo mean task loss.
    pub mean_loss: f64,
    pub std_error: f64,
    /// Closed-form expected loss, for linear codecs.
    pub closed_form: Option<f64>,
    pub delta1: f64,
    pub sigma_w2: f64,
    /// `Z′` for the closed-form task-aware codec, `Z` otherwise.
    pub latent_dim: usize,
    pub per_dim_mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub data_fingerprint: String,
    pub samples: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub provenance: Provenance,
    pub rows: Vec<ResultRow>,
}

impl ExperimentResult {
    pub const HEADER: &'static str = "epsilon,approach,mean_loss,std_error,closed_form,delta1,sigma_w2,latent_dim,per_dim_mse";

    /// Rows for one approach, in grid order.
    pub fn approach(&self, approach: Approach) -> impl Iterator<Item = &ResultRow> + '_ {
        self.rows.iter().filter(move |r| r.approach == approach.tag())
    }

    /// CSV with the provenance block as leading `#` lines. Per-dimension
    /// errors are joined with `;` in the last column.
    pub fn to_csv(&self) -> String {
        let p = &self.provenance;
        let mut s = String::new();
        let _ = writeln!(s, "# experiment={}", p.experiment);
        let _ = writeln!(s, "# seed={}", p.seed);
        let _ = writeln!(s, "# config_hash={}", p.config_hash);
        let _ = writeln!(s, "# data_fingerprint={}", p.data_fingerprint);
        let _ = writeln!(s, "# samples={} dim={}", p.samples, p.dim);
        s.push_str(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let per_dim: Vec<String> = r.per_dim_mse.iter().map(|v| format_f64(*v)).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                format_f64(r.epsilon),
                r.approach,
                format_f64(r.mean_loss),
                format_f64(r.std_error),
                r.closed_form.map(format_f64).unwrap_or_default(),
                format_f64(r.delta1),
                format_f64(r.sigma_w2),
                r.latent_dim,
                per_dim.join(";")
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result rows serialize")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_csv())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json())
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.into(), source })
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("epsilon grid is empty".into()));
    }
    if let Some(&e) = grid.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::NonPositiveEpsilon(e));
    }
    Ok(())
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| format_f64(*x)).collect::<Vec<_>>().join(",")
}

/// Settings for [`run_mean_estimation`].
#[derive(Debug, Clone, PartialEq)]
pub struct MeanEstimation {
    /// Diagonal of the task matrix `K`.
    pub weights: Vec<f64>,
    pub epsilon_grid: Vec<f64>,
    /// Latent width of the privacy-agnostic benchmark.
    pub z_pa: usize,
    pub noise_draws: usize,
    pub seed: u64,
}

impl MeanEstimation {
    /// Hourly-consumption weighting: `k_i = 2` for hours 9 to 20 (0-based
    /// column index), 1 elsewhere, with a privacy-agnostic width of 3.
    pub fn daytime_preset(epsilon_grid: Vec<f64>) -> Self {
        let weights = (0..24).map(|h| if (9..=20).contains(&h) { 2.0 } else { 1.0 }).collect();
        Self { weights, epsilon_grid, z_pa: 3, noise_draws: 100, seed: 0 }
    }

    fn hash(&self) -> String {
        sha256_hex(&format!(
            "mean-estimation|k={}|eps={}|z_pa={}|draws={}|seed={}",
            join_floats(&self.weights),
            join_floats(&self.epsilon_grid),
            self.z_pa,
            self.noise_draws,
            self.seed
        ))
    }
}

fn linear_row(
    codec: &LinearCodec,
    k: &Matrix,
    p: &Matrix,
    data: &DataMatrix,
    draws: usize,
    seed: u64,
    latent_dim: usize,
) -> Result<ResultRow> {
    let mc = codec.monte_carlo_loss(k, data, draws, seed)?;
    Ok(ResultRow {
        epsilon: codec.epsilon,
        approach: codec.approach.tag().to_string(),
        mean_loss: mc.mean,
        std_error: mc.std_error,
        closed_form: Some(codec.expected_loss(p)?),
        delta1: codec.delta1,
        sigma_w2: codec.sigma_w2,
        latent_dim,
        per_dim_mse: mc.per_dim_mse,
    })
}

/// Weighted mean estimation with the three closed-form linear codecs.
///
/// The task matrix is `K = diag(weights)`, so the loss is the weighted
/// squared reconstruction error; per-dimension MSE is reported alongside.
pub fn run_mean_estimation(data: &DataMatrix, spec: &MeanEstimation) -> Result<ExperimentResult> {
    check_grid(&spec.epsilon_grid)?;
    if spec.weights.len() != data.dim() {
        return Err(Error::dims(format!("{} weights for {} columns", spec.weights.len(), data.dim())));
    }
    if let Some(&w) = spec.weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument(format!("weights must be positive, got {w}")));
    }
    let k = Matrix::from_diag(&spec.weights);
    let model = fit_whitening(data)?;
    let task = build_task(&model, &k)?;
    let h = model.whiten_data(data)?;

    let per_eps: Vec<Result<Vec<ResultRow>>> = spec
        .epsilon_grid
        .par_iter()
        .enumerate()
        .map(|(i, &eps)| {
            // common noise seed across approaches
            let seed = derive_seed(spec.seed, i as u64);
            let (aware, rep) = solve_task_aware(&model, &task, &h, eps)?;
            let (agnostic, _) = solve_task_agnostic(&model, &task, &h, eps)?;
            let (pa, _) = solve_privacy_agnostic(&model, &task, &h, eps, spec.z_pa)?;
            Ok(vec![
                linear_row(&aware, &k, &task.p, data, spec.noise_draws, seed, rep.effective_dim)?,
                linear_row(&agnostic, &k, &task.p, data, spec.noise_draws, seed, data.dim())?,
                linear_row(&pa, &k, &task.p, data, spec.noise_draws, seed, spec.z_pa)?,
            ])
        })
        .collect();
    let mut rows = Vec::with_capacity(3 * spec.epsilon_grid.len());
    for r in per_eps {
        rows.extend(r?);
    }
    Ok(ExperimentResult {
        provenance: Provenance {
            experiment: "mean-estimation".into(),
            seed: spec.seed,
            config_hash: spec.hash(),
            data_fingerprint: data.fingerprint(),
            samples: data.len(),
            dim: data.dim(),
        },
        rows,
    })
}

/// One panel of the theory figure.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryTable {
    /// Common value of `λ_2 … λ_n`.
    pub tail: f64,
    pub lambda: Vec<f64>,
    pub rows: Vec<CurvePoint>,
}

/// ε values giving `8r²/ε²` on a log grid from 0.01 to 100 (41 points, the
/// middle one exactly 1), in increasing ε.
pub fn theory_epsilon_grid(r: f64) -> Vec<f64> {
    (0..=40)
        .rev()
        .map(|i| {
            let c = 10f64.powf((i as f64 - 20.0) / 10.0);
            let c = if i == 20 { 1.0 } else { c };
            (8.0 * r * r / c).sqrt()
        })
        .collect()
}

/// Closed-form curves for `λ = (4, t, t, t)` with `t ∈ {0, 1, 2}` and a
/// privacy-agnostic width of 2.
pub fn run_theory_figure(r: f64, epsilon_grid: &[f64]) -> Result<Vec<TheoryTable>> {
    check_grid(epsilon_grid)?;
    [0.0, 1.0, 2.0]
        .into_iter()
        .map(|tail| {
            let lambda = vec![4.0, tail, tail, tail];
            let rows = linear_solver::theory_curves(&lambda, r, epsilon_grid, 2)?;
            Ok(TheoryTable { tail, lambda, rows })
        })
        .collect()
}

/// Architecture choices for [`run_general_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralSpec {
    pub task_arch: TaskArch,
    /// Hidden width of encoder and decoder; `None` for affine codecs.
    pub codec_hidden: Option<usize>,
    pub task_epochs: usize,
    pub task_lr: f64,
}

/// Everything a general run produces besides the result table.
#[derive(Debug, Clone)]
pub struct GeneralOutcome {
    pub result: ExperimentResult,
    pub task: Pretrained,
    /// Trained task-aware codec and its trace, per grid ε.
    pub codecs: Vec<(NetCodec, TrainTrace)>,
}

fn net_row(codec: &NetCodec, approach: Approach, data: &DataMatrix, draws: usize, seed: u64) -> Result<ResultRow> {
    let MonteCarloLoss { mean, std_error, per_dim_mse } = trainer::evaluate(codec, data, draws, seed)?;
    Ok(ResultRow {
        epsilon: codec.epsilon,
        approach: approach.tag().to_string(),
        mean_loss: mean,
        std_error,
        closed_form: None,
        delta1: codec.delta1,
        sigma_w2: codec.sigma_w2(),
        latent_dim: codec.latent_dim(),
        per_dim_mse,
    })
}

/// Pretrains the task network, then trains and evaluates the three codecs
/// at each grid ε. Data are normalized per `cfg.mode` first; losses are
/// measured in normalized coordinates.
pub fn run_general_experiment(
    data: &DataMatrix,
    targets: &Matrix,
    spec: &GeneralSpec,
    cfg: &ExperimentConfig,
) -> Result<GeneralOutcome> {
    cfg.validate()?;
    if cfg.z == 0 || cfg.z > data.dim() {
        return Err(Error::BadLatentDim { z: cfg.z, n: data.dim() });
    }
    let (normed, norm) = normalize(data, cfg.mode)?;
    let task = pretrain_task(&normed, targets, &spec.task_arch, spec.task_epochs, spec.task_lr, derive_seed(cfg.seed, 0))?;
    let n = data.dim();
    let arch = CodecArch { latent: cfg.z, ..codec_arch(spec.codec_hidden) };
    let agn_arch = CodecArch { latent: n, ..codec_arch(spec.codec_hidden) };
    let base = TrainConfig::from(cfg);

    let per_eps: Vec<Result<(Vec<ResultRow>, NetCodec, TrainTrace)>> = cfg
        .epsilon_grid
        .par_iter()
        .enumerate()
        .map(|(i, &eps)| {
            let i = i as u64;
            let init_seed = derive_seed(cfg.seed, 1000 + i);
            let train = TrainConfig { seed: derive_seed(cfg.seed, 2000 + i), ..base };
            let eval_seed = derive_seed(cfg.seed, 3000 + i);
            let seed_codec = NetCodec::init(&arch, n, task.net.clone(), spec.task_arch.loss, eps, init_seed)?;
            let agn_seed = NetCodec::init(&agn_arch, n, task.net.clone(), spec.task_arch.loss, eps, init_seed)?;

            let (mut aware, trace) = trainer::train_task_aware(&normed, seed_codec.clone(), train)?;
            let (pa, _) = trainer::train_privacy_agnostic(&normed, seed_codec, train)?;
            let (agn, _) = trainer::train_task_agnostic(&normed, agn_seed, train)?;
            let rows = vec![
                net_row(&aware, Approach::TaskAware, &normed, cfg.noise_draws, eval_seed)?,
                net_row(&agn, Approach::TaskAgnostic, &normed, cfg.noise_draws, eval_seed)?,
                net_row(&pa, Approach::PrivacyAgnostic, &normed, cfg.noise_draws, eval_seed)?,
            ];
            aware.normalization = Some(norm.clone());
            Ok((rows, aware, trace))
        })
        .collect();

    let mut rows = Vec::new();
    let mut codecs = Vec::new();
    for r in per_eps {
        let (r, codec, trace) = r?;
        rows.extend(r);
        codecs.push((codec, trace));
    }
    let config_hash = sha256_hex(&format!(
        "{}|task={:?}|hidden={:?}|task_epochs={}|task_lr={}",
        cfg.hash(),
        spec.task_arch,
        spec.codec_hidden,
        spec.task_epochs,
        format_f64(spec.task_lr)
    ));
    Ok(GeneralOutcome {
        result: ExperimentResult {
            provenance: Provenance {
                experiment: "general".into(),
                seed: cfg.seed,
                config_hash,
                data_fingerprint: data.fingerprint(),
                samples: data.len(),
                dim: n,
            },
            rows,
        },
        task,
        codecs,
    })
}

fn codec_arch(hidden: Option<usize>) -> CodecArch {
    match hidden {
        None => CodecArch::linear(0),
        Some(h) => CodecArch::one_hidden(0, h),
    }
}

/// Seeded synthetic datasets with known structure.
pub mod synthetic {
    use super::*;

    /// `count` points uniform on the sphere of radius `r` in `n` dimensions.
    pub fn sphere(n: usize, count: usize, r: f64, seed: u64) -> Result<DataMatrix> {
        let mut s = rng::stream(seed);
        let rows: Vec<Vec<f64>> = (0..count).map(|_| rng::on_sphere(&mut s, n, r)).collect();
        DataMatrix::from_rows(&rows)
    }

    /// 24-dimensional daily profiles from three latent factors (morning peak,
    /// evening peak, flat base load) plus small independent noise.
    pub fn factor_profiles(count: usize, seed: u64) -> Result<DataMatrix> {
        let bump = |h: f64, centre: f64, width: f64| (-((h - centre) / width).powi(2) / 2.0).exp();
        let loadings: [Vec<f64>; 3] = [
            (0..24).map(|h| bump(h as f64, 8.0, 2.0)).collect(),
            (0..24).map(|h| bump(h as f64, 19.0, 2.5)).collect(),
            vec![0.5; 24],
        ];
        let mut s = rng::stream(seed);
        let rows: Vec<Vec<f64>> = (0..count)
            .map(|_| {
                let f: Vec<f64> = (0..3).map(|_| standard_normal(&mut s)).collect();
                (0..24)
                    .map(|h| 1.0 + (0..3).map(|k| f[k] * loadings[k][h]).sum::<f64>() + 0.1 * standard_normal(&mut s))
                    .collect()
            })
            .collect();
        DataMatrix::from_rows(&rows)
    }

    /// Six standard-normal features; the scalar target depends on the first
    /// three only.
    pub fn regression(count: usize, seed: u64) -> Result<(DataMatrix, Matrix)> {
        let mut s = rng::stream(seed);
        let mut rows = Vec::with_capacity(count);
        let mut y = Vec::with_capacity(count);
        for _ in 0..count {
            let x: Vec<f64> = (0..6).map(|_| standard_normal(&mut s)).collect();
            y.push(1.2 * x[0] - 0.8 * x[1] + 0.6 * x[2] + 0.3 * x[0] * x[2] + 0.05 * standard_normal(&mut s));
            rows.push(x);
        }
        Ok((DataMatrix::from_rows(&rows)?, Matrix::from_vec(count, 1, y)?))
    }

    /// Two unit-variance Gaussian blobs in `n` dimensions whose centres lie
    /// `separation` apart along the first axis; labels alternate 1, 0.
    pub fn blobs(n: usize, count: usize, separation: f64, seed: u64) -> Result<(DataMatrix, Matrix)> {
        let mut s = rng::stream(seed);
        let mut rows = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let label = if i % 2 == 0 { 1.0 } else { 0.0 };
            let mut x: Vec<f64> = (0..n).map(|_| standard_normal(&mut s)).collect();
            x[0] += (label - 0.5) * separation;
            rows.push(x);
            labels.push(label);
        }
        Ok((DataMatrix::from_rows(&rows)?, Matrix::from_vec(count, 1, labels)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cross_polytope(n: usize) -> DataMatrix {
        // ±a·e_i with unit sample covariance
        let a = ((2 * n - 1) as f64 / 2.0).sqrt();
        let mut rows = Vec::new();
        for i in 0..n {
            for sign in [1.0, -1.0] {
                let mut x = vec![0.0; n];
                x[i] = sign * a;
                rows.push(x);
            }
        }
        DataMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn mean_estimation_dominance_on_factor_data() {
        let data = synthetic::factor_profiles(300, 1).unwrap();
        let spec = MeanEstimation { noise_draws: 20, seed: 4, ..MeanEstimation::daytime_preset(vec![0.5, 2.0, 8.0]) };
        let res = run_mean_estimation(&data, &spec).unwrap();
        assert_eq!(res.rows.len(), 9);
        for (a, g) in res.approach(Approach::TaskAware).zip(res.approach(Approach::TaskAgnostic)) {
            assert!(a.mean_loss <= g.mean_loss + 2.0 * (a.std_error.hypot(g.std_error)), "{a:?} vs {g:?}");
            assert_eq!(a.per_dim_mse.len(), 24);
        }
        for r in res.approach(Approach::PrivacyAgnostic) {
            assert_eq!(r.latent_dim, 3);
        }
    }

    #[test]
    fn equal_weights_make_aware_and_agnostic_coincide() {
        let data = cross_polytope(3);
        let spec = MeanEstimation { weights: vec![1.0; 3], epsilon_grid: vec![0.5, 1.0, 4.0], z_pa: 2, noise_draws: 2, seed: 0 };
        let res = run_mean_estimation(&data, &spec).unwrap();
        for (a, g) in res.approach(Approach::TaskAware).zip(res.approach(Approach::TaskAgnostic)) {
            let (ca, cg) = (a.closed_form.unwrap(), g.closed_form.unwrap());
            assert!((ca - cg).abs() < 1e-9, "{ca} vs {cg}");
        }
    }

    #[test]
    fn huge_epsilon_gives_zero_loss() {
        let data = synthetic::factor_profiles(100, 2).unwrap();
        let spec = MeanEstimation { noise_draws: 2, ..MeanEstimation::daytime_preset(vec![1e12]) };
        let res = run_mean_estimation(&data, &spec).unwrap();
        for r in &res.rows {
            if r.approach != Approach::PrivacyAgnostic.tag() {
                assert!(r.mean_loss < 1e-6, "{r:?}");
            }
        }
    }

    #[test]
    fn mean_estimation_validation() {
        let data = synthetic::sphere(3, 20, 1.0, 0).unwrap();
        let bad = MeanEstimation { weights: vec![1.0, -1.0, 1.0], epsilon_grid: vec![1.0], z_pa: 1, noise_draws: 1, seed: 0 };
        assert!(run_mean_estimation(&data, &bad).is_err());
        let empty = MeanEstimation { weights: vec![1.0; 3], epsilon_grid: vec![], ..bad.clone() };
        assert!(run_mean_estimation(&data, &empty).is_err());
        let short = MeanEstimation { weights: vec![1.0; 2], epsilon_grid: vec![1.0], ..bad };
        assert!(matches!(run_mean_estimation(&data, &short), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn theory_figure_tables() {
        let grid = theory_epsilon_grid(1.0);
        assert_eq!(grid.len(), 41);
        assert_eq!(grid[20], 8f64.sqrt());
        let tables = run_theory_figure(1.0, &grid).unwrap();
        assert_eq!(tables.len(), 3);
        let p = &tables[0].rows[20];
        assert!((p.task_aware - 2.0).abs() < 1e-9);
        assert!((p.task_agnostic - 3.2).abs() < 1e-9);
        assert!((p.privacy_agnostic - 8.0 / 3.0).abs() < 1e-9);
        for t in &tables {
            let total: f64 = t.lambda.iter().sum();
            for w in t.rows.windows(2) {
                // grid is increasing in ε, so losses fall
                assert!(w[1].task_aware <= w[0].task_aware + 1e-12);
                assert!(w[1].task_agnostic <= w[0].task_agnostic + 1e-12);
                assert!(w[1].privacy_agnostic <= w[0].privacy_agnostic + 1e-12);
            }
            for p in &t.rows {
                for v in [p.task_aware, p.task_agnostic, p.privacy_agnostic] {
                    assert!(v <= total + 1e-12);
                }
            }
        }
    }

    fn general_cfg(grid: Vec<f64>, epochs: usize) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            "epsilon_grid = {grid:?}\nz = 3\neta = 0.001\nepochs = {epochs}\nlr = 0.01\nnoise_draws = 20\nseed = 5\n"
        ))
        .unwrap()
    }

    #[test]
    fn general_regression_dominance() {
        let (data, y) = synthetic::regression(300, 3).unwrap();
        let spec = GeneralSpec { task_arch: TaskArch::regression(9), codec_hidden: None, task_epochs: 400, task_lr: 1e-2 };
        let out = run_general_experiment(&data, &y, &spec, &general_cfg(vec![1.0, 4.0], 60)).unwrap();
        assert_eq!(out.result.rows.len(), 6);
        let res = &out.result;
        for (a, g) in res.approach(Approach::TaskAware).zip(res.approach(Approach::TaskAgnostic)) {
            assert!(a.mean_loss <= g.mean_loss + 2.0 * a.std_error.hypot(g.std_error), "{a:?} vs {g:?}");
        }
        assert_eq!(out.codecs.len(), 2);
        assert!(out.codecs[0].0.normalization.is_some());
    }

    #[test]
    fn general_blobs_single_epsilon() {
        let (data, y) = synthetic::blobs(4, 200, 4.0, 6).unwrap();
        let spec = GeneralSpec {
            task_arch: TaskArch::binary_classifier(6),
            codec_hidden: None,
            task_epochs: 300,
            task_lr: 1e-2,
        };
        let out = run_general_experiment(&data, &y, &spec, &general_cfg(vec![0.5], 150)).unwrap();
        assert_eq!(out.result.rows.len(), 3);
        assert!(out.result.rows.iter().all(|r| r.mean_loss.is_finite() && r.std_error >= 0.0));
        let a = out.result.approach(Approach::TaskAware).next().unwrap();
        let g = out.result.approach(Approach::TaskAgnostic).next().unwrap();
        assert!(a.mean_loss <= g.mean_loss + 2.0 * a.std_error.hypot(g.std_error), "{a:?} vs {g:?}");
    }

    #[test]
    fn results_are_reproducible() {
        let data = synthetic::factor_profiles(80, 3).unwrap();
        let spec = MeanEstimation { noise_draws: 3, ..MeanEstimation::daytime_preset(vec![1.0, 3.0]) };
        let a = run_mean_estimation(&data, &spec).unwrap();
        let b = run_mean_estimation(&data, &spec).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.to_csv().contains(&data.fingerprint()));
        let json: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(json["rows"].as_array().unwrap().len(), 6);
        assert_eq!(json["provenance"]["seed"], 0);
    }
}
