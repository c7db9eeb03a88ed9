//! `taskldp` command-line tool.
//!
//! Exit codes: 0 on success, 2 for invalid input, 3 for numerical failure.
//! Each verb prints one summary line to stdout and writes its data to files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use taskldp::codec_io::Codec;
use taskldp::data_io::{load_csv, write_csv, DataMatrix, ExperimentConfig};
use taskldp::harness::{run_general_experiment, GeneralSpec};
use taskldp::linear_solver::{
    self, solve_privacy_agnostic, solve_task_agnostic, solve_task_aware, write_curves_csv, Approach,
};
use taskldp::mechanism::{calibrate, sensitivity_exact};
use taskldp::neural::TaskArch;
use taskldp::trainer;
use taskldp::whitening::{build_task, fit_whitening};
use taskldp::{Error, Matrix, Result};

#[derive(Parser, Debug)]
#[command(name = "taskldp", version, about = "Task-aware local differential privacy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a closed-form linear codec for a linear task.
    FitLinear(FitLinear),
    /// Train neural codecs over an ε grid and tabulate their losses.
    FitGeneral(FitGeneral),
    /// Release privatized copies of the rows of a CSV file.
    Anonymize(Anonymize),
    /// Monte-Carlo task loss of a saved codec.
    Evaluate(Evaluate),
    /// Closed-form loss curves for a given task spectrum.
    Theory(Theory),
    /// Exact ℓ1 sensitivity of a dataset or of its encodings.
    Sensitivity(Sensitivity),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input samples, one row per sample.
    #[arg(long)]
    data: PathBuf,
    /// Treat the first CSV line as column names.
    #[arg(long)]
    header: bool,
}

impl DataArgs {
    fn load(&self) -> Result<DataMatrix> {
        load_csv(&self.data, self.header)
    }
}

#[derive(Args, Debug)]
struct FitLinear {
    #[command(flatten)]
    data: DataArgs,
    /// Task matrix K (headerless CSV, one row per task output).
    #[arg(long)]
    task_matrix: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    epsilon: f64,
    #[arg(long, default_value = "aware")]
    approach: Approach,
    /// Latent width for the privacy-agnostic design.
    #[arg(long)]
    z: Option<usize>,
    /// Codec output file.
    #[arg(long, default_value = "codec.txt")]
    out: PathBuf,
    /// Report output file [default: <out>.report].
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum TaskKind {
    Regression,
    Classifier,
}

#[derive(Args, Debug)]
struct FitGeneral {
    #[command(flatten)]
    data: DataArgs,
    /// Task targets, one row per sample (headerless CSV).
    #[arg(long)]
    targets: PathBuf,
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "regression")]
    task: TaskKind,
    /// Hidden width of the task network [default: 1.5 × input dimension].
    #[arg(long)]
    task_hidden: Option<usize>,
    #[arg(long, default_value_t = 300)]
    task_epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    task_lr: f64,
    /// Hidden width of encoder and decoder; affine codecs if omitted.
    #[arg(long)]
    codec_hidden: Option<usize>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct Anonymize {
    #[arg(long)]
    codec: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "anonymized.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Evaluate {
    #[arg(long)]
    codec: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Task matrix K; required for linear codecs.
    #[arg(long)]
    task_matrix: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "evaluation.txt")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Theory {
    /// Eigenvalues of the whitened task Gram matrix, comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    lambda: Vec<f64>,
    /// Sphere radius in whitened coordinates.
    #[arg(long)]
    r: f64,
    /// Inner radius; adds the task-aware band when below `--r`.
    #[arg(long)]
    r_min: Option<f64>,
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    epsilon_grid: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    z_pa: usize,
    #[arg(long, default_value = "curves.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Sensitivity {
    #[command(flatten)]
    data: DataArgs,
    /// Measure the encodings of this codec instead of the raw rows.
    #[arg(long)]
    codec: Option<PathBuf>,
    /// Also report the Laplace calibration at this ε.
    #[arg(long, allow_negative_numbers = true)]
    epsilon: Option<f64>,
    #[arg(long, default_value = "sensitivity.txt")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn run(cmd: Command) -> Result<String> {
    match cmd {
        Command::FitLinear(a) => fit_linear(a),
        Command::FitGeneral(a) => fit_general(a),
        Command::Anonymize(a) => anonymize(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Theory(a) => theory(a),
        Command::Sensitivity(a) => sensitivity(a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.into(), source })
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveEpsilon(eps))
    }
}

fn load_task_matrix(path: &Path, dim: usize) -> Result<Matrix> {
    let k = load_csv(path, false)
        .map(DataMatrix::into_matrix)
        .or_else(|e| match e {
            // a single-row task matrix is valid here
            Error::TooFewSamples { .. } => single_row(path),
            other => Err(other),
        })?;
    if k.cols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "task matrix has {} columns but the data has {dim} dimensions",
            k.cols()
        )));
    }
    Ok(k)
}

fn single_row(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
    let row = text
        .trim()
        .split(',')
        .enumerate()
        .map(|(c, t)| {
            t.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: path.into(),
                row: 1,
                col: c + 1,
                msg: format!("not a number: {t:?}"),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Matrix::from_vec(1, row.len(), row)
}

fn fit_linear(a: FitLinear) -> Result<String> {
    check_epsilon(a.epsilon)?;
    let data = a.data.load()?;
    let k = load_task_matrix(&a.task_matrix, data.dim())?;
    let model = fit_whitening(&data)?;
    let task = build_task(&model, &k)?;
    let h = model.whiten_data(&data)?;
    let (codec, report, summary) = match a.approach {
        Approach::TaskAware => {
            let (codec, rep) = solve_task_aware(&model, &task, &h, a.epsilon)?;
            let summary = format!(
                "z_prime={} predicted_loss={:?} lower_bound={:?} upper_bound={:?}",
                rep.effective_dim, rep.predicted_loss, rep.lower_bound, rep.upper_bound
            );
            (codec, rep.to_text(), summary)
        }
        Approach::TaskAgnostic | Approach::PrivacyAgnostic => {
            let (codec, loss) = if a.approach == Approach::TaskAgnostic {
                solve_task_agnostic(&model, &task, &h, a.epsilon)?
            } else {
                let z = a.z.ok_or_else(|| Error::InvalidArgument("--z is required for privacy-agnostic".into()))?;
                solve_privacy_agnostic(&model, &task, &h, a.epsilon, z)?
            };
            let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
            let report = format!(
                "lambda={}\nz={}\nsigma_w2={:?}\ndelta1={:?}\nepsilon={:?}\npredicted_loss={loss:?}\n",
                list(&task.lambda),
                codec.latent_dim(),
                codec.sigma_w2,
                codec.delta1,
                codec.epsilon
            );
            let summary = format!("z={} predicted_loss={loss:?}", codec.latent_dim());
            (codec, report, summary)
        }
    };
    let report_path = a.report.unwrap_or_else(|| with_suffix(&a.out, ".report"));
    let header = format!("approach={}\n", codec.approach);
    Codec::Linear(codec).save(&a.out)?;
    write_text(&report_path, &(header + &report))?;
    Ok(format!(
        "fit-linear approach={} {summary} codec={} report={}",
        a.approach,
        a.out.display(),
        report_path.display()
    ))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn fit_general(a: FitGeneral) -> Result<String> {
    let data = a.data.load()?;
    let targets = load_csv(&a.targets, false)?.into_matrix();
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let hidden = a.task_hidden.unwrap_or_else(|| (3 * data.dim()).div_ceil(2));
    let task_arch = match a.task {
        TaskKind::Regression => TaskArch::regression(hidden),
        TaskKind::Classifier => TaskArch::binary_classifier(hidden),
    };
    let spec = GeneralSpec { task_arch, codec_hidden: a.codec_hidden, task_epochs: a.task_epochs, task_lr: a.task_lr };
    let out = run_general_experiment(&data, &targets, &spec, &cfg)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|source| Error::Io { path: a.out_dir.clone(), source })?;
    out.result.write_csv(a.out_dir.join("results.csv"))?;
    out.result.write_json(a.out_dir.join("results.json"))?;
    for (i, (codec, trace)) in out.codecs.iter().enumerate() {
        Codec::Net(codec.clone()).save(a.out_dir.join(format!("codec_{i}.txt")))?;
        trace.write_csv(a.out_dir.join(format!("trace_{i}.csv")))?;
    }
    Ok(format!(
        "fit-general rows={} task_loss={:?} out_dir={}",
        out.result.rows.len(),
        out.task.final_loss,
        a.out_dir.display()
    ))
}

fn anonymize(a: Anonymize) -> Result<String> {
    let codec = Codec::load(&a.codec)?;
    let data = a.data.load()?;
    let out = codec.anonymize_data(&data, a.seed)?;
    write_csv(&a.out, data.names(), out.matrix())?;
    Ok(format!(
        "anonymize rows={} dim={} noise_scale={:?} out={}",
        out.len(),
        out.dim(),
        codec.noise_scale(),
        a.out.display()
    ))
}

fn evaluate(a: Evaluate) -> Result<String> {
    let codec = Codec::load(&a.codec)?;
    let data = a.data.load()?;
    if data.dim() != codec.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} columns, codec expects {}",
            data.dim(),
            codec.input_dim()
        )));
    }
    let mc = match &codec {
        Codec::Linear(c) => {
            let path = a
                .task_matrix
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--task-matrix is required for linear codecs".into()))?;
            let k = load_task_matrix(path, data.dim())?;
            c.monte_carlo_loss(&k, &data, a.draws, a.seed)?
        }
        Codec::Net(c) => {
            let working = match &c.normalization {
                Some(norm) => norm.apply_data(&data)?,
                None => data.clone(),
            };
            trainer::evaluate(c, &working, a.draws, a.seed)?
        }
    };
    let per_dim = mc.per_dim_mse.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",");
    write_text(
        &a.out,
        &format!(
            "mean_loss={:?}\nstd_error={:?}\ndraws={}\nseed={}\nper_dim_mse={per_dim}\n",
            mc.mean, mc.std_error, a.draws, a.seed
        ),
    )?;
    Ok(format!("evaluate mean_loss={:?} std_error={:?} out={}", mc.mean, mc.std_error, a.out.display()))
}

fn theory(a: Theory) -> Result<String> {
    if a.epsilon_grid.is_empty() {
        return Err(Error::InvalidArgument("epsilon grid is empty".into()));
    }
    if let Some(&e) = a.epsilon_grid.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::NonPositiveEpsilon(e));
    }
    let rows = match a.r_min {
        Some(r_min) => linear_solver::theory_curves_banded(&a.lambda, r_min, a.r, &a.epsilon_grid, a.z_pa)?,
        None => linear_solver::theory_curves(&a.lambda, a.r, &a.epsilon_grid, a.z_pa)?,
    };
    write_curves_csv(&a.out, &rows)?;
    Ok(format!("theory rows={} out={}", rows.len(), a.out.display()))
}

fn sensitivity(a: Sensitivity) -> Result<String> {
    let data = a.data.load()?;
    let encoded = match &a.codec {
        None => data.matrix().clone(),
        Some(path) => {
            let codec = Codec::load(path)?;
            if data.dim() != codec.input_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "data has {} columns, codec expects {}",
                    data.dim(),
                    codec.input_dim()
                )));
            }
            match codec {
                Codec::Linear(c) => data.matrix().map_rows(c.latent_dim(), |x| c.encode(x))?,
                Codec::Net(c) => {
                    let working = match &c.normalization {
                        Some(norm) => norm.apply_data(&data)?,
                        None => data,
                    };
                    c.encode_data(&working)?
                }
            }
        }
    };
    let rep = sensitivity_exact(&encoded)?;
    let text = match a.epsilon {
        Some(eps) => calibrate(rep.delta1, eps, encoded.cols(), 0)?.report(Some(&rep)),
        None => format!(
            "delta1={:?}\narg_i={}\narg_j={}\nsamples={}\nnote={}\n",
            rep.delta1,
            rep.arg.0,
            rep.arg.1,
            rep.samples,
            taskldp::mechanism::EMPIRICAL_CAVEAT
        ),
    };
    write_text(&a.out, &text)?;
    Ok(format!("sensitivity delta1={:?} pair={},{} out={}", rep.delta1, rep.arg.0, rep.arg.1, a.out.display()))
}
