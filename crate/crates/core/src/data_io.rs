//! Dataset ingestion, standardization and experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// An `N × n` table of samples, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    samples: Matrix,
    names: Option<Vec<String>>,
}

impl DataMatrix {
    pub fn new(samples: Matrix) -> Result<Self> {
        if samples.rows() < 2 {
            return Err(Error::TooFewSamples { have: samples.rows(), need: 2 });
        }
        if samples.cols() == 0 {
            return Err(Error::EmptyData);
        }
        if samples.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("data matrix".into()));
        }
        Ok(Self { samples, names: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim() {
            return Err(Error::dims(format!(
                "{} column names for {} columns",
                names.len(),
                self.dim()
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.samples
    }

    pub fn into_matrix(self) -> Matrix {
        self.samples
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.samples.row_iter()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        for r in self.rows() {
            crate::numerics::axpy(1.0, r, &mut mean);
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// SHA-256 over the little-endian bytes of every entry, hex encoded.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for v in self.samples.as_slice() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Reads a comma-separated numeric table.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<DataMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.into(), source })?;
    read_csv(file, has_header, path)
}

/// Same as [`load_csv`] over any reader; `origin` is only used in messages.
pub fn read_csv(reader: impl std::io::Read, has_header: bool, origin: &Path) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let names = if has_header {
        let hdr = rdr.headers().map_err(|e| Error::Parse {
            path: origin.into(),
            row: 1,
            col: 0,
            msg: e.to_string(),
        })?;
        Some(hdr.iter().map(str::to_owned).collect::<Vec<_>>())
    } else {
        None
    };

    let mut width = names.as_ref().map(Vec::len);
    let mut data = Vec::new();
    let mut n_rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        // 1-based line numbers as a user sees them in an editor
        let line = i + 1 + usize::from(has_header);
        let rec = rec.map_err(|e| Error::Parse {
            path: origin.into(),
            row: line,
            col: 0,
            msg: e.to_string(),
        })?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(Error::RaggedRows { path: origin.into(), row: line, expected, found: rec.len() });
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: origin.into(),
                row: line,
                col: j + 1,
                msg: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: origin.into(),
                    row: line,
                    col: j + 1,
                    msg: format!("non-finite value {field:?}"),
                });
            }
            data.push(v);
        }
        n_rows += 1;
    }
    let cols = width.unwrap_or(0);
    let dm = DataMatrix::new(Matrix::from_vec(n_rows, cols, data)?)?;
    match names {
        Some(n) => dm.with_names(n),
        None => Ok(dm),
    }
}

/// Writes a matrix as CSV with full round-trip precision.
pub fn write_csv(path: impl AsRef<Path>, header: Option<&[String]>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let io = |source| Error::Io { path: path.into(), source };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    if let Some(h) = header {
        w.write_record(h).map_err(|e| io(e.into()))?;
    }
    for r in m.row_iter() {
        w.write_record(r.iter().map(|v| format_f64(*v))).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// Standardize every column on its own.
    #[default]
    PerDimension,
    /// One shift and scale shared by all columns (uni-variate series).
    Joint,
}

impl std::fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerDimension => "per-dimension",
            Self::Joint => "joint",
        })
    }
}

impl std::str::FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-dimension" => Ok(Self::PerDimension),
            "joint" => Ok(Self::Joint),
            other => Err(Error::Config(format!(
                "mode must be per-dimension or joint, got {other:?}"
            ))),
        }
    }
}

/// Affine map `x ↦ (x - shift) / scale`, per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mode: NormalizationMode,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormalizationSpec {
    pub fn identity(dim: usize) -> Self {
        Self { mode: NormalizationMode::PerDimension, shift: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.shift).zip(&self.scale).map(|((v, s), c)| (v - s) / c).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.shift).zip(&self.scale).map(|((v, s), c)| v * c + s).collect()
    }

    pub fn apply_data(&self, data: &DataMatrix) -> Result<DataMatrix> {
        self.check(data)?;
        DataMatrix::new(data.matrix().map_rows(self.dim(), |r| Ok(self.apply(r)))?)
    }

    pub fn denormalize(&self, data: &DataMatrix) -> Result<DataMatrix> {
        self.check(data)?;
        DataMatrix::new(data.matrix().map_rows(self.dim(), |r| Ok(self.invert(r)))?)
    }

    fn check(&self, data: &DataMatrix) -> Result<()> {
        if data.dim() != self.dim() {
            return Err(Error::dims(format!(
                "normalization has {} columns, data has {}",
                self.dim(),
                data.dim()
            )));
        }
        Ok(())
    }
}

/// Mean / standard-deviation standardization (population moments).
pub fn normalize(data: &DataMatrix, mode: NormalizationMode) -> Result<(DataMatrix, NormalizationSpec)> {
    let n = data.dim();
    let count = data.len() as f64;
    let (shift, scale) = match mode {
        NormalizationMode::PerDimension => {
            let mean = data.column_means();
            let mut var = vec![0.0; n];
            for r in data.rows() {
                for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
            let mut sd = Vec::with_capacity(n);
            for (j, v) in var.into_iter().enumerate() {
                let s = (v / count).sqrt();
                if !(s > 0.0) || s <= 1e-12 * mean[j].abs() {
                    return Err(Error::ConstantColumn(j));
                }
                sd.push(s);
            }
            (mean, sd)
        }
        NormalizationMode::Joint => {
            let all = data.matrix().as_slice();
            let total = all.len() as f64;
            let mean = all.iter().sum::<f64>() / total;
            let sd = (all.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / total).sqrt();
            if !(sd > 0.0) || sd <= 1e-12 * mean.abs() {
                return Err(Error::ConstantColumn(0));
            }
            (vec![mean; n], vec![sd; n])
        }
    };
    let spec = NormalizationSpec { mode, shift, scale };
    let mut out = spec.apply_data(data)?;
    if let Some(names) = data.names() {
        out = out.with_names(names.to_vec())?;
    }
    Ok((out, spec))
}

fn default_inner_steps() -> usize {
    15
}
fn default_lr() -> f64 {
    1e-3
}

fn default_true() -> bool {
    true
}

fn default_noise_draws() -> usize {
    100
}

/// Parameters of one experiment, read from a TOML document.
///
/// Recognised keys: `epsilon_grid`, `z`, `eta`, `epochs`, `inner_steps`,
/// `lr`, `seed`, `noise_draws`, `mode`. Anything else is rejected. `eta` has
/// no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub epsilon_grid: Vec<f64>,
    pub z: usize,
    pub eta: f64,
    pub epochs: usize,
    #[serde(default = "default_inner_steps")]
    pub inner_steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise_draws")]
    pub noise_draws: usize,
    #[serde(default)]
    pub mode: NormalizationMode,
    #[serde(default = "default_true")]
    pub align_latent: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon_grid.is_empty() {
            return Err(Error::Config("epsilon_grid must not be empty".into()));
        }
        if let Some(e) = self.epsilon_grid.iter().find(|e| !(**e > 0.0)) {
            return Err(Error::Config(format!("epsilon must be positive, got {e}")));
        }
        if self.z == 0 {
            return Err(Error::Config("z must be at least 1".into()));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be non-negative, got {}", self.eta)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.noise_draws == 0 {
            return Err(Error::Config("noise_draws must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn parse(text: &str, header: bool) -> Result<DataMatrix> {
        read_csv(Cursor::new(text.to_owned()), header, Path::new("mem.csv"))
    }

    #[test]
    fn loads_plain_and_headed_csv() {
        let d = parse("1,2\n3,4\n5,6\n", false).unwrap();
        assert_eq!((d.len(), d.dim()), (3, 2));
        assert!(d.names().is_none());

        let d = parse("a,b\n1,2\n3,4\n5.5,6\n", true).unwrap();
        assert_eq!((d.len(), d.dim()), (3, 2));
        assert_eq!(d.names().unwrap(), ["a", "b"]);
        assert_eq!(d.row(2), [5.5, 6.0]);
    }

    #[test]
    fn csv_errors_carry_location() {
        match parse("1,2\n3,x\n", false) {
            Err(Error::Parse { row: 2, col: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse("1,2\n3\n", false) {
            Err(Error::RaggedRows { row: 2, expected: 2, found: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_csv_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x,y\n0,1\n2,3\n").unwrap();
        let d = load_csv(&p, true).unwrap();
        assert_eq!(d.row(1), [2.0, 3.0]);
        assert!(matches!(load_csv(dir.path().join("missing.csv"), false), Err(Error::Io { .. })));
    }

    #[test]
    fn standardizes_columns() {
        let d = DataMatrix::from_rows(&[vec![0.0, 5.0], vec![2.0, 7.0]]).unwrap();
        let (z, spec) = normalize(&d, NormalizationMode::PerDimension).unwrap();
        assert_eq!(z.matrix().col(0), vec![-1.0, 1.0]);
        assert_eq!(z.matrix().col(1), vec![-1.0, 1.0]);
        assert_eq!(spec.shift, vec![1.0, 6.0]);

        // already standardized: unchanged, identity spec
        let (z2, spec2) = normalize(&z, NormalizationMode::PerDimension).unwrap();
        assert_eq!(z2, z);
        assert_eq!(spec2, NormalizationSpec::identity(2));

        let c = DataMatrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 3.0]]).unwrap();
        assert!(matches!(normalize(&c, NormalizationMode::PerDimension), Err(Error::ConstantColumn(1))));
    }

    #[test]
    fn joint_mode_uses_global_moments() {
        let d = DataMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap();
        let (z, spec) = normalize(&d, NormalizationMode::Joint).unwrap();
        assert_eq!(spec.shift, vec![1.5, 1.5]);
        let all = z.matrix().as_slice();
        let mean: f64 = all.iter().sum::<f64>() / 4.0;
        let var: f64 = all.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let text = "epsilon_grid = [0.5, 1.0]\nz = 3\neta = 0.2\nepochs = 10\n";
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.inner_steps, 15);
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.noise_draws, 100);
        assert_eq!(cfg.mode, NormalizationMode::PerDimension);
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);

        let unknown = format!("{text}bogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml_str(&unknown), Err(Error::Config(_))));
        let no_eta = "epsilon_grid = [1.0]\nz = 3\nepochs = 10\n";
        assert!(ExperimentConfig::from_toml_str(no_eta).is_err());
        let bad_eps = "epsilon_grid = [0.0]\nz = 3\neta = 0.2\nepochs = 10\n";
        let err = ExperimentConfig::from_toml_str(bad_eps).unwrap_err();
        assert!(err.to_string().contains("epsilon must be positive"));
        let joint = format!("{text}mode = \"joint\"\n");
        assert_eq!(ExperimentConfig::from_toml_str(&joint).unwrap().mode, NormalizationMode::Joint);
    }

    proptest! {
        #[test]
        fn normalize_inverts(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 3..20),
            joint in any::<bool>(),
        ) {
            let d = DataMatrix::from_rows(&rows).unwrap();
            let mode = if joint { NormalizationMode::Joint } else { NormalizationMode::PerDimension };
            if let Ok((z, spec)) = normalize(&d, mode) {
                let back = spec.denormalize(&z).unwrap();
                for (a, b) in back.matrix().as_slice().iter().zip(d.matrix().as_slice()) {
                    prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
                }
            }
        }
    }
}
