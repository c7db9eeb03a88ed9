//! Versioned text files for fitted codecs.
//!
//! The first line names the codec kind and format version:
//! `taskldp linear-codec v1` or `taskldp net-codec v1`. The rest is a
//! sequence of `key value…` lines; matrices are written as a `rows cols`
//! line followed by one line of row-major values. Numbers use 17 significant
//! digits, so a save/load round trip is exact.

use std::path::Path;

use crate::data_io::{DataMatrix, NormalizationMode, NormalizationSpec};
use crate::error::{Error, Result};
use crate::linear_solver::{Approach, LinearCodec};
use crate::neural::{join17, keyed, next_line, parse_floats, LossFn, Net};
use crate::numerics::Matrix;
use crate::trainer::NetCodec;
use crate::whitening::WhiteningModel;

pub const LINEAR_HEADER: &str = "taskldp linear-codec v1";
pub const NET_HEADER: &str = "taskldp net-codec v1";

/// Either codec kind, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Codec {
    Linear(LinearCodec),
    Net(NetCodec),
}

impl Codec {
    pub fn input_dim(&self) -> usize {
        match self {
            Codec::Linear(c) => c.input_dim(),
            Codec::Net(c) => c.input_dim(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Codec::Linear(c) => c.latent_dim(),
            Codec::Net(c) => c.latent_dim(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            Codec::Linear(c) => c.epsilon,
            Codec::Net(c) => c.epsilon,
        }
    }

    pub fn delta1(&self) -> f64 {
        match self {
            Codec::Linear(c) => c.delta1,
            Codec::Net(c) => c.delta1,
        }
    }

    pub fn noise_scale(&self) -> f64 {
        match self {
            Codec::Linear(c) => c.noise_scale(),
            Codec::Net(c) => c.noise_scale(),
        }
    }

    /// Privatizes every row of raw data under `seed`.
    pub fn anonymize_data(&self, data: &DataMatrix, seed: u64) -> Result<DataMatrix> {
        if data.dim() != self.input_dim() {
            return Err(Error::dims(format!("data has {} columns, codec expects {}", data.dim(), self.input_dim())));
        }
        match self {
            Codec::Linear(c) => c.anonymize_data(data, seed),
            Codec::Net(c) => c.anonymize_data(data, seed),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            Codec::Linear(c) => linear_to_text(c),
            Codec::Net(c) => net_to_text(c),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match next_line(&mut lines)? {
            LINEAR_HEADER => parse_linear(&mut lines).map(Codec::Linear),
            NET_HEADER => parse_net(&mut lines).map(Codec::Net),
            other => Err(Error::Format(format!("unrecognised codec header {other:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io { path: path.into(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        Self::from_text(&text)
    }
}

fn push_scalar(s: &mut String, key: &str, v: f64) {
    s.push_str(&format!("{key} {v:.16e}\n"));
}

fn push_matrix(s: &mut String, key: &str, m: &Matrix) {
    s.push_str(&format!("{key} {} {}\n{}\n", m.rows(), m.cols(), join17(m.as_slice())));
}

fn push_vector(s: &mut String, key: &str, v: &[f64]) {
    s.push_str(&format!("{key} {}\n", join17(v)));
}

fn linear_to_text(c: &LinearCodec) -> String {
    let mut s = format!("{LINEAR_HEADER}\napproach {}\n", c.approach);
    push_scalar(&mut s, "epsilon", c.epsilon);
    push_scalar(&mut s, "delta1", c.delta1);
    push_scalar(&mut s, "sigma_w2", c.sigma_w2);
    push_vector(&mut s, "mean", c.whitening.mean());
    push_matrix(&mut s, "factor", c.whitening.factor());
    push_matrix(&mut s, "encoder", &c.encoder);
    push_matrix(&mut s, "decoder", &c.decoder);
    s
}

fn net_to_text(c: &NetCodec) -> String {
    let mut s = format!("{NET_HEADER}\nloss {}\n", c.loss);
    push_scalar(&mut s, "epsilon", c.epsilon);
    push_scalar(&mut s, "delta1", c.delta1);
    match &c.normalization {
        None => s.push_str("normalization none\n"),
        Some(n) => {
            s.push_str(&format!("normalization {}\n", n.mode));
            push_vector(&mut s, "shift", &n.shift);
            push_vector(&mut s, "scale", &n.scale);
        }
    }
    for (key, net) in [("encoder", &c.encoder), ("decoder", &c.decoder), ("task", &c.task)] {
        s.push_str(key);
        s.push('\n');
        s.push_str(&net.to_text());
    }
    s
}

fn scalar<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<f64> {
    let v = keyed(next_line(lines)?, key)?;
    v.parse().map_err(|_| Error::Format(format!("bad value for {key}: {v:?}")))
}

fn vector<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<Vec<f64>> {
    parse_floats(keyed(next_line(lines)?, key)?)
}

fn matrix<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<Matrix> {
    let shape = keyed(next_line(lines)?, key)?;
    let dims: Vec<usize> = shape
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format(format!("bad shape for {key}: {shape:?}"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Format(format!("bad shape for {key}: {shape:?}")));
    };
    // an empty matrix has an empty value line, which `next_line` would skip
    let values = if rows * cols == 0 { Vec::new() } else { parse_floats(next_line(lines)?)? };
    Matrix::from_vec(rows, cols, values)
}

fn parse_linear<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<LinearCodec> {
    let approach: Approach = keyed(next_line(lines)?, "approach")?.parse()?;
    let epsilon = scalar(lines, "epsilon")?;
    let delta1 = scalar(lines, "delta1")?;
    let sigma_w2 = scalar(lines, "sigma_w2")?;
    let mean = vector(lines, "mean")?;
    let factor = matrix(lines, "factor")?;
    let encoder = matrix(lines, "encoder")?;
    let decoder = matrix(lines, "decoder")?;
    let whitening = WhiteningModel::from_parts(mean, factor)?;
    let n = whitening.dim();
    if encoder.cols() != n || decoder.rows() != n || decoder.cols() != encoder.rows() {
        return Err(Error::Format(format!(
            "encoder {}x{} and decoder {}x{} do not fit {n} inputs",
            encoder.rows(),
            encoder.cols(),
            decoder.rows(),
            decoder.cols()
        )));
    }
    if !(epsilon > 0.0) || delta1 < 0.0 || sigma_w2 < 0.0 {
        return Err(Error::Format("epsilon must be positive and noise figures non-negative".into()));
    }
    Ok(LinearCodec { approach, whitening, encoder, decoder, sigma_w2, delta1, epsilon })
}

fn parse_net<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<NetCodec> {
    let loss: LossFn = keyed(next_line(lines)?, "loss")?.parse().map_err(|e: Error| Error::Format(e.to_string()))?;
    let epsilon = scalar(lines, "epsilon")?;
    let delta1 = scalar(lines, "delta1")?;
    let norm = keyed(next_line(lines)?, "normalization")?;
    let normalization = if norm == "none" {
        None
    } else {
        let mode: NormalizationMode = norm.parse()?;
        let shift = vector(lines, "shift")?;
        let scale = vector(lines, "scale")?;
        if shift.len() != scale.len() {
            return Err(Error::Format("normalization shift and scale lengths differ".into()));
        }
        Some(NormalizationSpec { mode, shift, scale })
    };
    let mut nets = Vec::with_capacity(3);
    for key in ["encoder", "decoder", "task"] {
        keyed(next_line(lines)?, key)?;
        nets.push(Net::parse_lines(lines)?);
    }
    let task = nets.pop().unwrap();
    let decoder = nets.pop().unwrap();
    let encoder = nets.pop().unwrap();
    let mut codec = NetCodec::new(encoder, decoder, task, loss, epsilon).map_err(|e| Error::Format(e.to_string()))?;
    if !(delta1 >= 0.0) {
        return Err(Error::Format(format!("delta1 must be non-negative, got {delta1}")));
    }
    if normalization.as_ref().is_some_and(|n| n.dim() != codec.input_dim()) {
        return Err(Error::Format("normalization dimension differs from the codec input".into()));
    }
    codec.delta1 = delta1;
    codec.normalization = normalization;
    Ok(codec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_solver::solve_task_aware;
    use crate::neural::Activation;
    use crate::rng;
    use crate::trainer::CodecArch;
    use crate::whitening::{build_task, fit_whitening};

    fn linear_codec() -> LinearCodec {
        let mut s = rng::stream(1);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..3).map(|_| rng::standard_normal(&mut s)).collect())
            .collect();
        let data = DataMatrix::from_rows(&rows).unwrap();
        let model = fit_whitening(&data).unwrap();
        let task = build_task(&model, &Matrix::from_diag(&[3.0, 1.0, 0.2])).unwrap();
        let h = model.whiten_data(&data).unwrap();
        solve_task_aware(&model, &task, &h, 1.3).unwrap().0
    }

    #[test]
    fn linear_round_trip_is_exact() {
        let c = Codec::Linear(linear_codec());
        let text = c.to_text();
        assert!(text.starts_with(LINEAR_HEADER));
        assert_eq!(Codec::from_text(&text).unwrap(), c);
    }

    #[test]
    fn net_round_trip_is_exact() {
        let mut s = rng::stream(2);
        let task = Net::init(&[4, 6, 1], &[Activation::Relu, Activation::Logistic], &mut s).unwrap();
        let mut c = NetCodec::init(&CodecArch::one_hidden(2, 5), 4, task, LossFn::BinaryCrossEntropy, 0.7, 3).unwrap();
        c.delta1 = 1.25;
        let plain = Codec::Net(c.clone());
        assert_eq!(Codec::from_text(&plain.to_text()).unwrap(), plain);
        c.normalization = Some(NormalizationSpec { mode: NormalizationMode::Joint, shift: vec![0.1, 0.2, 0.3, 0.4], scale: vec![2.0; 4] });
        let normed = Codec::Net(c);
        assert_eq!(Codec::from_text(&normed.to_text()).unwrap(), normed);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(Codec::from_text("taskldp linear-codec v9\n"), Err(Error::Format(_))));
        assert!(matches!(Codec::from_text(""), Err(Error::Format(_))));
        let text = Codec::Linear(linear_codec()).to_text();
        let truncated: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(Codec::from_text(&truncated).is_err());
        let bad: String = text
            .lines()
            .map(|l| if l.starts_with("encoder ") { format!("{} 2", &l[..l.rfind(' ').unwrap()]) } else { l.to_string() })
            .collect::<Vec<_>>()
            .join("\n");
        assert!(Codec::from_text(&bad).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codec.txt");
        let c = Codec::Linear(linear_codec());
        c.save(&path).unwrap();
        assert_eq!(Codec::load(&path).unwrap(), c);
    }
}
