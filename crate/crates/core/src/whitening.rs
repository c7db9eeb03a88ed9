//! Moment estimation and the whitened representation `h = L⁻¹(x − μ)`.
//!
//! The covariance of the centred data is factored as `L·Lᵀ`; in the whitened
//! coordinates the data has identity covariance and a linear task `K` acts
//! through `P = K·L`. The spectrum of `PᵀP` drives every closed-form design
//! in [`crate::linear_solver`].

use crate::data_io::DataMatrix;
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

const MAX_JITTER_DOUBLINGS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    mean: Vec<f64>,
    factor: Matrix,
    jitter: f64,
}

impl WhiteningModel {
    /// A model from explicit parts. `factor` must be lower-triangular with a
    /// positive diagonal.
    pub fn from_parts(mean: Vec<f64>, factor: Matrix) -> Result<Self> {
        let n = mean.len();
        if factor.rows() != n || factor.cols() != n {
            return Err(Error::dims(format!(
                "mean has length {n} but factor is {}x{}",
                factor.rows(),
                factor.cols()
            )));
        }
        for i in 0..n {
            if !(factor[(i, i)] > 0.0) {
                return Err(Error::SingularTriangular(i));
            }
            if (i + 1..n).any(|j| factor[(i, j)] != 0.0) {
                return Err(Error::InvalidArgument("whitening factor must be lower-triangular".into()));
            }
        }
        Ok(Self { mean, factor, jitter: 0.0 })
    }

    /// `μ = 0`, `L = I`: the whitened and raw coordinates coincide.
    pub fn identity(n: usize) -> Self {
        Self { mean: vec![0.0; n], factor: Matrix::identity(n), jitter: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    /// Diagonal jitter that had to be added before the covariance factored.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn whiten(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let centred: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        numerics::lower_tri_inverse_apply(&self.factor, &centred)
    }

    pub fn unwhiten(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check_len(h.len())?;
        let mut x = self.factor.matvec(h)?;
        numerics::axpy(1.0, &self.mean, &mut x);
        Ok(x)
    }

    pub fn whiten_data(&self, data: &DataMatrix) -> Result<DataMatrix> {
        DataMatrix::new(data.matrix().map_rows(self.dim(), |r| self.whiten(r))?)
    }

    pub fn unwhiten_data(&self, data: &DataMatrix) -> Result<DataMatrix> {
        DataMatrix::new(data.matrix().map_rows(self.dim(), |r| self.unwhiten(r))?)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::dims(format!("vector of length {len}, model dimension {}", self.dim())));
        }
        Ok(())
    }
}

/// Sample mean and unbiased (`N − 1`) covariance.
pub fn sample_moments(data: &DataMatrix) -> (Vec<f64>, Matrix) {
    let mean = data.column_means();
    let n = data.dim();
    let mut cov = Matrix::zeros(n, n);
    let mut centred = vec![0.0; n];
    for r in data.rows() {
        for ((c, x), m) in centred.iter_mut().zip(r).zip(&mean) {
            *c = x - m;
        }
        for i in 0..n {
            for j in 0..=i {
                cov[(i, j)] += centred[i] * centred[j];
            }
        }
    }
    let denom = (data.len() - 1) as f64;
    for i in 0..n {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}

/// Fits mean and Cholesky factor of the sample covariance.
///
/// If the covariance does not factor, `δ·I` is added with `δ` starting at
/// `1e-10·trace/n` and doubling until it does; the final `δ` is recorded.
pub fn fit_whitening(data: &DataMatrix) -> Result<WhiteningModel> {
    let n = data.dim();
    if data.len() < n + 1 {
        return Err(Error::TooFewSamples { have: data.len(), need: n + 1 });
    }
    let (mean, cov) = sample_moments(data);
    if let Ok(factor) = numerics::cholesky(&cov) {
        return Ok(WhiteningModel { mean, factor, jitter: 0.0 });
    }
    let base = cov.trace() / n as f64;
    let mut delta = if base > 0.0 { 1e-10 * base } else { 1e-10 };
    for _ in 0..MAX_JITTER_DOUBLINGS {
        let mut c = cov.clone();
        c.add_diag(delta);
        if let Ok(factor) = numerics::cholesky(&c) {
            return Ok(WhiteningModel { mean, factor, jitter: delta });
        }
        delta *= 2.0;
    }
    Err(Error::NotPositiveDefinite { index: 0, pivot: 0.0 })
}

/// Task matrix in whitened coordinates together with its Gram spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedTask {
    pub p: Matrix,
    /// Eigenvalues of `PᵀP`, non-increasing, clipped at zero.
    pub lambda: Vec<f64>,
    /// Matching unit eigenvectors as columns.
    pub q: Matrix,
}

impl WhitenedTask {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn gram(&self) -> Matrix {
        self.p.gram()
    }
}

/// `P = K·L` and the eigen-decomposition of `PᵀP`.
pub fn build_task(model: &WhiteningModel, k: &Matrix) -> Result<WhitenedTask> {
    if k.cols() != model.dim() {
        return Err(Error::dims(format!(
            "task matrix has {} columns, data has dimension {}",
            k.cols(),
            model.dim()
        )));
    }
    let p = k.matmul(model.factor())?;
    let (mut lambda, q) = numerics::sym_eig(&p.gram())?;
    lambda.iter_mut().for_each(|l| *l = l.max(0.0));
    Ok(WhitenedTask { p, lambda, q })
}

/// Radii bracketing the boundary of the empirical convex hull.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusBounds {
    pub r_min: f64,
    pub r_max: f64,
    /// Radius fed to the hypersphere design; always `r_max`.
    pub r_used: f64,
    /// Whether `r_min` came from exact facet enumeration (`n ≤ 3`).
    pub r_min_exact: bool,
}

/// Computes `r_max = max ‖h‖₂` and an inscribed-ball radius `r_min`.
///
/// For `n ≤ 3` `r_min` is the exact distance from the origin to the nearest
/// facet of the hull (zero when the origin is not interior). Otherwise it is
/// the smallest axis-direction support value `min_{i,±} max_j ±h_{j,i}`,
/// a cheap heuristic that is reported only.
pub fn radius_bounds(whitened: &DataMatrix) -> Result<RadiusBounds> {
    if whitened.is_empty() {
        return Err(Error::EmptyData);
    }
    let r_max = whitened.rows().map(numerics::norm2).fold(0.0, f64::max);
    let n = whitened.dim();
    let (r_min, exact) = match n {
        1 => {
            let (lo, hi) = whitened
                .rows()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[0]), hi.max(r[0])));
            ((-lo).min(hi).max(0.0), true)
        }
        2 => (hull2_inradius(whitened), true),
        3 => (hull3_inradius(whitened), true),
        _ => {
            let mut best = f64::INFINITY;
            for i in 0..n {
                let (lo, hi) = whitened
                    .rows()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[i]), hi.max(r[i])));
                best = best.min(hi).min(-lo);
            }
            (best.max(0.0), false)
        }
    };
    Ok(RadiusBounds { r_min: r_min.min(r_max), r_max, r_used: r_max, r_min_exact: exact })
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; returns the hull counter-clockwise.
fn hull2(points: &mut [[f64; 2]]) -> Vec<[f64; 2]> {
    points.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(points.len() + 1);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(points.iter()) } else { Box::new(points.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross2(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn hull2_inradius(data: &DataMatrix) -> f64 {
    let mut pts: Vec<[f64; 2]> = data.rows().map(|r| [r[0], r[1]]).collect();
    let hull = hull2(&mut pts);
    if hull.len() < 3 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        // signed distance of the origin to the edge line, positive inside
        let d = cross2(a, b, [0.0, 0.0]) / len;
        best = best.min(d);
    }
    best.max(0.0)
}

type P3 = [f64; 3];

fn sub3(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: P3, b: P3) -> P3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot3(a: P3, b: P3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

struct Face {
    v: [usize; 3],
    normal: P3,
    offset: f64,
    alive: bool,
}

impl Face {
    fn new(pts: &[P3], v: [usize; 3]) -> Self {
        let normal = cross3(sub3(pts[v[1]], pts[v[0]]), sub3(pts[v[2]], pts[v[0]]));
        let offset = dot3(normal, pts[v[0]]);
        Face { v, normal, offset, alive: true }
    }

    fn side(&self, p: P3) -> f64 {
        dot3(self.normal, p) - self.offset
    }
}

/// Incremental 3-D hull; facets are oriented with outward normals.
/// Returns `None` when the points are (numerically) coplanar.
fn hull3(pts: &[P3]) -> Option<Vec<Face>> {
    let scale = pts.iter().flat_map(|p| p.iter()).fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let eps = 1e-12 * scale;

    // initial non-degenerate tetrahedron
    let i0 = 0;
    let i1 = (1..pts.len()).find(|&i| {
        let d = sub3(pts[i], pts[i0]);
        dot3(d, d).sqrt() > eps
    })?;
    let i2 = (1..pts.len()).find(|&i| {
        let c = cross3(sub3(pts[i1], pts[i0]), sub3(pts[i], pts[i0]));
        dot3(c, c).sqrt() > eps * scale
    })?;
    let base = Face::new(pts, [i0, i1, i2]);
    let nlen = dot3(base.normal, base.normal).sqrt();
    let i3 = (1..pts.len()).find(|&i| base.side(pts[i]).abs() > eps * nlen)?;

    let mut faces: Vec<Face> = Vec::new();
    let tet = [i0, i1, i2, i3];
    let centroid = {
        let mut c = [0.0; 3];
        for &i in &tet {
            for k in 0..3 {
                c[k] += pts[i][k] / 4.0;
            }
        }
        c
    };
    for (a, b, c) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        let mut f = Face::new(pts, [tet[a], tet[b], tet[c]]);
        if f.side(centroid) > 0.0 {
            f = Face::new(pts, [tet[a], tet[c], tet[b]]);
        }
        faces.push(f);
    }

    for (pi, &p) in pts.iter().enumerate() {
        if tet.contains(&pi) {
            continue;
        }
        let visible: Vec<usize> = faces
            .iter()
            .enumerate()
            .filter(|(_, f)| f.alive && f.side(p) > eps * dot3(f.normal, f.normal).sqrt())
            .map(|(i, _)| i)
            .collect();
        if visible.is_empty() {
            continue;
        }
        // horizon: directed edges of visible faces whose reverse is not visible
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &fi in &visible {
            let v = faces[fi].v;
            for k in 0..3 {
                edges.push((v[k], v[(k + 1) % 3]));
            }
        }
        for &fi in &visible {
            faces[fi].alive = false;
        }
        let horizon: Vec<(usize, usize)> =
            edges.iter().copied().filter(|&(a, b)| !edges.contains(&(b, a))).collect();
        for (a, b) in horizon {
            faces.push(Face::new(pts, [a, b, pi]));
        }
        if faces.len() > 8 * pts.len() {
            faces.retain(|f| f.alive);
        }
    }
    faces.retain(|f| f.alive);
    Some(faces)
}

fn hull3_inradius(data: &DataMatrix) -> f64 {
    let pts: Vec<P3> = data.rows().map(|r| [r[0], r[1], r[2]]).collect();
    let Some(faces) = hull3(&pts) else {
        return 0.0;
    };
    faces
        .iter()
        .map(|f| {
            let len = dot3(f.normal, f.normal).sqrt();
            // origin distance to the facet plane, positive when inside
            f.offset / len
        })
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}
