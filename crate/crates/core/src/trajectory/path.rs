use std::io::{Read, Write};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planning path: `H + 1` waypoints in `d` dimensions, stored column-major
/// so that waypoint `k` is the contiguous slice `data[k*d .. (k+1)*d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathRepr", into = "PathRepr")]
pub struct Path {
    dim: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PathRepr {
    d: usize,
    #[serde(rename = "H")]
    horizon: usize,
    data: Vec<f64>,
}

impl TryFrom<PathRepr> for Path {
    type Error = Error;

    fn try_from(r: PathRepr) -> Result<Self> {
        let expected = r.d * (r.horizon + 1);
        if r.data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: r.data.len(),
            });
        }
        Path::from_columns(r.d, r.data)
    }
}

impl From<Path> for PathRepr {
    fn from(p: Path) -> Self {
        PathRepr {
            d: p.dim,
            horizon: p.horizon(),
            data: p.data,
        }
    }
}

impl Path {
    pub fn zeros(dim: usize, horizon: usize) -> Self {
        assert!(dim >= 1, "path dimension must be positive");
        Path {
            dim,
            data: vec![0.0; dim * (horizon + 1)],
        }
    }

    /// Builds a path from column-major data. Rejects non-finite entries.
    pub fn from_columns(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("path dimension must be positive"));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{} values do not form whole waypoints of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("path data"));
        }
        Ok(Path { dim, data })
    }

    pub fn from_waypoints<W: AsRef<[f64]>>(waypoints: &[W]) -> Result<Self> {
        let dim = waypoints
            .first()
            .map(|w| w.as_ref().len())
            .ok_or_else(|| Error::invalid("path needs at least one waypoint"))?;
        let mut data = Vec::with_capacity(dim * waypoints.len());
        for w in waypoints {
            let w = w.as_ref();
            if w.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: w.len(),
                });
            }
            data.extend_from_slice(w);
        }
        Path::from_columns(dim, data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The planning horizon `H`; the path has `H + 1` waypoints.
    #[inline]
    pub fn horizon(&self) -> usize {
        self.data.len() / self.dim - 1
    }

    #[inline]
    pub fn num_waypoints(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn waypoint(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub fn waypoint_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn waypoints(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Path) -> bool {
        self.dim == other.dim && self.data.len() == other.data.len()
    }

    pub(crate) fn check_shape(&self, other: &Path) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.data.len(),
                got: other.data.len(),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Path) {
        debug_assert!(self.same_shape(x));
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    /// Frobenius norm over all waypoints.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Path) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Adds `offset` to every waypoint.
    pub fn translate(&mut self, offset: &[f64]) {
        assert_eq!(offset.len(), self.dim);
        for w in self.data.chunks_exact_mut(self.dim) {
            for (x, o) in w.iter_mut().zip(offset) {
                *x += o;
            }
        }
    }

    /// Writes one row per waypoint: `k,x1,...,xd`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (k, wp) in self.waypoints().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(wp.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let bad = |e: &dyn std::fmt::Display| Error::invalid(format!("path csv: {e}"));
        let dim = r.headers().map_err(|e| bad(&e))?.len().saturating_sub(1);
        let mut data = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| bad(&e))?;
            let k: usize = rec[0].parse().map_err(|e| bad(&e))?;
            if k != row {
                return Err(bad(&format!("waypoint index {k} out of order")));
            }
            for field in rec.iter().skip(1) {
                data.push(field.parse::<f64>().map_err(|e| bad(&e))?);
            }
        }
        Path::from_columns(dim, data)
    }
}

impl Add<&Path> for &Path {
    type Output = Path;

    fn add(self, rhs: &Path) -> Path {
        assert!(self.same_shape(rhs), "path shapes differ");
        Path {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub<&Path> for &Path {
    type Output = Path;

    fn sub(self, rhs: &Path) -> Path {
        assert!(self.same_shape(rhs), "path shapes differ");
        Path {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<f64> for &Path {
    type Output = Path;

    fn mul(self, a: f64) -> Path {
        Path {
            dim: self.dim,
            data: self.data.iter().map(|x| a * x).collect(),
        }
    }
}
