//! Tensor grids and grid-valued solutions, with their CSV and binary encodings.
//!
//! Binary layout (all integers `u32`, all reals `f64`, little-endian):
//!
//! ```text
//! magic   "KGSL"
//! version 1
//! d       spatial dimension
//! nt      number of stored time slices
//! n[d]    node count per axis
//! box[d]  (min, max) per axis
//! t[nt]   slice times
//! u[nt][n1]…[nd]   values, last axis fastest
//! ```

use std::io::{self, Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::io::fmt_g17;

pub const BINARY_MAGIC: &[u8; 4] = b"KGSL";
pub const BINARY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("axis {axis}: need at least 3 nodes and a finite, non-empty interval")]
    BadAxis { axis: usize },
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("not a grid file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Self {
        Self { min, max, n }
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn coord(&self, k: usize) -> f64 {
        if k + 1 == self.n {
            self.max
        } else {
            self.min + self.spacing() * k as f64
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.coord(k)).collect()
    }
}

/// Uniform tensor grid over a box in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialGrid {
    axes: Vec<Axis>,
}

impl SpatialGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self, GridError> {
        for (i, a) in axes.iter().enumerate() {
            if a.n < 3 || !(a.min.is_finite() && a.max.is_finite() && a.min < a.max) {
                return Err(GridError::BadAxis { axis: i });
            }
        }
        Ok(Self { axes })
    }

    /// Same box and node count on every axis.
    pub fn cube(d: usize, min: f64, max: f64, n: usize) -> Result<Self, GridError> {
        Self::new(vec![Axis::new(min, max, n); d])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.axes.iter().map(Axis::spacing).collect()
    }

    /// Volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacings().iter().product()
    }

    /// Flat-index stride of each axis.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for i in (0..self.dim().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.axes[i + 1].n;
        }
        s
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            idx[i] = flat % self.axes[i].n;
            flat /= self.axes[i].n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&k, a)| acc * a.n + k)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&k, a)| a.coord(k))
            .collect()
    }

    /// Trapezoid weight of a node: cell volume halved once per boundary axis.
    pub fn trapezoid_weight(&self, flat: usize) -> f64 {
        let idx = self.multi_index(flat);
        idx.iter()
            .zip(&self.axes)
            .map(|(&k, a)| {
                let h = a.spacing();
                if k == 0 || k + 1 == a.n {
                    0.5 * h
                } else {
                    h
                }
            })
            .product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.axes)
            .all(|(&v, a)| v >= a.min && v <= a.max)
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|k| f(&self.node(k))).collect()
    }

    /// Multilinear interpolation of nodal `values` at `x`; `None` outside the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Option<f64> {
        if !self.contains(x) {
            return None;
        }
        let d = self.dim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for i in 0..d {
            let a = &self.axes[i];
            let s = (x[i] - a.min) / a.spacing();
            let k = (s.floor() as usize).min(a.n - 2);
            base[i] = k;
            frac[i] = s - k as f64;
        }
        let mut acc = 0.0;
        let mut idx = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for i in 0..d {
                let bit = (corner >> i) & 1;
                idx[i] = base[i] + bit;
                w *= if bit == 1 { frac[i] } else { 1.0 - frac[i] };
            }
            if w != 0.0 {
                acc += w * values[self.flat_index(&idx)];
            }
        }
        Some(acc)
    }
}

/// How a [`GridSolution`] was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct SchemeMeta {
    pub scheme: String,
    pub order: u32,
    pub dt: f64,
    /// Largest explicit CFL number encountered.
    pub cfl: f64,
}

/// Values of a function on a spatial grid at a list of times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSolution {
    pub grid: SpatialGrid,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub meta: SchemeMeta,
}

impl GridSolution {
    pub fn new(
        grid: SpatialGrid,
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        meta: SchemeMeta,
    ) -> Result<Self, GridError> {
        if times.len() != values.len() {
            return Err(GridError::Length {
                expected: times.len(),
                got: values.len(),
            });
        }
        for v in &values {
            if v.len() != grid.len() {
                return Err(GridError::Length {
                    expected: grid.len(),
                    got: v.len(),
                });
            }
        }
        Ok(Self {
            grid,
            times,
            values,
            meta,
        })
    }

    /// Index of the stored slice whose time is closest to `t`.
    pub fn nearest_slice(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(k, _)| k)
    }

    /// Trapezoid integral of slice `k` over the grid box.
    pub fn mass(&self, k: usize) -> f64 {
        let terms: Vec<f64> = self.values[k]
            .iter()
            .enumerate()
            .map(|(i, u)| u * self.grid.trapezoid_weight(i))
            .collect();
        crate::linalg::pairwise_sum(&terms)
    }

    pub fn min_value(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with columns `t,x1,…,xd,u`, LF line endings and `%.17g` numbers.
    ///
    /// Each line of `comment` is written first, prefixed by `# `.
    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> io::Result<()> {
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        let mut header = String::from("t");
        for i in 1..=self.grid.dim() {
            header.push_str(&format!(",x{i}"));
        }
        header.push_str(",u\n");
        w.write_all(header.as_bytes())?;
        let nodes: Vec<Vec<f64>> = (0..self.grid.len()).map(|k| self.grid.node(k)).collect();
        for (t, slice) in self.times.iter().zip(&self.values) {
            let t = fmt_g17(*t);
            for (x, u) in nodes.iter().zip(slice) {
                let mut line = t.clone();
                for v in x {
                    line.push(',');
                    line.push_str(&fmt_g17(*v));
                }
                line.push(',');
                line.push_str(&fmt_g17(*u));
                line.push('\n');
                w.write_all(line.as_bytes())?;
            }
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&(self.grid.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.times.len() as u32).to_le_bytes())?;
        for a in self.grid.axes() {
            w.write_all(&(a.n as u32).to_le_bytes())?;
        }
        for a in self.grid.axes() {
            w.write_all(&a.min.to_le_bytes())?;
            w.write_all(&a.max.to_le_bytes())?;
        }
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for slice in &self.values {
            for v in slice {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, GridError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(GridError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != BINARY_VERSION {
            return Err(GridError::Format(format!("unsupported version {version}")));
        }
        let d = read_u32(&mut r)? as usize;
        let nt = read_u32(&mut r)? as usize;
        if d == 0 || d > 16 {
            return Err(GridError::Format(format!("implausible dimension {d}")));
        }
        let counts = (0..d)
            .map(|_| read_u32(&mut r).map(|n| n as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let mut axes = Vec::with_capacity(d);
        for n in counts {
            let min = read_f64(&mut r)?;
            let max = read_f64(&mut r)?;
            axes.push(Axis::new(min, max, n));
        }
        let grid = SpatialGrid::new(axes)?;
        let times = (0..nt)
            .map(|_| read_f64(&mut r))
            .collect::<Result<Vec<_>, _>>()?;
        let mut values = Vec::with_capacity(nt);
        for _ in 0..nt {
            values.push(
                (0..grid.len())
                    .map(|_| read_f64(&mut r))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        Self::new(grid, times, values, SchemeMeta::default())
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
