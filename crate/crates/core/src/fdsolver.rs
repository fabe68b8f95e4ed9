//! Finite differences for the backward Cauchy problem
//!
//! ```text
//! Σ ∂_i(a_ij ∂_j u) + Σ ∂_i(a_i u) + c u + ⟨Bx, ∇u⟩ + ∂_t u = 0,   u(T, ·) = φ
//! ```
//!
//! marched from `T` down to `t`. Each step first applies the explicit part — first-order
//! upwind transport along `Bx`, conservative upwind fluxes for `a_i u`, the `c u` term and
//! centered mixed derivatives — and then implicit Euler diffusion along each of
//! `x₁..x_{m₀}` in turn, one tridiagonal solve per grid line. Boundaries are outflow: the
//! ghost value beyond an edge copies the edge value, which makes every diffusive flux
//! through the boundary zero.
//!
//! The module also estimates the fundamental solution from a narrow Gaussian bump and
//! measures the local sup bound for non-negative solutions on intrinsic cylinders.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coeff::{check_assumptions, AssumptionError, EvalError, OperatorSpec, ValidationBox};
use crate::grid::{GridError, GridSolution, SchemeMeta, SpatialGrid};
use crate::group::{DilationFamily, DriftMatrix, GroupElement};
use crate::linalg::{pairwise_sum, solve_tridiagonal};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Courant number used when no time step is requested.
pub const DEFAULT_COURANT: f64 = 0.9;

/// Lattice samples per axis when validating coefficients before a solve.
const ASSUMPTION_SAMPLES: usize = 5;

#[derive(Debug, Error)]
pub enum FdError {
    #[error("dimension {0} is not supported (at most {MAX_DIM})")]
    Dimension(usize),
    #[error("grid has dimension {got}, operator has {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("need t < T, got t = {t}, T = {big_t}")]
    TimeOrder { t: f64, big_t: f64 },
    #[error("explicit CFL number {cfl:.4} exceeds 1 (dt = {dt}, largest stable dt = {max_dt})")]
    Cfl { cfl: f64, dt: f64, max_dt: f64 },
    #[error("coefficients fail the class assumptions on the grid box: {0}")]
    Assumptions(#[from] AssumptionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("terminal data has {got} values, grid has {expected} nodes")]
    DataLength { got: usize, expected: usize },
    #[error("solution became non-finite at t = {0}")]
    NonFinite(f64),
    #[error("mollification width {eps} is below twice the largest spacing ({min})")]
    Epsilon { eps: f64, min: f64 },
    #[error("need 0 < rho < r with r - rho < 1, got rho = {rho}, r = {r}")]
    Radii { rho: f64, r: f64 },
    #[error("exponent p must be nonzero and finite")]
    Exponent,
    #[error("cylinder is not contained in the solution's space-time box")]
    CylinderOutside,
    #[error("no grid nodes fall inside the cylinder of radius {0}")]
    CylinderEmpty(f64),
    #[error("u = {value} < 0 at t = {t}, x = {x:?} inside the cylinder")]
    Negative { value: f64, t: f64, x: Vec<f64> },
}

/// Spatial grid plus the time interval and step of a backward solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdGrid {
    pub space: SpatialGrid,
    pub t_start: f64,
    pub t_end: f64,
    /// Requested step; `None` picks one from the CFL limit.
    pub dt: Option<f64>,
    /// Times in `(t_start, t_end)` at which the solution is kept, besides both ends.
    pub save_times: Vec<f64>,
}

impl FdGrid {
    pub fn new(space: SpatialGrid, t_start: f64, t_end: f64) -> Self {
        Self {
            space,
            t_start,
            t_end,
            dt: None,
            save_times: Vec::new(),
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn with_save_times(mut self, times: Vec<f64>) -> Self {
        self.save_times = times;
        self
    }

    /// `n` equally spaced save times strictly inside the interval.
    pub fn with_uniform_saves(self, n: usize) -> Self {
        let (a, b) = (self.t_start, self.t_end);
        let times = (1..=n)
            .map(|k| a + (b - a) * k as f64 / (n + 1) as f64)
            .collect();
        self.with_save_times(times)
    }
}

/// Coefficients sampled at every node, flattened.
struct NodeCoefficients {
    m0: usize,
    a: Vec<f64>,
    drift: Vec<f64>,
    c: Vec<f64>,
}

impl NodeCoefficients {
    fn sample(spec: &OperatorSpec, grid: &SpatialGrid, t: f64) -> Result<Self, EvalError> {
        let m0 = spec.m0();
        let values: Result<Vec<_>, EvalError> = (0..grid.len())
            .into_par_iter()
            .map(|k| spec.coeffs.eval(t, &grid.node(k)))
            .collect();
        let values = values?;
        let mut a = Vec::with_capacity(grid.len() * m0 * m0);
        let mut drift = Vec::with_capacity(grid.len() * m0);
        let mut c = Vec::with_capacity(grid.len());
        for v in values {
            for i in 0..m0 {
                for j in 0..m0 {
                    a.push(v.a[(i, j)]);
                }
                drift.push(v.drift[i]);
            }
            c.push(v.c);
        }
        Ok(Self { m0, a, drift, c })
    }

    fn a(&self, node: usize, i: usize, j: usize) -> f64 {
        self.a[node * self.m0 * self.m0 + i * self.m0 + j]
    }

    fn drift(&self, node: usize, i: usize) -> f64 {
        self.drift[node * self.m0 + i]
    }
}

/// Static description of the stencil geometry.
struct Stencil {
    n: Vec<usize>,
    h: Vec<f64>,
    strides: Vec<usize>,
    multi: Vec<Vec<usize>>,
    /// `(Bx)_k` at every node, flattened with stride `d`.
    velocity: Vec<f64>,
}

impl Stencil {
    fn new(grid: &SpatialGrid, drift: &DriftMatrix) -> Self {
        let d = grid.dim();
        let b = drift.matrix();
        let mut velocity = Vec::with_capacity(grid.len() * d);
        let mut multi = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let x = grid.node(k);
            for r in 0..d {
                velocity.push((0..d).map(|c| b[(r, c)] * x[c]).sum());
            }
            multi.push(grid.multi_index(k));
        }
        Self {
            n: grid.axes().iter().map(|a| a.n).collect(),
            h: grid.spacings(),
            strides: grid.strides(),
            multi,
            velocity,
        }
    }

    fn d(&self) -> usize {
        self.n.len()
    }

    /// Neighbour along `axis` in direction `+1`/`-1`, with copy at the edges.
    fn neighbour(&self, node: usize, axis: usize, forward: bool) -> usize {
        let k = self.multi[node][axis];
        if forward {
            if k + 1 < self.n[axis] {
                node + self.strides[axis]
            } else {
                node
            }
        } else if k > 0 {
            node - self.strides[axis]
        } else {
            node
        }
    }

    /// Explicit rate bound: `Σ|v_k|/h_k + Σ|a_i|/h_i + Σ_{i≠j}|a_ij|/(h_i h_j) + |c|`, maximized over nodes.
    fn explicit_rate(&self, coeffs: &NodeCoefficients) -> f64 {
        let d = self.d();
        let m0 = coeffs.m0;
        (0..self.multi.len())
            .map(|node| {
                let mut rate: f64 = (0..d)
                    .map(|k| self.velocity[node * d + k].abs() / self.h[k])
                    .sum();
                for i in 0..m0 {
                    rate += coeffs.drift(node, i).abs() / self.h[i];
                    for j in 0..m0 {
                        if i != j {
                            rate += coeffs.a(node, i, j).abs() / (self.h[i] * self.h[j]);
                        }
                    }
                }
                rate + coeffs.c[node].abs()
            })
            .fold(0.0, f64::max)
    }

    /// `u + Δt · (explicit part of the operator applied to u)`.
    fn explicit_step(&self, u: &[f64], coeffs: &NodeCoefficients, dt: f64) -> Vec<f64> {
        let d = self.d();
        let m0 = coeffs.m0;
        let mixed: Vec<(usize, usize, Vec<f64>)> = if m0 > 1 {
            let mut out = Vec::new();
            for i in 0..m0 {
                for j in 0..m0 {
                    if i != j {
                        // g = a_ij ∂_j u, centred
                        let g: Vec<f64> = (0..u.len())
                            .map(|n| {
                                let p = self.neighbour(n, j, true);
                                let m = self.neighbour(n, j, false);
                                coeffs.a(n, i, j) * (u[p] - u[m]) / (2.0 * self.h[j])
                            })
                            .collect();
                        out.push((i, j, g));
                    }
                }
            }
            out
        } else {
            Vec::new()
        };
        (0..u.len())
            .into_par_iter()
            .map(|n| {
                let mut rate = 0.0;
                for k in 0..d {
                    let v = self.velocity[n * d + k];
                    if v > 0.0 {
                        rate += v * (u[self.neighbour(n, k, true)] - u[n]) / self.h[k];
                    } else if v < 0.0 {
                        rate += v * (u[n] - u[self.neighbour(n, k, false)]) / self.h[k];
                    }
                }
                for i in 0..m0 {
                    let p = self.neighbour(n, i, true);
                    let m = self.neighbour(n, i, false);
                    let face = |a: usize, b: usize| {
                        // flux a_i u through the face between a (lower) and b (upper)
                        let speed = 0.5 * (coeffs.drift(a, i) + coeffs.drift(b, i));
                        speed * if speed > 0.0 { u[b] } else { u[a] }
                    };
                    rate += (face(n, p) - face(m, n)) / self.h[i];
                }
                for (i, _, g) in &mixed {
                    let p = self.neighbour(n, *i, true);
                    let m = self.neighbour(n, *i, false);
                    rate += (g[p] - g[m]) / (2.0 * self.h[*i]);
                }
                rate += coeffs.c[n] * u[n];
                u[n] + dt * rate
            })
            .collect()
    }

    /// Solves `(I − Δt ∂_i(a_ii ∂_i)) u = w` line by line along `axis`, in place.
    fn implicit_diffusion(&self, w: &mut [f64], coeffs: &NodeCoefficients, axis: usize, dt: f64) {
        let len = self.n[axis];
        let stride = self.strides[axis];
        let lambda = dt / (self.h[axis] * self.h[axis]);
        let starts: Vec<usize> = (0..w.len()).filter(|&n| self.multi[n][axis] == 0).collect();
        let lines: Vec<(usize, Vec<f64>)> = starts
            .par_iter()
            .map(|&start| {
                let idx = |k: usize| start + k * stride;
                let face: Vec<f64> = (0..len - 1)
                    .map(|k| {
                        0.5 * (coeffs.a(idx(k), axis, axis) + coeffs.a(idx(k + 1), axis, axis))
                    })
                    .collect();
                let mut sub = vec![0.0; len];
                let mut diag = vec![0.0; len];
                let mut sup = vec![0.0; len];
                let mut rhs: Vec<f64> = (0..len).map(|k| w[idx(k)]).collect();
                for k in 0..len {
                    let lo = if k > 0 { face[k - 1] } else { 0.0 };
                    let hi = if k + 1 < len { face[k] } else { 0.0 };
                    sub[k] = -lambda * lo;
                    sup[k] = -lambda * hi;
                    diag[k] = 1.0 + lambda * (lo + hi);
                }
                let mut scratch = vec![0.0; len];
                solve_tridiagonal(&sub, &diag, &sup, &mut rhs, &mut scratch);
                (start, rhs)
            })
            .collect();
        for (start, line) in lines {
            for (k, v) in line.into_iter().enumerate() {
                w[start + k * stride] = v;
            }
        }
    }
}

fn validation_box(grid: &FdGrid) -> ValidationBox {
    ValidationBox {
        t: (grid.t_start, grid.t_end),
        x: grid.space.axes().iter().map(|a| (a.min, a.max)).collect(),
    }
}

/// Backward solve of the Cauchy problem with terminal data `phi` at `grid.t_end`.
pub fn solve_backward(
    spec: &OperatorSpec,
    phi: &[f64],
    grid: &FdGrid,
) -> Result<GridSolution, FdError> {
    let d = spec.dim();
    if d > MAX_DIM {
        return Err(FdError::Dimension(d));
    }
    if grid.space.dim() != d {
        return Err(FdError::DimensionMismatch {
            got: grid.space.dim(),
            expected: d,
        });
    }
    if phi.len() != grid.space.len() {
        return Err(FdError::DataLength {
            got: phi.len(),
            expected: grid.space.len(),
        });
    }
    if !(grid.t_start < grid.t_end) {
        return Err(FdError::TimeOrder {
            t: grid.t_start,
            big_t: grid.t_end,
        });
    }
    check_assumptions(spec, &validation_box(grid), ASSUMPTION_SAMPLES)?;

    let stencil = Stencil::new(&grid.space, &spec.drift);
    let frozen = spec.coeffs.is_time_independent();
    let mut coeffs = NodeCoefficients::sample(spec, &grid.space, grid.t_end)?;
    let rate = stencil.explicit_rate(&coeffs);
    let span = grid.t_end - grid.t_start;
    let stable = if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    };
    let dt_max = match grid.dt {
        Some(dt) => {
            if dt * rate > 1.0 {
                return Err(FdError::Cfl {
                    cfl: dt * rate,
                    dt,
                    max_dt: stable,
                });
            }
            dt
        }
        None => (DEFAULT_COURANT * stable).min(span / 50.0),
    };

    let mut marks: Vec<f64> = grid
        .save_times
        .iter()
        .cloned()
        .filter(|s| *s > grid.t_start && *s < grid.t_end)
        .collect();
    marks.push(grid.t_start);
    marks.sort_by(|a, b| b.total_cmp(a));
    marks.dedup();

    let mut times = vec![grid.t_end];
    let mut values = vec![phi.to_vec()];
    let mut u = phi.to_vec();
    let mut now = grid.t_end;
    let mut max_cfl = 0.0f64;
    let mut used_dt = 0.0f64;
    for mark in marks {
        let steps = ((now - mark) / dt_max).ceil().max(1.0) as usize;
        let dt = (now - mark) / steps as f64;
        used_dt = used_dt.max(dt);
        for s in 0..steps {
            let t_here = now - s as f64 * dt;
            if !frozen && (s > 0 || t_here != grid.t_end) {
                coeffs = NodeCoefficients::sample(spec, &grid.space, t_here)?;
            }
            let cfl = dt * stencil.explicit_rate(&coeffs);
            if cfl > 1.0 {
                return Err(FdError::Cfl {
                    cfl,
                    dt,
                    max_dt: dt / cfl,
                });
            }
            max_cfl = max_cfl.max(cfl);
            u = stencil.explicit_step(&u, &coeffs, dt);
            for axis in 0..spec.m0() {
                stencil.implicit_diffusion(&mut u, &coeffs, axis, dt);
            }
        }
        now = mark;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(FdError::NonFinite(now));
        }
        times.push(mark);
        values.push(u.clone());
    }
    times.reverse();
    values.reverse();
    Ok(GridSolution::new(
        grid.space.clone(),
        times,
        values,
        SchemeMeta {
            scheme: "imex-upwind".into(),
            order: 1,
            dt: used_dt,
            cfl: max_cfl,
        },
    )?)
}

/// Γ̂(·, ·; T, y) together with its spatial mass at every stored time.
#[derive(Debug, Clone, Serialize)]
pub struct FundamentalEstimate {
    pub solution: GridSolution,
    pub eps: f64,
    /// `∫ Γ̂(t, x) dx` (trapezoid) per stored time.
    pub masses: Vec<f64>,
    /// `e^{(T−t)(‖c‖∞ − tr B)}`, the mass bound for the exact fundamental solution.
    pub mass_bounds: Vec<f64>,
}

/// Solves backward from the Gaussian bump `N(y, ε² I)` (normalized on the grid) at `grid.t_end`.
pub fn estimate_fundamental_solution(
    spec: &OperatorSpec,
    y: &[f64],
    eps: f64,
    grid: &FdGrid,
) -> Result<FundamentalEstimate, FdError> {
    let h_max = grid.space.spacings().into_iter().fold(0.0, f64::max);
    if !(eps >= 2.0 * h_max) {
        return Err(FdError::Epsilon {
            eps,
            min: 2.0 * h_max,
        });
    }
    if y.len() != grid.space.dim() {
        return Err(FdError::DimensionMismatch {
            got: y.len(),
            expected: grid.space.dim(),
        });
    }
    let raw = grid.space.sample(|x| {
        let q: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        (-0.5 * q / (eps * eps)).exp()
    });
    let mass = trapezoid(&grid.space, &raw);
    let bump: Vec<f64> = raw.iter().map(|v| v / mass).collect();
    let solution = solve_backward(spec, &bump, grid)?;
    let masses: Vec<f64> = (0..solution.times.len())
        .map(|k| solution.mass(k))
        .collect();

    let bx = validation_box(grid);
    let report = check_assumptions(spec, &bx, ASSUMPTION_SAMPLES)?;
    let trace = spec.drift.matrix().trace();
    let mass_bounds = solution
        .times
        .iter()
        .map(|t| ((grid.t_end - t) * (report.sup_c - trace)).exp())
        .collect();
    Ok(FundamentalEstimate {
        solution,
        eps,
        masses,
        mass_bounds,
    })
}

/// Polynomial extrapolation in `ε²` to `ε = 0` from nodal values at distinct widths.
///
/// With `k` widths the fit is exact for biases of the form `Σ_{j<k} c_j ε^{2j}`.
pub fn extrapolate_to_zero_width(eps: &[f64], values: &[Vec<f64>]) -> Vec<f64> {
    assert_eq!(eps.len(), values.len(), "one value vector per width");
    let e: Vec<f64> = eps.iter().map(|v| v * v).collect();
    let weights: Vec<f64> = (0..e.len())
        .map(|i| {
            (0..e.len())
                .filter(|&j| j != i)
                .map(|j| e[j] / (e[j] - e[i]))
                .product()
        })
        .collect();
    let len = values.first().map_or(0, Vec::len);
    (0..len)
        .map(|p| weights.iter().zip(values).map(|(w, v)| w * v[p]).sum())
        .collect()
}

fn trapezoid(grid: &SpatialGrid, v: &[f64]) -> f64 {
    let terms: Vec<f64> = v
        .iter()
        .enumerate()
        .map(|(k, u)| u * grid.trapezoid_weight(k))
        .collect();
    pairwise_sum(&terms)
}

/// Values below `−NEGATIVE_TOL · max|u|` count as genuinely negative.
pub const NEGATIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoserReport {
    pub p: f64,
    pub rho: f64,
    pub r: f64,
    /// `max u^p` over nodes in `R_ρ(z₀)`.
    pub lhs: f64,
    /// `(r − ρ)^{−(Q+2)} ∫_{R_r(z₀)} u^p`.
    pub rhs: f64,
    pub ratio: f64,
    /// Riemann sum of `u^p` over `R_r(z₀)`.
    pub integral: f64,
    /// Riemann sum of `1` over `R_r(z₀)`.
    pub volume: f64,
    /// `lhs` divided by the mean of `u^p` over `R_r(z₀)`.
    pub sup_over_mean: f64,
    pub inner_nodes: usize,
    pub outer_nodes: usize,
}

/// Node-indicator Riemann sums for the local sup bound on `R_ρ(z₀) ⊂ R_r(z₀)`.
///
/// `R_r(z₀) = z₀ ∘ δ_r({|t| < 1, |x| < 1})`. Time weights are half the gaps to the
/// neighbouring stored times; space weights are the cell volume.
pub fn moser_check(
    u: &GridSolution,
    z0: &GroupElement,
    rho: f64,
    r: f64,
    p: f64,
    drift: &DriftMatrix,
    fam: &DilationFamily,
) -> Result<MoserReport, FdError> {
    if !(rho > 0.0 && rho < r && r - rho < 1.0) {
        return Err(FdError::Radii { rho, r });
    }
    if !(p != 0.0 && p.is_finite()) {
        return Err(FdError::Exponent);
    }
    let grid = &u.grid;
    if z0.dim() != grid.dim() || fam.dim() != grid.dim() {
        return Err(FdError::DimensionMismatch {
            got: z0.dim(),
            expected: grid.dim(),
        });
    }
    if !cylinder_inside(u, z0, r, drift, fam) {
        return Err(FdError::CylinderOutside);
    }
    let scale_inv = fam.diag(1.0 / r);
    let n_times = u.times.len();
    let u_max = u
        .values
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let cell = grid.cell_volume();

    let mut lhs = f64::NEG_INFINITY;
    let mut integral = Vec::new();
    let mut volume = Vec::new();
    let mut inner_nodes = 0;
    for (k, &t) in u.times.iter().enumerate() {
        let s = t - z0.t;
        if s.abs() >= r * r {
            continue;
        }
        let inner_time = s.abs() < rho * rho;
        let w_t = 0.5 * (u.times[(k + 1).min(n_times - 1)] - u.times[k.saturating_sub(1)]);
        let centre = drift.exp(s) * &z0.x;
        for node in 0..grid.len() {
            let x = grid.node(node);
            let norm_sq: f64 = (0..x.len())
                .map(|i| ((x[i] - centre[i]) * scale_inv[i]).powi(2))
                .sum();
            if norm_sq >= 1.0 {
                continue;
            }
            let value = u.values[k][node];
            if value < 0.0 && (p < 0.0 || value < -NEGATIVE_TOL * u_max)
                || (p < 0.0 && value == 0.0)
            {
                return Err(FdError::Negative { value, t, x });
            }
            let up = value.max(0.0).powf(p);
            integral.push(up * w_t * cell);
            volume.push(w_t * cell);
            if inner_time && norm_sq_scaled(&x, &centre, &fam.diag(1.0 / rho)) < 1.0 {
                lhs = lhs.max(up);
                inner_nodes += 1;
            }
        }
    }
    if volume.is_empty() {
        return Err(FdError::CylinderEmpty(r));
    }
    if inner_nodes == 0 {
        return Err(FdError::CylinderEmpty(rho));
    }
    let integral = pairwise_sum(&integral);
    let volume_sum = pairwise_sum(&volume);
    let q = fam.q() as f64;
    let rhs = (r - rho).powf(-(q + 2.0)) * integral;
    Ok(MoserReport {
        p,
        rho,
        r,
        lhs,
        rhs,
        ratio: lhs / rhs,
        integral,
        volume: volume_sum,
        sup_over_mean: lhs / (integral / volume_sum),
        inner_nodes,
        outer_nodes: volume.len(),
    })
}

fn norm_sq_scaled(
    x: &[f64],
    centre: &nalgebra::DVector<f64>,
    scale: &nalgebra::DVector<f64>,
) -> f64 {
    (0..x.len())
        .map(|i| ((x[i] - centre[i]) * scale[i]).powi(2))
        .sum()
}

/// Whether `R_r(z₀)` lies inside the grid box and the stored time span.
fn cylinder_inside(
    u: &GridSolution,
    z0: &GroupElement,
    r: f64,
    drift: &DriftMatrix,
    fam: &DilationFamily,
) -> bool {
    let t_lo = u.times.first().copied().unwrap_or(f64::NAN);
    let t_hi = u.times.last().copied().unwrap_or(f64::NAN);
    if !(z0.t - r * r >= t_lo && z0.t + r * r <= t_hi) {
        return false;
    }
    let radius = fam.diag(r);
    const SAMPLES: usize = 201;
    for k in 0..SAMPLES {
        let s = r * r * (2.0 * k as f64 / (SAMPLES - 1) as f64 - 1.0);
        let centre = drift.exp(s) * &z0.x;
        for (i, a) in u.grid.axes().iter().enumerate() {
            if centre[i] - radius[i] < a.min || centre[i] + radius[i] > a.max {
                return false;
            }
        }
    }
    true
}
