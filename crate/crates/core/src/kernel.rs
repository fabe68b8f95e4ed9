//! The Gaussian fundamental solution of the constant-coefficient principal part
//!
//! ```text
//! L₀ = ½ Σ_{i ≤ m₀} ∂_{x_i x_i} + ⟨Bx, ∇⟩ + ∂_t
//! ```
//!
//! which is the transition density of `dX = BX dt + σ dW` with `σ = [I; 0]`.
//!
//! Covariances are computed in dilation-normalized form: with `τ = T - t`,
//! `D(τ^{-½}) C(τ) D(τ^{-½})` is the time-one covariance of the drift `B^(√τ)`, which stays
//! well conditioned for every `τ`. Everything downstream works with the factor of that
//! normalized matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{GridSolution, SchemeMeta, SpatialGrid};
use crate::group::{hypoellipticity_check, sigma, DilationFamily, DriftMatrix};
use crate::linalg::{gauss_legendre, pairwise_sum, rel_diff, van_loan_gramian};

/// Required relative agreement between the two covariance methods.
pub const COVARIANCE_AGREEMENT: f64 = 1e-10;

/// Half-width, in standard deviations, of every truncated integration region.
pub const TRUNCATION_SIGMAS: f64 = 8.0;

/// `P(|Z| > 8)` for a standard normal `Z`.
pub const TAIL_8_SIGMA: f64 = 1.2441921148543639e-15;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("drift is not hypoelliptic for m0 = {m0}")]
    NotHypoelliptic { m0: usize },
    #[error("time increment must be positive and finite, got {0}")]
    NonPositiveTime(f64),
    #[error("need t < T, got t = {t}, T = {big_t}")]
    TimeOrder { t: f64, big_t: f64 },
    #[error("need t < s < T, got t = {t}, s = {s}, T = {big_t}")]
    IntermediateOrder { t: f64, s: f64, big_t: f64 },
    #[error("covariance methods disagree at tau = {tau}: relative difference {rel:e}")]
    CovarianceDisagreement { tau: f64, rel: f64 },
    #[error("covariance at tau = {tau} is not numerically positive definite")]
    Factorization { tau: f64 },
    #[error("point has dimension {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("values have length {got}, grid has {expected} nodes")]
    GridLength { got: usize, expected: usize },
    #[error("stencil point (t = {t}, x = {x:?}) lies outside the domain of u")]
    Stencil { t: f64, x: Vec<f64> },
    #[error("step must be positive, got {0}")]
    BadStep(f64),
}

/// `C(τ)`, its Cholesky factor and `e^{τB}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceResult {
    pub tau: f64,
    pub c: DMatrix<f64>,
    pub chol: DMatrix<f64>,
    pub logdet: f64,
    pub exp_b: DMatrix<f64>,
    /// Cholesky factor of `D(τ^{-½}) C(τ) D(τ^{-½})`.
    pub normalized_chol: DMatrix<f64>,
    /// Diagonal of `D(τ^{½})`.
    pub scale: DVector<f64>,
    /// Relative difference between the block-exponential and quadrature covariances.
    pub method_gap: f64,
}

impl CovarianceResult {
    /// Whitens `r` in place: `r ← chol⁻¹ r`, by one triangular solve.
    pub fn whiten(&self, r: &mut [f64]) {
        let l = &self.normalized_chol;
        let n = r.len();
        for i in 0..n {
            let mut acc = r[i] / self.scale[i];
            for j in 0..i {
                acc -= l[(i, j)] * r[j];
            }
            r[i] = acc / l[(i, i)];
        }
    }

    /// `⟨C⁻¹ r, r⟩`.
    pub fn mahalanobis_sq(&self, r: &[f64]) -> f64 {
        let mut w = r.to_vec();
        self.whiten(&mut w);
        w.iter().map(|v| v * v).sum()
    }

    /// Per-coordinate standard deviations `√C_ii`.
    pub fn std_devs(&self) -> Vec<f64> {
        (0..self.c.nrows()).map(|i| self.c[(i, i)].sqrt()).collect()
    }

    /// `(2π)^{-d/2} det C^{-½}`, the maximum of the density.
    pub fn log_peak(&self) -> f64 {
        -0.5 * (self.c.nrows() as f64 * LN_2PI + self.logdet)
    }
}

/// Γ₀ for one fixed time increment `τ = T - t`.
#[derive(Debug, Clone)]
pub struct DensitySlice {
    pub cov: CovarianceResult,
}

impl DensitySlice {
    pub fn dim(&self) -> usize {
        self.cov.c.nrows()
    }

    /// Mean of the terminal point started from `x`: `e^{τB} x`.
    pub fn center(&self, x: &[f64]) -> Vec<f64> {
        let e = &self.cov.exp_b;
        (0..x.len())
            .map(|i| (0..x.len()).map(|j| e[(i, j)] * x[j]).sum())
            .collect()
    }

    pub fn log_density(&self, x: &[f64], y: &[f64]) -> f64 {
        let m = self.center(x);
        let mut r: Vec<f64> = y.iter().zip(&m).map(|(a, b)| a - b).collect();
        self.cov.whiten(&mut r);
        let q: f64 = r.iter().map(|v| v * v).sum();
        self.cov.log_peak() - 0.5 * q
    }

    pub fn density(&self, x: &[f64], y: &[f64]) -> f64 {
        self.log_density(x, y).exp()
    }

    /// `sup_{x,y} Γ₀`.
    pub fn peak(&self) -> f64 {
        self.cov.log_peak().exp()
    }
}

/// Fundamental solution of the principal part for a fixed hypoelliptic drift.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    drift: DriftMatrix,
    m0: usize,
    fam: DilationFamily,
}

impl GaussianKernel {
    pub fn new(drift: DriftMatrix) -> Result<Self, KernelError> {
        let m0 = drift.structure().m0();
        if !hypoellipticity_check(drift.matrix(), m0) {
            return Err(KernelError::NotHypoelliptic { m0 });
        }
        let fam = DilationFamily::new(drift.structure().clone());
        Ok(Self { drift, m0, fam })
    }

    pub fn drift(&self) -> &DriftMatrix {
        &self.drift
    }

    pub fn m0(&self) -> usize {
        self.m0
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn dilations(&self) -> &DilationFamily {
        &self.fam
    }

    /// `C(τ) = ∫₀^τ e^{sB} σσᵀ e^{sBᵀ} ds`, computed twice and cross-checked.
    pub fn covariance(&self, tau: f64) -> Result<CovarianceResult, KernelError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(KernelError::NonPositiveTime(tau));
        }
        let d = self.dim();
        let root = tau.sqrt();
        let b_hat = self
            .drift
            .dilated(root)
            .expect("positive scale")
            .matrix()
            .clone();
        let s = sigma(d, self.m0);
        let q = &s * s.transpose();

        let by_exponential = van_loan_gramian(&b_hat, &q, 1.0);
        let by_quadrature = gramian_quadrature(&b_hat, &q);
        let gap = rel_diff(&by_exponential, &by_quadrature);
        if !(gap <= COVARIANCE_AGREEMENT) {
            return Err(KernelError::CovarianceDisagreement { tau, rel: gap });
        }

        let l_hat = by_exponential
            .clone()
            .cholesky()
            .ok_or(KernelError::Factorization { tau })?
            .l();
        let scale = self.fam.diag(root);
        let chol = DMatrix::from_fn(d, d, |i, j| scale[i] * l_hat[(i, j)]);
        let c = DMatrix::from_fn(d, d, |i, j| scale[i] * by_exponential[(i, j)] * scale[j]);
        let q_dim = self.fam.q() as f64;
        let logdet = q_dim * tau.ln() + 2.0 * (0..d).map(|i| l_hat[(i, i)].ln()).sum::<f64>();
        if !logdet.is_finite() || (0..d).any(|i| !(l_hat[(i, i)] > 0.0)) {
            return Err(KernelError::Factorization { tau });
        }
        Ok(CovarianceResult {
            tau,
            c,
            chol,
            logdet,
            exp_b: self.drift.exp(tau),
            normalized_chol: l_hat,
            scale,
            method_gap: gap,
        })
    }

    /// Γ₀(t, ·; T, ·) with its covariance factored once.
    pub fn slice(&self, t: f64, big_t: f64) -> Result<DensitySlice, KernelError> {
        if !(t < big_t) {
            return Err(KernelError::TimeOrder { t, big_t });
        }
        Ok(DensitySlice {
            cov: self.covariance(big_t - t)?,
        })
    }

    pub fn log_density(
        &self,
        t: f64,
        x: &[f64],
        big_t: f64,
        y: &[f64],
    ) -> Result<f64, KernelError> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.slice(t, big_t)?.log_density(x, y))
    }

    pub fn density(&self, t: f64, x: &[f64], big_t: f64, y: &[f64]) -> Result<f64, KernelError> {
        self.log_density(t, x, big_t, y).map(f64::exp)
    }

    fn check_point(&self, x: &[f64]) -> Result<(), KernelError> {
        if x.len() != self.dim() {
            return Err(KernelError::Dimension {
                got: x.len(),
                expected: self.dim(),
            });
        }
        Ok(())
    }
}

/// Composite Gauss–Legendre approximation of `∫₀¹ e^{sA} Q e^{sAᵀ} ds`, doubling the panel
/// count until two successive results agree to near round-off.
fn gramian_quadrature(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    const ORDER: usize = 16;
    let (nodes, weights) = gauss_legendre(ORDER);
    let integrate = |panels: usize| -> DMatrix<f64> {
        let n = a.nrows();
        let h = 1.0 / panels as f64;
        let mut acc = DMatrix::<f64>::zeros(n, n);
        for p in 0..panels {
            let lo = p as f64 * h;
            for (x, w) in nodes.iter().zip(&weights) {
                let s = lo + 0.5 * h * (x + 1.0);
                let e = crate::linalg::expm(&(a * s));
                acc += (&e * q * e.transpose()) * (0.5 * h * w);
            }
        }
        (&acc + acc.transpose()) * 0.5
    };
    let mut panels = 1;
    let mut prev = integrate(panels);
    while panels < 256 {
        panels *= 2;
        let next = integrate(panels);
        if rel_diff(&next, &prev) < 1e-14 {
            return next;
        }
        prev = next;
    }
    prev
}

/// Result of [`solve_cauchy`].
#[derive(Debug, Clone, Serialize)]
pub struct CauchySolution {
    /// `u(t, ·)` on the grid of the terminal data.
    pub solution: GridSolution,
    /// `max |u_h − u_{2h}|` against the same quadrature on every other node.
    pub refinement_error: f64,
    /// Smallest fraction of the kernel's lattice mass that falls inside the box, over all `x`.
    pub min_captured_mass: f64,
    /// Poisson-summation bound on the lattice quadrature error for a Gaussian of covariance `C`.
    pub aliasing_bound: f64,
    /// The grid does not resolve `√(T − t)`; results may be unreliable.
    pub coarse: bool,
}

/// `u(t, x) = ∫ Γ₀(t, x; T, y) φ(y) dy` on the grid carrying `phi`.
///
/// `φ` is taken as zero outside the grid box. The integral runs over lattice nodes within
/// 8 standard deviations of `e^{τB} x` with trapezoid weights and is divided by the lattice
/// sum of Γ₀ over the same window, which removes the truncation and discretization error of
/// the kernel mass: constants are reproduced exactly wherever the window fits in the box.
pub fn solve_cauchy(
    k: &GaussianKernel,
    grid: &SpatialGrid,
    phi: &[f64],
    t: f64,
    big_t: f64,
) -> Result<CauchySolution, KernelError> {
    if phi.len() != grid.len() {
        return Err(KernelError::GridLength {
            got: phi.len(),
            expected: grid.len(),
        });
    }
    if grid.dim() != k.dim() {
        return Err(KernelError::Dimension {
            got: grid.dim(),
            expected: k.dim(),
        });
    }
    let slice = k.slice(t, big_t)?;
    let sd = slice.cov.std_devs();
    let fine = convolve(grid, phi, &slice, &sd, 1);
    let coarse_pass = convolve(grid, phi, &slice, &sd, 2);
    let mut refinement_error = 0.0f64;
    for (idx, (u, _)) in fine.iter().enumerate() {
        let multi = grid.multi_index(idx);
        if multi.iter().all(|&m| m % 2 == 0) {
            let coarse_idx = coarse_flat(grid, &multi);
            refinement_error = refinement_error.max((u - coarse_pass[coarse_idx].0).abs());
        }
    }
    let min_captured_mass = fine.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let aliasing_bound = aliasing_bound(&slice.cov.c, &grid.spacings());
    let values: Vec<f64> = fine.into_iter().map(|p| p.0).collect();
    let solution = GridSolution::new(
        grid.clone(),
        vec![t],
        vec![values],
        SchemeMeta {
            scheme: "gaussian-quadrature".into(),
            order: 0,
            dt: big_t - t,
            cfl: 0.0,
        },
    )
    .expect("lengths checked");
    Ok(CauchySolution {
        solution,
        refinement_error,
        min_captured_mass,
        aliasing_bound,
        coarse: aliasing_bound > 1e-8,
    })
}

fn coarse_flat(grid: &SpatialGrid, multi: &[usize]) -> usize {
    multi
        .iter()
        .zip(grid.axes())
        .fold(0, |acc, (&m, a)| acc * a.n.div_ceil(2) + m / 2)
}

/// Quadrature on the sub-lattice of every `stride`-th node.
///
/// Returns `(u, captured mass)` per node of that sub-lattice, in its own flat order. The
/// kernel's 8σ window is summed on the lattice extended beyond the box; that sum normalizes
/// `u`, while `φ` contributes only from inside the box.
fn convolve(
    grid: &SpatialGrid,
    phi: &[f64],
    slice: &DensitySlice,
    sd: &[f64],
    stride: usize,
) -> Vec<(f64, f64)> {
    let d = grid.dim();
    let axes = grid.axes();
    let sub_n: Vec<i64> = axes.iter().map(|a| a.n.div_ceil(stride) as i64).collect();
    let total: usize = sub_n.iter().product::<i64>() as usize;
    let strides = grid.strides();
    let steps: Vec<f64> = axes.iter().map(|a| a.spacing() * stride as f64).collect();
    let cell: f64 = steps.iter().product();
    let log_peak = slice.cov.log_peak();

    (0..total)
        .into_par_iter()
        .map(|sub_flat| {
            let mut rem = sub_flat;
            let mut x = vec![0.0; d];
            for i in (0..d).rev() {
                x[i] = axes[i].coord((rem % sub_n[i] as usize) * stride);
                rem /= sub_n[i] as usize;
            }
            let m = slice.center(&x);
            let mut lo = vec![0i64; d];
            let mut hi = vec![0i64; d];
            for i in 0..d {
                let reach = TRUNCATION_SIGMAS * sd[i];
                lo[i] = ((m[i] - reach - axes[i].min) / steps[i]).ceil() as i64;
                hi[i] = ((m[i] + reach - axes[i].min) / steps[i]).floor() as i64;
                if lo[i] > hi[i] {
                    // Window narrower than one cell: take the nearest lattice line.
                    lo[i] = ((m[i] - axes[i].min) / steps[i]).round() as i64;
                    hi[i] = lo[i];
                }
            }
            let mut num = Vec::new();
            let mut inside = Vec::new();
            let mut all = Vec::new();
            let mut idx = lo.clone();
            let mut r = vec![0.0; d];
            loop {
                let mut flat = 0;
                let mut w = 1.0;
                let mut in_box = true;
                for i in 0..d {
                    let k = idx[i];
                    r[i] = axes[i].min + k as f64 * steps[i] - m[i];
                    if k < 0 || k >= sub_n[i] {
                        in_box = false;
                    } else {
                        let node = k as usize * stride;
                        flat += node * strides[i];
                        if k == 0 || k + 1 == sub_n[i] {
                            w *= 0.5;
                        }
                    }
                }
                slice.cov.whiten(&mut r);
                let q: f64 = r.iter().map(|v| v * v).sum();
                let g = cell * (log_peak - 0.5 * q).exp();
                all.push(g);
                if in_box {
                    num.push(w * g * phi[flat]);
                    inside.push(w * g);
                }
                // odometer over the index window
                let mut axis = d;
                loop {
                    if axis == 0 {
                        let mass = pairwise_sum(&all);
                        if !(mass > 0.0) {
                            return (0.0, 0.0);
                        }
                        return (pairwise_sum(&num) / mass, pairwise_sum(&inside) / mass);
                    }
                    axis -= 1;
                    if idx[axis] < hi[axis] {
                        idx[axis] += 1;
                        break;
                    }
                    idx[axis] = lo[axis];
                }
            }
        })
        .collect()
}

/// Poisson-summation estimate of the relative error of the lattice sum of a Gaussian with
/// covariance `c` on spacings `h`: `Σ_{k≠0} exp(−2π² kᵀ H⁻¹ C H⁻¹ k)`.
pub fn aliasing_bound(c: &DMatrix<f64>, h: &[f64]) -> f64 {
    let d = h.len();
    let range: i64 = if d <= 3 { 3 } else { 1 };
    let width = (2 * range + 1) as usize;
    let mut total = 0.0;
    let mut k = vec![0i64; d];
    for flat in 0..width.pow(d as u32) {
        let mut rem = flat;
        for v in k.iter_mut() {
            *v = (rem % width) as i64 - range;
            rem /= width;
        }
        if k.iter().all(|&v| v == 0) {
            continue;
        }
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += k[i] as f64 * c[(i, j)] * k[j] as f64 / (h[i] * h[j]);
            }
        }
        total += (-2.0 * std::f64::consts::PI.powi(2) * q).exp();
    }
    total
}

/// Outcome of [`ck_residual`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CkResidual {
    pub residual: f64,
    pub integral: f64,
    pub direct: f64,
    /// Bound on the integrand mass outside the truncated box.
    pub tail_bound: f64,
    /// Gauss–Legendre nodes per axis in the accepted rule.
    pub nodes_per_axis: usize,
}

/// `|∫ Γ₀(t,x;s,ξ) Γ₀(s,ξ;T,y) dξ − Γ₀(t,x;T,y)|`.
///
/// The integrand is Gaussian in `ξ`, so the quadrature runs in coordinates whitened by its
/// precision `C₁⁻¹ + Eᵀ C₂⁻¹ E` (`E = e^{(T−s)B}`), over ±8 in each whitened axis, with
/// panel doubling until successive tensor Gauss–Legendre results agree.
pub fn ck_residual(
    k: &GaussianKernel,
    t: f64,
    x: &[f64],
    s: f64,
    big_t: f64,
    y: &[f64],
) -> Result<CkResidual, KernelError> {
    if !(t < s && s < big_t) {
        return Err(KernelError::IntermediateOrder { t, s, big_t });
    }
    k.check_point(x)?;
    k.check_point(y)?;
    let d = k.dim();
    let first = k.slice(t, s)?;
    let second = k.slice(s, big_t)?;
    let direct = k.slice(t, big_t)?.density(x, y);

    // Precision and mean of ξ ↦ integrand.
    let c1_inv = spd_inverse(&first.cov);
    let c2_inv = spd_inverse(&second.cov);
    let e = &second.cov.exp_b;
    let precision = &c1_inv + e.transpose() * &c2_inv * e;
    let m1 = DVector::from_vec(first.center(x));
    let rhs = &c1_inv * &m1 + e.transpose() * &c2_inv * DVector::from_column_slice(y);
    let chol = precision
        .clone()
        .cholesky()
        .ok_or(KernelError::Factorization { tau: s - t })?;
    let mean = chol.solve(&rhs);
    // ξ = mean + L⁻ᵀ w maps a standard normal w onto the integrand's Gaussian.
    let l = chol.l();
    let l_t_inv = l
        .transpose()
        .solve_upper_triangular(&DMatrix::identity(d, d))
        .ok_or(KernelError::Factorization { tau: s - t })?;
    let jacobian = l_t_inv.determinant().abs();

    let integrand = |w: &[f64]| -> f64 {
        let xi = &mean + &l_t_inv * DVector::from_column_slice(w);
        let xi = xi.as_slice();
        (first.log_density(x, xi) + second.log_density(xi, y)).exp() * jacobian
    };

    let max_points: usize = 4_000_000;
    let mut panels = 2;
    let mut prev = tensor_gl(&integrand, d, panels);
    let mut nodes_per_axis = panels * GL_ORDER;
    loop {
        let next_panels = panels * 2;
        if (next_panels * GL_ORDER).pow(d as u32) > max_points {
            break;
        }
        let next = tensor_gl(&integrand, d, next_panels);
        let converged = (next - prev).abs() <= 1e-13 * next.abs().max(f64::MIN_POSITIVE);
        prev = next;
        panels = next_panels;
        nodes_per_axis = panels * GL_ORDER;
        if converged {
            break;
        }
    }
    // The integrand is (mass) × N(0, I) in w; its mass outside the cube is at most d tails.
    let tail_bound = direct * d as f64 * TAIL_8_SIGMA;
    Ok(CkResidual {
        residual: (prev - direct).abs(),
        integral: prev,
        direct,
        tail_bound,
        nodes_per_axis,
    })
}

const GL_ORDER: usize = 10;

fn tensor_gl(f: &(impl Fn(&[f64]) -> f64 + Sync), d: usize, panels: usize) -> f64 {
    let (gx, gw) = gauss_legendre(GL_ORDER);
    let h = 2.0 * TRUNCATION_SIGMAS / panels as f64;
    let mut nodes = Vec::with_capacity(panels * GL_ORDER);
    let mut weights = Vec::with_capacity(panels * GL_ORDER);
    for p in 0..panels {
        let lo = -TRUNCATION_SIGMAS + p as f64 * h;
        for (x, w) in gx.iter().zip(&gw) {
            nodes.push(lo + 0.5 * h * (x + 1.0));
            weights.push(0.5 * h * w);
        }
    }
    let n = nodes.len();
    let total = n.pow(d as u32);
    let terms: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rem = flat;
            let mut w = vec![0.0; d];
            let mut weight = 1.0;
            for v in w.iter_mut() {
                let k = rem % n;
                rem /= n;
                *v = nodes[k];
                weight *= weights[k];
            }
            weight * f(&w)
        })
        .collect();
    pairwise_sum(&terms)
}

fn spd_inverse(cov: &CovarianceResult) -> DMatrix<f64> {
    let d = cov.c.nrows();
    let mut inv = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut col = vec![0.0; d];
        col[j] = 1.0;
        cov.whiten(&mut col);
        // col = L⁻¹ e_j; C⁻¹ = L⁻ᵀ L⁻¹.
        for i in 0..d {
            inv[(i, j)] = col[i];
        }
    }
    let inv = inv.transpose() * &inv;
    (&inv + inv.transpose()) * 0.5
}

/// Central-difference `L₀ u` at `(t, x)` with step `h`.
///
/// `u` returns `None` where it is undefined; hitting such a point is an error.
pub fn pde_residual(
    k: &GaussianKernel,
    u: &dyn Fn(f64, &[f64]) -> Option<f64>,
    t: f64,
    x: &[f64],
    h: f64,
) -> Result<f64, KernelError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(KernelError::BadStep(h));
    }
    k.check_point(x)?;
    let eval = |t: f64, x: &[f64]| u(t, x).ok_or_else(|| KernelError::Stencil { t, x: x.to_vec() });
    let d = k.dim();
    let b = k.drift.matrix();
    let center = eval(t, x)?;
    let mut total = (eval(t + h, x)? - eval(t - h, x)?) / (2.0 * h);
    let mut p = x.to_vec();
    for i in 0..d {
        p[i] = x[i] + h;
        let plus = eval(t, &p)?;
        p[i] = x[i] - h;
        let minus = eval(t, &p)?;
        p[i] = x[i];
        let velocity: f64 = (0..d).map(|j| b[(i, j)] * x[j]).sum();
        total += velocity * (plus - minus) / (2.0 * h);
        if i < k.m0 {
            total += 0.5 * (plus - 2.0 * center + minus) / (h * h);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use crate::group::{validate_blocks, DilationFamily, GroupElement};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prototype() -> GaussianKernel {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        GaussianKernel::new(validate_blocks(b, &[1, 1]).unwrap()).unwrap()
    }

    fn heat(d: usize) -> GaussianKernel {
        GaussianKernel::new(validate_blocks(DMatrix::zeros(d, d), &[d]).unwrap()).unwrap()
    }

    fn three_level() -> GaussianKernel {
        // m = (1, 1, 1), chain x1 → x2 → x3 plus ∗-entries.
        let b = DMatrix::from_row_slice(3, 3, &[0.3, -0.2, 0.1, 1.0, -0.4, 0.5, 0.0, 2.0, 0.1]);
        GaussianKernel::new(validate_blocks(b, &[1, 1, 1]).unwrap()).unwrap()
    }

    #[test]
    fn prototype_covariance_closed_form() {
        let k = prototype();
        let c = k.covariance(1.0).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0 / 3.0]);
        assert!(rel_diff(&c.c, &want) < 1e-13);
        assert!((c.logdet.exp() - 1.0 / 12.0).abs() < 1e-14);
        assert!(rel_diff(&(&c.chol * c.chol.transpose()), &c.c) < 1e-12);
        // general τ: [[τ, τ²/2], [τ²/2, τ³/3]]
        for tau in [1e-6, 0.37, 25.0] {
            let c = k.covariance(tau).unwrap();
            let want = DMatrix::from_row_slice(
                2,
                2,
                &[tau, tau * tau / 2.0, tau * tau / 2.0, tau.powi(3) / 3.0],
            );
            assert!(rel_diff(&c.c, &want) < 1e-12, "tau {tau}");
            assert!((c.logdet - (tau.powi(4) / 12.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn heat_covariance_is_scalar() {
        let k = heat(3);
        let c = k.covariance(2.5).unwrap();
        assert!(rel_diff(&c.c, &(DMatrix::identity(3, 3) * 2.5)) < 1e-14);
    }

    #[test]
    fn determinant_scales_with_homogeneous_dimension() {
        let k = prototype();
        let one = k.covariance(1.0).unwrap().logdet.exp();
        let four = k.covariance(4.0).unwrap().logdet.exp();
        assert!((four / (256.0 * one) - 1.0).abs() < 1e-10);
        assert!((four - 256.0 / 12.0).abs() < 1e-10);
    }

    #[test]
    fn covariance_methods_agree_for_non_homogeneous_drift() {
        let k = three_level();
        for tau in [1e-3, 0.5, 3.0] {
            let c = k.covariance(tau).unwrap();
            assert!(c.method_gap < 1e-12);
            let direct = gramian_quadrature(
                &(k.drift().matrix() * tau),
                &(sigma(3, 1) * sigma(3, 1).transpose()),
            ) * tau;
            assert!(rel_diff(&c.c, &direct) < 1e-9, "tau {tau}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        let k = prototype();
        assert!(matches!(
            k.covariance(0.0),
            Err(KernelError::NonPositiveTime(_))
        ));
        assert!(matches!(
            k.density(1.0, &[0.0, 0.0], 1.0, &[0.0, 0.0]),
            Err(KernelError::TimeOrder { .. })
        ));
        assert!(k.density(0.0, &[0.0], 1.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn prototype_peak_value() {
        let k = prototype();
        for t in [0.5, 1.0, 3.0] {
            let g = k.density(0.0, &[0.0, 0.0], t, &[0.0, 0.0]).unwrap();
            let want = 3f64.sqrt() / (std::f64::consts::PI * t * t);
            assert!((g / want - 1.0).abs() < 1e-12);
        }
        assert!(
            (k.density(0.0, &[0.0, 0.0], 1.0, &[0.0, 0.0]).unwrap() - 0.551328895421792).abs()
                < 1e-12
        );
    }

    #[test]
    fn maximum_sits_at_the_transported_point() {
        let k = prototype();
        let s = k.slice(0.2, 1.0).unwrap();
        let x = [0.7, -0.3];
        let m = s.center(&x);
        let peak = s.density(&x, &m);
        assert!((peak - s.peak()).abs() < 1e-12 * peak);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let y = [
                m[0] + rng.random_range(-0.5..0.5),
                m[1] + rng.random_range(-0.5..0.5),
            ];
            assert!(s.density(&x, &y) <= peak);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let k = prototype();
        let s = k.slice(0.0, 1.0).unwrap();
        let x = [0.4, -0.2];
        let m = s.center(&x);
        let grid = SpatialGrid::new(vec![
            Axis::new(m[0] - 9.0, m[0] + 9.0, 241),
            Axis::new(m[1] - 6.0, m[1] + 6.0, 241),
        ])
        .unwrap();
        let terms: Vec<f64> = (0..grid.len())
            .map(|i| grid.trapezoid_weight(i) * s.density(&x, &grid.node(i)))
            .collect();
        assert!((pairwise_sum(&terms) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn homogeneous_scaling_of_density() {
        let k = prototype();
        let fam = DilationFamily::new(k.drift().structure().clone());
        let q = fam.q() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for lambda in [0.25, 0.5, 2.0] {
            for _ in 0..20 {
                let z = GroupElement::new(
                    rng.random_range(-1.0..0.0),
                    vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                );
                let w = GroupElement::new(
                    rng.random_range(0.1..1.0),
                    vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                );
                let base = k.density(z.t, z.x.as_slice(), w.t, w.x.as_slice()).unwrap();
                let dz = fam.dilate(&z, lambda).unwrap();
                let dw = fam.dilate(&w, lambda).unwrap();
                let scaled = k
                    .density(dz.t, dz.x.as_slice(), dw.t, dw.x.as_slice())
                    .unwrap();
                assert!((scaled * lambda.powf(q) / base - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cauchy_preserves_constants() {
        let k = prototype();
        let grid =
            SpatialGrid::new(vec![Axis::new(-8.0, 8.0, 161), Axis::new(-8.0, 8.0, 161)]).unwrap();
        let phi = vec![1.0; grid.len()];
        let sol = solve_cauchy(&k, &grid, &phi, 0.0, 0.5).unwrap();
        let u = &sol.solution.values[0];
        let slice = k.slice(0.0, 0.5).unwrap();
        let sd = slice.cov.std_devs();
        let mut checked = 0;
        for (i, v) in u.iter().enumerate() {
            let m = slice.center(&grid.node(i));
            if m.iter().zip(&sd).all(|(c, s)| c.abs() + 8.0 * s <= 8.0) {
                assert!((v - 1.0).abs() < 1e-8, "node {:?}: {v}", grid.node(i));
                checked += 1;
            } else {
                assert!(*v <= 1.0 + 1e-12);
            }
        }
        assert!(checked > 100);
    }

    /// `∫ N(y; m, C) exp(−½ (y−a)ᵀ S⁻¹ (y−a)) dy`.
    fn gaussian_convolution(
        c: &DMatrix<f64>,
        s: &DMatrix<f64>,
        m: &DVector<f64>,
        a: &DVector<f64>,
    ) -> f64 {
        let sum = c + s;
        let r = m - a;
        let q = r.dot(&(sum.clone().lu().solve(&r).unwrap()));
        (s.determinant() / sum.determinant()).sqrt() * (-0.5 * q).exp()
    }

    #[test]
    fn cauchy_matches_gaussian_convolution() {
        let k = prototype();
        let s = DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.3]);
        let centre = DVector::from_vec(vec![0.2, -0.1]);
        let s_inv = s.clone().try_inverse().unwrap();
        let grid =
            SpatialGrid::new(vec![Axis::new(-7.0, 7.0, 141), Axis::new(-6.0, 6.0, 121)]).unwrap();
        let phi = grid.sample(|y| {
            let r = DVector::from_column_slice(y) - &centre;
            (-0.5 * r.dot(&(&s_inv * &r))).exp()
        });
        let sol = solve_cauchy(&k, &grid, &phi, 0.0, 1.0).unwrap();
        assert!(!sol.coarse);
        let slice = k.slice(0.0, 1.0).unwrap();
        let mut worst = 0.0f64;
        for i in 0..grid.len() {
            let x = grid.node(i);
            let m = DVector::from_vec(slice.center(&x));
            let want = gaussian_convolution(&slice.cov.c, &s, &m, &centre);
            worst = worst.max((sol.solution.values[0][i] - want).abs());
        }
        assert!(worst <= 1e-6, "L∞ error {worst:e}");
    }

    #[test]
    fn cauchy_short_time_limit() {
        let k = heat(1);
        let grid = SpatialGrid::new(vec![Axis::new(-8.0, 8.0, 3201)]).unwrap();
        let f = |x: f64| (x).sin() * (-0.05 * x * x).exp();
        let phi = grid.sample(|y| f(y[0]));
        let mut errs = Vec::new();
        for tau in [0.04, 0.02, 0.01] {
            let sol = solve_cauchy(&k, &grid, &phi, 0.0, tau).unwrap();
            let err = (0..grid.len())
                .filter(|&i| grid.node(i)[0].abs() < 4.0)
                .map(|i| (sol.solution.values[0][i] - phi[i]).abs())
                .fold(0.0f64, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
        }
    }

    #[test]
    fn aliasing_bound_flags_coarse_grids() {
        let c = DMatrix::identity(2, 2);
        assert!(aliasing_bound(&c, &[0.5, 0.5]) < 1e-30);
        assert!(aliasing_bound(&c, &[3.0, 3.0]) > 1e-2);
    }

    #[test]
    fn chapman_kolmogorov_prototype() {
        let k = prototype();
        let r = ck_residual(&k, 0.0, &[0.0, 0.0], 0.5, 1.0, &[0.0, 0.0]).unwrap();
        assert!(r.residual <= 1e-6, "{r:?}");
        assert!(r.tail_bound < 1e-14);
        let r = ck_residual(&k, 0.0, &[0.3, -0.4], 0.9, 1.7, &[1.0, 0.5]).unwrap();
        assert!(r.residual <= 1e-6 * r.direct.max(1e-3), "{r:?}");
    }

    #[test]
    fn chapman_kolmogorov_heat_and_collapse() {
        let k = heat(1);
        let r = ck_residual(&k, 0.0, &[0.2], 0.3, 1.0, &[-0.5]).unwrap();
        assert!(r.residual <= 1e-8);
        let k = prototype();
        // The first factor is nearly a point mass; what remains is round-off in its whitening.
        let r = ck_residual(&k, 0.0, &[0.1, 0.2], 1e-6, 1.0, &[0.3, 0.1]).unwrap();
        assert!(r.residual <= 1e-8 * r.direct, "{r:?}");
        let r = ck_residual(
            &three_level(),
            0.0,
            &[0.1, 0.2, -0.1],
            0.4,
            1.0,
            &[0.3, 0.1, 0.2],
        )
        .unwrap();
        assert!(r.residual <= 1e-8 * r.direct, "{r:?}");
        assert!(ck_residual(&k, 0.0, &[0.0, 0.0], 1.0, 1.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn pde_residual_on_exact_solutions() {
        let k = prototype();
        let linear = |t: f64, x: &[f64]| Some(x[1] - t * x[0]);
        let r = pde_residual(&k, &linear, 0.3, &[0.7, -1.1], 1e-3).unwrap();
        assert!(r.abs() < 1e-12, "{r}");
        let one = |_: f64, _: &[f64]| Some(1.0);
        assert_eq!(pde_residual(&k, &one, 0.0, &[0.0, 0.0], 0.1).unwrap(), 0.0);
        let partial = |t: f64, x: &[f64]| (t < 0.5).then_some(x[0]);
        assert!(matches!(
            pde_residual(&k, &partial, 0.45, &[0.0, 0.0], 0.1),
            Err(KernelError::Stencil { .. })
        ));
    }

    #[test]
    fn pde_residual_converges_at_second_order() {
        let k = prototype();
        let big_t = 1.0;
        let y = [0.2, 0.1];
        let gamma = |t: f64, x: &[f64]| k.density(t, x, big_t, &y).ok();
        let mut h = 0.01;
        let mut res = Vec::new();
        for _ in 0..5 {
            res.push(
                pde_residual(&k, &gamma, 0.3, &[0.1, -0.05], h)
                    .unwrap()
                    .abs(),
            );
            h /= 2.0;
        }
        for w in res.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!(
                (slope - 2.0).abs() <= 0.2,
                "slope {slope}, residuals {res:?}"
            );
        }
    }
}
