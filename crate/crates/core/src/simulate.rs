//! Monte Carlo for the underlying diffusion: exact Gaussian sampling of the linear SDE,
//! Euler–Maruyama for variable coefficients, and anisotropic kernel density estimates.
//!
//! Every sample path draws from its own ChaCha8 stream (`seed`, stream = sample index), so a
//! batch is identical for any number of worker threads.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coeff::{EvalError, OperatorSpec, ValidationBox};
use crate::group::DilationFamily;
use crate::io::fmt_g17;
use crate::kernel::{GaussianKernel, KernelError};
use crate::linalg::pairwise_sum;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("need t <= T, got t = {t}, T = {big_t}")]
    TimeOrder { t: f64, big_t: f64 },
    #[error("at least one time step is required")]
    NoSteps,
    #[error("at least one sample is required")]
    NoSamples,
    #[error("start point has dimension {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("{entry} depends on the diffused coordinate x{coordinate} (near t = {t}, x = {x:?}); Monte Carlo needs coefficients constant along x1..x_m0")]
    DependsOnDiffused {
        entry: String,
        coordinate: usize,
        t: f64,
        x: Vec<f64>,
    },
    #[error("c = {value} at t = {t}, x = {x:?}; Monte Carlo requires c = 0")]
    NonzeroC { t: f64, x: Vec<f64>, value: f64 },
    #[error("diffusion matrix 2a is not positive definite at t = {t}, x = {x:?}")]
    NotPositive { t: f64, x: Vec<f64> },
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error("sample batch is empty")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMeta {
    pub t: f64,
    pub x: Vec<f64>,
    pub big_t: f64,
    pub scheme: String,
    pub steps: usize,
}

/// `n` terminal states in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleBatch {
    pub d: usize,
    pub points: Vec<f64>,
    pub seed: u64,
    pub meta: SampleMeta,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    pub fn mean(&self) -> DVector<f64> {
        DVector::from_fn(self.d, |j, _| {
            let col: Vec<f64> = self.iter().map(|p| p[j]).collect();
            pairwise_sum(&col) / self.len() as f64
        })
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let n = self.len() as f64;
        DMatrix::from_fn(self.d, self.d, |i, j| {
            let terms: Vec<f64> = self.iter().map(|p| (p[i] - m[i]) * (p[j] - m[j])).collect();
            pairwise_sum(&terms) / (n - 1.0)
        })
    }

    /// CSV with header `x1,…,xd`, one row per sample, `%.17g` numbers.
    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> io::Result<()> {
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        let header: Vec<String> = (1..=self.d).map(|i| format!("x{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for p in self.iter() {
            let row: Vec<String> = p.iter().map(|v| fmt_g17(*v)).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `n` draws of `X_T ~ N(e^{(T−t)B} x, C(T−t))`.
pub fn sample_exact(
    k: &GaussianKernel,
    t: f64,
    x: &[f64],
    big_t: f64,
    n: usize,
    seed: u64,
) -> Result<SampleBatch, SimError> {
    let d = k.dim();
    check_start(d, t, x, big_t, n)?;
    let meta = SampleMeta {
        t,
        x: x.to_vec(),
        big_t,
        scheme: "exact".into(),
        steps: 0,
    };
    if t == big_t {
        return Ok(SampleBatch {
            d,
            points: x.iter().cloned().cycle().take(n * d).collect(),
            seed,
            meta,
        });
    }
    let slice = k.slice(t, big_t)?;
    let mean = slice.center(x);
    let chol = &slice.cov.chol;
    let points: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = stream(seed, i);
            let xi: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mean = &mean;
            (0..d).map(move |r| mean[r] + (0..=r).map(|c| chol[(r, c)] * xi[c]).sum::<f64>())
        })
        .collect();
    Ok(SampleBatch {
        d,
        points,
        seed,
        meta,
    })
}

fn check_start(d: usize, t: f64, x: &[f64], big_t: f64, n: usize) -> Result<(), SimError> {
    if x.len() != d {
        return Err(SimError::Dimension {
            got: x.len(),
            expected: d,
        });
    }
    if !(t <= big_t) {
        return Err(SimError::TimeOrder { t, big_t });
    }
    if n == 0 {
        return Err(SimError::NoSamples);
    }
    Ok(())
}

/// Checks on a lattice that `a_ij` and `a_i` do not vary along `x₁..x_{m₀}` and that `c = 0`.
///
/// Each lattice node is compared with copies shifted along every diffused axis.
pub fn check_monte_carlo_preconditions(
    spec: &OperatorSpec,
    bx: &ValidationBox,
    n: usize,
) -> Result<(), SimError> {
    let m0 = spec.m0();
    const SHIFTS: [f64; 2] = [0.37, -1.13];
    for k in 0..bx.lattice_len(n) {
        let (t, x) = bx.lattice_node(n, k);
        let base = spec.coeffs.eval(t, &x)?;
        if base.c != 0.0 {
            return Err(SimError::NonzeroC {
                t,
                x,
                value: base.c,
            });
        }
        for j in 0..m0 {
            for s in SHIFTS {
                let mut y = x.clone();
                y[j] += s;
                let moved = spec.coeffs.eval(t, &y)?;
                let tol = |v: f64| 1e-12 * (1.0 + v.abs());
                for r in 0..m0 {
                    if (moved.drift[r] - base.drift[r]).abs() > tol(base.drift[r]) {
                        return Err(SimError::DependsOnDiffused {
                            entry: format!("a{}", r + 1),
                            coordinate: j + 1,
                            t,
                            x,
                        });
                    }
                    for c in r..m0 {
                        if (moved.a[(r, c)] - base.a[(r, c)]).abs() > tol(base.a[(r, c)]) {
                            return Err(SimError::DependsOnDiffused {
                                entry: format!("a{}{}", r + 1, c + 1),
                                coordinate: j + 1,
                                t,
                                x,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Euler–Maruyama for `dX = (BX + ã) dt + σ̃ dW`, `σ̃σ̃ᵀ = 2a`, with `ã = (a_1, …, a_{m₀}, 0, …)`.
///
/// That process has generator `Σ a_ij ∂_ij + Σ a_i ∂_i + ⟨Bx, ∇⟩`, which equals the
/// divergence-form operator only when the coefficients do not depend on the diffused
/// coordinates; this is probed first on `[t, T] × [x − 5, x + 5]`.
pub fn euler_maruyama(
    spec: &OperatorSpec,
    t: f64,
    x: &[f64],
    big_t: f64,
    steps: usize,
    n: usize,
    seed: u64,
) -> Result<SampleBatch, SimError> {
    let d = spec.dim();
    let m0 = spec.m0();
    if steps == 0 {
        return Err(SimError::NoSteps);
    }
    check_start(d, t, x, big_t, n)?;
    let probe = ValidationBox {
        t: (t, big_t),
        x: x.iter().map(|v| (v - 5.0, v + 5.0)).collect(),
    };
    let per_axis = if d <= 3 { 5 } else { 3 };
    check_monte_carlo_preconditions(spec, &probe, per_axis)?;

    let b = spec.drift.matrix();
    let dt = (big_t - t) / steps as f64;
    let sqrt_dt = dt.sqrt();
    let paths: Result<Vec<Vec<f64>>, SimError> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            let mut state = DVector::from_column_slice(x);
            for step in 0..steps {
                let s = t + step as f64 * dt;
                let v = spec.coeffs.eval(s, state.as_slice())?;
                let root = (v.a * 2.0)
                    .cholesky()
                    .ok_or_else(|| SimError::NotPositive {
                        t: s,
                        x: state.as_slice().to_vec(),
                    })?;
                let l = root.l();
                let dw = DVector::<f64>::from_fn(m0, |_, _| StandardNormal.sample(&mut rng));
                let noise = l * dw * sqrt_dt;
                let mut next = &state + (b * &state) * dt;
                for r in 0..m0 {
                    next[r] += v.drift[r] * dt + noise[r];
                }
                state = next;
            }
            Ok(state.as_slice().to_vec())
        })
        .collect();
    Ok(SampleBatch {
        d,
        points: paths?.concat(),
        seed,
        meta: SampleMeta {
            t,
            x: x.to_vec(),
            big_t,
            scheme: "euler-maruyama".into(),
            steps,
        },
    })
}

/// Heuristic base bandwidth `n^{−1/(Q+4)}`.
pub fn default_bandwidth(n: usize, q: usize) -> f64 {
    (n as f64).powf(-1.0 / (q as f64 + 4.0))
}

/// Per-coordinate bandwidths `h^{2i+1}` on dilation block `i`.
pub fn kde_bandwidths(fam: &DilationFamily, h: f64) -> Vec<f64> {
    fam.diag(h).iter().cloned().collect()
}

/// Product-Gaussian kernel density estimate at `y`.
pub fn kde_density(
    batch: &SampleBatch,
    fam: &DilationFamily,
    h: f64,
    y: &[f64],
) -> Result<f64, SimError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SimError::BadBandwidth(h));
    }
    if batch.is_empty() {
        return Err(SimError::EmptyBatch);
    }
    if y.len() != batch.d || fam.dim() != batch.d {
        return Err(SimError::Dimension {
            got: y.len(),
            expected: batch.d,
        });
    }
    let bw = kde_bandwidths(fam, h);
    let log_norm = -0.5 * batch.d as f64 * (2.0 * std::f64::consts::PI).ln()
        - bw.iter().map(|v| v.ln()).sum::<f64>();
    let terms: Vec<f64> = batch
        .points
        .par_chunks_exact(batch.d)
        .map(|p| {
            let q: f64 = p
                .iter()
                .zip(y)
                .zip(&bw)
                .map(|((a, b), h)| ((a - b) / h).powi(2))
                .sum();
            (log_norm - 0.5 * q).exp()
        })
        .collect();
    Ok(pairwise_sum(&terms) / batch.len() as f64)
}

/// Energy distance `2E|X−Y| − E|X−X'| − E|Y−Y'|` between two point sets (V-statistic).
pub fn energy_distance(a: &SampleBatch, b: &SampleBatch) -> f64 {
    let mean_dist = |p: &SampleBatch, q: &SampleBatch| -> f64 {
        let rows: Vec<f64> = (0..p.len())
            .into_par_iter()
            .map(|i| {
                let x = p.point(i);
                let d: Vec<f64> = q
                    .iter()
                    .map(|y| {
                        x.iter()
                            .zip(y)
                            .map(|(u, v)| (u - v).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                pairwise_sum(&d)
            })
            .collect();
        pairwise_sum(&rows) / (p.len() * q.len()) as f64
    };
    2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b)
}

/// The first `n` points of a batch.
pub fn subsample(batch: &SampleBatch, n: usize) -> SampleBatch {
    let n = n.min(batch.len());
    SampleBatch {
        d: batch.d,
        points: batch.points[..n * batch.d].to_vec(),
        seed: batch.seed,
        meta: batch.meta.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::CoefficientField;
    use crate::group::validate_blocks;
    use std::sync::Arc;

    fn prototype() -> GaussianKernel {
        GaussianKernel::new(
            validate_blocks(
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
                &[1, 1],
            )
            .unwrap(),
        )
        .unwrap()
    }

    fn prototype_spec(a11: &str, a1: &str, c: &str) -> OperatorSpec {
        let drift = validate_blocks(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            &[1, 1],
        )
        .unwrap();
        let field = CoefficientField::parse(2, &[vec![a11]], &[a1], c, 2.0).unwrap();
        OperatorSpec::new(drift, Arc::new(field), 2.0).unwrap()
    }

    #[test]
    fn zero_time_returns_start() {
        let b = sample_exact(&prototype(), 0.5, &[1.0, 2.0], 0.5, 4, 1).unwrap();
        assert!(b.iter().all(|p| p == [1.0, 2.0]));
        assert!(sample_exact(&prototype(), 1.0, &[0.0, 0.0], 0.5, 4, 1).is_err());
        assert!(sample_exact(&prototype(), 0.0, &[0.0, 0.0], 0.5, 0, 1).is_err());
    }

    #[test]
    fn deterministic_under_any_thread_count() {
        let k = prototype();
        let a = sample_exact(&k, 0.0, &[0.0, 0.0], 1.0, 1000, 42).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| sample_exact(&k, 0.0, &[0.0, 0.0], 1.0, 1000, 42).unwrap());
        assert_eq!(a, b);
        let c = sample_exact(&k, 0.0, &[0.0, 0.0], 1.0, 1000, 43).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn exact_sampler_moments() {
        let k = prototype();
        let n = 100_000;
        let batch = sample_exact(&k, 0.0, &[0.0, 0.0], 1.0, n, 7).unwrap();
        let c = k.covariance(1.0).unwrap().c;
        let s = batch.covariance();
        for i in 0..2 {
            for j in 0..2 {
                // Var of the sample covariance entry for a Gaussian: (C_ii C_jj + C_ij²)/n.
                let se = ((c[(i, i)] * c[(j, j)] + c[(i, j)].powi(2)) / n as f64).sqrt();
                assert!((s[(i, j)] - c[(i, j)]).abs() < 3.0 * se, "entry ({i},{j})");
            }
        }
        // Mahalanobis norms have mean d.
        let slice = k.slice(0.0, 1.0).unwrap();
        let m: Vec<f64> = batch.iter().map(|p| slice.cov.mahalanobis_sq(p)).collect();
        let mean = pairwise_sum(&m) / n as f64;
        assert!((mean - 2.0).abs() < 3.0 * (4.0 / n as f64).sqrt());
    }

    #[test]
    fn euler_maruyama_matches_exact_moments() {
        let spec = prototype_spec("0.5", "0", "0");
        let n = 100_000;
        let em = euler_maruyama(&spec, 0.0, &[0.3, -0.2], 1.0, 200, n, 9).unwrap();
        let k = prototype();
        let slice = k.slice(0.0, 1.0).unwrap();
        let mean = slice.center(&[0.3, -0.2]);
        let c = &slice.cov.c;
        let m = em.mean();
        let s = em.covariance();
        for i in 0..2 {
            assert!((m[i] - mean[i]).abs() < 3.0 * (c[(i, i)] / n as f64).sqrt());
            for j in 0..2 {
                let se = ((c[(i, i)] * c[(j, j)] + c[(i, j)].powi(2)) / n as f64).sqrt();
                assert!(
                    (s[(i, j)] - c[(i, j)]).abs() < 3.0 * se,
                    "entry ({i},{j}): {} vs {}",
                    s[(i, j)],
                    c[(i, j)]
                );
            }
        }
    }

    #[test]
    fn euler_maruyama_variable_coefficient_mean() {
        // E[X₂(T)] = x₂ + (T − t) x₁ whatever a₁₁ is.
        let spec = prototype_spec("1 + 0.5*sin(x2)", "0", "0");
        let n = 20_000;
        let em = euler_maruyama(&spec, 0.0, &[0.5, 0.1], 1.0, 100, n, 3).unwrap();
        let m = em.mean();
        let var = em.covariance()[(1, 1)];
        assert!((m[1] - 0.6).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn euler_maruyama_preconditions() {
        let spec = prototype_spec("0.5", "0", "0");
        assert!(matches!(
            euler_maruyama(&spec, 0.0, &[0.0, 0.0], 1.0, 0, 10, 1),
            Err(SimError::NoSteps)
        ));
        let spec = prototype_spec("1 + 0.5*sin(x1)", "0", "0");
        assert!(matches!(
            euler_maruyama(&spec, 0.0, &[0.0, 0.0], 1.0, 10, 10, 1),
            Err(SimError::DependsOnDiffused { coordinate: 1, .. })
        ));
        let spec = prototype_spec("1", "0.2*x1", "0");
        assert!(matches!(
            euler_maruyama(&spec, 0.0, &[0.0, 0.0], 1.0, 10, 10, 1),
            Err(SimError::DependsOnDiffused { .. })
        ));
        let spec = prototype_spec("1", "0", "0.1");
        assert!(matches!(
            euler_maruyama(&spec, 0.0, &[0.0, 0.0], 1.0, 10, 10, 1),
            Err(SimError::NonzeroC { .. })
        ));
    }

    #[test]
    fn kde_single_point_is_a_gaussian() {
        let fam = DilationFamily::new(crate::group::BlockStructure::new(vec![1, 1]).unwrap());
        let batch = SampleBatch {
            d: 2,
            points: vec![0.2, -0.1],
            seed: 0,
            meta: SampleMeta {
                t: 0.0,
                x: vec![0.0, 0.0],
                big_t: 1.0,
                scheme: "manual".into(),
                steps: 0,
            },
        };
        let h: f64 = 0.5;
        let (h1, h2) = (h, h * h * h);
        let y = [0.3, 0.0];
        let want = (-0.5 * (((y[0] - 0.2) / h1).powi(2) + ((y[1] + 0.1) / h2).powi(2))).exp()
            / (2.0 * std::f64::consts::PI * h1 * h2);
        assert!((kde_density(&batch, &fam, h, &y).unwrap() - want).abs() < 1e-15 * want.max(1.0));
        assert!(kde_density(&batch, &fam, 0.0, &y).is_err());
    }

    #[test]
    fn kde_symmetry() {
        let fam = DilationFamily::new(crate::group::BlockStructure::new(vec![1, 1]).unwrap());
        let half = sample_exact(&prototype(), 0.0, &[0.0, 0.0], 1.0, 500, 5).unwrap();
        let mut points = half.points.clone();
        points.extend(half.points.iter().map(|v| -v));
        let batch = SampleBatch { points, ..half };
        let y = [0.3, -0.2];
        let a = kde_density(&batch, &fam, 0.4, &y).unwrap();
        let b = kde_density(&batch, &fam, 0.4, &[-0.3, 0.2]).unwrap();
        assert!((a - b).abs() < 1e-14 * a);
    }

    #[test]
    fn energy_distance_is_small_for_equal_laws() {
        let k = prototype();
        let a = sample_exact(&k, 0.0, &[0.0, 0.0], 1.0, 1000, 1).unwrap();
        let b = sample_exact(&k, 0.0, &[0.0, 0.0], 1.0, 1000, 2).unwrap();
        let shifted = sample_exact(&k, 0.0, &[1.0, 0.0], 1.0, 1000, 3).unwrap();
        assert!(energy_distance(&a, &a).abs() < 1e-12);
        assert!(energy_distance(&a, &b) < energy_distance(&a, &shifted) / 10.0);
    }

    #[test]
    fn csv_layout() {
        let b = sample_exact(&prototype(), 0.0, &[1.0, 2.0], 0.0, 2, 0).unwrap();
        let mut out = Vec::new();
        b.write_csv(&mut out, None).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x1,x2\n1,2\n1,2\n");
    }
}
