//! One function per task; each returns a JSON summary plus buffered files.

use std::fmt;
use std::str::FromStr;

use kolmo::coeff::{check_assumptions, Expr, ValidationBox};
use kolmo::fdsolver::{estimate_fundamental_solution, moser_check, solve_backward, FdGrid};
use kolmo::grid::{Axis, GridSolution, SchemeMeta, SpatialGrid};
use kolmo::group::{hypoellipticity_check, GroupElement};
use kolmo::kernel::{ck_residual, GaussianKernel};
use kolmo::scaling::{scale_operator, scaled_kernel_check};
use kolmo::simulate::{euler_maruyama, sample_exact, SampleBatch};
use kolmo::verify::{
    decay_check, fit_gaussian_bound, nash_constant, tail_mass_check, GridDensity, ProbeSet,
    TimeSweep, TransitionDensity, VerificationReport, DEFAULT_K_CFG,
};
use nalgebra::DMatrix;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, Section};
use crate::output::{heatmap_svg, Artifacts};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Describe,
    KernelEval,
    KernelCk,
    Sample,
    Solve,
    Scale,
    VerifyNash,
    VerifyBound,
    VerifyTail,
    VerifyDecay,
    Moser,
}

impl Task {
    pub const ALL: [Task; 11] = [
        Task::Describe,
        Task::KernelEval,
        Task::KernelCk,
        Task::Sample,
        Task::Solve,
        Task::Scale,
        Task::VerifyNash,
        Task::VerifyBound,
        Task::VerifyTail,
        Task::VerifyDecay,
        Task::Moser,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Describe => "describe",
            Task::KernelEval => "kernel-eval",
            Task::KernelCk => "kernel-ck",
            Task::Sample => "sample",
            Task::Solve => "solve",
            Task::Scale => "scale",
            Task::VerifyNash => "verify-nash",
            Task::VerifyBound => "verify-bound",
            Task::VerifyTail => "verify-tail",
            Task::VerifyDecay => "verify-decay",
            Task::Moser => "moser",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Failed(String),
}

fn fail(e: impl fmt::Display) -> TaskError {
    TaskError::Failed(e.to_string())
}

/// What a task produced.
#[derive(Debug)]
pub struct Outcome {
    pub summary: Value,
    pub artifacts: Artifacts,
    /// False when an asserted inequality or tolerance failed.
    pub verified: bool,
}

pub fn execute(task: Task, cfg: &RunConfig) -> Result<Outcome, TaskError> {
    let mut out = match task {
        Task::Describe => describe(cfg),
        Task::KernelEval => kernel_eval(cfg),
        Task::KernelCk => kernel_ck(cfg),
        Task::Sample => sample(cfg),
        Task::Solve => solve(cfg),
        Task::Scale => scale(cfg),
        Task::VerifyNash => verify_nash(cfg, false),
        Task::VerifyBound => verify_nash(cfg, true),
        Task::VerifyTail => verify_tail(cfg),
        Task::VerifyDecay => verify_decay(cfg),
        Task::Moser => moser(cfg),
    }?;
    if let Value::Object(map) = &mut out.summary {
        map.insert("task".into(), json!(task.name()));
        map.insert("config_hash".into(), json!(cfg.hash));
    }
    if cfg.output.formats.json {
        let mut text = serde_json::to_string_pretty(&out.summary).expect("plain data");
        text.push('\n');
        out.artifacts
            .push(format!("{}.json", task.name()), text.into_bytes());
    }
    Ok(out)
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn kernel_of(cfg: &RunConfig) -> Result<GaussianKernel, TaskError> {
    GaussianKernel::new(cfg.spec.drift.clone()).map_err(fail)
}

fn csv_comment(cfg: &RunConfig, task: Task, extra: &str) -> String {
    let mut c = format!("config-hash: {}\ntask: {}", cfg.hash, task.name());
    if !extra.is_empty() {
        c.push('\n');
        c.push_str(extra);
    }
    c
}

/// Symmetric box `[−half, half]` per axis with `nodes` nodes per axis.
fn grid_from(
    task: &Section<'_>,
    d: usize,
    half: f64,
    nodes: usize,
) -> Result<SpatialGrid, TaskError> {
    let halves = task.per_axis_f64("half", d, half)?;
    let counts = task.per_axis_usize("nodes", d, nodes)?;
    let axes = halves
        .iter()
        .zip(&counts)
        .map(|(h, n)| Axis::new(-h, *h, *n))
        .collect();
    SpatialGrid::new(axes).map_err(fail)
}

fn push_solution(
    out: &mut Artifacts,
    cfg: &RunConfig,
    task: Task,
    stem: &str,
    sol: &GridSolution,
    slice: usize,
) -> Result<(), TaskError> {
    let f = cfg.output.formats;
    if f.csv {
        let mut buf = Vec::new();
        let extra = format!(
            "scheme: {} order {} dt {} cfl {}",
            sol.meta.scheme, sol.meta.order, sol.meta.dt, sol.meta.cfl
        );
        sol.write_csv(&mut buf, Some(&csv_comment(cfg, task, &extra)))
            .map_err(fail)?;
        out.push(format!("{stem}.csv"), buf);
    }
    if f.bin {
        let mut buf = Vec::new();
        sol.write_binary(&mut buf).map_err(fail)?;
        out.push(format!("{stem}.kgsl"), buf);
    }
    if f.svg {
        let title = format!("{stem} at t = {}", sol.times[slice]);
        if let Some(svg) = heatmap_svg(&sol.grid, &sol.values[slice], &title, &cfg.hash) {
            out.push(format!("{stem}.svg"), svg.into_bytes());
        }
    }
    Ok(())
}

fn describe(cfg: &RunConfig) -> Result<Outcome, TaskError> {
    let spec = &cfg.spec;
    let d = spec.dim();
    let task = cfg.task();
    let samples = task.usize_or("samples", 5)?;
    let report = check_assumptions(spec, &ValidationBox::default_for(d), samples).map_err(fail)?;
    let structure = spec.drift.structure();
    let summary = json!({
        "d": d,
        "m": structure.sizes(),
        "Q": structure.homogeneous_dimension(),
        "homogeneous": spec.drift.is_homogeneous(),
        "hypoelliptic": hypoellipticity_check(spec.drift.matrix(), structure.m0()),
        "mu": spec.mu,
        "mu_hat": report.mu_hat,
        "bounds": {
            "min_eigenvalue": report.min_eigenvalue,
            "max_eigenvalue": report.max_eigenvalue,
            "sup_drift": report.sup_drift,
            "sup_c": report.sup_c,
            "declared": spec.bound(),
            "nodes": report.nodes,
        },
    });
    Ok(Outcome {
        summary,
        artifacts: Artifacts::default(),
        verified: true,
    })
}

fn kernel_eval(cfg: &RunConfig) -> Result<Outcome, TaskError> {
    let d = cfg.dim();
    let task = cfg.task();
    let k = kernel_of(cfg)?;
    let t = task.f64_or("t", 0.0)?;
    let big_t = task.f64_or("big_t", 1.0)?;
    let x = task.point("x", d)?;
    let y = task.point("y", d)?;
    let slice = k.slice(t, big_t).map_err(fail)?;
    let log_value = slice.log_density(&x, &y);
    let mut artifacts = Artifacts::default();
    if task.raw("nodes").is_some() || task.raw("half").is_some() {
        let grid = grid_from(&task, d, 4.0, 81)?;
        let values = grid.sample(|p| slice.density(p, &y));
        let sol = GridSolution::new(
            grid,
            vec![t],
            vec![values],
            SchemeMeta {
                scheme: "closed-form".into(),
                ..SchemeMeta::default()
            },
        )
        .map_err(fail)?;
        push_solution(&mut artifacts, cfg, Task::KernelEval, "kernel", &sol, 0)?;
    }
    let summary = json!({
        "t": t, "x": x, "big_t": big_t, "y": y,
        "value": log_value.exp(),
        "log_value": log_value,
        "covariance": matrix_rows(&slice.cov.c),
        "det_covariance": slice.cov.logdet.exp(),
        "mean": slice.center(&x),
        "peak": slice.peak(),
        "method_gap": slice.cov.method_gap,
    });
    Ok(Outcome {
        summary,
        artifacts,
        verified: true,
    })
}

fn kernel_ck(cfg: &RunConfig) -> Result<Outcome, TaskError> {
    let d = cfg.dim();
    let task = cfg.task();
    let k = kernel_of(cfg)?;
    let t = task.f64_or("t", 0.0)?;
    let s = task.f64_or("s", 0.5)?;
    let big_t = task.f64_or("big_t", 1.0)?;
    let tol = task.f64_or("tolerance", 1e-6)?;
    let x = task.point("x", d)?;
    let y = task.point("y", d)?;
    let ck = ck_residual(&k, t, &x, s, big_t, &y).map_err(fail)?;
    let pass = ck.residual <= tol;
    let summary = json!({
        "t": t, "s": s, "big_t": big_t, "x": x, "y": y,
        "residual": ck.residual,
        "integral": ck.integral,
        "direct": ck.direct,
        "tail_bound": ck.tail_bound,
        "nodes_per_axis": ck.nodes_per_axis,
        "tolerance": tol,
        "pass": pass,
    });
    Ok(Outcome {
        summary,
        artifacts: Artifacts::default(),
        verified: pass,
    })
}

fn sample(cfg: &RunConfig) -> Result<Outcome, TaskError> {
    let d = cfg.dim();
    let task = cfg.task();
    let t = task.f64_or("t", 0.0)?;
    let big_t = task.f64_or("big_t", 1.0)?;
    let x = task.point("x", d)?;
    let n = task.usize_or("n", 1000)?;
    let seed = task.u64_or("seed", 0)?;
    let scheme = task.string_or("scheme", "exact");
    let batch: SampleBatch = match scheme.as_str() {
        "exact" => sample_exact(&kernel_of(cfg)?, t, &x, big_t, n, seed).map_err(fail)?,
        "euler" => {
            let steps = task.usize_or("steps", 200)?;
            euler_maruyama(&cfg.spec, t, &x, big_t, steps, n, seed).map_err(fail)?
        }
        other => {
            return Err(TaskError::Config(ConfigError::Value {
                section: "task".into(),
                key: "scheme".into(),
                value: other.into(),
                msg: "expected `exact` or `euler`".into(),
            }))
        }
    };
    let mut artifacts = Artifacts::default();
    if cfg.output.formats.csv {
        let mut buf = Vec::new();
        let extra = format!("scheme: {scheme}\nseed: {seed}\nt: {t}\nT: {big_t}");
        batch
            .write_csv(&mut buf, Some(&csv_comment(cfg, Task::Sample, &extra)))
            .map_err(fail)?;
        artifacts.push("samples.csv", buf);
    }
    let mut summary = json!({
        "scheme": scheme, "n": batch.len(), "seed": seed, "t": t, "x": x, "big_t": big_t,
        "mean": batch.mean(),
        "covariance": batch.covariance(),
    });
    if let Ok(k) = kernel_of(cfg) {
        if let Ok(slice) = k.slice(t, big_t) {
            summary["reference_mean"] = json!(slice.center(&x));
            summary["reference_covariance"] = json!(matrix_rows(&slice.cov.c));
        }
    }
    Ok(Outcome {
        summary,
        artifacts,
        verified: true,
    })
}

fn eval_data(expr: &Expr, grid: &SpatialGrid, t: f64) -> Result<Vec<f64>, TaskError> {
    (0..grid.len())
        .map(|k| {
            expr.eval(t, &grid.node(k))
                .map_err(|e| fail(format!("data at {:?}: {e}", grid.node(k))))
        })
        .collect()
}

fn gaussian_default(d: usize) -> String {
    let sum: Vec<String> = (1..=d).map(|i| format!("x{i}^2")).collect();
    format!("exp(-({})/2)", sum.join(" + "))
}

fn solve(cfg: &RunConfig) -> Result<Outcome, TaskError> {
    let d = cfg.dim();
    let task = cfg.task();
    let t = task.f64_or("t", 0.0)?;
    let big_t = task.f64_or("big_t", 1.0)?;
    let grid = grid_from(&task, d, 6.0, 101)?;
    let mut fd = FdGrid::new(grid.clone(), t, big_t).with_uniform_saves(task.usize_or("saves", 0)?);
    if let Some(dt) = task.f64_opt("dt")? {
        fd = fd.with_dt(dt);
    }
    let mut summary = json!({ "t": t, "big_t": big_t });
    let sol = match task.f64_opt("eps")? {
        Some(eps) => {
            let y = task.point("y", d)?;
            let est = estimate_fundamental_solution(&cfg.spec, &y, eps, &fd).map_err(fail)?;
            summary["eps"] = json!(eps);
            summary["y"] = json!(y);
            summary["masses"] = json!(est.masses);
            summary["mass_bounds"] = json!(est.mass_bounds);
            est.solution
        }
        None => {
            let phi = task.expr_or("phi", d, &gaussian_default(d))?;
            let data = eval_data(&phi, &grid, big_t)?;
            solve_backward(&cfg.spec, &data, &fd).map_err(fail)?
        }
    };
    summary["times"] = json!(sol.times);
    summary["min"] = json!(sol.min_value());
    summary["max"] = json!(sol.max_value());
    summary["dt"] = json!(sol.meta.dt);
    summary["cfl"] = json!(sol.meta.cfl);
    summary["scheme"] = json!(sol.meta.scheme);
    summary["nodes"] = json!(grid.len());
    let mut artifacts = Artifacts::default();
    push_solution(&mut artifacts, cfg, Task::Solve, "solution", &sol, 0)?;
    Ok(Outcome {
        summary,
        artifacts,
        verified: true,
    })
}

fn scale(cfg: &RunConfig) -> Result<Outcome, TaskError> {
    let d = cfg.dim();
    let task = cfg.task();
    let lambda = task.f64_required("lambda")?;
    let scaled = scale_operator(&cfg.spec, lambda).map_err(fail)?;
    let t = task.f64_or("t", 0.0)?;
    let x = task.point("x", d)?;
    let base = cfg.spec.coeffs.eval(t, &x).map_err(fail)?;
    let at = scaled.coefficients().eval(t, &x).map_err(fail)?;
    let mut summary = json!({
        "lambda": lambda,
        "b": matrix_rows(cfg.spec.drift.matrix()),
        "b_scaled": matrix_rows(scaled.drift().matrix()),
        "homogeneous": cfg.spec.drift.is_homogeneous(),
        "probe": { "t": t, "x": x },
        "a": matrix_rows(&base.a),
        "a_scaled": matrix_rows(&at.a),
        "drift_scaled": at.drift.as_slice(),
        "c_scaled": at.c,
    });
    if cfg.spec.drift.is_homogeneous() {
        let k = kernel_of(cfg)?;
        let pairs: Vec<(GroupElement, GroupElement)> = [
            (0.0, 0.3, 1.0, -0.4),
            (0.2, -1.0, 0.7, 0.5),
            (-0.5, 0.8, 0.1, 1.2),
        ]
        .iter()
        .map(|&(t0, a, t1, b)| {
            (
                GroupElement::new(t0, vec![a; d]),
                GroupElement::new(t1, vec![b; d]),
            )
        })
        .collect();
        let residual = scaled_kernel_check(&k, lambda, &pairs).map_err(fail)?;
        summary["kernel_scaling_residual"] = json!(residual);
    }
    Ok(Outcome {
        summary,
        artifacts: Artifacts::default(),
        verified: true,
    })
}

fn report_summary(rep: &VerificationReport) -> Value {
    serde_json::to_value(rep).expect("plain data")
}

/// Builds the fd-based density when `[task] density = fd`.
fn fd_density(
    cfg: &RunConfig,
    tau_min: f64,
    tau_max: f64,
    times: usize,
) -> Result<GridDensity, TaskError> {
    let d = cfg.dim();
    let task = cfg.task();
    let big_t = task.f64_or("big_t", 1.0)?;
    let y = task.point("y", d)?;
    let grid = grid_from(&task, d, 5.0, 101)?;
    let h = grid.spacings().into_iter().fold(0.0, f64::max);
    let eps = task.f64_or("eps", 2.0 * h)?;
    let saves = TimeSweep::geometric(big_t, tau_min, tau_max, times)
        .taus
        .iter()
        .map(|tau| big_t - tau)
        .collect();
    let fd = FdGrid::new(grid, big_t - tau_max, big_t).with_save_times(saves);
    let est = estimate_fundamental_solution(&cfg.spec, &y, eps, &fd).map_err(fail)?;
    Ok(GridDensity::new(est.solution, big_t, y))
}

fn verify_nash(cfg: &RunConfig, gaussian: bool) -> Result<Outcome, TaskError> {
    let d = cfg.dim();
    let task = cfg.task();
    let tau_min = task.f64_or("tau_min", 0.01)?;
    let tau_max = task.f64_or("tau_max", 1.0)?;
    let times = task.usize_or("times", 9)?;
    let density = task.string_or("density", "kernel");
    let drift = &cfg.spec.drift;
    let fam = kolmo::group::DilationFamily::new(drift.structure().clone());
    let rep = match density.as_str() {
        "kernel" => {
            let k = kernel_of(cfg)?;
            let big_t = task.f64_or("big_t", 1.0)?;
            let sweep = TimeSweep::geometric(big_t, tau_min, tau_max, times);
            let probes = ProbeSet::lattice(
                d,
                task.f64_or("probe_half", if gaussian { 4.0 } else { 2.0 })?,
                task.usize_or("probe_nodes", if gaussian { 9 } else { 5 })?,
            );
            run_fit(&k, gaussian, drift, &fam, &sweep, &probes)?
        }
        "fd" => {
            let g = fd_density(cfg, tau_min, tau_max, times)?;
            let sweep = g.sweep(tau_min * (1.0 - 1e-9), tau_max * (1.0 + 1e-9));
            let probes = ProbeSet::new(g.nodes(), vec![g.y.clone()]);
            run_fit(&g, gaussian, drift, &fam, &sweep, &probes)?
        }
        other => {
            return Err(TaskError::Config(ConfigError::Value {
                section: "task".into(),
                key: "density".into(),
                value: other.into(),
                msg: "expected `kernel` or `fd`".into(),
            }))
        }
    };
    let mut summary = report_summary(&rep);
    summary["density"] = json!(density);
    Ok(Outcome {
        summary,
        artifacts: Artifacts::default(),
        verified: rep.pass,
    })
}

fn run_fit(
    gamma: &dyn TransitionDensity,
    gaussian: bool,
    drift: &kolmo::group::DriftMatrix,
    fam: &kolmo::group::DilationFamily,
    sweep: &TimeSweep,
    probes: &ProbeSet,
) -> Result<VerificationReport, TaskError> {
    if gaussian {
        fit_gaussian_bound(gamma, drift, fam, sweep, probes).map_err(fail)
    } else {
        nash_constant(gamma, fam, sweep, probes).map_err(fail)
    }
}

fn verify_tail(cfg: &RunConfig) -> Result<Outcome, TaskError> {
    let d = cfg.dim();
    let task = cfg.task();
    let k = kernel_of(cfg)?;
    let eta = task.f64_or("eta", 1.0)?;
    let sigma = task.f64_or("sigma", 1.0)?;
    let k_cfg = task.f64_or("k_cfg", DEFAULT_K_CFG)?;
    let t = task.f64_or("t", eta - sigma.powi(2).min(1.0) / k_cfg)?;
    let x = task.point("x", d)?;
    let rep = tail_mass_check(&k, t, &x, eta, sigma, k_cfg).map_err(fail)?;
    Ok(Outcome {
        summary: report_summary(&rep),
        artifacts: Artifacts::default(),
        verified: rep.pass,
    })
}

fn verify_decay(cfg: &RunConfig) -> Result<Outcome, TaskError> {
    let d = cfg.dim();
    let task = cfg.task();
    let k = kernel_of(cfg)?;
    let eta = task.f64_or("eta", 1.0)?;
    let sigma = task.f64_or("sigma", 1.0)?;
    let k_cfg = task.f64_or("k_cfg", DEFAULT_K_CFG)?;
    let tau = task.f64_or("tau", eta - 0.5 * sigma.powi(2).min(1.0) / k_cfg)?;
    let y = task.point("y", d)?;
    let grid = grid_from(&task, d, 6.0, 121)?;
    let expr = task.expr_or("data", d, &gaussian_default(d))?;
    let raw = eval_data(&expr, &grid, eta)?;
    let u0: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(n, v)| {
            let x = grid.node(n);
            let r: f64 = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if r < sigma {
                0.0
            } else {
                *v
            }
        })
        .collect();
    let rep = decay_check(&k, &grid, &u0, &y, sigma, eta, tau, k_cfg).map_err(fail)?;
    Ok(Outcome {
        summary: report_summary(&rep),
        artifacts: Artifacts::default(),
        verified: rep.pass,
    })
}

fn moser(cfg: &RunConfig) -> Result<Outcome, TaskError> {
    let d = cfg.dim();
    let task = cfg.task();
    let rho = task.f64_or("rho", 0.4)?;
    let r = task.f64_or("r", 0.6)?;
    let p = task.f64_or("p", 1.0)?;
    let z0 = GroupElement::new(task.f64_or("z0_t", 0.0)?, task.point("z0_x", d)?);
    let big_t = task.f64_or("big_t", z0.t + r * r + 2.0)?;
    let y = task.point("y", d)?;
    let n_times = task.usize_or("times", 41)?.max(2);
    let grid = grid_from(&task, d, 3.0, 61)?;
    let (lo, hi) = (z0.t - r * r, z0.t + r * r);
    let times: Vec<f64> = (0..n_times)
        .map(|i| lo + (hi - lo) * i as f64 / (n_times - 1) as f64)
        .collect();
    let density = task.string_or("density", "kernel");
    let u = match density.as_str() {
        "kernel" => {
            let k = kernel_of(cfg)?;
            let values = times
                .iter()
                .map(|&t| {
                    let slice = k.slice(t, big_t).map_err(fail)?;
                    Ok(grid.sample(|x| slice.density(x, &y)))
                })
                .collect::<Result<Vec<_>, TaskError>>()?;
            GridSolution::new(grid.clone(), times, values, SchemeMeta::default()).map_err(fail)?
        }
        "fd" => {
            let h = grid.spacings().into_iter().fold(0.0, f64::max);
            let eps = task.f64_or("eps", 2.0 * h)?;
            let fd = FdGrid::new(grid.clone(), lo, big_t).with_save_times(times);
            let est = estimate_fundamental_solution(&cfg.spec, &y, eps, &fd).map_err(fail)?;
            // keep only the slices inside the cylinder's time span
            let keep: Vec<usize> = (0..est.solution.times.len())
                .filter(|&k| est.solution.times[k] <= hi + 1e-12)
                .collect();
            GridSolution::new(
                grid.clone(),
                keep.iter().map(|&k| est.solution.times[k]).collect(),
                keep.iter()
                    .map(|&k| est.solution.values[k].clone())
                    .collect(),
                est.solution.meta.clone(),
            )
            .map_err(fail)?
        }
        other => {
            return Err(TaskError::Config(ConfigError::Value {
                section: "task".into(),
                key: "density".into(),
                value: other.into(),
                msg: "expected `kernel` or `fd`".into(),
            }))
        }
    };
    let fam = kolmo::group::DilationFamily::new(cfg.spec.drift.structure().clone());
    let rep = moser_check(&u, &z0, rho, r, p, &cfg.spec.drift, &fam).map_err(fail)?;
    let pass = rep.ratio.is_finite() && rep.ratio > 0.0;
    let mut summary = serde_json::to_value(rep).expect("plain data");
    summary["density"] = json!(density);
    summary["pass"] = json!(pass);
    Ok(Outcome {
        summary,
        artifacts: Artifacts::default(),
        verified: pass,
    })
}
