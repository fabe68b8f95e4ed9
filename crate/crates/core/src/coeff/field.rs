use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::parser::{parse_expr, EvalErrorKind, Expr, ParseError};
use crate::group::DriftMatrix;

/// Values of `a(t,x)`, the first-order coefficients `a_i(t,x)` and `c(t,x)` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffValues {
    pub a: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("evaluating {entry} at t = {t}, x = {x:?}: {kind}")]
pub struct EvalError {
    pub entry: String,
    pub t: f64,
    pub x: Vec<f64>,
    pub kind: EvalErrorKind,
}

/// Anything that can produce the coefficients of an operator pointwise.
pub trait Coefficients: Send + Sync + fmt::Debug {
    /// Number of diffused coordinates.
    fn m0(&self) -> usize;
    /// Spatial dimension.
    fn dim(&self) -> usize;
    /// Declared bound `M` on `‖a_i‖∞` and `‖c‖∞`.
    fn declared_bound(&self) -> f64;
    fn eval(&self, t: f64, x: &[f64]) -> Result<CoeffValues, EvalError>;
    /// True only if the values are known not to depend on `t`; lets solvers evaluate once.
    fn is_time_independent(&self) -> bool {
        false
    }
}

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("{entry}: {source}")]
    Parse {
        entry: String,
        #[source]
        source: ParseError,
    },
    #[error("diffusion matrix must be {m0}x{m0}")]
    Shape { m0: usize },
    #[error("a{i}{j} and a{j}{i} differ")]
    Asymmetric { i: usize, j: usize },
    #[error("m0 = {m0} exceeds dimension {d}")]
    TooManyDiffused { m0: usize, d: usize },
    #[error("declared bound must be finite and non-negative")]
    BadBound,
}

/// Parsed coefficient field.
///
/// Only the upper triangle of `a` is stored, so the evaluated matrix is symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    m0: usize,
    d: usize,
    a_upper: Vec<Expr>,
    drift: Vec<Expr>,
    c: Expr,
    bound: f64,
}

fn upper_index(m0: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * m0 - i * (i + 1) / 2 + j
}

impl CoefficientField {
    /// Builds a field from full `a`, the `a_i` and `c`. `a[i][j]` and `a[j][i]` must be equal trees.
    pub fn new(
        d: usize,
        a: Vec<Vec<Expr>>,
        drift: Vec<Expr>,
        c: Expr,
        bound: f64,
    ) -> Result<Self, FieldError> {
        let m0 = a.len();
        if a.iter().any(|row| row.len() != m0) || drift.len() != m0 || m0 == 0 {
            return Err(FieldError::Shape { m0 });
        }
        if m0 > d {
            return Err(FieldError::TooManyDiffused { m0, d });
        }
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(FieldError::BadBound);
        }
        let mut a_upper = Vec::with_capacity(m0 * (m0 + 1) / 2);
        for (i, row) in a.iter().enumerate() {
            for (j, entry) in row.iter().enumerate().skip(i) {
                if *entry != a[j][i] {
                    return Err(FieldError::Asymmetric { i: i + 1, j: j + 1 });
                }
                a_upper.push(entry.clone());
            }
        }
        Ok(Self {
            m0,
            d,
            a_upper,
            drift,
            c,
            bound,
        })
    }

    /// Parses every entry from source text. `a` is given as full rows.
    pub fn parse(
        d: usize,
        a: &[Vec<&str>],
        drift: &[&str],
        c: &str,
        bound: f64,
    ) -> Result<Self, FieldError> {
        let p = |entry: String, src: &str| {
            parse_expr(src, d).map_err(|source| FieldError::Parse { entry, source })
        };
        let mut rows = Vec::with_capacity(a.len());
        for (i, row) in a.iter().enumerate() {
            let mut out = Vec::with_capacity(row.len());
            for (j, src) in row.iter().enumerate() {
                out.push(p(format!("a{}{}", i + 1, j + 1), src)?);
            }
            rows.push(out);
        }
        let drift = drift
            .iter()
            .enumerate()
            .map(|(i, src)| p(format!("a{}", i + 1), src))
            .collect::<Result<Vec<_>, _>>()?;
        let c = p("c".into(), c)?;
        Self::new(d, rows, drift, c, bound)
    }

    /// `a = diag(value)`, `a_i = 0`, `c = 0`.
    pub fn constant_diagonal(d: usize, m0: usize, value: f64, bound: f64) -> Self {
        let a = (0..m0)
            .map(|i| {
                (0..m0)
                    .map(|j| Expr::Num(if i == j { value } else { 0.0 }))
                    .collect()
            })
            .collect();
        Self::new(d, a, vec![Expr::Num(0.0); m0], Expr::Num(0.0), bound)
            .expect("constant field is well formed")
    }

    pub fn a_entry(&self, i: usize, j: usize) -> &Expr {
        &self.a_upper[upper_index(self.m0, i, j)]
    }

    pub fn drift_entry(&self, i: usize) -> &Expr {
        &self.drift[i]
    }

    pub fn c_entry(&self) -> &Expr {
        &self.c
    }
}

impl Coefficients for CoefficientField {
    fn m0(&self) -> usize {
        self.m0
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn declared_bound(&self) -> f64 {
        self.bound
    }

    fn is_time_independent(&self) -> bool {
        !(self.a_upper.iter().chain(&self.drift).any(Expr::uses_time) || self.c.uses_time())
    }

    fn eval(&self, t: f64, x: &[f64]) -> Result<CoeffValues, EvalError> {
        let at = |entry: String, e: &Expr| {
            e.eval(t, x).map_err(|kind| EvalError {
                entry,
                t,
                x: x.to_vec(),
                kind,
            })
        };
        let m0 = self.m0;
        let mut a = DMatrix::zeros(m0, m0);
        for i in 0..m0 {
            for j in i..m0 {
                let v = at(format!("a{}{}", i + 1, j + 1), self.a_entry(i, j))?;
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let mut drift = DVector::zeros(m0);
        for i in 0..m0 {
            drift[i] = at(format!("a{}", i + 1), &self.drift[i])?;
        }
        let c = at("c".into(), &self.c)?;
        Ok(CoeffValues { a, drift, c })
    }
}

/// Evaluates `(a, (a_i), c)` at `(t, x)`.
pub fn eval_field(field: &dyn Coefficients, t: f64, x: &[f64]) -> Result<CoeffValues, EvalError> {
    field.eval(t, x)
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("ellipticity constant must satisfy mu >= 1, got {0}")]
    BadMu(f64),
    #[error(
        "coefficients have m0 = {coeff_m0}, d = {coeff_d} but the drift has m0 = {m0}, d = {d}"
    )]
    Mismatch {
        coeff_m0: usize,
        coeff_d: usize,
        m0: usize,
        d: usize,
    },
}

/// Full data of an operator in the class: drift, coefficients and ellipticity constant `μ`.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    pub drift: DriftMatrix,
    pub coeffs: Arc<dyn Coefficients>,
    pub mu: f64,
}

impl OperatorSpec {
    pub fn new(
        drift: DriftMatrix,
        coeffs: Arc<dyn Coefficients>,
        mu: f64,
    ) -> Result<Self, SpecError> {
        if !(mu >= 1.0) || !mu.is_finite() {
            return Err(SpecError::BadMu(mu));
        }
        let m0 = drift.structure().m0();
        let d = drift.dim();
        if coeffs.m0() != m0 || coeffs.dim() != d {
            return Err(SpecError::Mismatch {
                coeff_m0: coeffs.m0(),
                coeff_d: coeffs.dim(),
                m0,
                d,
            });
        }
        Ok(Self { drift, coeffs, mu })
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn m0(&self) -> usize {
        self.drift.structure().m0()
    }

    pub fn bound(&self) -> f64 {
        self.coeffs.declared_bound()
    }
}

/// Space-time box on which assumptions are sampled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationBox {
    pub t: (f64, f64),
    pub x: Vec<(f64, f64)>,
}

impl ValidationBox {
    /// `[0, 1] × [-5, 5]^d`.
    pub fn default_for(d: usize) -> Self {
        Self {
            t: (0.0, 1.0),
            x: vec![(-5.0, 5.0); d],
        }
    }

    fn is_valid(&self) -> bool {
        std::iter::once(&self.t)
            .chain(self.x.iter())
            .all(|&(lo, hi)| lo.is_finite() && hi.is_finite() && lo <= hi)
    }

    /// Number of lattice nodes with `n` nodes per axis.
    pub fn lattice_len(&self, n: usize) -> usize {
        n.pow(self.x.len() as u32 + 1)
    }

    /// Node `index` of the `n`-per-axis lattice; the last spatial axis varies fastest.
    pub fn lattice_node(&self, n: usize, index: usize) -> (f64, Vec<f64>) {
        let coord = |(lo, hi): (f64, f64), k: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
        let d = self.x.len();
        let mut rem = index;
        let mut x = vec![0.0; d];
        for axis in (0..d).rev() {
            x[axis] = coord(self.x[axis], rem % n);
            rem /= n;
        }
        (coord(self.t, rem % n), x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// Smallest `μ̂ ≥ 1` with `μ̂⁻¹ ≤ eig(a) ≤ μ̂` on the lattice.
    pub mu_hat: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub sup_drift: f64,
    pub sup_c: f64,
    pub nodes: usize,
    pub samples_per_axis: usize,
}

#[derive(Debug, Error)]
pub enum AssumptionError {
    #[error("validation box must be finite and ordered, with at least 2 samples per axis")]
    BadBox,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("diffusion matrix not positive definite at t = {t}, x = {x:?} (smallest eigenvalue {eigenvalue})")]
    NotPositive {
        t: f64,
        x: Vec<f64>,
        eigenvalue: f64,
    },
    #[error("sup norm of {which} is {value}, exceeding the declared bound {bound}")]
    BoundViolation {
        which: &'static str,
        value: f64,
        bound: f64,
    },
    #[error("estimated ellipticity constant {mu_hat} exceeds mu = {mu}")]
    Ellipticity { mu_hat: f64, mu: f64 },
}

struct NodeSample {
    min_eig: f64,
    max_eig: f64,
    drift: f64,
    c: f64,
}

/// Samples the coefficients on an `n`-per-axis lattice of `bx` and checks ellipticity and bounds.
pub fn check_assumptions(
    spec: &OperatorSpec,
    bx: &ValidationBox,
    n: usize,
) -> Result<AssumptionReport, AssumptionError> {
    if n < 2 || !bx.is_valid() || bx.x.len() != spec.dim() {
        return Err(AssumptionError::BadBox);
    }
    let coeffs = &spec.coeffs;
    let total = bx.lattice_len(n);
    let samples: Vec<Result<NodeSample, EvalError>> = (0..total)
        .into_par_iter()
        .map(|k| {
            let (t, x) = bx.lattice_node(n, k);
            let v = coeffs.eval(t, &x)?;
            let eig = v.a.symmetric_eigenvalues();
            Ok(NodeSample {
                min_eig: eig.iter().cloned().fold(f64::INFINITY, f64::min),
                max_eig: eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                drift: v.drift.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                c: v.c.abs(),
            })
        })
        .collect();

    let mut min_eig = f64::INFINITY;
    let mut max_eig = f64::NEG_INFINITY;
    let mut sup_drift = 0.0f64;
    let mut sup_c = 0.0f64;
    for (k, s) in samples.into_iter().enumerate() {
        let s = s?;
        if s.min_eig <= 0.0 {
            let (t, x) = bx.lattice_node(n, k);
            return Err(AssumptionError::NotPositive {
                t,
                x,
                eigenvalue: s.min_eig,
            });
        }
        min_eig = min_eig.min(s.min_eig);
        max_eig = max_eig.max(s.max_eig);
        sup_drift = sup_drift.max(s.drift);
        sup_c = sup_c.max(s.c);
    }
    let bound = spec.bound();
    if sup_drift > bound {
        return Err(AssumptionError::BoundViolation {
            which: "a_i",
            value: sup_drift,
            bound,
        });
    }
    if sup_c > bound {
        return Err(AssumptionError::BoundViolation {
            which: "c",
            value: sup_c,
            bound,
        });
    }
    let mu_hat = max_eig.max(1.0 / min_eig).max(1.0);
    // slack for round-off in the eigen solver
    if mu_hat > spec.mu * (1.0 + 1e-12) {
        return Err(AssumptionError::Ellipticity {
            mu_hat,
            mu: spec.mu,
        });
    }
    Ok(AssumptionReport {
        mu_hat,
        min_eigenvalue: min_eig,
        max_eigenvalue: max_eig,
        sup_drift,
        sup_c,
        nodes: total,
        samples_per_axis: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::validate_blocks;
    use std::f64::consts::FRAC_PI_2;

    fn prototype_spec(a11: &str, mu: f64) -> OperatorSpec {
        let drift = validate_blocks(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            &[1, 1],
        )
        .unwrap();
        let field = CoefficientField::parse(2, &[vec![a11]], &["0"], "0", 1.0).unwrap();
        OperatorSpec::new(drift, Arc::new(field), mu).unwrap()
    }

    #[test]
    fn eval_constant_field() {
        let f = CoefficientField::constant_diagonal(3, 2, 1.0, 0.0);
        let v = eval_field(&f, 0.3, &[1.0, -2.0, 5.0]).unwrap();
        assert_eq!(v.a, DMatrix::identity(2, 2));
        assert_eq!(v.drift, DVector::zeros(2));
        assert_eq!(v.c, 0.0);
    }

    #[test]
    fn eval_variable_field() {
        let f = CoefficientField::parse(2, &[vec!["1+0.5*sin(x2)"]], &["0"], "0", 1.0).unwrap();
        let v = f.eval(0.0, &[0.0, FRAC_PI_2]).unwrap();
        assert_eq!(v.a[(0, 0)], 1.5);
        let bad = CoefficientField::parse(2, &[vec!["1/x1"]], &["0"], "0", 1.0).unwrap();
        let err = bad.eval(0.0, &[0.0, 1.0]).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::DivisionByZero);
        assert_eq!(err.entry, "a11");
        assert_eq!(err.x, vec![0.0, 1.0]);
    }

    #[test]
    fn symmetric_by_construction() {
        let f = CoefficientField::parse(
            3,
            &[vec!["2", "0.3*cos(x3)"], vec!["0.3*cos(x3)", "2+t"]],
            &["0", "0"],
            "0",
            1.0,
        )
        .unwrap();
        let v = f.eval(0.5, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(v.a, v.a.transpose());
        assert!(matches!(
            CoefficientField::parse(
                3,
                &[vec!["2", "x3"], vec!["x2", "2"]],
                &["0", "0"],
                "0",
                1.0
            ),
            Err(FieldError::Asymmetric { i: 1, j: 2 })
        ));
    }

    #[test]
    fn check_assumptions_matches_lattice_oracle() {
        let spec = prototype_spec("1+0.5*sin(x2)", 2.0);
        let bx = ValidationBox::default_for(2);
        let rep = check_assumptions(&spec, &bx, 33).unwrap();
        // independent oracle: a11 only depends on x2, sampled at the same 33 nodes
        let (lo, hi) = (0..33)
            .map(|k| 1.0 + 0.5 * (-5.0 + 10.0 * k as f64 / 32.0f64).sin())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        assert_eq!(rep.min_eigenvalue, lo);
        assert_eq!(rep.max_eigenvalue, hi);
        assert_eq!(rep.mu_hat, (1.0 / lo).max(hi));
        assert!((rep.mu_hat - 2.0).abs() < 1e-3);
    }

    #[test]
    fn check_assumptions_rejects_degenerate() {
        let spec = prototype_spec("sin(x2)", 2.0);
        let err = check_assumptions(&spec, &ValidationBox::default_for(2), 33).unwrap_err();
        assert!(matches!(err, AssumptionError::NotPositive { .. }));
    }

    #[test]
    fn identity_has_unit_mu() {
        let spec = prototype_spec("1", 1.0);
        let rep = check_assumptions(&spec, &ValidationBox::default_for(2), 5).unwrap();
        assert_eq!(rep.mu_hat, 1.0);
    }

    #[test]
    fn bound_and_ellipticity_violations() {
        let drift = validate_blocks(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            &[1, 1],
        )
        .unwrap();
        let field = CoefficientField::parse(2, &[vec!["1"]], &["2*cos(x2)"], "0", 1.0).unwrap();
        let spec = OperatorSpec::new(drift.clone(), Arc::new(field), 1.0).unwrap();
        assert!(matches!(
            check_assumptions(&spec, &ValidationBox::default_for(2), 9),
            Err(AssumptionError::BoundViolation { which: "a_i", .. })
        ));
        let spec = prototype_spec("3", 2.0);
        assert!(matches!(
            check_assumptions(&spec, &ValidationBox::default_for(2), 3),
            Err(AssumptionError::Ellipticity { .. })
        ));
        assert!(matches!(
            check_assumptions(&spec, &ValidationBox::default_for(2), 1),
            Err(AssumptionError::BadBox)
        ));
    }

    #[test]
    fn mu_hat_is_monotone_under_nested_box_growth() {
        let spec = prototype_spec("1 + 0.5*sin(x2)*cos(t + x1)", 2.0);
        let n = 9;
        let base = ValidationBox {
            t: (0.0, 0.5),
            x: vec![(-1.0, 1.0), (-0.5, 0.5)],
        };
        let mut prev = check_assumptions(&spec, &base, n).unwrap().mu_hat;
        // grow each axis by k spacings on both ends, keeping the old nodes on the new lattice
        for k in 1..4usize {
            let grow = |(lo, hi): (f64, f64)| {
                let h = (hi - lo) / (n - 1) as f64;
                (lo - h * k as f64, hi + h * k as f64)
            };
            let bigger = ValidationBox {
                t: grow(base.t),
                x: base.x.iter().map(|&a| grow(a)).collect(),
            };
            let mu = check_assumptions(&spec, &bigger, n + 2 * k).unwrap().mu_hat;
            assert!(mu >= prev, "k = {k}: {mu} < {prev}");
            prev = mu;
        }
    }
}
