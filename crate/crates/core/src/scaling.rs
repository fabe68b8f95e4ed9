//! Dilated and left-translated operators.
//!
//! For `λ ∈ (0, 1]` the dilated operator has coefficients
//!
//! ```text
//! A^(λ) = A ∘ δ_λ,   a^(λ) = λ a ∘ δ_λ,   c^(λ) = λ² c ∘ δ_λ,   B^(λ) = λ² D(1/λ) B D(λ)
//! ```
//!
//! and the translated operator composes every coefficient with `ℓ_ζ(z) = ζ ∘ z`. Both stay in
//! the same class as the original. The new evaluators wrap the old ones rather than
//! rewriting expressions, so they are exact.

use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

use crate::coeff::{CoeffValues, Coefficients, EvalError, OperatorSpec};
use crate::group::{group_compose, DilationFamily, DriftMatrix, GroupElement};
use crate::kernel::{GaussianKernel, KernelError};

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("scale must lie in (0, 1], got {0}")]
    BadLambda(f64),
    #[error("translation has dimension {got}, operator has {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("the scaled-kernel identity applies only to homogeneous drifts")]
    NotHomogeneous,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Coefficients `(A ∘ δ_λ, λ a ∘ δ_λ, λ² c ∘ δ_λ)`.
#[derive(Debug)]
pub struct DilatedCoefficients {
    base: Arc<dyn Coefficients>,
    lambda: f64,
    factors: DVector<f64>,
}

impl Coefficients for DilatedCoefficients {
    fn m0(&self) -> usize {
        self.base.m0()
    }

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn declared_bound(&self) -> f64 {
        self.base.declared_bound()
    }

    fn is_time_independent(&self) -> bool {
        self.base.is_time_independent()
    }

    fn eval(&self, t: f64, x: &[f64]) -> Result<CoeffValues, EvalError> {
        let y: Vec<f64> = x
            .iter()
            .zip(self.factors.iter())
            .map(|(v, f)| v * f)
            .collect();
        let mut v = self.base.eval(self.lambda * self.lambda * t, &y)?;
        v.drift *= self.lambda;
        v.c *= self.lambda * self.lambda;
        Ok(v)
    }
}

/// Coefficients composed with the left translation by `ζ`.
#[derive(Debug)]
pub struct TranslatedCoefficients {
    base: Arc<dyn Coefficients>,
    zeta: GroupElement,
    drift: DriftMatrix,
}

impl Coefficients for TranslatedCoefficients {
    fn m0(&self) -> usize {
        self.base.m0()
    }

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn declared_bound(&self) -> f64 {
        self.base.declared_bound()
    }

    fn is_time_independent(&self) -> bool {
        self.base.is_time_independent() && self.zeta.x.iter().all(|v| *v == 0.0)
    }

    fn eval(&self, t: f64, x: &[f64]) -> Result<CoeffValues, EvalError> {
        let z = GroupElement::new(t, x.to_vec());
        let moved = group_compose(&self.zeta, &z, &self.drift);
        self.base.eval(moved.t, moved.x.as_slice())
    }
}

/// An operator together with its dilation by `λ`.
#[derive(Debug, Clone)]
pub struct ScaledOperator {
    pub base: OperatorSpec,
    pub lambda: f64,
    /// The dilated operator, with drift `B^(λ)`.
    pub scaled: OperatorSpec,
}

impl ScaledOperator {
    pub fn drift(&self) -> &DriftMatrix {
        &self.scaled.drift
    }

    pub fn coefficients(&self) -> &Arc<dyn Coefficients> {
        &self.scaled.coeffs
    }
}

pub fn scale_operator(spec: &OperatorSpec, lambda: f64) -> Result<ScaledOperator, ScalingError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(ScalingError::BadLambda(lambda));
    }
    let fam = DilationFamily::new(spec.drift.structure().clone());
    let drift = spec.drift.dilated(lambda).expect("positive scale");
    let coeffs = DilatedCoefficients {
        base: spec.coeffs.clone(),
        lambda,
        factors: fam.diag(lambda),
    };
    let scaled = OperatorSpec::new(drift, Arc::new(coeffs), spec.mu)
        .expect("dimensions and mu are unchanged");
    Ok(ScaledOperator {
        base: spec.clone(),
        lambda,
        scaled,
    })
}

/// The operator `L ∘ ℓ_ζ`: same drift, `μ` and bound, coefficients read at `ζ ∘ (t, x)`.
pub fn translate_operator(
    spec: &OperatorSpec,
    zeta: &GroupElement,
) -> Result<OperatorSpec, ScalingError> {
    if zeta.dim() != spec.dim() {
        return Err(ScalingError::Dimension {
            got: zeta.dim(),
            expected: spec.dim(),
        });
    }
    let coeffs = TranslatedCoefficients {
        base: spec.coeffs.clone(),
        zeta: zeta.clone(),
        drift: spec.drift.clone(),
    };
    Ok(OperatorSpec::new(spec.drift.clone(), Arc::new(coeffs), spec.mu).expect("unchanged shape"))
}

/// `max |λ^Q Γ₀(δ_λ z; δ_λ ζ) − Γ₀(z; ζ)| / Γ₀(z; ζ)` over pairs `(z, ζ)` with `z.t < ζ.t`.
pub fn scaled_kernel_check(
    k: &GaussianKernel,
    lambda: f64,
    pairs: &[(GroupElement, GroupElement)],
) -> Result<f64, ScalingError> {
    if !k.drift().is_homogeneous() {
        return Err(ScalingError::NotHomogeneous);
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ScalingError::BadLambda(lambda));
    }
    let fam = k.dilations();
    let log_factor = fam.q() as f64 * lambda.ln();
    let mut worst = 0.0f64;
    for (z, w) in pairs {
        let base = k.log_density(z.t, z.x.as_slice(), w.t, w.x.as_slice())?;
        let dz = fam.dilate(z, lambda).expect("positive scale");
        let dw = fam.dilate(w, lambda).expect("positive scale");
        let scaled = k.log_density(dz.t, dz.x.as_slice(), dw.t, dw.x.as_slice())? + log_factor;
        worst = worst.max(((scaled - base).exp() - 1.0).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{check_assumptions, CoefficientField, ValidationBox};
    use crate::group::{group_inverse, validate_blocks, BlockStructure};
    use crate::linalg::rel_diff;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prototype_drift() -> DriftMatrix {
        validate_blocks(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            &[1, 1],
        )
        .unwrap()
    }

    fn spec(drift: DriftMatrix, a11: &str, a1: &str, c: &str, bound: f64, mu: f64) -> OperatorSpec {
        let field = CoefficientField::parse(drift.dim(), &[vec![a11]], &[a1], c, bound).unwrap();
        OperatorSpec::new(drift, Arc::new(field), mu).unwrap()
    }

    fn random_pairs(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<(GroupElement, GroupElement)> {
        (0..n)
            .map(|_| {
                let t = rng.random_range(-1.0..0.5);
                let big_t = t + rng.random_range(0.05..2.0);
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
                let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
                (GroupElement::new(t, x), GroupElement::new(big_t, y))
            })
            .collect()
    }

    #[test]
    fn homogeneous_drift_is_fixed() {
        let s = spec(prototype_drift(), "1", "0", "0", 1.0, 1.0);
        for lambda in [0.1, 0.5, 1.0] {
            let scaled = scale_operator(&s, lambda).unwrap();
            assert_eq!(scaled.drift().matrix(), s.drift.matrix());
        }
    }

    #[test]
    fn star_block_picks_up_lambda_squared() {
        let b = 0.7;
        let drift =
            validate_blocks(DMatrix::from_row_slice(2, 2, &[b, 0.0, 1.0, 0.0]), &[1, 1]).unwrap();
        let s = spec(drift, "1", "0", "0", 1.0, 1.0);
        let scaled = scale_operator(&s, 0.3).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.09 * b, 0.0, 1.0, 0.0]);
        assert!(rel_diff(scaled.drift().matrix(), &want) < 1e-15);
    }

    #[test]
    fn random_drifts_match_the_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let structure = BlockStructure::new(vec![2, 2, 1]).unwrap();
        let blocks = structure.block_of_coords();
        for _ in 0..20 {
            let b = DMatrix::from_fn(5, 5, |r, c| {
                if blocks[r] > blocks[c] + 1 {
                    0.0
                } else {
                    rng.random_range(-2.0..2.0)
                }
            });
            let Ok(drift) = DriftMatrix::new(b.clone(), structure.clone()) else {
                continue;
            };
            let lambda = rng.random_range(0.05..1.0);
            let fam = DilationFamily::new(structure.clone());
            let oracle = fam.matrix(1.0 / lambda) * &b * fam.matrix(lambda) * (lambda * lambda);
            let got = drift.dilated(lambda).unwrap();
            assert!(rel_diff(got.matrix(), &oracle) < 1e-13);
            for r in 0..5 {
                for c in 0..5 {
                    let power = 2 * (blocks[c] as i32 - blocks[r] as i32 + 1);
                    let want = b[(r, c)] * lambda.powi(power);
                    assert!((got.matrix()[(r, c)] - want).abs() <= 1e-13 * (1.0 + want.abs()));
                }
            }
        }
    }

    #[test]
    fn coefficients_are_dilated_and_damped() {
        let s = spec(
            prototype_drift(),
            "1 + 0.5*sin(x2)",
            "cos(t*x1)",
            "1",
            1.0,
            2.0,
        );
        let scaled = scale_operator(&s, 0.5).unwrap();
        let v = scaled.coefficients().eval(0.8, &[0.3, -0.6]).unwrap();
        assert!((v.c - 0.25).abs() < 1e-15);
        // δ_½(0.8, (0.3, −0.6)) = (0.2, (0.15, −0.075))
        assert!((v.a[(0, 0)] - (1.0 + 0.5 * (-0.075f64).sin())).abs() < 1e-15);
        assert!((v.drift[0] - 0.5 * (0.2f64 * 0.15).cos()).abs() < 1e-15);
        assert!(matches!(
            scale_operator(&s, 0.0),
            Err(ScalingError::BadLambda(_))
        ));
        assert!(matches!(
            scale_operator(&s, 1.5),
            Err(ScalingError::BadLambda(_))
        ));
    }

    #[test]
    fn dilation_stays_in_the_class() {
        let s = spec(
            prototype_drift(),
            "1 + 0.5*sin(x2)",
            "0.8*cos(x1)",
            "-0.9*tanh(t)",
            1.0,
            2.0,
        );
        let bx = ValidationBox::default_for(2);
        let base = check_assumptions(&s, &bx, 9).unwrap();
        for lambda in [0.1, 0.5, 0.9, 1.0] {
            let scaled = scale_operator(&s, lambda).unwrap();
            let r = check_assumptions(&scaled.scaled, &bx, 9).unwrap();
            assert!(r.mu_hat <= s.mu);
            assert!(r.sup_drift <= lambda * 0.8 + 1e-15);
            assert!(r.sup_c <= lambda * lambda * 0.9 + 1e-15);
            assert!(r.sup_drift <= base.sup_drift.max(0.8));
        }
    }

    #[test]
    fn translation_examples() {
        let s = spec(prototype_drift(), "1 + 0.5*sin(x2)", "0", "0", 1.0, 2.0);
        let same = translate_operator(&s, &GroupElement::identity(2)).unwrap();
        let p = [0.4, -1.2];
        assert_eq!(
            same.coeffs.eval(0.3, &p).unwrap(),
            s.coeffs.eval(0.3, &p).unwrap()
        );

        let xi = [0.7, 0.2];
        let moved = translate_operator(&s, &GroupElement::new(0.0, xi.to_vec())).unwrap();
        let t = 0.6;
        // (e^{tB} ξ)₂ = ξ₂ + t ξ₁ for the prototype
        let want = 1.0 + 0.5 * (p[1] + xi[1] + t * xi[0]).sin();
        let got = moved.coeffs.eval(t, &p).unwrap().a[(0, 0)];
        assert!((got - want).abs() < 1e-14);
        assert_eq!(moved.drift, s.drift);
        assert_eq!(moved.mu, s.mu);

        let constant = spec(prototype_drift(), "1.5", "0.2", "0.1", 1.0, 2.0);
        let zeta = GroupElement::new(-0.3, vec![2.0, -1.0]);
        let moved = translate_operator(&constant, &zeta).unwrap();
        assert_eq!(
            moved.coeffs.eval(0.1, &p).unwrap(),
            constant.coeffs.eval(0.1, &p).unwrap()
        );
        assert!(translate_operator(&constant, &GroupElement::identity(3)).is_err());
    }

    #[test]
    fn translation_round_trip() {
        let drift = validate_blocks(
            DMatrix::from_row_slice(2, 2, &[0.4, 0.0, 1.0, 0.0]),
            &[1, 1],
        )
        .unwrap();
        let s = spec(
            drift.clone(),
            "1 + 0.5*sin(x2 - t)",
            "0.3*cos(x1*x2)",
            "0.1*x1",
            10.0,
            2.0,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let zeta = GroupElement::new(
                rng.random_range(-1.0..1.0),
                vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            );
            let back = translate_operator(
                &translate_operator(&s, &zeta).unwrap(),
                &group_inverse(&zeta, &drift),
            )
            .unwrap();
            let t = rng.random_range(-1.0..1.0);
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let a = back.coeffs.eval(t, &x).unwrap();
            let b = s.coeffs.eval(t, &x).unwrap();
            assert!((&a.a - &b.a).amax() < 1e-12);
            assert!((&a.drift - &b.drift).amax() < 1e-12);
            assert!((a.c - b.c).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_kernel_identity() {
        let k = GaussianKernel::new(prototype_drift()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let pairs = random_pairs(&mut rng, 2, 100);
        assert_eq!(scaled_kernel_check(&k, 1.0, &pairs).unwrap(), 0.0);
        assert!(scaled_kernel_check(&k, 0.5, &pairs).unwrap() <= 1e-10);

        let heat =
            GaussianKernel::new(validate_blocks(DMatrix::zeros(3, 3), &[3]).unwrap()).unwrap();
        let pairs = random_pairs(&mut rng, 3, 100);
        assert!(scaled_kernel_check(&heat, 0.5, &pairs).unwrap() <= 1e-12);

        let star = validate_blocks(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 1.0, 0.0]),
            &[1, 1],
        )
        .unwrap();
        let k = GaussianKernel::new(star).unwrap();
        assert!(matches!(
            scaled_kernel_check(&k, 0.5, &pairs[..1]),
            Err(ScalingError::NotHomogeneous)
        ));
    }
}
