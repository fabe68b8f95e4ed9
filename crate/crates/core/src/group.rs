//! Block structure of the drift matrix and the intrinsic Lie group on `R × R^d`.
//!
//! Points are pairs `(t, x)`. The group law is
//!
//! ```text
//! (τ, ξ) ∘ (t, x) = (t + τ, x + e^{tB} ξ)
//! ```
//!
//! and the dilations act as `δ_r(t, x) = (r² t, D(r) x)` where `D(r)` multiplies the
//! coordinates of block `i` by `r^{2i+1}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{expm, numerical_rank, van_loan_gramian};

/// Relative singular-value threshold separating structural zeros from round-off.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("block structure is empty")]
    EmptyBlocks,
    #[error("block sizes must be positive")]
    ZeroBlock,
    #[error("block sizes must be non-increasing: m{index} = {current} > m{prev_index} = {previous}", prev_index = index - 1)]
    NonMonotoneBlocks {
        index: usize,
        previous: usize,
        current: usize,
    },
    #[error("matrix is {rows}x{cols} but the block sizes sum to {dim}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        dim: usize,
    },
    #[error("B{block} rank deficient: rank {rank} < {expected}")]
    RankDeficient {
        block: usize,
        rank: usize,
        expected: usize,
    },
    #[error("entry ({row}, {col}) lies below the first subdiagonal block but is {value}")]
    NonzeroBelowSubdiagonal { row: usize, col: usize, value: f64 },
    #[error("dilation factor must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("point has dimension {got}, expected {expected}")]
    PointDimension { got: usize, expected: usize },
}

/// Block sizes `m₀ ≥ m₁ ≥ … ≥ m_ν ≥ 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStructure {
    sizes: Vec<usize>,
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self, GroupError> {
        if sizes.is_empty() {
            return Err(GroupError::EmptyBlocks);
        }
        if sizes.contains(&0) {
            return Err(GroupError::ZeroBlock);
        }
        for i in 1..sizes.len() {
            if sizes[i] > sizes[i - 1] {
                return Err(GroupError::NonMonotoneBlocks {
                    index: i,
                    previous: sizes[i - 1],
                    current: sizes[i],
                });
            }
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Number of subdiagonal blocks `ν`.
    pub fn nu(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Number of diffused coordinates `m₀`.
    pub fn m0(&self) -> usize {
        self.sizes[0]
    }

    /// First coordinate of each block.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.sizes.len());
        let mut acc = 0;
        for &m in &self.sizes {
            out.push(acc);
            acc += m;
        }
        out
    }

    /// Block index of each coordinate.
    pub fn block_of_coords(&self) -> Vec<usize> {
        self.sizes
            .iter()
            .enumerate()
            .flat_map(|(i, &m)| std::iter::repeat_n(i, m))
            .collect()
    }

    /// Dilation degree `2i + 1` of each coordinate.
    pub fn degrees(&self) -> Vec<i32> {
        self.block_of_coords()
            .into_iter()
            .map(|b| 2 * b as i32 + 1)
            .collect()
    }

    /// `Q = m₀ + 3m₁ + … + (2ν+1)m_ν`.
    pub fn homogeneous_dimension(&self) -> usize {
        self.sizes
            .iter()
            .enumerate()
            .map(|(i, &m)| (2 * i + 1) * m)
            .sum()
    }
}

/// Convenience wrapper around [`BlockStructure::homogeneous_dimension`].
pub fn homogeneous_dimension(sizes: &[usize]) -> Result<usize, GroupError> {
    Ok(BlockStructure::new(sizes.to_vec())?.homogeneous_dimension())
}

/// A drift matrix that satisfies the block condition.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftMatrix {
    b: DMatrix<f64>,
    structure: BlockStructure,
    homogeneous: bool,
}

/// Checks the block form of `b` against the sizes `m` and returns the validated matrix.
pub fn validate_blocks(b: DMatrix<f64>, sizes: &[usize]) -> Result<DriftMatrix, GroupError> {
    let structure = BlockStructure::new(sizes.to_vec())?;
    DriftMatrix::new(b, structure)
}

impl DriftMatrix {
    pub fn new(b: DMatrix<f64>, structure: BlockStructure) -> Result<Self, GroupError> {
        let d = structure.dim();
        if b.nrows() != d || b.ncols() != d {
            return Err(GroupError::DimensionMismatch {
                rows: b.nrows(),
                cols: b.ncols(),
                dim: d,
            });
        }
        let blocks = structure.block_of_coords();
        for r in 0..d {
            for c in 0..d {
                if blocks[r] > blocks[c] + 1 && b[(r, c)] != 0.0 {
                    return Err(GroupError::NonzeroBelowSubdiagonal {
                        row: r,
                        col: c,
                        value: b[(r, c)],
                    });
                }
            }
        }
        let offsets = structure.offsets();
        let sizes = structure.sizes();
        for i in 1..sizes.len() {
            let block = b
                .view((offsets[i], offsets[i - 1]), (sizes[i], sizes[i - 1]))
                .into_owned();
            let rank = numerical_rank(&block, RANK_TOL);
            if rank < sizes[i] {
                return Err(GroupError::RankDeficient {
                    block: i,
                    rank,
                    expected: sizes[i],
                });
            }
        }
        let homogeneous = (0..d)
            .flat_map(|r| (0..d).map(move |c| (r, c)))
            .all(|(r, c)| blocks[r] == blocks[c] + 1 || b[(r, c)] == 0.0);
        Ok(Self {
            b,
            structure,
            homogeneous,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn dim(&self) -> usize {
        self.structure.dim()
    }

    /// True iff every ∗-block is zero.
    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    /// `e^{tB}`.
    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        expm(&(&self.b * t))
    }

    /// The drift of the dilated operator, `λ² D(1/λ) B D(λ)`.
    ///
    /// The ∗-block in block position `(i, j)` picks up `λ^{2(j-i+1)}`; subdiagonal blocks are
    /// unchanged, so the result satisfies the block condition again.
    pub fn dilated(&self, lambda: f64) -> Result<DriftMatrix, GroupError> {
        if !(lambda > 0.0) {
            return Err(GroupError::NonPositiveScale(lambda));
        }
        let blocks = self.structure.block_of_coords();
        let d = self.dim();
        let mut out = self.b.clone();
        for r in 0..d {
            for c in 0..d {
                let power = 2 * (1 + blocks[c] as i32 - blocks[r] as i32);
                if power != 0 {
                    out[(r, c)] *= lambda.powi(power);
                }
            }
        }
        Ok(Self {
            b: out,
            structure: self.structure.clone(),
            homogeneous: self.homogeneous,
        })
    }
}

/// A point `(t, x)` of the space-time group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub t: f64,
    pub x: DVector<f64>,
}

impl GroupElement {
    pub fn new(t: f64, x: impl Into<Vec<f64>>) -> Self {
        Self {
            t,
            x: DVector::from_vec(x.into()),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            t: 0.0,
            x: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// `a ∘ b = (b.t + a.t, b.x + e^{b.t B} a.x)`.
pub fn group_compose(a: &GroupElement, b: &GroupElement, drift: &DriftMatrix) -> GroupElement {
    GroupElement {
        t: b.t + a.t,
        x: &b.x + drift.exp(b.t) * &a.x,
    }
}

/// `(t, x)⁻¹ = (-t, -e^{-tB} x)`.
pub fn group_inverse(z: &GroupElement, drift: &DriftMatrix) -> GroupElement {
    GroupElement {
        t: -z.t,
        x: -(drift.exp(-z.t) * &z.x),
    }
}

/// Dilations `δ_r` together with the homogeneous dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DilationFamily {
    structure: BlockStructure,
    q: usize,
    degrees: Vec<i32>,
}

impl DilationFamily {
    pub fn new(structure: BlockStructure) -> Self {
        let q = structure.homogeneous_dimension();
        let degrees = structure.degrees();
        Self {
            structure,
            q,
            degrees,
        }
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    /// Homogeneous dimension `Q`.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.degrees.len()
    }

    /// Diagonal of `D(r)`.
    pub fn diag(&self, r: f64) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.degrees.iter().map(|&k| r.powi(k)))
    }

    pub fn matrix(&self, r: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diag(r))
    }

    /// `D(r) x`.
    pub fn scale(&self, x: &DVector<f64>, r: f64) -> DVector<f64> {
        x.component_mul(&self.diag(r))
    }

    /// `δ_r z = (r² t, D(r) x)`.
    pub fn dilate(&self, z: &GroupElement, r: f64) -> Result<GroupElement, GroupError> {
        if !(r > 0.0) {
            return Err(GroupError::NonPositiveScale(r));
        }
        if z.dim() != self.dim() {
            return Err(GroupError::PointDimension {
                got: z.dim(),
                expected: self.dim(),
            });
        }
        Ok(GroupElement {
            t: r * r * z.t,
            x: self.scale(&z.x, r),
        })
    }
}

/// Free-function form of [`DilationFamily::dilate`].
pub fn dilate(z: &GroupElement, r: f64, fam: &DilationFamily) -> Result<GroupElement, GroupError> {
    fam.dilate(z, r)
}

/// The `d × m₀` matrix `σ = [I; 0]`.
pub fn sigma(d: usize, m0: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, m0, |r, c| if r == c { 1.0 } else { 0.0 })
}

/// Kalman rank test `rank[σ, Bσ, …, B^{d-1}σ] = d`, confirmed by `C(1)` being positive definite.
///
/// Accepts any square matrix, not only ones that passed [`validate_blocks`].
pub fn hypoellipticity_check(b: &DMatrix<f64>, m0: usize) -> bool {
    let d = b.nrows();
    if m0 == 0 || m0 > d || !b.is_square() {
        return false;
    }
    let s = sigma(d, m0);
    let mut columns = DMatrix::<f64>::zeros(d, d * m0);
    let mut power = s.clone();
    for k in 0..d {
        columns.view_mut((0, k * m0), (d, m0)).copy_from(&power);
        power = b * power;
    }
    let kalman = numerical_rank(&columns, RANK_TOL) == d;
    kalman && covariance_min_eigenvalue(b, m0) > RANK_TOL
}

/// Smallest eigenvalue of `C(1)` relative to its largest one.
pub fn covariance_min_eigenvalue(b: &DMatrix<f64>, m0: usize) -> f64 {
    let d = b.nrows();
    let s = sigma(d, m0);
    let c = van_loan_gramian(b, &(&s * s.transpose()), 1.0);
    let eig = c.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if max <= 0.0 {
        0.0
    } else {
        min / max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CylinderKind {
    /// `R₁ = {|t| < 1, |x| < 1}`.
    Full,
    /// `R₁⁺ = {0 < t < 1, |x| < 1}`.
    Forward,
}

/// Intrinsic cylinder `R_r(z₀) = z₀ ∘ δ_r(R₁)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cylinder {
    pub center: GroupElement,
    pub radius: f64,
    pub kind: CylinderKind,
}

impl Cylinder {
    pub fn new(center: GroupElement, radius: f64, kind: CylinderKind) -> Result<Self, GroupError> {
        if !(radius > 0.0) {
            return Err(GroupError::NonPositiveScale(radius));
        }
        Ok(Self {
            center,
            radius,
            kind,
        })
    }

    /// Normalized coordinates `δ_{1/r}(z₀⁻¹ ∘ z)`.
    pub fn normalize(
        &self,
        z: &GroupElement,
        drift: &DriftMatrix,
        fam: &DilationFamily,
    ) -> GroupElement {
        let rel = group_compose(&group_inverse(&self.center, drift), z, drift);
        fam.dilate(&rel, 1.0 / self.radius)
            .expect("cylinder radius is positive")
    }
}

/// Open-boundary membership test.
pub fn cylinder_contains(
    c: &Cylinder,
    z: &GroupElement,
    drift: &DriftMatrix,
    fam: &DilationFamily,
) -> bool {
    let n = c.normalize(z, drift, fam);
    let time_ok = match c.kind {
        CylinderKind::Full => n.t.abs() < 1.0,
        CylinderKind::Forward => n.t > 0.0 && n.t < 1.0,
    };
    time_ok && n.x.norm() < 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn prototype() -> DriftMatrix {
        validate_blocks(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            &[1, 1],
        )
        .unwrap()
    }

    fn kinetic3() -> DriftMatrix {
        // m = (1, 1, 1) chain with nonzero ∗-blocks
        validate_blocks(
            DMatrix::from_row_slice(3, 3, &[0.2, -0.3, 0.1, 1.0, 0.4, 0.5, 0.0, 2.0, -0.1]),
            &[1, 1, 1],
        )
        .unwrap()
    }

    #[test]
    fn validate_prototype_is_homogeneous() {
        assert!(prototype().is_homogeneous());
    }

    #[test]
    fn validate_rejects_zero_subdiagonal_block() {
        let err = validate_blocks(DMatrix::zeros(2, 2), &[1, 1]).unwrap_err();
        assert_eq!(
            err,
            GroupError::RankDeficient {
                block: 1,
                rank: 0,
                expected: 1
            }
        );
        assert!(err.to_string().contains("rank deficient"));
    }

    #[test]
    fn validate_nonzero_star_block_is_not_homogeneous() {
        let b = validate_blocks(
            DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 1.0, 0.0]),
            &[1, 1],
        )
        .unwrap();
        assert!(!b.is_homogeneous());
    }

    #[test]
    fn validate_rejects_bad_structures() {
        assert!(matches!(
            BlockStructure::new(vec![1, 2]),
            Err(GroupError::NonMonotoneBlocks { .. })
        ));
        let mut b = DMatrix::zeros(3, 3);
        b[(1, 0)] = 1.0;
        b[(2, 1)] = 1.0;
        b[(2, 0)] = 0.5;
        assert!(matches!(
            validate_blocks(b, &[1, 1, 1]),
            Err(GroupError::NonzeroBelowSubdiagonal { row: 2, col: 0, .. })
        ));
        assert!(matches!(
            validate_blocks(DMatrix::zeros(3, 3), &[1, 1]),
            Err(GroupError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn homogeneous_dimension_values() {
        assert_eq!(homogeneous_dimension(&[2]).unwrap(), 2);
        assert_eq!(homogeneous_dimension(&[1, 1]).unwrap(), 4);
        for n in 1..5 {
            assert_eq!(homogeneous_dimension(&[n, n]).unwrap(), 4 * n);
        }
        assert_eq!(homogeneous_dimension(&[2, 1, 1]).unwrap(), 2 + 3 + 5);
    }

    #[test]
    fn compose_identity_and_prototype_example() {
        let b = prototype();
        let z = GroupElement::new(2.0, vec![0.3, -1.1]);
        assert_eq!(group_compose(&GroupElement::identity(2), &z, &b), z);
        let tau = 0.7;
        let got = group_compose(&GroupElement::new(tau, vec![1.0, 0.0]), &z, &b);
        assert_eq!(got.t, 2.0 + tau);
        assert_eq!(got.x, DVector::from_vec(vec![0.3 + 1.0, -1.1 + 2.0]));
    }

    #[test]
    fn inverse_examples() {
        let b = prototype();
        assert_eq!(
            group_inverse(&GroupElement::identity(2), &b),
            GroupElement::identity(2)
        );
        let inv = group_inverse(&GroupElement::new(1.0, vec![1.0, 0.0]), &b);
        assert_eq!(inv.t, -1.0);
        assert!((inv.x[0] + 1.0).abs() < 1e-15 && (inv.x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dilation_examples() {
        let fam = DilationFamily::new(BlockStructure::new(vec![1, 1]).unwrap());
        let z = GroupElement::new(1.0, vec![1.0, 1.0]);
        assert_eq!(fam.dilate(&z, 1.0).unwrap(), z);
        let d2 = fam.dilate(&z, 2.0).unwrap();
        assert_eq!(d2, GroupElement::new(4.0, vec![2.0, 8.0]));
        assert!(fam.dilate(&z, 0.0).is_err());
        assert!(fam.dilate(&z, -1.0).is_err());
    }

    #[test]
    fn hypoellipticity_examples() {
        assert!(hypoellipticity_check(prototype().matrix(), 1));
        assert!(!hypoellipticity_check(&DMatrix::zeros(2, 2), 1));
        let b = DMatrix::from_row_slice(2, 2, &[3.0, -1.0, 2.0, 0.5]);
        assert!(hypoellipticity_check(&b, 2));
        assert!(hypoellipticity_check(&DMatrix::zeros(2, 2), 2));
    }

    #[test]
    fn cylinder_examples() {
        let b = prototype();
        let fam = DilationFamily::new(b.structure().clone());
        let unit = Cylinder::new(GroupElement::identity(2), 1.0, CylinderKind::Full).unwrap();
        assert!(cylinder_contains(
            &unit,
            &GroupElement::new(0.5, vec![0.5, 0.0]),
            &b,
            &fam
        ));
        assert!(!cylinder_contains(
            &unit,
            &GroupElement::new(1.0, vec![0.0, 0.0]),
            &b,
            &fam
        ));
        let z0 = GroupElement::new(1.0, vec![1.0, 0.0]);
        let small = Cylinder::new(z0.clone(), 0.5, CylinderKind::Full).unwrap();
        assert!(cylinder_contains(&small, &z0, &b, &fam));
        let fwd = Cylinder::new(z0.clone(), 0.5, CylinderKind::Forward).unwrap();
        assert!(!cylinder_contains(&fwd, &z0, &b, &fam));
    }

    #[test]
    fn dilated_drift_matches_matrix_product() {
        let b = kinetic3();
        let fam = DilationFamily::new(b.structure().clone());
        for lambda in [0.25, 0.5, 0.9, 2.0] {
            let direct =
                fam.matrix(1.0 / lambda) * b.matrix() * fam.matrix(lambda) * (lambda * lambda);
            let got = b.dilated(lambda).unwrap();
            assert!((got.matrix() - &direct).norm() < 1e-12);
            // subdiagonal blocks unchanged
            assert_eq!(got.matrix()[(1, 0)], 1.0);
            assert_eq!(got.matrix()[(2, 1)], 2.0);
        }
    }

    #[test]
    fn dilated_star_blocks_scale_by_block_position() {
        let b = kinetic3();
        let lambda: f64 = 0.6;
        let got = b.dilated(lambda).unwrap();
        // block (i, j), 1-based, scales by λ^{2(j-i+1)}
        for (i, j) in [(1usize, 1usize), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)] {
            let (r, c) = (i - 1, j - 1);
            let expected = b.matrix()[(r, c)] * lambda.powi(2 * (j as i32 - i as i32 + 1));
            assert!((got.matrix()[(r, c)] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn homogeneous_drift_scales_under_conjugation() {
        let b = validate_blocks(
            DMatrix::from_row_slice(
                4,
                4,
                &[
                    0.0, 0.0, 0.0, 0.0, //
                    0.0, 0.0, 0.0, 0.0, //
                    1.0, 0.5, 0.0, 0.0, //
                    -0.3, 2.0, 0.0, 0.0,
                ],
            ),
            &[2, 2],
        )
        .unwrap();
        assert!(b.is_homogeneous());
        let fam = DilationFamily::new(b.structure().clone());
        for r in [0.3, 1.7, 4.0] {
            let conj = fam.matrix(1.0 / r) * b.matrix() * fam.matrix(r);
            assert!((conj - b.matrix() / (r * r)).norm() < 1e-12);
            let conj = fam.matrix(r) * b.matrix() * fam.matrix(1.0 / r);
            assert!((conj - b.matrix() * (r * r)).norm() < 1e-12);
        }
    }

    fn arb_point(d: usize) -> impl Strategy<Value = GroupElement> {
        (-2.0..2.0f64, prop::collection::vec(-3.0..3.0f64, d))
            .prop_map(|(t, x)| GroupElement::new(t, x))
    }

    proptest! {
        #[test]
        fn group_laws_hold(a in arb_point(3), b in arb_point(3), c in arb_point(3)) {
            let drift = kinetic3();
            let left = group_compose(&group_compose(&a, &b, &drift), &c, &drift);
            let right = group_compose(&a, &group_compose(&b, &c, &drift), &drift);
            let scale = 1.0 + left.x.norm();
            prop_assert!((left.t - right.t).abs() < 1e-12 * (1.0 + left.t.abs()));
            prop_assert!((&left.x - &right.x).norm() < 1e-12 * scale);

            let e = group_compose(&a, &group_inverse(&a, &drift), &drift);
            prop_assert!(e.t.abs() < 1e-12);
            prop_assert!(e.x.norm() < 1e-12 * (1.0 + a.x.norm()));
        }

        #[test]
        fn dilations_form_a_semigroup(z in arb_point(3), r in 0.1..5.0f64, s in 0.1..5.0f64) {
            let fam = DilationFamily::new(BlockStructure::new(vec![1, 1, 1]).unwrap());
            let lhs = fam.dilate(&fam.dilate(&z, s).unwrap(), r).unwrap();
            let rhs = fam.dilate(&z, r * s).unwrap();
            prop_assert!((lhs.t - rhs.t).abs() <= 1e-12 * rhs.t.abs().max(1.0));
            for i in 0..3 {
                prop_assert!((lhs.x[i] - rhs.x[i]).abs() <= 1e-12 * rhs.x[i].abs().max(1.0));
            }
        }

        #[test]
        fn dilation_jacobian_is_r_to_the_q(r in 0.05..20.0f64) {
            let fam = DilationFamily::new(BlockStructure::new(vec![2, 1, 1]).unwrap());
            let jac: f64 = fam.diag(r).iter().product();
            let expected = r.powi(fam.q() as i32);
            prop_assert!((jac - expected).abs() <= 1e-12 * expected);
        }
    }

    #[test]
    fn kalman_agrees_with_covariance_on_random_valid_drifts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let shapes: [&[usize]; 4] = [&[1, 1], &[2, 1], &[1, 1, 1], &[2, 2]];
        for k in 0..20 {
            let sizes = shapes[k % shapes.len()];
            let structure = BlockStructure::new(sizes.to_vec()).unwrap();
            let d = structure.dim();
            let blocks = structure.block_of_coords();
            let b = DMatrix::from_fn(d, d, |r, c| {
                if blocks[r] > blocks[c] + 1 {
                    0.0
                } else if blocks[r] == blocks[c] + 1 {
                    rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 }
                } else {
                    rng.random_range(-1.0..1.0)
                }
            });
            let Ok(drift) = DriftMatrix::new(b, structure) else {
                continue;
            };
            let hyp = hypoellipticity_check(drift.matrix(), sizes[0]);
            let pd = covariance_min_eigenvalue(drift.matrix(), sizes[0]) > RANK_TOL;
            assert!(hyp && pd, "case {k}");
        }
    }
}
