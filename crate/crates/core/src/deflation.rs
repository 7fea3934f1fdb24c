//! Deflation operators.
//!
//! Given known roots `r_1..r_k`, the deflated residual is `G(z) = α(z) F(z)`
//! with the scalar factor
//!
//! ```text
//! α(z) = ∏_i ( 1/‖z − r_i‖^p + σ )
//! ```
//!
//! `σ = 0` is the classical norm deflation, `σ = 1` the shifted operator that
//! tends to the identity far from every known root. Because `α` is scalar,
//! the Newton derivative of `G` is `α H_F + F ∇αᵀ`: a rank-one correction of
//! a scaled `H_F`, whatever the number of deflated roots.

use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{self, DenseMatrix, LinalgError};

/// Distance below which `z` counts as sitting on a deflated root.
pub const DEFAULT_SINGULARITY_GUARD: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeflationError {
    #[error("iterate is within {distance:e} of deflated root {index}")]
    AtDeflatedRoot { index: usize, distance: f64 },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("deflation power must be >= 1, got {0}")]
    InvalidPower(f64),
    #[error("deflation shift must be >= 0, got {0}")]
    InvalidShift(f64),
    #[error("norm weight is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("root coincides with already deflated root {index} (distance {distance:e})")]
    DuplicateRoot { index: usize, distance: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The norm measuring distance to deflated roots.
#[derive(Debug, Clone)]
pub enum NormSpec {
    Euclidean,
    /// `‖v‖_W = √(vᵀ W v)` for a symmetric positive definite `W`, e.g. a
    /// finite element mass matrix giving the discrete L² norm.
    WeightedQuadratic(Arc<WeightMatrix>),
}

/// A validated SPD weight with its bandwidth cached for fast products.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    matrix: DenseMatrix,
    bandwidth: usize,
}

impl WeightMatrix {
    /// Checks symmetry and positive definiteness (by Cholesky).
    pub fn new(matrix: DenseMatrix) -> Result<Self, DeflationError> {
        if !matrix.is_square() {
            return Err(DeflationError::NotPositiveDefinite);
        }
        let n = matrix.rows();
        let bandwidth = matrix.bandwidth();
        let scale = matrix.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in i + 1..(i + bandwidth + 1).min(n) {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale {
                    return Err(DeflationError::NotPositiveDefinite);
                }
            }
        }
        if !banded_cholesky_ok(&matrix, bandwidth) {
            return Err(DeflationError::NotPositiveDefinite);
        }
        Ok(Self { matrix, bandwidth })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.matrix.rows();
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(self.bandwidth);
                let hi = (i + self.bandwidth + 1).min(n);
                linalg::dot(&self.matrix.row(i)[lo..hi], &v[lo..hi])
            })
            .collect()
    }
}

fn banded_cholesky_ok(a: &DenseMatrix, bw: usize) -> bool {
    let n = a.rows();
    // Lower factor stored densely within the band; fine for the sizes used here.
    let mut l = vec![0.0; n * (bw + 1)];
    let idx = |i: usize, j: usize| i * (bw + 1) + (j + bw - i);
    for i in 0..n {
        let jlo = i.saturating_sub(bw);
        for j in jlo..=i {
            let mut s = a[(i, j)];
            let klo = jlo.max(j.saturating_sub(bw));
            for k in klo..j {
                s -= l[idx(i, k)] * l[idx(j, k)];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return false;
                }
                l[idx(i, i)] = s.sqrt();
            } else {
                l[idx(i, j)] = s / l[idx(j, j)];
            }
        }
    }
    true
}

impl NormSpec {
    pub fn weighted(matrix: DenseMatrix) -> Result<Self, DeflationError> {
        Ok(Self::WeightedQuadratic(Arc::new(WeightMatrix::new(
            matrix,
        )?)))
    }

    /// Returns `(‖v‖, W v)` (with `W = I` for the Euclidean norm).
    pub fn norm_and_weighted(&self, v: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Self::Euclidean => (linalg::norm2(v), v.to_vec()),
            Self::WeightedQuadratic(w) => {
                let wv = w.apply(v);
                (linalg::dot(v, &wv).max(0.0).sqrt(), wv)
            }
        }
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        match self {
            Self::Euclidean => linalg::norm2(v),
            Self::WeightedQuadratic(_) => self.norm_and_weighted(v).0,
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.norm(&linalg::sub(a, b))
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Euclidean => None,
            Self::WeightedQuadratic(w) => Some(w.matrix.rows()),
        }
    }
}

/// Known roots plus the operator parameters `p` and `σ`.
#[derive(Debug, Clone)]
pub struct DeflationState {
    roots: Vec<Vec<f64>>,
    power: f64,
    shift: f64,
    norm: NormSpec,
    guard: f64,
}

impl Default for DeflationState {
    fn default() -> Self {
        Self {
            roots: Vec::new(),
            power: 2.0,
            shift: 1.0,
            norm: NormSpec::Euclidean,
            guard: DEFAULT_SINGULARITY_GUARD,
        }
    }
}

impl DeflationState {
    pub fn new(power: f64, shift: f64, norm: NormSpec) -> Result<Self, DeflationError> {
        if !(power >= 1.0) || !power.is_finite() {
            return Err(DeflationError::InvalidPower(power));
        }
        if !(shift >= 0.0) || !shift.is_finite() {
            return Err(DeflationError::InvalidShift(shift));
        }
        Ok(Self {
            power,
            shift,
            norm,
            ..Self::default()
        })
    }

    pub fn with_guard(mut self, guard: f64) -> Self {
        self.guard = guard;
        self
    }

    pub fn roots(&self) -> &[Vec<f64>] {
        &self.roots
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn norm(&self) -> &NormSpec {
        &self.norm
    }

    pub fn guard(&self) -> f64 {
        self.guard
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Appends a root; it must be farther than the guard from every known root.
    pub fn push_root(&mut self, root: Vec<f64>) -> Result<(), DeflationError> {
        if let Some(first) = self.roots.first() {
            if first.len() != root.len() {
                return Err(DeflationError::DimensionMismatch {
                    expected: first.len(),
                    found: root.len(),
                });
            }
        }
        if let Some(n) = self.norm.dim() {
            if n != root.len() {
                return Err(DeflationError::DimensionMismatch {
                    expected: n,
                    found: root.len(),
                });
            }
        }
        for (index, r) in self.roots.iter().enumerate() {
            let distance = self.norm.distance(&root, r);
            if distance <= self.guard {
                return Err(DeflationError::DuplicateRoot { index, distance });
            }
        }
        self.roots.push(root);
        Ok(())
    }

    /// Per-root `(m_i, W(z − r_i), ‖z − r_i‖)` with `m_i = ‖z − r_i‖^{-p} + σ`.
    fn factors(&self, z: &[f64]) -> Result<Vec<(f64, Vec<f64>, f64)>, DeflationError> {
        self.roots
            .iter()
            .enumerate()
            .map(|(index, r)| {
                if r.len() != z.len() {
                    return Err(DeflationError::DimensionMismatch {
                        expected: r.len(),
                        found: z.len(),
                    });
                }
                let diff = linalg::sub(z, r);
                let (distance, wdiff) = self.norm.norm_and_weighted(&diff);
                if !(distance > self.guard) {
                    return Err(DeflationError::AtDeflatedRoot { index, distance });
                }
                Ok((distance.powf(-self.power) + self.shift, wdiff, distance))
            })
            .collect()
    }

    /// `α(z) = ∏_i (‖z − r_i‖^{-p} + σ)`; `1` with no roots.
    pub fn factor(&self, z: &[f64]) -> Result<f64, DeflationError> {
        Ok(self.factors(z)?.iter().map(|(m, _, _)| m).product())
    }

    /// `∇α(z)`.
    pub fn gradient(&self, z: &[f64]) -> Result<Vec<f64>, DeflationError> {
        Ok(self.factor_and_gradient(z)?.1)
    }

    pub fn factor_and_gradient(&self, z: &[f64]) -> Result<(f64, Vec<f64>), DeflationError> {
        let parts = self.factors(z)?;
        let mut grad = vec![0.0; z.len()];
        let alpha: f64 = parts.iter().map(|(m, _, _)| m).product();
        for (i, (_, wdiff, d)) in parts.iter().enumerate() {
            let others: f64 = parts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, (m, _, _))| m)
                .product();
            let coef = -self.power * others / d.powf(self.power + 2.0);
            linalg::axpy(coef, wdiff, &mut grad);
        }
        Ok((alpha, grad))
    }

    /// `G(z) = α(z) F(z)`.
    pub fn deflated_residual(
        &self,
        f_value: &[f64],
        z: &[f64],
    ) -> Result<Vec<f64>, DeflationError> {
        let alpha = self.factor(z)?;
        Ok(f_value.iter().map(|v| alpha * v).collect())
    }

    /// The pieces of `H_G = α H_F + u wᵀ`: returns `(α, u = F(z), w = ∇α(z))`.
    pub fn deflated_derivative_parts(
        &self,
        f_value: &[f64],
        z: &[f64],
    ) -> Result<(f64, Vec<f64>, Vec<f64>), DeflationError> {
        let (alpha, grad) = self.factor_and_gradient(z)?;
        Ok((alpha, f_value.to_vec(), grad))
    }

    /// Dense `α H_F + F ∇αᵀ`, for checks and small problems.
    pub fn assemble_deflated_derivative(
        &self,
        f_value: &[f64],
        h_f: &DenseMatrix,
        z: &[f64],
    ) -> Result<DenseMatrix, DeflationError> {
        let (alpha, u, w) = self.deflated_derivative_parts(f_value, z)?;
        let mut h = h_f.clone();
        h.scale(alpha);
        h.add_outer(&u, &w);
        Ok(h)
    }
}

/// `α(z)` for `state`.
pub fn deflation_factor(state: &DeflationState, z: &[f64]) -> Result<f64, DeflationError> {
    state.factor(z)
}

/// `∇α(z)` for `state`.
pub fn deflation_gradient(state: &DeflationState, z: &[f64]) -> Result<Vec<f64>, DeflationError> {
    state.gradient(z)
}

pub fn deflated_residual(
    state: &DeflationState,
    f_value: &[f64],
    z: &[f64],
) -> Result<Vec<f64>, DeflationError> {
    state.deflated_residual(f_value, z)
}

pub fn deflated_derivative_parts(
    state: &DeflationState,
    f_value: &[f64],
    z: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>), DeflationError> {
    state.deflated_derivative_parts(f_value, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(roots: &[&[f64]], p: f64, s: f64) -> DeflationState {
        let mut st = DeflationState::new(p, s, NormSpec::Euclidean).unwrap();
        for r in roots {
            st.push_root(r.to_vec()).unwrap();
        }
        st
    }

    fn central_fd_gradient(st: &DeflationState, z: &[f64], h: f64) -> Vec<f64> {
        (0..z.len())
            .map(|j| {
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[j] += h;
                zm[j] -= h;
                (st.factor(&zp).unwrap() - st.factor(&zm).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn single_root_unit_distance() {
        let st = state(&[&[0.0, 0.0]], 2.0, 1.0);
        assert_eq!(st.factor(&[1.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn two_roots_multiply() {
        let st = state(&[&[0.0, 0.0], &[2.0, 0.0]], 2.0, 1.0);
        assert_eq!(st.factor(&[1.0, 0.0]).unwrap(), 4.0);
    }

    #[test]
    fn shifted_factor_tends_to_one() {
        let st = state(&[&[0.0, 0.0]], 2.0, 1.0);
        let a = st.factor(&[1e6, 0.0]).unwrap();
        assert!((a - 1.0).abs() < 1e-11);
        let unshifted = state(&[&[0.0, 0.0]], 2.0, 0.0);
        assert!(unshifted.factor(&[1e6, 0.0]).unwrap() < 1e-11);
    }

    #[test]
    fn empty_state_is_identity() {
        let st = DeflationState::default();
        assert_eq!(st.factor(&[3.0]).unwrap(), 1.0);
        assert_eq!(st.gradient(&[3.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            st.deflated_residual(&[1.5, -2.0], &[0.0, 0.0]).unwrap(),
            vec![1.5, -2.0]
        );
        let (a, u, w) = st
            .deflated_derivative_parts(&[0.0, 0.0], &[1.0, 1.0])
            .unwrap();
        assert_eq!((a, u, w), (1.0, vec![0.0, 0.0], vec![0.0, 0.0]));
    }

    #[test]
    fn guard_rejects_known_root() {
        let st = state(&[&[1.0, 2.0]], 2.0, 1.0);
        assert!(matches!(
            st.factor(&[1.0, 2.0]),
            Err(DeflationError::AtDeflatedRoot { index: 0, .. })
        ));
        let mut st = st;
        assert!(matches!(
            st.push_root(vec![1.0, 2.0]),
            Err(DeflationError::DuplicateRoot { .. })
        ));
    }

    #[test]
    fn invalid_parameters() {
        assert!(matches!(
            DeflationState::new(0.5, 1.0, NormSpec::Euclidean),
            Err(DeflationError::InvalidPower(_))
        ));
        assert!(matches!(
            DeflationState::new(2.0, -1.0, NormSpec::Euclidean),
            Err(DeflationError::InvalidShift(_))
        ));
    }

    #[test]
    fn zero_residual_stays_zero() {
        let st = state(&[&[0.0, 0.0]], 2.0, 1.0);
        assert_eq!(
            st.deflated_residual(&[0.0, 0.0], &[1.0, 1.0]).unwrap(),
            vec![0.0, 0.0]
        );
        let (_, u, _) = st
            .deflated_derivative_parts(&[0.0, 0.0], &[1.0, 1.0])
            .unwrap();
        assert!(u.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_matches_fd_single_root() {
        let st = state(&[&[0.5, -0.2, 1.0]], 2.0, 1.0);
        let z = [1.1, 0.3, 0.2];
        let g = st.gradient(&z).unwrap();
        let fd = central_fd_gradient(&st, &z, 1e-6);
        let err = linalg::norm2(&linalg::sub(&g, &fd)) / linalg::norm2(&g);
        assert!(err <= 1e-7, "relative error {err}");
    }

    #[test]
    fn gradient_symmetric_under_root_swap() {
        let a = [1.0, 0.0];
        let b = [-1.0, 0.0];
        let z = [0.0, 0.7];
        let g1 = state(&[&a, &b], 2.0, 1.0).gradient(&z).unwrap();
        let g2 = state(&[&b, &a], 2.0, 1.0).gradient(&z).unwrap();
        // on the bisector the component along r1 - r2 vanishes
        assert!(g1[0].abs() < 1e-14);
        assert!((g1[1] - g2[1]).abs() < 1e-14);
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        let mut b = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        let mut w = b.transpose().matmul(&b);
        for i in 0..n {
            w[(i, i)] += 1.0;
        }
        w
    }

    #[test]
    fn gradient_matches_fd_random_both_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 4;
        let w = random_spd(&mut rng, n);
        for norm in [NormSpec::Euclidean, NormSpec::weighted(w).unwrap()] {
            for s in [0.0, 1.0] {
                for _ in 0..20 {
                    let mut st = DeflationState::new(2.0, s, norm.clone()).unwrap();
                    for _ in 0..2 {
                        st.push_root((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                            .unwrap();
                    }
                    let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    if st.roots().iter().any(|r| norm.distance(&z, r) < 0.3) {
                        continue;
                    }
                    let g = st.gradient(&z).unwrap();
                    let fd = central_fd_gradient(&st, &z, 1e-5);
                    let err = linalg::norm2(&linalg::sub(&g, &fd)) / linalg::norm2(&g);
                    assert!(err <= 1e-7, "relative error {err}");
                }
            }
        }
    }

    #[test]
    fn weighted_norm_rejects_indefinite() {
        let w = DenseMatrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(matches!(
            NormSpec::weighted(w),
            Err(DeflationError::NotPositiveDefinite)
        ));
        let w = DenseMatrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]);
        assert!(matches!(
            NormSpec::weighted(w),
            Err(DeflationError::NotPositiveDefinite)
        ));
    }

    #[test]
    fn weighted_identity_matches_euclidean() {
        let norm = NormSpec::weighted(DenseMatrix::identity(3)).unwrap();
        let v = [1.0, -2.0, 2.0];
        assert!((norm.norm(&v) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn far_field_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let st = state(&[&[0.0, 0.0, 0.0], &[1.0, 1.0, 0.0]], 2.0, 1.0);
        for _ in 0..50 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let dmin = st
                .roots()
                .iter()
                .map(|r| linalg::norm2(&linalg::sub(&z, r)))
                .fold(f64::INFINITY, f64::min);
            if dmin < 2.0 {
                continue;
            }
            let f: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = st.deflated_residual(&f, &z).unwrap();
            let rel = linalg::norm2(&linalg::sub(&g, &f)) / linalg::norm2(&f);
            assert!(rel <= 2.0 * 2.0 / dmin.powi(2), "rel {rel} dmin {dmin}");
        }
    }
}
