//! Semismooth reformulation of nonlinear and mixed complementarity problems.
//!
//! An MCP with residual `F`, lower bounds `l` and upper bounds `u` is turned
//! into a square nonsmooth system `Φ(z) = 0` by applying an NCP function
//! per index. `Φ` is semismooth and [`assemble_newton_derivative`] returns an
//! element of its generalized derivative.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::DenseMatrix;

pub type ResidualFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&[f64]) -> DenseMatrix + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReformulationError {
    #[error("residual contains non-finite values at index {index}")]
    NonFiniteResidual { index: usize },
    #[error("no derivative available: provide one or enable finite differences")]
    DerivativeUnavailable,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid bounds at index {index}: lower {lower} > upper {upper}")]
    InvalidBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },
}

/// Which NCP function to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum NcpFunctionKind {
    /// `√(a²+b²) − a − b`
    FischerBurmeister,
    /// `b − max(0, b − a)`, i.e. `min(a, b)`
    MinMax,
}

impl NcpFunctionKind {
    pub fn short_name(self) -> &'static str {
        match self {
            Self::FischerBurmeister => "fb",
            Self::MinMax => "mp",
        }
    }
}

impl fmt::Display for NcpFunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Evaluates the NCP function; zero iff `a ≥ 0, b ≥ 0, ab = 0`.
pub fn phi(kind: NcpFunctionKind, a: f64, b: f64) -> f64 {
    match kind {
        NcpFunctionKind::FischerBurmeister => a.hypot(b) - a - b,
        NcpFunctionKind::MinMax => b - (b - a).max(0.0),
    }
}

/// An element `(∂φ/∂a, ∂φ/∂b)` of the generalized derivative of `phi`.
///
/// At the Fischer–Burmeister kink `(0, 0)` the limit along `(1, 1)/√2` is
/// taken. For `MinMax` the tie `a = b` takes the `(0, 1)` branch.
pub fn phi_derivative(kind: NcpFunctionKind, a: f64, b: f64) -> (f64, f64) {
    match kind {
        NcpFunctionKind::FischerBurmeister => {
            let r = a.hypot(b);
            if r == 0.0 {
                let d = std::f64::consts::FRAC_1_SQRT_2 - 1.0;
                (d, d)
            } else {
                (a / r - 1.0, b / r - 1.0)
            }
        }
        NcpFunctionKind::MinMax => {
            if b - a > 0.0 {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            }
        }
    }
}

/// How an index is constrained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundKind {
    Free,
    Lower(f64),
    Upper(f64),
    Box(f64, f64),
}

/// `MCP(F, l, u)`: find `z` such that, per index, either `l ≤ z ≤ u` and
/// `F(z) = 0`, or `z = l` and `F(z) > 0`, or `z = u` and `F(z) < 0`.
#[derive(Clone)]
pub struct MixedComplementarityProblem {
    name: String,
    dim: usize,
    residual: ResidualFn,
    jacobian: Option<JacobianFn>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    finite_differences: bool,
    parameter: Option<f64>,
}

impl fmt::Debug for MixedComplementarityProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MixedComplementarityProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("finite_differences", &self.finite_differences)
            .field("parameter", &self.parameter)
            .finish()
    }
}

impl MixedComplementarityProblem {
    /// A problem with no bounds (`l = −∞`, `u = +∞`), i.e. a square system.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        residual: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            residual: Arc::new(residual),
            jacobian: None,
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            finite_differences: false,
            parameter: None,
        }
    }

    /// `NCP(F)`: `l = 0`, `u = +∞`.
    pub fn ncp(
        name: impl Into<String>,
        dim: usize,
        residual: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        let mut p = Self::new(name, dim, residual);
        p.lower = vec![0.0; dim];
        p
    }

    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(&[f64]) -> DenseMatrix + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn with_finite_differences(mut self, enabled: bool) -> Self {
        self.finite_differences = enabled;
        self
    }

    pub fn with_bounds(
        mut self,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self, ReformulationError> {
        for v in [&lower, &upper] {
            if v.len() != self.dim {
                return Err(ReformulationError::DimensionMismatch {
                    expected: self.dim,
                    found: v.len(),
                });
            }
        }
        for (index, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(ReformulationError::InvalidBounds {
                    index,
                    lower: l,
                    upper: u,
                });
            }
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn with_parameter(mut self, mu: f64) -> Self {
        self.parameter = Some(mu);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn parameter(&self) -> Option<f64> {
        self.parameter
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn bound_kind(&self, i: usize) -> BoundKind {
        let (l, u) = (self.lower[i], self.upper[i]);
        match (l.is_finite(), u.is_finite()) {
            (false, false) => BoundKind::Free,
            (true, false) => BoundKind::Lower(l),
            (false, true) => BoundKind::Upper(u),
            (true, true) => BoundKind::Box(l, u),
        }
    }

    fn check_dim(&self, z: &[f64]) -> Result<(), ReformulationError> {
        if z.len() != self.dim {
            return Err(ReformulationError::DimensionMismatch {
                expected: self.dim,
                found: z.len(),
            });
        }
        Ok(())
    }

    /// Evaluates `F(z)`, rejecting non-finite output.
    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>, ReformulationError> {
        self.check_dim(z)?;
        let f = (self.residual)(z);
        if f.len() != self.dim {
            return Err(ReformulationError::DimensionMismatch {
                expected: self.dim,
                found: f.len(),
            });
        }
        if let Some(index) = f.iter().position(|v| !v.is_finite()) {
            return Err(ReformulationError::NonFiniteResidual { index });
        }
        Ok(f)
    }

    /// Evaluates `F′(z)`, analytically or by forward differences.
    pub fn jacobian(&self, z: &[f64]) -> Result<DenseMatrix, ReformulationError> {
        self.check_dim(z)?;
        if let Some(jac) = &self.jacobian {
            return Ok(jac(z));
        }
        if !self.finite_differences {
            return Err(ReformulationError::DerivativeUnavailable);
        }
        let f0 = self.eval(z)?;
        let n = self.dim;
        let mut jac = DenseMatrix::zeros(n, n);
        let mut zp = z.to_vec();
        for j in 0..n {
            let h = f64::EPSILON.sqrt() * (1.0 + z[j].abs());
            zp[j] = z[j] + h;
            let fp = self.eval(&zp)?;
            zp[j] = z[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - f0[i]) / h;
            }
        }
        Ok(jac)
    }

    /// Checks the MCP conditions at `z` up to `tol`.
    pub fn satisfies_complementarity(
        &self,
        z: &[f64],
        tol: f64,
    ) -> Result<bool, ReformulationError> {
        let f = self.eval(z)?;
        Ok((0..self.dim).all(|i| {
            let (l, u) = (self.lower[i], self.upper[i]);
            if z[i] < l - tol || z[i] > u + tol {
                return false;
            }
            let at_lower = l.is_finite() && (z[i] - l).abs() <= tol;
            let at_upper = u.is_finite() && (u - z[i]).abs() <= tol;
            f[i].abs() <= tol
                || (at_lower && f[i] >= -tol && ((z[i] - l) * f[i]).abs() <= tol)
                || (at_upper && f[i] <= tol && ((u - z[i]) * f[i]).abs() <= tol)
        }))
    }
}

/// Sign applied to the inner NCP term of a doubly-bounded index so that it
/// behaves like `max(z − u, F)`. Fischer–Burmeister here is oriented like
/// `−min`, MinMax like `min`.
fn box_inner_sign(kind: NcpFunctionKind) -> f64 {
    match kind {
        NcpFunctionKind::FischerBurmeister => 1.0,
        NcpFunctionKind::MinMax => -1.0,
    }
}

fn phi_index(kind: NcpFunctionKind, bound: BoundKind, zi: f64, fi: f64) -> f64 {
    match bound {
        BoundKind::Free => fi,
        BoundKind::Lower(l) => phi(kind, zi - l, fi),
        BoundKind::Upper(u) => -phi(kind, u - zi, -fi),
        BoundKind::Box(l, u) => phi(kind, zi - l, box_inner_sign(kind) * phi(kind, u - zi, -fi)),
    }
}

/// Returns `(∂Φ_i/∂z_i, ∂Φ_i/∂F_i)` for one index.
fn phi_index_derivative(kind: NcpFunctionKind, bound: BoundKind, zi: f64, fi: f64) -> (f64, f64) {
    match bound {
        BoundKind::Free => (0.0, 1.0),
        BoundKind::Lower(l) => phi_derivative(kind, zi - l, fi),
        // −φ(u − z, −F): both chain factors are −1, cancelling the sign.
        BoundKind::Upper(u) => phi_derivative(kind, u - zi, -fi),
        BoundKind::Box(l, u) => {
            let s = box_inner_sign(kind);
            let inner = s * phi(kind, u - zi, -fi);
            let (ia, ib) = phi_derivative(kind, u - zi, -fi);
            let (oa, ob) = phi_derivative(kind, zi - l, inner);
            // inner depends on z through (u − z) and on F through (−F)
            (oa - s * ob * ia, -s * ob * ib)
        }
    }
}

/// `Φ(z)` for the given NCP function.
pub fn assemble_residual(
    problem: &MixedComplementarityProblem,
    z: &[f64],
    kind: NcpFunctionKind,
) -> Result<Vec<f64>, ReformulationError> {
    let f = problem.eval(z)?;
    Ok((0..problem.dim)
        .map(|i| phi_index(kind, problem.bound_kind(i), z[i], f[i]))
        .collect())
}

/// An element `H(z)` of the generalized derivative of `Φ`.
pub fn assemble_newton_derivative(
    problem: &MixedComplementarityProblem,
    z: &[f64],
    kind: NcpFunctionKind,
) -> Result<DenseMatrix, ReformulationError> {
    let f = problem.eval(z)?;
    let jac = problem.jacobian(z)?;
    Ok(newton_derivative_from_parts(problem, z, &f, &jac, kind))
}

/// Assembles `Φ(z)` and `H(z)` together, evaluating `F` once.
pub fn assemble_residual_and_derivative(
    problem: &MixedComplementarityProblem,
    z: &[f64],
    kind: NcpFunctionKind,
) -> Result<(Vec<f64>, DenseMatrix), ReformulationError> {
    let f = problem.eval(z)?;
    let jac = problem.jacobian(z)?;
    let res = (0..problem.dim)
        .map(|i| phi_index(kind, problem.bound_kind(i), z[i], f[i]))
        .collect();
    Ok((
        res,
        newton_derivative_from_parts(problem, z, &f, &jac, kind),
    ))
}

fn newton_derivative_from_parts(
    problem: &MixedComplementarityProblem,
    z: &[f64],
    f: &[f64],
    jac: &DenseMatrix,
    kind: NcpFunctionKind,
) -> DenseMatrix {
    let n = problem.dim;
    let mut h = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let (da, db) = phi_index_derivative(kind, problem.bound_kind(i), z[i], f[i]);
        let row = h.row_mut(i);
        for (hij, jij) in row.iter_mut().zip(jac.row(i)) {
            *hij = db * jij;
        }
        row[i] += da;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm2, sub};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use NcpFunctionKind::{FischerBurmeister as Fb, MinMax as Mp};

    #[test]
    fn fb_values() {
        assert_eq!(phi(Fb, 0.0, 0.0), 0.0);
        assert_eq!(phi(Fb, -1.0, 0.0), 2.0);
        assert_eq!(phi(Fb, 3.0, 0.0), 0.0);
        assert_eq!(phi(Fb, 0.0, 5.0), 0.0);
    }

    #[test]
    fn minmax_is_min() {
        assert_eq!(phi(Mp, 2.0, 5.0), 2.0);
        assert_eq!(phi(Mp, 5.0, 2.0), 2.0);
    }

    #[test]
    fn derivative_conventions() {
        let (da, db) = phi_derivative(Fb, 3.0, 4.0);
        assert!((da + 0.4).abs() < 1e-15 && (db + 0.2).abs() < 1e-15);
        let d = std::f64::consts::FRAC_1_SQRT_2 - 1.0;
        assert_eq!(phi_derivative(Fb, 0.0, 0.0), (d, d));
        assert_eq!(phi_derivative(Mp, 1.0, 1.0), (0.0, 1.0));
        assert_eq!(phi_derivative(Mp, 0.0, 3.0), (1.0, 0.0));
        assert_eq!(phi_derivative(Mp, 3.0, 0.0), (0.0, 1.0));
    }

    #[test]
    fn zero_set_is_complementarity_set() {
        let grid = [-2.0, -1.0, -0.5, 0.0, 0.25, 1.0, 3.0];
        for kind in [Fb, Mp] {
            for &a in &grid {
                for &b in &grid {
                    let comp = a >= 0.0 && b >= 0.0 && a * b <= 1e-15 * (1.0 + a + b);
                    let v = phi(kind, a, b);
                    assert_eq!(v.abs() <= 1e-15, comp, "{kind:?} ({a},{b}) -> {v}");
                }
            }
        }
    }

    fn linear_shift(c: Vec<f64>) -> MixedComplementarityProblem {
        let n = c.len();
        let c2 = c.clone();
        MixedComplementarityProblem::new("shift", n, move |z| sub(z, &c2))
            .with_jacobian(move |_| DenseMatrix::identity(n))
    }

    #[test]
    fn free_linear_derivative_is_identity() {
        let p = linear_shift(vec![1.0, -2.0, 0.5]);
        let h = assemble_newton_derivative(&p, &[0.3, 0.1, 9.0], Fb).unwrap();
        assert_eq!(h, DenseMatrix::identity(3));
        assert_eq!(
            assemble_residual(&p, &[1.0, -2.0, 0.5], Fb).unwrap(),
            vec![0.0; 3]
        );
    }

    #[test]
    fn minmax_active_row_is_unit() {
        // F_0 > 0 at z_0 = 0 selects the z-branch: row 0 = e_0ᵀ.
        let p = MixedComplementarityProblem::ncp("t", 2, |z| vec![z[0] + z[1] + 2.0, z[1] - 1.0])
            .with_jacobian(|_| DenseMatrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]));
        let z = [0.0, 0.5];
        let r = assemble_residual(&p, &z, Mp).unwrap();
        assert_eq!(r[0], 0.0);
        let h = assemble_newton_derivative(&p, &z, Mp).unwrap();
        assert_eq!(h.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn nonfinite_residual_is_reported() {
        let p = MixedComplementarityProblem::ncp("nan", 2, |z| vec![z[0], f64::NAN]);
        assert_eq!(
            assemble_residual(&p, &[1.0, 1.0], Fb),
            Err(ReformulationError::NonFiniteResidual { index: 1 })
        );
    }

    #[test]
    fn missing_derivative_is_reported() {
        let p = MixedComplementarityProblem::ncp("nojac", 1, |z| vec![z[0]]);
        assert_eq!(
            assemble_newton_derivative(&p, &[1.0], Fb),
            Err(ReformulationError::DerivativeUnavailable)
        );
        let p = p.with_finite_differences(true);
        let h = assemble_newton_derivative(&p, &[1.0], Fb).unwrap();
        assert!(h[(0, 0)].is_finite());
    }

    #[test]
    fn invalid_bounds_rejected() {
        let p = MixedComplementarityProblem::new("b", 2, |z| z.to_vec());
        assert!(matches!(
            p.with_bounds(vec![1.0, 0.0], vec![0.0, 1.0]),
            Err(ReformulationError::InvalidBounds { index: 0, .. })
        ));
    }

    /// A smooth nonlinear map used to exercise every bound kind.
    fn mixed_problem() -> MixedComplementarityProblem {
        let f = |z: &[f64]| {
            vec![
                z[0] * z[0] + z[1] - 1.0,
                z[0] * z[2] - 0.5 + z[3],
                z[1].sin() + 2.0 * z[2],
                z[3] * z[3] * z[3] - z[0],
            ]
        };
        MixedComplementarityProblem::new("mixed", 4, f)
            .with_finite_differences(true)
            .with_bounds(
                vec![f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY, -1.0],
                vec![f64::INFINITY, f64::INFINITY, 2.0, 1.0],
            )
            .unwrap()
    }

    fn analytic_mixed() -> MixedComplementarityProblem {
        let base = mixed_problem();
        base.with_jacobian(|z| {
            DenseMatrix::from_rows(&[
                [2.0 * z[0], 1.0, 0.0, 0.0],
                [z[2], 0.0, z[0], 1.0],
                [0.0, z[1].cos(), 2.0, 0.0],
                [-1.0, 0.0, 0.0, 3.0 * z[3] * z[3]],
            ])
        })
    }

    #[test]
    fn semismooth_directional_property() {
        let p = analytic_mixed();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for kind in [Fb, Mp] {
            let mut checked = 0;
            while checked < 20 {
                let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let t = 1e-6;
                let zt: Vec<f64> = z.iter().zip(&h).map(|(a, b)| a + t * b).collect();
                let r0 = assemble_residual(&p, &z, kind).unwrap();
                let r1 = assemble_residual(&p, &zt, kind).unwrap();
                let hm = assemble_newton_derivative(&p, &zt, kind).unwrap();
                // skip samples where a MinMax branch flips between z and z + th
                let f0 = p.eval(&z).unwrap();
                let f1 = p.eval(&zt).unwrap();
                let flips = (0..4).any(|i| {
                    let b = p.bound_kind(i);
                    phi_index_derivative(kind, b, z[i], f0[i])
                        != phi_index_derivative(kind, b, zt[i], f1[i])
                });
                if kind == Mp && flips {
                    continue;
                }
                let hv = hm.matvec(&h);
                let rem: Vec<f64> = (0..4).map(|i| r1[i] - r0[i] - t * hv[i]).collect();
                let ratio = norm2(&rem) / t;
                assert!(ratio <= 1e-4, "{kind:?} ratio {ratio}");
                checked += 1;
            }
        }
    }

    #[test]
    fn ncp_matches_plain_fb() {
        let p =
            MixedComplementarityProblem::ncp("ncp", 2, |z| vec![z[0] - z[1], z[0] * z[1] - 1.0]);
        let z = [0.3, -0.7];
        let f = p.eval(&z).unwrap();
        let r = assemble_residual(&p, &z, Fb).unwrap();
        for i in 0..2 {
            assert_eq!(r[i], phi(Fb, z[i], f[i]));
        }
    }

    #[test]
    fn analytic_and_fd_jacobians_agree() {
        let a = analytic_mixed();
        let fdp = mixed_problem();
        let z = [0.3, 0.2, -0.4, 0.5];
        let ja = a.jacobian(&z).unwrap();
        let jf = fdp.jacobian(&z).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((ja[(i, j)] - jf[(i, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn upper_bound_sign_convention() {
        // z ≤ 1 with F(z) = z - 2: solution z = 1 with F = -1 < 0.
        let p = MixedComplementarityProblem::new("up", 1, |z| vec![z[0] - 2.0])
            .with_jacobian(|_| DenseMatrix::identity(1))
            .with_bounds(vec![f64::NEG_INFINITY], vec![1.0])
            .unwrap();
        for kind in [Fb, Mp] {
            assert!(assemble_residual(&p, &[1.0], kind).unwrap()[0].abs() < 1e-15);
            assert!(assemble_residual(&p, &[0.5], kind).unwrap()[0].abs() > 0.1);
        }
        assert!(p.satisfies_complementarity(&[1.0], 1e-12).unwrap());
    }

    #[test]
    fn box_bounds_solutions() {
        // 0 ≤ z ≤ 1 with F = z - c: z = clamp(c).
        for (c, sol) in [(-0.5, 0.0), (0.4, 0.4), (1.7, 1.0)] {
            let p = MixedComplementarityProblem::new("box", 1, move |z| vec![z[0] - c])
                .with_jacobian(|_| DenseMatrix::identity(1))
                .with_bounds(vec![0.0], vec![1.0])
                .unwrap();
            for kind in [Fb, Mp] {
                assert!(assemble_residual(&p, &[sol], kind).unwrap()[0].abs() < 1e-15);
            }
        }
    }
}
