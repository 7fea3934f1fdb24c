//! Semismooth Newton iteration with optional backtracking.

use log::{debug, trace};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deflation::DeflationError;
use crate::linalg::{self, DenseMatrix, Factorization, LinalgError};
use crate::reformulate::ReformulationError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("iterate hit deflated root {index}")]
    DeflatedRootHit { index: usize },
    #[error("non-finite value in residual or derivative")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("derivative unavailable")]
    DerivativeUnavailable,
    #[error("{0}")]
    Other(String),
}

impl From<ReformulationError> for SystemError {
    fn from(e: ReformulationError) -> Self {
        match e {
            ReformulationError::NonFiniteResidual { .. } => Self::NonFinite,
            ReformulationError::DerivativeUnavailable => Self::DerivativeUnavailable,
            ReformulationError::DimensionMismatch { expected, found } => {
                Self::DimensionMismatch { expected, found }
            }
            other => Self::Other(other.to_string()),
        }
    }
}

impl From<DeflationError> for SystemError {
    fn from(e: DeflationError) -> Self {
        match e {
            DeflationError::AtDeflatedRoot { index, .. } => Self::DeflatedRootHit { index },
            DeflationError::DimensionMismatch { expected, found } => {
                Self::DimensionMismatch { expected, found }
            }
            other => Self::Other(other.to_string()),
        }
    }
}

/// A Newton derivative in the factored form `scale · matrix + u wᵀ`.
#[derive(Debug, Clone)]
pub struct NewtonDerivative {
    pub scale: f64,
    pub matrix: DenseMatrix,
    /// Declared half-bandwidth of `matrix`, enabling the banded factorization.
    pub bandwidth: Option<usize>,
    pub rank_one: Option<(Vec<f64>, Vec<f64>)>,
}

impl NewtonDerivative {
    pub fn plain(matrix: DenseMatrix) -> Self {
        Self {
            scale: 1.0,
            matrix,
            bandwidth: None,
            rank_one: None,
        }
    }

    pub fn with_bandwidth(mut self, bandwidth: Option<usize>) -> Self {
        self.bandwidth = bandwidth;
        self
    }

    /// Dense `scale · matrix + u wᵀ`.
    pub fn assemble(&self) -> DenseMatrix {
        let mut m = self.matrix.clone();
        m.scale(self.scale);
        if let Some((u, w)) = &self.rank_one {
            m.add_outer(u, w);
        }
        m
    }

    /// Solves `(scale · matrix + u wᵀ) x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let fac = Factorization::new(&self.matrix, self.bandwidth)?;
        let inv = 1.0 / self.scale;
        let rhs: Vec<f64> = b.iter().map(|v| v * inv).collect();
        match &self.rank_one {
            None => linalg::LinearSolve::solve(&fac, &rhs),
            Some((u, w)) => {
                let us: Vec<f64> = u.iter().map(|v| v * inv).collect();
                linalg::solve_rank_one_update(&fac, &us, w, &rhs)
            }
        }
    }
}

/// A square nonsmooth system `G(z) = 0` with a Newton derivative.
pub trait SemismoothSystem {
    fn dim(&self) -> usize;
    fn residual(&self, z: &[f64]) -> Result<Vec<f64>, SystemError>;
    fn derivative(&self, z: &[f64]) -> Result<NewtonDerivative, SystemError>;
}

impl<S: SemismoothSystem + ?Sized> SemismoothSystem for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn residual(&self, z: &[f64]) -> Result<Vec<f64>, SystemError> {
        (**self).residual(z)
    }

    fn derivative(&self, z: &[f64]) -> Result<NewtonDerivative, SystemError> {
        (**self).derivative(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearch {
    /// Full undamped steps.
    None,
    /// Step halving until Armijo sufficient decrease on `½‖G‖²`.
    Backtracking,
    /// Quadratic then safeguarded cubic interpolation of the merit function.
    CubicBacktracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktrackingParams {
    pub reduction: f64,
    pub sufficient_decrease: f64,
    pub min_step: f64,
}

impl Default for BacktrackingParams {
    fn default() -> Self {
        Self {
            reduction: 0.5,
            sufficient_decrease: 1e-4,
            min_step: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub atol: f64,
    pub rtol: f64,
    pub max_iter: usize,
    pub divergence_tol: f64,
    pub line_search: LineSearch,
    pub backtracking: BacktrackingParams,
    /// When set, a singular Newton derivative `H` is replaced for that step by
    /// the regularized least-squares step `(HᵀH + λ·max|HᵀH|·I) d = −Hᵀ G`
    /// with `λ` the given value. `None` reports `SingularJacobian`.
    pub singular_regularization: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-8,
            max_iter: 100,
            divergence_tol: 1e8,
            line_search: LineSearch::None,
            backtracking: BacktrackingParams::default(),
            singular_regularization: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("max_iter must be at least 1")]
    ZeroIterations,
}

impl SolverConfig {
    pub fn with_line_search(mut self, line_search: LineSearch) -> Self {
        self.line_search = line_search;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks = [
            ("atol", self.atol),
            ("rtol", self.rtol),
            ("divergence_tol", self.divergence_tol),
            ("backtracking.reduction", self.backtracking.reduction),
            (
                "backtracking.sufficient_decrease",
                self.backtracking.sufficient_decrease,
            ),
            ("backtracking.min_step", self.backtracking.min_step),
            (
                "singular_regularization",
                self.singular_regularization.unwrap_or(1.0),
            ),
        ];
        for (name, v) in checks {
            if !(v > 0.0) {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if self.max_iter == 0 {
            return Err(ConfigError::ZeroIterations);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    SingularJacobian,
    Diverged,
    DeflatedRootHit,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `‖G(z_k)‖₂` for `k = 0..=iterations`.
    pub residual_history: Vec<f64>,
    /// Steps taken with the singular-derivative regularization.
    pub regularized_steps: usize,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::NAN)
    }
}

fn map_system_error(e: &SystemError) -> SolveStatus {
    match e {
        SystemError::DeflatedRootHit { .. } => SolveStatus::DeflatedRootHit,
        SystemError::NonFinite => SolveStatus::Diverged,
        _ => SolveStatus::Diverged,
    }
}

/// Runs semismooth Newton from `z0`.
///
/// Converges when `‖G(z_k)‖₂ ≤ max(atol, rtol · ‖G(z_0)‖₂)`. Failures are
/// reported through [`SolveStatus`]; this never panics on NaN.
pub fn solve<S: SemismoothSystem + ?Sized>(
    system: &S,
    z0: &[f64],
    config: &SolverConfig,
) -> SolveResult {
    let mut z = z0.to_vec();
    let mut regularized_steps = 0;
    let finish = |status, z: Vec<f64>, history: Vec<f64>, regularized_steps| SolveResult {
        status,
        solution: z,
        iterations: history.len().saturating_sub(1),
        residual_history: history,
        regularized_steps,
    };
    if z.len() != system.dim() || z.iter().any(|v| !v.is_finite()) {
        return finish(SolveStatus::Diverged, z, vec![f64::NAN], 0);
    }

    let mut g = match system.residual(&z) {
        Ok(g) => g,
        Err(e) => return finish(map_system_error(&e), z, vec![f64::NAN], 0),
    };
    let mut gnorm = linalg::norm2(&g);
    let mut history = vec![gnorm];
    let target = config.atol.max(config.rtol * gnorm);

    loop {
        if !gnorm.is_finite() || gnorm > config.divergence_tol {
            return finish(SolveStatus::Diverged, z, history, regularized_steps);
        }
        if gnorm <= target {
            return finish(SolveStatus::Converged, z, history, regularized_steps);
        }
        if history.len() > config.max_iter {
            return finish(SolveStatus::MaxIterations, z, history, regularized_steps);
        }

        let deriv = match system.derivative(&z) {
            Ok(d) => d,
            Err(e) => return finish(map_system_error(&e), z, history, regularized_steps),
        };
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        // Slope of ½‖G‖² along the step; −‖G‖² for an exact Newton step.
        let (step, slope) = match deriv.solve(&rhs) {
            Ok(s) => (s, -gnorm * gnorm),
            Err(LinalgError::NonFinite) => {
                return finish(SolveStatus::Diverged, z, history, regularized_steps)
            }
            Err(_) => match config.singular_regularization {
                Some(lambda) => match regularized_step(&deriv, &g, lambda) {
                    Some(v) => {
                        regularized_steps += 1;
                        debug!(
                            "singular derivative at iteration {}: regularized step",
                            history.len() - 1
                        );
                        v
                    }
                    None => {
                        return finish(SolveStatus::SingularJacobian, z, history, regularized_steps)
                    }
                },
                None => {
                    return finish(SolveStatus::SingularJacobian, z, history, regularized_steps)
                }
            },
        };
        if step.iter().any(|v| !v.is_finite()) {
            return finish(SolveStatus::Diverged, z, history, regularized_steps);
        }

        let accepted = match config.line_search {
            LineSearch::None => full_step(system, &z, &step),
            LineSearch::Backtracking => backtrack(system, &z, &step, gnorm, slope, config),
            LineSearch::CubicBacktracking => {
                cubic_backtrack(system, &z, &step, gnorm, slope, config)
            }
        };
        match accepted {
            Ok((znew, gnew, lambda)) => {
                z = znew;
                g = gnew;
                gnorm = linalg::norm2(&g);
                trace!("iter {}: |G| = {gnorm:e}, step {lambda}", history.len());
                history.push(gnorm);
            }
            Err(status) => return finish(status, z, history, regularized_steps),
        }
    }
}

type Accepted = (Vec<f64>, Vec<f64>, f64);

/// Solves `(HᵀH + λ·max|HᵀH|·I) d = −Hᵀ g` densely; returns the step and the
/// merit slope `gᵀ H d`, or `None` if no descent step results.
fn regularized_step(deriv: &NewtonDerivative, g: &[f64], lambda: f64) -> Option<(Vec<f64>, f64)> {
    let h = deriv.assemble();
    let ht = h.transpose();
    let mut normal = ht.matmul(&h);
    let shift = lambda * normal.max_abs().max(f64::MIN_POSITIVE);
    for i in 0..normal.rows() {
        normal[(i, i)] += shift;
    }
    let rhs: Vec<f64> = ht.matvec(g).iter().map(|v| -v).collect();
    let fac = linalg::lu_factor(&normal).ok()?;
    let step = linalg::LinearSolve::solve(&fac, &rhs).ok()?;
    let slope = linalg::dot(g, &h.matvec(&step));
    (slope < 0.0).then_some((step, slope))
}

fn trial<S: SemismoothSystem + ?Sized>(
    system: &S,
    z: &[f64],
    step: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), SystemError> {
    let zt: Vec<f64> = z.iter().zip(step).map(|(a, b)| a + lambda * b).collect();
    let gt = system.residual(&zt)?;
    Ok((zt, gt))
}

fn full_step<S: SemismoothSystem + ?Sized>(
    system: &S,
    z: &[f64],
    step: &[f64],
) -> Result<Accepted, SolveStatus> {
    match trial(system, z, step, 1.0) {
        Ok((zt, gt)) => Ok((zt, gt, 1.0)),
        Err(e) => Err(map_system_error(&e)),
    }
}

/// Merit value `½‖G‖²`, with failed evaluations treated as `+∞`.
fn merit_of(r: &Result<(Vec<f64>, Vec<f64>), SystemError>) -> f64 {
    match r {
        Ok((_, g)) => {
            let n = linalg::norm2(g);
            if n.is_finite() {
                0.5 * n * n
            } else {
                f64::INFINITY
            }
        }
        Err(_) => f64::INFINITY,
    }
}

fn backtrack<S: SemismoothSystem + ?Sized>(
    system: &S,
    z: &[f64],
    step: &[f64],
    gnorm: f64,
    slope: f64,
    config: &SolverConfig,
) -> Result<Accepted, SolveStatus> {
    let bt = config.backtracking;
    let f0 = 0.5 * gnorm * gnorm;
    let mut lambda = 1.0;
    while lambda >= bt.min_step {
        let r = trial(system, z, step, lambda);
        if merit_of(&r) <= f0 + bt.sufficient_decrease * lambda * slope {
            let (zt, gt) = r.expect("finite merit implies success");
            return Ok((zt, gt, lambda));
        }
        lambda *= bt.reduction;
    }
    Err(SolveStatus::LineSearchFailed)
}

fn cubic_backtrack<S: SemismoothSystem + ?Sized>(
    system: &S,
    z: &[f64],
    step: &[f64],
    gnorm: f64,
    slope: f64,
    config: &SolverConfig,
) -> Result<Accepted, SolveStatus> {
    let bt = config.backtracking;
    let f0 = 0.5 * gnorm * gnorm;
    let accept = |lambda: f64, m: f64| m <= f0 + bt.sufficient_decrease * lambda * slope;

    let mut lambda = 1.0;
    let r = trial(system, z, step, lambda);
    let mut m = merit_of(&r);
    if accept(lambda, m) {
        let (zt, gt) = r.expect("finite merit implies success");
        return Ok((zt, gt, lambda));
    }
    let safeguard = |lt: f64, lambda: f64| {
        let lt = if lt.is_finite() {
            lt.min(0.5 * lambda)
        } else {
            0.5 * lambda
        };
        if lt <= 0.1 * lambda {
            0.1 * lambda
        } else {
            lt
        }
    };
    // quadratic model on the first reduction
    let mut prev = (lambda, m);
    lambda = safeguard(-slope / (2.0 * (m - f0 - slope)), lambda);
    loop {
        if lambda < bt.min_step {
            return Err(SolveStatus::LineSearchFailed);
        }
        let r = trial(system, z, step, lambda);
        m = merit_of(&r);
        if accept(lambda, m) {
            let (zt, gt) = r.expect("finite merit implies success");
            return Ok((zt, gt, lambda));
        }
        if !m.is_finite() {
            prev = (lambda, m);
            lambda *= 0.1;
            continue;
        }
        let (lp, mp) = prev;
        let t1 = m - f0 - lambda * slope;
        let t2 = mp - f0 - lp * slope;
        let next = if t2.is_finite() {
            let a = (t1 / (lambda * lambda) - t2 / (lp * lp)) / (lambda - lp);
            let b = (-lp * t1 / (lambda * lambda) + lambda * t2 / (lp * lp)) / (lambda - lp);
            if a == 0.0 {
                -slope / (2.0 * b)
            } else {
                let d = (b * b - 3.0 * a * slope).max(0.0);
                (-b + d.sqrt()) / (3.0 * a)
            }
        } else {
            -slope / (2.0 * (m - f0 - slope)) * lambda * lambda
        };
        prev = (lambda, m);
        lambda = safeguard(next, lambda);
    }
}
