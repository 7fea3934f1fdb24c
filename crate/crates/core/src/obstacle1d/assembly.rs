//! Element assembly of the linearized beam energy and its Moreau–Yosida penalty.

use super::mesh::{shape, HermiteMesh1D, GAUSS4};
use super::BeamProblem;
use crate::linalg::{dot_accurate, DenseMatrix};
use crate::solver::{NewtonDerivative, SemismoothSystem, SystemError};

/// Global matrices of the discretized energy.
///
/// With `K = ∫ B y″v″`, `G = ∫ P y′v′`, `f = ∫ ρ g v` and `M = ∫ y v`, the
/// unconstrained optimality condition is `(2K − 2G) y = f`.
#[derive(Debug, Clone)]
pub struct BeamSystemMatrices {
    pub stiffness: DenseMatrix,
    pub geometric: DenseMatrix,
    pub load: Vec<f64>,
    pub mass: DenseMatrix,
    /// `2K − 2G` as stored; residuals and derivatives both use this copy.
    pub operator: DenseMatrix,
}

fn scatter(m: &mut DenseMatrix, dofs: &[Option<usize>; 4], local: &Local) {
    for a in 0..4 {
        let Some(i) = dofs[a] else { continue };
        for b in 0..4 {
            if let Some(j) = dofs[b] {
                m[(i, j)] += local[a][b];
            }
        }
    }
}

type Local = [[f64; 4]; 4];

/// Element stiffness, geometric and mass matrices and load vector by Gauss
/// quadrature, exact for these polynomial integrands.
fn element_matrices(problem: &BeamProblem, h: f64) -> (Local, Local, Local, [f64; 4]) {
    let mut ke = [[0.0; 4]; 4];
    let mut ge = [[0.0; 4]; 4];
    let mut me = [[0.0; 4]; 4];
    let mut fe = [0.0; 4];
    for &(xi, w) in &GAUSS4 {
        let (nv, dn, d2n) = shape(xi, h);
        let wh = w * h;
        for a in 0..4 {
            fe[a] += wh * problem.rho * problem.g * nv[a];
            for b in 0..4 {
                ke[a][b] += wh * problem.b * d2n[a] * d2n[b];
                ge[a][b] += wh * problem.p * dn[a] * dn[b];
                me[a][b] += wh * nv[a] * nv[b];
            }
        }
    }
    (ke, ge, me, fe)
}

pub fn assemble_beam_system(problem: &BeamProblem, mesh: &HermiteMesh1D) -> BeamSystemMatrices {
    let n = mesh.dofs();
    let h = mesh.h();
    let mut stiffness = DenseMatrix::zeros(n, n);
    let mut geometric = DenseMatrix::zeros(n, n);
    let mut mass = DenseMatrix::zeros(n, n);
    let mut load = vec![0.0; n];

    let (ke, ge, me, fe) = element_matrices(problem, h);
    for e in 0..mesh.elements() {
        let dofs = mesh.element_dofs(e);
        scatter(&mut stiffness, &dofs, &ke);
        scatter(&mut geometric, &dofs, &ge);
        scatter(&mut mass, &dofs, &me);
        for a in 0..4 {
            if let Some(i) = dofs[a] {
                load[i] += fe[a];
            }
        }
    }
    let mut operator = stiffness.clone();
    operator.scale(2.0);
    operator.add_scaled(-2.0, &geometric);
    BeamSystemMatrices {
        stiffness,
        geometric,
        load,
        mass,
        operator,
    }
}

/// Upper and lower violation at a point; exact ties count as inactive.
fn excess(y: f64, alpha: f64) -> (f64, f64) {
    ((y - alpha).max(0.0), (-alpha - y).max(0.0))
}

/// Penalty load vector `γ ∫ ((y − α)₊ − (−α − y)₊) v`, evaluated at Gauss points.
fn penalty_load(
    problem: &BeamProblem,
    mesh: &HermiteMesh1D,
    gamma: f64,
    y: &[f64],
    out: &mut [f64],
) {
    let h = mesh.h();
    let basis: Vec<[f64; 4]> = GAUSS4.iter().map(|&(xi, _)| shape(xi, h).0).collect();
    for e in 0..mesh.elements() {
        let dofs = mesh.element_dofs(e);
        let c = mesh.local_values(e, y);
        for (q, &(_, w)) in GAUSS4.iter().enumerate() {
            let nv = &basis[q];
            let yq: f64 = (0..4).map(|k| c[k] * nv[k]).sum();
            let (up, down) = excess(yq, problem.alpha);
            let s = gamma * w * h * (up - down);
            if s == 0.0 {
                continue;
            }
            for a in 0..4 {
                if let Some(i) = dofs[a] {
                    out[i] += s * nv[a];
                }
            }
        }
    }
}

/// Penalized energy `J(y) + (γ/2) ∫ ((y − α)₊² + (−α − y)₊²)`.
pub fn penalized_energy(
    problem: &BeamProblem,
    mesh: &HermiteMesh1D,
    matrices: &BeamSystemMatrices,
    gamma: f64,
    y: &[f64],
) -> f64 {
    let ky = matrices.stiffness.matvec(y);
    let gy = matrices.geometric.matvec(y);
    let mut energy = crate::linalg::dot(y, &ky)
        - crate::linalg::dot(y, &gy)
        - crate::linalg::dot(&matrices.load, y);
    let h = mesh.h();
    for e in 0..mesh.elements() {
        let c = mesh.local_values(e, y);
        for &(xi, w) in &GAUSS4 {
            let nv = shape(xi, h).0;
            let yq: f64 = (0..4).map(|k| c[k] * nv[k]).sum();
            let (up, down) = excess(yq, problem.alpha);
            energy += 0.5 * gamma * w * h * (up * up + down * down);
        }
    }
    energy
}

/// `(2K − 2G) y − f + γ Π(y − α)₊ − γ Π(−α − y)₊`.
///
/// The linear part is accumulated in doubled precision: the operator is
/// badly conditioned on fine meshes, and Newton's method can only resolve the
/// solution as accurately as the residual is computed.
pub fn moreau_yosida_residual(
    problem: &BeamProblem,
    mesh: &HermiteMesh1D,
    matrices: &BeamSystemMatrices,
    gamma: f64,
    y: &[f64],
) -> Vec<f64> {
    let n = y.len();
    let bw = mesh.bandwidth();
    let mut penalty = vec![0.0; n];
    penalty_load(problem, mesh, gamma, y, &mut penalty);
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(bw);
            let hi = (i + bw + 1).min(n);
            let linear = dot_accurate(
                &matrices.operator.row(i)[lo..hi],
                &y[lo..hi],
                -matrices.load[i],
            );
            linear + penalty[i]
        })
        .collect()
}

/// `2K − 2G` plus `γ ∫ w v` over Gauss points where `|y| > α`.
pub fn moreau_yosida_derivative(
    problem: &BeamProblem,
    mesh: &HermiteMesh1D,
    matrices: &BeamSystemMatrices,
    gamma: f64,
    y: &[f64],
) -> DenseMatrix {
    let mut d = matrices.operator.clone();
    add_active_mass(problem, mesh, gamma, y, &mut d);
    d
}

fn add_active_mass(
    problem: &BeamProblem,
    mesh: &HermiteMesh1D,
    gamma: f64,
    y: &[f64],
    d: &mut DenseMatrix,
) {
    let h = mesh.h();
    let basis: Vec<[f64; 4]> = GAUSS4.iter().map(|&(xi, _)| shape(xi, h).0).collect();
    for e in 0..mesh.elements() {
        let dofs = mesh.element_dofs(e);
        let c = mesh.local_values(e, y);
        let mut local = [[0.0; 4]; 4];
        let mut any = false;
        for (q, &(_, w)) in GAUSS4.iter().enumerate() {
            let nv = &basis[q];
            let yq: f64 = (0..4).map(|k| c[k] * nv[k]).sum();
            let (up, down) = excess(yq, problem.alpha);
            if up > 0.0 || down > 0.0 {
                any = true;
                for a in 0..4 {
                    for b in 0..4 {
                        local[a][b] += gamma * w * h * nv[a] * nv[b];
                    }
                }
            }
        }
        if any {
            scatter(d, &dofs, &local);
        }
    }
}

/// Fraction of Gauss points where `|y| > α`.
pub fn active_fraction(problem: &BeamProblem, mesh: &HermiteMesh1D, y: &[f64]) -> f64 {
    let h = mesh.h();
    let mut active = 0usize;
    for e in 0..mesh.elements() {
        let c = mesh.local_values(e, y);
        for &(xi, _) in &GAUSS4 {
            let nv = shape(xi, h).0;
            let yq: f64 = (0..4).map(|k| c[k] * nv[k]).sum();
            let (up, down) = excess(yq, problem.alpha);
            if up > 0.0 || down > 0.0 {
                active += 1;
            }
        }
    }
    active as f64 / (4 * mesh.elements()) as f64
}

/// The regularized beam equation at fixed `γ` as a semismooth system.
///
/// Rows are divided by the diagonal of `2K`, so residual norms are measured on
/// the scale of the displacement rather than of the bending stiffness, which
/// grows like `h⁻³` under refinement.
pub struct BeamSystem<'a> {
    problem: &'a BeamProblem,
    mesh: &'a HermiteMesh1D,
    matrices: &'a BeamSystemMatrices,
    gamma: f64,
    base: DenseMatrix,
    row_scale: Vec<f64>,
}

impl<'a> BeamSystem<'a> {
    pub fn new(
        problem: &'a BeamProblem,
        mesh: &'a HermiteMesh1D,
        matrices: &'a BeamSystemMatrices,
        gamma: f64,
    ) -> Self {
        let n = mesh.dofs();
        let row_scale = (0..n)
            .map(|i| 1.0 / (2.0 * matrices.stiffness[(i, i)]))
            .collect();
        let base = matrices.operator.clone();
        Self {
            problem,
            mesh,
            matrices,
            gamma,
            base,
            row_scale,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mesh(&self) -> &HermiteMesh1D {
        self.mesh
    }
}

impl SemismoothSystem for BeamSystem<'_> {
    fn dim(&self) -> usize {
        self.mesh.dofs()
    }

    fn residual(&self, y: &[f64]) -> Result<Vec<f64>, SystemError> {
        if y.len() != self.dim() {
            return Err(SystemError::DimensionMismatch {
                expected: self.dim(),
                found: y.len(),
            });
        }
        let mut r = moreau_yosida_residual(self.problem, self.mesh, self.matrices, self.gamma, y);
        for (ri, s) in r.iter_mut().zip(&self.row_scale) {
            *ri *= s;
        }
        Ok(r)
    }

    fn derivative(&self, y: &[f64]) -> Result<NewtonDerivative, SystemError> {
        let mut d = self.base.clone();
        add_active_mass(self.problem, self.mesh, self.gamma, y, &mut d);
        let n = self.dim();
        let bw = self.mesh.bandwidth();
        for i in 0..n {
            let s = self.row_scale[i];
            let lo = i.saturating_sub(bw);
            let hi = (i + bw + 1).min(n);
            for v in &mut d.row_mut(i)[lo..hi] {
                *v *= s;
            }
        }
        Ok(NewtonDerivative::plain(d).with_bandwidth(Some(bw)))
    }
}
