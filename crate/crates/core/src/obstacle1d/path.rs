//! Path-following in the penalty parameter with mesh refinement and deflation.

use log::info;
use serde::Serialize;

use super::assembly::{assemble_beam_system, BeamSystem, BeamSystemMatrices};
use super::mesh::HermiteMesh1D;
use super::{BeamError, BeamProblem};
use crate::continuation::{
    deflated_search_with, verify_root, DeflationSettings, ProgressEvent, RootRecord, SearchOptions,
    SolutionSet,
};
use crate::deflation::{DeflationState, NormSpec};
use crate::linalg::DenseMatrix;
use crate::solver::{self, SolveStatus, SolverConfig};

/// Number of geometric steps the default ratio takes from `γ₀` to `γ_max`.
pub const DEFAULT_GAMMA_STEPS: u32 = 9;

#[derive(Debug, Clone)]
pub struct PathConfig {
    pub gamma0: f64,
    pub gamma_max: f64,
    /// Ratio of successive `γ`; `None` means `(γ_max/γ₀)^(1/9)`.
    pub q: Option<f64>,
    pub initial_elements: usize,
    pub solver: SolverConfig,
    pub power: f64,
    pub shift: f64,
    /// Hard cap on the number of `γ` updates.
    pub max_steps: usize,
    /// Undeflated Newton steps applied to each solution at `γ_max`.
    pub polish_steps: usize,
}

/// Stopping tolerance on the row-scaled residual. Its rounding floor is about
/// `1e-13` on the finest default mesh, and deflation multiplies it by the
/// deflation factor, so the generic `1e-10` leaves too little headroom.
pub const BEAM_ATOL: f64 = 1e-9;

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            gamma0: 10.0,
            gamma_max: 1e6,
            q: None,
            initial_elements: 64,
            solver: SolverConfig {
                atol: BEAM_ATOL,
                ..SolverConfig::default()
            },
            power: 2.0,
            shift: 1.0,
            max_steps: 1000,
            polish_steps: 3,
        }
    }
}

impl PathConfig {
    pub fn ratio(&self) -> f64 {
        self.q.unwrap_or_else(|| {
            (self.gamma_max / self.gamma0).powf(1.0 / f64::from(DEFAULT_GAMMA_STEPS))
        })
    }

    pub fn validate(&self) -> Result<(), BeamError> {
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(BeamError::InvalidParameter("gamma0 must be positive"));
        }
        if !(self.gamma_max >= self.gamma0 && self.gamma_max.is_finite()) {
            return Err(BeamError::InvalidParameter(
                "gamma_max must be at least gamma0",
            ));
        }
        let q = self.ratio();
        if self.gamma_max > self.gamma0 && !(q > 1.0 && q.is_finite()) {
            return Err(BeamError::InvalidParameter("gamma ratio must exceed 1"));
        }
        if self.initial_elements == 0 {
            return Err(BeamError::EmptyMesh);
        }
        self.solver
            .validate()
            .map_err(|_| BeamError::InvalidParameter("invalid solver configuration"))
    }

    fn deflation(&self, mass: &DenseMatrix) -> Result<DeflationSettings, BeamError> {
        Ok(DeflationSettings::new(self.power, self.shift)
            .with_norm(NormSpec::weighted(mass.clone())?))
    }
}

/// Current point on the `γ` path.
#[derive(Debug, Clone)]
pub struct PathState {
    pub gamma: f64,
    pub gamma_max: f64,
    pub mesh: HermiteMesh1D,
    pub solutions: SolutionSet,
    pub mass: DenseMatrix,
}

impl PathState {
    pub fn new(problem: &BeamProblem, config: &PathConfig) -> Result<Self, BeamError> {
        problem.validate()?;
        config.validate()?;
        let mesh =
            HermiteMesh1D::new(config.initial_elements, problem.l)?.refined_for(config.gamma0);
        let mass = assemble_beam_system(problem, &mesh).mass;
        Ok(Self {
            gamma: config.gamma0,
            gamma_max: config.gamma_max,
            mesh,
            solutions: SolutionSet::new(),
            mass,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolveRecord {
    pub step: usize,
    pub gamma: f64,
    pub elements: usize,
    pub iterations: usize,
}

/// How one solution branch was found and carried along the path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchHistory {
    pub discovered_at_gamma: f64,
    pub discovered_at_step: usize,
    pub discovery_iterations: usize,
    pub resolves: Vec<ResolveRecord>,
    pub lost_at_gamma: Option<f64>,
}

impl BranchHistory {
    /// Largest re-solve count on the mesh the branch started on, and the
    /// largest over all finer meshes.
    pub fn iterations_by_level(&self, initial_elements: usize) -> (Option<usize>, Option<usize>) {
        let coarse = self
            .resolves
            .iter()
            .filter(|r| r.elements == initial_elements);
        let fine = self
            .resolves
            .iter()
            .filter(|r| r.elements > initial_elements);
        (
            coarse.map(|r| r.iterations).max(),
            fine.map(|r| r.iterations).max(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathReport {
    /// Number of `γ` updates after the initial search.
    pub gamma_steps: usize,
    /// Histories of the surviving branches, in the order of `state.solutions`.
    pub branches: Vec<BranchHistory>,
    pub lost: Vec<BranchHistory>,
}

struct Level {
    mesh: HermiteMesh1D,
    matrices: BeamSystemMatrices,
    deflation: DeflationSettings,
}

impl Level {
    fn new(
        problem: &BeamProblem,
        mesh: HermiteMesh1D,
        config: &PathConfig,
    ) -> Result<Self, BeamError> {
        let matrices = assemble_beam_system(problem, &mesh);
        let deflation = config.deflation(&matrices.mass)?;
        Ok(Self {
            mesh,
            matrices,
            deflation,
        })
    }
}

fn record(
    z: Vec<f64>,
    iterations: usize,
    residual_norm: f64,
    gamma: f64,
    deflation: &DeflationSettings,
) -> RootRecord {
    let distinctness_radius = deflation.distinctness_tol * (1.0 + deflation.norm.norm(&z));
    RootRecord {
        z,
        iterations,
        residual_norm,
        discovered_at_parameter: Some(gamma),
        distinctness_radius,
    }
}

/// Deflated search for new solutions, starting from `guesses`, with `known`
/// deflated. Returns the enlarged set and histories for the newcomers.
#[allow(clippy::too_many_arguments)]
fn search(
    problem: &BeamProblem,
    level: &Level,
    gamma: f64,
    step: usize,
    guesses: &[Vec<f64>],
    known: SolutionSet,
    config: &PathConfig,
    events: &mut dyn FnMut(&ProgressEvent),
) -> Result<(SolutionSet, Vec<BranchHistory>), BeamError> {
    let system = BeamSystem::new(problem, &level.mesh, &level.matrices, gamma);
    let before = known.len();
    let options = SearchOptions {
        max_roots: None,
        parameter: Some(gamma),
    };
    let set = deflated_search_with(
        &system,
        guesses,
        &level.deflation,
        &config.solver,
        known,
        &options,
        events,
    )?;
    let histories = set.records()[before..]
        .iter()
        .map(|r| BranchHistory {
            discovered_at_gamma: gamma,
            discovered_at_step: step,
            discovery_iterations: r.iterations,
            resolves: Vec::new(),
            lost_at_gamma: None,
        })
        .collect();
    Ok((set, histories))
}

/// Iterative refinement of converged solutions. The residual is accurate well
/// below the stopping tolerance, but the operator is conditioned like `h⁻⁴`,
/// so a residual under tolerance can still leave errors far above it in the
/// smoothest modes. A few extra Newton steps remove them.
fn polish(
    system: &BeamSystem<'_>,
    set: SolutionSet,
    deflation: &DeflationSettings,
    config: &PathConfig,
) -> Result<SolutionSet, BeamError> {
    let steps = SolverConfig {
        atol: f64::MIN_POSITIVE,
        rtol: f64::MIN_POSITIVE,
        max_iter: config.polish_steps,
        line_search: solver::LineSearch::None,
        ..config.solver
    };
    let mut out = SolutionSet::new();
    for rec in set.records() {
        let r = solver::solve(system, &rec.z, &steps);
        let start = r.residual_history[0];
        let end = r.final_residual();
        let moved = deflation.norm.distance(&r.solution, &rec.z);
        let ok = matches!(
            r.status,
            SolveStatus::MaxIterations | SolveStatus::Converged
        ) && end <= config.solver.atol.max(start)
            && moved <= 1e-6 * (1.0 + deflation.norm.norm(&rec.z));
        let mut rec = rec.clone();
        if ok {
            rec.z = r.solution;
            rec.residual_norm = end;
        }
        out.insert(rec, &deflation.norm);
    }
    Ok(out)
}

/// Finds solutions at `γ₀` from `guesses` (vectors on the initial mesh), then
/// raises `γ` geometrically to `γ_max`. At each step the mesh is halved until
/// `h ≤ 1/√γ`, every branch is prolonged and re-solved with the branches
/// already re-solved at that step deflated, and the prolonged guesses are
/// searched again for newcomers.
pub fn path_follow(
    problem: &BeamProblem,
    guesses: &[Vec<f64>],
    state: &mut PathState,
    config: &PathConfig,
    events: &mut dyn FnMut(&ProgressEvent),
) -> Result<PathReport, BeamError> {
    problem.validate()?;
    config.validate()?;
    if guesses.is_empty() {
        return Err(BeamError::NoGuesses);
    }
    let guess_mesh = state.mesh.clone();
    for g in guesses {
        if g.len() != guess_mesh.dofs() {
            return Err(BeamError::GuessDimension {
                expected: guess_mesh.dofs(),
                found: g.len(),
            });
        }
    }
    let mut level = Level::new(problem, state.mesh.clone(), config)?;
    let (mut current, mut histories) = search(
        problem,
        &level,
        state.gamma,
        0,
        guesses,
        state.solutions.clone(),
        config,
        events,
    )?;
    if histories.len() < current.len() {
        // Solutions supplied in the state carry no discovery record.
        let mut pre: Vec<BranchHistory> = current.records()[..current.len() - histories.len()]
            .iter()
            .map(|r| BranchHistory {
                discovered_at_gamma: state.gamma,
                discovered_at_step: 0,
                discovery_iterations: r.iterations,
                resolves: Vec::new(),
                lost_at_gamma: None,
            })
            .collect();
        pre.append(&mut histories);
        histories = pre;
    }
    if current.is_empty() {
        return Err(BeamError::AllBranchesLost {
            step: 0,
            gamma: state.gamma,
        });
    }
    info!("{} solutions at gamma = {}", current.len(), state.gamma);

    let q = config.ratio();
    let mut lost = Vec::new();
    let mut step = 0;
    while state.gamma < state.gamma_max {
        step += 1;
        if step > config.max_steps {
            return Err(BeamError::TooManySteps(config.max_steps));
        }
        let mut gamma = (state.gamma * q).min(state.gamma_max);
        if state.gamma_max - gamma <= 1e-12 * state.gamma_max {
            gamma = state.gamma_max;
        }
        let mesh = level.mesh.refined_for(gamma);
        let mut points: Vec<Vec<f64>> = current.roots().map(<[f64]>::to_vec).collect();
        if mesh != level.mesh {
            info!(
                "refining to {} elements at gamma = {gamma}",
                mesh.elements()
            );
            points = points
                .iter()
                .map(|z| level.mesh.prolong(z, &mesh))
                .collect();
            level = Level::new(problem, mesh, config)?;
        }
        let system = BeamSystem::new(problem, &level.mesh, &level.matrices, gamma);
        let mut next = SolutionSet::new();
        let mut next_histories = Vec::new();
        let mut deflation_state =
            DeflationState::new(config.power, config.shift, level.deflation.norm.clone())?
                .with_guard(level.deflation.guard);
        for (bi, (point, mut history)) in points.iter().zip(histories.drain(..)).enumerate() {
            let deflated = crate::continuation::DeflatedSystem::new(&system, &deflation_state);
            let result = solver::solve(&deflated, point, &config.solver);
            let verified = if result.converged() {
                verify_root(&system, result.solution.clone(), &config.solver)
                    .ok()
                    .filter(|(z, _)| {
                        next.find(z, &level.deflation.norm, level.deflation.distinctness_tol)
                            .is_none()
                    })
            } else {
                None
            };
            let Some((z, residual_norm)) = verified else {
                let status = if result.converged() {
                    SolveStatus::DeflatedRootHit
                } else {
                    result.status
                };
                info!("branch {bi} lost at gamma = {gamma}: {status:?}");
                events(&ProgressEvent::BranchLost {
                    step,
                    branch: bi,
                    status,
                    parameter: gamma,
                });
                history.lost_at_gamma = Some(gamma);
                lost.push(history);
                continue;
            };
            events(&ProgressEvent::BranchContinued {
                step,
                branch: bi,
                iterations: result.iterations,
                parameter: gamma,
            });
            history.resolves.push(ResolveRecord {
                step,
                gamma,
                elements: level.mesh.elements(),
                iterations: result.iterations,
            });
            deflation_state.push_root(z.clone())?;
            let rec = record(
                z,
                history.discovery_iterations,
                residual_norm,
                history.discovered_at_gamma,
                &level.deflation,
            );
            next.insert(rec, &level.deflation.norm);
            next_histories.push(history);
        }
        if next.is_empty() {
            return Err(BeamError::AllBranchesLost { step, gamma });
        }
        let seeds: Vec<Vec<f64>> = guesses
            .iter()
            .map(|g| guess_mesh.prolong(g, &level.mesh))
            .collect();
        let (found, mut newcomers) =
            search(problem, &level, gamma, step, &seeds, next, config, events)?;
        next_histories.append(&mut newcomers);
        events(&ProgressEvent::StepComplete {
            step,
            parameter: gamma,
            branches: found.len(),
        });
        current = found;
        histories = next_histories;
        state.gamma = gamma;
    }

    if config.polish_steps > 0 {
        let system = BeamSystem::new(problem, &level.mesh, &level.matrices, state.gamma);
        current = polish(&system, current, &level.deflation, config)?;
    }
    state.mesh = level.mesh;
    state.mass = level.matrices.mass;
    state.solutions = current;
    Ok(PathReport {
        gamma_steps: step,
        branches: histories,
        lost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ratio_takes_nine_steps() {
        let config = PathConfig::default();
        let q = config.ratio();
        let mut g = config.gamma0;
        let mut steps = 0;
        while g < config.gamma_max {
            g = (g * q).min(config.gamma_max);
            if config.gamma_max - g <= 1e-12 * config.gamma_max {
                g = config.gamma_max;
            }
            steps += 1;
        }
        assert_eq!(steps, 9);
    }

    #[test]
    fn config_validation() {
        assert!(PathConfig::default().validate().is_ok());
        let bad = PathConfig {
            q: Some(1.0),
            ..PathConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PathConfig {
            gamma_max: 1.0,
            ..PathConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn small_run() -> (PathState, PathReport) {
        let problem = BeamProblem::default();
        let config = PathConfig {
            initial_elements: 8,
            gamma_max: 1e4,
            ..PathConfig::default()
        };
        let mut state = PathState::new(&problem, &config).unwrap();
        let guess = vec![0.0; state.mesh.dofs()];
        let report = path_follow(&problem, &[guess], &mut state, &config, &mut |_| {}).unwrap();
        (state, report)
    }

    #[test]
    fn mesh_rule_holds_along_the_path() {
        let (state, report) = small_run();
        assert_eq!(state.gamma, 1e4);
        assert!(state.mesh.resolves(state.gamma));
        assert_eq!(state.mesh.elements(), 128);
        assert_eq!(state.mass.rows(), state.mesh.dofs());
        for branch in &report.branches {
            for r in &branch.resolves {
                let h = 1.0 / r.elements as f64;
                assert!(h * r.gamma.sqrt() <= 1.0, "{r:?}");
            }
        }
        assert_eq!(report.branches.len(), state.solutions.len());
        for rec in state.solutions.records() {
            assert_eq!(rec.z.len(), state.mesh.dofs());
        }
    }

    #[test]
    fn path_is_deterministic() {
        let (a, ra) = small_run();
        let (b, rb) = small_run();
        assert_eq!(a.solutions, b.solutions);
        assert_eq!(ra, rb);
    }

    #[test]
    fn rejects_guess_of_wrong_size() {
        let problem = BeamProblem::default();
        let config = PathConfig {
            initial_elements: 8,
            gamma_max: 100.0,
            ..PathConfig::default()
        };
        let mut state = PathState::new(&problem, &config).unwrap();
        let err =
            path_follow(&problem, &[vec![0.0; 3]], &mut state, &config, &mut |_| {}).unwrap_err();
        assert!(matches!(err, BeamError::GuessDimension { .. }));
    }
}
