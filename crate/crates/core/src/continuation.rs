//! Deflated multi-start search and zero-order parameter continuation.

use log::{debug, info};
use serde::Serialize;
use thiserror::Error;

use crate::deflation::{DeflationError, DeflationState, NormSpec, DEFAULT_SINGULARITY_GUARD};
use crate::linalg;
use crate::reformulate::{
    assemble_residual, assemble_residual_and_derivative, MixedComplementarityProblem,
    NcpFunctionKind,
};
use crate::solver::{
    self, NewtonDerivative, SemismoothSystem, SolveStatus, SolverConfig, SystemError,
};

/// Default relative distinctness tolerance between roots.
pub const DEFAULT_DISTINCTNESS_TOL: f64 = 1e-6;

/// `Φ(z)` of an MCP under a fixed NCP function.
#[derive(Debug, Clone, Copy)]
pub struct McpSystem<'a> {
    pub problem: &'a MixedComplementarityProblem,
    pub kind: NcpFunctionKind,
}

impl<'a> McpSystem<'a> {
    pub fn new(problem: &'a MixedComplementarityProblem, kind: NcpFunctionKind) -> Self {
        Self { problem, kind }
    }
}

impl SemismoothSystem for McpSystem<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn residual(&self, z: &[f64]) -> Result<Vec<f64>, SystemError> {
        Ok(assemble_residual(self.problem, z, self.kind)?)
    }

    fn derivative(&self, z: &[f64]) -> Result<NewtonDerivative, SystemError> {
        let (_, h) = assemble_residual_and_derivative(self.problem, z, self.kind)?;
        Ok(NewtonDerivative::plain(h))
    }
}

/// Like [`McpSystem`] but owning its problem, for parameter families.
pub struct OwnedMcpSystem {
    pub problem: MixedComplementarityProblem,
    pub kind: NcpFunctionKind,
}

impl SemismoothSystem for OwnedMcpSystem {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn residual(&self, z: &[f64]) -> Result<Vec<f64>, SystemError> {
        McpSystem::new(&self.problem, self.kind).residual(z)
    }

    fn derivative(&self, z: &[f64]) -> Result<NewtonDerivative, SystemError> {
        McpSystem::new(&self.problem, self.kind).derivative(z)
    }
}

/// `G(z) = α(z) F(z)` for an inner system with a plain derivative.
pub struct DeflatedSystem<'a, S: SemismoothSystem + ?Sized> {
    pub inner: &'a S,
    pub state: &'a DeflationState,
}

impl<'a, S: SemismoothSystem + ?Sized> DeflatedSystem<'a, S> {
    pub fn new(inner: &'a S, state: &'a DeflationState) -> Self {
        Self { inner, state }
    }
}

impl<S: SemismoothSystem + ?Sized> SemismoothSystem for DeflatedSystem<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn residual(&self, z: &[f64]) -> Result<Vec<f64>, SystemError> {
        let f = self.inner.residual(z)?;
        Ok(self.state.deflated_residual(&f, z)?)
    }

    fn derivative(&self, z: &[f64]) -> Result<NewtonDerivative, SystemError> {
        let mut d = self.inner.derivative(z)?;
        if d.rank_one.is_some() {
            return Err(SystemError::Other(
                "cannot deflate a derivative that already carries a rank-one term".into(),
            ));
        }
        let f = self.inner.residual(z)?;
        let (alpha, u, w) = self.state.deflated_derivative_parts(&f, z)?;
        d.scale *= alpha;
        d.rank_one = Some((u, w));
        Ok(d)
    }
}

/// Parameters of the deflation operator and root acceptance.
#[derive(Debug, Clone)]
pub struct DeflationSettings {
    pub power: f64,
    pub shift: f64,
    pub norm: NormSpec,
    pub guard: f64,
    /// Roots closer than `tol · (1 + ‖z‖)` are considered identical.
    pub distinctness_tol: f64,
}

impl Default for DeflationSettings {
    fn default() -> Self {
        Self {
            power: 2.0,
            shift: 1.0,
            norm: NormSpec::Euclidean,
            guard: DEFAULT_SINGULARITY_GUARD,
            distinctness_tol: DEFAULT_DISTINCTNESS_TOL,
        }
    }
}

impl DeflationSettings {
    pub fn new(power: f64, shift: f64) -> Self {
        Self {
            power,
            shift,
            ..Self::default()
        }
    }

    pub fn with_norm(mut self, norm: NormSpec) -> Self {
        self.norm = norm;
        self
    }

    fn empty_state(&self) -> Result<DeflationState, DeflationError> {
        Ok(DeflationState::new(self.power, self.shift, self.norm.clone())?.with_guard(self.guard))
    }
}

/// One discovered root with its discovery metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootRecord {
    pub z: Vec<f64>,
    pub iterations: usize,
    /// Undeflated residual norm at the root.
    pub residual_norm: f64,
    pub discovered_at_parameter: Option<f64>,
    pub distinctness_radius: f64,
}

/// Ordered collection of pairwise distinct roots.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolutionSet {
    records: Vec<RootRecord>,
}

impl SolutionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[RootRecord] {
        &self.records
    }

    pub fn roots(&self) -> impl Iterator<Item = &[f64]> {
        self.records.iter().map(|r| r.z.as_slice())
    }

    /// Index of a stored root within the distinctness radius of `z`.
    pub fn find(&self, z: &[f64], norm: &NormSpec, tol: f64) -> Option<usize> {
        let radius = tol * (1.0 + norm.norm(z));
        self.records
            .iter()
            .position(|r| norm.distance(z, &r.z) <= radius)
    }

    /// Appends `record` unless it duplicates a stored root; returns whether it was added.
    pub fn insert(&mut self, record: RootRecord, norm: &NormSpec) -> bool {
        if self
            .find(&record.z, norm, relative_tol(&record, norm))
            .is_some()
        {
            return false;
        }
        self.records.push(record);
        true
    }

    /// Builds a set from bare roots with no discovery metadata.
    pub fn from_roots(roots: impl IntoIterator<Item = Vec<f64>>, norm: &NormSpec) -> Self {
        let mut set = Self::new();
        for z in roots {
            let radius = DEFAULT_DISTINCTNESS_TOL * (1.0 + norm.norm(&z));
            set.insert(
                RootRecord {
                    z,
                    iterations: 0,
                    residual_norm: f64::NAN,
                    discovered_at_parameter: None,
                    distinctness_radius: radius,
                },
                norm,
            );
        }
        set
    }
}

fn relative_tol(record: &RootRecord, norm: &NormSpec) -> f64 {
    record.distinctness_radius / (1.0 + norm.norm(&record.z))
}

/// Structured progress notifications.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ProgressEvent {
    Attempt {
        guess: usize,
        status: SolveStatus,
        iterations: usize,
        parameter: Option<f64>,
    },
    RootFound {
        guess: usize,
        index: usize,
        iterations: usize,
        parameter: Option<f64>,
    },
    RootRejected {
        guess: usize,
        reason: String,
        parameter: Option<f64>,
    },
    BranchContinued {
        step: usize,
        branch: usize,
        iterations: usize,
        parameter: f64,
    },
    BranchLost {
        step: usize,
        branch: usize,
        status: SolveStatus,
        parameter: f64,
    },
    StepComplete {
        step: usize,
        parameter: f64,
        branches: usize,
    },
}

/// Optional limits for [`deflated_search_with`].
#[derive(Debug, Clone, Default)]
pub struct SearchOptions {
    /// Stop once the set holds this many roots.
    pub max_roots: Option<usize>,
    /// Parameter value recorded on discovered roots.
    pub parameter: Option<f64>,
}

/// Deflated search with default options and no event sink.
pub fn deflated_search<S: SemismoothSystem + ?Sized>(
    system: &S,
    guesses: &[Vec<f64>],
    deflation: &DeflationSettings,
    config: &SolverConfig,
) -> Result<SolutionSet, DeflationError> {
    deflated_search_with(
        system,
        guesses,
        deflation,
        config,
        SolutionSet::new(),
        &SearchOptions::default(),
        &mut |_| {},
    )
}

/// For each guess in order: solve the deflated system, verify the result as a
/// root of the undeflated system, store and deflate it, and retry the same
/// guess. Any failure moves on to the next guess.
///
/// Roots in `known` are deflated from the start and kept in the output.
pub fn deflated_search_with<S: SemismoothSystem + ?Sized>(
    system: &S,
    guesses: &[Vec<f64>],
    deflation: &DeflationSettings,
    config: &SolverConfig,
    known: SolutionSet,
    options: &SearchOptions,
    events: &mut dyn FnMut(&ProgressEvent),
) -> Result<SolutionSet, DeflationError> {
    let mut set = known;
    let mut state = deflation.empty_state()?;
    for r in set.roots() {
        state.push_root(r.to_vec())?;
    }
    let full = |set: &SolutionSet| options.max_roots.is_some_and(|m| set.len() >= m);
    let parameter = options.parameter;

    'guesses: for (gi, guess) in guesses.iter().enumerate() {
        loop {
            if full(&set) {
                break 'guesses;
            }
            let deflated = DeflatedSystem::new(system, &state);
            let result = solver::solve(&deflated, guess, config);
            debug!(
                "guess {gi}: {:?} after {} iterations (|G| = {:e})",
                result.status,
                result.iterations,
                result.final_residual()
            );
            events(&ProgressEvent::Attempt {
                guess: gi,
                status: result.status,
                iterations: result.iterations,
                parameter,
            });
            if !result.converged() {
                continue 'guesses;
            }
            // Deflation can drive ‖G‖ down through α → 0 far from any root.
            let (z, residual_norm) = match verify_root(system, result.solution, config) {
                Ok(v) => v,
                Err(residual_norm) => {
                    events(&ProgressEvent::RootRejected {
                        guess: gi,
                        reason: format!("undeflated residual {residual_norm:e} exceeds atol"),
                        parameter,
                    });
                    continue 'guesses;
                }
            };
            let radius = deflation.distinctness_tol * (1.0 + deflation.norm.norm(&z));
            if set
                .find(&z, &deflation.norm, deflation.distinctness_tol)
                .is_some()
            {
                events(&ProgressEvent::RootRejected {
                    guess: gi,
                    reason: "duplicate of a known root".into(),
                    parameter,
                });
                continue 'guesses;
            }
            state.push_root(z.clone())?;
            set.insert(
                RootRecord {
                    z,
                    iterations: result.iterations,
                    residual_norm,
                    discovered_at_parameter: parameter,
                    distinctness_radius: radius,
                },
                &deflation.norm,
            );
            info!(
                "root {} found from guess {gi} in {} iterations",
                set.len() - 1,
                result.iterations
            );
            events(&ProgressEvent::RootFound {
                guess: gi,
                index: set.len() - 1,
                iterations: result.iterations,
                parameter,
            });
        }
    }
    Ok(set)
}

/// Undeflated Newton steps allowed when polishing a candidate root.
pub const POLISH_MAX_STEPS: usize = 5;

/// Largest relative move accepted while polishing.
const POLISH_MAX_MOVE: f64 = 1e-4;

/// Checks that `z` is a root of the undeflated system to within `atol`.
///
/// A deflated solve stops on `max(atol, rtol·‖G₀‖)`, so a genuine root may sit
/// slightly above `atol`; such candidates get a few plain Newton steps, which
/// must stay local. Returns the (possibly polished) root and its residual
/// norm, or the residual norm on rejection.
pub fn verify_root<S: SemismoothSystem + ?Sized>(
    system: &S,
    z: Vec<f64>,
    config: &SolverConfig,
) -> Result<(Vec<f64>, f64), f64> {
    let norm = match system.residual(&z) {
        Ok(f) => linalg::norm2(&f),
        Err(_) => return Err(f64::NAN),
    };
    if norm <= config.atol {
        return Ok((z, norm));
    }
    let polish = SolverConfig {
        rtol: f64::MIN_POSITIVE,
        max_iter: POLISH_MAX_STEPS,
        line_search: solver::LineSearch::None,
        ..*config
    };
    let r = solver::solve(system, &z, &polish);
    let moved = linalg::norm2(&linalg::sub(&r.solution, &z));
    if r.converged() && moved <= POLISH_MAX_MOVE * (1.0 + linalg::norm2(&z)) {
        let final_norm = r.final_residual();
        debug!(
            "polished root: {norm:e} -> {final_norm:e} in {} steps",
            r.iterations
        );
        Ok((r.solution, final_norm))
    } else {
        Err(norm)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContinuationError {
    #[error("every branch failed at step {step} (parameter {parameter})")]
    AllBranchesLost { step: usize, parameter: f64 },
    #[error("continuation needs a nonempty initial set or guesses")]
    NothingToContinue,
    #[error("step count must be at least 1")]
    ZeroSteps,
    #[error(transparent)]
    Deflation(#[from] DeflationError),
}

/// Equispaced zero-order continuation in a scalar parameter.
#[derive(Debug, Clone)]
pub struct ContinuationPlan {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
    pub config: SolverConfig,
    pub deflation: DeflationSettings,
}

impl ContinuationPlan {
    /// Parameter value after `step` steps.
    pub fn parameter_at(&self, step: usize) -> f64 {
        if step == self.steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.steps as f64
    }
}

/// Continues `initial` (roots at `plan.start`) to `plan.end`.
///
/// At each step every branch is re-solved from its previous point, with the
/// branches already continued at that step deflated; then a deflated search
/// seeded with the previous branch points looks for newcomers.
/// If `initial` is empty, `guesses` are searched at `plan.start` first.
pub fn continue_parameter<S, Fam>(
    family: Fam,
    plan: &ContinuationPlan,
    initial: SolutionSet,
    guesses: &[Vec<f64>],
    events: &mut dyn FnMut(&ProgressEvent),
) -> Result<SolutionSet, ContinuationError>
where
    S: SemismoothSystem,
    Fam: Fn(f64) -> S,
{
    if plan.steps == 0 {
        return Err(ContinuationError::ZeroSteps);
    }
    let norm = &plan.deflation.norm;
    let mut current = if initial.is_empty() {
        if guesses.is_empty() {
            return Err(ContinuationError::NothingToContinue);
        }
        let system = family(plan.start);
        let options = SearchOptions {
            max_roots: None,
            parameter: Some(plan.start),
        };
        deflated_search_with(
            &system,
            guesses,
            &plan.deflation,
            &plan.config,
            SolutionSet::new(),
            &options,
            events,
        )?
    } else {
        initial
    };
    if current.is_empty() {
        return Err(ContinuationError::AllBranchesLost {
            step: 0,
            parameter: plan.start,
        });
    }

    for step in 1..=plan.steps {
        let mu = plan.parameter_at(step);
        let system = family(mu);
        let mut next = SolutionSet::new();
        let mut state = plan.deflation.empty_state()?;
        for (bi, rec) in current.records().iter().enumerate() {
            let deflated = DeflatedSystem::new(&system, &state);
            let result = solver::solve(&deflated, &rec.z, &plan.config);
            let verified = if result.converged() {
                verify_root(&system, result.solution.clone(), &plan.config)
                    .ok()
                    .filter(|(z, _)| {
                        next.find(z, norm, plan.deflation.distinctness_tol)
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
                info!("branch {bi} lost at parameter {mu}: {status:?}");
                events(&ProgressEvent::BranchLost {
                    step,
                    branch: bi,
                    status,
                    parameter: mu,
                });
                continue;
            };
            events(&ProgressEvent::BranchContinued {
                step,
                branch: bi,
                iterations: result.iterations,
                parameter: mu,
            });
            state.push_root(z.clone())?;
            let radius = plan.deflation.distinctness_tol * (1.0 + norm.norm(&z));
            next.insert(
                RootRecord {
                    z,
                    iterations: rec.iterations,
                    residual_norm,
                    discovered_at_parameter: rec.discovered_at_parameter,
                    distinctness_radius: radius,
                },
                norm,
            );
        }
        if next.is_empty() {
            return Err(ContinuationError::AllBranchesLost {
                step,
                parameter: mu,
            });
        }
        let seeds: Vec<Vec<f64>> = current.roots().map(<[f64]>::to_vec).collect();
        let options = SearchOptions {
            max_roots: None,
            parameter: Some(mu),
        };
        next = deflated_search_with(
            &system,
            &seeds,
            &plan.deflation,
            &plan.config,
            next,
            &options,
            events,
        )?;
        events(&ProgressEvent::StepComplete {
            step,
            parameter: mu,
            branches: next.len(),
        });
        current = next;
    }
    Ok(current)
}
