//! Finite-dimensional complementarity benchmarks with analytic derivatives.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::linalg::DenseMatrix;
use crate::reformulate::{MixedComplementarityProblem, NcpFunctionKind};
use crate::solver::{LineSearch, SolverConfig};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProblemError {
    #[error("unknown benchmark `{0}` (expected one of: kojima-shindoh, gould, aggarwal, gerard)")]
    UnknownBenchmark(String),
    #[error("benchmark {0} takes no parameter")]
    UnexpectedParameter(BenchmarkId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkId {
    KojimaShindoh,
    Gould,
    Aggarwal,
    Gerard,
}

impl BenchmarkId {
    pub const ALL: [BenchmarkId; 4] = [
        Self::KojimaShindoh,
        Self::Gould,
        Self::Aggarwal,
        Self::Gerard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::KojimaShindoh => "kojima-shindoh",
            Self::Gould => "gould",
            Self::Aggarwal => "aggarwal",
            Self::Gerard => "gerard",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::KojimaShindoh => "4-variable NCP with two solutions",
            Self::Gould => "KKT system of an indefinite QP; saddle, global and local minimum",
            Self::Aggarwal => "bimatrix game with three Nash equilibria, scaled by a parameter mu",
            Self::Gerard => "10-variable risk-averse market MCP with three equilibria",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Self::Gerard => 10,
            _ => 4,
        }
    }

    pub fn is_parameterized(self) -> bool {
        self == Self::Aggarwal
    }

    /// Solver settings known to work on this benchmark.
    pub fn recommended(self) -> Recommended {
        match self {
            Self::Gerard => Recommended {
                ncp: NcpFunctionKind::MinMax,
                power: 1.0,
                shift: 1.0,
                line_search: LineSearch::Backtracking,
                initial_guess: vec![0.0; 10],
                max_iter: 100,
                // the Newton derivative is singular at the degenerate start z = 0
                singular_regularization: Some(1e-10),
            },
            Self::KojimaShindoh => Recommended {
                initial_guess: vec![0.7; 4],
                ..Recommended::fb_default()
            },
            Self::Gould => Recommended {
                initial_guess: vec![0.2, 0.2, 0.0, 0.0],
                ..Recommended::fb_default()
            },
            // exact x ↔ y symmetry: leaving the symmetric subspace relies on
            // round-off growth, which takes a few hundred iterations
            Self::Aggarwal => Recommended {
                max_iter: 1000,
                ..Recommended::fb_default()
            },
        }
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkId {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match key.as_str() {
            "kojimashindoh" | "kojima" => Ok(Self::KojimaShindoh),
            "gould" => Ok(Self::Gould),
            "aggarwal" => Ok(Self::Aggarwal),
            "gerard" => Ok(Self::Gerard),
            _ => Err(ProblemError::UnknownBenchmark(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommended {
    pub ncp: NcpFunctionKind,
    pub power: f64,
    pub shift: f64,
    pub line_search: LineSearch,
    pub initial_guess: Vec<f64>,
    pub max_iter: usize,
    pub singular_regularization: Option<f64>,
}

impl Recommended {
    fn fb_default() -> Self {
        Self {
            ncp: NcpFunctionKind::FischerBurmeister,
            power: 2.0,
            shift: 1.0,
            line_search: LineSearch::None,
            initial_guess: vec![0.0; 4],
            max_iter: 100,
            singular_regularization: None,
        }
    }

    /// Solver configuration with these settings and default tolerances.
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            max_iter: self.max_iter,
            line_search: self.line_search,
            singular_regularization: self.singular_regularization,
            ..SolverConfig::default()
        }
    }
}

/// Builds a benchmark. `mu` applies to Aggarwal only and defaults to 1.
pub fn build(
    id: BenchmarkId,
    mu: Option<f64>,
) -> Result<MixedComplementarityProblem, ProblemError> {
    if mu.is_some() && !id.is_parameterized() {
        return Err(ProblemError::UnexpectedParameter(id));
    }
    Ok(match id {
        BenchmarkId::KojimaShindoh => kojima_shindoh(),
        BenchmarkId::Gould => gould(),
        BenchmarkId::Aggarwal => aggarwal(mu.unwrap_or(1.0)),
        BenchmarkId::Gerard => gerard(),
    })
}

/// Looks up a benchmark by name and builds it.
pub fn build_by_name(
    name: &str,
    mu: Option<f64>,
) -> Result<MixedComplementarityProblem, ProblemError> {
    build(name.parse()?, mu)
}

fn kojima_shindoh() -> MixedComplementarityProblem {
    MixedComplementarityProblem::ncp("kojima-shindoh", 4, |z| {
        let [a, b, c, d] = [z[0], z[1], z[2], z[3]];
        vec![
            3.0 * a * a + 2.0 * a * b + 2.0 * b * b + c + 3.0 * d - 6.0,
            2.0 * a * a + b * b + a + 10.0 * c + 2.0 * d - 2.0,
            3.0 * a * a + a * b + 2.0 * b * b + 2.0 * c + 9.0 * d - 9.0,
            a * a + 3.0 * b * b + 2.0 * c + 3.0 * d - 3.0,
        ]
    })
    .with_jacobian(|z| {
        let [a, b] = [z[0], z[1]];
        DenseMatrix::from_rows(&[
            [6.0 * a + 2.0 * b, 2.0 * a + 4.0 * b, 1.0, 3.0],
            [4.0 * a + 1.0, 2.0 * b, 10.0, 2.0],
            [6.0 * a + b, a + 4.0 * b, 2.0, 9.0],
            [2.0 * a, 6.0 * b, 2.0, 3.0],
        ])
    })
}

const GOULD_MATRIX: [[f64; 4]; 4] = [
    [-4.0, 0.0, 3.0, 1.0],
    [0.0, 4.0, 1.0, 1.0],
    [-3.0, -1.0, 0.0, 0.0],
    [-1.0, -1.0, 0.0, 0.0],
];

// z = (x1, x2, λ1, λ2); the first row reads −4(x1 − 1/4) + 3λ1 + λ2.
// The constraint 6x1 + 2x2 ≤ 3 enters halved, as 3/2 − 3x1 − x2 ≥ 0: its
// gradient is then exactly the (3, 1) multiplying λ1 in the first two rows,
// and the reference residual values at the three roots are reproduced.
fn gould() -> MixedComplementarityProblem {
    MixedComplementarityProblem::ncp("gould", 4, |z| {
        let [x1, x2, l1, l2] = [z[0], z[1], z[2], z[3]];
        vec![
            -4.0 * (x1 - 0.25) + 3.0 * l1 + l2,
            4.0 * (x2 - 0.5) + l1 + l2,
            1.5 - 3.0 * x1 - x2,
            1.0 - x1 - x2,
        ]
    })
    .with_jacobian(|_| DenseMatrix::from_rows(&GOULD_MATRIX))
}

const AGGARWAL_A: [[f64; 2]; 2] = [[30.0, 20.0], [10.0, 25.0]];
const AGGARWAL_B: [[f64; 2]; 2] = [[30.0, 10.0], [20.0, 25.0]];

// z = (x, y) with F_μ = (μ A y − e, μ Bᵀ x − e).
fn aggarwal(mu: f64) -> MixedComplementarityProblem {
    let (a, b) = (AGGARWAL_A, AGGARWAL_B);
    MixedComplementarityProblem::ncp("aggarwal", 4, move |z| {
        let (x, y) = (&z[..2], &z[2..]);
        vec![
            mu * (a[0][0] * y[0] + a[0][1] * y[1]) - 1.0,
            mu * (a[1][0] * y[0] + a[1][1] * y[1]) - 1.0,
            mu * (b[0][0] * x[0] + b[1][0] * x[1]) - 1.0,
            mu * (b[0][1] * x[0] + b[1][1] * x[1]) - 1.0,
        ]
    })
    .with_jacobian(move |_| {
        DenseMatrix::from_rows(&[
            [0.0, 0.0, mu * a[0][0], mu * a[0][1]],
            [0.0, 0.0, mu * a[1][0], mu * a[1][1]],
            [mu * b[0][0], mu * b[1][0], 0.0, 0.0],
            [mu * b[0][1], mu * b[1][1], 0.0, 0.0],
        ])
    })
    .with_parameter(mu)
}

/// Indices of the equilibrium prices in the Gérard state vector.
pub const GERARD_PRICE_INDICES: [usize; 2] = [5, 6];

// z = (x0, x11, x12, y1, y2, π1, π2, u4, u5, θ).
fn gerard_residual(z: &[f64]) -> Vec<f64> {
    let [x0, x11, x12, y1, y2, p1, p2, u4, u5, th] =
        [z[0], z[1], z[2], z[3], z[4], z[5], z[6], z[7], z[8], z[9]];
    let a = p1 - 11.5 * x0;
    let b = p2 - 11.5 * x0;
    let c = p2 - 3.5 * x12;
    let w1 = p1 * (x0 + x11) - 5.75 * x0 * x0 - 0.5 * x11 * x11;
    let w2 = p2 * (x0 + x12) - 5.75 * x0 * x0 - 1.75 * x12 * x12;
    vec![
        -(0.75 * a + 0.25 * b) * u4 - (0.25 * a + 0.75 * b) * u5,
        -0.75 * (p1 - x11) * u4 - 0.25 * (p1 - x11) * u5,
        -0.25 * c * u4 - 0.75 * c * u5,
        -(4.0 - p1 - 2.0 * y1),
        -(9.6 - p2 - 10.0 * y2),
        x0 + x11 - y1,
        x0 + x12 - y2,
        0.75 * w1 + 0.25 * w2 - th,
        0.25 * w1 + 0.75 * w2 - th,
        u4 + u5 - 1.0,
    ]
}

fn gerard_jacobian(z: &[f64]) -> DenseMatrix {
    let [x0, x11, x12, _, _, p1, p2, u4, u5, _] =
        [z[0], z[1], z[2], z[3], z[4], z[5], z[6], z[7], z[8], z[9]];
    let a = p1 - 11.5 * x0;
    let b = p2 - 11.5 * x0;
    let c = p2 - 3.5 * x12;
    let mut j = DenseMatrix::zeros(10, 10);

    j[(0, 0)] = 11.5 * (u4 + u5);
    j[(0, 5)] = -0.75 * u4 - 0.25 * u5;
    j[(0, 6)] = -0.25 * u4 - 0.75 * u5;
    j[(0, 7)] = -(0.75 * a + 0.25 * b);
    j[(0, 8)] = -(0.25 * a + 0.75 * b);

    j[(1, 1)] = 0.75 * u4 + 0.25 * u5;
    j[(1, 5)] = -(0.75 * u4 + 0.25 * u5);
    j[(1, 7)] = -0.75 * (p1 - x11);
    j[(1, 8)] = -0.25 * (p1 - x11);

    j[(2, 2)] = 3.5 * (0.25 * u4 + 0.75 * u5);
    j[(2, 6)] = -(0.25 * u4 + 0.75 * u5);
    j[(2, 7)] = -0.25 * c;
    j[(2, 8)] = -0.75 * c;

    j[(3, 3)] = 2.0;
    j[(3, 5)] = 1.0;
    j[(4, 4)] = 10.0;
    j[(4, 6)] = 1.0;

    j[(5, 0)] = 1.0;
    j[(5, 1)] = 1.0;
    j[(5, 3)] = -1.0;
    j[(6, 0)] = 1.0;
    j[(6, 2)] = 1.0;
    j[(6, 4)] = -1.0;

    let mut dw1 = [0.0; 10];
    dw1[0] = p1 - 11.5 * x0;
    dw1[1] = p1 - x11;
    dw1[5] = x0 + x11;
    let mut dw2 = [0.0; 10];
    dw2[0] = p2 - 11.5 * x0;
    dw2[2] = p2 - 3.5 * x12;
    dw2[6] = x0 + x12;
    for k in 0..10 {
        j[(7, k)] = 0.75 * dw1[k] + 0.25 * dw2[k];
        j[(8, k)] = 0.25 * dw1[k] + 0.75 * dw2[k];
    }
    j[(7, 9)] = -1.0;
    j[(8, 9)] = -1.0;

    j[(9, 7)] = 1.0;
    j[(9, 8)] = 1.0;
    j
}

fn gerard() -> MixedComplementarityProblem {
    let mut lower = vec![0.0; 10];
    lower[9] = f64::NEG_INFINITY;
    MixedComplementarityProblem::new("gerard", 10, gerard_residual)
        .with_jacobian(gerard_jacobian)
        .with_bounds(lower, vec![f64::INFINITY; 10])
        .expect("static bounds are valid")
}

/// Exactly known solutions, where available (Aggarwal at `μ = 1`).
pub fn known_solutions(id: BenchmarkId) -> Vec<Vec<f64>> {
    let s6 = 6f64.sqrt();
    match id {
        BenchmarkId::KojimaShindoh => vec![vec![1.0, 0.0, 3.0, 0.0], vec![s6 / 2.0, 0.0, 0.0, 0.5]],
        BenchmarkId::Gould => vec![
            vec![0.25, 0.5, 0.0, 0.0],
            vec![0.0, 0.5, 0.0, 0.0],
            vec![11.0 / 32.0, 15.0 / 32.0, 0.125, 0.0],
        ],
        BenchmarkId::Aggarwal => vec![
            vec![0.0, 0.05, 0.1, 0.0],
            vec![1.0 / 110.0, 4.0 / 110.0, 1.0 / 110.0, 4.0 / 110.0],
            vec![0.1, 0.0, 0.0, 0.05],
        ],
        BenchmarkId::Gerard => Vec::new(),
    }
}
