use proptest::prelude::*;

use ssdeflate::continuation::{
    deflated_search_with, DeflationSettings, McpSystem, ProgressEvent, SearchOptions, SolutionSet,
};
use ssdeflate::deflation::{DeflationState, NormSpec};
use ssdeflate::linalg;
use ssdeflate::problems::{build, known_solutions, BenchmarkId};
use ssdeflate::reformulate::{assemble_residual, NcpFunctionKind};
use ssdeflate::solver::{solve, LineSearch, SemismoothSystem, SolverConfig};

const SMALL: [BenchmarkId; 3] = [
    BenchmarkId::KojimaShindoh,
    BenchmarkId::Gould,
    BenchmarkId::Aggarwal,
];

fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = linalg::norm2(&v);
    (n > 1e-3).then(|| v.iter().map(|x| x / n).collect())
}

#[test]
fn known_roots_solve_the_reformulation() {
    for id in SMALL {
        let problem = build(id, None).unwrap();
        for r in known_solutions(id) {
            let phi = assemble_residual(&problem, &r, NcpFunctionKind::FischerBurmeister).unwrap();
            assert!(linalg::norm2(&phi) <= 1e-12, "{id}: {r:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn converged_roots_are_complementary(
        which in 0usize..3,
        start in prop::collection::vec(0.0f64..2.0, 4),
        backtrack in any::<bool>(),
    ) {
        let problem = build(SMALL[which], None).unwrap();
        let system = McpSystem::new(&problem, NcpFunctionKind::FischerBurmeister);
        let line_search = if backtrack { LineSearch::Backtracking } else { LineSearch::None };
        // the relative test alone would accept ‖Φ‖ ≈ 1e-8·‖Φ(z₀)‖, above the
        // complementarity tolerance checked below
        let config = SolverConfig {
            rtol: f64::MIN_POSITIVE,
            ..SolverConfig::default()
        };
        let result = solve(&system, &start, &config.with_line_search(line_search));
        if backtrack {
            for w in result.residual_history.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }
        if result.converged() {
            let z = &result.solution;
            let f = problem.eval(z).unwrap();
            for i in 0..4 {
                prop_assert!(z[i] >= -1e-8 && f[i] >= -1e-8, "{z:?} {f:?}");
                prop_assert!((z[i] * f[i]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn deflation_preserves_roots(
        roots in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..4),
        z in prop::collection::vec(-3.0f64..3.0, 3),
        f in prop::collection::vec(-1.0f64..1.0, 3),
        shift in prop::sample::select(vec![0.0, 1.0]),
    ) {
        let mut state = DeflationState::new(2.0, shift, NormSpec::Euclidean).unwrap();
        for r in roots {
            state.push_root(r).unwrap();
        }
        prop_assume!(state.roots().iter().all(|r| linalg::norm2(&linalg::sub(&z, r)) > 1e-3));
        let alpha = state.factor(&z).unwrap();
        prop_assert!(alpha > 0.0);
        let zero = state.deflated_residual(&[0.0; 3], &z).unwrap();
        prop_assert!(zero.iter().all(|v| *v == 0.0));
        let g = state.deflated_residual(&f, &z).unwrap();
        prop_assert_eq!(linalg::norm2(&g) == 0.0, linalg::norm2(&f) == 0.0);
    }

    // The deflated residual stays away from zero as z approaches a deflated
    // root along a ray; for p = 2 it grows.
    #[test]
    fn deflated_residual_bounded_below_near_roots(
        which in 0usize..3,
        root in 0usize..3,
        dir in prop::collection::vec(-1.0f64..1.0, 4),
        shift in prop::sample::select(vec![0.0, 1.0]),
    ) {
        let id = SMALL[which];
        let roots = known_solutions(id);
        let r = &roots[root % roots.len()];
        let Some(d) = unit(dir) else { return Ok(()) };
        let problem = build(id, None).unwrap();
        let system = McpSystem::new(&problem, NcpFunctionKind::FischerBurmeister);
        let mut state = DeflationState::new(2.0, shift, NormSpec::Euclidean).unwrap();
        state.push_root(r.clone()).unwrap();
        let values: Vec<f64> = (3..=18)
            .map(|k| {
                let t = 10f64.powf(-(k as f64) / 3.0);
                let z: Vec<f64> = r.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                linalg::norm2(&state.deflated_residual(&system.residual(&z).unwrap(), &z).unwrap())
            })
            .collect();
        let farthest = values[0];
        prop_assert!(farthest > 0.0);
        prop_assert!(values.iter().all(|v| *v >= 0.1 * farthest), "{values:?}");
    }

    #[test]
    fn search_returns_distinct_verified_roots(
        which in 0usize..2,
        guesses in prop::collection::vec(prop::collection::vec(0.0f64..1.5, 4), 1..4),
    ) {
        let problem = build(SMALL[which], None).unwrap();
        let system = McpSystem::new(&problem, NcpFunctionKind::FischerBurmeister);
        let settings = DeflationSettings::default();
        let config = SolverConfig::default();
        let mut found = Vec::new();
        let set = deflated_search_with(
            &system,
            &guesses,
            &settings,
            &config,
            SolutionSet::new(),
            &SearchOptions::default(),
            &mut |e| {
                if let ProgressEvent::RootFound { index, .. } = e {
                    found.push(*index);
                }
            },
        )
        .unwrap();
        prop_assert_eq!(found, (0..set.len()).collect::<Vec<_>>());
        let roots: Vec<&[f64]> = set.roots().collect();
        for (i, a) in roots.iter().enumerate() {
            prop_assert!(linalg::norm2(&system.residual(a).unwrap()) <= config.atol);
            for b in &roots[i + 1..] {
                let gap = linalg::norm2(&linalg::sub(a, b));
                prop_assert!(gap > settings.distinctness_tol * (1.0 + linalg::norm2(a)));
            }
        }
    }
}
