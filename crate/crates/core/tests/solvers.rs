mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use splinetraj::solvers::{solve_lp, solve_lp_lex, solve_qp, LpProblem, QpProblem, SolveStatus};
use splinetraj::Error;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn qp_matches_active_set_enumeration(seed in any::<u64>()) {
        let p = random_qp(&mut rng(seed));
        let res = solve_qp(&p).unwrap();
        prop_assert!(res.is_optimal());
        let want = qp_bruteforce(&p).expect("feasible by construction");
        let x = DVector::from_vec(res.x.clone());
        prop_assert!((&x - &want).amax() <= 1e-7 * (1.0 + want.amax()), "{} vs {}", x, want);
    }

    #[test]
    fn lp_matches_vertex_enumeration(seed in any::<u64>()) {
        let p = random_lp(&mut rng(seed));
        let res = solve_lp(&p).unwrap();
        prop_assert!(res.is_optimal());
        let want = lp_bruteforce(&p).expect("bounded and feasible by construction");
        prop_assert!((res.objective - want).abs() <= 1e-7 * (1.0 + want.abs()));
        let x = DVector::from_vec(res.x.clone());
        prop_assert!((&p.g_ineq * &x - &p.h_ineq).max() <= 1e-8);
        prop_assert!(x.iter().zip(&p.lower).all(|(v, l)| *v >= l - 1e-9));
    }

    #[test]
    fn lex_lp_optimizes_second_cost_on_optimal_face(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut p = random_lp(&mut r);
        // integer costs make ties between vertices common
        p.cost = p.cost.map(|c| c.round());
        let second = DVector::from_fn(p.cost.len(), |_, _| r.gen_range(-1.0..1.0));
        let res = solve_lp_lex(&p, &second).unwrap();
        prop_assert!(res.is_optimal());
        let verts = lp_vertices(&p);
        let best = verts.iter().map(|x| p.cost.dot(x)).fold(f64::INFINITY, f64::min);
        let face: Vec<&DVector<f64>> = verts.iter().filter(|x| p.cost.dot(x) <= best + 1e-9 * (1.0 + best.abs())).collect();
        let want = face.iter().map(|x| second.dot(x)).fold(f64::INFINITY, f64::min);
        let x = DVector::from_vec(res.x.clone());
        prop_assert!((p.cost.dot(&x) - best).abs() <= 1e-7 * (1.0 + best.abs()));
        prop_assert!((second.dot(&x) - want).abs() <= 1e-7 * (1.0 + want.abs()));
    }

    #[test]
    fn qp_is_deterministic(seed in any::<u64>()) {
        let p = random_qp(&mut rng(seed));
        prop_assert_eq!(solve_qp(&p).unwrap(), solve_qp(&p).unwrap());
    }
}

#[test]
fn qp_reports_infeasible_rows() {
    // x ≤ −1 and −x ≤ −1
    let p = QpProblem {
        hessian: DMatrix::identity(1, 1),
        linear: DVector::zeros(1),
        g_ineq: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        h_ineq: DVector::from_vec(vec![-1.0, -1.0]),
        a_eq: DMatrix::zeros(0, 1),
        b_eq: DVector::zeros(0),
    };
    assert_eq!(solve_qp(&p).unwrap().status, SolveStatus::Infeasible);
}

#[test]
fn lp_unbounded_direction_is_an_error() {
    let p = LpProblem::new(
        DVector::from_vec(vec![-1.0, 0.0]),
        DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        DVector::from_vec(vec![1.0]),
        vec![0.0, 0.0],
    );
    assert!(matches!(solve_lp(&p), Err(Error::Unbounded)));
}
