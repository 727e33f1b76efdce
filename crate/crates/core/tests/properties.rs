use hyflow_core::discrete::{corollary1_params, in_discrete_flow_set};
use hyflow_core::structure_i::u_i;
use hyflow_core::structure_ii::u_ii;
use hyflow_core::{make_lmse, sigma, HybridState, HybridStructure, ParamsI, ParamsII, Problem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use std::sync::OnceLock;

const PARAMS_I: ParamsI = ParamsI {
    alpha: 0.2,
    beta: 0.1356,
    u_lo: -14.352,
    u_hi: 15.1511,
};
const PARAMS_II: ParamsII = ParamsII {
    alpha: 0.2,
    beta: 0.0298,
    u_lo: -0.1861,
    u_hi: 5.7457,
};

struct Instance {
    problem: Problem,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

fn instance() -> &'static Instance {
    static CELL: OnceLock<Instance> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut rng = ChaCha20Rng::seed_from_u64(53);
        let a = DMatrix::from_row_iterator(
            50,
            5,
            (0..250).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        let b = DVector::from_fn(50, |_, _| rng.sample(StandardNormal));
        Instance {
            problem: make_lmse(50, 5, 53).unwrap(),
            a,
            b,
        }
    })
}

fn point() -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-5.0f64..5.0, 5).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn value_and_gradient_match_raw_data(x in point()) {
        let inst = instance();
        let r = &inst.a * &x - &inst.b;
        let f = r.norm_squared();
        prop_assert!((inst.problem.value(&x) - f).abs() <= 1e-10 * f.max(1.0));
        let g = 2.0 * inst.a.transpose() * r;
        prop_assert!((inst.problem.gradient(&x) - &g).norm() <= 1e-9 * g.norm().max(1.0));
    }

    #[test]
    fn gap_is_sandwiched_by_gradient_norm(x in point()) {
        let p = &instance().problem;
        let c = p.constants();
        let gap = p.gap(&x).unwrap();
        let gsq = p.gradient(&x).norm_squared();
        prop_assert!(gap >= 0.0);
        prop_assert!(0.5 * gsq >= c.mu_f * gap * (1.0 - 1e-10));
        prop_assert!(0.5 * gsq <= c.l_f * gap * (1.0 + 1e-10));
    }

    #[test]
    fn gradient_is_lipschitz(x in point(), y in point()) {
        let p = &instance().problem;
        let lhs = (p.gradient(&x) - p.gradient(&y)).norm();
        prop_assert!(lhs <= p.constants().l_f * (&x - &y).norm() * (1.0 + 1e-10) + 1e-12);
    }

    #[test]
    fn post_jump_sigma_is_nonpositive(x in point()) {
        let p = &instance().problem;
        let s0 = HybridState::new(x.clone(), DVector::zeros(5), 0.0);
        let s1 = PARAMS_I.jump(p, &s0).unwrap();
        prop_assert!(sigma(&s1, PARAMS_I.alpha, p).unwrap() <= 0.0);
        let s2 = PARAMS_II.jump(p, &s0).unwrap();
        prop_assert!(sigma(&s2, PARAMS_II.alpha, p).unwrap() <= 0.0);
    }

    #[test]
    fn post_jump_state_is_interior(x in point(), v in point()) {
        let p = &instance().problem;
        let s0 = HybridState::new(x, v, 0.0);
        for (margin, label) in [
            (PARAMS_I.jump(p, &s0).and_then(|s| PARAMS_I.margin(p, &s.x1, &s.x2)), "I"),
            (PARAMS_II.jump(p, &s0).and_then(|s| PARAMS_II.margin(p, &s.x1, &s.x2)), "II"),
        ] {
            let m = margin.unwrap();
            prop_assert!(m > 0.0, "structure {label}: margin {m}");
        }
    }

    #[test]
    fn feedback_laws_match_direct_formulas(x in point(), v in point()) {
        let inst = instance();
        let g = 2.0 * inst.a.transpose() * (&inst.a * &x - &inst.b);
        let av = &inst.a * &v;
        let curv = 2.0 * av.norm_squared();
        let inner = -g.dot(&v);
        prop_assume!(inner.abs() > 1e-6 * g.norm() * v.norm());
        let alpha = 0.2;
        let want_i = alpha + (g.norm_squared() - curv) / inner;
        let got_i = u_i(&x, &v, alpha, &inst.problem).unwrap();
        prop_assert!((got_i - want_i).abs() <= 1e-7 * want_i.abs().max(1.0), "{got_i} vs {want_i}");
        let want_ii = (curv + (1.0 - alpha) * inner) / g.norm_squared();
        let got_ii = u_ii(&x, &v, alpha, &inst.problem).unwrap();
        prop_assert!((got_ii - want_ii).abs() <= 1e-9 * want_ii.abs().max(1.0), "{got_ii} vs {want_ii}");
    }

    #[test]
    fn discrete_jump_lands_in_flow_set(x in point(), beta_scale in 0.5f64..1.0) {
        let p = &instance().problem;
        let l = p.constants().l_f;
        let d = corollary1_params(l, 1.0 / l).unwrap();
        let g = p.gradient(&x);
        prop_assert!(in_discrete_flow_set(&x, &(-d.beta * &g), d.c1, d.c2, p));
        // Admissible gains form the single point 1/c2 = 1/sqrt(c1).
        let smaller = -(d.beta * beta_scale) * &g;
        prop_assert!(!in_discrete_flow_set(&x, &smaller, d.c1, d.c2, p));
    }
}
