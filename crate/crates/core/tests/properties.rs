//! Property tests of the invariants the library relies on.

use approx::assert_abs_diff_eq;
use dlps_core::catalog::{free_particle, harmonic_oscillator};
use dlps_core::diagnostics::momentum_evolution_check;
use dlps_core::dlps::{
    action_derivative, action_derivative_fd, build_fixed_endpoint_variation, simulate, DiscretePath,
};
use dlps_core::example_se2::{
    from_center_relative, make_full_system, make_reduced_model, make_t2_connection,
    make_t2_connection_flat, sample_configuration_pair, se2_action, t2_action, t2_chart,
    PotentialFamily, TwoBodyConfig,
};
use dlps_core::lie::{translation_action, LieGroup, Se2, Translations2, VectorTranslations, U1};
use dlps_core::reduction::{build_upsilon, project_path, reconstruct_path, reduce};
use dlps_core::scalar::inf_norm;
use dlps_core::smooth::{jacobian_fd, NewtonConfig, SmoothMap};
use dlps_core::FiberBundleModel;
use nalgebra::{dvector, Complex, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn potential() -> impl Strategy<Value = PotentialFamily> {
    prop_oneof![
        Just(PotentialFamily::Linear { a: 0.5 }),
        Just(PotentialFamily::Linear { a: 1.0 }),
        Just(PotentialFamily::Quadratic { c: 0.25 }),
    ]
}

fn groups() -> Vec<Arc<dyn LieGroup<f64>>> {
    vec![
        Arc::new(Se2),
        Arc::new(U1),
        Arc::new(Translations2),
        Arc::new(VectorTranslations(3)),
    ]
}

fn two_body_path(
    f: PotentialFamily,
    seed: u64,
    n: usize,
) -> (TwoBodyConfig<f64>, DiscretePath<f64>) {
    let cfg = TwoBodyConfig::with_family(0.1, f).unwrap();
    let sys = make_full_system(&cfg).unwrap();
    let (q0, q1) = sample_configuration_pair::<f64>(&mut rng(seed));
    let path = simulate(&sys, &q0, &q1, n, &NewtonConfig::default())
        .unwrap()
        .path;
    (cfg, path)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn group_axioms(seed in any::<u64>()) {
        let mut r = rng(seed);
        for g in groups() {
            let (a, b, c) = (g.sample(&mut r, 3.0), g.sample(&mut r, 3.0), g.sample(&mut r, 3.0));
            let left = g.compose(&g.compose(&a, &b), &c);
            let right = g.compose(&a, &g.compose(&b, &c));
            prop_assert!(g.distance(&left, &right) < 1e-12, "{} associativity", g.name());
            prop_assert!(g.distance(&g.compose(&a, &g.identity()), &a) < 1e-14);
            prop_assert!(g.distance(&g.compose(&g.inverse(&a), &a), &g.identity()) < 1e-12);
            let zero = DVector::zeros(g.dim());
            prop_assert!(g.distance(&g.exp(&zero), &g.identity()) < 1e-15);
        }
    }

    #[test]
    fn exp_is_a_one_parameter_subgroup(xi in prop::collection::vec(-2.0f64..2.0, 3), s in -1.0f64..1.0, t in -1.0f64..1.0) {
        let g = Se2;
        let xi = DVector::from_vec(xi);
        let sum = LieGroup::<f64>::exp(&g, &(&xi * (s + t)));
        let prod = g.compose(&g.exp(&(&xi * s)), &g.exp(&(&xi * t)));
        prop_assert!(g.distance(&sum, &prod) < 1e-12);
    }

    #[test]
    fn action_axioms(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (q, _) = sample_configuration_pair::<f64>(&mut r);
        for act in [se2_action::<f64>(), t2_action()] {
            prop_assert!(act.axiom_violation(std::slice::from_ref(&q), &mut r) < 1e-12);
        }
        prop_assert!(translation_action::<f64>(4).axiom_violation(&[q], &mut r) < 1e-12);
    }

    #[test]
    fn fd_derivatives_of_polynomials(c in prop::collection::vec(-2.0f64..2.0, 6), x in prop::collection::vec(-1.5f64..1.5, 2)) {
        // p(x, y) = c0 + c1 x + c2 y + c3 x^2 + c4 x y + c5 y^3
        let cc = c.clone();
        let f = SmoothMap::<f64>::scalar(2, move |v| {
            let (x, y) = (v[0], v[1]);
            Ok(cc[0] + cc[1] * x + cc[2] * y + cc[3] * x * x + cc[4] * x * y + cc[5] * y.powi(3))
        });
        let p = DVector::from_vec(x);
        let exact = dvector![c[1] + 2.0 * c[3] * p[0] + c[4] * p[1], c[2] + c[4] * p[0] + 3.0 * c[5] * p[1] * p[1]];
        let fd = jacobian_fd(&f, &p).unwrap();
        prop_assert!(inf_norm(&(fd.row(0).transpose() - &exact)) < 1e-8);
        let hess = f.hessian(&p).unwrap();
        prop_assert!((hess[(0, 1)] - c[4]).abs() < 1e-5);
        prop_assert!((hess[(1, 1)] - 6.0 * c[5] * p[1]).abs() < 1e-5);
    }

    #[test]
    fn section_is_right_inverse_of_upsilon(seed in any::<u64>()) {
        let model = make_reduced_model::<f64>();
        let sys = make_full_system(&TwoBodyConfig::with_family(0.1, PotentialFamily::Zero).unwrap()).unwrap();
        let mut r = rng(seed);
        let x = sys.sample_pair(&mut r).unwrap();
        let y = model.project_pair(&x).unwrap();
        let back = model.project_pair(&model.lift_pair(&y).unwrap()).unwrap();
        prop_assert!(y.distance(&back) < 1e-14);
        let g = Translations2.sample(&mut r, 3.0);
        prop_assert!(model.project_pair(&model.act_pair(&g, &x)).unwrap().distance(&y) < 1e-13);
    }

    #[test]
    fn connection_equivariance(seed in any::<u64>()) {
        let mut r = rng(seed);
        let closed = make_t2_connection::<f64>();
        let skewed = make_t2_connection_flat::<f64>(1.0, 2.0).unwrap();
        prop_assert!(closed.check_equivariance(5, &mut r).max_violation < 1e-10);
        prop_assert!(skewed.check_equivariance(5, &mut r).max_violation < 1e-10);
        prop_assert!(skewed.lift_violation(5, &mut r).unwrap() < 1e-10);
    }

    #[test]
    fn momentum_is_conserved_for_dms(q in prop::collection::vec(-1.0f64..1.0, 4)) {
        let sys = free_particle::<f64>(2, 0.2).unwrap();
        let traj = simulate(&sys, &dvector![q[0], q[1]], &dvector![q[2], q[3]], 10, &NewtonConfig::default()).unwrap();
        let rep = momentum_evolution_check(&sys, &translation_action(2), &traj.path, 1e-10).unwrap();
        prop_assert!(rep.drift_max < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn variational_principle_on_shipped_systems(seed in any::<u64>(), f in potential()) {
        let mut r = rng(seed);
        let osc = harmonic_oscillator::<f64>(2, 0.1, 1.5).unwrap();
        let (x0, x1) = (osc.sample_pair(&mut r).unwrap().eps, osc.sample_pair(&mut r).unwrap().eps);
        let osc_path = simulate(&osc, &x0, &(&x0 + (x1 - &x0) * 0.1), 8, &NewtonConfig::default()).unwrap().path;
        let (cfg, path) = two_body_path(f, seed, 8);
        let full = make_full_system(&cfg).unwrap();
        let red = reduce(&full, &make_reduced_model()).unwrap();
        let red_path = project_path(&red.model, &path).unwrap();
        for (sys, p) in [(&osc, &osc_path), (&full, &path), (&red.system, &red_path)] {
            let tilde: Vec<DVector<f64>> = (0..p.len() - 1)
                .map(|k| DVector::from_fn(sys.eps_dim(), |i, _| ((seed as f64) * 0.37 + (k * 7 + i) as f64).sin()))
                .collect();
            let var = build_fixed_endpoint_variation(sys, p, &tilde).unwrap();
            prop_assert!(action_derivative_fd(sys, p, &var).unwrap().abs() < 1e-6);
            prop_assert!(action_derivative(sys, p, &var).unwrap().abs() < 1e-8);
        }
    }

    #[test]
    fn reconstruction_inverts_projection(seed in any::<u64>(), f in potential()) {
        let (_, path) = two_body_path(f, seed, 15);
        let model = make_reduced_model::<f64>();
        let projected = project_path(&model, &path).unwrap();
        let back = reconstruct_path(&model, &projected, &path.pairs[0].eps, &path.pairs[0].m).unwrap();
        prop_assert!(back.max_distance(&path) < 1e-8);
    }

    #[test]
    fn reconstruction_is_equivariant(seed in any::<u64>(), f in potential()) {
        let (_, path) = two_body_path(f, seed, 10);
        let model = make_reduced_model::<f64>();
        let g = Translations2.sample(&mut rng(seed ^ 1), 3.0);
        let projected = project_path(&model, &path).unwrap();
        let start = model.act_pair(&g, &path.pairs[0]);
        let moved = reconstruct_path(&model, &projected, &start.eps, &start.m).unwrap();
        for (a, b) in moved.pairs.iter().zip(&path.pairs) {
            prop_assert!(a.distance(&model.act_pair(&g, b)) < 1e-10);
        }
    }

    #[test]
    fn reconstruction_does_not_depend_on_the_connection(seed in any::<u64>(), f in potential()) {
        // a different (mass-weighted) connection gives a different reduced
        // space but the same round trip
        let (cfg, path) = two_body_path(f, seed, 10);
        let full = make_full_system(&cfg).unwrap();
        let model = build_upsilon(
            &make_t2_connection_flat(1.0, 2.0).unwrap(),
            &full,
            t2_chart(),
            FiberBundleModel::product(2, 2),
            t2_action(),
            &mut rng(seed),
        )
        .unwrap();
        let projected = project_path(&model, &path).unwrap();
        let back = reconstruct_path(&model, &projected, &path.pairs[0].eps, &path.pairs[0].m).unwrap();
        prop_assert!(back.max_distance(&path) < 1e-8);
    }
}

#[test]
fn center_relative_coordinates_round_trip() {
    let q = from_center_relative(Complex::new(0.5, -1.0), Complex::new(2f64.sqrt(), 0.0));
    assert_abs_diff_eq!(q[0], 1.5, epsilon = 1e-15);
    assert_abs_diff_eq!(q[2], -0.5, epsilon = 1e-15);
}

#[test]
fn single_precision_pipeline() {
    let cfg = TwoBodyConfig::<f32>::with_family(0.1, PotentialFamily::Linear { a: 0.5 }).unwrap();
    let full = make_full_system(&cfg).unwrap();
    let red = reduce(&full, &make_reduced_model()).unwrap();
    let q0 = DVector::from_vec(vec![1.0f32, 0.0, -1.0, 0.0]);
    let q1 = DVector::from_vec(vec![1.02f32, 0.1, -0.98, -0.08]);
    let newton = NewtonConfig::default().with_tol(1e-4);
    let path = simulate(&full, &q0, &q1, 10, &newton).unwrap().path;
    let projected = project_path(&red.model, &path).unwrap();
    let back = reconstruct_path(&red.model, &projected, &q0, &q1).unwrap();
    assert!(back.max_distance(&path) < 1e-4);
    let y0 = &projected.pairs[0];
    let reduced = simulate(&red.system, &y0.eps, &y0.m, 10, &newton)
        .unwrap()
        .path;
    assert!(reduced.max_distance(&projected) < 1e-3);
}
