use cad_core::courant::random::{random_poly, random_section};
use cad_core::courant::{
    anchor_transpose, axiom_residuals, connection_curvature, pairing, shift_splitting, std_bracket, twisted_bracket, ClosedThreeForm,
    LagrangianFrame,
};
use cad_core::duality::{group_distance, lift, project, DualityScenario, SweepOrder};
use cad_core::equivariant::DoubleModel;
use cad_core::liealg::{aff1_constants, build_semiabelian_double, su2_constants, MatrixGroupModel, StructureConstants};
use cad_core::linalg;
use cad_core::poly::Form;
use cad_core::reduction::{graph_subspace, Side, SplittingRule};
use cad_core::sampling::{cube, halton_box};
use cad_core::sigma::{solve_sr, InitialData, LightConeLattice};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scaled(c: &StructureConstants, s: f64) -> StructureConstants {
    c.iter().map(|a| a.iter().map(|b| b.iter().map(|v| v * s).collect()).collect()).collect()
}

fn small_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-0.3f64..0.3, n)
}

fn closed_h(n: usize, seed: u64) -> ClosedThreeForm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ClosedThreeForm::new(Form::term(n, &[0, 1], random_poly(&mut rng, n, 2)).d()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rescaled_doubles_validate(s in 0.2f64..3.0, su2 in any::<bool>()) {
        let c = scaled(&if su2 { su2_constants() } else { aff1_constants() }, s);
        let t = build_semiabelian_double(&c).unwrap();
        let r = t.algebra().validate();
        prop_assert!(r.passes(), "{r:?}");
        prop_assert!(r.jacobi <= 1e-12 && r.ad_invariance <= 1e-12);
        for sub in [t.g(), &t.gprime] {
            prop_assert_eq!(sub.isotropy_residual(t.algebra()), 0.0);
            prop_assert!(sub.closure_residual(t.algebra()) <= 1e-12);
            prop_assert_eq!(2 * sub.dim(), t.algebra().dim());
        }
    }

    #[test]
    fn adjoint_action_preserves_pairing(m in small_vec(6), x in small_vec(6), y in small_vec(6)) {
        let c = su2_constants();
        let t = build_semiabelian_double(&c).unwrap();
        let model = MatrixGroupModel::semiabelian(&c, &t, None).unwrap();
        let g = model.exp(&DVector::from_vec(m));
        let (x, y) = (DVector::from_vec(x), DVector::from_vec(y));
        let alg = t.algebra();
        let lhs = alg.pair(&model.adjoint(&g, &x).unwrap(), &model.adjoint(&g, &y).unwrap());
        prop_assert!((lhs - alg.pair(&x, &y)).abs() <= 1e-10);
    }

    #[test]
    fn factorization_inverts_multiplication(a in small_vec(2), b in small_vec(2)) {
        // the generic Newton path, not the semidirect shortcut
        let c = aff1_constants();
        let t = build_semiabelian_double(&c).unwrap();
        let sm = MatrixGroupModel::semiabelian(&c, &t, None).unwrap();
        let m = MatrixGroupModel::new(t.algebra().clone(), sm.generators().to_vec(), 1e-12).unwrap();
        let k = m.exp(&(&t.gprime.basis * DVector::from_vec(a)));
        let q = m.exp(&(&t.g().basis * DVector::from_vec(b)));
        let f = m.factorize(&(&k * &q), &t.gprime, t.g()).unwrap();
        prop_assert!(linalg::max_abs(&(f.left - k)) <= 1e-10);
        prop_assert!(linalg::max_abs(&(f.right - q)) <= 1e-10);
    }

    #[test]
    fn exp_log_round_trip(x in small_vec(6)) {
        let c = su2_constants();
        let t = build_semiabelian_double(&c).unwrap();
        let m = MatrixGroupModel::semiabelian(&c, &t, None).unwrap();
        let x = DVector::from_vec(x);
        prop_assert!(linalg::max_abs_vec(&(m.log(&m.exp(&x)).unwrap() - &x)) <= 1e-10);
    }

    #[test]
    fn courant_axioms_hold(seed in any::<u64>(), hseed in any::<u64>()) {
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, t, u) = (random_section(&mut rng, n, 3), random_section(&mut rng, n, 3), random_section(&mut rng, n, 3));
        let f = random_poly(&mut rng, n, 3);
        let pts = halton_box(&cube(n, 1.0), 100, seed);
        let r = axiom_residuals(&closed_h(n, hseed), &s, &t, &u, &f, &pts).unwrap();
        prop_assert!(r.max() <= 1e-9, "{r:?}");
    }

    #[test]
    fn bracket_symmetric_part_is_exact(seed in any::<u64>()) {
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, t) = (random_section(&mut rng, n, 3), random_section(&mut rng, n, 3));
        let h = closed_h(n, seed ^ 1);
        let sum = twisted_bracket(&s, &t, &h).unwrap().add(&twisted_bracket(&t, &s, &h).unwrap());
        let defect = sum.sub(&anchor_transpose(Form::function(pairing(&s, &t).unwrap()).d()));
        for p in halton_box(&cube(n, 1.0), 32, seed) {
            prop_assert!(defect.max_abs_at(&p) <= 1e-10);
        }
        prop_assert_eq!(twisted_bracket(&s, &t, &ClosedThreeForm::zero(n)).unwrap(), std_bracket(&s, &t).unwrap());
    }

    #[test]
    fn splitting_shift_adds_d_tau(seed in any::<u64>()) {
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = Form::term(n, &[0, 1], random_poly(&mut rng, n, 3)).add(&Form::term(n, &[1, 2], random_poly(&mut rng, n, 3)));
        let sigma = LagrangianFrame::tangent(n);
        let h = closed_h(n, seed ^ 2);
        let pts = halton_box(&cube(n, 1.0), 16, seed);
        let before = connection_curvature(&sigma, &h, &pts).unwrap();
        let after = connection_curvature(&shift_splitting(&sigma, &tau).unwrap(), &h, &pts).unwrap();
        prop_assert!(after.form().sub(before.form()).sub(&tau.d()).max_abs_coef() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn lift_is_right_equivariant(seed in small_vec(3), g in small_vec(3)) {
        let model = DoubleModel::semiabelian(&su2_constants(), None).unwrap();
        let scn = DualityScenario::new(model, Side::GPrime, SplittingRule::Orthogonal, graph_subspace(&DMatrix::identity(3, 3))).unwrap();
        let lat = LightConeLattice::square(8, 0.5).unwrap();
        let data = InitialData::pcm_geodesic(&scn.red.chart, &[0.1, -0.2, 0.15], &[0.4, 0.3, -0.5], 3);
        let f = solve_sr(&scn.background(), &lat, &data).unwrap();
        let (s, h) = (scn.fiber_element(&seed), scn.fiber_element(&g));
        let a = lift(&f, &scn, &lat, &s, SweepOrder::T2First).unwrap();
        let b = lift(&f, &scn, &lat, &(&s * &h), SweepOrder::T2First).unwrap();
        prop_assert!(project(&a.phi, &scn.red).unwrap().max_distance(&f) < 1e-10);
        let shifted = a.phi.map(|_, _, p| p * &h);
        prop_assert!(group_distance(&shifted, &b.phi, &scn).unwrap() <= 1e-9);
    }
}
