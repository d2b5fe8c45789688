use helmtd::fd::model::{build_model, ModelKind, ModelSpec};
use helmtd::fd::second_order::build_second_order;
use helmtd::fixtures::random_helmholtz;
use helmtd::leapfrog::build_kernel;
use helmtd::precond::{apply_st_complex, window_value, WindowSpec};
use helmtd::setup::{alpha_beta, select_params};
use helmtd::ComplexVector;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cvec(v: &[(f64, f64)]) -> ComplexVector {
    ComplexVector::new(v.iter().map(|p| p.0).collect(), v.iter().map(|p| p.1).collect())
}

fn combo(a: Complex64, x: &ComplexVector, b: Complex64, y: &ComplexVector) -> ComplexVector {
    let mut z = ComplexVector::zeros(x.len());
    z.axpy(a, x);
    z.axpy(b, y);
    z
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn window_is_monotone_in_unit_interval(rho in 0.01f64..0.75, s in -0.5f64..1.5, ds in 0.0f64..0.5) {
        let a = window_value(rho, s);
        let b = window_value(rho, s + ds);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a);
        if s >= rho {
            prop_assert_eq!(a, 1.0);
        }
    }

    #[test]
    fn alpha_below_beta(x in 1e-3f64..3.0) {
        let (alpha, beta) = alpha_beta(x).unwrap();
        prop_assert!(alpha >= 1.0);
        prop_assert!(beta >= alpha);
    }

    #[test]
    fn second_order_parts_are_symmetric(
        nx in 4usize..8,
        ny in 4usize..8,
        layer in 0usize..3,
        kind in prop_oneof![Just(ModelKind::Constant), Just(ModelKind::CircularInclusion), Just(ModelKind::Layered)],
        seed in any::<u64>(),
    ) {
        let spec = ModelSpec { kind, size: vec![nx, ny], layer_width: layer, ppw: 4.0, ..ModelSpec::default() };
        let model = build_model(&spec).unwrap();
        let (op, _) = build_second_order(&model);
        let n = op.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        for part in [op.re(), op.im()] {
            let mut px = vec![0.0; n];
            let mut py = vec![0.0; n];
            part.apply(&x, &mut px);
            part.apply(&y, &mut py);
            let scale = dot(&px, &px).sqrt() * dot(&y, &y).sqrt() + 1e-300;
            prop_assert!((dot(&px, &y) - dot(&x, &py)).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn complex_mode_is_complex_linear(
        seed in any::<u64>(),
        f in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6),
        g in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6),
        a in (-2.0f64..2.0, -2.0f64..2.0),
        b in (-2.0f64..2.0, -2.0f64..2.0),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_helmholtz(6, seed % 2 == 0, &mut rng).unwrap();
        let bounds = *h.bounds_hint().unwrap();
        let params = select_params(&h, &bounds, 0.95).unwrap();
        let kernel = build_kernel(&h, &params, true).unwrap();
        let window = WindowSpec::new(0.25, 4);
        let (f, g) = (cvec(&f), cvec(&g));
        let (a, b) = (Complex64::new(a.0, a.1), Complex64::new(b.0, b.1));
        let sf = apply_st_complex(&kernel, &params, &window, &f).unwrap();
        let sg = apply_st_complex(&kernel, &params, &window, &g).unwrap();
        let lhs = apply_st_complex(&kernel, &params, &window, &combo(a, &f, b, &g)).unwrap();
        let rhs = combo(a, &sf, b, &sg);
        let scale = a.norm() * sf.norm() + b.norm() * sg.norm() + 1e-300;
        prop_assert!(lhs.sub(&rhs).norm() <= 1e-12 * scale);
    }
}
