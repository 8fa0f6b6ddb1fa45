//! Property tests on invariants of the public types.

use kdvtau::battery::members;
use kdvtau::config::RunConfig;
use kdvtau::flow::{Convention, FlowGrid, Provenance};
use kdvtau::{tau_det, tau_product, GammaElement, Route, TauConfig, TauResult, C64};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = C64> {
    (2.5f64..6.0, 0.05f64..1.5).prop_map(|(r, th)| C64::from_polar(r, th))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn herglotz_sign_and_symmetry(z in point(), k in 0usize..3, flip in any::<bool>()) {
        let m = &members()[k].m;
        let z = if flip { -z.conj() } else { z };
        let v = m.eval(z).unwrap();
        prop_assert!(v.im * z.im > 0.0);
        let w = m.eval(z.conj()).unwrap();
        prop_assert!((w - v.conj()).norm() <= 1e-12 * v.norm());
    }

    #[test]
    fn tau_product_is_symmetric(a in point(), b in point(), k in 0usize..3) {
        prop_assume!((a - b).norm() > 0.1);
        let m = &members()[k].m;
        let ab = tau_product(m, &[a, b]).unwrap();
        let ba = tau_product(m, &[b, a]).unwrap();
        prop_assert!(ab.rel_diff(&ba) < 1e-12);
    }

    #[test]
    fn tau_mul_div_inverse(l1 in -5.0f64..5.0, t1 in 0.0f64..6.28, l2 in -5.0f64..5.0, t2 in 0.0f64..6.28) {
        let a = TauResult::from_value(C64::from_polar(l1.exp(), t1), Route::Determinant);
        let b = TauResult::from_value(C64::from_polar(l2.exp(), t2), Route::Determinant);
        prop_assert!(a.mul(&b).div(&b).rel_diff(&a) < 1e-13);
    }

    #[test]
    fn gamma_inverse(h1 in -1.0f64..1.0, h3 in -0.5f64..0.5, z in point()) {
        let mut g = GammaElement::q_product(&[C64::new(3.0, 0.5)]);
        g.exp_part = vec![C64::new(h1, 0.0), C64::new(0.0, 0.0), C64::new(h3, 0.0)];
        let z = z * 0.3;
        let one = g.eval(z).unwrap() * g.eval_inv(z).unwrap();
        prop_assert!((one - 1.0).norm() < 1e-12);
    }

    #[test]
    fn config_round_trip(seed in any::<u64>(), w in 1e-3f64..10.0, xi in -5.0f64..5.0, step in 1e-3f64..1.0) {
        let mut c = RunConfig::default();
        c.seed = seed;
        c.m.masses = vec![[xi, w]];
        c.flow.x.step = step;
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn csv_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 6)) {
        let grid = FlowGrid {
            x_nodes: vec![-0.1, 0.2, 0.7],
            t_nodes: vec![0.0, 1.0 / 3.0],
            q_values: vals.chunks(2).map(|c| c.to_vec()).collect(),
            pole_flags: vec![vec![false; 2]; 3],
            provenance: Provenance {
                m_description: String::new(),
                config_hash: String::new(),
                convention: Convention::Kdv,
                max_imag_residue: 0.0,
                anchors: vec![],
            },
        };
        let back = FlowGrid::from_csv(&grid.to_csv()).unwrap();
        prop_assert_eq!(back.q_values, grid.q_values);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn determinant_matches_product(a in point(), b in point(), k in 0usize..3) {
        prop_assume!((a - b).norm() > 0.1);
        let m = &members()[k].m;
        let want = tau_product(m, &[a, b]).unwrap();
        let got = tau_det(m, &GammaElement::q_product(&[a, b]), &TauConfig::with_nodes(1.0, 128)).unwrap();
        prop_assert!(got.rel_diff(&want) < 1e-8, "rel diff {:e}", got.rel_diff(&want));
    }
}
