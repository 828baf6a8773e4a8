use mskin_core::collision_kernel::post_collision;
use mskin_core::ms_matrix::{build_ms_matrix, project_off_kernel, spectral_constants_at};
use mskin_core::ms_solver::{step_ctot, PeriodicGrid};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn delta_from(n: usize, vals: &[f64]) -> DMatrix<f64> {
    let mut d = DMatrix::from_element(n, n, 1.0);
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            d[(i, j)] = vals[k];
            d[(j, i)] = vals[k];
            k += 1;
        }
    }
    d
}

fn ms_case() -> impl Strategy<Value = (Vec<f64>, DMatrix<f64>, Vec<f64>)> {
    (2usize..6).prop_flat_map(|n| {
        (
            prop::collection::vec(0.01f64..3.0, n),
            prop::collection::vec(0.1f64..10.0, n * (n - 1) / 2),
            prop::collection::vec(-1.0f64..1.0, n),
        )
            .prop_map(move |(c, d, x)| (c, delta_from(n, &d), x))
    })
}

proptest! {
    #[test]
    fn ms_matrix_symmetric_rows_sum_to_zero((c, d, _x) in ms_case()) {
        let a = build_ms_matrix(&c, &d).unwrap();
        let scale = a.a.abs().max();
        prop_assert!((&a.a - a.a.transpose()).abs().max() == 0.0);
        for v in a.apply(&vec![1.0; c.len()]) {
            prop_assert!(v.abs() <= 1e-14 * scale.max(1.0));
        }
    }

    #[test]
    fn ms_matrix_negative_semidefinite((c, d, x) in ms_case()) {
        let a = build_ms_matrix(&c, &d).unwrap();
        let ax = a.apply(&x);
        let q: f64 = x.iter().zip(&ax).map(|(p, q)| p * q).sum();
        prop_assert!(q <= 1e-13 * a.a.abs().max());
        // and strictly negative off Span(1) by the Fiedler value
        let (lam, _) = spectral_constants_at(&c, &d);
        prop_assert!(lam > 0.0);
    }

    #[test]
    fn pseudo_inverse_solves_on_the_range((c, d, x) in ms_case()) {
        let a = build_ms_matrix(&c, &d).unwrap();
        let r = project_off_kernel(&x);
        let sol = a.pseudo_inverse() * nalgebra::DVector::from_column_slice(&r);
        let back = a.apply(sol.as_slice());
        let rn = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cond = a.a.abs().max() / spectral_constants_at(&c, &d).0 / c.iter().cloned().fold(f64::INFINITY, f64::min).powi(2);
        for (p, q) in back.iter().zip(&r) {
            prop_assert!((p - q).abs() <= 1e-12 * rn * cond.max(1.0));
        }
        prop_assert!(sol.sum().abs() <= 1e-10 * sol.abs().max().max(1e-300));
    }

    #[test]
    fn collisions_conserve_momentum_and_energy(
        mi in 0.5f64..8.0, mj in 0.5f64..8.0,
        v in prop::array::uniform3(-4.0f64..4.0), vs in prop::array::uniform3(-4.0f64..4.0),
        th in 0.0f64..std::f64::consts::PI, ph in 0.0f64..(2.0 * std::f64::consts::PI),
    ) {
        let s = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
        let (vp, vsp) = post_collision(mi, mj, v, vs, s).unwrap();
        let e = |a: [f64; 3]| a.iter().map(|x| x * x).sum::<f64>();
        let scale = mi * e(v) + mj * e(vs) + 1.0;
        for k in 0..3 {
            prop_assert!((mi * vp[k] + mj * vsp[k] - mi * v[k] - mj * vs[k]).abs() <= 1e-12 * scale);
        }
        prop_assert!((mi * e(vp) + mj * e(vsp) - mi * e(v) - mj * e(vs)).abs() <= 1e-12 * scale);
    }

    #[test]
    fn heat_step_keeps_mean_and_decays(coef in prop::collection::vec(-1.0f64..1.0, 6), dt in 1e-4f64..1e-1) {
        let g = PeriodicGrid::new(1, 32).unwrap();
        let f: Vec<f64> = (0..g.len())
            .map(|x| {
                let t = 2.0 * std::f64::consts::PI * g.coords(x)[0];
                coef[0] + (0..5).map(|m| coef[m + 1] * ((m + 1) as f64 * t).cos()).sum::<f64>()
            })
            .collect();
        let h = step_ctot(&g, &f, 0.3, dt);
        prop_assert!((g.mean(&h) - g.mean(&f)).abs() <= 1e-14);
        prop_assert!(g.sobolev_sq(&h, 0) <= g.sobolev_sq(&f, 0) * (1.0 + 1e-14));
        // semigroup: two half steps equal one full step
        let h2 = step_ctot(&g, &step_ctot(&g, &f, 0.3, 0.5 * dt), 0.3, 0.5 * dt);
        for (a, b) in h.iter().zip(&h2) {
            prop_assert!((a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn spectral_div_has_zero_mean(vals in prop::collection::vec(-1.0f64..1.0, 16)) {
        let g = PeriodicGrid::new(1, 16).unwrap();
        let d = g.div(&[vals]);
        prop_assert!(g.mean(&d).abs() <= 1e-14);
    }
}
