use std::f64::consts::PI;

use mskin_core::diffusion_coefficients::build_delta;
use mskin_core::mixture_core::MixtureSpec;
use mskin_core::ms_solver::*;

fn problem(masses: Vec<f64>, gamma: f64, n_x: usize) -> MsProblem {
    let spec = MixtureSpec::uniform(masses, gamma, 1.0, 1.0 / (4.0 * PI)).unwrap();
    MsProblem { grid: PeriodicGrid::new(1, n_x).unwrap(), delta: build_delta(&spec).delta_matrix(), gamma }
}

fn cosine(grid: &PeriodicGrid, a: f64, m: f64) -> Vec<f64> {
    (0..grid.len()).map(|x| a * (2.0 * PI * m * grid.coords(x)[0]).cos()).collect()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[test]
fn stationary_run_is_identically_zero() {
    let p = problem(vec![1.0, 2.0], 0.0, 32);
    let st = PerturbationState::stationary(&p.grid, &[0.4, 0.6], 1.0, 0.1);
    let cfg = SimulationConfig {
        dt: 1e-3,
        t_end: 0.01,
        s_list: vec![0, 2],
        picard: PicardConfig::default(),
        tol_e: 1e-8,
        snapshot_every: 0,
        lambda_a_samples: 10,
        seed: 1,
    };
    let out = run_simulation(&p, st, &cfg).unwrap();
    assert!(out.passed());
    for row in &out.series {
        for r in &row.reports {
            assert_eq!(r.e_s, 0.0);
            assert_eq!(r.d_s, 0.0);
        }
    }
    assert!(out.final_state.c_tilde.iter().all(|c| sup(c) == 0.0));
    // converges at once
    let o = picard_advance(&p, &out.final_state, 1e-3, &PicardConfig::default()).unwrap();
    assert_eq!(o.differences.len(), 1);
    assert_eq!(o.differences[0], 0.0);
}

#[test]
fn species_means_and_total_follow_the_heat_flow() {
    let p = problem(vec![1.0, 2.0, 3.0], 1.0, 32);
    let g = &p.grid;
    let c0 = cosine(g, 0.01, 1.0);
    let c1: Vec<f64> = cosine(g, -0.004, 1.0).iter().zip(cosine(g, 0.006, 2.0)).map(|(a, b)| a + b + 0.003).collect();
    let c2 = cosine(g, 0.002, 3.0);
    let alpha = 0.1;
    let mut st = make_well_prepared_initial_data(&p, vec![c0, c1, c2], 1.0, &[0.3, 0.3, 0.4], alpha).unwrap();
    let means0: Vec<f64> = st.c_tilde.iter().map(|c| g.mean(c)).collect();
    let ctot0 = st.ctot_tilde();
    let dt = 1e-3;
    let cfg = PicardConfig::default();
    for step in 1..=1000 {
        st = picard_advance(&p, &st, dt, &cfg).unwrap().state;
        if step % 100 == 0 {
            for (c, m0) in st.c_tilde.iter().zip(&means0) {
                assert!((g.mean(c) - m0).abs() <= 1e-10, "mean drift at step {step}");
            }
            let exact = step_ctot(g, &ctot0, alpha, st.time);
            let err = sup(&st.ctot_tilde().iter().zip(&exact).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(err <= 1e-10, "c_tot off the heat solution by {err:e}");
        }
    }
}

#[test]
fn isothermal_data_stays_isothermal() {
    let p = problem(vec![1.0, 2.0], 0.0, 32);
    let g = &p.grid;
    let c0 = cosine(g, 0.02, 1.0);
    let c1: Vec<f64> = c0.iter().map(|x| -x).collect();
    let mut st = make_well_prepared_initial_data(&p, vec![c0, c1], 1.0, &[0.5, 0.5], 0.1).unwrap();
    assert!(sup(&st.t_tilde) == 0.0);
    for _ in 0..50 {
        st = picard_advance(&p, &st, 2e-3, &PicardConfig::default()).unwrap().state;
        assert!(sup(&st.t_tilde) <= 1e-15);
        let v = recover_velocity(&p, &st).unwrap();
        // Σ c_i u_i = 0 pointwise
        for x in 0..g.len() {
            let f: f64 = (0..2).map(|i| (st.c_bar[i] + st.c_tilde[i][x]) * v.u_full[i][0][x]).sum();
            assert!(f.abs() <= 1e-14);
        }
    }
}

#[test]
fn equal_delta_decouples_into_heat_equations() {
    // equal masses and kernels: every Δ_ij is the same number δ, and with
    // c̃_tot = 0, T̃ = 0 each species solves ∂_t c̃ = (δ/c̄_tot) Δc̃
    let p = problem(vec![1.0, 1.0, 1.0], 0.0, 32);
    let g = &p.grid;
    let delta = p.delta[(0, 1)];
    assert!((p.delta[(0, 2)] - delta).abs() < 1e-15 && (p.delta[(1, 2)] - delta).abs() < 1e-15);
    let a = 0.01;
    let b = 0.005;
    let profiles = vec![
        cosine(g, a, 1.0),
        cosine(g, -a, 1.0).iter().zip(cosine(g, b, 2.0)).map(|(x, y)| x + y).collect(),
        cosine(g, -b, 2.0),
    ];
    let c_bar = [0.3, 0.3, 0.4];
    let mut st = make_well_prepared_initial_data(&p, profiles.clone(), 1.0, &c_bar, 0.1).unwrap();
    let d = delta / c_bar.iter().sum::<f64>();
    let dt = 1e-3;
    let n = 200;
    let cfg = PicardConfig { tol: 1e-14, ..PicardConfig::default() };
    for _ in 0..n {
        st = picard_advance(&p, &st, dt, &cfg).unwrap().state;
    }
    // independent scalar backward-Euler heat solve, mode by mode
    let be = |m: f64| (1.0 + d * (2.0 * PI * m).powi(2) * dt).powi(-(n as i32));
    let exact = [
        cosine(g, a * be(1.0), 1.0),
        cosine(g, -a * be(1.0), 1.0).iter().zip(cosine(g, b * be(2.0), 2.0)).map(|(x, y)| x + y).collect(),
        cosine(g, -b * be(2.0), 2.0),
    ];
    for i in 0..3 {
        let err = sup(&st.c_tilde[i].iter().zip(&exact[i]).map(|(x, y)| x - y).collect::<Vec<_>>());
        assert!(err <= 1e-12, "species {i}: {err:e}");
    }
    // backward Euler damps less than the exact flow
    let cont = (-d * 4.0 * PI * PI * dt * n as f64).exp();
    assert!(cont < be(1.0) && be(1.0) < 1.0);
}

/// RHS of the temperature equation in 1-D for T̃ = e^{-t}cos 2πx and
/// c̃_tot = a e^{-4π²αt} cos 2πx, by hand.
fn mms_forcing(x: f64, t: f64, a: f64, c_bar_tot: f64, lambda: f64, alpha: f64) -> f64 {
    let (s, c) = ((2.0 * PI * x).sin(), (2.0 * PI * x).cos());
    let e = (-t).exp();
    let at = a * (-4.0 * PI * PI * alpha * t).exp();
    let th = 1.0 + lambda * e * c;
    let th_x = -lambda * 2.0 * PI * e * s;
    let t_x = -2.0 * PI * e * s;
    let cc = c_bar_tot + lambda * at * c;
    // derivatives of c̃_tot; c itself is c̄_tot + λc̃_tot
    let c_x = -2.0 * PI * at * s;
    let c_xx = -4.0 * PI * PI * at * c;
    let div = (th_x * c_x + th * c_xx) / cc - th * c_x * lambda * c_x / (cc * cc);
    let rhs = 2.0 * alpha / 3.0 * div + 2.0 * alpha * lambda / 3.0 * th * c_x * c_x / (cc * cc) + alpha * lambda * c_x * t_x / cc;
    -e * c - rhs
}

fn mms_error(dt: f64, n_x: usize) -> f64 {
    let g = PeriodicGrid::new(1, n_x).unwrap();
    let (a, cbt, lam, alpha) = (0.05, 1.0, 0.5, 0.2);
    let f = move |x: [f64; 3], t: f64| mms_forcing(x[0], t, a, cbt, lam, alpha);
    let mut t_old = cosine(&g, 1.0, 1.0);
    let ctot0 = cosine(&g, a, 1.0);
    let steps = (0.2 / dt).round() as usize;
    for k in 1..=steps {
        let ctot = step_ctot(&g, &ctot0, alpha, k as f64 * dt);
        let mut it = t_old.clone();
        for _ in 0..60 {
            it = step_temperature(&g, &t_old, &it, &ctot, cbt, lam, alpha, dt, Some((&f, k as f64 * dt))).unwrap();
        }
        t_old = it;
    }
    let exact = cosine(&g, (-(steps as f64) * dt).exp(), 1.0);
    sup(&t_old.iter().zip(&exact).map(|(x, y)| x - y).collect::<Vec<_>>())
}

#[test]
fn temperature_step_manufactured_solution() {
    let errs: Vec<f64> = [0.02, 0.01, 0.005].iter().map(|&dt| mms_error(dt, 32)).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 0.9, "time order {order} from {errs:?}");
    }
    // spatially the solution is resolved at any grid; refining changes nothing
    let fine = mms_error(0.005, 64);
    assert!((fine - errs[2]).abs() <= 1e-3 * errs[2], "{fine:e} vs {:e}", errs[2]);
}

#[test]
fn smallness_violation_is_an_iteration_error() {
    let p = problem(vec![1.0, 2.0], 0.0, 32);
    let g = &p.grid;
    let c0 = cosine(g, 0.3, 1.0);
    let c1: Vec<f64> = c0.iter().map(|x| -0.8 * x).collect();
    let st = make_well_prepared_initial_data(&p, vec![c0, c1], 1.0, &[0.5, 0.5], 0.05).unwrap();
    match picard_advance(&p, &st, 1e-3, &PicardConfig::default()) {
        Err(mskin_core::Error::PicardDivergence { reason, .. }) => {
            assert_eq!(reason, mskin_core::DivergenceReason::Smallness)
        }
        other => panic!("expected divergence error, got {other:?}"),
    }
}

#[test]
fn energy_of_equal_split_mode_by_parseval() {
    // c̃_1 = c̃_2 = (a/2) cos 2πx with T̃ = 0 imposed by hand
    let p = problem(vec![1.0, 2.0], 0.0, 16);
    let g = &p.grid;
    let a = 0.02;
    let mut st = PerturbationState::stationary(g, &[0.25, 0.75], 1.0, 0.1);
    st.c_tilde = vec![cosine(g, a / 2.0, 1.0), cosine(g, a / 2.0, 1.0)];
    let chi = 7.0;
    let k = EnergyConstants { lambda_a: 1.0, chi, d1: 1.0, d2: 1.0 };
    let r = energy_report(&p, &st, 0, &k).unwrap();
    let expected = 0.5 * (a / 2.0).powi(2) * (1.0 / 0.25 + 1.0 / 0.75) + chi * a * a / 2.0;
    assert!((r.e_s - expected).abs() < 1e-15, "{} vs {expected}", r.e_s);
}
