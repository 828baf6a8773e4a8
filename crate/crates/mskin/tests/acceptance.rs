//! End-to-end acceptance: run the bundled suite twice and check each
//! criterion against the artifacts or with direct library calls.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mskin::verify::verify_all;
use mskin::{parse_config, Summary};
use mskin_core::collision_kernel::{q_ij_mc, weak_form_moment, Density, Poly};
use mskin_core::diffusion_coefficients::{build_delta, k_mc_oracle};
use mskin_core::mixture_core::{MaxwellianParams, MixtureSpec};
use mskin_core::ms_solver::{
    energy_report, make_well_prepared_initial_data, picard_advance, EnergyConstants, MsProblem, PeriodicGrid,
    PicardConfig,
};
use mskin_core::Error;
use serde_json::Value;

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance")
}

struct Csv {
    cols: BTreeMap<String, usize>,
    rows: Vec<Vec<f64>>,
}

impl Csv {
    fn read(path: &Path) -> Csv {
        let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let mut lines = text.lines();
        let cols = lines.next().unwrap().split(',').enumerate().map(|(i, s)| (s.to_string(), i)).collect();
        let rows = lines.map(|l| l.split(',').map(|x| x.parse::<f64>().unwrap_or(f64::NAN)).collect()).collect();
        Csv { cols, rows }
    }

    fn col(&self, name: &str) -> Vec<f64> {
        let k = self.cols[name];
        self.rows.iter().map(|r| r[k]).collect()
    }
}

fn manifest(dir: &Path, name: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(name).join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn wall(dir: &Path, name: &str) -> f64 {
    let text = std::fs::read_to_string(dir.join(name).join("timing.json")).unwrap();
    serde_json::from_str::<Value>(&text).unwrap()["wall_seconds"].as_f64().unwrap()
}

/// Failed assertion names of a scenario whose name contains `filter`.
fn failed_assertions(m: &Value, filter: &str) -> Vec<String> {
    m["assertions"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|a| a["name"].as_str().unwrap().contains(filter) && !a["passed"].as_bool().unwrap())
        .map(|a| format!("{}: {}", a["name"].as_str().unwrap(), a["detail"].as_str().unwrap()))
        .collect()
}

struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn record(&mut self, k: usize, ok: bool, detail: String) {
        println!("criterion {k:>2}: {} {detail}", if ok { "PASS" } else { "FAIL" });
        self.lines.push((k, ok, detail));
    }
}

fn c1_coefficients(a: &Path, r: &mut Report) {
    let mut notes = Vec::new();
    let mut ok = true;
    // Maxwell case: closed form must be 2π b₀ exactly, oracle within tolerance
    let b0 = 1.0 / (4.0 * PI);
    for (name, closed_form) in [("coeff_maxwell", Some(2.0 * PI * b0)), ("coeff_hard", None)] {
        let csv = Csv::read(&a.join(name).join("coeffs.csv"));
        for ((k, mc), se) in csv.col("k_ij_t1").iter().zip(csv.col("mc_estimate")).zip(csv.col("std_err")) {
            if let Some(p) = closed_form {
                ok &= (k - p).abs() <= 1e-12;
            }
            let allowed = (3.0 * se).max(0.02 * k);
            ok &= (mc - k).abs() <= allowed;
        }
        notes.push(format!("{name} {:.2}s", wall(a, name)));
    }
    // independent check of the mass-ratio-4 closed form against the
    // Gaussian moment E r^γ: (8√π/3) μ ‖b‖₁ Γ(3) (2T/μ)^{1/2} at γ = 1,
    // with ‖b‖₁ = 2b₀ over (-1, 1)
    let spec = MixtureSpec::uniform(vec![1.0, 4.0], 1.0, 1.0, b0).unwrap();
    let mu = 0.8;
    let expected = 8.0 * PI.sqrt() / 3.0 * mu * (2.0 * b0) * 2.0 * (2.0 / mu as f64).sqrt();
    let k = build_delta(&spec).k(0, 1, 1.0);
    ok &= (k - expected).abs() <= 1e-12 * expected;
    notes.push(format!("k(1,4) {k:.12} vs {expected:.12}"));

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let t0 = Instant::now();
    let maxwell = MixtureSpec::uniform(vec![1.0, 1.0], 0.0, 1.0, b0).unwrap();
    let (est, se) = pool.install(|| k_mc_oracle(&maxwell, 0, 1, 1.0, 1_000_000, 5)).unwrap();
    let single = t0.elapsed().as_secs_f64();
    ok &= (est - 0.5).abs() <= (3.0 * se).max(0.01) && single <= 30.0;
    notes.push(format!("single-thread 1e6 samples {single:.2}s"));
    r.record(1, ok, notes.join(", "));
}

fn c2_conservation(r: &mut Report) {
    let spec = MixtureSpec::uniform(vec![1.0, 2.0], 1.0, 1.0, 1.0 / (4.0 * PI)).unwrap();
    let m = [1.0, 2.0];
    let base = |s: usize, u: [f64; 3]| MaxwellianParams::new(0.5 + 0.1 * s as f64, m[s], u, 1.2, 1.0).unwrap();
    let inputs = [
        ("maxwellian", [Density::Maxwellian(base(0, [0.3, 0.0, 0.0])), Density::Maxwellian(base(1, [-0.2, 0.1, 0.0]))]),
        (
            "perturbed",
            [
                Density::Perturbed { base: base(0, [0.0; 3]), poly: Poly::linear(0.2, 0) },
                Density::Perturbed { base: base(1, [0.0; 3]), poly: Poly::energy(0.05) },
            ],
        ),
    ];
    let n = 1_000_000;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (label, d) in &inputs {
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let mut tests = vec![(Poly::constant(1.0), Poly::zero()), (Poly::zero(), Poly::constant(1.0))];
            for k in 0..3 {
                tests.push((Poly::linear(m[i], k), Poly::linear(m[j], k)));
            }
            tests.push((Poly::energy(0.5 * m[i]), Poly::energy(0.5 * m[j])));
            for (t, (pi, pj)) in tests.iter().enumerate() {
                let est = weak_form_moment(&spec, i, j, &d[i], &d[j], pi, pj, n, 100 + t as u64).unwrap();
                if !est.zero_within(3.0) {
                    ok = false;
                    println!("  {label} pair ({i},{j}) moment {t}: {} +- {}", est.value, est.std_err);
                }
                worst = worst.max(est.value.abs() / est.std_err.max(f64::MIN_POSITIVE));
            }
        }
    }
    // Q_ij(M, M) = 0 for a common-velocity, common-temperature Maxwellian pair
    let eq = [
        Density::Maxwellian(MaxwellianParams::new(0.6, 1.0, [0.2, 0.0, 0.0], 1.0, 1.0).unwrap()),
        Density::Maxwellian(MaxwellianParams::new(0.4, 2.0, [0.2, 0.0, 0.0], 1.0, 1.0).unwrap()),
    ];
    let probes = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, -0.7, 0.2], [-1.3, 0.4, 0.9], [2.0, 1.0, -1.0]];
    let mut worst_q: f64 = 0.0;
    for (p, v) in probes.iter().enumerate() {
        let est = q_ij_mc(&spec, 0, 1, &eq[0], &eq[1], *v, n, 200 + p as u64).unwrap();
        ok &= est.zero_within(3.0);
        worst_q = worst_q.max(est.value.abs() / est.std_err.max(f64::MIN_POSITIVE));
    }
    r.record(
        2,
        ok,
        format!("max |moment|/se {worst:.2} (rounding-level terms included), max |Q(M,M)|/se {worst_q:.2}"),
    );
}

fn c3_relaxation(a: &Path, r: &mut Report) {
    let m = manifest(a, "relaxation");
    let csv = Csv::read(&a.join("relaxation").join("relaxation.csv"));
    let h = csv.col("entropy");
    let rise = h.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let secs = wall(a, "relaxation");
    let failed = failed_assertions(&m, "");
    let ok = failed.is_empty() && rise <= 1e-8 && secs <= 300.0;
    r.record(3, ok, format!("max entropy step {rise:.3e}, {secs:.1}s, failed {failed:?}"));
}

fn c4_flux(a: &Path, r: &mut Report) {
    let csv = Csv::read(&a.join("flux_probe").join("flux.csv"));
    let eps = csv.col("eps");
    let dev = csv.col("deviation");
    let se = csv.col("deviation_std_err");
    let lx: Vec<f64> = eps.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = dev.iter().map(|x| x.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let k = eps.iter().enumerate().min_by(|p, q| p.1.total_cmp(q.1)).unwrap().0;
    let decreasing = (0..eps.len()).all(|p| (0..eps.len()).all(|q| eps[p] >= eps[q] || dev[p] < dev[q]));
    let ok = decreasing && slope >= 0.8 && dev[k] <= (3.0 * se[k]).max(0.05);
    r.record(4, ok, format!("slope {slope:.3}, deviation at eps={} is {:.3e}", eps[k], dev[k]));
}

fn c5_matrix(a: &Path, r: &mut Report) {
    let mut ok = true;
    let mut notes = Vec::new();
    for n in [2, 3, 5] {
        let csv = Csv::read(&a.join("matrix_suite").join(format!("matrix_n{n}.csv")));
        let rs = csv.col("row_sum").iter().cloned().fold(0.0, f64::max);
        let xax = csv.col("xax").iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pinv = csv.col("pinv_residual").iter().cloned().fold(0.0, f64::max);
        let lo = csv.col("lower_slack").iter().cloned().fold(f64::INFINITY, f64::min);
        let up = csv.col("upper_slack").iter().cloned().fold(f64::INFINITY, f64::min);
        ok &= csv.rows.len() == 10_000 && rs <= 1e-14 && xax <= 1e-12 && pinv <= 1e-10 && lo >= 0.0 && up >= 0.0;
        notes.push(format!("N={n}: |A1| {rs:.1e}, pinv {pinv:.1e}"));
    }
    r.record(5, ok, notes.join("; "));
}

fn c6_energy(a: &Path, r: &mut Report) {
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["ms_gamma0", "ms_gamma1"] {
        let cfg = parse_config(&config_dir().join(format!("{name}.toml"))).unwrap();
        assert_eq!(cfg.grid.n_x, Some(128));
        assert_eq!(cfg.numerics.t_end, Some(1.0));
        let csv = Csv::read(&a.join(name).join("series.csv"));
        let t = csv.col("t");
        let dt = csv.col("dt");
        ok &= (t.last().unwrap() - 1.0).abs() < 1e-9;
        for s in [0, 2] {
            let e = csv.col(&format!("E_{s}"));
            let d = csv.col(&format!("D_{s}"));
            let mono = e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-8));
            let strict = e.windows(2).filter(|w| w[1] < w[0]).count();
            let mut acc = 0.0;
            let mut integral = true;
            for k in 1..e.len() {
                acc += d[k] * dt[k];
                integral &= e[k] + acc <= e[0] * (1.0 + 1e-8);
            }
            ok &= mono && integral;
            notes.push(format!("{name} E_{s}: {strict}/{} decreasing steps", e.len() - 1));
        }
        let min_c = csv.col("min_c").iter().cloned().fold(f64::INFINITY, f64::min);
        let min_t = csv.col("min_T").iter().cloned().fold(f64::INFINITY, f64::min);
        let secs = wall(a, name);
        ok &= min_c > 0.0 && min_t > 0.0 && secs <= 120.0;
        notes.push(format!("{name} {secs:.1}s"));
    }
    r.record(6, ok, notes.join(", "));
}

fn c7_structure(a: &Path, r: &mut Report) {
    let mut heat: f64 = 0.0;
    let mut fick: f64 = 0.0;
    for name in ["ms_gamma0", "ms_gamma1", "ms_gamma0_nx64"] {
        let cfg = parse_config(&config_dir().join(format!("{name}.toml"))).unwrap();
        let alpha = cfg.initial.alpha.unwrap();
        // single cos(2πx) mode per species: the sum decays as exp(-4π²αt)
        let amp: f64 = cfg.initial.profiles.as_ref().unwrap().iter().flatten().map(|p| match p {
            mskin::config::Profile::Cosine { amplitude, .. } => *amplitude,
            mskin::config::Profile::Constant { value } => *value,
        }).sum();
        let m = manifest(a, name);
        for (art, t) in m["constants"]["snapshot_times"].as_object().unwrap() {
            let t = t.as_f64().unwrap();
            let csv = Csv::read(&a.join(name).join(art));
            let x = csv.col("x");
            let c0 = csv.col("c0");
            let c1 = csv.col("c1");
            let decay = (-4.0 * PI * PI * alpha * t).exp();
            for k in 0..x.len() {
                let exact = amp * decay * (2.0 * PI * x[k]).cos();
                heat = heat.max((c0[k] + c1[k] - exact).abs());
            }
        }
        let csv = Csv::read(&a.join(name).join("series.csv"));
        fick = fick.max(csv.col("residual_fick").iter().cloned().fold(0.0, f64::max));
    }
    let res = |name: &str| {
        Csv::read(&a.join(name).join("series.csv")).col("residual_ctotT").iter().cloned().fold(0.0, f64::max)
    };
    let (coarse, fine) = (res("ms_gamma0_nx64"), res("ms_gamma0"));
    let ratio = coarse / fine;
    let ok = heat <= 1e-10 && fick <= 1e-10 && ratio >= 4.0;
    r.record(
        7,
        ok,
        format!("heat deviation {heat:.2e}, Fick {fick:.2e}, grad(c_tot T) residual {coarse:.3e} -> {fine:.3e} (ratio {ratio:.2})"),
    );
}

fn c8_picard(r: &mut Report) {
    let spec = MixtureSpec::uniform(vec![1.0, 2.0], 0.0, 1.0, 1.0 / (4.0 * PI)).unwrap();
    let grid = PeriodicGrid::new(1, 64).unwrap();
    let problem = MsProblem { grid: grid.clone(), delta: build_delta(&spec).delta_matrix(), gamma: 0.0 };
    let c_bar = [0.5, 0.5];
    let alpha = 0.05;
    let profile = |a: f64| -> Vec<Vec<f64>> {
        let c0: Vec<f64> = (0..grid.len()).map(|x| a * (2.0 * PI * grid.coords(x)[0]).cos()).collect();
        let c1 = c0.iter().map(|v| -0.8 * v).collect();
        vec![c0, c1]
    };
    let cfg = PicardConfig::default();
    let dt = 8e-4;
    let small = make_well_prepared_initial_data(&problem, profile(0.025), 1.0, &c_bar, alpha).unwrap();
    let mut ratios = Vec::new();
    let mut state = small.clone();
    let mut ok = true;
    for _ in 0..20 {
        match picard_advance(&problem, &state, dt, &cfg) {
            Ok(o) => {
                ratios.extend(o.ratios());
                state = o.state;
            }
            Err(e) => {
                ok = false;
                println!("  admissible step failed: {e}");
                break;
            }
        }
    }
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    ok &= !ratios.is_empty() && max_ratio < 1.0;

    // scale the profile until E_0^{1/2} is ten times the smallness threshold
    let threshold = cfg.smallness * 0.5;
    let k = EnergyConstants::new(1.0, &c_bar, alpha, 0.0);
    let e_small = energy_report(&problem, &small, 0, &k).unwrap().e_s.sqrt();
    let mut amp = 0.025 * 10.0 * threshold / e_small;
    let big = loop {
        let st = make_well_prepared_initial_data(&problem, profile(amp), 1.0, &c_bar, alpha).unwrap();
        if energy_report(&problem, &st, 0, &k).unwrap().e_s.sqrt() >= 10.0 * threshold {
            break st;
        }
        amp *= 1.05;
    };
    let raised = matches!(picard_advance(&problem, &big, dt, &cfg), Err(Error::PicardDivergence { .. }));
    ok &= raised;
    r.record(8, ok, format!("max ratio {max_ratio:.2e} over {} iterates; amplitude {amp:.3} rejected: {raised}", ratios.len()));
}

fn c9_linop(a: &Path, r: &mut Report) {
    let m = manifest(a, "linop");
    let csv = Csv::read(&a.join("linop").join("spectrum.csv"));
    let ev = csv.col("eigenvalue");
    let norm = ev.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let kernel = ev.iter().filter(|x| x.abs() < 1e-6 * norm).count();
    let failed = failed_assertions(&m, "");
    let c = &m["constants"];
    let ok = kernel == 4 + 2 && failed.is_empty();
    r.record(
        9,
        ok,
        format!(
            "kernel dim {kernel}, lambda_L {} -> {}, C_pi {}, failed {failed:?}",
            c["lambda_l"], c["lambda_l_refined"], c["c_pi"]
        ),
    );
}

fn collect_files(root: &Path, rel: &Path, out: &mut Vec<PathBuf>) {
    let mut entries: Vec<_> = std::fs::read_dir(root.join(rel)).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        let name = rel.join(p.file_name().unwrap());
        if p.is_dir() {
            collect_files(root, &name, out);
        } else if p.file_name().unwrap() != "timing.json" {
            out.push(name);
        }
    }
}

fn c10_determinism(a: &Path, b: &Path, r: &mut Report) {
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    collect_files(a, Path::new(""), &mut fa);
    collect_files(b, Path::new(""), &mut fb);
    let mut differing = Vec::new();
    if fa != fb {
        differing.push("file lists differ".to_string());
    }
    for f in &fa {
        if std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok() {
            differing.push(f.display().to_string());
        }
    }
    r.record(10, differing.is_empty(), format!("{} files compared, differing {differing:?}", fa.len()));
}

fn run_suite(out: &Path) -> Summary {
    verify_all(&config_dir(), out, None, |s| println!("  {} {:?}", s.name, s.status)).unwrap()
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let summary = run_suite(&a);
    print!("{}", summary.table());
    let mut r = Report { lines: Vec::new() };
    c1_coefficients(&a, &mut r);
    c2_conservation(&mut r);
    c3_relaxation(&a, &mut r);
    c4_flux(&a, &mut r);
    c5_matrix(&a, &mut r);
    c6_energy(&a, &mut r);
    c7_structure(&a, &mut r);
    c8_picard(&mut r);
    c9_linop(&a, &mut r);
    run_suite(&b);
    c10_determinism(&a, &b, &mut r);

    let failed: Vec<usize> = r.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
