//! Collision-operator probes: Monte-Carlo evaluation of Q_ij and its weak
//! forms, the diffusive flux-force limit, spatially homogeneous relaxation
//! on a velocity grid, and the multiplicative part ν.

pub mod quadrature;

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::diffusion_coefficients::{gaussian3, k_closed_form, unit_sphere, MC_BATCH};
use crate::error::{Error, Result};
use crate::mixture_core::{moments, DistributionVector, MaxwellianParams, MixtureSpec, VelocityGrid};
use crate::numerics::{adaptive_simpson, dot3, fmt_f64, gamma, merge_tree, norm3, MeanVar};

pub use quadrature::{CollisionQuadrature, Term};

/// Post-collision velocities for masses (m_i, m_j).
pub fn post_collision(
    mi: f64,
    mj: f64,
    v: [f64; 3],
    vs: [f64; 3],
    sigma: [f64; 3],
) -> Result<([f64; 3], [f64; 3])> {
    let ns = norm3(sigma);
    if !((ns - 1.0).abs() <= 1e-12) {
        return Err(Error::Domain(format!("sigma must be a unit vector, |sigma| = {ns}")));
    }
    Ok(post_collision_unchecked(mi, mj, v, vs, sigma))
}

#[inline]
pub(crate) fn post_collision_unchecked(
    mi: f64,
    mj: f64,
    v: [f64; 3],
    vs: [f64; 3],
    sigma: [f64; 3],
) -> ([f64; 3], [f64; 3]) {
    let m = mi + mj;
    let r = norm3([v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]]);
    let mut vp = [0.0; 3];
    let mut vsp = [0.0; 3];
    for k in 0..3 {
        let cm = (mi * v[k] + mj * vs[k]) / m;
        vp[k] = cm + mj / m * r * sigma[k];
        vsp[k] = cm - mi / m * r * sigma[k];
    }
    (vp, vsp)
}

/// Polynomial in (v_x, v_y, v_z) as a list of (coefficient, exponents).
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Poly {
    pub terms: Vec<(f64, [u8; 3])>,
}

impl Poly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: vec![(c, [0, 0, 0])] }
    }

    /// c v_k.
    pub fn linear(c: f64, k: usize) -> Self {
        let mut e = [0u8; 3];
        e[k] = 1;
        Self { terms: vec![(c, e)] }
    }

    /// c |v|².
    pub fn energy(c: f64) -> Self {
        Self { terms: vec![(c, [2, 0, 0]), (c, [0, 2, 0]), (c, [0, 0, 2])] }
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(_, e)| e.iter().map(|&x| x as u32).sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, v: [f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| c * v[0].powi(e[0] as i32) * v[1].powi(e[1] as i32) * v[2].powi(e[2] as i32))
            .sum()
    }
}

/// Smooth velocity distribution with a Gaussian proposal for sampling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Density {
    Maxwellian(MaxwellianParams),
    /// M(v) (1 + p(v)); p must keep the density nonnegative where it matters.
    Perturbed { base: MaxwellianParams, poly: Poly },
}

impl Density {
    pub fn base(&self) -> &MaxwellianParams {
        match self {
            Density::Maxwellian(p) => p,
            Density::Perturbed { base, .. } => base,
        }
    }

    pub fn eval(&self, v: [f64; 3]) -> f64 {
        match self {
            Density::Maxwellian(p) => p.eval(v),
            Density::Perturbed { base, poly } => base.eval(v) * (1.0 + poly.eval(v)),
        }
    }

    /// Density ratio F / q for the base Gaussian proposal q.
    fn weight(&self, v: [f64; 3]) -> f64 {
        match self {
            Density::Maxwellian(p) => p.c,
            Density::Perturbed { base, poly } => base.c * (1.0 + poly.eval(v)),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> [f64; 3] {
        let p = self.base();
        let d = p.drift();
        let z = gaussian3(rng, (p.t / p.m).sqrt());
        [z[0] + d[0], z[1] + d[1], z[2] + d[2]]
    }

    fn proposal_pdf(&self, v: [f64; 3]) -> f64 {
        let p = self.base();
        MaxwellianParams { c: 1.0, ..*p }.eval(v)
    }
}

/// Monte-Carlo estimate of a quantity expected to vanish or to be compared
/// with a reference. `scale` is the mean absolute size of the summed terms;
/// a relative rounding allowance of 1e-12 of it is accepted on top of 3σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_err: f64,
    pub scale: f64,
    pub samples: u64,
}

pub const ROUNDING_FLOOR: f64 = 1e-12;

impl McEstimate {
    pub fn zero_within(&self, k_sigma: f64) -> bool {
        self.value.abs() <= k_sigma * self.std_err + ROUNDING_FLOOR * self.scale
    }
}

/// Like `mc_batches` but for K simultaneous integrands.
fn mc_batches_n<F>(seed: u64, key: &[u64], n_samples: usize, k: usize, f: F) -> Vec<MeanVar>
where
    F: Fn(&mut rand_chacha::ChaCha12Rng, &mut [f64]) + Sync,
{
    let n_batches = n_samples.div_ceil(MC_BATCH);
    let parts: Vec<Vec<MeanVar>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut kk = key.to_vec();
            kk.push(b as u64);
            let mut rng = crate::rng::stream(seed, &kk);
            let len = MC_BATCH.min(n_samples - b * MC_BATCH);
            let mut acc = vec![MeanVar::default(); k];
            let mut buf = vec![0.0; k];
            for _ in 0..len {
                f(&mut rng, &mut buf);
                for (a, x) in acc.iter_mut().zip(&buf) {
                    a.push(*x);
                }
            }
            acc
        })
        .collect();
    (0..k)
        .map(|c| merge_tree(&parts.iter().map(|p| p[c]).collect::<Vec<_>>()))
        .collect()
}

fn estimate(acc: &[MeanVar]) -> McEstimate {
    McEstimate { value: acc[0].mean(), std_err: acc[0].std_err(), scale: acc[1].mean(), samples: acc[0].count() }
}

/// Q_ij(F_i, F_j)(v) by importance sampling v* from F_j's Gaussian and σ
/// uniformly on the sphere.
#[allow(clippy::too_many_arguments)]
pub fn q_ij_mc(
    spec: &MixtureSpec,
    i: usize,
    j: usize,
    fi: &Density,
    fj: &Density,
    v: [f64; 3],
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    spec.require_kinetic()?;
    let (mi, mj) = (spec.masses[i], spec.masses[j]);
    let fv = fi.eval(v);
    let acc = mc_batches_n(seed, &[0x0051, i as u64, j as u64], n_samples, 2, |rng, out| {
        let vs = fj.sample(rng);
        let s = unit_sphere(rng);
        let g = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
        let r = norm3(g);
        let q = fj.proposal_pdf(vs);
        if r == 0.0 || q == 0.0 {
            out[0] = 0.0;
            out[1] = 0.0;
            return;
        }
        let b = spec.kernel(i, j, r, dot3(g, s) / r) * 4.0 * PI / q;
        let (vp, vsp) = post_collision_unchecked(mi, mj, v, vs, s);
        let gain = fi.eval(vp) * fj.eval(vsp);
        let loss = fv * fj.eval(vs);
        out[0] = b * (gain - loss);
        out[1] = b * (gain.abs() + loss.abs());
    });
    Ok(estimate(&acc))
}

/// ∫Q_ij(F_i,F_j) ψ_i + ∫Q_ji(F_j,F_i) ψ_j through the single symmetrized
/// integral ∫∫∫ B F_i F_j* (ψ_i' + ψ_j*' - ψ_i - ψ_j*).
#[allow(clippy::too_many_arguments)]
pub fn weak_form_moment(
    spec: &MixtureSpec,
    i: usize,
    j: usize,
    fi: &Density,
    fj: &Density,
    psi_i: &Poly,
    psi_j: &Poly,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    spec.require_kinetic()?;
    if psi_i.degree() > 4 || psi_j.degree() > 4 {
        return Err(Error::Param("test functions must have degree <= 4".into()));
    }
    let (mi, mj) = (spec.masses[i], spec.masses[j]);
    let acc = mc_batches_n(seed, &[0x3eaf, i as u64, j as u64], n_samples, 2, |rng, out| {
        let v = fi.sample(rng);
        let vs = fj.sample(rng);
        let s = unit_sphere(rng);
        let g = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
        let r = norm3(g);
        if r == 0.0 {
            out[0] = 0.0;
            out[1] = 0.0;
            return;
        }
        let w = spec.kernel(i, j, r, dot3(g, s) / r) * 4.0 * PI * fi.weight(v) * fj.weight(vs);
        let (vp, vsp) = post_collision_unchecked(mi, mj, v, vs, s);
        let t = [psi_i.eval(vp), psi_j.eval(vsp), psi_i.eval(v), psi_j.eval(vs)];
        out[0] = w * (t[0] + t[1] - t[2] - t[3]);
        out[1] = w.abs() * t.iter().map(|x| x.abs()).sum::<f64>();
    });
    Ok(estimate(&acc))
}

/// Local macroscopic state (c, u, T) with a common temperature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsLocal {
    pub c: Vec<f64>,
    pub u: Vec<[f64; 3]>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxRow {
    pub eps: f64,
    pub flux: [f64; 3],
    pub flux_std_err: [f64; 3],
    pub reference: [f64; 3],
    /// |flux - reference| / |reference| (absolute when the reference is 0)
    pub deviation: f64,
    pub deviation_std_err: f64,
}

/// (1/ε)∫Q_ij(M_i^ε, M_j^ε) m_i v dv against -k_ij c_i c_j (u_i - u_j).
///
/// The σ-integral of the momentum transfer is done exactly,
/// ∫ b(ĝ·σ)(rσ - g) dσ = -2π g ∫ b(x)(1 - x) dx, leaving a Gaussian average
/// over the relative velocity z ~ N(0, T/μ) (plus drift εw, w = u_i - u_j).
/// Samples are shared across ε, antithetic in z, and carry the control
/// variate d/dε at ε = 0 whose mean is known in closed form; the reported
/// deviation is therefore the O(ε) remainder with little sampling noise.
pub fn flux_limit_probe(
    spec: &MixtureSpec,
    state: &MsLocal,
    i: usize,
    j: usize,
    eps_list: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<FluxRow>> {
    spec.require_kinetic()?;
    let n = spec.n_species();
    if state.c.len() != n || state.u.len() != n || i >= n || j >= n {
        return Err(Error::Param("state does not match the mixture".into()));
    }
    if eps_list.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
        return Err(Error::Param("eps values must lie in (0, 1]".into()));
    }
    let t = state.t;
    let mu = spec.reduced_mass(i, j);
    let law = &spec.angular[i][j];
    let b1 = law.l1_norm() - law.first_moment();
    let kpref = -2.0 * PI * spec.phi_const[i][j] * mu * b1 * state.c[i] * state.c[j];
    let gam = spec.gamma;
    let w = [
        state.u[i][0] - state.u[j][0],
        state.u[i][1] - state.u[j][1],
        state.u[i][2] - state.u[j][2],
    ];
    let sd = (t / mu).sqrt();
    let mean_abs_pow = (2.0 * t / mu).powf(0.5 * gam) * gamma(0.5 * (3.0 + gam)) / gamma(1.5);
    let cv_mean = [w[0] * (1.0 + gam / 3.0) * mean_abs_pow, w[1] * (1.0 + gam / 3.0) * mean_abs_pow, w[2] * (1.0 + gam / 3.0) * mean_abs_pow];
    let phi = |x: [f64; 3]| -> [f64; 3] {
        let r = norm3(x);
        let p = if gam == 0.0 { 1.0 } else { r.powf(gam) };
        [p * x[0], p * x[1], p * x[2]]
    };
    let k = k_closed_form(spec, i, j, t)?;
    let reference = [-k * state.c[i] * state.c[j] * w[0], -k * state.c[i] * state.c[j] * w[1], -k * state.c[i] * state.c[j] * w[2]];
    let ref_norm = norm3(reference);
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let acc = mc_batches_n(seed, &[0xf1c5, i as u64, j as u64], n_samples, 3, |rng, out| {
            let z = gaussian3(rng, sd);
            let ew = [eps * w[0], eps * w[1], eps * w[2]];
            let p = phi([ew[0] + z[0], ew[1] + z[1], ew[2] + z[2]]);
            let m = phi([ew[0] - z[0], ew[1] - z[1], ew[2] - z[2]]);
            let r = norm3(z);
            let rg = if gam == 0.0 { 1.0 } else { r.powf(gam) };
            let zw = dot3(z, w);
            for c in 0..3 {
                let d0 = rg * w[c] + if r > 0.0 { gam * rg * zw * z[c] / (r * r) } else { 0.0 };
                let h = 0.5 * (p[c] + m[c]) / eps - (d0 - cv_mean[c]);
                out[c] = kpref * h;
            }
        });
        let flux = [acc[0].mean(), acc[1].mean(), acc[2].mean()];
        let se = [acc[0].std_err(), acc[1].std_err(), acc[2].std_err()];
        let diff = [flux[0] - reference[0], flux[1] - reference[1], flux[2] - reference[2]];
        let denom = if ref_norm > 0.0 { ref_norm } else { 1.0 };
        rows.push(FluxRow {
            eps,
            flux,
            flux_std_err: se,
            reference,
            deviation: norm3(diff) / denom,
            deviation_std_err: norm3(se) / denom,
        });
    }
    Ok(rows)
}

pub fn write_flux_csv<W: Write>(rows: &[FluxRow], mut w: W) -> Result<()> {
    writeln!(w, "eps,flux_x,flux_y,flux_z,ref_x,ref_y,ref_z,deviation,deviation_std_err")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.eps),
            fmt_f64(r.flux[0]),
            fmt_f64(r.flux[1]),
            fmt_f64(r.flux[2]),
            fmt_f64(r.reference[0]),
            fmt_f64(r.reference[1]),
            fmt_f64(r.reference[2]),
            fmt_f64(r.deviation),
            fmt_f64(r.deviation_std_err)
        )?;
    }
    Ok(())
}

/// Least-squares slope of log(deviation) against log(ε).
pub fn loglog_slope(rows: &[FluxRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps.ln(), r.deviation.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    Euler,
    Rk2,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Relaxation {
    pub times: Vec<f64>,
    pub mass: Vec<Vec<f64>>,
    pub momentum: Vec<[f64; 3]>,
    pub energy: Vec<f64>,
    pub entropy: Vec<f64>,
    #[serde(skip)]
    pub snapshots: Vec<(f64, DistributionVector)>,
    #[serde(skip)]
    pub final_state: DistributionVector,
}

impl Relaxation {
    /// Largest relative change of any species mass over the run.
    pub fn max_mass_drift(&self) -> f64 {
        let m0 = &self.mass[0];
        self.mass
            .iter()
            .flat_map(|m| m.iter().zip(m0).map(|(a, b)| ((a - b) / b).abs()))
            .fold(0.0, f64::max)
    }

    /// Largest single-step increase of H (0 when monotone).
    pub fn max_entropy_increase(&self) -> f64 {
        self.entropy.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.mass[0].len();
        let mut head = String::from("t");
        for s in 0..n {
            head.push_str(&format!(",mass_{s}"));
        }
        head.push_str(",px,py,pz,energy,entropy");
        writeln!(w, "{head}")?;
        for k in 0..self.times.len() {
            let mut line = fmt_f64(self.times[k]);
            for s in 0..n {
                line.push(',');
                line.push_str(&fmt_f64(self.mass[k][s]));
            }
            for c in 0..3 {
                line.push(',');
                line.push_str(&fmt_f64(self.momentum[k][c]));
            }
            line.push_str(&format!(",{},{}", fmt_f64(self.energy[k]), fmt_f64(self.entropy[k])));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// H(F) = Σ_i ∫ F_i log F_i on the grid.
pub fn entropy(f: &DistributionVector) -> f64 {
    let terms: Vec<f64> = f
        .values
        .iter()
        .flatten()
        .map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 })
        .collect();
    crate::numerics::pairwise_sum(&terms) * f.grid.cell_volume()
}

/// Integrate ∂_t F = Q(F, F) with the conservative grid quadrature.
pub fn homogeneous_relaxation(
    spec: &MixtureSpec,
    f0: &DistributionVector,
    dt: f64,
    n_steps: usize,
    scheme: TimeScheme,
    snapshot_every: usize,
) -> Result<Relaxation> {
    if f0.n_species() != spec.n_species() {
        return Err(Error::Param("distribution does not match mixture".into()));
    }
    if f0.values.iter().flatten().any(|&x| !(x > 0.0)) {
        return Err(Error::Param("initial distribution must be positive".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Param("dt must be positive".into()));
    }
    let quad = CollisionQuadrature::new(spec, f0.grid, false)?;
    let mut full = f0.clone();
    let mut ball: Vec<Vec<f64>> = full.values.iter().map(|s| quad.gather(s)).collect();
    let mut out = Relaxation {
        times: vec![],
        mass: vec![],
        momentum: vec![],
        energy: vec![],
        entropy: vec![],
        snapshots: vec![],
        final_state: full.clone(),
    };
    let record = |out: &mut Relaxation, t: f64, f: &DistributionVector| -> Result<()> {
        let mm = moments(&spec.masses, f)?;
        out.times.push(t);
        out.mass.push(mm.c);
        out.momentum.push(mm.momentum);
        out.energy.push(mm.energy);
        out.entropy.push(entropy(f));
        Ok(())
    };
    record(&mut out, 0.0, &full)?;
    if snapshot_every > 0 {
        out.snapshots.push((0.0, full.clone()));
    }
    let axpy = |x: &[Vec<f64>], a: f64, y: &[Vec<f64>]| -> Vec<Vec<f64>> {
        x.iter().zip(y).map(|(p, q)| p.iter().zip(q).map(|(u, v)| u + a * v).collect()).collect()
    };
    let check = |f: &[Vec<f64>], t: f64| -> Result<()> {
        let min = f.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::StepSize { t, min });
        }
        Ok(())
    };
    for step in 1..=n_steps {
        let t = step as f64 * dt;
        let k1 = quad.collision_rhs(&ball);
        let next = match scheme {
            TimeScheme::Euler => axpy(&ball, dt, &k1),
            TimeScheme::Rk2 => {
                let mid = axpy(&ball, dt, &k1);
                check(&mid, t)?;
                let k2 = quad.collision_rhs(&mid);
                let avg: Vec<Vec<f64>> =
                    k1.iter().zip(&k2).map(|(a, b)| a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()).collect();
                axpy(&ball, dt, &avg)
            }
        };
        check(&next, t)?;
        ball = next;
        for (s, vals) in full.values.iter_mut().enumerate() {
            quad.scatter(&ball[s], vals);
        }
        record(&mut out, t, &full)?;
        if snapshot_every > 0 && step % snapshot_every == 0 {
            out.snapshots.push((t, full.clone()));
        }
    }
    out.final_state = full;
    Ok(out)
}

/// ν_ij^ε on a velocity grid with fitted ⟨v⟩^γ envelope constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuField {
    #[serde(skip)]
    pub values: Vec<Vec<Vec<f64>>>,
    /// min over the grid of ν_ij / (c_j ⟨v⟩^γ)
    pub low: Vec<Vec<f64>>,
    /// max over the grid of ν_ij / (c_j ⟨v⟩^γ)
    pub up: Vec<Vec<f64>>,
}

/// E|a e - z|^γ for z ~ N(0, s² I), by quadrature over the distance
/// distribution (a noncentral chi law with three degrees of freedom).
pub fn mean_distance_pow(a: f64, s: f64, gam: f64) -> f64 {
    if gam == 0.0 {
        return 1.0;
    }
    let s2 = s * s;
    let density = |rho: f64| -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        if a < 1e-12 * s {
            return (2.0 / PI).sqrt() * rho * rho / (s2 * s) * (-rho * rho / (2.0 * s2)).exp();
        }
        let x = rho * a / s2;
        let core = if x < 20.0 {
            2.0 * x.sinh() * (-(rho * rho + a * a) / (2.0 * s2)).exp()
        } else {
            (-(rho - a).powi(2) / (2.0 * s2)).exp() - (-(rho + a).powi(2) / (2.0 * s2)).exp()
        };
        rho / (a * s * (2.0 * PI).sqrt()) * core
    };
    let lo = (a - 12.0 * s).max(0.0);
    let hi = a + 12.0 * s;
    adaptive_simpson(&|r: f64| r.powf(gam) * density(r), lo, hi, 1e-13 * (a + s).powf(gam), 40)
}

/// ν_ij(v) = ∫ B_ij M_j^ε(v*) dσ dv* = C^Φ 2π‖b‖₁ c_j E|v - v*|^γ.
pub fn nu_eval(spec: &MixtureSpec, state: &MsLocal, eps: f64, grid: VelocityGrid) -> Result<NuField> {
    spec.require_kinetic()?;
    let n = spec.n_species();
    if state.c.len() != n || state.u.len() != n {
        return Err(Error::Param("state does not match the mixture".into()));
    }
    let nodes = grid.nodes();
    let gam = spec.gamma;
    let mut values = vec![vec![Vec::new(); n]; n];
    let mut low = vec![vec![0.0; n]; n];
    let mut up = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let pref = spec.phi_const[i][j] * 2.0 * PI * spec.angular[i][j].l1_norm() * state.c[j];
            let s = (state.t / spec.masses[j]).sqrt();
            let d = [eps * state.u[j][0], eps * state.u[j][1], eps * state.u[j][2]];
            let vals: Vec<f64> = nodes
                .par_iter()
                .map(|v| {
                    let a = norm3([v[0] - d[0], v[1] - d[1], v[2] - d[2]]);
                    pref * mean_distance_pow(a, s, gam)
                })
                .collect();
            let ratios: Vec<f64> = vals
                .iter()
                .zip(&nodes)
                .map(|(x, v)| x / (state.c[j] * (1.0 + dot3(*v, *v)).sqrt().powf(gam)))
                .collect();
            let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !(lo > 0.0 && hi.is_finite()) {
                return Err(Error::Invariant(format!("nu_{i}{j} envelope degenerate: low {lo}, up {hi}")));
            }
            low[i][j] = lo;
            up[i][j] = hi;
            values[i][j] = vals;
        }
    }
    Ok(NuField { values, low, up })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn post_collision_examples() {
        let v = [0.3, -1.0, 2.0];
        let (a, b) = post_collision(1.0, 1.0, v, v, [0.0, 0.0, 1.0]).unwrap();
        assert_eq!((a, b), (v, v));
        let vs = [1.0, 1.0, 1.0];
        let g = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
        let r = norm3(g);
        let s = [g[0] / r, g[1] / r, g[2] / r];
        let (a, b) = post_collision(1.0, 1.0, v, vs, s).unwrap();
        for k in 0..3 {
            assert!((a[k] - v[k]).abs() < 1e-14 && (b[k] - vs[k]).abs() < 1e-14);
        }
        assert!(post_collision(1.0, 1.0, v, vs, [1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn mean_distance_pow_closed_forms() {
        // a = 0: E|z| = 2 s √(2/π)
        let s = 0.7;
        assert!((mean_distance_pow(0.0, s, 1.0) - 2.0 * s * (2.0 / PI).sqrt()).abs() < 1e-10);
        // large a: E|a e - z| → a + s²/a
        let a = 30.0;
        assert!((mean_distance_pow(a, 1.0, 1.0) - (a + 1.0 / a)).abs() < 1e-4);
        // E|ae - z|² = a² + 3 s²
        assert!((mean_distance_pow(1.3, s, 2.0) - (1.69 + 3.0 * s * s)).abs() < 1e-9);
    }
}
