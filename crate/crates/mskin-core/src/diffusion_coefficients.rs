//! Binary diffusion coefficients k_ij and Δ_ij, with a Monte-Carlo oracle for
//! the nine-dimensional integral they come from.
//!
//! Convention (checked against the oracle): with normalized Gaussians,
//!
//! k_ij = C^Φ μ²/(6T) E[|g|^γ ∫ b(ĝ·σ) |rσ - g|² dσ],  g = v - v*,  r = |g|,
//!
//! and the σ-integral equals 4π r² ∫ b(x)(1 - x) dx. For any angular law
//! with ∫ b(x) x dx = 0 (in particular constant b) this is 4π r² ‖b‖₁ and the
//! expectation collapses to the closed form below, C^Φ included as a factor.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mixture_core::MixtureSpec;
use crate::numerics::{fmt_f64, gamma, merge_tree, MeanVar};

pub(crate) const MC_BATCH: usize = 1 << 16;

/// (8√π/3) C^Φ μ ‖b‖₁ Γ((γ+5)/2) (2T/μ)^{γ/2}.
pub fn k_closed_form(spec: &MixtureSpec, i: usize, j: usize, t: f64) -> Result<f64> {
    let n = spec.n_species();
    if i >= n || j >= n {
        return Err(Error::Domain(format!("species index ({i},{j}) out of range")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("temperature must be positive, got {t}")));
    }
    Ok(k_unchecked(spec, i, j, t))
}

fn k_unchecked(spec: &MixtureSpec, i: usize, j: usize, t: f64) -> f64 {
    let mu = spec.reduced_mass(i, j);
    let g = spec.gamma;
    8.0 * PI.sqrt() / 3.0
        * spec.phi_const[i][j]
        * mu
        * spec.angular[i][j].l1_norm()
        * gamma(0.5 * (g + 5.0))
        * (2.0 * t / mu).powf(0.5 * g)
}

/// Sample a velocity from N(0, T/m) in each component.
pub(crate) fn gaussian3<R: Rng>(rng: &mut R, sd: f64) -> [f64; 3] {
    [
        sd * rng.sample::<f64, _>(StandardNormal),
        sd * rng.sample::<f64, _>(StandardNormal),
        sd * rng.sample::<f64, _>(StandardNormal),
    ]
}

/// Uniform point on the unit sphere.
pub(crate) fn unit_sphere<R: Rng>(rng: &mut R) -> [f64; 3] {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let s = (1.0 - z * z).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

/// Run `n_samples` draws of `f` in fixed-size batches, each on its own
/// keyed stream, and merge the partial statistics in a fixed tree order.
pub(crate) fn mc_batches<F>(seed: u64, key: &[u64], n_samples: usize, f: F) -> MeanVar
where
    F: Fn(&mut rand_chacha::ChaCha12Rng) -> f64 + Sync,
{
    let n_batches = n_samples.div_ceil(MC_BATCH);
    let parts: Vec<MeanVar> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut k = key.to_vec();
            k.push(b as u64);
            let mut rng = crate::rng::stream(seed, &k);
            let len = MC_BATCH.min(n_samples - b * MC_BATCH);
            let mut acc = MeanVar::default();
            for _ in 0..len {
                acc.push(f(&mut rng));
            }
            acc
        })
        .collect();
    merge_tree(&parts)
}

/// Monte-Carlo estimate of the integral line defining k_ij, with its
/// standard error. v ~ N(0, T/m_i), v* ~ N(0, T/m_j) absorb the Gaussian
/// weights; σ is uniform on S² with weight 4π.
pub fn k_mc_oracle(
    spec: &MixtureSpec,
    i: usize,
    j: usize,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    k_closed_form(spec, i, j, t)?;
    if n_samples < 10_000 {
        return Err(Error::Param(format!("need at least 1e4 samples, got {n_samples}")));
    }
    let sd_i = (t / spec.masses[i]).sqrt();
    let sd_j = (t / spec.masses[j]).sqrt();
    let mu = spec.reduced_mass(i, j);
    let pref = spec.phi_const[i][j] * mu * mu / (6.0 * t);
    let law = &spec.angular[i][j];
    let gam = spec.gamma;
    let acc = mc_batches(seed, &[0xd1ff, i as u64, j as u64], n_samples, |rng| {
        let v = gaussian3(rng, sd_i);
        let w = gaussian3(rng, sd_j);
        let s = unit_sphere(rng);
        let g = [v[0] - w[0], v[1] - w[1], v[2] - w[2]];
        let r = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if r == 0.0 {
            return 0.0;
        }
        let cos = (g[0] * s[0] + g[1] * s[1] + g[2] * s[2]) / r;
        let d = [r * s[0] - g[0], r * s[1] - g[1], r * s[2] - g[2]];
        let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let kin = if gam == 0.0 { 1.0 } else { r.powf(gam) };
        pref * kin * law.eval(cos) * d2 * 4.0 * PI
    });
    Ok((acc.mean(), acc.std_err()))
}

/// Reduced masses, angular norms and Δ_ij for a mixture.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionModel {
    pub mu_red: Vec<Vec<f64>>,
    pub b_l1: Vec<Vec<f64>>,
    pub gamma: f64,
    pub delta: Vec<Vec<f64>>,
}

impl DiffusionModel {
    /// k_ij(T) = T^{γ/2} / Δ_ij.
    pub fn k(&self, i: usize, j: usize, t: f64) -> f64 {
        t.powf(0.5 * self.gamma) / self.delta[i][j]
    }

    pub fn delta_matrix(&self) -> DMatrix<f64> {
        let n = self.delta.len();
        DMatrix::from_fn(n, n, |i, j| self.delta[i][j])
    }
}

/// Δ_ij = 1/k_ij(T = 1); depends on masses and kernels only.
pub fn build_delta(spec: &MixtureSpec) -> DiffusionModel {
    let n = spec.n_species();
    let mut mu_red = vec![vec![0.0; n]; n];
    let mut b_l1 = vec![vec![0.0; n]; n];
    let mut delta = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            mu_red[i][j] = spec.reduced_mass(i, j);
            b_l1[i][j] = spec.angular[i][j].l1_norm();
            delta[i][j] = 1.0 / k_unchecked(spec, i, j, 1.0);
        }
    }
    DiffusionModel { mu_red, b_l1, gamma: spec.gamma, delta }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub i: usize,
    pub j: usize,
    pub mu_red: f64,
    pub delta: f64,
    pub k_t1: f64,
    pub mc_estimate: f64,
    pub std_err: f64,
}

/// One row per unordered pair i ≤ j; the oracle runs at T = 1.
pub fn coefficient_table(spec: &MixtureSpec, n_samples: usize, seed: u64) -> Result<Vec<CoefficientRow>> {
    let model = build_delta(spec);
    let n = spec.n_species();
    let mut rows = Vec::new();
    for i in 0..n {
        for j in i..n {
            let (est, se) = k_mc_oracle(spec, i, j, 1.0, n_samples, seed)?;
            rows.push(CoefficientRow {
                i,
                j,
                mu_red: model.mu_red[i][j],
                delta: model.delta[i][j],
                k_t1: model.k(i, j, 1.0),
                mc_estimate: est,
                std_err: se,
            });
        }
    }
    Ok(rows)
}

pub fn write_coefficient_csv<W: Write>(rows: &[CoefficientRow], mut w: W) -> Result<()> {
    writeln!(w, "i,j,mu_ij,delta_ij,k_ij_t1,mc_estimate,std_err")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.i,
            r.j,
            fmt_f64(r.mu_red),
            fmt_f64(r.delta),
            fmt_f64(r.k_t1),
            fmt_f64(r.mc_estimate),
            fmt_f64(r.std_err)
        )?;
    }
    Ok(())
}
