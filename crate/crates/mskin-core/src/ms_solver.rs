//! Perturbed non-isothermal Maxwell-Stefan system on the periodic unit box.
//!
//! Unknowns are c̃ (N species), T̃ and Ũ ∈ Span(1)^⊥ around (c̄, 0, 1):
//! c = c̄ + λc̃, T = 1 + λT̃. Space is Fourier spectral with 3/2 padding for
//! every nonlinear pointwise operation; the Nyquist mode is kept at zero.
//!
//! Each time step runs a Picard loop with coefficients frozen at the
//! previous iterate:
//!   - c̃_tot is advanced exactly by the heat kernel (it decouples);
//!   - T̃ takes a backward-Euler step of its equation, quadratic terms lagged;
//!   - Ũ = (1+λT̃)^{1-γ/2} A(c)⁺ [∇c̃ - ∇c̃_tot c / c_tot];
//!   - c̃ takes a backward-Euler step of the mass equation, with the
//!     cross-diffusion flux lagged and stabilized by D Δ (D a common scalar,
//!     so Σ_i c̃_i is untouched), and the Fick part integrated with the exact
//!     time integral of c̃_tot.
//! A fixed point of the loop is a backward-Euler step of the full system.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{DivergenceReason, Error, Result};
use crate::ms_matrix::{estimate_spectral_constants, ms_matrix_unchecked, pseudo_inverse_ker1};
use crate::numerics::fmt_f64;

/// Periodic grid on [0,1)^dim with n points per axis.
#[derive(Clone)]
pub struct PeriodicGrid {
    pub dim: usize,
    pub n: usize,
    coarse: [Arc<dyn Fft<f64>>; 2],
    fine: [Arc<dyn Fft<f64>>; 2],
}

impl fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicGrid").field("dim", &self.dim).field("n", &self.n).finish()
    }
}

fn multi_index(mut idx: usize, n: usize, dim: usize) -> [usize; 3] {
    let mut out = [0; 3];
    for a in (0..dim).rev() {
        out[a] = idx % n;
        idx /= n;
    }
    out
}

/// Signed integer frequency of FFT slot j; None for the Nyquist slot.
fn freq(j: usize, n: usize) -> Option<i64> {
    if 2 * j == n {
        None
    } else if 2 * j < n {
        Some(j as i64)
    } else {
        Some(j as i64 - n as i64)
    }
}

fn fft_nd(data: &mut [Complex64], n: usize, dim: usize, plan: &Arc<dyn Fft<f64>>) {
    let total = data.len();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for a in 0..dim {
        let stride = n.pow((dim - 1 - a) as u32);
        for start in 0..total {
            // lines along axis a start where that coordinate is zero
            if (start / stride) % n != 0 {
                continue;
            }
            for k in 0..n {
                line[k] = data[start + k * stride];
            }
            plan.process(&mut line);
            for k in 0..n {
                data[start + k * stride] = line[k];
            }
        }
    }
}

impl PeriodicGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Param(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::Param(format!("n_x must be even and at least 4, got {n}")));
        }
        let mut planner = FftPlanner::new();
        let m = 3 * n / 2;
        Ok(Self {
            dim,
            n,
            coarse: [planner.plan_fft_forward(n), planner.plan_fft_inverse(n)],
            fine: [planner.plan_fft_forward(m), planner.plan_fft_inverse(m)],
        })
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn fine_n(&self) -> usize {
        3 * self.n / 2
    }

    pub fn fine_len(&self) -> usize {
        self.fine_n().pow(self.dim as u32)
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let m = multi_index(idx, self.n, self.dim);
        let h = self.spacing();
        [m[0] as f64 * h, m[1] as f64 * h, m[2] as f64 * h]
    }

    /// Angular wavevector of a spectral slot; None if any axis is Nyquist.
    pub fn wavevector(&self, idx: usize) -> Option<[f64; 3]> {
        let m = multi_index(idx, self.n, self.dim);
        let mut k = [0.0; 3];
        for a in 0..self.dim {
            k[a] = 2.0 * PI * freq(m[a], self.n)? as f64;
        }
        Some(k)
    }

    pub fn k2(&self, idx: usize) -> Option<f64> {
        self.wavevector(idx).map(|k| k[0] * k[0] + k[1] * k[1] + k[2] * k[2])
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        let mut d: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fft_nd(&mut d, self.n, self.dim, &self.coarse[0]);
        d
    }

    /// Inverse transform including the 1/n^dim factor; real part.
    pub fn inverse(&self, mut d: Vec<Complex64>) -> Vec<f64> {
        fft_nd(&mut d, self.n, self.dim, &self.coarse[1]);
        let s = 1.0 / self.len() as f64;
        d.iter().map(|z| z.re * s).collect()
    }

    /// Drop the Nyquist modes.
    pub fn band_limit(&self, f: &[f64]) -> Vec<f64> {
        let mut d = self.forward(f);
        for (i, z) in d.iter_mut().enumerate() {
            if self.wavevector(i).is_none() {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        self.inverse(d)
    }

    pub fn grad(&self, f: &[f64]) -> Vec<Vec<f64>> {
        let d = self.forward(f);
        (0..self.dim)
            .map(|a| {
                let g: Vec<Complex64> = d
                    .iter()
                    .enumerate()
                    .map(|(i, z)| match self.wavevector(i) {
                        Some(k) => z * Complex64::new(0.0, k[a]),
                        None => Complex64::new(0.0, 0.0),
                    })
                    .collect();
                self.inverse(g)
            })
            .collect()
    }

    pub fn div(&self, comps: &[Vec<f64>]) -> Vec<f64> {
        let mut acc = vec![Complex64::new(0.0, 0.0); self.len()];
        for (a, c) in comps.iter().enumerate() {
            let d = self.forward(c);
            for (i, z) in d.iter().enumerate() {
                if let Some(k) = self.wavevector(i) {
                    acc[i] += z * Complex64::new(0.0, k[a]);
                }
            }
        }
        self.inverse(acc)
    }

    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        let d = self.forward(f);
        let g = d.iter().enumerate().map(|(i, z)| z * -self.k2(i).unwrap_or(0.0)).collect();
        self.inverse(g)
    }

    /// Trigonometric interpolant of f sampled on the 3/2-padded grid.
    pub fn to_fine(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n;
        let m = self.fine_n();
        let d = self.forward(f);
        let mut e = vec![Complex64::new(0.0, 0.0); self.fine_len()];
        for (i, z) in d.iter().enumerate() {
            let mi = multi_index(i, n, self.dim);
            let mut j = 0;
            let mut skip = false;
            for a in 0..self.dim {
                match freq(mi[a], n) {
                    None => skip = true,
                    Some(q) => j = j * m + q.rem_euclid(m as i64) as usize,
                }
            }
            if !skip {
                e[j] = *z;
            }
        }
        fft_nd(&mut e, m, self.dim, &self.fine[1]);
        let s = 1.0 / self.len() as f64;
        e.iter().map(|z| z.re * s).collect()
    }

    /// Truncate a padded-grid field back to the resolved coarse modes.
    pub fn from_fine(&self, g: &[f64]) -> Vec<f64> {
        let n = self.n;
        let m = self.fine_n();
        let mut e: Vec<Complex64> = g.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fft_nd(&mut e, m, self.dim, &self.fine[0]);
        let scale = self.len() as f64 / self.fine_len() as f64;
        let mut d = vec![Complex64::new(0.0, 0.0); self.len()];
        for (i, z) in d.iter_mut().enumerate() {
            let mi = multi_index(i, n, self.dim);
            let mut j = 0;
            let mut skip = false;
            for a in 0..self.dim {
                match freq(mi[a], n) {
                    None => skip = true,
                    Some(q) => j = j * m + q.rem_euclid(m as i64) as usize,
                }
            }
            if !skip {
                *z = e[j] * scale;
            }
        }
        self.inverse(d)
    }

    pub fn mean(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() / f.len() as f64
    }

    fn multi_indices(&self, s: usize) -> Vec<[u32; 3]> {
        let mut out = Vec::new();
        let r = s as u32;
        for a in 0..=r {
            for b in 0..=(if self.dim > 1 { r - a } else { 0 }) {
                for c in 0..=(if self.dim > 2 { r - a - b } else { 0 }) {
                    out.push([a, b, c]);
                }
            }
        }
        out
    }

    /// ‖f‖²_{H^s} = Σ_{|β|≤s} ‖∂^β f‖²_{L²}, by Parseval.
    pub fn sobolev_sq(&self, f: &[f64], s: usize) -> f64 {
        let d = self.forward(f);
        let betas = self.multi_indices(s);
        let norm = 1.0 / (self.len() as f64 * self.len() as f64);
        d.iter()
            .enumerate()
            .filter_map(|(i, z)| {
                let k = self.wavevector(i)?;
                let w: f64 = betas
                    .iter()
                    .map(|b| (0..3).map(|a| k[a].powi(2 * b[a] as i32)).product::<f64>())
                    .sum();
                Some(w * z.norm_sqr() * norm)
            })
            .sum()
    }

    /// Σ_{|β|≤s} ∫ ω |∂^β f|² dx with ω applied pointwise.
    pub fn sobolev_sq_weighted(&self, f: &[f64], s: usize, omega: &[f64]) -> f64 {
        let d = self.forward(f);
        let mut total = 0.0;
        for b in self.multi_indices(s) {
            let g: Vec<Complex64> = d
                .iter()
                .enumerate()
                .map(|(i, z)| match self.wavevector(i) {
                    Some(k) => {
                        let mut m = Complex64::new(1.0, 0.0);
                        for a in 0..3 {
                            for _ in 0..b[a] {
                                m *= Complex64::new(0.0, k[a]);
                            }
                        }
                        z * m
                    }
                    None => Complex64::new(0.0, 0.0),
                })
                .collect();
            let df = self.inverse(g);
            total += df.iter().zip(omega).map(|(x, w)| w * x * x).sum::<f64>() / self.len() as f64;
        }
        total
    }
}

/// Fixed parameters of a perturbation problem.
#[derive(Debug, Clone)]
pub struct MsProblem {
    pub grid: PeriodicGrid,
    pub delta: DMatrix<f64>,
    pub gamma: f64,
}

/// c = c̄ + λc̃, Ũ, T = 1 + λT̃ on the grid; Ũ is [species][axis][point].
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationState {
    pub c_bar: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub time: f64,
    pub c_tilde: Vec<Vec<f64>>,
    pub u_tilde: Vec<Vec<Vec<f64>>>,
    pub t_tilde: Vec<f64>,
}

impl PerturbationState {
    pub fn n_species(&self) -> usize {
        self.c_bar.len()
    }

    pub fn c_bar_tot(&self) -> f64 {
        self.c_bar.iter().sum()
    }

    pub fn ctot_tilde(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.t_tilde.len()];
        for c in &self.c_tilde {
            for (a, b) in s.iter_mut().zip(c) {
                *a += b;
            }
        }
        s
    }

    /// The constant state (c̄, 0, 1).
    pub fn stationary(grid: &PeriodicGrid, c_bar: &[f64], lambda: f64, alpha: f64) -> Self {
        let p = grid.len();
        Self {
            c_bar: c_bar.to_vec(),
            lambda,
            alpha,
            time: 0.0,
            c_tilde: vec![vec![0.0; p]; c_bar.len()],
            u_tilde: vec![vec![vec![0.0; p]; grid.dim]; c_bar.len()],
            t_tilde: vec![0.0; p],
        }
    }

    /// Smallest c_i and T over the grid.
    pub fn positivity_margins(&self) -> (f64, f64) {
        let mut min_c = f64::INFINITY;
        for (i, c) in self.c_tilde.iter().enumerate() {
            for x in c {
                min_c = min_c.min(self.c_bar[i] + self.lambda * x);
            }
        }
        let min_t = self.t_tilde.iter().map(|t| 1.0 + self.lambda * t).fold(f64::INFINITY, f64::min);
        (min_c, min_t)
    }
}

fn check_positive(state: &PerturbationState) -> Result<()> {
    let (mc, mt) = state.positivity_margins();
    if !(mc > 0.0 && mt > 0.0) {
        return Err(Error::Positivity(format!("min c = {mc:e}, min T = {mt:e}")));
    }
    Ok(())
}

/// Ũ at one point: ω' A(c)⁺ [∇c̃ - ∇c̃_tot c / c_tot], ω' = (1+λT̃)^{1-γ/2}.
/// `grad_c[i][a]` is ∂_a c̃_i.
fn velocity_at(delta: &DMatrix<f64>, c: &[f64], weight: f64, grad_c: &[[f64; 3]], dim: usize) -> Vec<[f64; 3]> {
    let n = c.len();
    let ctot: f64 = c.iter().sum();
    let pinv = pseudo_inverse_ker1(&ms_matrix_unchecked(c, delta));
    let mut out = vec![[0.0; 3]; n];
    for a in 0..dim {
        let gtot: f64 = grad_c.iter().map(|g| g[a]).sum();
        let rhs = DVector::from_iterator(n, (0..n).map(|i| weight * (grad_c[i][a] - gtot * c[i] / ctot)));
        let u = &pinv * rhs;
        let m = u.sum() / n as f64;
        for i in 0..n {
            out[i][a] = u[i] - m;
        }
    }
    out
}

/// Ũ* = Ũ - ⟨c,Ũ⟩/c_tot 1.
fn star(c: &[f64], u: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let ctot: f64 = c.iter().sum();
    let mut out = u.to_vec();
    for a in 0..3 {
        let s: f64 = c.iter().zip(u).map(|(ci, ui)| ci * ui[a]).sum::<f64>() / ctot;
        for o in out.iter_mut() {
            o[a] -= s;
        }
    }
    out
}

/// Velocities recovered from a state.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    /// Ũ, [species][axis][point]
    pub u_tilde: Vec<Vec<Vec<f64>>>,
    /// ũ = Ũ* - α∇c̃_tot / c_tot 1
    pub u_full: Vec<Vec<Vec<f64>>>,
    /// max_x |Σ c_i ũ_i + α∇c̃_tot|
    pub fick_residual: f64,
}

/// Ũ from the flux-force relation and the full perturbation velocity ũ.
pub fn recover_velocity(problem: &MsProblem, state: &PerturbationState) -> Result<VelocityField> {
    check_positive(state)?;
    let g = &problem.grid;
    let n = state.n_species();
    let dim = g.dim;
    let lam = state.lambda;
    let grads: Vec<Vec<Vec<f64>>> = state.c_tilde.iter().map(|c| g.grad(c)).collect();
    let gtot: Vec<Vec<f64>> = g.grad(&state.ctot_tilde());
    let p = g.len();
    let mut u_tilde = vec![vec![vec![0.0; p]; dim]; n];
    let mut u_full = vec![vec![vec![0.0; p]; dim]; n];
    let mut fick: f64 = 0.0;
    for x in 0..p {
        let c: Vec<f64> = (0..n).map(|i| state.c_bar[i] + lam * state.c_tilde[i][x]).collect();
        let ctot: f64 = c.iter().sum();
        let w = (1.0 + lam * state.t_tilde[x]).powf(1.0 - 0.5 * problem.gamma);
        let gc: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let mut v = [0.0; 3];
                for a in 0..dim {
                    v[a] = grads[i][a][x];
                }
                v
            })
            .collect();
        let u = velocity_at(&problem.delta, &c, w, &gc, dim);
        let us = star(&c, &u);
        for a in 0..dim {
            let ubar = state.alpha * gtot[a][x] / ctot;
            let mut flux = 0.0;
            for i in 0..n {
                u_tilde[i][a][x] = u[i][a];
                let full = us[i][a] - ubar;
                u_full[i][a][x] = full;
                flux += c[i] * full;
            }
            let scale = state.alpha * gtot[a][x].abs() + c.iter().zip(&us).map(|(ci, ui)| (ci * ui[a]).abs()).sum::<f64>();
            fick = fick.max((flux + state.alpha * gtot[a][x]).abs() / scale.max(1.0));
        }
    }
    Ok(VelocityField { u_tilde, u_full, fick_residual: fick })
}

/// Build (c̃, Ũ, T̃) from a concentration profile: T̃ from c_tot T = K with
/// K making T̃ mean-free, Ũ from the moment-compatibility relation.
pub fn make_well_prepared_initial_data(
    problem: &MsProblem,
    c_tilde: Vec<Vec<f64>>,
    lambda: f64,
    c_bar: &[f64],
    alpha: f64,
) -> Result<PerturbationState> {
    let g = &problem.grid;
    let n = c_bar.len();
    if c_tilde.len() != n || c_tilde.iter().any(|c| c.len() != g.len()) {
        return Err(Error::Param("initial profile does not match species count or grid".into()));
    }
    if !(lambda > 0.0 && lambda <= 1.0) || !(alpha > 0.0) {
        return Err(Error::Param(format!("need lambda in (0,1] and alpha > 0, got {lambda}, {alpha}")));
    }
    let c_tilde: Vec<Vec<f64>> = c_tilde.iter().map(|c| g.band_limit(c)).collect();
    let mut state = PerturbationState::stationary(g, c_bar, lambda, alpha);
    state.c_tilde = c_tilde;
    let (mc, _) = state.positivity_margins();
    if !(mc > 0.0) {
        return Err(Error::Positivity(format!("initial concentration not positive (min {mc:e})")));
    }
    let ctot = state.ctot_tilde();
    let cbt = state.c_bar_tot();
    let inv_mean = ctot.iter().map(|x| 1.0 / (cbt + lambda * x)).sum::<f64>() / ctot.len() as f64;
    let k = 1.0 / inv_mean;
    state.t_tilde = ctot.iter().map(|x| (k / (cbt + lambda * x) - 1.0) / lambda).collect();

    // (A3'): c∇T̃ + (1+λT̃)∇c̃ = (1+λT̃)^{γ/2} A(c) Ũ
    let dim = g.dim;
    let grads: Vec<Vec<Vec<f64>>> = state.c_tilde.iter().map(|c| g.grad(c)).collect();
    let gt = g.grad(&state.t_tilde);
    let scale = grads
        .iter()
        .flatten()
        .chain(gt.iter())
        .flat_map(|v| v.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for x in 0..g.len() {
        let c: Vec<f64> = (0..n).map(|i| c_bar[i] + lambda * state.c_tilde[i][x]).collect();
        let th = 1.0 + lambda * state.t_tilde[x];
        let rhs: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let mut r = [0.0; 3];
                for a in 0..dim {
                    r[a] = (c[i] * gt[a][x] + th * grads[i][a][x]) / th.powf(0.5 * problem.gamma);
                }
                r
            })
            .collect();
        let pinv = pseudo_inverse_ker1(&ms_matrix_unchecked(&c, &problem.delta));
        let u = crate::ms_matrix::solve_with_pinv(&pinv, &rhs, crate::ms_matrix::TAU_SOLV, Some(scale))?;
        for i in 0..n {
            for a in 0..dim {
                state.u_tilde[i][a][x] = u[i][a];
            }
        }
    }
    Ok(state)
}

/// c̃_tot after dt of the heat equation, mode by mode.
pub fn step_ctot(grid: &PeriodicGrid, ctot: &[f64], alpha: f64, dt: f64) -> Vec<f64> {
    let d = grid.forward(ctot);
    let e = d
        .iter()
        .enumerate()
        .map(|(i, z)| match grid.k2(i) {
            Some(k2) => z * (-alpha * k2 * dt).exp(),
            None => Complex64::new(0.0, 0.0),
        })
        .collect();
    grid.inverse(e)
}

/// ∫_0^dt c̃_tot(s) ds for the exact heat flow.
fn ctot_time_integral(grid: &PeriodicGrid, ctot: &[f64], alpha: f64, dt: f64) -> Vec<f64> {
    let d = grid.forward(ctot);
    let e = d
        .iter()
        .enumerate()
        .map(|(i, z)| match grid.k2(i) {
            Some(k2) if k2 > 0.0 => z * (-(-alpha * k2 * dt).exp_m1() / (alpha * k2)),
            Some(_) => z * dt,
            None => Complex64::new(0.0, 0.0),
        })
        .collect();
    grid.inverse(e)
}

/// Optional source added to the temperature equation, f(x, t).
pub type Forcing<'a> = &'a dyn Fn([f64; 3], f64) -> f64;

/// One backward-Euler step for T̃, coefficients and ∇T̃ frozen at `t_iter`,
/// c̃_tot at the new time:
///   T̃ = T̃_old + dt [ (2α/3) ∇·(θ/c ∇c̃_tot) + (2αλ/3) θ|∇c̃_tot|²/c² + αλ ∇c̃_tot·∇T̃/c ],
/// θ = 1+λT̃_iter, c = c̄_tot + λc̃_tot.
#[allow(clippy::too_many_arguments)]
pub fn step_temperature(
    grid: &PeriodicGrid,
    t_old: &[f64],
    t_iter: &[f64],
    ctot_new: &[f64],
    c_bar_tot: f64,
    lambda: f64,
    alpha: f64,
    dt: f64,
    forcing: Option<(Forcing<'_>, f64)>,
) -> Result<Vec<f64>> {
    let dim = grid.dim;
    let gc = grid.grad(ctot_new);
    let gt = grid.grad(t_iter);
    let fc: Vec<Vec<f64>> = gc.iter().map(|v| grid.to_fine(v)).collect();
    let ft: Vec<Vec<f64>> = gt.iter().map(|v| grid.to_fine(v)).collect();
    let fth = grid.to_fine(t_iter);
    let fct = grid.to_fine(ctot_new);
    let m = grid.fine_len();
    let mut flux = vec![vec![0.0; m]; dim];
    let mut src = vec![0.0; m];
    for x in 0..m {
        let th = 1.0 + lambda * fth[x];
        let c = c_bar_tot + lambda * fct[x];
        if !(th > 0.0 && c > 0.0) {
            return Err(Error::Positivity(format!("temperature step lost positivity (T = {th:e}, c_tot = {c:e}); halve dt")));
        }
        let mut g2 = 0.0;
        let mut gg = 0.0;
        for a in 0..dim {
            flux[a][x] = th / c * fc[a][x];
            g2 += fc[a][x] * fc[a][x];
            gg += fc[a][x] * ft[a][x];
        }
        src[x] = 2.0 * alpha * lambda / 3.0 * th * g2 / (c * c) + alpha * lambda * gg / c;
    }
    let flux: Vec<Vec<f64>> = flux.iter().map(|f| grid.from_fine(f)).collect();
    let div = grid.div(&flux);
    let src = grid.from_fine(&src);
    let mut out: Vec<f64> = (0..grid.len()).map(|x| t_old[x] + dt * (2.0 * alpha / 3.0 * div[x] + src[x])).collect();
    if let Some((f, t)) = forcing {
        for (x, o) in out.iter_mut().enumerate() {
            *o += dt * f(grid.coords(x), t);
        }
    }
    let out = grid.band_limit(&out);
    if out.iter().any(|t| !(1.0 + lambda * t > 0.0)) {
        return Err(Error::Positivity("temperature became nonpositive; halve dt".into()));
    }
    Ok(out)
}

/// Fine-grid cross-diffusion flux -c Ũ* for the current iterate, and the
/// largest ‖∂F/∂(∇c̃)‖_∞ seen (used for the stabilization constant).
fn ms_flux(problem: &MsProblem, state: &PerturbationState, t_tilde: &[f64]) -> (Vec<Vec<Vec<f64>>>, f64) {
    let g = &problem.grid;
    let n = state.n_species();
    let dim = g.dim;
    let lam = state.lambda;
    let m = g.fine_len();
    let fc: Vec<Vec<f64>> = state.c_tilde.iter().map(|c| g.to_fine(c)).collect();
    let fg: Vec<Vec<Vec<f64>>> = state.c_tilde.iter().map(|c| g.grad(c).iter().map(|v| g.to_fine(v)).collect()).collect();
    let ft = g.to_fine(t_tilde);
    let mut flux = vec![vec![vec![0.0; m]; dim]; n];
    let mut dmax: f64 = 0.0;
    for x in 0..m {
        let c: Vec<f64> = (0..n).map(|i| state.c_bar[i] + lam * fc[i][x]).collect();
        let th = (1.0 + lam * ft[x]).max(f64::MIN_POSITIVE);
        let w = th.powf(1.0 - 0.5 * problem.gamma);
        let ctot: f64 = c.iter().sum();
        let pinv = pseudo_inverse_ker1(&ms_matrix_unchecked(&c, &problem.delta));
        // M = -diag(c) P w A⁺ (I - c 1ᵀ / c_tot), P = I - 1 cᵀ / c_tot
        let mut inner = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                inner[(i, j)] -= c[i] / ctot;
            }
        }
        let mut outer = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                outer[(i, j)] -= c[j] / ctot;
            }
        }
        let mut mm = &outer * &pinv * &inner * (-w);
        for i in 0..n {
            for j in 0..n {
                mm[(i, j)] *= c[i];
            }
        }
        let rowmax = (0..n).map(|i| (0..n).map(|j| mm[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max);
        dmax = dmax.max(rowmax);
        for a in 0..dim {
            let gv = DVector::from_iterator(n, (0..n).map(|i| fg[i][a][x]));
            let f = &mm * gv;
            for i in 0..n {
                flux[i][a][x] = f[i];
            }
        }
    }
    (flux, dmax)
}

/// One Picard update of c̃ (backward Euler, stabilized by D Δ).
#[allow(clippy::too_many_arguments)]
pub fn step_concentrations(
    problem: &MsProblem,
    old: &PerturbationState,
    iter: &PerturbationState,
    t_new: &[f64],
    phi: &[f64],
    d_stab: f64,
    dt: f64,
) -> Vec<Vec<f64>> {
    let g = &problem.grid;
    let n = old.n_species();
    let dim = g.dim;
    let lam = old.lambda;
    let (flux, _) = ms_flux(problem, iter, t_new);
    // Fick part α ∇·(c/c_tot ∇Φ) with Φ the exact time integral of c̃_tot
    let gphi: Vec<Vec<f64>> = g.grad(phi).iter().map(|v| g.to_fine(v)).collect();
    let fc: Vec<Vec<f64>> = iter.c_tilde.iter().map(|c| g.to_fine(c)).collect();
    let m = g.fine_len();
    let cbt = old.c_bar_tot();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut fick = vec![vec![0.0; m]; dim];
        for x in 0..m {
            let ctot: f64 = cbt + lam * (0..n).map(|j| fc[j][x]).sum::<f64>();
            let wi = (old.c_bar[i] + lam * fc[i][x]) / ctot;
            for a in 0..dim {
                fick[a][x] = old.alpha * wi * gphi[a][x];
            }
        }
        let ms: Vec<Vec<f64>> = flux[i].iter().map(|f| g.from_fine(f)).collect();
        let fk: Vec<Vec<f64>> = fick.iter().map(|f| g.from_fine(f)).collect();
        let div_ms = g.div(&ms);
        let div_fk = g.div(&fk);
        let rhs: Vec<f64> = (0..g.len()).map(|x| old.c_tilde[i][x] + dt * div_ms[x] + div_fk[x]).collect();
        let r = g.forward(&rhs);
        let ci = g.forward(&iter.c_tilde[i]);
        let upd = r
            .iter()
            .zip(&ci)
            .enumerate()
            .map(|(k, (rz, cz))| match g.k2(k) {
                Some(k2) => (rz + cz * (d_stab * dt * k2)) / (1.0 + d_stab * dt * k2),
                None => Complex64::new(0.0, 0.0),
            })
            .collect();
        out.push(g.inverse(upd));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// E_0^{1/2} ≤ smallness · min c̄ is required before a step
    pub smallness: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { max_iter: 50, tol: 1e-12, smallness: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOutcome {
    pub state: PerturbationState,
    /// sup-norm differences of successive iterates
    pub differences: Vec<f64>,
}

impl PicardOutcome {
    /// Ratios of successive iterate differences.
    pub fn ratios(&self) -> Vec<f64> {
        self.differences.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).collect()
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Advance one step of size dt by Picard iteration.
pub fn picard_advance(
    problem: &MsProblem,
    state: &PerturbationState,
    dt: f64,
    cfg: &PicardConfig,
) -> Result<PicardOutcome> {
    picard_advance_forced(problem, state, dt, cfg, None)
}

pub fn picard_advance_forced(
    problem: &MsProblem,
    state: &PerturbationState,
    dt: f64,
    cfg: &PicardConfig,
    forcing: Option<Forcing<'_>>,
) -> Result<PicardOutcome> {
    let g = &problem.grid;
    let e0 = energy_value(g, state, 0, 1.0);
    let min_cbar = state.c_bar.iter().cloned().fold(f64::INFINITY, f64::min);
    if e0.sqrt() > cfg.smallness * min_cbar {
        return Err(Error::PicardDivergence {
            reason: DivergenceReason::Smallness,
            iterations: 0,
            last_diff: e0.sqrt(),
        });
    }
    check_positive(state)?;
    let n = state.n_species();
    let lam = state.lambda;
    let cbt = state.c_bar_tot();
    let ctot_old = state.ctot_tilde();
    let ctot_new = step_ctot(g, &ctot_old, state.alpha, dt);
    let phi = ctot_time_integral(g, &ctot_old, state.alpha, dt);

    // predictor that already carries the exact c̃_tot
    let mut iter = state.clone();
    for i in 0..n {
        let w = state.c_bar[i] / cbt;
        for x in 0..g.len() {
            iter.c_tilde[i][x] += w * (ctot_new[x] - ctot_old[x]);
        }
    }
    let (_, d_stab) = ms_flux(problem, &iter, &iter.t_tilde);
    let mut diffs = Vec::new();
    let t_new = state.time + dt;
    for k in 0..cfg.max_iter {
        let fwrap = forcing.map(|f| (f, t_new));
        let t_next = step_temperature(g, &state.t_tilde, &iter.t_tilde, &ctot_new, cbt, lam, state.alpha, dt, fwrap)
            .map_err(|_| Error::PicardDivergence {
                reason: DivergenceReason::Positivity,
                iterations: k,
                last_diff: diffs.last().cloned().unwrap_or(f64::NAN),
            })?;
        let c_next = step_concentrations(problem, state, &iter, &t_next, &phi, d_stab, dt);
        let mut diff = sup_diff(&t_next, &iter.t_tilde);
        for i in 0..n {
            diff = diff.max(sup_diff(&c_next[i], &iter.c_tilde[i]));
        }
        iter.t_tilde = t_next;
        iter.c_tilde = c_next;
        diffs.push(diff);
        let (mc, mt) = iter.positivity_margins();
        if !(mc > 0.0 && mt > 0.0) || !diff.is_finite() {
            return Err(Error::PicardDivergence { reason: DivergenceReason::Positivity, iterations: k + 1, last_diff: diff });
        }
        if diff < cfg.tol {
            iter.time = t_new;
            let v = recover_velocity(problem, &iter)?;
            iter.u_tilde = v.u_tilde;
            return Ok(PicardOutcome { state: iter, differences: diffs });
        }
    }
    Err(Error::PicardDivergence {
        reason: DivergenceReason::MaxIter,
        iterations: cfg.max_iter,
        last_diff: diffs.last().cloned().unwrap_or(f64::NAN),
    })
}

/// χ, d₁, d₂ and the λ_A they were computed with.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyConstants {
    pub lambda_a: f64,
    pub chi: f64,
    pub d1: f64,
    pub d2: f64,
}

impl EnergyConstants {
    pub fn new(lambda_a: f64, c_bar: &[f64], alpha: f64, gamma: f64) -> Self {
        let ct: f64 = c_bar.iter().sum();
        let cmin = c_bar.iter().cloned().fold(f64::INFINITY, f64::min);
        let f = 1.5f64.powf(1.0 - 0.5 * gamma);
        Self {
            lambda_a,
            chi: 4.0 / (3.0 * ct * ct) + 3.0 * f / (alpha * lambda_a * cmin * cmin),
            d1: lambda_a * cmin * cmin / 3.0,
            d2: alpha / ct + 2.0 * alpha / (3.0 * ct * ct) + 3.0 * f / (2.0 * lambda_a * cmin * cmin),
        }
    }

    /// λ_A estimated over the box spanned by the state's concentrations.
    pub fn for_state(
        problem: &MsProblem,
        state: &PerturbationState,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let c_box: Vec<(f64, f64)> = state
            .c_tilde
            .iter()
            .zip(&state.c_bar)
            .map(|(c, cb)| {
                let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (cb + state.lambda * lo, cb + state.lambda * hi)
            })
            .collect();
        let k = estimate_spectral_constants(&problem.delta, &c_box, n_samples, seed)?;
        Ok(Self::new(k.lambda_a, &state.c_bar, state.alpha, problem.gamma))
    }
}

/// ‖c̃‖²_{H^s(c̄⁻¹)} + ‖T̃‖²_{H^s} + χ‖c̃_tot‖²_{H^s}.
fn energy_value(grid: &PeriodicGrid, state: &PerturbationState, s: usize, chi: f64) -> f64 {
    let mut e = 0.0;
    for (c, cb) in state.c_tilde.iter().zip(&state.c_bar) {
        e += grid.sobolev_sq(c, s) / cb;
    }
    e + grid.sobolev_sq(&state.t_tilde, s) + chi * grid.sobolev_sq(&state.ctot_tilde(), s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub s: usize,
    pub e_s: f64,
    pub d_s: f64,
    pub chi: f64,
    pub d1: f64,
    pub d2: f64,
    pub residual_fick: f64,
    /// max |c∇T̃ + (1+λT̃)∇c̃ - (1+λT̃)^{γ/2} A(c) Ũ|
    pub residual_fluxforce: f64,
    /// max |∇(c_tot T)| / λ
    pub residual_ctot_t: f64,
    pub min_c: f64,
    pub min_t: f64,
}

/// Energy, dissipation and residuals of a state.
pub fn energy_report(
    problem: &MsProblem,
    state: &PerturbationState,
    s: usize,
    k: &EnergyConstants,
) -> Result<EnergyReport> {
    let g = &problem.grid;
    let lam = state.lambda;
    let e_s = energy_value(g, state, s, k.chi);
    let omega: Vec<f64> = state.t_tilde.iter().map(|t| (1.0 + lam * t).powf(0.5 * problem.gamma - 1.0)).collect();
    let mut u_norm = 0.0;
    for ui in &state.u_tilde {
        for comp in ui {
            u_norm += g.sobolev_sq_weighted(comp, s, &omega);
        }
    }
    let ctot = state.ctot_tilde();
    let gct = g.grad(&ctot);
    let grad_norm: f64 = gct.iter().map(|v| g.sobolev_sq(v, s)).sum();
    let d_s = k.d1 * u_norm + k.d2 * grad_norm;

    let v = recover_velocity(problem, state)?;
    let n = state.n_species();
    let dim = g.dim;
    let gt = g.grad(&state.t_tilde);
    let grads: Vec<Vec<Vec<f64>>> = state.c_tilde.iter().map(|c| g.grad(c)).collect();
    let mut ff: f64 = 0.0;
    let mut ct: f64 = 0.0;
    for x in 0..g.len() {
        let c: Vec<f64> = (0..n).map(|i| state.c_bar[i] + lam * state.c_tilde[i][x]).collect();
        let ctot_x: f64 = c.iter().sum();
        let th = 1.0 + lam * state.t_tilde[x];
        let a = ms_matrix_unchecked(&c, &problem.delta);
        for d in 0..dim {
            let u = DVector::from_iterator(n, (0..n).map(|i| state.u_tilde[i][d][x]));
            let au = &a * u;
            for i in 0..n {
                let lhs = c[i] * gt[d][x] + th * grads[i][d][x];
                ff = ff.max((lhs - th.powf(0.5 * problem.gamma) * au[i]).abs());
            }
            ct = ct.max((ctot_x * gt[d][x] + th * gct[d][x]).abs());
        }
    }
    let (min_c, min_t) = state.positivity_margins();
    Ok(EnergyReport {
        s,
        e_s,
        d_s,
        chi: k.chi,
        d1: k.d1,
        d2: k.d2,
        residual_fick: v.fick_residual,
        residual_fluxforce: ff,
        residual_ctot_t: ct,
        min_c,
        min_t,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub dt: f64,
    pub t_end: f64,
    pub s_list: Vec<usize>,
    pub picard: PicardConfig,
    pub tol_e: f64,
    pub snapshot_every: usize,
    pub lambda_a_samples: usize,
    pub seed: u64,
}

/// Parabolic step cfl·dx² / max(α, D) with D the largest cross-diffusion
/// coefficient at the given state. The diffusive part is implicit, so cfl
/// above 1 is fine; it only limits time error.
pub fn default_dt(problem: &MsProblem, state: &PerturbationState, cfl: f64) -> f64 {
    let (_, d) = ms_flux(problem, state, &state.t_tilde);
    let h = problem.grid.spacing();
    cfl * h * h / d.max(state.alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub t: f64,
    pub dt: f64,
    pub reports: Vec<EnergyReport>,
    pub picard_iterations: usize,
    pub picard_max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub constants: EnergyConstants,
    pub series: Vec<SeriesRow>,
    pub snapshots: Vec<PerturbationState>,
    pub final_state: PerturbationState,
    pub assertions: Vec<Assertion>,
    /// set when the run stopped early
    pub aborted: Option<String>,
}

impl SimulationOutput {
    pub fn passed(&self) -> bool {
        self.aborted.is_none() && self.assertions.iter().all(|a| a.passed)
    }
}

/// Time loop with energy checks after every accepted step. A positivity
/// rejection halves dt (at most 20 times).
pub fn run_simulation(problem: &MsProblem, init: PerturbationState, cfg: &SimulationConfig) -> Result<SimulationOutput> {
    if !(cfg.t_end >= 0.0 && cfg.dt > 0.0) {
        return Err(Error::Param(format!("need t_end >= 0 and dt > 0, got {} and {}", cfg.t_end, cfg.dt)));
    }
    if cfg.s_list.is_empty() {
        return Err(Error::Param("s_list is empty".into()));
    }
    let constants = EnergyConstants::for_state(problem, &init, cfg.lambda_a_samples, cfg.seed)?;
    let reports = |st: &PerturbationState| -> Result<Vec<EnergyReport>> {
        cfg.s_list.iter().map(|&s| energy_report(problem, st, s, &constants)).collect()
    };
    let mut state = init;
    let first = reports(&state)?;
    let e_init: Vec<f64> = first.iter().map(|r| r.e_s).collect();
    let mut e_prev = e_init.clone();
    let mut dissipated = vec![0.0; cfg.s_list.len()];
    let mut series = vec![SeriesRow { t: 0.0, dt: 0.0, reports: first, picard_iterations: 0, picard_max_ratio: 0.0 }];
    let mut snapshots = vec![state.clone()];
    let mut monotone = vec![true; cfg.s_list.len()];
    let mut worst_mono = vec![0.0f64; cfg.s_list.len()];
    let mut integral_ok = vec![true; cfg.s_list.len()];
    let mut worst_integral = vec![f64::NEG_INFINITY; cfg.s_list.len()];
    let mut max_ratio: f64 = 0.0;
    let mut aborted = None;
    let mut steps = 0usize;
    while state.time < cfg.t_end * (1.0 - 1e-12) {
        let mut dt = cfg.dt.min(cfg.t_end - state.time);
        let mut halvings = 0;
        let out = loop {
            match picard_advance(problem, &state, dt, &cfg.picard) {
                Ok(o) => break Ok(o),
                Err(Error::PicardDivergence { reason: DivergenceReason::Positivity, .. }) | Err(Error::Positivity(_))
                    if halvings < 20 =>
                {
                    dt *= 0.5;
                    halvings += 1;
                }
                Err(e) => break Err(e),
            }
        };
        let out = match out {
            Ok(o) => o,
            Err(e) => {
                aborted = Some(format!("t = {}: {e}", state.time));
                break;
            }
        };
        let ratio = out.ratios().into_iter().fold(0.0, f64::max);
        max_ratio = max_ratio.max(ratio);
        state = out.state;
        steps += 1;
        let rep = reports(&state)?;
        for (k, r) in rep.iter().enumerate() {
            dissipated[k] += r.d_s * dt;
            let rel = (r.e_s - e_prev[k]) / e_prev[k].max(f64::MIN_POSITIVE);
            if r.e_s > e_prev[k] * (1.0 + cfg.tol_e) && r.e_s > 0.0 {
                monotone[k] = false;
            }
            worst_mono[k] = worst_mono[k].max(rel);
            let excess = (r.e_s + dissipated[k]) / e_init[k].max(f64::MIN_POSITIVE) - 1.0;
            if r.e_s + dissipated[k] > e_init[k] * (1.0 + cfg.tol_e) && e_init[k] > 0.0 {
                integral_ok[k] = false;
            }
            worst_integral[k] = worst_integral[k].max(excess);
            e_prev[k] = r.e_s;
        }
        let (mc, mt) = (rep[0].min_c, rep[0].min_t);
        series.push(SeriesRow {
            t: state.time,
            dt,
            picard_iterations: out.differences.len(),
            picard_max_ratio: ratio,
            reports: rep,
        });
        if cfg.snapshot_every > 0 && steps % cfg.snapshot_every == 0 {
            snapshots.push(state.clone());
        }
        if !(mc > 0.0 && mt > 0.0) {
            aborted = Some(format!("t = {}: positivity lost", state.time));
            snapshots.push(state.clone());
            break;
        }
    }
    let mut assertions = Vec::new();
    for (k, &s) in cfg.s_list.iter().enumerate() {
        assertions.push(Assertion {
            name: format!("E_{s} nonincreasing"),
            passed: monotone[k],
            detail: format!("largest relative increase {}", fmt_f64(worst_mono[k])),
        });
        assertions.push(Assertion {
            name: format!("E_{s}(t) + int D_{s} <= E_{s}(0)"),
            passed: integral_ok[k],
            detail: format!("largest relative excess {}", fmt_f64(worst_integral[k])),
        });
    }
    let min_c = series.iter().map(|r| r.reports[0].min_c).fold(f64::INFINITY, f64::min);
    let min_t = series.iter().map(|r| r.reports[0].min_t).fold(f64::INFINITY, f64::min);
    assertions.push(Assertion {
        name: "positivity".into(),
        passed: min_c > 0.0 && min_t > 0.0,
        detail: format!("min c {} min T {}", fmt_f64(min_c), fmt_f64(min_t)),
    });
    assertions.push(Assertion {
        name: "picard contraction".into(),
        passed: max_ratio < 1.0,
        detail: format!("largest iterate-difference ratio {}", fmt_f64(max_ratio)),
    });
    Ok(SimulationOutput { constants, series, snapshots, final_state: state, assertions, aborted })
}

pub fn write_series_csv<W: Write>(series: &[SeriesRow], mut w: W) -> Result<()> {
    let Some(first) = series.first() else {
        return Ok(());
    };
    write!(w, "t,dt")?;
    for r in &first.reports {
        write!(w, ",E_{0},D_{0}", r.s)?;
    }
    writeln!(w, ",residual_fick,residual_fluxforce,residual_ctotT,min_c,min_T,picard_iterations,picard_max_ratio")?;
    for row in series {
        write!(w, "{},{}", fmt_f64(row.t), fmt_f64(row.dt))?;
        for r in &row.reports {
            write!(w, ",{},{}", fmt_f64(r.e_s), fmt_f64(r.d_s))?;
        }
        let r = &row.reports[0];
        writeln!(
            w,
            ",{},{},{},{},{},{},{}",
            fmt_f64(r.residual_fick),
            fmt_f64(r.residual_fluxforce),
            fmt_f64(r.residual_ctot_t),
            fmt_f64(r.min_c),
            fmt_f64(r.min_t),
            row.picard_iterations,
            fmt_f64(row.picard_max_ratio)
        )?;
    }
    Ok(())
}

/// Point values of c̃_i, T̃ and Ũ_i (first axis), one row per grid point.
pub fn write_fields_csv<W: Write>(grid: &PeriodicGrid, state: &PerturbationState, mut w: W) -> Result<()> {
    let n = state.n_species();
    write!(w, "x,y,z")?;
    for i in 0..n {
        write!(w, ",c{i}")?;
    }
    write!(w, ",T")?;
    for i in 0..n {
        write!(w, ",U{i}")?;
    }
    writeln!(w)?;
    for x in 0..grid.len() {
        let p = grid.coords(x);
        write!(w, "{},{},{}", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2]))?;
        for i in 0..n {
            write!(w, ",{}", fmt_f64(state.c_tilde[i][x]))?;
        }
        write!(w, ",{}", fmt_f64(state.t_tilde[x]))?;
        for i in 0..n {
            write!(w, ",{}", fmt_f64(state.u_tilde[i][0][x]))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(g: &PeriodicGrid, a: f64, k: f64) -> Vec<f64> {
        (0..g.len()).map(|x| a * (2.0 * PI * k * g.coords(x)[0]).cos()).collect()
    }

    #[test]
    fn spectral_derivatives_are_exact() {
        let g = PeriodicGrid::new(1, 16).unwrap();
        let f = cosine(&g, 1.0, 3.0);
        let d = g.grad(&f);
        for x in 0..g.len() {
            let exact = -6.0 * PI * (6.0 * PI * g.coords(x)[0]).sin();
            assert!((d[0][x] - exact).abs() < 1e-12);
        }
        let lap = g.laplacian(&f);
        for x in 0..g.len() {
            assert!((lap[x] + 36.0 * PI * PI * f[x]).abs() < 1e-10);
        }
        // H^1 norm of cos(2πkx): (1 + (2πk)²)/2
        let h1 = g.sobolev_sq(&f, 1);
        assert!((h1 - 0.5 * (1.0 + 36.0 * PI * PI)).abs() < 1e-10);
    }

    #[test]
    fn padding_round_trip_and_products() {
        let g = PeriodicGrid::new(2, 8).unwrap();
        let f: Vec<f64> = (0..g.len())
            .map(|i| {
                let p = g.coords(i);
                (2.0 * PI * p[0]).cos() + 0.5 * (4.0 * PI * p[1]).sin()
            })
            .collect();
        let back = g.from_fine(&g.to_fine(&f));
        for (a, b) in f.iter().zip(&back) {
            assert!((a - b).abs() < 1e-13);
        }
        // cos² = 1/2 + cos(4πx)/2 is resolved exactly through the padded grid
        let h = PeriodicGrid::new(1, 8).unwrap();
        let c = cosine(&h, 1.0, 1.0);
        let fine = h.to_fine(&c);
        let sq: Vec<f64> = fine.iter().map(|x| x * x).collect();
        let p = h.from_fine(&sq);
        for x in 0..h.len() {
            assert!((p[x] - c[x] * c[x]).abs() < 1e-13);
        }
    }

    #[test]
    fn heat_step_examples() {
        let g = PeriodicGrid::new(1, 32).unwrap();
        let f = cosine(&g, 1.0, 1.0);
        let out = step_ctot(&g, &f, 0.3, 0.1);
        let fac = (-4.0 * PI * PI * 0.3 * 0.1f64).exp();
        for x in 0..g.len() {
            assert!((out[x] - fac * f[x]).abs() < 1e-14);
        }
        let c = vec![2.5; g.len()];
        assert!(step_ctot(&g, &c, 0.3, 1.0).iter().all(|x| (x - 2.5).abs() < 1e-14));
    }
}
