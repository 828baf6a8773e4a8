//! Mixture description, Maxwellians, velocity grids and macroscopic moments.
//!
//! Units: Boltzmann constant is 1, masses are dimensionless.

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot3, fmt_f64};

/// Angular part b(cos θ) of a collision kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngularLaw {
    Constant { b0: f64 },
    /// Values on equally spaced nodes of [-1, 1], interpolated linearly.
    Tabulated { values: Vec<f64> },
}

impl AngularLaw {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            AngularLaw::Constant { b0 } => *b0,
            AngularLaw::Tabulated { values } => {
                let n = values.len();
                let s = ((x.clamp(-1.0, 1.0) + 1.0) * 0.5 * (n - 1) as f64).min((n - 1) as f64);
                let k = (s.floor() as usize).min(n - 2);
                let w = s - k as f64;
                values[k] * (1.0 - w) + values[k + 1] * w
            }
        }
    }

    /// ∫_{-1}^{1} |b(x)| dx.
    pub fn l1_norm(&self) -> f64 {
        match self {
            AngularLaw::Constant { b0 } => 2.0 * b0.abs(),
            AngularLaw::Tabulated { values } => {
                let h = 2.0 / (values.len() - 1) as f64;
                values.windows(2).map(|w| 0.5 * h * (w[0].abs() + w[1].abs())).sum()
            }
        }
    }

    /// ∫_{-1}^{1} b(x) x dx (exact for the piecewise-linear interpolant).
    pub fn first_moment(&self) -> f64 {
        match self {
            AngularLaw::Constant { .. } => 0.0,
            AngularLaw::Tabulated { values } => {
                let n = values.len();
                let h = 2.0 / (n - 1) as f64;
                (0..n - 1)
                    .map(|k| {
                        let x0 = -1.0 + k as f64 * h;
                        let x1 = x0 + h;
                        h / 6.0 * (values[k] * (2.0 * x0 + x1) + values[k + 1] * (x0 + 2.0 * x1))
                    })
                    .sum()
            }
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            AngularLaw::Constant { b0 } => *b0,
            AngularLaw::Tabulated { values } => values.iter().cloned().fold(f64::MIN, f64::max),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            AngularLaw::Constant { b0 } => {
                if !(b0.is_finite() && *b0 > 0.0) {
                    return Err(Error::Param(format!("angular constant must be positive, got {b0}")));
                }
            }
            AngularLaw::Tabulated { values } => {
                if values.len() < 2 {
                    return Err(Error::Param("tabulated angular law needs at least 2 nodes".into()));
                }
                if values.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
                    return Err(Error::Param("tabulated angular law must be positive and finite".into()));
                }
            }
        }
        Ok(())
    }
}

/// Static physical description of an N-species gas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub masses: Vec<f64>,
    pub gamma: f64,
    pub phi_const: Vec<Vec<f64>>,
    pub angular: Vec<Vec<AngularLaw>>,
}

impl MixtureSpec {
    pub fn new(
        masses: Vec<f64>,
        gamma: f64,
        phi_const: Vec<Vec<f64>>,
        angular: Vec<Vec<AngularLaw>>,
    ) -> Result<Self> {
        let n = masses.len();
        if n == 0 {
            return Err(Error::Param("mixture needs at least one species".into()));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::Param(format!("masses must be positive, got {masses:?}")));
        }
        if !(gamma > -3.0 && gamma <= 1.0) {
            return Err(Error::Param(format!("gamma must lie in (-3, 1], got {gamma}")));
        }
        if phi_const.len() != n || phi_const.iter().any(|r| r.len() != n) {
            return Err(Error::Param("phi_const must be N x N".into()));
        }
        if angular.len() != n || angular.iter().any(|r| r.len() != n) {
            return Err(Error::Param("angular must be N x N".into()));
        }
        for i in 0..n {
            for j in 0..n {
                let c = phi_const[i][j];
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::Param(format!("phi_const[{i}][{j}] must be positive")));
                }
                if c != phi_const[j][i] {
                    return Err(Error::Param(format!("phi_const not symmetric at ({i},{j})")));
                }
                angular[i][j].validate()?;
                if angular[i][j] != angular[j][i] {
                    return Err(Error::Param(format!("angular law not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { masses, gamma, phi_const, angular })
    }

    /// Same C^Φ and constant b₀ for every pair.
    pub fn uniform(masses: Vec<f64>, gamma: f64, phi: f64, b0: f64) -> Result<Self> {
        let n = masses.len();
        Self::new(
            masses,
            gamma,
            vec![vec![phi; n]; n],
            vec![vec![AngularLaw::Constant { b0 }; n]; n],
        )
    }

    pub fn n_species(&self) -> usize {
        self.masses.len()
    }

    /// Kinetic modules only accept hard or Maxwellian potentials.
    pub fn require_kinetic(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Param(format!(
                "kinetic operations need gamma in [0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Collision kernel B_ij(|v - v*|, cos θ).
    pub fn kernel(&self, i: usize, j: usize, rel_speed: f64, cos_theta: f64) -> f64 {
        let kin = if self.gamma == 0.0 { 1.0 } else { rel_speed.powf(self.gamma) };
        self.phi_const[i][j] * kin * self.angular[i][j].eval(cos_theta)
    }

    pub fn reduced_mass(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.masses[i], self.masses[j]);
        a * b / (a + b)
    }
}

/// Parameters of c (m/2πT)^{3/2} exp(-m|v - εu|²/2T).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxwellianParams {
    pub c: f64,
    pub m: f64,
    pub u: [f64; 3],
    pub t: f64,
    pub eps: f64,
}

impl MaxwellianParams {
    pub fn new(c: f64, m: f64, u: [f64; 3], t: f64, eps: f64) -> Result<Self> {
        let p = Self { c, m, u, t, eps };
        p.validate()?;
        Ok(p)
    }

    /// Normalized global Maxwellian of a species with concentration c̄.
    pub fn equilibrium(c: f64, m: f64) -> Self {
        Self { c, m, u: [0.0; 3], t: 1.0, eps: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.m > 0.0 && self.t > 0.0) {
            return Err(Error::Param(format!("Maxwellian needs c, m, T > 0: {self:?}")));
        }
        if !self.u.iter().all(|x| x.is_finite()) || !self.eps.is_finite() {
            return Err(Error::Param("non-finite bulk velocity or epsilon".into()));
        }
        Ok(())
    }

    pub fn drift(&self) -> [f64; 3] {
        [self.eps * self.u[0], self.eps * self.u[1], self.eps * self.u[2]]
    }

    /// Natural log of the Maxwellian, finite for all finite v.
    pub fn ln_eval(&self, v: [f64; 3]) -> f64 {
        let d = self.drift();
        let w = [v[0] - d[0], v[1] - d[1], v[2] - d[2]];
        self.c.ln() + 1.5 * (self.m / (2.0 * PI * self.t)).ln() - self.m * dot3(w, w) / (2.0 * self.t)
    }

    pub fn eval(&self, v: [f64; 3]) -> f64 {
        self.ln_eval(v).exp()
    }
}

/// Checked evaluation of a Maxwellian at v.
pub fn eval_maxwellian(p: &MaxwellianParams, v: [f64; 3]) -> Result<f64> {
    p.validate()?;
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::Param(format!("non-finite velocity {v:?}")));
    }
    Ok(p.eval(v))
}

/// (∫M, ∫vM, ∫|v|²M) in closed form.
pub fn maxwellian_moments(p: &MaxwellianParams) -> (f64, [f64; 3], f64) {
    let d = p.drift();
    let mom = [p.c * d[0], p.c * d[1], p.c * d[2]];
    let e = 3.0 * p.c * p.t / p.m + p.c * dot3(d, d);
    (p.c, mom, e)
}

/// ∫|v|² v M dv = ε³c|u|²u + (5cT/m) εu.
pub fn third_moment(p: &MaxwellianParams) -> [f64; 3] {
    let d = p.drift();
    let s = p.c * dot3(d, d) + 5.0 * p.c * p.t / p.m;
    [s * d[0], s * d[1], s * d[2]]
}

/// Cell-centred uniform grid on [-v_max, v_max]³ with n_v points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    pub n_v: usize,
    pub v_max: f64,
}

impl VelocityGrid {
    pub fn new(n_v: usize, v_max: f64) -> Result<Self> {
        if n_v < 2 || !(v_max > 0.0 && v_max.is_finite()) {
            return Err(Error::Param(format!("bad velocity grid n_v={n_v}, v_max={v_max}")));
        }
        Ok(Self { n_v, v_max })
    }

    /// Eight thermal widths plus the bulk speed.
    pub fn default_for(m_min: f64, t: f64, bulk: f64, n_v: usize) -> Result<Self> {
        Self::new(n_v, 8.0 * (t / m_min).sqrt() + bulk)
    }

    pub fn h(&self) -> f64 {
        2.0 * self.v_max / self.n_v as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(3)
    }

    pub fn len(&self) -> usize {
        self.n_v * self.n_v * self.n_v
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coord(&self, k: usize) -> f64 {
        -self.v_max + (k as f64 + 0.5) * self.h()
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n_v + iy) * self.n_v + iz
    }

    pub fn triple(&self, idx: usize) -> [usize; 3] {
        let n = self.n_v;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    pub fn node(&self, idx: usize) -> [f64; 3] {
        let t = self.triple(idx);
        [self.coord(t[0]), self.coord(t[1]), self.coord(t[2])]
    }

    pub fn nodes(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    /// Midpoint-rule integral of grid samples.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        crate::numerics::pairwise_sum(f) * self.cell_volume()
    }
}

/// Per-species samples F_i(v) on a shared velocity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionVector {
    pub grid: VelocityGrid,
    pub values: Vec<Vec<f64>>,
}

impl DistributionVector {
    pub fn new(grid: VelocityGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.iter().any(|v| v.len() != grid.len()) {
            return Err(Error::Param("distribution does not match grid size".into()));
        }
        if values.iter().flatten().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Param("distribution values must be finite and nonnegative".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_maxwellians(grid: VelocityGrid, params: &[MaxwellianParams]) -> Self {
        let nodes = grid.nodes();
        let values = params.iter().map(|p| nodes.iter().map(|&v| p.eval(v)).collect()).collect();
        Self { grid, values }
    }

    pub fn n_species(&self) -> usize {
        self.values.len()
    }

    /// Flat binary container: magic, N, n_v, v_max, masses, then row-major
    /// little-endian f64 samples species by species.
    pub fn write_binary<W: Write>(&self, masses: &[f64], mut w: W) -> Result<()> {
        if masses.len() != self.n_species() {
            return Err(Error::Param("mass list does not match species count".into()));
        }
        w.write_all(BIN_MAGIC)?;
        w.write_all(&(self.n_species() as u64).to_le_bytes())?;
        w.write_all(&(self.grid.n_v as u64).to_le_bytes())?;
        w.write_all(&self.grid.v_max.to_le_bytes())?;
        for m in masses {
            w.write_all(&m.to_le_bytes())?;
        }
        for s in &self.values {
            for x in s {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<(Vec<f64>, Self)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BIN_MAGIC {
            return Err(Error::Io("not a distribution container".into()));
        }
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b8)?;
            Ok(b8)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let n_v = u64::from_le_bytes(next(&mut r)?) as usize;
        let v_max = f64::from_le_bytes(next(&mut r)?);
        if n == 0 || n > 64 || n_v > 512 {
            return Err(Error::Io(format!("implausible header N={n}, n_v={n_v}")));
        }
        let grid = VelocityGrid::new(n_v, v_max)?;
        let masses = (0..n)
            .map(|_| next(&mut r).map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let s = (0..grid.len())
                .map(|_| next(&mut r).map(f64::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            values.push(s);
        }
        Ok((masses, Self::new(grid, values)?))
    }

    /// CSV with one row per (species, node); meant for small grids.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "species,ix,iy,iz,vx,vy,vz,value")?;
        for (s, vals) in self.values.iter().enumerate() {
            for (k, x) in vals.iter().enumerate() {
                let t = self.grid.triple(k);
                let v = self.grid.node(k);
                writeln!(
                    w,
                    "{s},{},{},{},{},{},{},{}",
                    t[0],
                    t[1],
                    t[2],
                    fmt_f64(v[0]),
                    fmt_f64(v[1]),
                    fmt_f64(v[2]),
                    fmt_f64(*x)
                )?;
            }
        }
        Ok(())
    }
}

const BIN_MAGIC: &[u8; 8] = b"MSKDV001";

/// Macroscopic moments of a distribution vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroMoments {
    pub c: Vec<f64>,
    pub momentum: [f64; 3],
    pub energy: f64,
    pub u: [f64; 3],
    pub t: f64,
    pub rho: f64,
}

/// Grid moments. T is defined by (3/2)(Σc_i)T = Σ (m_i/2)∫|v - u|² F_i.
pub fn moments(masses: &[f64], f: &DistributionVector) -> Result<MacroMoments> {
    if masses.len() != f.n_species() {
        return Err(Error::Param("mass list does not match species count".into()));
    }
    let grid = f.grid;
    let nodes = grid.nodes();
    let dv = grid.cell_volume();
    let mut c = Vec::with_capacity(masses.len());
    let mut momentum = [0.0; 3];
    let mut energy = 0.0;
    for (m, vals) in masses.iter().zip(&f.values) {
        c.push(grid.integrate(vals));
        for a in 0..3 {
            let terms: Vec<f64> = vals.iter().zip(&nodes).map(|(x, v)| x * v[a]).collect();
            momentum[a] += m * crate::numerics::pairwise_sum(&terms) * dv;
        }
        let terms: Vec<f64> = vals.iter().zip(&nodes).map(|(x, v)| x * dot3(*v, *v)).collect();
        energy += 0.5 * m * crate::numerics::pairwise_sum(&terms) * dv;
    }
    let rho: f64 = masses.iter().zip(&c).map(|(m, ci)| m * ci).sum();
    let c_tot: f64 = c.iter().sum();
    if !(rho > 0.0 && c_tot > 0.0) {
        return Err(Error::Degenerate("zero total mass".into()));
    }
    let u = [momentum[0] / rho, momentum[1] / rho, momentum[2] / rho];
    let t = 2.0 / 3.0 * (energy - 0.5 * rho * dot3(u, u)) / c_tot;
    Ok(MacroMoments { c, momentum, energy, u, t, rho })
}

/// Moments of the global equilibrium and the Maxwellian vector carrying them.
pub fn global_equilibrium(
    spec: &MixtureSpec,
    f: &DistributionVector,
) -> Result<(MacroMoments, DistributionVector)> {
    let mm = moments(&spec.masses, f)?;
    if !(mm.t > 0.0) {
        return Err(Error::Degenerate(format!("nonpositive temperature {}", mm.t)));
    }
    let params: Vec<MaxwellianParams> = spec
        .masses
        .iter()
        .zip(&mm.c)
        .map(|(&m, &c)| MaxwellianParams { c, m, u: mm.u, t: mm.t, eps: 1.0 })
        .collect();
    if params.iter().any(|p| !(p.c > 0.0)) {
        return Err(Error::Degenerate("a species has zero mass".into()));
    }
    Ok((mm, DistributionVector::from_maxwellians(f.grid, &params)))
}

/// Worst log-margins of the pointwise sandwich
/// C^low R^low c 𝓜^{1/δ} ≤ M^ε ≤ C^up R^up c 𝓜^δ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub delta: f64,
    pub delta_ms: f64,
    /// C^low R^low, present when δ < 1 - δ_MS.
    pub lower_const: Option<f64>,
    pub upper_const: f64,
    /// min over samples of ln M^ε - ln(lower bound); ≥ 0 when the bound holds.
    pub lower_margin: Option<f64>,
    /// min over samples of ln(upper bound) - ln M^ε.
    pub upper_margin: f64,
    pub samples: usize,
}

impl BoundsReport {
    pub fn holds(&self) -> bool {
        self.upper_margin >= 0.0 && self.lower_margin.is_none_or(|m| m >= 0.0)
    }
}

/// Evaluate the explicit lower/upper Maxwellian bounds at the given velocities.
///
/// The perturbation is read off `p`: T̃ = (T - 1)/ε, ũ = u. `delta_ms` must
/// dominate |T̃|. With a single parameter set, the species min/max in C_δ
/// reduce to this species' mass.
pub fn maxwellian_bounds_check(
    p: &MaxwellianParams,
    delta: f64,
    delta_ms: f64,
    samples: &[[f64; 3]],
) -> Result<BoundsReport> {
    p.validate()?;
    if !(delta_ms >= 0.0 && delta_ms < 1.0) {
        return Err(Error::Param(format!("delta_ms must lie in [0,1), got {delta_ms}")));
    }
    let up_limit = 1.0 / (1.0 + delta_ms);
    if !(delta > 0.0 && delta < up_limit) {
        return Err(Error::Param(format!(
            "delta = {delta} outside (0, 1/(1+delta_ms)) = (0, {up_limit})"
        )));
    }
    let t_tilde = ((p.t - 1.0) / p.eps).abs();
    if t_tilde > delta_ms * (1.0 + 1e-12) {
        return Err(Error::Param(format!("|T~| = {t_tilde} exceeds delta_ms = {delta_ms}")));
    }
    let m = p.m;
    let u2 = dot3(p.u, p.u);
    let ln_m_over = |x: f64| x * (m / (2.0 * PI)).ln();

    let ln_c_up = ln_m_over(1.5 * (1.0 - delta));
    let ln_r_up = -1.5 * (1.0 - t_tilde).ln() + delta * m * u2 / (2.0 * (1.0 - (1.0 + t_tilde) * delta));
    let lower = if delta < 1.0 - delta_ms {
        let ln_c_low = ln_m_over(1.5 * (delta - 1.0) / delta);
        let ln_r_low = -1.5 * (1.0 + t_tilde).ln() - m * u2 / (2.0 * (1.0 - t_tilde - delta));
        Some(ln_c_low + ln_r_low)
    } else {
        None
    };

    // ln 𝓜(v) for the normalized Maxwellian of this species.
    let ln_std = |v: [f64; 3]| 1.5 * (m / (2.0 * PI)).ln() - 0.5 * m * dot3(v, v);
    let mut upper_margin = f64::INFINITY;
    let mut lower_margin = f64::INFINITY;
    for &v in samples {
        let ln_m = p.ln_eval(v);
        let ln_up = ln_c_up + ln_r_up + p.c.ln() + delta * ln_std(v);
        upper_margin = upper_margin.min(ln_up - ln_m);
        if let Some(ln_lo_const) = lower {
            let ln_lo = ln_lo_const + p.c.ln() + ln_std(v) / delta;
            lower_margin = lower_margin.min(ln_m - ln_lo);
        }
    }
    Ok(BoundsReport {
        delta,
        delta_ms,
        lower_const: lower.map(f64::exp),
        upper_const: (ln_c_up + ln_r_up).exp(),
        lower_margin: lower.map(|_| lower_margin),
        upper_margin,
        samples: samples.len(),
    })
}

/// Velocities spread uniformly in radius up to `r_max` with isotropic
/// directions, so Gaussian tails are probed as densely as the core.
pub fn tail_covering_samples(n: usize, r_max: f64, seed: u64) -> Vec<[f64; 3]> {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed, &[0x7a11]);
    (0..n)
        .map(|_| {
            let r = r_max * rng.random::<f64>();
            let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
            let phi = 2.0 * PI * rng.random::<f64>();
            let s = (1.0 - z * z).sqrt();
            [r * s * phi.cos(), r * s * phi.sin(), r * z]
        })
        .collect()
}
