//! Conservative discrete-velocity quadrature of the collision operator.
//!
//! Collisions are enumerated between nodes inside the ball |v| ≤ v_max of a
//! cell-centred grid, with σ taken from the 26-point spherical rule. A
//! post-collision pair rarely lands on the lattice, so it is split between
//! two lattice pairs (n₁, n₂) straddling the energy sphere, with weights that
//! conserve energy exactly. The gain term is the geometric mean of the two
//! split products, which keeps discrete Maxwellians stationary and gives a
//! discrete H-theorem. Mass ratios must be ratios of small integers.
//!
//! In lattice units with m_i : m_j = a : b, a collision (v, v*) → (λ, μ)
//! with λ = v + b n and μ = v* - a n conserves momentum for every integer n,
//! and conserves energy iff |(a+b) n + g|² = |g|² where g = v - v*.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::mixture_core::{MixtureSpec, VelocityGrid};

/// 26-point spherical rule: 6 axes, 12 face diagonals, 8 body diagonals.
pub fn sphere_rule_26() -> Vec<([i32; 3], [f64; 3], f64)> {
    let mut out = Vec::with_capacity(26);
    for x in -1i32..=1 {
        for y in -1i32..=1 {
            for z in -1i32..=1 {
                let k = x.abs() + y.abs() + z.abs();
                let w = match k {
                    0 => continue,
                    1 => 1.0 / 21.0,
                    2 => 4.0 / 105.0,
                    _ => 9.0 / 280.0,
                };
                let s = (k as f64).sqrt();
                out.push(([x, y, z], [x as f64 / s, y as f64 / s, z as f64 / s], w));
            }
        }
    }
    out
}

/// Write m_i/m_j as a/b with coprime a, b ≤ 16.
pub fn mass_ratio(mi: f64, mj: f64) -> Result<(i64, i64)> {
    let q = mi / mj;
    for b in 1..=16i64 {
        let a = (q * b as f64).round() as i64;
        if a >= 1 && ((a as f64) / (b as f64) - q).abs() <= 1e-12 * q {
            return Ok((a, b));
        }
    }
    Err(Error::Param(format!(
        "mass ratio {q} is not a ratio of integers up to 16; the lattice quadrature cannot conserve momentum"
    )))
}

fn round_half_away(x: f64) -> i64 {
    if x >= 0.0 {
        (x + 0.5).floor() as i64
    } else {
        -((-x + 0.5).floor() as i64)
    }
}

/// Lattice split of one (g, σ) collision, or None if no admissible split.
/// Returns (n₁, n₂, weight of n₂).
pub(crate) fn split_collision(g: [i64; 3], sig_int: [i32; 3], sig: [f64; 3], a: i64, b: i64) -> Option<([i64; 3], [i64; 3], f64)> {
    let s = a + b;
    let g2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
    let r = (g2 as f64).sqrt();
    let energy = |n: [i64; 3]| -> i64 {
        let d = [s * n[0] + g[0], s * n[1] + g[1], s * n[2] + g[2]];
        d[0] * d[0] + d[1] * d[1] + d[2] * d[2] - g2
    };
    let n1 = [
        round_half_away((r * sig[0] - g[0] as f64) / s as f64),
        round_half_away((r * sig[1] - g[1] as f64) / s as f64),
        round_half_away((r * sig[2] - g[2] as f64) / s as f64),
    ];
    let e1 = energy(n1);
    if e1 == 0 {
        return Some((n1, n1, 0.0));
    }
    let dir = if e1 < 0 { 1 } else { -1 };
    let step = [dir * sig_int[0] as i64, dir * sig_int[1] as i64, dir * sig_int[2] as i64];
    let mut p = n1;
    let mut ep = e1;
    for _ in 0..64 {
        let q = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
        let eq = energy(q);
        if eq == 0 {
            return Some((q, q, 0.0));
        }
        if (eq > 0) != (ep > 0) {
            let w = ep as f64 / (ep - eq) as f64;
            return Some((p, q, w));
        }
        if (eq - ep).signum() != -ep.signum() {
            // moving the wrong way: the walk would never cross the sphere
            return None;
        }
        p = q;
        ep = eq;
    }
    None
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    pub off_l1: i32,
    pub off_m1: i32,
    pub off_l2: i32,
    pub off_m2: i32,
    pub rw: f64,
    /// C^Φ (r h)^γ b(ĝ·σ) 4π w_σ h³ times the symmetry factor.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct PairTable {
    pub i: usize,
    pub j: usize,
    /// stencils for g index k live in starts[k]..starts[k+1]
    pub starts: Vec<u32>,
    pub stencils: Vec<Stencil>,
}

/// One collision term with all indices resolved to ball indices.
#[derive(Debug, Clone, Copy)]
pub struct Term {
    pub i: usize,
    pub j: usize,
    pub v: usize,
    pub vs: usize,
    pub l1: usize,
    pub m1: usize,
    pub l2: usize,
    pub m2: usize,
    pub rw: f64,
    pub weight: f64,
}

/// Precomputed collision stencils for a mixture on a velocity grid.
#[derive(Debug, Clone)]
pub struct CollisionQuadrature {
    pub grid: VelocityGrid,
    pub n_species: usize,
    /// grid index of each ball node
    pub ball_nodes: Vec<usize>,
    /// ball index per grid node, u32::MAX outside
    pub ball_of_grid: Vec<u32>,
    padded: Vec<u32>,
    ball_padded_pos: Vec<usize>,
    ball_triples: Vec<[i32; 3]>,
    pub(crate) tables: Vec<PairTable>,
    /// whether same-species tables hold the ordered (¼) or unordered (½) form
    ordered_same: bool,
}

impl CollisionQuadrature {
    /// `ordered_same` selects the same-species enumeration: all ordered
    /// pairs with factor ¼ (needed when iterating over a symmetry-reduced
    /// set of v) or unordered pairs v < v* with factor ½ (half the work).
    pub fn new(spec: &MixtureSpec, grid: VelocityGrid, ordered_same: bool) -> Result<Self> {
        spec.require_kinetic()?;
        let n = grid.n_v;
        if n % 2 != 0 {
            return Err(Error::Param("collision quadrature needs an even n_v".into()));
        }
        let ni = n as i64;
        let in_ball = |t: [i64; 3]| {
            let d = [2 * t[0] + 1 - ni, 2 * t[1] + 1 - ni, 2 * t[2] + 1 - ni];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= ni * ni
        };
        let mut ball_nodes = Vec::new();
        let mut ball_of_grid = vec![u32::MAX; grid.len()];
        for k in 0..grid.len() {
            let t = grid.triple(k);
            if in_ball([t[0] as i64, t[1] as i64, t[2] as i64]) {
                ball_of_grid[k] = ball_nodes.len() as u32;
                ball_nodes.push(k);
            }
        }
        let pad_dim = 3 * n;
        let mut padded = vec![u32::MAX; pad_dim * pad_dim * pad_dim];
        let mut ball_padded_pos = Vec::with_capacity(ball_nodes.len());
        let mut ball_triples = Vec::with_capacity(ball_nodes.len());
        for (b, &k) in ball_nodes.iter().enumerate() {
            let t = grid.triple(k);
            let p = ((t[0] + n) * pad_dim + t[1] + n) * pad_dim + t[2] + n;
            padded[p] = b as u32;
            ball_padded_pos.push(p);
            ball_triples.push([t[0] as i32, t[1] as i32, t[2] as i32]);
        }

        let rule = sphere_rule_26();
        let h = grid.h();
        let gd = 2 * n - 1;
        let pd = pad_dim as i64;
        let mut tables = Vec::new();
        for i in 0..spec.n_species() {
            for j in i..spec.n_species() {
                let (a, b) = mass_ratio(spec.masses[i], spec.masses[j])?;
                let factor = if i != j || !ordered_same { 0.5 } else { 0.25 };
                let law = &spec.angular[i][j];
                let cphi = spec.phi_const[i][j];
                let mut starts = Vec::with_capacity(gd * gd * gd + 1);
                let mut stencils = Vec::new();
                for gx in -(ni - 1)..ni {
                    for gy in -(ni - 1)..ni {
                        for gz in -(ni - 1)..ni {
                            starts.push(stencils.len() as u32);
                            let g = [gx, gy, gz];
                            if g == [0, 0, 0] {
                                continue;
                            }
                            let r = ((gx * gx + gy * gy + gz * gz) as f64).sqrt();
                            let kin = if spec.gamma == 0.0 { 1.0 } else { (r * h).powf(spec.gamma) };
                            for (si, sf, w) in &rule {
                                let Some((n1, n2, rw)) = split_collision(g, *si, *sf, a, b) else {
                                    continue;
                                };
                                if n1 == [0, 0, 0] && (rw == 0.0 || n2 == [0, 0, 0]) {
                                    continue;
                                }
                                let fits = |n: [i64; 3]| {
                                    n.iter().all(|&c| (b * c).abs() < ni && (a * c).abs() < ni)
                                };
                                if !fits(n1) || (rw > 0.0 && !fits(n2)) {
                                    continue;
                                }
                                let off = |n: [i64; 3], s: i64| -> i32 {
                                    ((s * n[0] * pd + s * n[1]) * pd + s * n[2]) as i32
                                };
                                let cos = (sf[0] * gx as f64 + sf[1] * gy as f64 + sf[2] * gz as f64) / r;
                                let weight = factor * cphi * kin * law.eval(cos) * 4.0 * PI * w * h.powi(3);
                                stencils.push(Stencil {
                                    off_l1: off(n1, b),
                                    off_m1: off(n1, -a),
                                    off_l2: off(n2, b),
                                    off_m2: off(n2, -a),
                                    rw,
                                    weight,
                                });
                            }
                        }
                    }
                }
                starts.push(stencils.len() as u32);
                tables.push(PairTable { i, j, starts, stencils });
            }
        }
        Ok(Self {
            grid,
            n_species: spec.n_species(),
            ball_nodes,
            ball_of_grid,
            padded,

            ball_padded_pos,
            ball_triples,
            tables,
            ordered_same,
        })
    }

    pub fn n_ball(&self) -> usize {
        self.ball_nodes.len()
    }

    pub fn ball_triple(&self, b: usize) -> [i32; 3] {
        self.ball_triples[b]
    }

    /// Visit every collision term whose first velocity v passes `v_filter`.
    /// Terms with a post-collision node outside the ball are skipped whole,
    /// so every visited term conserves mass, momentum and energy exactly.
    pub fn for_each_term<V, F>(&self, v_filter: V, mut f: F)
    where
        V: Fn(usize) -> bool,
        F: FnMut(&Term),
    {
        let nb = self.n_ball();
        let n = self.grid.n_v as i32;
        let gd = (2 * n - 1) as usize;
        for t in &self.tables {
            let same = t.i == t.j;
            for v in 0..nb {
                if !v_filter(v) {
                    continue;
                }
                let tv = self.ball_triples[v];
                let pv = self.ball_padded_pos[v] as isize;
                let start = if same && !self.ordered_same { v + 1 } else { 0 };
                for vs in start..nb {
                    let ts = self.ball_triples[vs];
                    let gi = (((tv[0] - ts[0] + n - 1) as usize * gd + (tv[1] - ts[1] + n - 1) as usize) * gd)
                        + (tv[2] - ts[2] + n - 1) as usize;
                    let lo = t.starts[gi] as usize;
                    let hi = t.starts[gi + 1] as usize;
                    if lo == hi {
                        continue;
                    }
                    let ps = self.ball_padded_pos[vs] as isize;
                    for st in &t.stencils[lo..hi] {
                        let l1 = self.padded[(pv + st.off_l1 as isize) as usize];
                        let m1 = self.padded[(ps + st.off_m1 as isize) as usize];
                        if l1 == u32::MAX || m1 == u32::MAX {
                            continue;
                        }
                        let (l2, m2) = if st.rw > 0.0 {
                            let l2 = self.padded[(pv + st.off_l2 as isize) as usize];
                            let m2 = self.padded[(ps + st.off_m2 as isize) as usize];
                            if l2 == u32::MAX || m2 == u32::MAX {
                                continue;
                            }
                            (l2, m2)
                        } else {
                            (l1, m1)
                        };
                        f(&Term {
                            i: t.i,
                            j: t.j,
                            v,
                            vs,
                            l1: l1 as usize,
                            m1: m1 as usize,
                            l2: l2 as usize,
                            m2: m2 as usize,
                            rw: st.rw,
                            weight: st.weight,
                        });
                    }
                }
            }
        }
    }

    /// Discrete Q(F, F) on the ball nodes; `f[s][b]` are ball values.
    pub fn collision_rhs(&self, f: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let nb = self.n_ball();
        let lnf: Vec<Vec<f64>> = f
            .iter()
            .map(|s| s.iter().map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY }).collect())
            .collect();
        let mut q = vec![vec![0.0; nb]; self.n_species];
        self.for_each_term(
            |_| true,
            |t| {
                let loss = f[t.i][t.v] * f[t.j][t.vs];
                let a1 = lnf[t.i][t.l1] + lnf[t.j][t.m1];
                let gain = if t.rw == 0.0 {
                    a1.exp()
                } else {
                    let a2 = lnf[t.i][t.l2] + lnf[t.j][t.m2];
                    ((1.0 - t.rw) * a1 + t.rw * a2).exp()
                };
                let d = t.weight * (gain - loss);
                q[t.i][t.v] += d;
                q[t.j][t.vs] += d;
                q[t.i][t.l1] -= (1.0 - t.rw) * d;
                q[t.j][t.m1] -= (1.0 - t.rw) * d;
                if t.rw != 0.0 {
                    q[t.i][t.l2] -= t.rw * d;
                    q[t.j][t.m2] -= t.rw * d;
                }
            },
        );
        q
    }

    pub fn gather(&self, values: &[f64]) -> Vec<f64> {
        self.ball_nodes.iter().map(|&k| values[k]).collect()
    }

    pub fn scatter(&self, ball: &[f64], into: &mut [f64]) {
        for (b, &k) in self.ball_nodes.iter().enumerate() {
            into[k] = ball[b];
        }
    }

    /// Velocity of a ball node.
    pub fn ball_velocity(&self, b: usize) -> [f64; 3] {
        self.grid.node(self.ball_nodes[b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_weights_sum_to_one() {
        let r = sphere_rule_26();
        assert_eq!(r.len(), 26);
        let s: f64 = r.iter().map(|x| x.2).sum();
        assert!((s - 1.0).abs() < 1e-15);
        // exact for degree-4 polynomials: ∫x⁴ dσ/4π = 1/5, ∫x²y² = 1/15
        let x4: f64 = r.iter().map(|(_, v, w)| w * v[0].powi(4)).sum();
        let x2y2: f64 = r.iter().map(|(_, v, w)| w * v[0].powi(2) * v[1].powi(2)).sum();
        assert!((x4 - 0.2).abs() < 1e-14 && (x2y2 - 1.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn ratios() {
        assert_eq!(mass_ratio(1.0, 1.0).unwrap(), (1, 1));
        assert_eq!(mass_ratio(4.0, 1.0).unwrap(), (4, 1));
        assert_eq!(mass_ratio(2.0, 3.0).unwrap(), (2, 3));
        assert!(mass_ratio(1.0, std::f64::consts::PI).is_err());
    }

    #[test]
    fn splits_conserve_energy() {
        let rule = sphere_rule_26();
        for (a, b) in [(1, 1), (1, 4), (3, 2)] {
            for g in [[3i64, -1, 2], [1, 0, 0], [-5, 4, 7], [0, 2, 2]] {
                for (si, sf, _) in &rule {
                    let Some((n1, n2, w)) = split_collision(g, *si, *sf, a, b) else { continue };
                    let e = |n: [i64; 3]| {
                        let d: Vec<i64> = (0..3).map(|k| (a + b) * n[k] + g[k]).collect();
                        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] - g.iter().map(|x| x * x).sum::<i64>()) as f64
                    };
                    assert!(((1.0 - w) * e(n1) + w * e(n2)).abs() < 1e-9, "{g:?} {si:?}");
                    assert!((0.0..1.0).contains(&w));
                }
            }
        }
    }
}
