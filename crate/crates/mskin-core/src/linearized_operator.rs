//! Linearized collision operator around the global equilibrium μ, its
//! kernel, the projections π_L / π_T and spectral-gap estimates.
//!
//! L comes from linearizing the conservative grid quadrature: each collision
//! term contributes -W μ_v μ_v* (D⁻¹χ)(D⁻¹χ)ᵀ with D = diag(μ^{1/2}) and χ the
//! pre/post pattern of the term. So L is symmetric, nonpositive and kills
//! the discrete collision invariants exactly.
//!
//! Degrees of freedom are (species, ball node). The grid, the ball, the σ
//! rule and the lattice split are invariant under the reflections
//! v_k → -v_k, and the cell-centred grid has no node on a mirror plane, so
//! every node orbit has eight points. L is therefore block diagonal in the
//! eight parity sectors, and each block is assembled from the terms whose
//! first velocity lies in the positive octant.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::collision_kernel::quadrature::{CollisionQuadrature, Term};
use crate::error::{Error, Result};
use crate::mixture_core::{MaxwellianParams, MixtureSpec, VelocityGrid};
use crate::numerics::dot3;

/// Largest number of degrees of freedom accepted by [`assemble_l`].
pub const DOF_LIMIT: usize = 20_000;

/// Velocity-space layout shared by every grid function of this module:
/// value index = species * n_ball + ball node.
#[derive(Debug, Clone)]
pub struct DofSpace {
    pub quad: CollisionQuadrature,
    pub masses: Vec<f64>,
    pub c_bar: Vec<f64>,
    /// μ_s at each ball node, species-major
    pub mu: Vec<f64>,
    pub velocities: Vec<[f64; 3]>,
    orbit: Vec<usize>,
    flips: Vec<u8>,
    n_orbits: usize,
}

impl DofSpace {
    pub fn new(spec: &MixtureSpec, c_bar: &[f64], grid: VelocityGrid) -> Result<Self> {
        spec.require_kinetic()?;
        if c_bar.len() != spec.n_species() || c_bar.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::Param("c_bar must be positive with one entry per species".into()));
        }
        let quad = CollisionQuadrature::new(spec, grid, true)?;
        let nb = quad.n_ball();
        let n = grid.n_v as i32;
        let half = n / 2;
        let mut orbit = vec![usize::MAX; nb];
        let mut flips = vec![0u8; nb];
        let mut rep_id = std::collections::HashMap::new();
        for b in 0..nb {
            let t = quad.ball_triple(b);
            let mut rep = [0i32; 3];
            let mut f = 0u8;
            for k in 0..3 {
                if t[k] < half {
                    f |= 1 << k;
                    rep[k] = n - 1 - t[k];
                } else {
                    rep[k] = t[k];
                }
            }
            let next = rep_id.len();
            orbit[b] = *rep_id.entry(rep).or_insert(next);
            flips[b] = f;
        }
        let n_orbits = rep_id.len();
        if n_orbits * 8 != nb {
            return Err(Error::Invariant("reflection orbits of the velocity ball are not all of size 8".into()));
        }
        let velocities: Vec<[f64; 3]> = (0..nb).map(|b| quad.ball_velocity(b)).collect();
        let mut mu = Vec::with_capacity(nb * c_bar.len());
        for (s, &c) in c_bar.iter().enumerate() {
            let p = MaxwellianParams::equilibrium(c, spec.masses[s]);
            mu.extend(velocities.iter().map(|&v| p.eval(v)));
        }
        Ok(Self {
            quad,
            masses: spec.masses.clone(),
            c_bar: c_bar.to_vec(),
            mu,
            velocities,
            orbit,
            flips,
            n_orbits,
        })
    }

    pub fn n_species(&self) -> usize {
        self.c_bar.len()
    }

    pub fn n_ball(&self) -> usize {
        self.quad.n_ball()
    }

    pub fn dim(&self) -> usize {
        self.n_species() * self.n_ball()
    }

    pub fn sector_dim(&self) -> usize {
        self.n_species() * self.n_orbits
    }

    pub fn cell_volume(&self) -> f64 {
        self.quad.grid.cell_volume()
    }

    /// ⟨f, g⟩ = Σ h³ f g.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.cell_volume() * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
    }

    /// ⟨f, g⟩ weighted by ⟨v⟩^γ.
    pub fn inner_weighted(&self, f: &[f64], g: &[f64], gamma: f64) -> f64 {
        let nb = self.n_ball();
        self.cell_volume()
            * f.iter()
                .zip(g)
                .enumerate()
                .map(|(k, (a, b))| {
                    let v = self.velocities[k % nb];
                    a * b * (1.0 + dot3(v, v)).sqrt().powf(gamma)
                })
                .sum::<f64>()
    }

    fn sign(&self, sector: usize, b: usize) -> f64 {
        if (sector as u8 & self.flips[b]).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Coordinates of f in the orthonormal sector basis.
    pub fn to_sector(&self, f: &[f64], sector: usize) -> Vec<f64> {
        let nb = self.n_ball();
        let mut out = vec![0.0; self.sector_dim()];
        let s8 = 1.0 / 8f64.sqrt();
        for s in 0..self.n_species() {
            for b in 0..nb {
                out[s * self.n_orbits + self.orbit[b]] += s8 * self.sign(sector, b) * f[s * nb + b];
            }
        }
        out
    }

    /// Inverse of [`to_sector`] for one sector's component.
    pub fn from_sector(&self, x: &[f64], sector: usize) -> Vec<f64> {
        let nb = self.n_ball();
        let s8 = 1.0 / 8f64.sqrt();
        let mut out = vec![0.0; self.dim()];
        for s in 0..self.n_species() {
            for b in 0..nb {
                out[s * nb + b] = s8 * self.sign(sector, b) * x[s * self.n_orbits + self.orbit[b]];
            }
        }
        out
    }

    fn term_nodes(&self, t: &Term) -> ([(usize, f64); 6], usize) {
        let nb = self.n_ball();
        let mut nodes = [(0usize, 0.0f64); 6];
        nodes[0] = (t.i * nb + t.v, 1.0);
        nodes[1] = (t.j * nb + t.vs, 1.0);
        nodes[2] = (t.i * nb + t.l1, -(1.0 - t.rw));
        nodes[3] = (t.j * nb + t.m1, -(1.0 - t.rw));
        if t.rw != 0.0 {
            nodes[4] = (t.i * nb + t.l2, -t.rw);
            nodes[5] = (t.j * nb + t.m2, -t.rw);
            (nodes, 6)
        } else {
            (nodes, 4)
        }
    }
}

/// Kernel vectors φ^(k): species densities, momentum, energy.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    pub vectors: Vec<Vec<f64>>,
    pub orthonormalized: bool,
}

impl KernelBasis {
    /// The closed-form φ^(k) sampled on the ball nodes; with `orthonormalize`
    /// they are additionally Gram-Schmidt'ed in the discrete inner product.
    pub fn new(space: &DofSpace, orthonormalize: bool) -> Self {
        let n = space.n_species();
        let nb = space.n_ball();
        let rho: f64 = space.masses.iter().zip(&space.c_bar).map(|(m, c)| m * c).sum();
        let ctot: f64 = space.c_bar.iter().sum();
        let mut vectors = Vec::with_capacity(n + 4);
        for i in 0..n {
            let mut phi = vec![0.0; space.dim()];
            for b in 0..nb {
                phi[i * nb + b] = space.mu[i * nb + b].sqrt() / space.c_bar[i].sqrt();
            }
            vectors.push(phi);
        }
        for l in 0..3 {
            let mut phi = vec![0.0; space.dim()];
            for s in 0..n {
                for b in 0..nb {
                    phi[s * nb + b] =
                        space.velocities[b][l] * space.masses[s] * space.mu[s * nb + b].sqrt() / rho.sqrt();
                }
            }
            vectors.push(phi);
        }
        let mut phi = vec![0.0; space.dim()];
        for s in 0..n {
            for b in 0..nb {
                let v = space.velocities[b];
                phi[s * nb + b] =
                    (space.masses[s] * dot3(v, v) - 3.0) / 6f64.sqrt() * space.mu[s * nb + b].sqrt() / ctot.sqrt();
            }
        }
        vectors.push(phi);
        if orthonormalize {
            for k in 0..vectors.len() {
                for l in 0..k {
                    let p = space.inner(&vectors[k], &vectors[l]);
                    let (head, tail) = vectors.split_at_mut(k);
                    for (x, y) in tail[0].iter_mut().zip(&head[l]) {
                        *x -= p * y;
                    }
                }
                let nrm = space.inner(&vectors[k], &vectors[k]).sqrt();
                vectors[k].iter_mut().for_each(|x| *x /= nrm);
            }
        }
        Self { vectors, orthonormalized: orthonormalize }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Gram matrix in the plain or ⟨v⟩^γ-weighted inner product.
    pub fn gram(&self, space: &DofSpace, gamma: Option<f64>) -> DMatrix<f64> {
        let k = self.len();
        DMatrix::from_fn(k, k, |a, b| match gamma {
            None => space.inner(&self.vectors[a], &self.vectors[b]),
            Some(g) => space.inner_weighted(&self.vectors[a], &self.vectors[b], g),
        })
    }
}

/// π_L(f) = Σ_k ⟨f, φ^(k)⟩ φ^(k); returns (π_L f, f - π_L f).
pub fn project_pi_l(space: &DofSpace, basis: &KernelBasis, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut par = vec![0.0; f.len()];
    for phi in &basis.vectors {
        let p = space.inner(f, phi);
        for (x, y) in par.iter_mut().zip(phi) {
            *x += p * y;
        }
    }
    let perp = f.iter().zip(&par).map(|(a, b)| a - b).collect();
    (par, perp)
}

/// π_L written as its three blocks (densities, momentum, energy), with the
/// velocity integrals done by grid quadrature.
pub fn project_pi_l_blocks(space: &DofSpace, f: &[f64]) -> Vec<f64> {
    let n = space.n_species();
    let nb = space.n_ball();
    let dv = space.cell_volume();
    let rho: f64 = space.masses.iter().zip(&space.c_bar).map(|(m, c)| m * c).sum();
    let ctot: f64 = space.c_bar.iter().sum();
    let sq = |s: usize, b: usize| space.mu[s * nb + b].sqrt();
    let e = |s: usize, b: usize| {
        let v = space.velocities[b];
        (space.masses[s] * dot3(v, v) - 3.0) / 6f64.sqrt()
    };
    let mut out = vec![0.0; f.len()];
    for s in 0..n {
        let a: f64 = (0..nb).map(|b| f[s * nb + b] * sq(s, b)).sum::<f64>() * dv / space.c_bar[s];
        for b in 0..nb {
            out[s * nb + b] += a * sq(s, b);
        }
    }
    for k in 0..3 {
        let p: f64 = (0..n)
            .map(|s| (0..nb).map(|b| space.masses[s] * space.velocities[b][k] * f[s * nb + b] * sq(s, b)).sum::<f64>())
            .sum::<f64>()
            * dv
            / rho;
        for s in 0..n {
            for b in 0..nb {
                out[s * nb + b] += p * space.velocities[b][k] * space.masses[s] * sq(s, b);
            }
        }
    }
    let en: f64 = (0..n).map(|s| (0..nb).map(|b| e(s, b) * f[s * nb + b] * sq(s, b)).sum::<f64>()).sum::<f64>() * dv / ctot;
    for s in 0..n {
        for b in 0..nb {
            out[s * nb + b] += en * e(s, b) * sq(s, b);
        }
    }
    out
}

/// π_T(f) = ∫_{T^d} π_L(f(x)) dx on the unit periodic box, i.e. the mean of
/// π_L over equally weighted spatial points.
pub fn project_pi_t(space: &DofSpace, basis: &KernelBasis, field: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; space.dim()];
    let w = 1.0 / field.len().max(1) as f64;
    for f in field {
        let (p, _) = project_pi_l(space, basis, f);
        for (o, x) in out.iter_mut().zip(&p) {
            *o += w * x;
        }
    }
    out
}

/// L as eight dense parity blocks.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub blocks: Vec<DMatrix<f64>>,
    pub dof: usize,
}

impl DiscreteOperator {
    pub fn apply(&self, space: &DofSpace, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for (s, blk) in self.blocks.iter().enumerate() {
            let x = DVector::from_vec(space.to_sector(f, s));
            let y = blk * x;
            for (o, v) in out.iter_mut().zip(space.from_sector(y.as_slice(), s)) {
                *o += v;
            }
        }
        out
    }

    /// Dense matrix in the node basis (small grids only).
    pub fn to_dense(&self, space: &DofSpace) -> DMatrix<f64> {
        let d = self.dof;
        let mut m = DMatrix::zeros(d, d);
        for c in 0..d {
            let mut e = vec![0.0; d];
            e[c] = 1.0;
            let col = self.apply(space, &e);
            m.set_column(c, &DVector::from_vec(col));
        }
        m
    }
}

/// Assemble the linearized operator around μ = (c̄_i 𝓜_i).
pub fn assemble_l(space: &DofSpace) -> Result<DiscreteOperator> {
    if space.dim() > DOF_LIMIT {
        return Err(Error::Size(format!("{} degrees of freedom exceed the limit {DOF_LIMIT}", space.dim())));
    }
    let sd = space.sector_dim();
    let nb = space.n_ball();
    let n_orb = space.n_orbits;
    let mut upper = vec![vec![0.0f64; sd * sd]; 8];
    let inv_sqrt_mu: Vec<f64> = space.mu.iter().map(|m| 1.0 / m.sqrt()).collect();
    space.quad.for_each_term(
        |v| space.flips[v] == 0,
        |t| {
            let (nodes, k) = space.term_nodes(t);
            let p = space.mu[t.i * nb + t.v] * space.mu[t.j * nb + t.vs];
            let w = -t.weight * p;
            let mut idx = [0usize; 6];
            let mut y = [0.0f64; 6];
            let mut fl = [0u8; 6];
            for q in 0..k {
                let (dof, coef) = nodes[q];
                let (s, b) = (dof / nb, dof % nb);
                idx[q] = s * n_orb + space.orbit[b];
                y[q] = coef * inv_sqrt_mu[dof];
                fl[q] = space.flips[b];
            }
            for (sector, mat) in upper.iter_mut().enumerate() {
                let mut z = [0.0f64; 6];
                for q in 0..k {
                    z[q] = if (sector as u8 & fl[q]).count_ones() % 2 == 0 { y[q] } else { -y[q] };
                }
                for a in 0..k {
                    let ia = idx[a];
                    mat[ia * sd + ia] += w * z[a] * z[a];
                    for b in a + 1..k {
                        let ib = idx[b];
                        let val = w * z[a] * z[b];
                        if ia == ib {
                            mat[ia * sd + ia] += 2.0 * val;
                        } else if ia < ib {
                            mat[ia * sd + ib] += val;
                        } else {
                            mat[ib * sd + ia] += val;
                        }
                    }
                }
            }
        },
    );
    let blocks = upper
        .into_iter()
        .map(|u| DMatrix::from_fn(sd, sd, |r, c| if r <= c { u[r * sd + c] } else { u[c * sd + r] }))
        .collect();
    Ok(DiscreteOperator { blocks, dof: space.dim() })
}

/// Directional derivative of the discrete collision operator at a positive
/// state F0 (species-major ball values) in direction dF.
pub fn linearized_collision(space: &DofSpace, f0: &[f64], df: &[f64]) -> Vec<f64> {
    let nb = space.n_ball();
    let lnf: Vec<f64> = f0.iter().map(|x| x.ln()).collect();
    let rel: Vec<f64> = df.iter().zip(f0).map(|(d, f)| d / f).collect();
    let mut out = vec![0.0; f0.len()];
    space.quad.for_each_term(
        |_| true,
        |t| {
            let (nodes, k) = space.term_nodes(t);
            let (iv, ivs) = (t.i * nb + t.v, t.j * nb + t.vs);
            let mut lng = 0.0;
            let mut dg = 0.0;
            for &(dof, coef) in &nodes[2..k] {
                lng -= coef * lnf[dof];
                dg -= coef * rel[dof];
            }
            let g0 = lng.exp();
            let dl = df[iv] * f0[ivs] + f0[iv] * df[ivs];
            let d = t.weight * (g0 * dg - dl);
            for &(dof, coef) in &nodes[..k] {
                out[dof] += coef * d;
            }
        },
    );
    out
}

/// L f computed matrix-free from the scheme itself: μ^{-1/2} DQ[μ](μ^{1/2} f).
pub fn apply_l_matrix_free(space: &DofSpace, f: &[f64]) -> Vec<f64> {
    let df: Vec<f64> = f.iter().zip(&space.mu).map(|(x, m)| x * m.sqrt()).collect();
    let q = linearized_collision(space, &space.mu, &df);
    q.iter().zip(&space.mu).map(|(x, m)| x / m.sqrt()).collect()
}

/// L^ε f = μ^{-1/2} DQ[M^ε](μ^{1/2} f) for a local Maxwellian vector M^ε
/// given by its ball values.
pub fn apply_l_eps(space: &DofSpace, m_eps: &[f64], f: &[f64]) -> Vec<f64> {
    let df: Vec<f64> = f.iter().zip(&space.mu).map(|(x, m)| x * m.sqrt()).collect();
    let q = linearized_collision(space, m_eps, &df);
    q.iter().zip(&space.mu).map(|(x, m)| x / m.sqrt()).collect()
}

/// Γ(g, h) = ½ μ^{-1/2} ∂²_{st} Q(μ + s μ^{1/2} g + t μ^{1/2} h) at s = t = 0,
/// the symmetric quadratic part of the discrete operator.
pub fn gamma_bilinear(space: &DofSpace, g: &[f64], h: &[f64]) -> Vec<f64> {
    let nb = space.n_ball();
    let a: Vec<f64> = g.iter().zip(&space.mu).map(|(x, m)| x / m.sqrt()).collect();
    let b: Vec<f64> = h.iter().zip(&space.mu).map(|(x, m)| x / m.sqrt()).collect();
    let mut out = vec![0.0; g.len()];
    space.quad.for_each_term(
        |_| true,
        |t| {
            let (nodes, k) = space.term_nodes(t);
            let (iv, ivs) = (t.i * nb + t.v, t.j * nb + t.vs);
            let p = space.mu[iv] * space.mu[ivs];
            let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
            for &(dof, coef) in &nodes[2..k] {
                let w = -coef;
                sa += w * a[dof];
                sb += w * b[dof];
                sab += w * a[dof] * b[dof];
            }
            let g2 = p * (sa * sb - sab);
            let l2 = p * (a[iv] * b[ivs] + a[ivs] * b[iv]);
            let d = 0.5 * t.weight * (g2 - l2);
            for &(dof, coef) in &nodes[..k] {
                out[dof] += coef * d;
            }
        },
    );
    out.iter().zip(&space.mu).map(|(x, m)| x / m.sqrt()).collect()
}

/// ‖π_L Γ(g, h)‖ and ‖Γ(g, h)‖.
pub fn gamma_orthogonality_check(space: &DofSpace, basis: &KernelBasis, g: &[f64], h: &[f64]) -> (f64, f64) {
    let gam = gamma_bilinear(space, g, h);
    let (par, _) = project_pi_l(space, basis, &gam);
    (space.inner(&par, &par).sqrt(), space.inner(&gam, &gam).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    /// eigenvalues of L, all sectors, sorted descending (closest to 0 first)
    #[serde(skip)]
    pub eigenvalues: Vec<f64>,
    pub norm: f64,
    /// eigenvalues with |λ| below 1e-6 ‖L‖
    pub kernel_dim: usize,
    /// -max spectrum of L on Span(φ)^⊥
    pub lambda_l: f64,
    /// inf over f ⊥ φ of -⟨Lf,f⟩ / ‖f‖²_{⟨v⟩^γ}
    pub weighted: f64,
    /// max ‖L φ^(k)‖ / ‖L‖
    pub kernel_defect: f64,
}

fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let e = SymmetricEigen::new(m.clone());
    (e.eigenvalues.iter().cloned().collect(), e.eigenvectors)
}

/// Spectrum, kernel dimension and gap of L, with the ⟨v⟩^γ-weighted variant
/// as a generalized eigenproblem on the complement of the kernel basis.
pub fn estimate_spectral_gap(
    space: &DofSpace,
    l: &DiscreteOperator,
    basis: &KernelBasis,
    gamma: f64,
) -> Result<SpectralReport> {
    if !basis.orthonormalized {
        return Err(Error::Param("spectral gap needs the orthonormalized kernel basis".into()));
    }
    let mut eigenvalues = Vec::new();
    for blk in &l.blocks {
        eigenvalues.extend(sym_eigen(blk).0);
    }
    let norm = eigenvalues.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let kernel_dim = eigenvalues.iter().filter(|x| x.abs() < 1e-6 * norm).count();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));

    let mut lambda_l = f64::INFINITY;
    let mut weighted = f64::INFINITY;
    let nb = space.n_ball();
    let weights: Vec<f64> = (0..space.dim())
        .map(|k| {
            let v = space.velocities[k % nb];
            (1.0 + dot3(v, v)).sqrt().powf(gamma)
        })
        .collect();
    for (sector, blk) in l.blocks.iter().enumerate() {
        let sd = blk.nrows();
        // orthonormal kernel directions living in this sector
        let mut kv: Vec<DVector<f64>> = Vec::new();
        for phi in &basis.vectors {
            let mut x = DVector::from_vec(space.to_sector(phi, sector));
            for q in &kv {
                let p = q.dot(&x);
                x -= q * p;
            }
            // φ are normalized in Σh³; sector coordinates use the plain sum
            if x.norm() > 1e-8 / space.cell_volume().sqrt() {
                x /= x.norm();
                kv.push(x);
            }
        }
        let mut shifted = blk.clone();
        for q in &kv {
            shifted -= 2.0 * norm * (q * q.transpose());
        }
        let (ev, vecs) = sym_eigen(&shifted);
        let keep: Vec<usize> = (0..sd).filter(|&k| ev[k] > -1.5 * norm).collect();
        let top = keep.iter().map(|&k| ev[k]).fold(f64::NEG_INFINITY, f64::max);
        lambda_l = lambda_l.min(-top);
        if gamma == 0.0 {
            // ⟨v⟩⁰ = 1: the weighted problem is the unweighted one.
            continue;
        }
        let q = DMatrix::from_fn(sd, keep.len(), |r, c| vecs[(r, keep[c])]);
        let a = DMatrix::from_diagonal(&DVector::from_iterator(keep.len(), keep.iter().map(|&k| -ev[k])));
        let wdiag = DVector::from_vec(space.to_sector_weights(&weights, sector));
        let wq = DMatrix::from_fn(sd, keep.len(), |r, c| wdiag[r] * q[(r, c)]);
        let b = q.transpose() * wq;
        let chol = nalgebra::Cholesky::new(b).ok_or_else(|| Error::Invariant("weight Gram matrix not SPD".into()))?;
        let linv = chol.l().try_inverse().ok_or_else(|| Error::Invariant("singular weight factor".into()))?;
        let c = &linv * a * linv.transpose();
        let (cev, _) = sym_eigen(&(0.5 * (&c + c.transpose())));
        let m = cev.iter().cloned().fold(f64::INFINITY, f64::min);
        weighted = weighted.min(m);
    }
    if gamma == 0.0 {
        weighted = lambda_l;
    }
    let kernel_defect = basis
        .vectors
        .iter()
        .map(|phi| {
            let lp = l.apply(space, phi);
            space.inner(&lp, &lp).sqrt() / (norm * space.inner(phi, phi).sqrt())
        })
        .fold(0.0, f64::max);
    if !(lambda_l > 0.0) {
        return Err(Error::Invariant(format!("nonpositive spectral gap {lambda_l}")));
    }
    Ok(SpectralReport { eigenvalues, norm, kernel_dim, lambda_l, weighted, kernel_defect })
}

impl DofSpace {
    /// Diagonal multiplication operator restricted to a sector. The weight
    /// must be reflection invariant, so every orbit carries one value.
    fn to_sector_weights(&self, w: &[f64], _sector: usize) -> Vec<f64> {
        let nb = self.n_ball();
        let mut out = vec![0.0; self.sector_dim()];
        for s in 0..self.n_species() {
            for b in 0..nb {
                out[s * self.n_orbits + self.orbit[b]] = w[s * nb + b];
            }
        }
        out
    }
}

/// Relative asymmetry |⟨Lx,y⟩ - ⟨x,Ly⟩| / (‖L‖‖x‖‖y‖) of the matrix-free
/// linearization on random pairs. The sector blocks are symmetric by
/// construction, so this is the quadrature-quality check.
pub fn asymmetry_probe(space: &DofSpace, norm: f64, pairs: usize, seed: u64) -> f64 {
    let mut rng = crate::rng::stream(seed, &[0xa5e, pairs as u64]);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x = random_decaying(space, &mut rng);
        let y = random_decaying(space, &mut rng);
        let lx = apply_l_matrix_free(space, &x);
        let ly = apply_l_matrix_free(space, &y);
        let d = (space.inner(&lx, &y) - space.inner(&x, &ly)).abs();
        let s = norm * space.inner(&x, &x).sqrt() * space.inner(&y, &y).sqrt();
        worst = worst.max(d / s);
    }
    worst
}

/// Spectrum as `index,eigenvalue`, descending.
pub fn write_spectrum_csv<W: std::io::Write>(report: &SpectralReport, mut w: W) -> Result<()> {
    writeln!(w, "index,eigenvalue")?;
    for (k, e) in report.eigenvalues.iter().enumerate() {
        writeln!(w, "{k},{}", crate::numerics::fmt_f64(*e))?;
    }
    Ok(())
}

/// ‖Lφ^(k)‖ / ‖φ^(k)‖ per kernel vector, for the defect report.
pub fn kernel_defects(space: &DofSpace, l: &DiscreteOperator, basis: &KernelBasis) -> Vec<f64> {
    basis
        .vectors
        .iter()
        .map(|phi| {
            let lp = l.apply(space, phi);
            space.inner(&lp, &lp).sqrt() / space.inner(phi, phi).sqrt()
        })
        .collect()
}

/// C_π = (N+4) max_{k,l} |⟨φ_k, φ_l⟩_{⟨v⟩^γ}|.
pub fn norm_equivalence_constant(space: &DofSpace, basis: &KernelBasis, gamma: f64) -> f64 {
    let g = basis.gram(space, Some(gamma));
    basis.len() as f64 * g.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Random grid function with Gaussian decay, roughly the size of μ^{1/2}.
pub fn random_decaying<R: Rng>(space: &DofSpace, rng: &mut R) -> Vec<f64> {
    space
        .mu
        .iter()
        .map(|m| {
            let u: f64 = 2.0 * rng.random::<f64>() - 1.0;
            u * m.sqrt().max(1e-300) * (2.0 * PI).powf(0.75)
        })
        .collect()
}
