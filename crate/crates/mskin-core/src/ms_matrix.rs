//! Maxwell-Stefan matrix A(c) and the flux-force inversion on Span(1)^⊥.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Default relative tolerance on ⟨rhs, 1⟩ for the flux-force solve.
pub const TAU_SOLV: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MSMatrix {
    pub a: DMatrix<f64>,
    pub c: Vec<f64>,
    pub delta: DMatrix<f64>,
}

/// a_ij = c_i c_j / Δ_ij off the diagonal, rows summing to zero.
pub fn build_ms_matrix(c: &[f64], delta: &DMatrix<f64>) -> Result<MSMatrix> {
    let n = c.len();
    if n < 2 {
        return Err(Error::Domain("Maxwell-Stefan matrix needs N >= 2".into()));
    }
    if delta.nrows() != n || delta.ncols() != n {
        return Err(Error::Domain(format!("delta must be {n}x{n}")));
    }
    if c.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Domain(format!("concentrations must be positive, got {c:?}")));
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = delta[(i, j)];
            if !(d.is_finite() && d > 0.0) || d != delta[(j, i)] {
                return Err(Error::Domain(format!("delta[{i}][{j}] must be positive and symmetric")));
            }
        }
    }
    Ok(MSMatrix { a: ms_matrix_unchecked(c, delta), c: c.to_vec(), delta: delta.clone() })
}

pub(crate) fn ms_matrix_unchecked(c: &[f64], delta: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = c[i] * c[j] / delta[(i, j)];
                a[(i, j)] = v;
                diag += v;
            }
        }
        a[(i, i)] = -diag;
    }
    a
}

impl MSMatrix {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    /// Moore-Penrose inverse, from the symmetric eigendecomposition with the
    /// eigenvalue belonging to Span(1) discarded.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        pseudo_inverse_ker1(&self.a)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.a * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    /// Solve A U = rhs with ⟨U, 1⟩ = 0, one spatial component at a time.
    pub fn solve_flux_force(&self, rhs: &[[f64; 3]], tau: f64) -> Result<Vec<[f64; 3]>> {
        solve_with_pinv(&self.pseudo_inverse(), rhs, tau, None)
    }
}

/// Pseudo-inverse of a symmetric matrix whose kernel is Span(1): every
/// eigenvector is kept except the one closest to 1/√N.
pub(crate) fn pseudo_inverse_ker1(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let one = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let drop = (0..n)
        .max_by(|&p, &q| {
            let ap = eig.eigenvectors.column(p).dot(&one).abs();
            let aq = eig.eigenvectors.column(q).dot(&one).abs();
            ap.total_cmp(&aq)
        })
        .unwrap_or(0);
    let mut pinv = DMatrix::zeros(n, n);
    for k in 0..n {
        if k == drop {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        pinv += (&v * v.transpose()) / eig.eigenvalues[k];
    }
    pinv
}

/// `scale` replaces ‖rhs‖ in the solvability test when given, for callers
/// that solve many pointwise systems against one field-wide magnitude.
pub(crate) fn solve_with_pinv(
    pinv: &DMatrix<f64>,
    rhs: &[[f64; 3]],
    tau: f64,
    scale: Option<f64>,
) -> Result<Vec<[f64; 3]>> {
    let n = pinv.nrows();
    if rhs.len() != n {
        return Err(Error::Domain(format!("rhs has {} entries, expected {n}", rhs.len())));
    }
    let mut out = vec![[0.0; 3]; n];
    for d in 0..3 {
        let col: Vec<f64> = rhs.iter().map(|r| r[d]).collect();
        let sum: f64 = col.iter().sum();
        let norm = scale.unwrap_or_else(|| col.iter().map(|x| x * x).sum::<f64>().sqrt());
        if sum.abs() > tau * norm.max(f64::MIN_POSITIVE) && sum.abs() > 0.0 {
            return Err(Error::Solvability { residual: sum.abs() / norm, tol: tau });
        }
        // Remove the admissible rounding-level component before solving.
        let mean = sum / n as f64;
        let b = DVector::from_iterator(n, col.iter().map(|x| x - mean));
        let u = pinv * b;
        let umean = u.sum() / n as f64;
        for i in 0..n {
            out[i][d] = u[i] - umean;
        }
    }
    Ok(out)
}

/// x - (⟨x,1⟩/N) 1.
pub fn project_off_kernel(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
    x.iter().map(|v| v - mean).collect()
}

/// Numerical estimates of the two constants bounding A(c) on Span(1)^⊥.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralConstants {
    pub lambda_a: f64,
    pub mu_a: f64,
    pub sample_count: usize,
    pub c_box: Vec<(f64, f64)>,
}

/// Draw the i-th concentration sample of a box; shared with re-verification.
pub fn sample_concentrations(c_box: &[(f64, f64)], n_samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = crate::rng::stream(seed, &[0x5ca1e, c_box.len() as u64]);
    (0..n_samples)
        .map(|_| {
            c_box
                .iter()
                .map(|&(lo, hi)| if hi > lo { lo + (hi - lo) * rng.random::<f64>() } else { lo })
                .collect()
        })
        .collect()
}

/// Per-concentration constants: the Fiedler value of -A over (min c)² and
/// ‖A‖₂ over (Σc)².
pub fn spectral_constants_at(c: &[f64], delta: &DMatrix<f64>) -> (f64, f64) {
    let a = ms_matrix_unchecked(c, delta);
    let mut ev: Vec<f64> = SymmetricEigen::new(-a).eigenvalues.iter().cloned().collect();
    ev.sort_by(f64::total_cmp);
    let cmin = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let ctot: f64 = c.iter().sum();
    (ev[1] / (cmin * cmin), ev[ev.len() - 1] / (ctot * ctot))
}

/// λ_A = min over samples, μ_A = max over samples.
///
/// The lower constant pairs with the bracket ‖X‖² - ⟨X,1⟩² exactly as
/// written in the proposition (no 1/N): for X ⊥ 1 it is ‖X‖², and for other X
/// it only gets smaller, so the Fiedler value is the sharp choice.
pub fn estimate_spectral_constants(
    delta: &DMatrix<f64>,
    c_box: &[(f64, f64)],
    n_samples: usize,
    seed: u64,
) -> Result<SpectralConstants> {
    if c_box.is_empty() || n_samples == 0 {
        return Err(Error::Domain("empty concentration box".into()));
    }
    if c_box.iter().any(|&(lo, hi)| !(lo > 0.0 && hi >= lo && hi.is_finite())) {
        return Err(Error::Domain(format!("box must lie in (0, inf)^N, got {c_box:?}")));
    }
    if delta.nrows() != c_box.len() {
        return Err(Error::Domain("delta size does not match box dimension".into()));
    }
    let mut lambda_a = f64::INFINITY;
    let mut mu_a: f64 = 0.0;
    for c in sample_concentrations(c_box, n_samples, seed) {
        let (l, m) = spectral_constants_at(&c, delta);
        lambda_a = lambda_a.min(l);
        mu_a = mu_a.max(m);
    }
    Ok(SpectralConstants { lambda_a, mu_a, sample_count: n_samples, c_box: c_box.to_vec() })
}

/// Both inequalities for one (c, X):
/// -⟨X,AX⟩ ≥ λ_A (min c)² (‖X‖² - ⟨X,1⟩²) and ‖AX‖ ≤ μ_A (Σc)² ‖X‖.
/// Returns the two slacks (nonnegative when they hold), with a relative
/// rounding allowance folded in.
pub fn check_prop_inequalities(a: &MSMatrix, x: &[f64], k: &SpectralConstants) -> (f64, f64) {
    let ax = a.apply(x);
    let xax: f64 = x.iter().zip(&ax).map(|(p, q)| p * q).sum();
    let nx2: f64 = x.iter().map(|v| v * v).sum();
    let s1: f64 = x.iter().sum();
    let cmin = a.c.iter().cloned().fold(f64::INFINITY, f64::min);
    let ctot: f64 = a.c.iter().sum();
    let scale = a.a.abs().max() * nx2;
    let lower = -xax - k.lambda_a * cmin * cmin * (nx2 - s1 * s1) + 1e-12 * scale;
    let nax = ax.iter().map(|v| v * v).sum::<f64>().sqrt();
    let upper = k.mu_a * ctot * ctot * nx2.sqrt() - nax + 1e-12 * scale.sqrt();
    (lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d2(v: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, v, v, 1.0])
    }

    #[test]
    fn two_species_examples() {
        let a = build_ms_matrix(&[1.0, 1.0], &d2(1.0)).unwrap();
        assert_eq!(a.a, DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let b = build_ms_matrix(&[2.0, 1.0], &d2(1.0)).unwrap();
        assert_eq!(b.a, DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 2.0, -2.0]));
        assert!(build_ms_matrix(&[1.0, 0.0], &d2(1.0)).is_err());
        assert!(build_ms_matrix(&[1.0, 1.0], &d2(-1.0)).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_off_kernel(&[1.0, 1.0, 1.0]), vec![0.0; 3]);
        assert_eq!(project_off_kernel(&[1.0, -1.0]), vec![1.0, -1.0]);
        assert_eq!(project_off_kernel(&[2.0, 0.0, 1.0]), vec![1.0, -1.0, 0.0]);
    }

    #[test]
    fn hand_checked_solve() {
        let a = build_ms_matrix(&[1.0, 1.0], &d2(1.0)).unwrap();
        let u = a.solve_flux_force(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], TAU_SOLV).unwrap();
        assert!((u[0][0] + 0.5).abs() < 1e-15 && (u[1][0] - 0.5).abs() < 1e-15);
        let z = a.solve_flux_force(&[[0.0; 3]; 2], TAU_SOLV).unwrap();
        assert_eq!(z, vec![[0.0; 3]; 2]);
        let bad = a.solve_flux_force(&[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]], TAU_SOLV);
        assert!(matches!(bad, Err(Error::Solvability { .. })));
    }

    #[test]
    fn single_point_box() {
        let k = estimate_spectral_constants(&d2(1.0), &[(1.0, 1.0), (1.0, 1.0)], 3, 1).unwrap();
        // Eigenvalues of -A are {0, 2}.
        assert!((k.lambda_a - 2.0).abs() < 1e-12);
        assert!((k.mu_a - 0.5).abs() < 1e-12);
        assert!(estimate_spectral_constants(&d2(1.0), &[], 3, 1).is_err());
    }
}
