//! Singular value decomposition for edit-direction extraction.
//!
//! Dense matrices use one-sided (Hestenes) Jacobi, which computes small
//! singular values to high relative accuracy. Above a size budget a seeded
//! randomized subspace iteration narrows the problem to `N + 8` columns first.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_SVD_BUDGET: usize = 4_000_000;

/// Thin SVD `A = U diag(s) Vᵀ` with `s` descending.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// One-sided Jacobi SVD. `U` is `m×k`, `V` is `n×k` with `k = min(m, n)`.
pub fn jacobi_svd(a: &DMatrix<f64>) -> Svd {
    let (m, n) = a.shape();
    if m < n {
        let t = jacobi_svd(&a.transpose());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    const TOL: f64 = 1e-15;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let mut u = DMatrix::zeros(m, n);
    let mut vs = DMatrix::zeros(n, n);
    let mut s = DVector::zeros(n);
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let mut null_cols = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        vs.set_column(k, &v.column(j));
        if norms[j] > scale * 1e-300 && norms[j] > 0.0 {
            u.set_column(k, &(w.column(j) / norms[j]));
        } else {
            null_cols.push(k);
        }
    }
    complete_basis(&mut u, &null_cols);
    Svd { u, s, v: vs }
}

fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

/// Fills columns `missing` of `u` with unit vectors orthogonal to the rest.
fn complete_basis(u: &mut DMatrix<f64>, missing: &[usize]) {
    let m = u.nrows();
    let mut filled: Vec<usize> = (0..u.ncols()).filter(|c| !missing.contains(c)).collect();
    let mut candidate = 0;
    for &k in missing {
        while candidate < m {
            let mut e = DVector::<f64>::zeros(m);
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let proj = u.column(j).dot(&e);
                    e -= u.column(j) * proj;
                }
            }
            let norm = e.norm();
            if norm > 1e-8 {
                u.set_column(k, &(e / norm));
                filled.push(k);
                break;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdOptions {
    /// Matrices with more entries use the randomized path.
    pub budget: usize,
    pub seed: u64,
    pub power_iterations: usize,
    pub oversample: usize,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            budget: DEFAULT_SVD_BUDGET,
            seed: 0,
            power_iterations: 2,
            oversample: 8,
        }
    }
}

fn orthonormal_columns(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Rank-`k` approximate SVD by randomized subspace iteration.
pub fn randomized_svd(a: &DMatrix<f64>, k: usize, opts: &SvdOptions) -> Svd {
    let (m, n) = a.shape();
    let l = (k + opts.oversample).min(m.min(n));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let omega = DMatrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormal_columns(a * omega);
    for _ in 0..opts.power_iterations {
        let z = orthonormal_columns(a.transpose() * &q);
        q = orthonormal_columns(a * z);
    }
    let b = q.transpose() * a;
    let small = jacobi_svd(&b);
    Svd {
        u: q * small.u,
        s: small.s,
        v: small.v,
    }
}

/// Top-`N` singular triplets of a Jacobian, as edit directions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditDirectionSet {
    /// Left singular vectors (output / h-space), unit length.
    pub directions: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
    /// Right singular vectors (input / x-space), unit length.
    pub x_directions: Vec<Vec<f64>>,
    /// Some requested singular value is numerically zero.
    pub rank_deficient: bool,
}

impl EditDirectionSet {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn direction(&self, i: usize) -> Option<DVector<f64>> {
        self.directions.get(i).map(|d| DVector::from_column_slice(d))
    }

    pub fn x_direction(&self, i: usize) -> Option<DVector<f64>> {
        self.x_directions.get(i).map(|d| DVector::from_column_slice(d))
    }
}

pub fn top_directions_svd(j: &DMatrix<f64>, n: usize) -> Result<EditDirectionSet> {
    top_directions_svd_with(j, n, &SvdOptions::default())
}

pub fn top_directions_svd_with(j: &DMatrix<f64>, n: usize, opts: &SvdOptions) -> Result<EditDirectionSet> {
    let (rows, cols) = j.shape();
    if n == 0 || n > rows.min(cols) {
        return Err(Error::invalid(format!("N must be in 1..={}, got {n}", rows.min(cols))));
    }
    let svd = if rows * cols > opts.budget {
        randomized_svd(j, n, opts)
    } else {
        jacobi_svd(j)
    };
    let sigma_max = svd.s.iter().cloned().fold(0.0, f64::max);
    let tol = rows.max(cols) as f64 * f64::EPSILON * sigma_max;
    let mut out = EditDirectionSet {
        directions: Vec::with_capacity(n),
        sigmas: Vec::with_capacity(n),
        x_directions: Vec::with_capacity(n),
        rank_deficient: false,
    };
    for i in 0..n {
        let mut e = svd.u.column(i).into_owned();
        let mut x = svd.v.column(i).into_owned();
        let lead = x.iter().copied().find(|c| c.abs() > 1e-12).unwrap_or(0.0);
        if lead < 0.0 {
            e = -e;
            x = -x;
        }
        out.rank_deficient |= sigma_max == 0.0 || svd.s[i] <= tol;
        out.sigmas.push(svd.s[i]);
        out.directions.push(e.iter().copied().collect());
        out.x_directions.push(x.iter().copied().collect());
    }
    Ok(out)
}

/// `delta_h + beta·e_i`.
pub fn apply_h_edit(delta_h: &DVector<f64>, set: &EditDirectionSet, i: usize, beta: f64) -> Result<DVector<f64>> {
    let e = set
        .direction(i)
        .ok_or_else(|| Error::invalid(format!("direction index {i} out of range (have {})", set.len())))?;
    if e.len() != delta_h.len() {
        return Err(Error::invalid(format!(
            "delta_h has length {}, directions have {}",
            delta_h.len(),
            e.len()
        )));
    }
    Ok(delta_h + e * beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal() {
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let d = top_directions_svd(&j, 2).unwrap();
        assert_eq!(d.sigmas, vec![3.0, 2.0]);
        assert_eq!(d.directions[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(d.directions[1], vec![0.0, 1.0, 0.0]);
        assert!(!d.rank_deficient);
    }

    #[test]
    fn zero_matrix_is_flagged() {
        let d = top_directions_svd(&DMatrix::zeros(4, 3), 3).unwrap();
        assert!(d.rank_deficient);
        assert!(d.sigmas.iter().all(|&s| s == 0.0));
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = d.directions[a].iter().zip(&d.directions[b]).map(|(x, y)| x * y).sum();
                assert!((dot - f64::from(u8::from(a == b))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wide_matrix_uses_transpose() {
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let svd = jacobi_svd(&j);
        let rebuilt = &svd.u * DMatrix::from_diagonal(&svd.s) * svd.v.transpose();
        assert!((rebuilt - j).abs().max() < 1e-12);
    }

    #[test]
    fn n_out_of_range() {
        let j = DMatrix::<f64>::identity(3, 3);
        assert!(top_directions_svd(&j, 0).is_err());
        assert!(top_directions_svd(&j, 4).is_err());
    }

    #[test]
    fn h_edit() {
        let set = top_directions_svd(&DMatrix::<f64>::identity(3, 3), 1).unwrap();
        let dh = apply_h_edit(&DVector::zeros(3), &set, 0, 2.0).unwrap();
        assert_eq!(dh, DVector::from_vec(vec![2.0, 0.0, 0.0]));
        assert!(apply_h_edit(&dh, &set, 1, 1.0).is_err());
    }
}
