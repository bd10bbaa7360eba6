use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_FD_EPS: f64 = 1e-4;

fn step(eps: f64, xj: f64) -> f64 {
    eps * (1.0 + xj.abs())
}

fn check_inputs(x: &DVector<f64>, eps: f64) -> Result<()> {
    if x.is_empty() {
        return Err(Error::invalid("x must be non-empty"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

fn assemble(columns: Vec<(DVector<f64>, DVector<f64>, f64)>) -> Result<DMatrix<f64>> {
    let m = columns[0].0.len();
    let n = columns.len();
    let mut jac = DMatrix::zeros(m, n);
    for (j, (plus, minus, h)) in columns.into_iter().enumerate() {
        if plus.len() != m || minus.len() != m {
            return Err(Error::ContractViolation(format!(
                "function returned {} and {} outputs for column {j}, expected {m}",
                plus.len(),
                minus.len()
            )));
        }
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac)
}

/// Central-difference Jacobian of `f` at `x`: exactly `2n` calls, sequential.
pub fn jacobian_fd(mut f: impl FnMut(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>> {
    check_inputs(x, eps)?;
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let h = step(eps, x[j]);
        let mut xp = x.clone();
        xp[j] += h;
        let mut xm = x.clone();
        xm[j] -= h;
        // Use the realized step so rounding in x ± h does not bias the quotient.
        let h = 0.5 * (xp[j] - xm[j]);
        cols.push((f(&xp), f(&xm), h));
    }
    assemble(cols)
}

/// Same as [`jacobian_fd`], evaluating columns concurrently. Only for
/// functions the caller knows are safe to call in parallel.
pub fn jacobian_fd_parallel(
    f: impl Fn(&DVector<f64>) -> DVector<f64> + Sync,
    x: &DVector<f64>,
    eps: f64,
) -> Result<DMatrix<f64>> {
    check_inputs(x, eps)?;
    let cols = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let h = step(eps, x[j]);
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let h = 0.5 * (xp[j] - xm[j]);
            (f(&xp), f(&xm), h)
        })
        .collect();
    assemble(cols)
}
