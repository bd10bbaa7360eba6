use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_RANK: usize = 8;
pub const DEFAULT_GAMMA: f64 = 1.2;

/// A frozen linear map `W` with a rank-`r` additive update `B·A`, scaled by
/// `gamma` at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer {
    w: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    pub gamma: f64,
}

impl LoraLayer {
    pub fn new(w: DMatrix<f64>, a: DMatrix<f64>, b: DMatrix<f64>, gamma: f64) -> Result<Self> {
        let (m, n) = w.shape();
        let r = a.nrows();
        if r == 0 || r > m.min(n) {
            return Err(Error::invalid(format!("rank {r} must be in 1..={}", m.min(n))));
        }
        if a.ncols() != n || b.shape() != (m, r) {
            return Err(Error::invalid(format!(
                "W is {m}x{n}, so A must be {r}x{n} and B {m}x{r}; got A {:?}, B {:?}",
                a.shape(),
                b.shape()
            )));
        }
        if !gamma.is_finite() {
            return Err(Error::invalid("gamma must be finite"));
        }
        Ok(Self { w, a, b, gamma })
    }

    pub fn rank(&self) -> usize {
        self.a.nrows()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `W x + γ B (A x)`; `B A` is never formed.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.w.ncols() {
            return Err(Error::invalid(format!("x has length {}, expected {}", x.len(), self.w.ncols())));
        }
        let low = &self.a * x;
        Ok(&self.w * x + (&self.b * low) * self.gamma)
    }
}

pub fn lora_forward(layer: &LoraLayer, x: &DVector<f64>) -> Result<DVector<f64>> {
    layer.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gamma_or_zero_b_is_base_map() {
        let w = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 - 5.0);
        let a = DMatrix::from_fn(2, 3, |i, j| (i + j) as f64 * 0.3);
        let b = DMatrix::from_fn(4, 2, |i, j| 1.0 + (i * j) as f64);
        let x = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let l = LoraLayer::new(w.clone(), a.clone(), b, 0.0).unwrap();
        assert_eq!(l.forward(&x).unwrap(), &w * &x);
        let l = LoraLayer::new(w.clone(), a, DMatrix::zeros(4, 2), 1.2).unwrap();
        assert_eq!(l.forward(&x).unwrap(), &w * &x);
    }

    #[test]
    fn shape_errors() {
        let w = DMatrix::zeros(4, 3);
        assert!(LoraLayer::new(w.clone(), DMatrix::zeros(4, 3), DMatrix::zeros(4, 4), 1.0).is_err());
        assert!(LoraLayer::new(w.clone(), DMatrix::zeros(2, 2), DMatrix::zeros(4, 2), 1.0).is_err());
        let l = LoraLayer::new(w, DMatrix::zeros(2, 3), DMatrix::zeros(4, 2), 1.0).unwrap();
        assert!(l.forward(&DVector::zeros(4)).is_err());
    }
}
