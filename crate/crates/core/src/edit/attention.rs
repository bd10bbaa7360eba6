use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Query, key and value matrices, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensors {
    pub q: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl AttentionTensors {
    pub fn new(q: DMatrix<f64>, k: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if k.nrows() != v.nrows() {
            return Err(Error::invalid(format!("K has {} tokens but V has {}", k.nrows(), v.nrows())));
        }
        if q.ncols() != k.ncols() {
            return Err(Error::invalid(format!("Q has {} channels but K has {}", q.ncols(), k.ncols())));
        }
        Ok(Self { q, k, v })
    }
}

/// Row-wise softmax of `Q Kᵀ / √d`, stabilized by subtracting each row's max.
pub fn attention_weights(q: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if q.ncols() != k.ncols() || q.ncols() == 0 {
        return Err(Error::invalid(format!("Q has {} channels but K has {}", q.ncols(), k.ncols())));
    }
    if k.nrows() == 0 {
        return Err(Error::invalid("K has no tokens"));
    }
    let mut s = q * k.transpose() / (q.ncols() as f64).sqrt();
    for mut row in s.row_iter_mut() {
        let max = row.max();
        row.apply(|x| *x = (*x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    Ok(s)
}

/// Attention of the target queries over the source keys and values.
pub fn kv_shared_attention(target: &AttentionTensors, source: &AttentionTensors) -> Result<DMatrix<f64>> {
    if source.k.nrows() != source.v.nrows() {
        return Err(Error::invalid("source K and V token counts differ"));
    }
    Ok(attention_weights(&target.q, &source.k)? * &source.v)
}
