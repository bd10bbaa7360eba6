//! Small deterministic networks standing in for the control network whose
//! Jacobian is probed.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::jacobian::{jacobian_fd, DEFAULT_FD_EPS};
use super::svd::{top_directions_svd_with, EditDirectionSet, SvdOptions};
use crate::error::{Error, Result};

/// Dense layers with `tanh` between them; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNetwork {
    layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl ToyNetwork {
    /// Weights drawn from `N(0, 1/fan_in)`, biases from `N(0, 0.01)`.
    pub fn seeded(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::invalid("layer_sizes needs at least two positive entries"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bias = Normal::new(0.0, 0.1).expect("valid normal");
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("valid normal");
                let weights = DMatrix::from_fn(fan_out, fan_in, |_, _| dist.sample(&mut rng));
                let b = DVector::from_fn(fan_out, |_, _| bias.sample(&mut rng));
                (weights, b)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").0.nrows()
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let last = self.layers.len() - 1;
        self.layers.iter().enumerate().fold(x.clone(), |h, (i, (w, b))| {
            let z = w * h + b;
            if i < last {
                z.map(f64::tanh)
            } else {
                z
            }
        })
    }
}

/// A probe file: which toy network to build and where to differentiate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub layer_sizes: Vec<usize>,
    pub seed: u64,
    pub x: Vec<f64>,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    DEFAULT_FD_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub jacobian_shape: [usize; 2],
    #[serde(flatten)]
    pub directions: EditDirectionSet,
}

/// Builds the probe network, differentiates it at `x` and extracts the top
/// `n` directions.
pub fn run_probe(probe: &ProbeSpec, n: usize, svd: &SvdOptions) -> Result<ProbeResult> {
    let net = ToyNetwork::seeded(&probe.layer_sizes, probe.seed)?;
    if probe.x.len() != net.input_dim() {
        return Err(Error::invalid(format!(
            "x has length {} but the first layer takes {}",
            probe.x.len(),
            net.input_dim()
        )));
    }
    let x = DVector::from_column_slice(&probe.x);
    let jac = jacobian_fd(|v| net.forward(v), &x, probe.eps)?;
    Ok(ProbeResult {
        jacobian_shape: [jac.nrows(), jac.ncols()],
        directions: top_directions_svd_with(&jac, n, svd)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_network_is_deterministic() {
        let a = ToyNetwork::seeded(&[4, 6, 3], 11).unwrap();
        let b = ToyNetwork::seeded(&[4, 6, 3], 11).unwrap();
        let x = DVector::from_vec(vec![0.1, 0.2, -0.3, 0.4]);
        assert_eq!(a.forward(&x), b.forward(&x));
        assert_eq!(a.output_dim(), 3);
    }

    #[test]
    fn probe_runs() {
        let p = ProbeSpec {
            layer_sizes: vec![5, 8, 4],
            seed: 3,
            x: vec![0.1; 5],
            eps: 1e-4,
        };
        let r = run_probe(&p, 2, &SvdOptions::default()).unwrap();
        assert_eq!(r.jacobian_shape, [4, 5]);
        assert!(r.directions.sigmas[0] >= r.directions.sigmas[1]);
        let bad = ProbeSpec { x: vec![0.0; 3], ..p };
        assert!(run_probe(&bad, 2, &SvdOptions::default()).is_err());
    }
}
