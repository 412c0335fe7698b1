//! One-hidden-layer ReLU network on the last `rho` rates.

use serde::{Deserialize, Serialize};

use crate::train::{Objective, Window};

pub const DEFAULT_WIDTH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcNet {
    pub rho: usize,
    pub width: usize,
    /// `[w1 (width x rho, row-major), b1, w2, b2]`.
    pub params: Vec<f64>,
}

pub fn n_params(rho: usize, width: usize) -> usize {
    width * rho + 2 * width + 1
}

fn forward(p: &[f64], rho: usize, width: usize, x: &[f64], hidden: &mut [f64]) -> f64 {
    let (w1, rest) = p.split_at(width * rho);
    let (b1, rest) = rest.split_at(width);
    let (w2, b2) = rest.split_at(width);
    let mut y = b2[0];
    for j in 0..width {
        let a: f64 = w1[j * rho..(j + 1) * rho].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[j];
        hidden[j] = a.max(0.0);
        y += w2[j] * hidden[j];
    }
    y
}

impl FcNet {
    pub fn zeros(rho: usize, width: usize) -> Self {
        Self {
            rho,
            width,
            params: vec![0.0; n_params(rho, width)],
        }
    }

    pub fn predict(&self, inputs: &[f64]) -> f64 {
        let mut hidden = vec![0.0; self.width];
        forward(&self.params, self.rho, self.width, inputs, &mut hidden)
    }
}

pub struct FcObjective {
    pub rho: usize,
    pub width: usize,
}

impl Objective for FcObjective {
    fn n_params(&self) -> usize {
        n_params(self.rho, self.width)
    }

    fn loss_grad(&self, p: &[f64], window: &Window, grad: &mut [f64]) -> f64 {
        let (rho, width) = (self.rho, self.width);
        let x = &window.inputs;
        let mut hidden = vec![0.0; width];
        let y = forward(p, rho, width, x, &mut hidden);
        let err = y - window.target;
        let w2 = &p[width * rho + width..width * rho + 2 * width];
        grad.iter_mut().for_each(|g| *g = 0.0);
        for j in 0..width {
            grad[width * rho + width + j] = err * hidden[j];
            if hidden[j] > 0.0 {
                let d = err * w2[j];
                grad[width * rho + j] = d;
                for i in 0..rho {
                    grad[j * rho + i] = d * x[i];
                }
            }
        }
        grad[width * rho + 2 * width] = err;
        0.5 * err * err
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{fit, stream_rng, SgdConfig};
    use rand::Rng;

    #[test]
    fn zero_network_predicts_zero() {
        let net = FcNet::zeros(4, DEFAULT_WIDTH);
        assert_eq!(net.predict(&[1.0, -2.0, 3.0, 0.5]), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let obj = FcObjective { rho: 3, width: 5 };
        let mut rng = stream_rng(5, 0);
        for _ in 0..5 {
            let p: Vec<f64> = (0..obj.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = Window {
                inputs: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                target: rng.random_range(-1.0..1.0),
            };
            let mut g = vec![0.0; obj.n_params()];
            obj.loss_grad(&p, &w, &mut g);
            for k in 0..p.len() {
                let eps = 1e-5;
                let mut hi = p.clone();
                let mut lo = p.clone();
                hi[k] += eps;
                lo[k] -= eps;
                let num = (obj.loss(&hi, &w) - obj.loss(&lo, &w)) / (2.0 * eps);
                let rel = (g[k] - num).abs() / (g[k].abs() + num.abs()).max(1e-8);
                assert!(rel < 1e-4, "param {k}: {} vs {num}", g[k]);
            }
        }
    }

    #[test]
    fn width_one_fits_a_realizable_linear_map() {
        let mut rng = stream_rng(1, 0);
        let windows: Vec<Window> = (0..200)
            .map(|_| {
                let inputs: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..1.0)).collect();
                let target = 0.5 * inputs[0] + 0.3 * inputs[1] + 0.1;
                Window { inputs, target }
            })
            .collect();
        let obj = FcObjective { rho: 2, width: 1 };
        let init = vec![0.5, 0.5, 0.1, 0.5, 0.0];
        let cfg = SgdConfig {
            learning_rate: 0.1,
            epochs: 400,
            ..SgdConfig::default()
        };
        let out = fit(&obj, init, &windows, &[], None, &cfg, &mut rng);
        assert!(out.final_train_loss < 1e-3, "{}", out.final_train_loss);
    }
}
