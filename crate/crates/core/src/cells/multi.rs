//! GRU with a vector input and a scalar hidden state.
//!
//! Only the input weights widen: each gate gets one weight per input
//! channel. With a single channel the cell is the scalar GRU, evaluated in
//! the same floating-point order.

use serde::{Deserialize, Serialize};

use super::sigmoid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiGruParams {
    pub u_z: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u_v: Vec<f64>,
    pub w_z: f64,
    pub w_r: f64,
    pub w_v: f64,
    pub b_z: f64,
    pub b_r: f64,
    pub b_v: f64,
}

pub fn n_params(channels: usize) -> usize {
    3 * channels + 6
}

impl MultiGruParams {
    pub fn channels(&self) -> usize {
        self.u_z.len()
    }

    /// Flat layout `[u_z.., u_r.., u_v.., w_z, w_r, w_v, b_z, b_r, b_v]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(n_params(self.channels()));
        v.extend(&self.u_z);
        v.extend(&self.u_r);
        v.extend(&self.u_v);
        v.extend([self.w_z, self.w_r, self.w_v, self.b_z, self.b_r, self.b_v]);
        v
    }

    pub fn from_slice(channels: usize, p: &[f64]) -> Self {
        assert_eq!(p.len(), n_params(channels));
        let d = channels;
        let t = &p[3 * d..];
        Self {
            u_z: p[..d].to_vec(),
            u_r: p[d..2 * d].to_vec(),
            u_v: p[2 * d..3 * d].to_vec(),
            w_z: t[0],
            w_r: t[1],
            w_v: t[2],
            b_z: t[3],
            b_r: t[4],
            b_v: t[5],
        }
    }
}

#[inline]
fn dot(x: &[f64], u: &[f64]) -> f64 {
    let mut acc = x[0] * u[0];
    for i in 1..x.len() {
        acc += x[i] * u[i];
    }
    acc
}

/// One step; `x` holds one value per channel.
pub fn multi_gru_step(p: &MultiGruParams, x: &[f64], s_prev: f64) -> f64 {
    let z = sigmoid(dot(x, &p.u_z) + s_prev * p.w_z + p.b_z);
    let r = sigmoid(dot(x, &p.u_r) + s_prev * p.w_r + p.b_r);
    let v = (dot(x, &p.u_v) + (s_prev * r) * p.w_v + p.b_v).tanh();
    z * v + (1.0 - z) * s_prev
}

/// Output after consuming row-major `rows` (each `channels` wide) from a zero state.
pub fn multi_gru_last(p: &MultiGruParams, rows: &[f64]) -> f64 {
    rows.chunks(p.channels())
        .fold(0.0, |s, x| multi_gru_step(p, x, s))
}

/// `1/2 (target - s_T)^2` over one window and its gradient (written into `grad`).
pub(crate) fn window_loss_grad(
    p: &[f64],
    channels: usize,
    rows: &[f64],
    target: f64,
    grad: &mut [f64],
) -> f64 {
    let d = channels;
    let (u_z, u_r, u_v) = (&p[..d], &p[d..2 * d], &p[2 * d..3 * d]);
    let [w_z, w_r, w_v, b_z, b_r, b_v] = [p[3 * d], p[3 * d + 1], p[3 * d + 2], p[3 * d + 3], p[3 * d + 4], p[3 * d + 5]];
    let steps = rows.len() / d;
    let mut cache = Vec::with_capacity(steps);
    let mut s = 0.0;
    for x in rows.chunks(d) {
        let z = sigmoid(dot(x, u_z) + s * w_z + b_z);
        let r = sigmoid(dot(x, u_r) + s * w_r + b_r);
        let v = (dot(x, u_v) + (s * r) * w_v + b_v).tanh();
        cache.push((s, z, r, v));
        s = z * v + (1.0 - z) * s;
    }
    let err = target - s;
    let loss = 0.5 * err * err;

    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut ds = -err;
    for t in (0..steps).rev() {
        let x = &rows[t * d..(t + 1) * d];
        let (s_prev, z, r, v) = cache[t];
        let dz = ds * (v - s_prev);
        let dv = ds * z;
        let mut ds_prev = ds * (1.0 - z);

        let da_v = dv * (1.0 - v * v);
        let d_sr = da_v * w_v;
        ds_prev += d_sr * r;
        let da_r = d_sr * s_prev * r * (1.0 - r);
        ds_prev += da_r * w_r;
        let da_z = dz * z * (1.0 - z);
        ds_prev += da_z * w_z;

        for i in 0..d {
            grad[i] += da_z * x[i];
            grad[d + i] += da_r * x[i];
            grad[2 * d + i] += da_v * x[i];
        }
        grad[3 * d] += da_z * s_prev;
        grad[3 * d + 1] += da_r * s_prev;
        grad[3 * d + 2] += da_v * (s_prev * r);
        grad[3 * d + 3] += da_z;
        grad[3 * d + 4] += da_r;
        grad[3 * d + 5] += da_v;
        ds = ds_prev;
    }
    loss
}
