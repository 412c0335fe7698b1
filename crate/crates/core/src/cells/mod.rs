//! Scalar recurrent cells (hidden size 1): simple RNN, LSTM and GRU.
//!
//! Parameter records flatten in the order inputs-weights, recurrent-weights,
//! biases, gate by gate, e.g. `[u_z, u_r, u_v, w_z, w_r, w_v, b_z, b_r, b_v]`.

pub(crate) mod bptt;
pub mod multi;

pub use bptt::{bptt_gradients, finite_diff_check, loss_value, LossSpec, QuadraticPrior, Supervision};

use serde::{Deserialize, Serialize};

/// Logistic function, split on sign so `exp` never overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Lstm,
    Gru,
}

impl CellKind {
    pub fn n_params(self) -> usize {
        match self {
            CellKind::Rnn => 3,
            CellKind::Lstm => 12,
            CellKind::Gru => 9,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub u: f64,
    pub w: f64,
    pub b: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub u_i: f64,
    pub u_f: f64,
    pub u_o: f64,
    pub u_c: f64,
    pub w_i: f64,
    pub w_f: f64,
    pub w_o: f64,
    pub w_c: f64,
    pub b_i: f64,
    pub b_f: f64,
    pub b_o: f64,
    pub b_c: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub u_z: f64,
    pub u_r: f64,
    pub u_v: f64,
    pub w_z: f64,
    pub w_r: f64,
    pub w_v: f64,
    pub b_z: f64,
    pub b_r: f64,
    pub b_v: f64,
}

impl RnnParams {
    pub fn to_array(&self) -> [f64; 3] {
        [self.u, self.w, self.b]
    }

    pub fn from_slice(p: &[f64]) -> Self {
        Self { u: p[0], w: p[1], b: p[2] }
    }
}

impl LstmParams {
    pub fn to_array(&self) -> [f64; 12] {
        [
            self.u_i, self.u_f, self.u_o, self.u_c, self.w_i, self.w_f, self.w_o, self.w_c,
            self.b_i, self.b_f, self.b_o, self.b_c,
        ]
    }

    pub fn from_slice(p: &[f64]) -> Self {
        Self {
            u_i: p[0],
            u_f: p[1],
            u_o: p[2],
            u_c: p[3],
            w_i: p[4],
            w_f: p[5],
            w_o: p[6],
            w_c: p[7],
            b_i: p[8],
            b_f: p[9],
            b_o: p[10],
            b_c: p[11],
        }
    }
}

impl GruParams {
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.u_z, self.u_r, self.u_v, self.w_z, self.w_r, self.w_v, self.b_z, self.b_r,
            self.b_v,
        ]
    }

    pub fn from_slice(p: &[f64]) -> Self {
        Self {
            u_z: p[0],
            u_r: p[1],
            u_v: p[2],
            w_z: p[3],
            w_r: p[4],
            w_v: p[5],
            b_z: p[6],
            b_r: p[7],
            b_v: p[8],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn squared_distance(&self, other: &GruParams) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CellParams {
    Rnn(RnnParams),
    Lstm(LstmParams),
    Gru(GruParams),
}

impl CellParams {
    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Rnn(_) => CellKind::Rnn,
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Gru(_) => CellKind::Gru,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            CellParams::Rnn(p) => p.to_array().to_vec(),
            CellParams::Lstm(p) => p.to_array().to_vec(),
            CellParams::Gru(p) => p.to_array().to_vec(),
        }
    }

    pub fn from_slice(kind: CellKind, p: &[f64]) -> Self {
        assert_eq!(p.len(), kind.n_params(), "parameter count for {kind:?}");
        match kind {
            CellKind::Rnn => CellParams::Rnn(RnnParams::from_slice(p)),
            CellKind::Lstm => CellParams::Lstm(LstmParams::from_slice(p)),
            CellKind::Gru => CellParams::Gru(GruParams::from_slice(p)),
        }
    }

    pub fn zeros(kind: CellKind) -> Self {
        Self::from_slice(kind, &vec![0.0; kind.n_params()])
    }
}

/// Hidden output `s` and, for LSTM only, the memory `c`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellState {
    pub s: f64,
    pub c: f64,
}

pub fn rnn_step(p: &RnnParams, x: f64, s_prev: f64) -> f64 {
    (x * p.u + s_prev * p.w + p.b).tanh()
}

pub fn lstm_step(p: &LstmParams, x: f64, state: CellState) -> CellState {
    let s = state.s;
    let i = sigmoid(x * p.u_i + s * p.w_i + p.b_i);
    let f = sigmoid(x * p.u_f + s * p.w_f + p.b_f);
    let o = sigmoid(x * p.u_o + s * p.w_o + p.b_o);
    let cand = (x * p.u_c + s * p.w_c + p.b_c).tanh();
    let c = f * state.c + i * cand;
    CellState { s: o * c.tanh(), c }
}

pub fn gru_step(p: &GruParams, x: f64, s_prev: f64) -> f64 {
    let z = sigmoid(x * p.u_z + s_prev * p.w_z + p.b_z);
    let r = sigmoid(x * p.u_r + s_prev * p.w_r + p.b_r);
    let v = (x * p.u_v + (s_prev * r) * p.w_v + p.b_v).tanh();
    z * v + (1.0 - z) * s_prev
}

pub fn step(params: &CellParams, x: f64, state: CellState) -> CellState {
    match params {
        CellParams::Rnn(p) => CellState {
            s: rnn_step(p, x, state.s),
            c: 0.0,
        },
        CellParams::Lstm(p) => lstm_step(p, x, state),
        CellParams::Gru(p) => CellState {
            s: gru_step(p, x, state.s),
            c: 0.0,
        },
    }
}

/// Hidden outputs after consuming each prefix of `inputs`.
pub fn unroll(params: &CellParams, inputs: &[f64], s0: CellState) -> Vec<f64> {
    let mut state = s0;
    inputs
        .iter()
        .map(|&x| {
            state = step(params, x, state);
            state.s
        })
        .collect()
}

/// Final GRU output after consuming `inputs` from a zero state.
pub fn gru_last(p: &GruParams, inputs: &[f64]) -> f64 {
    inputs.iter().fold(0.0, |s, &x| gru_step(p, x, s))
}
