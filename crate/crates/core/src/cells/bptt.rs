//! Reverse-mode gradients through unrolled scalar cells.

use super::{sigmoid, CellKind, CellParams};
use crate::error::{Error, Result};

/// Which outputs carry a squared-error term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Supervision {
    /// Every step's output is compared with its target.
    AllSteps,
    /// Only the final output is compared with the final target.
    LastStep,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticPrior {
    pub mean: CellParams,
    pub precision: f64,
}

/// `sum_t 1/2 tau (y_t - s_t)^2 + 1/2 tau_theta |theta - mean|^2`
#[derive(Clone, Debug, PartialEq)]
pub struct LossSpec {
    pub likelihood_precision: f64,
    pub supervision: Supervision,
    pub prior: Option<QuadraticPrior>,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            likelihood_precision: 1.0,
            supervision: Supervision::AllSteps,
            prior: None,
        }
    }
}

fn check(params: &CellParams, inputs: &[f64], targets: &[f64], spec: &LossSpec) -> Result<()> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::Contract(format!(
            "need equal nonzero input/target lengths, got {} and {}",
            inputs.len(),
            targets.len()
        )));
    }
    if let Some(prior) = &spec.prior {
        if prior.mean.kind() != params.kind() {
            return Err(Error::Contract("prior mean has a different cell kind".into()));
        }
    }
    Ok(())
}

pub fn loss_value(params: &CellParams, inputs: &[f64], targets: &[f64], spec: &LossSpec) -> Result<f64> {
    check(params, inputs, targets, spec)?;
    let mut scratch = vec![0.0; params.kind().n_params()];
    Ok(loss_and_grad(
        params.kind(),
        &params.to_vec(),
        inputs,
        targets,
        spec,
        &mut scratch,
        false,
    ))
}

/// Loss and its exact gradient, accumulated through the whole sequence.
pub fn bptt_gradients(
    params: &CellParams,
    inputs: &[f64],
    targets: &[f64],
    spec: &LossSpec,
) -> Result<(f64, CellParams)> {
    check(params, inputs, targets, spec)?;
    let kind = params.kind();
    let mut grad = vec![0.0; kind.n_params()];
    let loss = loss_and_grad(kind, &params.to_vec(), inputs, targets, spec, &mut grad, true);
    Ok((loss, CellParams::from_slice(kind, &grad)))
}

/// Largest relative gap `|a - b| / max(1e-8, |a| + |b|)` between the BPTT
/// gradient and central differences with step `epsilon`.
pub fn finite_diff_check(
    params: &CellParams,
    inputs: &[f64],
    targets: &[f64],
    spec: &LossSpec,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Contract(format!("epsilon must be positive, got {epsilon}")));
    }
    let (_, grad) = bptt_gradients(params, inputs, targets, spec)?;
    let analytic = grad.to_vec();
    let kind = params.kind();
    let base = params.to_vec();
    let mut worst = 0.0f64;
    for j in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[j] += epsilon;
        minus[j] -= epsilon;
        let lp = loss_value(&CellParams::from_slice(kind, &plus), inputs, targets, spec)?;
        let lm = loss_value(&CellParams::from_slice(kind, &minus), inputs, targets, spec)?;
        let numeric = (lp - lm) / (2.0 * epsilon);
        let a = analytic[j];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Writes the gradient into `grad` (overwriting) when `want_grad` is set.
pub(crate) fn loss_and_grad(
    kind: CellKind,
    p: &[f64],
    inputs: &[f64],
    targets: &[f64],
    spec: &LossSpec,
    grad: &mut [f64],
    want_grad: bool,
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n = inputs.len();
    let tau = spec.likelihood_precision;
    let supervised = |t: usize| match spec.supervision {
        Supervision::AllSteps => true,
        Supervision::LastStep => t + 1 == n,
    };

    let mut loss = match kind {
        CellKind::Gru => gru_seq(p, inputs, targets, tau, &supervised, grad, want_grad),
        CellKind::Lstm => lstm_seq(p, inputs, targets, tau, &supervised, grad, want_grad),
        CellKind::Rnn => rnn_seq(p, inputs, targets, tau, &supervised, grad, want_grad),
    };

    if let Some(prior) = &spec.prior {
        let mean = prior.mean.to_vec();
        for (j, (&theta, &mu)) in p.iter().zip(&mean).enumerate() {
            let d = theta - mu;
            loss += 0.5 * prior.precision * d * d;
            if want_grad {
                grad[j] += prior.precision * d;
            }
        }
    }
    loss
}

fn gru_seq(
    p: &[f64],
    xs: &[f64],
    ys: &[f64],
    tau: f64,
    supervised: &dyn Fn(usize) -> bool,
    grad: &mut [f64],
    want_grad: bool,
) -> f64 {
    let [u_z, u_r, u_v, w_z, w_r, w_v, b_z, b_r, b_v] = [p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]];
    // (s_prev, z, r, v) per step
    let mut cache = Vec::with_capacity(xs.len());
    let mut s = 0.0;
    let mut loss = 0.0;
    let mut outputs = Vec::with_capacity(xs.len());
    for &x in xs {
        let z = sigmoid(x * u_z + s * w_z + b_z);
        let r = sigmoid(x * u_r + s * w_r + b_r);
        let v = (x * u_v + (s * r) * w_v + b_v).tanh();
        let next = z * v + (1.0 - z) * s;
        cache.push((s, z, r, v));
        s = next;
        outputs.push(s);
    }
    for (t, (&out, &y)) in outputs.iter().zip(ys).enumerate() {
        if supervised(t) {
            loss += 0.5 * tau * (y - out) * (y - out);
        }
    }
    if !want_grad {
        return loss;
    }

    let mut ds_next = 0.0;
    for t in (0..xs.len()).rev() {
        let x = xs[t];
        let (s_prev, z, r, v) = cache[t];
        let mut ds = ds_next;
        if supervised(t) {
            ds += -tau * (ys[t] - outputs[t]);
        }
        let dz = ds * (v - s_prev);
        let dv = ds * z;
        let mut ds_prev = ds * (1.0 - z);

        let da_v = dv * (1.0 - v * v);
        grad[2] += da_v * x;
        grad[5] += da_v * (s_prev * r);
        grad[8] += da_v;
        let d_sr = da_v * w_v;
        ds_prev += d_sr * r;
        let dr = d_sr * s_prev;

        let da_r = dr * r * (1.0 - r);
        grad[1] += da_r * x;
        grad[4] += da_r * s_prev;
        grad[7] += da_r;
        ds_prev += da_r * w_r;

        let da_z = dz * z * (1.0 - z);
        grad[0] += da_z * x;
        grad[3] += da_z * s_prev;
        grad[6] += da_z;
        ds_prev += da_z * w_z;

        ds_next = ds_prev;
    }
    loss
}

fn lstm_seq(
    p: &[f64],
    xs: &[f64],
    ys: &[f64],
    tau: f64,
    supervised: &dyn Fn(usize) -> bool,
    grad: &mut [f64],
    want_grad: bool,
) -> f64 {
    let (u, w, b) = (&p[0..4], &p[4..8], &p[8..12]);
    struct Step {
        s_prev: f64,
        c_prev: f64,
        gates: [f64; 4],
        tanh_c: f64,
    }
    let mut cache = Vec::with_capacity(xs.len());
    let (mut s, mut c) = (0.0, 0.0);
    let mut outputs = Vec::with_capacity(xs.len());
    for &x in xs {
        let i = sigmoid(x * u[0] + s * w[0] + b[0]);
        let f = sigmoid(x * u[1] + s * w[1] + b[1]);
        let o = sigmoid(x * u[2] + s * w[2] + b[2]);
        let cand = (x * u[3] + s * w[3] + b[3]).tanh();
        let c_next = f * c + i * cand;
        let tanh_c = c_next.tanh();
        cache.push(Step {
            s_prev: s,
            c_prev: c,
            gates: [i, f, o, cand],
            tanh_c,
        });
        s = o * tanh_c;
        c = c_next;
        outputs.push(s);
    }
    let mut loss = 0.0;
    for (t, (&out, &y)) in outputs.iter().zip(ys).enumerate() {
        if supervised(t) {
            loss += 0.5 * tau * (y - out) * (y - out);
        }
    }
    if !want_grad {
        return loss;
    }

    let (mut ds_next, mut dc_next) = (0.0, 0.0);
    for t in (0..xs.len()).rev() {
        let x = xs[t];
        let st = &cache[t];
        let [i, f, o, cand] = st.gates;
        let mut ds = ds_next;
        if supervised(t) {
            ds += -tau * (ys[t] - outputs[t]);
        }
        let d_o = ds * st.tanh_c;
        let dc = dc_next + ds * o * (1.0 - st.tanh_c * st.tanh_c);
        let di = dc * cand;
        let d_cand = dc * i;
        let df = dc * st.c_prev;
        dc_next = dc * f;

        let pre = [
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            d_o * o * (1.0 - o),
            d_cand * (1.0 - cand * cand),
        ];
        let mut ds_prev = 0.0;
        for (g, &da) in pre.iter().enumerate() {
            grad[g] += da * x;
            grad[4 + g] += da * st.s_prev;
            grad[8 + g] += da;
            ds_prev += da * w[g];
        }
        ds_next = ds_prev;
    }
    loss
}

fn rnn_seq(
    p: &[f64],
    xs: &[f64],
    ys: &[f64],
    tau: f64,
    supervised: &dyn Fn(usize) -> bool,
    grad: &mut [f64],
    want_grad: bool,
) -> f64 {
    let (u, w, b) = (p[0], p[1], p[2]);
    let mut prev = Vec::with_capacity(xs.len());
    let mut outputs = Vec::with_capacity(xs.len());
    let mut s = 0.0;
    for &x in xs {
        prev.push(s);
        s = (x * u + s * w + b).tanh();
        outputs.push(s);
    }
    let mut loss = 0.0;
    for (t, (&out, &y)) in outputs.iter().zip(ys).enumerate() {
        if supervised(t) {
            loss += 0.5 * tau * (y - out) * (y - out);
        }
    }
    if !want_grad {
        return loss;
    }
    let mut ds_next = 0.0;
    for t in (0..xs.len()).rev() {
        let mut ds = ds_next;
        if supervised(t) {
            ds += -tau * (ys[t] - outputs[t]);
        }
        let da = ds * (1.0 - outputs[t] * outputs[t]);
        grad[0] += da * xs[t];
        grad[1] += da * prev[t];
        grad[2] += da;
        ds_next = da * w;
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{unroll, CellState, GruParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, kind: CellKind) -> CellParams {
        let v: Vec<f64> = (0..kind.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        CellParams::from_slice(kind, &v)
    }

    #[test]
    fn loss_matches_unrolled_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru] {
            let p = random_params(&mut rng, kind);
            let xs: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ys: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = unroll(&p, &xs, CellState::default());
            let direct: f64 = out.iter().zip(&ys).map(|(o, y)| 0.5 * (y - o) * (y - o)).sum();
            let l = loss_value(&p, &xs, &ys, &LossSpec::default()).unwrap();
            assert!((l - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn perfect_fit_has_zero_likelihood_gradient() {
        let p = CellParams::Gru(GruParams::from_slice(&[0.4, -0.2, 0.3, 0.1, 0.5, -0.6, 0.2, 0.0, 0.1]));
        let xs = [0.3, -0.7, 1.1, 0.2];
        let ys = unroll(&p, &xs, CellState::default());
        let (loss, g) = bptt_gradients(&p, &xs, &ys, &LossSpec::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prior_gradient_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(&mut rng, CellKind::Gru);
        let mean = random_params(&mut rng, CellKind::Gru);
        let xs = [0.5, 0.1, -0.3];
        let ys = [0.2, -0.1, 0.4];
        let with_prior = LossSpec {
            prior: Some(QuadraticPrior {
                mean,
                precision: 3.5,
            }),
            ..LossSpec::default()
        };
        let (_, g_full) = bptt_gradients(&p, &xs, &ys, &with_prior).unwrap();
        let (_, g_lik) = bptt_gradients(&p, &xs, &ys, &LossSpec::default()).unwrap();
        for ((gf, gl), (th, mu)) in g_full
            .to_vec()
            .iter()
            .zip(g_lik.to_vec())
            .zip(p.to_vec().iter().zip(mean.to_vec()))
        {
            assert!((gf - gl - 3.5 * (th - mu)).abs() < 1e-12);
        }

        // At the prior mean, with no likelihood weight, the gradient vanishes.
        let at_mean = LossSpec {
            likelihood_precision: 0.0,
            prior: Some(QuadraticPrior { mean: p, precision: 2.0 }),
            ..LossSpec::default()
        };
        let (_, g) = bptt_gradients(&p, &xs, &ys, &at_mean).unwrap();
        assert!(g.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        let p = CellParams::zeros(CellKind::Gru);
        assert!(bptt_gradients(&p, &[1.0, 2.0], &[1.0], &LossSpec::default()).is_err());
        assert!(bptt_gradients(&p, &[], &[], &LossSpec::default()).is_err());
    }

    #[test]
    fn quadratic_only_loss_is_exact() {
        let p = CellParams::Gru(GruParams::from_slice(&[0.7, -0.1, 0.2, 0.9, -0.5, 0.3, 0.05, -0.8, 0.4]));
        let spec = LossSpec {
            likelihood_precision: 0.0,
            prior: Some(QuadraticPrior {
                mean: CellParams::zeros(CellKind::Gru),
                precision: 1.3,
            }),
            ..LossSpec::default()
        };
        let err = finite_diff_check(&p, &[0.1, 0.2], &[0.0, 0.0], &spec, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn random_instances_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for kind in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru] {
            for supervision in [Supervision::AllSteps, Supervision::LastStep] {
                for _ in 0..10 {
                    let p = random_params(&mut rng, kind);
                    let t = rng.random_range(1..=12);
                    let xs: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let ys: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let spec = LossSpec {
                        supervision,
                        ..LossSpec::default()
                    };
                    let err = finite_diff_check(&p, &xs, &ys, &spec, 1e-5).unwrap();
                    assert!(err < 1e-4, "{kind:?} {supervision:?}: {err}");
                }
            }
        }
    }

    #[test]
    fn large_step_exposes_truncation_error() {
        // Saturating pre-activations make the loss strongly curved.
        let p = CellParams::Gru(GruParams::from_slice(&[6.0, -5.0, 7.0, 4.0, 3.0, -6.0, 1.0, 2.0, -1.0]));
        let xs = [0.9, -0.8, 0.7, -0.6];
        let ys = [0.5, -0.5, 0.5, -0.5];
        let spec = LossSpec::default();
        let coarse = finite_diff_check(&p, &xs, &ys, &spec, 1e-1).unwrap();
        let fine = finite_diff_check(&p, &xs, &ys, &spec, 1e-5).unwrap();
        assert!(coarse > 1e-4, "{coarse}");
        assert!(fine < coarse);
    }
}
