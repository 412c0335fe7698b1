//! Mini-batch gradient descent over supervised windows, shared by every
//! gradient-trained model in the crate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cells::{self, multi, CellKind, LossSpec, Supervision};
use crate::panel::Month;

/// `steps * channels` inputs (row-major) and the value that follows them.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub inputs: Vec<f64>,
    pub target: f64,
}

pub trait Objective: Sync {
    fn n_params(&self) -> usize;

    /// Loss of one window; the gradient is written into `grad`.
    fn loss_grad(&self, params: &[f64], window: &Window, grad: &mut [f64]) -> f64;

    fn loss(&self, params: &[f64], window: &Window) -> f64 {
        let mut scratch = vec![0.0; self.n_params()];
        self.loss_grad(params, window, &mut scratch)
    }
}

/// Scalar GRU predicting the value after its input window.
pub struct GruWindowObjective;

impl Objective for GruWindowObjective {
    fn n_params(&self) -> usize {
        CellKind::Gru.n_params()
    }

    fn loss_grad(&self, params: &[f64], window: &Window, grad: &mut [f64]) -> f64 {
        let mut targets = vec![0.0; window.inputs.len()];
        if let Some(last) = targets.last_mut() {
            *last = window.target;
        }
        let spec = LossSpec {
            supervision: Supervision::LastStep,
            ..LossSpec::default()
        };
        cells::bptt::loss_and_grad(CellKind::Gru, params, &window.inputs, &targets, &spec, grad, true)
    }
}

/// GRU over `channels`-wide input rows.
pub struct MultiGruWindowObjective {
    pub channels: usize,
}

impl Objective for MultiGruWindowObjective {
    fn n_params(&self) -> usize {
        multi::n_params(self.channels)
    }

    fn loss_grad(&self, params: &[f64], window: &Window, grad: &mut [f64]) -> f64 {
        multi::window_loss_grad(params, self.channels, &window.inputs, window.target, grad)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Maximum Euclidean norm of a mini-batch likelihood gradient.
    pub gradient_clip: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 300,
            batch_size: 8,
            gradient_clip: 5.0,
            patience: 10,
        }
    }
}

/// Gaussian prior `N(mean, precision^-1 I)` on the parameters.
#[derive(Clone, Copy, Debug)]
pub struct Prior<'a> {
    pub mean: &'a [f64],
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub params: Vec<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Mean training objective per epoch (likelihood plus amortised prior).
    pub train_history: Vec<f64>,
    /// Mean validation window loss per epoch; empty without validation windows.
    pub val_history: Vec<f64>,
    /// Training objective at the returned parameters.
    pub final_train_loss: f64,
    pub diverged: bool,
}

pub fn uniform_init(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
}

/// Seeded generator for one named sub-stream (e.g. one node).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn objective_value(obj: &dyn Objective, params: &[f64], windows: &[Window], prior: Option<Prior<'_>>) -> f64 {
    if windows.is_empty() {
        return 0.0;
    }
    let n = windows.len() as f64;
    let mut total: f64 = windows.iter().map(|w| obj.loss(params, w)).sum::<f64>() / n;
    if let Some(prior) = prior {
        if prior.precision > 0.0 {
            let sq: f64 = params
                .iter()
                .zip(prior.mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += 0.5 * prior.precision * sq / n;
        }
    }
    total
}

fn mean_loss(obj: &dyn Objective, params: &[f64], windows: &[Window]) -> f64 {
    windows.iter().map(|w| obj.loss(params, w)).sum::<f64>() / windows.len() as f64
}

/// Minimises `(1/N) [sum_i loss_i + 1/2 precision |theta - mean|^2]`.
///
/// Likelihood gradients are clipped per mini-batch; the quadratic prior is
/// applied as an exact proximal step after each gradient step, which keeps
/// very large precisions stable. A zero precision skips the prior entirely.
/// With validation windows, training stops after `patience` epochs without
/// improvement and the best-validation parameters are returned.
pub fn fit(
    obj: &dyn Objective,
    init: Vec<f64>,
    train: &[Window],
    val: &[Window],
    prior: Option<Prior<'_>>,
    cfg: &SgdConfig,
    rng: &mut ChaCha8Rng,
) -> FitOutcome {
    let n_params = obj.n_params();
    assert_eq!(init.len(), n_params);
    let mut params = init;
    let prior = prior.filter(|p| p.precision > 0.0);
    let n = train.len().max(1) as f64;
    let shrink = prior.map(|p| cfg.learning_rate * p.precision / n);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; n_params];
    let mut batch_grad = vec![0.0; n_params];
    let mut train_history = Vec::new();
    let mut val_history = Vec::new();
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    let mut since_best = 0;
    let mut diverged = false;

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            batch_grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                obj.loss_grad(&params, &train[i], &mut grad);
                for (b, g) in batch_grad.iter_mut().zip(&grad) {
                    *b += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            batch_grad.iter_mut().for_each(|g| *g *= scale);
            let norm = batch_grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.gradient_clip {
                let c = cfg.gradient_clip / norm;
                batch_grad.iter_mut().for_each(|g| *g *= c);
            }
            for (p, g) in params.iter_mut().zip(&batch_grad) {
                *p -= cfg.learning_rate * g;
            }
            if let (Some(prior), Some(k)) = (prior, shrink) {
                for (p, m) in params.iter_mut().zip(prior.mean) {
                    *p = (*p + k * m) / (1.0 + k);
                }
            }
        }

        let train_loss = objective_value(obj, &params, train, prior);
        if !train_loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            diverged = true;
            break;
        }
        train_history.push(train_loss);

        if val.is_empty() {
            continue;
        }
        let val_loss = mean_loss(obj, &params, val);
        val_history.push(val_loss);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, params.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let epochs_run = train_history.len();
    if diverged {
        let fallback = prior
            .map(|p| p.mean.to_vec())
            .unwrap_or_else(|| vec![0.0; n_params]);
        let final_train_loss = objective_value(obj, &fallback, train, prior);
        return FitOutcome {
            params: fallback,
            epochs_run,
            best_epoch: 0,
            train_history,
            val_history,
            final_train_loss,
            diverged: true,
        };
    }
    let best_epoch = match best {
        Some((_, p, e)) => {
            params = p;
            e
        }
        None => epochs_run.saturating_sub(1),
    };
    let final_train_loss = objective_value(obj, &params, train, prior);
    FitOutcome {
        params,
        epochs_run,
        best_epoch,
        train_history,
        val_history,
        final_train_loss,
        diverged: false,
    }
}

/// Windows of `rho` consecutive rates followed by the next rate, never
/// crossing a gap in the month stamps. Returns `(target index, window)`.
pub fn univariate_windows(rates: &[(Month, f64)], rho: usize) -> Vec<(usize, Window)> {
    let mut out = Vec::new();
    if rho == 0 {
        return out;
    }
    for run in crate::panel::contiguous_runs(rates) {
        for target in (run.start + rho)..run.end {
            out.push((
                target,
                Window {
                    inputs: rates[target - rho..target].iter().map(|&(_, v)| v).collect(),
                    target: rates[target].1,
                },
            ));
        }
    }
    out
}

/// Splits windows so that targets in the last `fraction` of `n_rates` validate.
pub fn holdout(windows: Vec<(usize, Window)>, n_rates: usize, fraction: f64) -> (Vec<Window>, Vec<Window>) {
    let n_val = (fraction * n_rates as f64).floor() as usize;
    let boundary = n_rates - n_val.min(n_rates);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (target, w) in windows {
        if target >= boundary {
            val.push(w);
        } else {
            train.push(w);
        }
    }
    (train, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::GruParams;

    fn month(i: i32) -> Month {
        Month::new(2000, 1).unwrap().offset(i)
    }

    #[test]
    fn windows_respect_gaps() {
        let mut rates: Vec<(Month, f64)> = (0..6).map(|i| (month(i), i as f64)).collect();
        rates.extend((10..13).map(|i| (month(i), i as f64)));
        let w = univariate_windows(&rates, 2);
        let targets: Vec<usize> = w.iter().map(|(t, _)| *t).collect();
        assert_eq!(targets, vec![2, 3, 4, 5, 8]);
        assert_eq!(w[0].1.inputs, vec![0.0, 1.0]);
        assert_eq!(w[4].1.inputs, vec![10.0, 11.0]);
        assert_eq!(w[4].1.target, 12.0);
    }

    #[test]
    fn holdout_uses_last_fraction_of_rates() {
        let rates: Vec<(Month, f64)> = (0..20).map(|i| (month(i), i as f64)).collect();
        let (tr, va) = holdout(univariate_windows(&rates, 4), 20, 0.1);
        assert_eq!(va.len(), 2);
        assert_eq!(tr.len(), 14);
        assert_eq!(va[0].target, 18.0);
    }

    #[test]
    fn scalar_and_single_channel_objectives_agree_bitwise() {
        let p = [0.3, -0.2, 0.5, 0.1, 0.4, -0.6, 0.05, 0.2, -0.1];
        let w = Window {
            inputs: vec![0.4, -0.3, 1.2, 0.05],
            target: 0.3,
        };
        let mut g1 = vec![0.0; 9];
        let mut g2 = vec![0.0; 9];
        let l1 = GruWindowObjective.loss_grad(&p, &w, &mut g1);
        let l2 = MultiGruWindowObjective { channels: 1 }.loss_grad(&p, &w, &mut g2);
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let s = crate::cells::gru_last(&GruParams::from_slice(&p), &w.inputs);
        assert!((l1 - 0.5 * (0.3 - s) * (0.3 - s)).abs() < 1e-15);
    }

    #[test]
    fn huge_prior_pins_parameters() {
        let rates: Vec<(Month, f64)> = (0..80).map(|i| (month(i), (i as f64 * 0.4).sin() * 0.5)).collect();
        let windows: Vec<Window> = univariate_windows(&rates, 4).into_iter().map(|(_, w)| w).collect();
        let mean = [0.2, -0.1, 0.3, 0.4, 0.0, -0.2, 0.1, 0.1, 0.0];
        let mut rng = stream_rng(1, 0);
        let init = uniform_init(&mut rng, 9, 0.1);
        let out = fit(
            &GruWindowObjective,
            init,
            &windows,
            &[],
            Some(Prior { mean: &mean, precision: 1e6 }),
            &SgdConfig { epochs: 20, ..SgdConfig::default() },
            &mut rng,
        );
        let d: f64 = out.params.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(d < 1e-2, "{d}");
    }

    #[test]
    fn training_reduces_objective_and_is_deterministic() {
        let rates: Vec<(Month, f64)> = (0..120).map(|i| (month(i), 0.6 * (i as f64 * 0.5).sin())).collect();
        let (tr, va) = holdout(univariate_windows(&rates, 4), 120, 0.1);
        let run = || {
            let mut rng = stream_rng(3, 7);
            let init = uniform_init(&mut rng, 9, 0.1);
            fit(&GruWindowObjective, init, &tr, &va, None, &SgdConfig::default(), &mut rng)
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.final_train_loss <= a.train_history[0]);
        let best_val = a.val_history.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(a.val_history[a.best_epoch], best_val);
    }
}
