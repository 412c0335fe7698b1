//! The hierarchical model: one scalar GRU per node, each node's parameters
//! drawn towards its parent's by a Gaussian prior whose precision grows with
//! the correlation between the two series.
//!
//! Training runs top-down. The root gets a zero-mean unit-precision prior;
//! every other node is fitted with its parent's already-trained parameters
//! as the prior mean and precision `exp(alpha + C_n)`, where `C_n` is the
//! training-period correlation with the parent. This is block-coordinate
//! ascent on the joint log posterior with parents frozen.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cells::{gru_step, GruParams};
use crate::error::{Error, Result};
use crate::modelfile;
use crate::panel::{NodeId, SplitView};
use crate::train::{self, GruWindowObjective, Prior, SgdConfig, Window};

pub const DEFAULT_ALPHA: f64 = 1.5;
pub const DEFAULT_RHO: usize = 4;
const INIT_SCALE: f64 = 0.1;
const MODEL_KIND: &str = "hrnn";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub gradient_clip: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    /// Input window length.
    pub rho: usize,
    /// Replaces every node's prior precision (root included) when set.
    /// `Some(0.0)` removes the hierarchy altogether.
    pub precision_override: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        Self {
            alpha: DEFAULT_ALPHA,
            learning_rate: sgd.learning_rate,
            epochs: sgd.epochs,
            validation_fraction: 0.1,
            gradient_clip: sgd.gradient_clip,
            batch_size: sgd.batch_size,
            patience: sgd.patience,
            seed: 0,
            rho: DEFAULT_RHO,
            precision_override: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Contract("learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Contract("epochs must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::Contract("validation fraction must lie in [0, 0.5)".into()));
        }
        if self.rho == 0 {
            return Err(Error::Contract("rho must be at least 1".into()));
        }
        if let Some(p) = self.precision_override {
            if !(p >= 0.0) {
                return Err(Error::Contract("precision override must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            gradient_clip: self.gradient_clip,
            patience: self.patience,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub alpha: f64,
    /// Prior precision on each node's parameters.
    pub precision: BTreeMap<NodeId, f64>,
    /// Precision of each node's Gaussian forecast errors (fixed at 1).
    pub likelihood_precision: BTreeMap<NodeId, f64>,
    /// Node whose parameters served as the prior mean; `None` for a zero mean.
    pub prior_source: BTreeMap<NodeId, Option<NodeId>>,
    /// Correlation used in the precision, per non-root node.
    pub correlation: BTreeMap<NodeId, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeFitInfo {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// `None` when the objective was not finite.
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub config: TrainConfig,
    pub nodes: BTreeMap<NodeId, NodeFitInfo>,
    /// Nodes left out for lack of training data.
    pub untrainable: BTreeSet<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrnnModel {
    pub rho: usize,
    pub theta: BTreeMap<NodeId, GruParams>,
    pub prior: PriorSpec,
    pub meta: TrainingMeta,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Log posterior of one node's parameters up to the evidence term.
///
/// Every observation is scored, the first against the zero initial state.
/// A zero `prior_precision` drops the prior term entirely.
pub fn node_log_posterior(
    theta: &GruParams,
    prior_mean: &GruParams,
    prior_precision: f64,
    likelihood_precision: f64,
    rates: &[f64],
) -> Result<f64> {
    if !(likelihood_precision > 0.0) {
        return Err(Error::Domain(format!(
            "likelihood precision must be positive, got {likelihood_precision}"
        )));
    }
    if prior_precision < 0.0 {
        return Err(Error::Domain("prior precision must be >= 0".into()));
    }
    if rates.len() < 2 {
        return Err(Error::Contract("need at least two rates".into()));
    }
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut s = 0.0;
    let mut log_lik = 0.0;
    for &x in rates {
        let e = x - s;
        log_lik += 0.5 * (likelihood_precision.ln() - ln_2pi) - 0.5 * likelihood_precision * e * e;
        s = gru_step(theta, x, s);
    }
    let log_prior = if prior_precision > 0.0 {
        let dim = 9.0;
        0.5 * dim * (prior_precision.ln() - ln_2pi)
            - 0.5 * prior_precision * theta.squared_distance(prior_mean)
    } else {
        0.0
    };
    Ok(log_lik + log_prior)
}

/// Training and validation windows for one node.
pub(crate) fn node_windows(view: &SplitView<'_>, node: NodeId, rho: usize, validation_fraction: f64) -> (Vec<Window>, Vec<Window>) {
    let rates = view.train(node);
    train::holdout(train::univariate_windows(rates, rho), rates.len(), validation_fraction)
}

/// Fits one node's GRU; shared by the hierarchical and independent trainers.
pub(crate) fn fit_node(
    view: &SplitView<'_>,
    node: NodeId,
    cfg: &TrainConfig,
    prior_mean: &GruParams,
    precision: f64,
) -> (GruParams, NodeFitInfo) {
    let (tr, va) = node_windows(view, node, cfg.rho, cfg.validation_fraction);
    let mut rng = train::stream_rng(cfg.seed, u64::from(node.0));
    let init = train::uniform_init(&mut rng, 9, INIT_SCALE);
    let mean = prior_mean.to_array();
    let prior = Prior {
        mean: &mean,
        precision,
    };
    let out = train::fit(&GruWindowObjective, init, &tr, &va, Some(prior), &cfg.sgd(), &mut rng);
    if out.diverged {
        log::warn!("node {node}: training diverged, reverting to prior mean");
    }
    let info = NodeFitInfo {
        epochs_run: out.epochs_run,
        best_epoch: out.best_epoch,
        first_loss: out.train_history.first().copied().and_then(finite),
        final_loss: finite(out.final_train_loss),
        diverged: out.diverged,
    };
    (GruParams::from_slice(&out.params), info)
}

#[cfg(feature = "parallel")]
pub(crate) fn map_nodes<T: Send>(nodes: &[NodeId], f: impl Fn(NodeId) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    nodes.par_iter().map(|&n| f(n)).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_nodes<T: Send>(nodes: &[NodeId], f: impl Fn(NodeId) -> T + Sync + Send) -> Vec<T> {
    nodes.iter().map(|&n| f(n)).collect()
}

/// MAP training of the whole hierarchy, one depth level at a time.
pub fn train_hrnn(view: &SplitView<'_>, cfg: &TrainConfig) -> Result<HrnnModel> {
    cfg.validate()?;
    let data = view.dataset();
    let trainable: BTreeSet<NodeId> = view.trainable_nodes().into_iter().collect();
    if trainable.is_empty() {
        return Err(Error::NothingTrainable(format!(
            "no node has at least {} training rates",
            crate::panel::MIN_TRAIN_RATES
        )));
    }
    let untrainable: BTreeSet<NodeId> = data.node_ids().filter(|n| !trainable.contains(n)).collect();

    let mut theta: BTreeMap<NodeId, GruParams> = BTreeMap::new();
    let mut prior = PriorSpec {
        alpha: cfg.alpha,
        precision: BTreeMap::new(),
        likelihood_precision: BTreeMap::new(),
        prior_source: BTreeMap::new(),
        correlation: BTreeMap::new(),
    };
    let mut nodes_meta = BTreeMap::new();

    for level in data.levels_top_down() {
        let level: Vec<NodeId> = level.into_iter().filter(|n| trainable.contains(n)).collect();
        // Prior for each node: its nearest trained ancestor, else zero mean / unit precision.
        let plans: Vec<(NodeId, Option<NodeId>, f64, Option<f64>)> = level
            .iter()
            .map(|&node| {
                let mut source = data.parent(node);
                while let Some(s) = source {
                    if theta.contains_key(&s) {
                        break;
                    }
                    source = data.parent(s);
                }
                let (precision, corr) = match source {
                    Some(src) => {
                        let c = view.training_correlation(node, src).map(|(c, _)| c).unwrap_or(0.0);
                        ((cfg.alpha + c).exp(), Some(c))
                    }
                    None => (1.0, None),
                };
                (node, source, cfg.precision_override.unwrap_or(precision), corr)
            })
            .collect();

        let fitted = map_nodes(&level, |node| {
            let (_, source, precision, _) = plans.iter().find(|p| p.0 == node).copied().unwrap();
            let mean = source.map(|s| theta[&s]).unwrap_or_default();
            fit_node(view, node, cfg, &mean, precision)
        });

        for ((node, source, precision, corr), (params, info)) in plans.into_iter().zip(fitted) {
            theta.insert(node, params);
            prior.precision.insert(node, precision);
            prior.likelihood_precision.insert(node, 1.0);
            prior.prior_source.insert(node, source);
            if let Some(c) = corr {
                prior.correlation.insert(node, c);
            }
            nodes_meta.insert(node, info);
        }
    }

    Ok(HrnnModel {
        rho: cfg.rho,
        theta,
        prior,
        meta: TrainingMeta {
            seed: cfg.seed,
            config: cfg.clone(),
            nodes: nodes_meta,
            untrainable,
        },
    })
}

/// Recursive forecasts for horizons `0..=horizon` from the end of `history`.
///
/// The last `rho` values are consumed from a zero state; each further
/// horizon feeds the previous prediction back in for one more step.
pub fn gru_forecast(params: &GruParams, rho: usize, history: &[f64], horizon: usize) -> Vec<f64> {
    let window = &history[history.len().saturating_sub(rho)..];
    let mut s = crate::cells::gru_last(params, window);
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(s);
    for _ in 0..horizon {
        s = gru_step(params, s, s);
        out.push(s);
    }
    out
}

impl HrnnModel {
    pub fn params(&self, node: NodeId) -> Result<&GruParams> {
        self.theta.get(&node).ok_or(Error::UnknownNode(node))
    }

    pub fn forecast(&self, node: NodeId, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
        forecast(self, node, history, horizon)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_model(path)
    }
}

pub fn forecast(model: &HrnnModel, node: NodeId, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
    if history.is_empty() {
        return Err(Error::Contract("forecast needs at least one historical rate".into()));
    }
    let params = model.params(node)?;
    Ok(gru_forecast(params, model.rho, history, horizon))
}

pub fn save_model(model: &HrnnModel, path: &Path) -> Result<()> {
    modelfile::save(path, MODEL_KIND, model)
}

pub fn load_model(path: &Path) -> Result<HrnnModel> {
    modelfile::load(path, MODEL_KIND)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{unroll, CellParams, CellState};
    use crate::panel::chrono_split;
    use crate::synth;

    #[test]
    fn log_posterior_examples() {
        let zero = GruParams::default();
        let ln_norm = (1.0 / (2.0 * std::f64::consts::PI).sqrt()).ln();
        let lp = node_log_posterior(&zero, &zero, 0.0, 1.0, &[0.0, 0.0]).unwrap();
        assert!((lp - 2.0 * ln_norm).abs() < 1e-14);

        let theta = GruParams::from_slice(&[0.1, 0.2, -0.3, 0.4, 0.0, 0.1, -0.1, 0.2, 0.3]);
        let rates = [0.3, -0.2, 0.5, 0.1];
        let lik_only = node_log_posterior(&theta, &zero, 0.0, 1.0, &rates).unwrap();
        let at_mean = node_log_posterior(&theta, &theta, 2.0, 1.0, &rates).unwrap();
        let constant = 4.5 * (2.0f64.ln() - (2.0 * std::f64::consts::PI).ln());
        assert!((at_mean - lik_only - constant).abs() < 1e-12);

        assert!(matches!(
            node_log_posterior(&theta, &zero, 1.0, 0.0, &rates),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn forecast_examples() {
        let zero = GruParams::default();
        assert_eq!(gru_forecast(&zero, 4, &[0.5, -0.3, 0.8], 3), vec![0.0; 4]);

        let p = GruParams::from_slice(&[0.7, -0.4, 1.1, 0.3, 0.5, -0.6, 0.2, -0.1, 0.15]);
        let hist = [0.2, -0.5, 0.9, 0.4, 0.1, -0.2];
        let h0 = gru_forecast(&p, 4, &hist, 0);
        let cell = CellParams::Gru(p);
        let window = &hist[2..];
        assert_eq!(h0, vec![*unroll(&cell, window, CellState::default()).last().unwrap()]);

        let h2 = gru_forecast(&p, 4, &hist, 2);
        let mut seq = window.to_vec();
        seq.push(h2[0]);
        seq.push(h2[1]);
        let manual = unroll(&cell, &seq, CellState::default());
        assert_eq!(h2[1], manual[4]);
        assert_eq!(h2[2], manual[5]);
    }

    #[test]
    fn single_root_training_is_ridge_gru() {
        let data = synth::ar1_panel(1, 160, 0.6, 0.3, 1);
        let view = chrono_split(&data, 0.7).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            seed: 4,
            ..TrainConfig::default()
        };
        let model = train_hrnn(&view, &cfg).unwrap();
        let root = data.root();
        assert_eq!(model.prior.precision[&root], 1.0);
        assert_eq!(model.prior.prior_source[&root], None);
        let (direct, _) = fit_node(&view, root, &cfg, &GruParams::default(), 1.0);
        assert_eq!(model.theta[&root], direct);
    }

    #[test]
    fn untrainable_nodes_are_reported() {
        let data = synth::three_level_tree(&synth::TreeSpec {
            leaf_train_rates: 20,
            ..synth::TreeSpec::small(3)
        });
        let view = chrono_split(&data, 0.7).unwrap();
        let model = train_hrnn(&view, &TrainConfig { epochs: 5, ..TrainConfig::default() }).unwrap();
        assert!(!model.meta.untrainable.is_empty());
        for n in &model.meta.untrainable {
            assert!(!model.theta.contains_key(n));
            assert!(model.forecast(*n, &[0.1], 0).is_err());
        }
    }

    #[test]
    fn model_file_roundtrip_and_corruption() {
        let data = synth::three_level_tree(&synth::TreeSpec::small(5));
        let view = chrono_split(&data, 0.7).unwrap();
        let model = train_hrnn(&view, &TrainConfig { epochs: 5, seed: 2, ..TrainConfig::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        model.save(&path).unwrap();
        assert_eq!(HrnnModel::load(&path).unwrap(), model);

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(HrnnModel::load(&path), Err(Error::ModelFile(_))));
        std::fs::write(&path, text.replacen(" 1 hrnn", " 9 hrnn", 1)).unwrap();
        assert!(matches!(HrnnModel::load(&path), Err(Error::ModelFile(_))));
    }

    #[test]
    fn empty_trainable_set_is_error() {
        let data = synth::ar1_panel(1, 20, 0.5, 0.3, 1);
        let view = chrono_split(&data, 0.7).unwrap();
        assert!(matches!(
            train_hrnn(&view, &TrainConfig::default()),
            Err(Error::NothingTrainable(_))
        ));
    }
}
