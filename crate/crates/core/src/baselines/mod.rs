//! Reference forecasters behind one fit/forecast contract.

pub mod fc;
pub mod gru;
pub mod linear;
pub mod ols;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use linear::{parse_exog, ExogSeries};

use crate::error::{Error, Result};
use crate::hrnn::{self, gru_forecast, HrnnModel, NodeFitInfo, TrainConfig};
use crate::modelfile;
use crate::panel::{HierarchyDataset, Month, NodeId, SplitView};
use crate::train;
use fc::{FcNet, FcObjective};
use linear::{LinearFit, LstarFit, VarFit};

const RECORD_KIND: &str = "forecaster";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ar,
    Phillips,
    Var,
    Rw,
    ArGap,
    Lstar,
    Fc,
    SGru,
    IGru,
    KnnGru,
    Hrnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 11] = [
        ModelKind::Ar,
        ModelKind::Phillips,
        ModelKind::Var,
        ModelKind::Rw,
        ModelKind::ArGap,
        ModelKind::Lstar,
        ModelKind::Fc,
        ModelKind::SGru,
        ModelKind::IGru,
        ModelKind::KnnGru,
        ModelKind::Hrnn,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Ar => "ar",
            ModelKind::Phillips => "phillips",
            ModelKind::Var => "var",
            ModelKind::Rw => "rw",
            ModelKind::ArGap => "ar-gap",
            ModelKind::Lstar => "lstar",
            ModelKind::Fc => "fc",
            ModelKind::SGru => "s-gru",
            ModelKind::IGru => "i-gru",
            ModelKind::KnnGru => "knn-gru",
            ModelKind::Hrnn => "hrnn",
        }
    }

    fn is_gru(self) -> bool {
        matches!(self, ModelKind::SGru | ModelKind::IGru | ModelKind::KnnGru | ModelKind::Hrnn)
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| format!("unknown model kind `{s}`"))
    }
}

/// One model to fit, as written in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default = "default_rho")]
    pub rho: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_series: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Replaces every prior precision of a hierarchical model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision_override: Option<f64>,
}

fn default_rho() -> usize {
    hrnn::DEFAULT_RHO
}

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_LSTAR_C: f64 = 2.0;
pub const DEFAULT_LSTAR_GAMMA: f64 = 0.3;
pub const DEFAULT_VAR_SERIES: usize = 8;

impl ModelSpec {
    pub fn new(kind: ModelKind, rho: usize) -> Self {
        Self {
            kind,
            rho,
            alpha: None,
            k: None,
            c: None,
            gamma: None,
            width: None,
            max_series: None,
            learning_rate: None,
            epochs: None,
            seed: None,
            precision_override: None,
        }
    }

    /// Rejects hyper-parameters that do not apply to the kind.
    pub fn validate(&self) -> Result<()> {
        if self.rho == 0 {
            return Err(Error::Contract(format!("{}: rho must be at least 1", self.kind.tag())));
        }
        let allowed: &[&str] = match self.kind {
            ModelKind::Ar | ModelKind::Phillips | ModelKind::Rw | ModelKind::ArGap => &[],
            ModelKind::Var => &["max_series"],
            ModelKind::Lstar => &["c", "gamma"],
            ModelKind::Fc => &["width", "learning_rate", "epochs", "seed"],
            ModelKind::SGru | ModelKind::IGru => &["learning_rate", "epochs", "seed"],
            ModelKind::KnnGru => &["k", "learning_rate", "epochs", "seed"],
            ModelKind::Hrnn => &["alpha", "learning_rate", "epochs", "seed", "precision_override"],
        };
        let present = [
            ("alpha", self.alpha.is_some()),
            ("k", self.k.is_some()),
            ("c", self.c.is_some()),
            ("gamma", self.gamma.is_some()),
            ("width", self.width.is_some()),
            ("max_series", self.max_series.is_some()),
            ("learning_rate", self.learning_rate.is_some()),
            ("epochs", self.epochs.is_some()),
            ("seed", self.seed.is_some()),
            ("precision_override", self.precision_override.is_some()),
        ];
        for (key, set) in present {
            if set && !allowed.contains(&key) {
                return Err(Error::Contract(format!(
                    "`{key}` does not apply to model kind `{}`",
                    self.kind.tag()
                )));
            }
        }
        if self.width == Some(0) {
            return Err(Error::Contract("fc width must be at least 1".into()));
        }
        Ok(())
    }

    /// Display name, e.g. `HRNN(4)` or `LSTAR(4,2,0.3)`.
    pub fn name(&self) -> String {
        let r = self.rho;
        match self.kind {
            ModelKind::Ar => format!("AR({r})"),
            ModelKind::Phillips => format!("Phillips({r})"),
            ModelKind::Var => format!("VAR({r})"),
            ModelKind::Rw => format!("RW({r})"),
            ModelKind::ArGap => format!("AR-GAP({r})"),
            ModelKind::Lstar => format!(
                "LSTAR({r},{},{})",
                self.c.unwrap_or(DEFAULT_LSTAR_C),
                self.gamma.unwrap_or(DEFAULT_LSTAR_GAMMA)
            ),
            ModelKind::Fc => format!("FC({r})"),
            ModelKind::SGru => format!("S-GRU({r})"),
            ModelKind::IGru => format!("I-GRU({r})"),
            ModelKind::KnnGru => format!("KNN-GRU({r},k={})", self.k.unwrap_or(DEFAULT_K)),
            ModelKind::Hrnn => match self.precision_override {
                Some(p) => format!("HRNN({r},tau={p})"),
                None => match self.alpha {
                    Some(a) if a != hrnn::DEFAULT_ALPHA => format!("HRNN({r},alpha={a})"),
                    _ => format!("HRNN({r})"),
                },
            },
        }
    }

    /// Training settings for gradient-fitted kinds, starting from `base`.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha.unwrap_or(base.alpha),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            epochs: self.epochs.unwrap_or(base.epochs),
            seed: self.seed.unwrap_or(base.seed),
            rho: self.rho,
            precision_override: self.precision_override.or(base.precision_override),
            ..base.clone()
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FittedModel {
    Ar { nodes: BTreeMap<NodeId, LinearFit> },
    Phillips { nodes: BTreeMap<NodeId, LinearFit> },
    Var { nodes: BTreeMap<NodeId, VarFit> },
    Rw,
    ArGap { nodes: BTreeMap<NodeId, LinearFit> },
    Lstar { nodes: BTreeMap<NodeId, LstarFit> },
    Fc { nodes: BTreeMap<NodeId, FcNet>, fits: BTreeMap<NodeId, NodeFitInfo> },
    SGru(gru::SharedGru),
    IGru(gru::IndependentGru),
    KnnGru(gru::KnnGru),
    Hrnn(HrnnModel),
}

/// A fitted model with the specification that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub name: String,
    pub spec: ModelSpec,
    /// Nodes the model could not be fitted on, with the reason.
    pub skipped: BTreeMap<NodeId, String>,
    pub model: FittedModel,
}

impl ModelRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        modelfile::save(path, RECORD_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        modelfile::load(path, RECORD_KIND)
    }

    /// Per-node optimiser summaries; `None` marks a fit shared by all nodes.
    /// Empty for closed-form kinds.
    pub fn fit_info(&self) -> Vec<(Option<NodeId>, &NodeFitInfo)> {
        fn per_node(fits: &BTreeMap<NodeId, NodeFitInfo>) -> Vec<(Option<NodeId>, &NodeFitInfo)> {
            fits.iter().map(|(n, f)| (Some(*n), f)).collect()
        }
        match &self.model {
            FittedModel::Fc { fits, .. } => per_node(fits),
            FittedModel::SGru(m) => vec![(None, &m.fit)],
            FittedModel::IGru(m) => per_node(&m.fits),
            FittedModel::KnnGru(m) => per_node(&m.fits),
            FittedModel::Hrnn(m) => per_node(&m.meta.nodes),
            _ => Vec::new(),
        }
    }

    /// Whether the record has parameters for `node`.
    pub fn covers(&self, node: NodeId) -> bool {
        match &self.model {
            FittedModel::Ar { nodes } | FittedModel::Phillips { nodes } | FittedModel::ArGap { nodes } => {
                nodes.contains_key(&node)
            }
            FittedModel::Var { nodes } => nodes.contains_key(&node),
            FittedModel::Lstar { nodes } => nodes.contains_key(&node),
            FittedModel::Fc { nodes, .. } => nodes.contains_key(&node),
            FittedModel::Rw | FittedModel::SGru(_) => true,
            FittedModel::IGru(m) => m.theta.contains_key(&node),
            FittedModel::KnnGru(m) => m.nodes.contains_key(&node),
            FittedModel::Hrnn(m) => m.theta.contains_key(&node),
        }
    }

    /// Forecasts for horizons `0..=max_h` after `history`, the node's
    /// contiguous rates up to the forecast origin. `Ok(None)` when the
    /// history (or a partner series) is too short.
    pub fn forecast(
        &self,
        data: &HierarchyDataset,
        exog: Option<&ExogSeries>,
        node: NodeId,
        history: &[(Month, f64)],
        max_h: usize,
    ) -> Result<Option<Vec<f64>>> {
        let rho = self.spec.rho;
        let values = || history.iter().map(|&(_, v)| v).collect::<Vec<f64>>();
        let missing = || Error::UnknownNode(node);
        Ok(match &self.model {
            FittedModel::Ar { nodes } => linear::ar_forecast(nodes.get(&node).ok_or_else(missing)?, rho, &values(), max_h),
            FittedModel::Phillips { nodes } => {
                let fit = nodes.get(&node).ok_or_else(missing)?;
                let exog = exog.ok_or_else(|| Error::Data("Phillips model needs exogenous unemployment data".into()))?;
                linear::phillips_forecast(fit, rho, history, exog, max_h)?
            }
            FittedModel::Var { nodes } => {
                let fit = nodes.get(&node).ok_or_else(missing)?;
                match history.last() {
                    Some(&(last, _)) if history.len() >= rho => linear::var_forecast(fit, rho, data, last, max_h)?,
                    _ => None,
                }
            }
            FittedModel::Rw => linear::rw_forecast(rho, &values(), max_h),
            FittedModel::ArGap { nodes } => linear::ar_gap_forecast(nodes.get(&node).ok_or_else(missing)?, rho, &values(), max_h),
            FittedModel::Lstar { nodes } => linear::lstar_forecast(nodes.get(&node).ok_or_else(missing)?, rho, history, max_h),
            FittedModel::Fc { nodes, .. } => {
                let net = nodes.get(&node).ok_or_else(missing)?;
                linear::recurse(&values(), rho, max_h, |buf, _| net.predict(&buf[buf.len() - rho..]))
            }
            FittedModel::SGru(m) => gru_history(history, rho).map(|h| gru_forecast(&m.params, rho, &h, max_h)),
            FittedModel::IGru(m) => {
                let p = m.theta.get(&node).ok_or_else(missing)?;
                gru_history(history, rho).map(|h| gru_forecast(p, rho, &h, max_h))
            }
            FittedModel::KnnGru(m) => gru::knn_forecast(m.nodes.get(&node).ok_or_else(missing)?, rho, data, history, max_h)?,
            FittedModel::Hrnn(m) => {
                let p = m.params(node)?;
                gru_history(history, rho).map(|h| gru_forecast(p, rho, &h, max_h))
            }
        })
    }
}

/// GRU forecasts read exactly the last `rho` rates.
fn gru_history(history: &[(Month, f64)], rho: usize) -> Option<Vec<f64>> {
    (history.len() >= rho).then(|| history[history.len() - rho..].iter().map(|&(_, v)| v).collect())
}

fn per_node<T>(
    view: &SplitView<'_>,
    skipped: &mut BTreeMap<NodeId, String>,
    fit: impl Fn(NodeId) -> Result<T>,
) -> Result<BTreeMap<NodeId, T>> {
    let mut out = BTreeMap::new();
    for node in view.trainable_nodes() {
        match fit(node) {
            Ok(v) => {
                out.insert(node, v);
            }
            Err(e @ (Error::Data(_) | Error::Contract(_))) => {
                log::info!("node {node}: skipped ({e})");
                skipped.insert(node, e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub const FC_MIN_WINDOWS: usize = 50;

/// Fits one model on the training view. `base` supplies training settings
/// the spec leaves unset.
pub fn fit_model(spec: &ModelSpec, view: &SplitView<'_>, exog: Option<&ExogSeries>, base: &TrainConfig) -> Result<ModelRecord> {
    spec.validate()?;
    let rho = spec.rho;
    let cfg = spec.train_config(base);
    if spec.kind.is_gru() || spec.kind == ModelKind::Fc {
        cfg.validate()?;
    }
    let mut skipped = BTreeMap::new();
    let model = match spec.kind {
        ModelKind::Ar => FittedModel::Ar {
            nodes: per_node(view, &mut skipped, |n| linear::fit_ar(view.train(n), rho))?,
        },
        ModelKind::Phillips => {
            let exog = exog.ok_or_else(|| Error::Data("Phillips model needs exogenous unemployment data (--exog)".into()))?;
            let mut nodes = BTreeMap::new();
            for node in view.trainable_nodes() {
                nodes.insert(node, linear::fit_phillips(view.train(node), exog, rho)?);
            }
            FittedModel::Phillips { nodes }
        }
        ModelKind::Var => {
            let k = spec.max_series.unwrap_or(DEFAULT_VAR_SERIES);
            FittedModel::Var {
                nodes: per_node(view, &mut skipped, |n| linear::fit_var(view, n, rho, k))?,
            }
        }
        ModelKind::Rw => FittedModel::Rw,
        ModelKind::ArGap => FittedModel::ArGap {
            nodes: per_node(view, &mut skipped, |n| linear::fit_ar_gap(view.train(n), rho))?,
        },
        ModelKind::Lstar => {
            let c = spec.c.unwrap_or(DEFAULT_LSTAR_C);
            let gamma = spec.gamma.unwrap_or(DEFAULT_LSTAR_GAMMA);
            FittedModel::Lstar {
                nodes: per_node(view, &mut skipped, |n| linear::fit_lstar(view.train(n), rho, c, gamma))?,
            }
        }
        ModelKind::Fc => {
            let width = spec.width.unwrap_or(fc::DEFAULT_WIDTH);
            let obj = FcObjective { rho, width };
            let mut nodes = BTreeMap::new();
            let mut fits = BTreeMap::new();
            for node in view.trainable_nodes() {
                let (tr, va) = hrnn::node_windows(view, node, rho, cfg.validation_fraction);
                if tr.len() + va.len() < FC_MIN_WINDOWS {
                    skipped.insert(node, format!("FC needs {FC_MIN_WINDOWS} windows, node has {}", tr.len() + va.len()));
                    continue;
                }
                let mut rng = train::stream_rng(cfg.seed, u64::from(node.0));
                let init = train::uniform_init(&mut rng, fc::n_params(rho, width), 0.1);
                let out = train::fit(&obj, init, &tr, &va, None, &cfg.sgd(), &mut rng);
                if out.diverged {
                    log::warn!("node {node}: FC training diverged, using the zero predictor");
                }
                fits.insert(
                    node,
                    NodeFitInfo {
                        epochs_run: out.epochs_run,
                        best_epoch: out.best_epoch,
                        first_loss: out.train_history.first().copied(),
                        final_loss: Some(out.final_train_loss).filter(|v| v.is_finite()),
                        diverged: out.diverged,
                    },
                );
                nodes.insert(node, FcNet { rho, width, params: out.params });
            }
            FittedModel::Fc { nodes, fits }
        }
        ModelKind::SGru => FittedModel::SGru(gru::fit_s_gru(view, &cfg)?),
        ModelKind::IGru => FittedModel::IGru(gru::fit_i_gru(view, &cfg)?),
        ModelKind::KnnGru => FittedModel::KnnGru(gru::fit_knn_gru(view, &cfg, spec.k.unwrap_or(DEFAULT_K))?),
        ModelKind::Hrnn => FittedModel::Hrnn(hrnn::train_hrnn(view, &cfg)?),
    };
    for n in view.dataset().node_ids().filter(|&n| !view.is_trainable(n)) {
        skipped.entry(n).or_insert_with(|| "fewer than the minimum training rates".into());
    }
    Ok(ModelRecord {
        name: spec.name(),
        spec: spec.clone(),
        skipped,
        model,
    })
}
