//! Non-hierarchical GRU ablations: one shared GRU, independent per-node
//! GRUs, and per-node GRUs that also read their nearest neighbours.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cells::multi::{self, multi_gru_step, MultiGruParams};
use crate::cells::GruParams;
use crate::error::{Error, Result};
use crate::hrnn::{map_nodes, node_windows, NodeFitInfo, TrainConfig};
use crate::panel::{knn_neighbors, HierarchyDataset, Month, NodeId, SplitView};
use crate::train::{self, GruWindowObjective, MultiGruWindowObjective, Window};

const INIT_SCALE: f64 = 0.1;

fn info(out: &train::FitOutcome) -> NodeFitInfo {
    NodeFitInfo {
        epochs_run: out.epochs_run,
        best_epoch: out.best_epoch,
        first_loss: out.train_history.first().copied().filter(|v| v.is_finite()),
        final_loss: Some(out.final_train_loss).filter(|v| v.is_finite()),
        diverged: out.diverged,
    }
}

fn require_trainable(view: &SplitView<'_>) -> Result<Vec<NodeId>> {
    let nodes = view.trainable_nodes();
    if nodes.is_empty() {
        return Err(Error::NothingTrainable(format!(
            "no node has at least {} training rates",
            crate::panel::MIN_TRAIN_RATES
        )));
    }
    Ok(nodes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependentGru {
    pub theta: BTreeMap<NodeId, GruParams>,
    pub fits: BTreeMap<NodeId, NodeFitInfo>,
}

/// One unregularised GRU per trainable node.
pub fn fit_i_gru(view: &SplitView<'_>, cfg: &TrainConfig) -> Result<IndependentGru> {
    cfg.validate()?;
    let nodes = require_trainable(view)?;
    let fitted = map_nodes(&nodes, |node| {
        let (tr, va) = node_windows(view, node, cfg.rho, cfg.validation_fraction);
        let mut rng = train::stream_rng(cfg.seed, u64::from(node.0));
        let init = train::uniform_init(&mut rng, 9, INIT_SCALE);
        train::fit(&GruWindowObjective, init, &tr, &va, None, &cfg.sgd(), &mut rng)
    });
    let mut out = IndependentGru {
        theta: BTreeMap::new(),
        fits: BTreeMap::new(),
    };
    for (node, fit) in nodes.into_iter().zip(fitted) {
        out.theta.insert(node, GruParams::from_slice(&fit.params));
        out.fits.insert(node, info(&fit));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedGru {
    pub params: GruParams,
    pub fit: NodeFitInfo,
}

/// Training and validation windows of every trainable node, pooled.
pub fn pooled_windows(view: &SplitView<'_>, cfg: &TrainConfig) -> (Vec<Window>, Vec<Window>) {
    let mut tr = Vec::new();
    let mut va = Vec::new();
    for node in view.trainable_nodes() {
        let (t, v) = node_windows(view, node, cfg.rho, cfg.validation_fraction);
        tr.extend(t);
        va.extend(v);
    }
    (tr, va)
}

/// A single GRU fitted to the pooled windows; its generator stream is that
/// of the first trainable node.
pub fn fit_s_gru(view: &SplitView<'_>, cfg: &TrainConfig) -> Result<SharedGru> {
    cfg.validate()?;
    let nodes = require_trainable(view)?;
    let (tr, va) = pooled_windows(view, cfg);
    let mut rng = train::stream_rng(cfg.seed, u64::from(nodes[0].0));
    let init = train::uniform_init(&mut rng, 9, INIT_SCALE);
    let out = train::fit(&GruWindowObjective, init, &tr, &va, None, &cfg.sgd(), &mut rng);
    Ok(SharedGru {
        params: GruParams::from_slice(&out.params),
        fit: info(&out),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnNode {
    pub neighbors: Vec<NodeId>,
    pub params: MultiGruParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnGru {
    pub k: usize,
    pub nodes: BTreeMap<NodeId, KnnNode>,
    pub fits: BTreeMap<NodeId, NodeFitInfo>,
}

/// Rows `[own, neighbour_1, ..]` on the node's training months where every
/// neighbour also has a training rate.
fn knn_rows(view: &SplitView<'_>, node: NodeId, neighbors: &[NodeId]) -> Vec<(Month, Vec<f64>)> {
    let lookups: Vec<BTreeMap<Month, f64>> = neighbors.iter().map(|&n| view.train(n).iter().copied().collect()).collect();
    view.train(node)
        .iter()
        .filter_map(|&(m, v)| {
            let mut row = vec![v];
            for l in &lookups {
                row.push(*l.get(&m)?);
            }
            Some((m, row))
        })
        .collect()
}

/// Windows of `rho` rows predicting the next own value, never crossing a gap.
fn row_windows(rows: &[(Month, Vec<f64>)], rho: usize) -> Vec<(usize, Window)> {
    let mut out = Vec::new();
    let mut run_start = 0;
    for t in 0..rows.len() {
        if t > 0 && rows[t].0.since(rows[t - 1].0) != 1 {
            run_start = t;
        }
        if t >= run_start + rho {
            out.push((
                t,
                Window {
                    inputs: rows[t - rho..t].iter().flat_map(|(_, r)| r.iter().copied()).collect(),
                    target: rows[t].1[0],
                },
            ));
        }
    }
    out
}

/// Per-node GRU whose input at each step is the node's own rate followed
/// by its `k` most correlated nodes' rates.
pub fn fit_knn_gru(view: &SplitView<'_>, cfg: &TrainConfig, k: usize) -> Result<KnnGru> {
    cfg.validate()?;
    let nodes = require_trainable(view)?;
    let fitted = map_nodes(&nodes, |node| -> Result<(Vec<NodeId>, train::FitOutcome)> {
        let neighbors = knn_neighbors(view, node, k)?.ids;
        let rows = knn_rows(view, node, &neighbors);
        let (tr, va) = train::holdout(row_windows(&rows, cfg.rho), rows.len(), cfg.validation_fraction);
        let channels = neighbors.len() + 1;
        let mut rng = train::stream_rng(cfg.seed, u64::from(node.0));
        let init = train::uniform_init(&mut rng, multi::n_params(channels), INIT_SCALE);
        let out = train::fit(&MultiGruWindowObjective { channels }, init, &tr, &va, None, &cfg.sgd(), &mut rng);
        Ok((neighbors, out))
    });
    let mut model = KnnGru {
        k,
        nodes: BTreeMap::new(),
        fits: BTreeMap::new(),
    };
    for (node, fitted) in nodes.into_iter().zip(fitted) {
        let (neighbors, out) = fitted?;
        let channels = neighbors.len() + 1;
        model.fits.insert(node, info(&out));
        model.nodes.insert(
            node,
            KnnNode {
                neighbors,
                params: MultiGruParams::from_slice(channels, &out.params),
            },
        );
    }
    Ok(model)
}

/// Neighbours are held at their value for the last history month while the
/// node's own prediction is fed back.
pub fn knn_forecast(
    fit: &KnnNode,
    rho: usize,
    data: &HierarchyDataset,
    history: &[(Month, f64)],
    max_h: usize,
) -> Result<Option<Vec<f64>>> {
    if history.len() < rho || rho == 0 {
        return Ok(None);
    }
    let window = &history[history.len() - rho..];
    let mut rows = Vec::with_capacity(rho);
    for &(m, v) in window {
        let mut row = vec![v];
        for &n in &fit.neighbors {
            let r = data.rates(n)?;
            match r.position(m) {
                Some(i) => row.push(r.rates[i].1),
                None => return Ok(None),
            }
        }
        rows.push(row);
    }
    let mut s = rows.iter().fold(0.0, |s, x| multi_gru_step(&fit.params, x, s));
    let mut frozen = rows.last().cloned().unwrap_or_default();
    let mut out = Vec::with_capacity(max_h + 1);
    out.push(s);
    for _ in 0..max_h {
        frozen[0] = s;
        s = multi_gru_step(&fit.params, &frozen, s);
        out.push(s);
    }
    Ok(Some(out))
}
