//! Browser demo: small experiments on top of the `hrnn` crate, exported
//! through wasm-bindgen. Results cross the boundary as JSON strings.

use hrnn::baselines::{fit_model, FittedModel, ModelKind, ModelSpec};
use hrnn::cells::{gru_step, GruParams};
use hrnn::eval::horizon::horizon_eval;
use hrnn::eval::metrics::{distance_correlation, pearson};
use hrnn::eval::report::{aggregate, Grouping, REFERENCE_MODEL};
use hrnn::hrnn::TrainConfig;
use hrnn::panel::{chrono_split, HierarchyDataset, NodeId};
use hrnn::synth::{three_level_tree, TreeSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize, PartialEq)]
pub struct LevelScore {
    pub group: String,
    pub hrnn: Option<f64>,
    pub igru: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub alpha: f64,
    pub levels: Vec<LevelScore>,
    /// Mean squared parameter distance between each child and its parent.
    pub hrnn_parent_distance: f64,
    pub igru_parent_distance: f64,
}

fn parent_distance(data: &HierarchyDataset, theta: &BTreeMap<NodeId, GruParams>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for (&node, p) in theta {
        if let Some(q) = data.parent(node).and_then(|par| theta.get(&par)) {
            sum += p.squared_distance(q);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Trains HRNN at `alpha` and an independent GRU on a synthetic three-level
/// tree whose leaves keep `leaf_train_rates` training rates.
pub fn compare(seed: u64, alpha: f64, leaf_train_rates: usize, epochs: usize) -> hrnn::Result<Comparison> {
    let spec = TreeSpec {
        leaf_train_rates,
        ..TreeSpec::small(seed)
    };
    let data = three_level_tree(&spec);
    let view = chrono_split(&data, spec.train_fraction)?;
    let base = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let mut hrnn_spec = ModelSpec::new(ModelKind::Hrnn, 4);
    hrnn_spec.alpha = Some(alpha);
    let specs = [ModelSpec::new(ModelKind::Ar, 1), hrnn_spec, ModelSpec::new(ModelKind::IGru, 4)];
    let records = specs
        .iter()
        .map(|s| fit_model(s, &view, None, &base))
        .collect::<hrnn::Result<Vec<_>>>()?;
    let set = horizon_eval(&records, &view, None, &[0])?;
    let (hrnn_name, igru_name) = (records[1].name.clone(), records[2].name.clone());

    let mut report = aggregate(&set, &data, Grouping::All);
    report.merge(aggregate(&set, &data, Grouping::Level));
    let mut groups: Vec<String> = report
        .rows
        .iter()
        .filter(|r| r.model == REFERENCE_MODEL)
        .map(|r| r.group.clone())
        .collect();
    groups.dedup();
    let levels = groups
        .into_iter()
        .map(|g| LevelScore {
            hrnn: report.relative(&hrnn_name, &g, 0),
            igru: report.relative(&igru_name, &g, 0),
            group: g,
        })
        .collect();

    let mut dist = [0.0; 2];
    for (i, rec) in records[1..].iter().enumerate() {
        dist[i] = match &rec.model {
            FittedModel::Hrnn(m) => parent_distance(&data, &m.theta),
            FittedModel::IGru(m) => parent_distance(&data, &m.theta),
            _ => 0.0,
        };
    }
    Ok(Comparison {
        alpha,
        levels,
        hrnn_parent_distance: dist[0],
        igru_parent_distance: dist[1],
    })
}

#[derive(Debug, Serialize)]
pub struct Dependence {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub pearson: Option<f64>,
    pub dcor: f64,
}

/// `n` points with `x` uniform on [-1, 1] and `y = f(x) + noise`.
pub fn dependence(shape: &str, noise: f64, n: usize, seed: u64) -> hrnn::Result<Dependence> {
    let f: fn(f64) -> f64 = match shape {
        "linear" => |x| x,
        "parabola" => |x| x * x,
        "circle" => |x| (1.0 - x * x).max(0.0).sqrt(),
        "sine" => |x| (3.0 * std::f64::consts::PI * x).sin(),
        "independent" => |_| 0.0,
        other => return Err(hrnn::Error::Data(format!("unknown shape {other}"))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let xi: f64 = rng.random_range(-1.0..1.0);
        // The circle takes both halves.
        let sign = if shape == "circle" && i % 2 == 1 { -1.0 } else { 1.0 };
        let e: f64 = rng.random_range(-1.0..1.0);
        x.push(xi);
        y.push(sign * f(xi) + noise * e);
    }
    Ok(Dependence {
        pearson: pearson(&x, &y),
        dcor: distance_correlation(&x, &y)?,
        x,
        y,
    })
}

/// Hidden output after each input, starting from a zero state.
pub fn gru_response(params: &[f64], inputs: &[f64]) -> hrnn::Result<Vec<f64>> {
    if params.len() != 9 {
        return Err(hrnn::Error::Data(format!("a GRU has 9 parameters, got {}", params.len())));
    }
    let p = GruParams::from_slice(params);
    let mut s = 0.0;
    Ok(inputs
        .iter()
        .map(|&x| {
            s = gru_step(&p, x, s);
            s
        })
        .collect())
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = compareModels)]
pub fn compare_js(seed: u32, alpha: f64, leaf_train_rates: usize, epochs: usize) -> Result<String, JsError> {
    let c = compare(seed as u64, alpha, leaf_train_rates, epochs).map_err(js_err)?;
    serde_json::to_string(&c).map_err(js_err)
}

#[wasm_bindgen(js_name = dependence)]
pub fn dependence_js(shape: &str, noise: f64, n: usize, seed: u32) -> Result<String, JsError> {
    let d = dependence(shape, noise, n, seed as u64).map_err(js_err)?;
    serde_json::to_string(&d).map_err(js_err)
}

#[wasm_bindgen(js_name = gruResponse)]
pub fn gru_response_js(params: &[f64], inputs: &[f64]) -> Result<Vec<f64>, JsError> {
    gru_response(params, inputs).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gru_response_matches_hand_computation() {
        // u_z u_r u_v w_z w_r w_v b_z b_r b_v
        let p = [0.5, -0.3, 0.8, 0.2, 0.4, -0.6, 0.1, 0.0, -0.2];
        let out = gru_response(&p, &[1.0, -0.5]).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut s = 0.0;
        for (x, got) in [1.0, -0.5].iter().zip(&out) {
            let z = sig(p[0] * x + p[3] * s + p[6]);
            let r = sig(p[1] * x + p[4] * s + p[7]);
            let v = (p[2] * x + p[5] * (r * s) + p[8]).tanh();
            s = z * v + (1.0 - z) * s;
            assert!((got - s).abs() < 1e-12);
        }
        assert!(gru_response(&p[..8], &[1.0]).is_err());
    }

    #[test]
    fn dependence_separates_linear_and_nonlinear_shapes() {
        let lin = dependence("linear", 0.0, 200, 1).unwrap();
        assert!((lin.pearson.unwrap() - 1.0).abs() < 1e-12);
        assert!((lin.dcor - 1.0).abs() < 1e-9);
        let par = dependence("parabola", 0.0, 300, 1).unwrap();
        assert!(par.pearson.unwrap().abs() < 0.2);
        assert!(par.dcor > 0.4);
        assert!(dependence("spiral", 0.0, 10, 1).is_err());
    }

    #[test]
    fn compare_reports_every_level() {
        let c = compare(3, 5.0, 30, 20).unwrap();
        let groups: Vec<&str> = c.levels.iter().map(|l| l.group.as_str()).collect();
        assert_eq!(groups, ["all", "0", "1", "2"]);
        assert!(c.levels.iter().all(|l| l.hrnn.is_some() && l.igru.is_some()));
        // A tight prior pulls children onto their parents.
        let loose = compare(3, -10.0, 30, 20).unwrap();
        assert!(c.hrnn_parent_distance < loose.hrnn_parent_distance);
    }
}
