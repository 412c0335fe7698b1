//! Seeded synthetic panels for tests, fixtures and the demo.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::panel::{HierarchyDataset, IndexSeries, Month, NodeId};

pub fn start_month() -> Month {
    Month::new(2000, 1).expect("valid month")
}

/// Index levels whose log-change rates are exactly `rates` (up to rounding).
pub fn index_from_rates(start: Month, base: f64, rates: &[f64]) -> Vec<(Month, f64)> {
    let mut level = base.ln();
    let mut out = vec![(start, base)];
    for (i, r) in rates.iter().enumerate() {
        level += r / 100.0;
        out.push((start.offset(i as i32 + 1), level.exp()));
    }
    out
}

pub fn ar1_rates(rng: &mut ChaCha8Rng, n: usize, phi: f64, intercept: f64, sigma: f64) -> Vec<f64> {
    let noise = Normal::new(0.0, sigma).expect("sigma >= 0");
    let mut x = intercept / (1.0 - phi);
    // Burn-in so the start does not depend on the initial value.
    for _ in 0..100 {
        x = intercept + phi * x + noise.sample(rng);
    }
    (0..n)
        .map(|_| {
            x = intercept + phi * x + noise.sample(rng);
            x
        })
        .collect()
}

/// `coupling * parent + N(0, sigma)` elementwise.
pub fn coupled(rng: &mut ChaCha8Rng, parent: &[f64], coupling: f64, sigma: f64) -> Vec<f64> {
    let noise = Normal::new(0.0, sigma).expect("sigma >= 0");
    parent.iter().map(|p| coupling * p + noise.sample(rng)).collect()
}

pub struct NodeSpec {
    pub id: u32,
    pub parent: Option<u32>,
    pub level: u8,
    pub name: String,
    /// Rates; the series ends at the common final month.
    pub rates: Vec<f64>,
}

/// Builds a dataset from rate paths that all end on the same month.
pub fn build_dataset(specs: Vec<NodeSpec>) -> Result<HierarchyDataset> {
    let longest = specs.iter().map(|s| s.rates.len()).max().unwrap_or(0);
    let mut parents = BTreeMap::new();
    let series = specs
        .into_iter()
        .map(|s| {
            parents.insert(NodeId(s.id), s.parent.map(NodeId));
            let start = start_month().offset((longest - s.rates.len()) as i32);
            IndexSeries {
                node: NodeId(s.id),
                name: s.name,
                level: s.level,
                observations: index_from_rates(start, 100.0, &s.rates),
            }
        })
        .collect();
    HierarchyDataset::new(series, &parents)
}

/// Root AR(1) plus `n_nodes - 1` children coupled to it at 0.8.
pub fn ar1_panel(n_nodes: u32, n_months: usize, phi: f64, sigma: f64, seed: u64) -> HierarchyDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_months.saturating_sub(1);
    let root = ar1_rates(&mut rng, n, phi, 0.05, sigma);
    let mut specs = vec![NodeSpec {
        id: 0,
        parent: None,
        level: 0,
        name: "Headline".into(),
        rates: root.clone(),
    }];
    for id in 1..n_nodes {
        specs.push(NodeSpec {
            id,
            parent: Some(0),
            level: 1,
            name: format!("Component {id}"),
            rates: coupled(&mut rng, &root, 0.8, sigma),
        });
    }
    build_dataset(specs).expect("generated tree is valid")
}

#[derive(Clone, Debug)]
pub struct TreeSpec {
    pub seed: u64,
    pub phi: f64,
    pub intercept: f64,
    pub root_sigma: f64,
    pub coupling: f64,
    pub noise_sigma: f64,
    pub mids: u32,
    pub leaves_per_mid: u32,
    /// Rates for the root.
    pub full_rates: usize,
    /// Rates for mid-level nodes, counted back from the common final month.
    pub mid_rates: usize,
    /// Training rates each leaf keeps under `train_fraction`.
    pub leaf_train_rates: usize,
    pub train_fraction: f64,
}

impl TreeSpec {
    pub fn small(seed: u64) -> Self {
        Self {
            seed,
            phi: 0.7,
            intercept: 0.05,
            root_sigma: 0.3,
            coupling: 0.8,
            noise_sigma: 0.15,
            mids: 2,
            leaves_per_mid: 2,
            full_rates: 120,
            mid_rates: 120,
            leaf_train_rates: 60,
            train_fraction: 0.7,
        }
    }

    /// Leaf series length whose chronological split keeps `leaf_train_rates`.
    pub fn leaf_rates(&self) -> usize {
        let mut n = (self.leaf_train_rates as f64 / self.train_fraction).floor() as usize;
        while ((self.train_fraction * n as f64).floor() as usize) < self.leaf_train_rates {
            n += 1;
        }
        n
    }
}

/// Root, `mids` children, and `leaves_per_mid` leaves under each; every
/// child is `coupling * parent + noise`. Mid-level nodes keep their most
/// recent `mid_rates` rates and leaves their most recent [`TreeSpec::leaf_rates`].
pub fn three_level_tree(spec: &TreeSpec) -> HierarchyDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let root = ar1_rates(&mut rng, spec.full_rates, spec.phi, spec.intercept, spec.root_sigma);
    let leaf_len = spec.leaf_rates().min(spec.full_rates);
    let mut specs = vec![NodeSpec {
        id: 0,
        parent: None,
        level: 0,
        name: "Headline".into(),
        rates: root.clone(),
    }];
    let mut next_id = 1;
    for m in 0..spec.mids {
        let mid = coupled(&mut rng, &root, spec.coupling, spec.noise_sigma);
        let mid_id = next_id;
        next_id += 1;
        for l in 0..spec.leaves_per_mid {
            let leaf = coupled(&mut rng, &mid, spec.coupling, spec.noise_sigma);
            specs.push(NodeSpec {
                id: next_id,
                parent: Some(mid_id),
                level: 2,
                name: format!("Item {m}.{l}"),
                rates: leaf[spec.full_rates - leaf_len..].to_vec(),
            });
            next_id += 1;
        }
        specs.push(NodeSpec {
            id: mid_id,
            parent: Some(0),
            level: 1,
            name: format!("Sector {m}"),
            rates: mid[spec.full_rates - spec.mid_rates.min(spec.full_rates)..].to_vec(),
        });
    }
    build_dataset(specs).expect("generated tree is valid")
}

/// The bundled 12-node panel: a root, three sectors and eight items over
/// 240 months.
pub fn fixture_panel() -> HierarchyDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let n = 239;
    let root = ar1_rates(&mut rng, n, 0.6, 0.08, 0.25);
    let mut specs = vec![NodeSpec {
        id: 0,
        parent: None,
        level: 0,
        name: "All items".into(),
        rates: root.clone(),
    }];
    let layout: [(u32, &str, &[(u32, &str)]); 3] = [
        (1, "Food", &[(4, "Cereals"), (5, "Meats"), (6, "Dairy")]),
        (2, "Energy", &[(7, "Gasoline"), (8, "Electricity"), (9, "Fuel oil")]),
        (3, "Services", &[(10, "Rent"), (11, "Medical care")]),
    ];
    for (sid, sname, items) in layout {
        let sector = coupled(&mut rng, &root, 0.8, 0.15);
        for &(iid, iname) in items {
            specs.push(NodeSpec {
                id: iid,
                parent: Some(sid),
                level: 2,
                name: iname.into(),
                rates: coupled(&mut rng, &sector, 0.8, 0.15),
            });
        }
        specs.push(NodeSpec {
            id: sid,
            parent: Some(0),
            level: 1,
            name: sname.into(),
            rates: sector,
        });
    }
    build_dataset(specs).expect("fixture tree is valid")
}

/// Monthly unemployment rates covering every month of [`fixture_panel`].
pub fn fixture_unemployment() -> Vec<(Month, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let path = ar1_rates(&mut rng, 240, 0.97, 0.15, 0.1);
    path.iter()
        .enumerate()
        .map(|(i, u)| (start_month().offset(i as i32), (u * 100.0).round() / 100.0))
        .collect()
}

/// Writes the panel in the ingestion CSV layout.
pub fn write_panel<W: Write>(data: &HierarchyDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_id", "node_name", "level", "parent_id", "month", "index_value"])?;
    for id in data.node_ids() {
        let s = data.series(id)?;
        let parent = data.parent(id).map(|p| p.to_string()).unwrap_or_default();
        for (m, v) in &s.observations {
            w.write_record([
                id.to_string(),
                s.name.clone(),
                s.level.to_string(),
                parent.clone(),
                m.to_string(),
                v.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_exog<W: Write>(series: &[(Month, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["month", "unemployment_rate"])?;
    for (m, u) in series {
        w.write_record([m.to_string(), u.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
