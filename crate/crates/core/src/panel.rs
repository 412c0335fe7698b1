//! Hierarchical index panels: ingestion, monthly log-change rates,
//! chronological splits and the correlation queries the models rely on.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::pearson;

/// Nodes with fewer training rates than this are not fitted.
pub const MIN_TRAIN_RATES: usize = 24;

/// Minimum number of overlapping training months for a correlation to count.
pub const MIN_OVERLAP: usize = 12;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for NodeId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.trim().parse().map(NodeId)
    }
}

/// Calendar month, stored as `year * 12 + (month - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Month(i32);

impl Month {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        (1..=12)
            .contains(&month)
            .then(|| Month(year * 12 + month as i32 - 1))
    }

    pub fn year(self) -> i32 {
        self.0.div_euclid(12)
    }

    pub fn month(self) -> u32 {
        self.0.rem_euclid(12) as u32 + 1
    }

    pub fn offset(self, months: i32) -> Month {
        Month(self.0 + months)
    }

    /// Signed number of months from `earlier` to `self`.
    pub fn since(self, earlier: Month) -> i32 {
        self.0 - earlier.0
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl FromStr for Month {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| format!("month `{s}` is not YYYY-MM"))?;
        if y.len() != 4 || m.len() != 2 {
            return Err(format!("month `{s}` is not YYYY-MM"));
        }
        let year: i32 = y.parse().map_err(|_| format!("bad year in `{s}`"))?;
        let month: u32 = m.parse().map_err(|_| format!("bad month in `{s}`"))?;
        Month::new(year, month).ok_or_else(|| format!("month out of range in `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexSeries {
    pub node: NodeId,
    pub name: String,
    pub level: u8,
    pub observations: Vec<(Month, f64)>,
}

/// Monthly log-change rates (100 x natural log of consecutive index ratios).
/// Each rate is stamped with the later of its two months.
#[derive(Clone, Debug, PartialEq)]
pub struct RateSeries {
    pub node: NodeId,
    pub rates: Vec<(Month, f64)>,
}

impl RateSeries {
    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.rates.iter().map(|&(_, r)| r).collect()
    }

    /// Index ranges of maximal runs of consecutive months.
    pub fn runs(&self) -> Vec<std::ops::Range<usize>> {
        contiguous_runs(&self.rates)
    }

    pub fn position(&self, month: Month) -> Option<usize> {
        self.rates.binary_search_by_key(&month, |&(m, _)| m).ok()
    }
}

pub(crate) fn contiguous_runs(rates: &[(Month, f64)]) -> Vec<std::ops::Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=rates.len() {
        if i == rates.len() || rates[i].0.since(rates[i - 1].0) != 1 {
            if start < i {
                runs.push(start..i);
            }
            start = i;
        }
    }
    runs
}

/// Index of the first rate in the contiguous run containing `idx`.
pub(crate) fn run_start(rates: &[(Month, f64)], idx: usize) -> usize {
    let mut s = idx.min(rates.len().saturating_sub(1));
    while s > 0 && rates[s].0.since(rates[s - 1].0) == 1 {
        s -= 1;
    }
    s
}

/// Converts an index series into rates. Months separated by a gap produce no rate.
pub fn log_change(series: &IndexSeries) -> RateSeries {
    let rates = series
        .observations
        .windows(2)
        .filter(|w| w[1].0.since(w[0].0) == 1)
        .map(|w| (w[1].0, 100.0 * (w[1].1 / w[0].1).ln()))
        .collect();
    RateSeries {
        node: series.node,
        rates,
    }
}

#[derive(Clone, Debug)]
pub struct HierarchyDataset {
    nodes: BTreeMap<NodeId, IndexSeries>,
    parents: BTreeMap<NodeId, NodeId>,
    sectors: BTreeMap<NodeId, NodeId>,
    rates: BTreeMap<NodeId, RateSeries>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
    root: NodeId,
}

impl HierarchyDataset {
    /// Validates the parent map and derives sectors and rates.
    ///
    /// `parents` must hold an entry for every series; `None` marks the root.
    pub fn new(
        series: Vec<IndexSeries>,
        parents: &BTreeMap<NodeId, Option<NodeId>>,
    ) -> Result<Self> {
        let mut nodes = BTreeMap::new();
        for mut s in series {
            s.observations.sort_by_key(|&(m, _)| m);
            if s.observations.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Data(format!("node {} has duplicate months", s.node)));
            }
            if let Some(&(m, v)) = s.observations.iter().find(|&&(_, v)| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Data(format!(
                    "node {} has non-positive index value {v} at {m}",
                    s.node
                )));
            }
            if nodes.insert(s.node, s).is_some() {
                return Err(Error::Structure("duplicate node series".into()));
            }
        }
        if nodes.is_empty() {
            return Err(Error::Structure("dataset has no nodes".into()));
        }

        let mut roots = Vec::new();
        let mut parent_map = BTreeMap::new();
        for &id in nodes.keys() {
            match parents.get(&id) {
                None | Some(None) => roots.push(id),
                Some(Some(p)) => {
                    if !nodes.contains_key(p) {
                        return Err(Error::Structure(format!(
                            "node {id} references missing parent {p}"
                        )));
                    }
                    if *p == id {
                        return Err(Error::Structure(format!("cycle: {id} -> {id}")));
                    }
                    parent_map.insert(id, *p);
                }
            }
        }

        // Walk every node up to the top; revisiting a node on the same walk is a cycle.
        for &start in nodes.keys() {
            let mut path = vec![start];
            let mut seen = BTreeSet::from([start]);
            let mut cur = start;
            while let Some(&p) = parent_map.get(&cur) {
                if !seen.insert(p) {
                    let pos = path.iter().position(|&n| n == p).unwrap_or(0);
                    let cycle: Vec<String> = path[pos..]
                        .iter()
                        .chain(std::iter::once(&p))
                        .map(|n| n.to_string())
                        .collect();
                    return Err(Error::Structure(format!("cycle: {}", cycle.join(" -> "))));
                }
                path.push(p);
                cur = p;
            }
        }

        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(Error::Structure("no root node".into())),
            many => {
                let ids: Vec<String> = many.iter().map(|n| n.to_string()).collect();
                return Err(Error::Structure(format!(
                    "expected a single root, found {}",
                    ids.join(", ")
                )));
            }
        };

        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for (&c, &p) in &parent_map {
            children.entry(p).or_default().push(c);
        }

        let mut sectors = BTreeMap::new();
        for &id in nodes.keys() {
            let mut cur = id;
            while let Some(&p) = parent_map.get(&cur) {
                if p == root {
                    break;
                }
                cur = p;
            }
            sectors.insert(id, cur);
        }

        let rates = nodes.iter().map(|(&id, s)| (id, log_change(s))).collect();

        Ok(Self {
            nodes,
            parents: parent_map,
            sectors,
            rates,
            children,
            root,
        })
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains_key(&node)
    }

    pub fn series(&self, node: NodeId) -> Result<&IndexSeries> {
        self.nodes.get(&node).ok_or(Error::UnknownNode(node))
    }

    pub fn rates(&self, node: NodeId) -> Result<&RateSeries> {
        self.rates.get(&node).ok_or(Error::UnknownNode(node))
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.parents.get(&node).copied()
    }

    pub fn children(&self, node: NodeId) -> &[NodeId] {
        self.children.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The node's ancestor directly below the root (the root maps to itself).
    pub fn sector(&self, node: NodeId) -> Option<NodeId> {
        self.sectors.get(&node).copied()
    }

    pub fn level(&self, node: NodeId) -> Option<u8> {
        self.nodes.get(&node).map(|s| s.level)
    }

    pub fn name(&self, node: NodeId) -> Option<&str> {
        self.nodes.get(&node).map(|s| s.name.as_str())
    }

    /// Nodes grouped by tree depth, root first; ids ascending within a depth.
    pub fn levels_top_down(&self) -> Vec<Vec<NodeId>> {
        let mut out: Vec<Vec<NodeId>> = Vec::new();
        let mut queue = VecDeque::from([(self.root, 0usize)]);
        while let Some((n, depth)) = queue.pop_front() {
            if out.len() <= depth {
                out.push(Vec::new());
            }
            out[depth].push(n);
            for &c in self.children(n) {
                queue.push_back((c, depth + 1));
            }
        }
        for level in &mut out {
            level.sort();
        }
        out
    }

    pub fn total_rates(&self) -> usize {
        self.rates.values().map(RateSeries::len).sum()
    }
}

/// Reads a panel CSV with header `node_id,node_name,level,parent_id,month,index_value`.
pub fn parse_panel(path: &Path) -> Result<HierarchyDataset> {
    let file = std::fs::File::open(path)?;
    parse_panel_reader(file, path)
}

pub fn parse_panel_reader<R: Read>(reader: R, source: &Path) -> Result<HierarchyDataset> {
    const HEADER: [&str; 6] = ["node_id", "node_name", "level", "parent_id", "month", "index_value"];
    let parse_err = |line: u64, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(HEADER.iter().copied()) {
        return Err(parse_err(
            1,
            format!("expected header `{}`", HEADER.join(",")),
        ));
    }

    struct Meta {
        name: String,
        level: u8,
        parent: Option<NodeId>,
        latest: Month,
    }
    let mut meta: BTreeMap<NodeId, Meta> = BTreeMap::new();
    let mut obs: BTreeMap<NodeId, BTreeMap<Month, f64>> = BTreeMap::new();

    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 6 {
            return Err(parse_err(line, format!("expected 6 fields, found {}", record.len())));
        }
        let node: NodeId = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("bad node_id `{}`", &record[0])))?;
        let name = record[1].trim().to_string();
        let level: u8 = record[2]
            .trim()
            .parse()
            .ok()
            .filter(|l| *l <= 8)
            .ok_or_else(|| parse_err(line, format!("bad level `{}`", &record[2])))?;
        let parent = match record[3].trim() {
            "" => None,
            p => Some(
                p.parse::<NodeId>()
                    .map_err(|_| parse_err(line, format!("bad parent_id `{p}`")))?,
            ),
        };
        let month: Month = record[4].parse().map_err(|e| parse_err(line, e))?;
        let value: f64 = record[5]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad index_value `{}`", &record[5])))?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(parse_err(line, format!("index_value must be positive, got {value}")));
        }

        if obs.entry(node).or_default().insert(month, value).is_some() {
            return Err(parse_err(line, format!("duplicate row for node {node} month {month}")));
        }
        // The most recent row decides name, level and parent.
        let entry = meta.entry(node).or_insert(Meta {
            name: name.clone(),
            level,
            parent,
            latest: month,
        });
        if month >= entry.latest {
            *entry = Meta {
                name,
                level,
                parent,
                latest: month,
            };
        }
    }

    if obs.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }

    let parents: BTreeMap<NodeId, Option<NodeId>> =
        meta.iter().map(|(&id, m)| (id, m.parent)).collect();
    let series = obs
        .into_iter()
        .map(|(node, o)| {
            let m = &meta[&node];
            IndexSeries {
                node,
                name: m.name.clone(),
                level: m.level,
                observations: o.into_iter().collect(),
            }
        })
        .collect();
    HierarchyDataset::new(series, &parents)
}

/// A per-node chronological cut of a dataset: rates before the cut are
/// training data, the rest is test data.
#[derive(Clone, Debug)]
pub struct SplitView<'a> {
    data: &'a HierarchyDataset,
    cut: BTreeMap<NodeId, usize>,
}

/// Keeps the earliest `floor(fraction * len)` rates of each node for training.
pub fn chrono_split(data: &HierarchyDataset, fraction: f64) -> Result<SplitView<'_>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Contract(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let cut = data
        .rates
        .iter()
        .map(|(&id, r)| (id, (fraction * r.len() as f64).floor() as usize))
        .collect();
    Ok(SplitView { data, cut })
}

impl<'a> SplitView<'a> {
    /// Cut every node at a calendar month: rates stamped before `boundary` train.
    pub fn at_month(data: &'a HierarchyDataset, boundary: Month) -> Self {
        let cut = data
            .rates
            .iter()
            .map(|(&id, r)| (id, r.rates.partition_point(|&(m, _)| m < boundary)))
            .collect();
        SplitView { data, cut }
    }

    /// Moves each node's cut forward to `boundary`, never backwards.
    pub fn extended_to(&self, boundary: Month) -> Self {
        let cut = self
            .data
            .rates
            .iter()
            .map(|(&id, r)| {
                let at = r.rates.partition_point(|&(m, _)| m < boundary);
                (id, at.max(self.cut[&id]))
            })
            .collect();
        SplitView {
            data: self.data,
            cut,
        }
    }

    pub fn dataset(&self) -> &'a HierarchyDataset {
        self.data
    }

    pub fn cut(&self, node: NodeId) -> usize {
        self.cut.get(&node).copied().unwrap_or(0)
    }

    pub fn train(&self, node: NodeId) -> &'a [(Month, f64)] {
        match self.data.rates.get(&node) {
            Some(r) => &r.rates[..self.cut(node)],
            None => &[],
        }
    }

    pub fn test(&self, node: NodeId) -> &'a [(Month, f64)] {
        match self.data.rates.get(&node) {
            Some(r) => &r.rates[self.cut(node)..],
            None => &[],
        }
    }

    pub fn is_trainable(&self, node: NodeId) -> bool {
        self.train(node).len() >= MIN_TRAIN_RATES
    }

    pub fn trainable_nodes(&self) -> Vec<NodeId> {
        self.data
            .node_ids()
            .filter(|&n| self.is_trainable(n))
            .collect()
    }

    /// Pearson correlation over overlapping training months, with the overlap size.
    /// `None` when the overlap is below [`MIN_OVERLAP`] or either side is constant.
    pub fn training_correlation(&self, a: NodeId, b: NodeId) -> Option<(f64, usize)> {
        let (xa, xb) = overlap(self.train(a), self.train(b));
        if xa.len() < MIN_OVERLAP {
            return None;
        }
        pearson(&xa, &xb).map(|c| (c, xa.len()))
    }
}

/// Values of two month-stamped series on their common months.
pub(crate) fn overlap(a: &[(Month, f64)], b: &[(Month, f64)]) -> (Vec<f64>, Vec<f64>) {
    let (mut i, mut j) = (0, 0);
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                xa.push(a[i].1);
                xb.push(b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    (xa, xb)
}

/// Correlation between a node's and its parent's training rates; 0 when
/// fewer than [`MIN_OVERLAP`] months overlap.
pub fn parent_correlation(view: &SplitView<'_>, node: NodeId) -> Result<f64> {
    let data = view.dataset();
    if !data.contains(node) {
        return Err(Error::UnknownNode(node));
    }
    let parent = data.parent(node).ok_or(Error::RootHasNoParent(node))?;
    Ok(view
        .training_correlation(node, parent)
        .map(|(c, _)| c)
        .unwrap_or(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbors {
    pub ids: Vec<NodeId>,
    /// Fewer than `k` eligible nodes existed.
    pub short: bool,
}

/// The `k` nodes whose training rates correlate most with the query node's.
pub fn knn_neighbors(view: &SplitView<'_>, node: NodeId, k: usize) -> Result<Neighbors> {
    if !view.dataset().contains(node) {
        return Err(Error::UnknownNode(node));
    }
    if k == 0 {
        return Ok(Neighbors {
            ids: Vec::new(),
            short: false,
        });
    }
    let mut scored: Vec<(f64, NodeId)> = view
        .dataset()
        .node_ids()
        .filter(|&other| other != node)
        .filter_map(|other| view.training_correlation(node, other).map(|(c, _)| (c, other)))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = scored.len() < k;
    Ok(Neighbors {
        ids: scored.into_iter().take(k).map(|(_, id)| id).collect(),
        short,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelSelector {
    All,
    Level(u8),
}

impl fmt::Display for LevelSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelSelector::All => write!(f, "all"),
            LevelSelector::Level(l) => write!(f, "{l}"),
        }
    }
}

impl FromStr for LevelSelector {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "all" => Ok(LevelSelector::All),
            other => other
                .parse()
                .map(LevelSelector::Level)
                .map_err(|_| format!("level must be 0..8 or `all`, got `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatsRow {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub node_count: usize,
    pub avg_per_node: f64,
}

pub fn descriptive_stats(data: &HierarchyDataset, level: LevelSelector) -> Result<StatsRow> {
    let selected: Vec<&RateSeries> = data
        .rates
        .values()
        .filter(|r| match level {
            LevelSelector::All => true,
            LevelSelector::Level(l) => data.level(r.node) == Some(l),
        })
        .collect();
    let values: Vec<f64> = selected.iter().flat_map(|r| r.rates.iter().map(|&(_, v)| v)).collect();
    if values.is_empty() {
        return Err(Error::EmptyLevel(level.to_string()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(StatsRow {
        count: values.len(),
        mean,
        std: var.sqrt(),
        min,
        max,
        node_count: selected.len(),
        avg_per_node: n / selected.len() as f64,
    })
}
