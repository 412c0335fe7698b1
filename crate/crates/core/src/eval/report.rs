//! Relative-RMSE and correlation tables grouped by hierarchy level or sector.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::horizon::{ForecastPoint, ForecastSet};
use super::metrics::{diebold_mariano, distance_correlation, pearson, relative_rmse, DmResult};
use crate::error::Result;
use crate::panel::{HierarchyDataset, Month, NodeId};

/// Every relative RMSE is taken against this model.
pub const REFERENCE_MODEL: &str = "AR(1)";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    All,
    Level,
    Sector,
}

impl FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "all" => Ok(Grouping::All),
            "level" => Ok(Grouping::Level),
            "sector" => Ok(Grouping::Sector),
            other => Err(format!("grouping must be all, level or sector, got `{other}`")),
        }
    }
}

impl Grouping {
    pub fn label(self) -> &'static str {
        match self {
            Grouping::All => "all",
            Grouping::Level => "level",
            Grouping::Sector => "sector",
        }
    }

    /// Group label of a node, or `None` if the node has no such group.
    pub fn group_of(self, data: &HierarchyDataset, node: NodeId) -> Option<String> {
        match self {
            Grouping::All => Some("all".into()),
            Grouping::Level => data.level(node).map(|l| l.to_string()),
            Grouping::Sector => {
                let s = data.sector(node)?;
                (s != data.root()).then(|| format!("{s} {}", data.name(s).unwrap_or_default()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub model: String,
    pub grouping: Grouping,
    pub group: String,
    pub horizon: usize,
    /// Pairs shared with the reference model.
    pub pairs: usize,
    pub rmse: f64,
    pub reference_rmse: f64,
    /// `None` when the reference RMSE is zero or no pairs are shared.
    pub relative_rmse: Option<f64>,
    pub dm_statistic: Option<f64>,
    pub dm_p_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub model: String,
    pub grouping: Grouping,
    pub group: String,
    pub pairs: usize,
    /// `None` when either side has zero variance.
    pub pearson: Option<f64>,
    pub distance_correlation: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub correlations: Vec<CorrelationRow>,
    /// Groups without reference forecasts; their ratios are omitted.
    pub missing_reference: Vec<String>,
}

type PairKey = (NodeId, Month);

fn pooled(points: &BTreeMap<PairKey, ForecastPoint>) -> f64 {
    let n = points.len() as f64;
    (points.values().map(|p| p.error() * p.error()).sum::<f64>() / n).sqrt()
}

/// Pools squared errors within each group over the (node, month) pairs the
/// model shares with the reference model, then takes one ratio per group.
/// Correlations use every horizon-0 pair of the model in the group.
pub fn aggregate(set: &ForecastSet, data: &HierarchyDataset, grouping: Grouping) -> EvalReport {
    // (model, group, horizon) -> pairs
    let mut groups: BTreeMap<(String, String, usize), BTreeMap<PairKey, ForecastPoint>> = BTreeMap::new();
    for ((model, node, h), points) in &set.entries {
        let Some(group) = grouping.group_of(data, *node) else {
            continue;
        };
        let slot = groups.entry((model.clone(), group, *h)).or_default();
        for p in points {
            slot.insert((*node, p.month), *p);
        }
    }

    let mut report = EvalReport::default();
    let mut missing = BTreeSet::new();
    for ((model, group, h), pairs) in &groups {
        let reference = groups.get(&(REFERENCE_MODEL.to_string(), group.clone(), *h));
        let Some(reference) = reference else {
            missing.insert(group.clone());
            continue;
        };
        let shared: BTreeMap<PairKey, ForecastPoint> = pairs
            .iter()
            .filter(|(k, _)| reference.contains_key(k))
            .map(|(k, p)| (*k, *p))
            .collect();
        if shared.is_empty() {
            continue;
        }
        let ref_shared: BTreeMap<PairKey, ForecastPoint> = shared.keys().map(|k| (*k, reference[k])).collect();
        let rmse = pooled(&shared);
        let reference_rmse = pooled(&ref_shared);
        let ea: Vec<f64> = shared.values().map(ForecastPoint::error).collect();
        let eb: Vec<f64> = ref_shared.values().map(ForecastPoint::error).collect();
        let dm: Option<DmResult> = diebold_mariano(&ea, &eb, *h).ok();
        report.rows.push(ReportRow {
            model: model.clone(),
            grouping,
            group: group.clone(),
            horizon: *h,
            pairs: shared.len(),
            rmse,
            reference_rmse,
            relative_rmse: relative_rmse(rmse, reference_rmse),
            dm_statistic: dm.map(|d| d.statistic),
            dm_p_value: dm.map(|d| d.p_value),
        });
    }
    for ((model, group, h), pairs) in &groups {
        if *h != 0 {
            continue;
        }
        let actual: Vec<f64> = pairs.values().map(|p| p.actual).collect();
        let predicted: Vec<f64> = pairs.values().map(|p| p.predicted).collect();
        report.correlations.push(CorrelationRow {
            model: model.clone(),
            grouping,
            group: group.clone(),
            pairs: pairs.len(),
            pearson: pearson(&actual, &predicted),
            distance_correlation: distance_correlation(&actual, &predicted).ok(),
        });
    }
    report.missing_reference = missing.into_iter().collect();
    report
}

/// Diebold-Mariano test of `a` against `b` on their shared pairs at one horizon.
pub fn pairwise_dm(set: &ForecastSet, a: &str, b: &str, horizon: usize) -> Option<DmResult> {
    let collect = |model: &str| -> BTreeMap<PairKey, f64> {
        set.entries
            .iter()
            .filter(|((m, _, h), _)| m == model && *h == horizon)
            .flat_map(|((_, n, _), ps)| ps.iter().map(move |p| ((*n, p.month), p.error())))
            .collect()
    };
    let ea = collect(a);
    let eb = collect(b);
    let (xa, xb): (Vec<f64>, Vec<f64>) = ea.iter().filter_map(|(k, e)| eb.get(k).map(|f| (*e, *f))).unzip();
    diebold_mariano(&xa, &xb, horizon).ok()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn merge(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        self.correlations.extend(other.correlations);
        self.missing_reference.extend(other.missing_reference);
    }

    pub fn relative(&self, model: &str, group: &str, horizon: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.group == group && r.horizon == horizon)
            .and_then(|r| r.relative_rmse)
    }

    /// One row per model x horizon x group; correlations repeat on every horizon of the group.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "model", "grouping", "group", "horizon", "pairs", "rmse", "ar1_rmse", "relative_rmse",
            "dm_statistic", "dm_p_value", "pearson_h0", "dcor_h0",
        ])?;
        for r in &self.rows {
            let corr = self
                .correlations
                .iter()
                .find(|c| c.model == r.model && c.grouping == r.grouping && c.group == r.group);
            w.write_record([
                r.model.clone(),
                r.grouping.label().to_string(),
                r.group.clone(),
                r.horizon.to_string(),
                r.pairs.to_string(),
                r.rmse.to_string(),
                r.reference_rmse.to_string(),
                opt(r.relative_rmse),
                opt(r.dm_statistic),
                opt(r.dm_p_value),
                opt(corr.and_then(|c| c.pearson)),
                opt(corr.and_then(|c| c.distance_correlation)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned text table: one block per group, models down, horizons across.
    pub fn to_text(&self) -> String {
        let mut blocks: BTreeMap<(Grouping, String), Vec<&ReportRow>> = BTreeMap::new();
        for r in &self.rows {
            blocks.entry((r.grouping, r.group.clone())).or_default().push(r);
        }
        let mut out = String::new();
        for ((grouping, group), rows) in blocks {
            let horizons: BTreeSet<usize> = rows.iter().map(|r| r.horizon).collect();
            let mut models: Vec<&str> = Vec::new();
            for r in &rows {
                if !models.contains(&r.model.as_str()) {
                    models.push(&r.model);
                }
            }
            let width = models.iter().map(|m| m.len()).max().unwrap_or(5).max(5);
            let _ = writeln!(out, "[{} = {}]", grouping.label(), group);
            let _ = write!(out, "{:<width$}", "model");
            for h in &horizons {
                let _ = write!(out, " {:>7}", format!("h={h}"));
            }
            let _ = writeln!(out, " {:>7} {:>7}", "phi", "r_d");
            for m in models {
                let _ = write!(out, "{m:<width$}");
                for h in &horizons {
                    let cell = rows
                        .iter()
                        .find(|r| r.model == m && r.horizon == *h)
                        .map(|r| match (r.relative_rmse, r.dm_p_value) {
                            (Some(v), Some(p)) if p < 0.02 && m != REFERENCE_MODEL => format!("{v:.2}*"),
                            (Some(v), _) => format!("{v:.2}"),
                            (None, _) => "n/a".into(),
                        })
                        .unwrap_or_default();
                    let _ = write!(out, " {cell:>7}");
                }
                let corr = self.correlations.iter().find(|c| c.model == m && c.grouping == grouping && c.group == group);
                let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into());
                let _ = writeln!(
                    out,
                    " {:>7} {:>7}",
                    fmt(corr.and_then(|c| c.pearson)),
                    fmt(corr.and_then(|c| c.distance_correlation))
                );
            }
            out.push('\n');
        }
        if !self.missing_reference.is_empty() {
            let _ = writeln!(out, "groups without {REFERENCE_MODEL} forecasts: {}", self.missing_reference.join(", "));
        }
        out.push_str("* Diebold-Mariano p < 0.02 against AR(1)\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn point(i: i32, actual: f64, predicted: f64) -> ForecastPoint {
        ForecastPoint {
            month: synth::start_month().offset(i),
            actual,
            predicted,
        }
    }

    fn toy() -> (ForecastSet, HierarchyDataset) {
        let data = synth::ar1_panel(3, 30, 0.5, 0.3, 1);
        let mut set = ForecastSet::default();
        for node in 0..3u32 {
            let ar: Vec<ForecastPoint> = (0..12).map(|i| point(i, (i as f64 * 0.7 + node as f64).sin(), 0.1 * node as f64)).collect();
            let good: Vec<ForecastPoint> = ar.iter().map(|p| ForecastPoint { predicted: p.actual * 0.9, ..*p }).collect();
            set.entries.insert((REFERENCE_MODEL.into(), NodeId(node), 0), ar);
            set.entries.insert(("good".into(), NodeId(node), 0), good);
        }
        (set, data)
    }

    #[test]
    fn reference_is_exactly_one_everywhere() {
        let (set, data) = toy();
        for g in [Grouping::All, Grouping::Level, Grouping::Sector] {
            let rep = aggregate(&set, &data, g);
            for r in rep.rows.iter().filter(|r| r.model == REFERENCE_MODEL) {
                assert_eq!(r.relative_rmse, Some(1.0));
            }
        }
        let rep = aggregate(&set, &data, Grouping::All);
        assert!(rep.relative("good", "all", 0).unwrap() < 1.0);
    }

    #[test]
    fn pooled_squares_decompose_over_levels() {
        let (set, data) = toy();
        let all = aggregate(&set, &data, Grouping::All);
        let lvl = aggregate(&set, &data, Grouping::Level);
        let a = all.rows.iter().find(|r| r.model == "good").unwrap();
        let parts: Vec<&ReportRow> = lvl.rows.iter().filter(|r| r.model == "good").collect();
        let weighted: f64 = parts.iter().map(|r| r.pairs as f64 * r.rmse * r.rmse).sum::<f64>() / a.pairs as f64;
        assert!((a.rmse * a.rmse - weighted).abs() < 1e-12);
    }

    #[test]
    fn missing_reference_is_flagged() {
        let (mut set, data) = toy();
        set.entries.retain(|k, _| k.0 != REFERENCE_MODEL);
        let rep = aggregate(&set, &data, Grouping::All);
        assert!(rep.rows.is_empty());
        assert_eq!(rep.missing_reference, vec!["all".to_string()]);
        assert!(rep.to_text().contains("without AR(1)"));
    }

    #[test]
    fn constant_predictions_have_undefined_pearson() {
        let (set, data) = toy();
        let rep = aggregate(&set, &data, Grouping::Level);
        let root_ar = rep.correlations.iter().find(|c| c.model == REFERENCE_MODEL && c.group == "0").unwrap();
        assert_eq!(root_ar.pearson, None);
        assert_eq!(root_ar.distance_correlation, Some(0.0));
    }

    #[test]
    fn pairwise_dm_matches_direct_call() {
        let (set, _) = toy();
        let d = pairwise_dm(&set, "good", REFERENCE_MODEL, 0).unwrap();
        let e = pairwise_dm(&set, REFERENCE_MODEL, "good", 0).unwrap();
        assert_eq!(d.statistic, -e.statistic);
        assert_eq!(d.p_value, e.p_value);
    }
}
