//! Multi-horizon forecast collection over the test period.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::baselines::{ExogSeries, ModelRecord};
use crate::error::{Error, Result};
use crate::hrnn::map_nodes;
use crate::panel::{run_start, Month, NodeId, SplitView};

pub const DEFAULT_HORIZONS: [usize; 6] = [0, 1, 2, 3, 4, 8];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForecastPoint {
    /// Month of the forecast target.
    pub month: Month,
    pub actual: f64,
    pub predicted: f64,
}

impl ForecastPoint {
    pub fn error(&self) -> f64 {
        self.actual - self.predicted
    }
}

pub type ForecastKey = (String, NodeId, usize);

/// Forecasts keyed by (model name, node, horizon), each sorted by month.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForecastSet {
    pub entries: BTreeMap<ForecastKey, Vec<ForecastPoint>>,
}

impl ForecastSet {
    pub fn models(&self) -> Vec<String> {
        let mut names: Vec<String> = self.entries.keys().map(|(m, _, _)| m.clone()).collect();
        names.dedup();
        names
    }

    pub fn horizons(&self) -> Vec<usize> {
        let mut hs: Vec<usize> = self.entries.keys().map(|k| k.2).collect();
        hs.sort_unstable();
        hs.dedup();
        hs
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        let mut ns: Vec<NodeId> = self.entries.keys().map(|k| k.1).collect();
        ns.sort_unstable();
        ns.dedup();
        ns
    }

    pub fn get(&self, model: &str, node: NodeId, horizon: usize) -> Option<&[ForecastPoint]> {
        self.entries.get(&(model.to_string(), node, horizon)).map(Vec::as_slice)
    }

    pub fn merge(&mut self, other: ForecastSet) {
        self.entries.extend(other.entries);
    }

    /// Writes `model,node_id,horizon,month,actual,predicted`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "node_id", "horizon", "month", "actual", "predicted"])?;
        for ((model, node, h), points) in &self.entries {
            for p in points {
                w.write_record([
                    model.clone(),
                    node.to_string(),
                    h.to_string(),
                    p.month.to_string(),
                    p.actual.to_string(),
                    p.predicted.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, source: &Path) -> Result<Self> {
        let parse_err = |line: u64, message: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            message,
        };
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        if header.iter().ne(["model", "node_id", "horizon", "month", "actual", "predicted"]) {
            return Err(parse_err(1, "expected header `model,node_id,horizon,month,actual,predicted`".into()));
        }
        let mut set = ForecastSet::default();
        for record in rdr.records() {
            let record = record.map_err(|e| parse_err(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize, what: &str| -> Result<f64> {
                record[i]
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad {what} `{}`", &record[i])))
            };
            let node: NodeId = record[1].parse().map_err(|_| parse_err(line, format!("bad node_id `{}`", &record[1])))?;
            let h: usize = record[2].parse().map_err(|_| parse_err(line, format!("bad horizon `{}`", &record[2])))?;
            let month: Month = record[3].parse().map_err(|e| parse_err(line, e))?;
            set.entries.entry((record[0].to_string(), node, h)).or_default().push(ForecastPoint {
                month,
                actual: field(4, "actual")?,
                predicted: field(5, "predicted")?,
            });
        }
        for ((m, n, h), points) in &mut set.entries {
            points.sort_by_key(|p| p.month);
            if points.windows(2).any(|w| w[0].month == w[1].month) {
                return Err(Error::Data(format!("duplicate month in forecasts for {m}, node {n}, horizon {h}")));
            }
        }
        Ok(set)
    }
}

/// Recursive forecasts from every test origin of every node. A pair is
/// kept only when its target month lies in the same contiguous run and
/// inside the series.
pub fn horizon_eval(
    models: &[ModelRecord],
    view: &SplitView<'_>,
    exog: Option<&ExogSeries>,
    horizons: &[usize],
) -> Result<ForecastSet> {
    let data = view.dataset();
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    let nodes: Vec<NodeId> = data.node_ids().collect();
    let mut set = ForecastSet::default();
    for model in models {
        let per_node = map_nodes(&nodes, |node| -> Result<Vec<(usize, Vec<ForecastPoint>)>> {
            if !model.covers(node) {
                log::debug!("{}: node {node} not in model, skipped", model.name);
                return Ok(Vec::new());
            }
            let rates = &data.rates(node)?.rates;
            let mut by_h: BTreeMap<usize, Vec<ForecastPoint>> = BTreeMap::new();
            for t in view.cut(node)..rates.len() {
                let start = run_start(rates, t);
                if start == t {
                    continue;
                }
                let Some(path) = model.forecast(data, exog, node, &rates[start..t], max_h)? else {
                    continue;
                };
                let origin = rates[t - 1].0;
                for &h in horizons {
                    let idx = t + h;
                    if idx < rates.len() && rates[idx].0 == origin.offset(h as i32 + 1) {
                        by_h.entry(h).or_default().push(ForecastPoint {
                            month: rates[idx].0,
                            actual: rates[idx].1,
                            predicted: path[h],
                        });
                    }
                }
            }
            Ok(by_h.into_iter().collect())
        });
        for (node, result) in nodes.iter().zip(per_node) {
            for (h, points) in result? {
                set.entries.insert((model.name.clone(), *node, h), points);
            }
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{fit_model, ModelKind, ModelSpec};
    use crate::hrnn::TrainConfig;
    use crate::panel::chrono_split;
    use crate::synth;

    #[test]
    fn horizons_truncate_at_series_end() {
        let data = synth::ar1_panel(1, 101, 0.5, 0.3, 1);
        let view = chrono_split(&data, 0.7).unwrap();
        let rec = fit_model(&ModelSpec::new(ModelKind::Ar, 1), &view, None, &TrainConfig::default()).unwrap();
        let set = horizon_eval(&[rec], &view, None, &[0, 3]).unwrap();
        let h0 = set.get("AR(1)", NodeId(0), 0).unwrap();
        let h3 = set.get("AR(1)", NodeId(0), 3).unwrap();
        assert_eq!(h0.len(), 30);
        assert_eq!(h3.len(), 27);
        let test = view.test(NodeId(0));
        for (p, (m, v)) in h0.iter().zip(test) {
            assert_eq!((p.month, p.actual), (*m, *v));
        }
    }

    #[test]
    fn constant_predictor_is_flat_across_horizons() {
        let data = synth::ar1_panel(1, 200, 0.0, 0.3, 5);
        let view = chrono_split(&data, 0.7).unwrap();
        let mut rec = fit_model(&ModelSpec::new(ModelKind::Ar, 1), &view, None, &TrainConfig::default()).unwrap();
        if let crate::baselines::FittedModel::Ar { nodes } = &mut rec.model {
            nodes.get_mut(&NodeId(0)).unwrap().coef = vec![0.1, 0.0];
        }
        let set = horizon_eval(&[rec], &view, None, &[0, 4]).unwrap();
        for h in [0, 4] {
            assert!(set.get("AR(1)", NodeId(0), h).unwrap().iter().all(|p| p.predicted == 0.1));
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let data = synth::ar1_panel(3, 120, 0.5, 0.3, 2);
        let view = chrono_split(&data, 0.7).unwrap();
        let rec = fit_model(&ModelSpec::new(ModelKind::Ar, 2), &view, None, &TrainConfig::default()).unwrap();
        let set = horizon_eval(&[rec], &view, None, &DEFAULT_HORIZONS).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        assert_eq!(ForecastSet::read_csv(buf.as_slice(), Path::new("f.csv")).unwrap(), set);
    }
}
