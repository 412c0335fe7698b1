//! Walk-forward comparison of a model fitted once against one refitted every quarter.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::metrics::{diebold_mariano, DmResult};
use crate::baselines::{fit_model, ExogSeries, ModelRecord, ModelSpec};
use crate::error::{Error, Result};
use crate::hrnn::{map_nodes, TrainConfig};
use crate::panel::{run_start, Month, NodeId, SplitView};

pub const QUARTER_MONTHS: i32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuarterRow {
    pub start: Month,
    pub pairs: usize,
    pub fixed_rmse: f64,
    pub retrained_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrainResult {
    pub model: String,
    pub quarters: Vec<QuarterRow>,
    /// Quarter starts with no evaluable pair.
    pub skipped: Vec<Month>,
    /// Retrained against fixed on every pooled pair, ordered by (month, node).
    pub dm: Option<DmResult>,
}

impl RetrainResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["quarter_start", "pairs", "fixed_rmse", "retrained_rmse"])?;
        for q in &self.quarters {
            w.write_record([
                q.start.to_string(),
                q.pairs.to_string(),
                q.fixed_rmse.to_string(),
                q.retrained_rmse.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

type Errors = BTreeMap<(Month, NodeId), (f64, f64)>;

fn quarter_errors(
    view: &SplitView<'_>,
    fixed: &ModelRecord,
    retrained: &ModelRecord,
    exog: Option<&ExogSeries>,
    start: Month,
) -> Result<Errors> {
    let data = view.dataset();
    let end = start.offset(QUARTER_MONTHS);
    let nodes: Vec<NodeId> = data.node_ids().collect();
    let per_node = map_nodes(&nodes, |node| -> Result<Vec<((Month, NodeId), (f64, f64))>> {
        let rates = &data.rates(node)?.rates;
        let mut out = Vec::new();
        for t in view.cut(node)..rates.len() {
            let (month, actual) = rates[t];
            if month < start || month >= end {
                continue;
            }
            let s = run_start(rates, t);
            if s == t {
                continue;
            }
            let history = &rates[s..t];
            let a = fixed.forecast(data, exog, node, history, 0)?;
            let b = retrained.forecast(data, exog, node, history, 0)?;
            if let (Some(a), Some(b)) = (a, b) {
                out.push(((month, node), (actual - a[0], actual - b[0])));
            }
        }
        Ok(out)
    });
    let mut errors = Errors::new();
    for r in per_node {
        errors.extend(r?);
    }
    Ok(errors)
}

fn rmse_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    (sum / n as f64).sqrt()
}

/// Walks the test period in three-month blocks from its earliest month.
/// The fixed model is fitted on `view`; the retrained one is refitted on
/// all rates before each block. Both predict one step ahead inside the
/// block, on the rates that are test data for both.
pub fn quarterly_retrain_eval(
    spec: &ModelSpec,
    view: &SplitView<'_>,
    exog: Option<&ExogSeries>,
    base: &TrainConfig,
) -> Result<RetrainResult> {
    let data = view.dataset();
    let tests: Vec<&[(Month, f64)]> = data.node_ids().map(|n| view.test(n)).filter(|t| !t.is_empty()).collect();
    let (Some(first), Some(last)) = (
        tests.iter().map(|t| t[0].0).min(),
        tests.iter().map(|t| t[t.len() - 1].0).max(),
    ) else {
        return Err(Error::Data("the test period is empty".into()));
    };

    let fixed = fit_model(spec, view, exog, base)?;
    let mut quarters = Vec::new();
    let mut skipped = Vec::new();
    let mut pooled = Errors::new();
    let mut start = first;
    while start <= last {
        let refit_view = view.extended_to(start);
        // The first block starts at the earliest test month, so its refit equals the fixed fit.
        let refit;
        let retrained = if start == first {
            &fixed
        } else {
            refit = fit_model(spec, &refit_view, exog, base)?;
            &refit
        };
        let errors = quarter_errors(&refit_view, &fixed, retrained, exog, start)?;
        if errors.is_empty() {
            log::info!("quarter starting {start}: no evaluable rates, skipped");
            skipped.push(start);
        } else {
            quarters.push(QuarterRow {
                start,
                pairs: errors.len(),
                fixed_rmse: rmse_of(errors.values().map(|e| e.0)),
                retrained_rmse: rmse_of(errors.values().map(|e| e.1)),
            });
            pooled.extend(errors);
        }
        start = start.offset(QUARTER_MONTHS);
    }
    let (ea, eb): (Vec<f64>, Vec<f64>) = pooled.values().map(|&(a, b)| (b, a)).unzip();
    Ok(RetrainResult {
        model: fixed.name.clone(),
        quarters,
        skipped,
        dm: diebold_mariano(&ea, &eb, 0).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::ModelKind;
    use crate::panel::chrono_split;
    use crate::synth::{self, NodeSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_node(rates: Vec<f64>) -> crate::panel::HierarchyDataset {
        synth::build_dataset(vec![NodeSpec {
            id: 0,
            parent: None,
            level: 0,
            name: "root".into(),
            rates,
        }])
        .unwrap()
    }

    fn ar1() -> ModelSpec {
        ModelSpec::new(ModelKind::Ar, 1)
    }

    #[test]
    fn stationary_process_shows_no_retraining_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = one_node(synth::ar1_rates(&mut rng, 400, 0.5, 0.1, 0.3));
        let view = chrono_split(&data, 0.7).unwrap();
        let res = quarterly_retrain_eval(&ar1(), &view, None, &TrainConfig::default()).unwrap();
        assert_eq!(res.quarters.len(), 40);
        assert!(res.skipped.is_empty());
        assert!(res.dm.unwrap().p_value > 0.1, "{:?}", res.dm);
    }

    #[test]
    fn retraining_tracks_a_regime_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rates = synth::ar1_rates(&mut rng, 250, 0.5, 0.0, 0.2);
        let change = rates.len();
        rates.extend(synth::ar1_rates(&mut rng, 110, 0.5, 1.0, 0.2));
        let data = one_node(rates);
        let view = chrono_split(&data, 0.6).unwrap();
        let res = quarterly_retrain_eval(&ar1(), &view, None, &TrainConfig::default()).unwrap();
        let change_month = data.rates(NodeId(0)).unwrap().rates[change].0;
        let post: Vec<&QuarterRow> = res.quarters.iter().filter(|q| q.start > change_month).collect();
        assert!(!post.is_empty());
        let pooled = |f: fn(&QuarterRow) -> f64| {
            (post.iter().map(|q| q.pairs as f64 * f(q).powi(2)).sum::<f64>() / post.iter().map(|q| q.pairs as f64).sum::<f64>()).sqrt()
        };
        let fixed = pooled(|q| q.fixed_rmse);
        let retrained = pooled(|q| q.retrained_rmse);
        assert!(retrained < fixed, "retrained {retrained} fixed {fixed}");
    }

    #[test]
    fn one_quarter_span_gives_a_single_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = one_node(synth::ar1_rates(&mut rng, 40, 0.5, 0.0, 0.2));
        let view = chrono_split(&data, 0.925).unwrap();
        assert_eq!(view.test(NodeId(0)).len(), 3);
        let res = quarterly_retrain_eval(&ar1(), &view, None, &TrainConfig::default()).unwrap();
        assert_eq!(res.quarters.len(), 1);
        let q = &res.quarters[0];
        assert_eq!(q.pairs, 3);
        assert_eq!(q.fixed_rmse, q.retrained_rmse);
        assert_eq!(res.dm, None);
    }

    #[test]
    fn empty_test_period_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = one_node(synth::ar1_rates(&mut rng, 20, 0.5, 0.0, 0.2));
        let view = SplitView::at_month(&data, synth::start_month().offset(100));
        assert!(matches!(
            quarterly_retrain_eval(&ar1(), &view, None, &TrainConfig::default()),
            Err(Error::Data(_))
        ));
    }
}
