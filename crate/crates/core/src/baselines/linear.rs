//! Linear autoregressive baselines fitted by least squares.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ols::{ols, predict_row};
use crate::error::{Error, Result};
use crate::panel::{contiguous_runs, HierarchyDataset, Month, NodeId, SplitView};
use crate::train::univariate_windows;

/// Monthly unemployment rates keyed by month.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExogSeries {
    values: BTreeMap<Month, f64>,
}

impl ExogSeries {
    pub fn new(values: impl IntoIterator<Item = (Month, f64)>) -> Self {
        Self {
            values: values.into_iter().collect(),
        }
    }

    pub fn get(&self, month: Month) -> Result<f64> {
        self.values.get(&month).copied().ok_or(Error::MissingExog(month))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Reads `month,unemployment_rate` rows.
pub fn parse_exog(path: &Path) -> Result<ExogSeries> {
    parse_exog_reader(std::fs::File::open(path)?, path)
}

pub fn parse_exog_reader<R: Read>(reader: R, source: &Path) -> Result<ExogSeries> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(["month", "unemployment_rate"]) {
        return Err(parse_err(1, "expected header `month,unemployment_rate`".into()));
    }
    let mut values = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let month: Month = record[0].parse().map_err(|e| parse_err(line, e))?;
        let u: f64 = record[1]
            .trim()
            .parse()
            .ok()
            .filter(|u: &f64| u.is_finite())
            .ok_or_else(|| parse_err(line, format!("bad unemployment_rate `{}`", &record[1])))?;
        if values.insert(month, u).is_some() {
            return Err(parse_err(line, format!("duplicate month {month}")));
        }
    }
    Ok(ExogSeries { values })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    /// Intercept first, then lag coefficients from most recent.
    pub coef: Vec<f64>,
    pub ridge: bool,
}

/// `[1, x_{t-1}, ..., x_{t-rho}]` from a history ending at `x_{t-1}`.
pub(crate) fn lag_row(history: &[f64], rho: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(rho + 1);
    row.push(1.0);
    row.extend(history.iter().rev().take(rho));
    row
}

/// Feeds each one-step prediction back into the history.
pub(crate) fn recurse(history: &[f64], need: usize, max_h: usize, mut step: impl FnMut(&[f64], usize) -> f64) -> Option<Vec<f64>> {
    if history.len() < need {
        return None;
    }
    let mut buf = history[history.len() - need..].to_vec();
    let mut out = Vec::with_capacity(max_h + 1);
    for j in 0..=max_h {
        let y = step(&buf, j);
        out.push(y);
        buf.push(y);
    }
    Some(out)
}

fn check_len(rates: usize, needed: usize, what: &str) -> Result<()> {
    if rates < needed {
        return Err(Error::Data(format!("{what} needs at least {needed} training rates, got {rates}")));
    }
    Ok(())
}

pub fn fit_ar(train: &[(Month, f64)], rho: usize) -> Result<LinearFit> {
    check_len(train.len(), rho + 5, "AR")?;
    let (rows, y): (Vec<Vec<f64>>, Vec<f64>) = univariate_windows(train, rho)
        .into_iter()
        .map(|(_, w)| (lag_row(&w.inputs, rho), w.target))
        .unzip();
    let fit = ols(&rows, &y)?;
    Ok(LinearFit {
        coef: fit.coef,
        ridge: fit.ridge,
    })
}

pub fn ar_forecast(fit: &LinearFit, rho: usize, history: &[f64], max_h: usize) -> Option<Vec<f64>> {
    recurse(history, rho, max_h, |buf, _| predict_row(&fit.coef, &lag_row(buf, rho)))
}

/// AR with `beta * u_{t-1}` appended as the last coefficient.
pub fn fit_phillips(train: &[(Month, f64)], exog: &ExogSeries, rho: usize) -> Result<LinearFit> {
    check_len(train.len(), rho + 5, "Phillips")?;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (t, w) in univariate_windows(train, rho) {
        let mut row = lag_row(&w.inputs, rho);
        row.push(exog.get(train[t].0.offset(-1))?);
        rows.push(row);
        y.push(w.target);
    }
    let fit = ols(&rows, &y)?;
    Ok(LinearFit {
        coef: fit.coef,
        ridge: fit.ridge,
    })
}

/// Unemployment is held at its value for the last history month.
pub fn phillips_forecast(
    fit: &LinearFit,
    rho: usize,
    history: &[(Month, f64)],
    exog: &ExogSeries,
    max_h: usize,
) -> Result<Option<Vec<f64>>> {
    let Some(&(last, _)) = history.last() else {
        return Ok(None);
    };
    let u = exog.get(last)?;
    let values: Vec<f64> = history.iter().map(|&(_, v)| v).collect();
    Ok(recurse(&values, rho, max_h, |buf, _| {
        let mut row = lag_row(buf, rho);
        row.push(u);
        predict_row(&fit.coef, &row)
    }))
}

pub fn rw_predict(history: &[f64], rho: usize) -> Result<f64> {
    if rho == 0 || history.len() < rho {
        return Err(Error::Contract(format!(
            "random walk needs {rho} rates, got {}",
            history.len()
        )));
    }
    Ok(history[history.len() - rho..].iter().sum::<f64>() / rho as f64)
}

pub fn rw_forecast(rho: usize, history: &[f64], max_h: usize) -> Option<Vec<f64>> {
    recurse(history, rho, max_h, |buf, _| {
        buf[buf.len() - rho..].iter().sum::<f64>() / rho as f64
    })
}

/// Gaps `x_t - mean(x_{t-1..t-rho})`, for months with a full trend window.
fn gap_series(rates: &[(Month, f64)], rho: usize) -> Vec<(Month, f64)> {
    let mut out = Vec::new();
    for run in contiguous_runs(rates) {
        for t in (run.start + rho)..run.end {
            let trend = rates[t - rho..t].iter().map(|&(_, v)| v).sum::<f64>() / rho as f64;
            out.push((rates[t].0, rates[t].1 - trend));
        }
    }
    out
}

/// AR on the gap between each rate and the mean of the previous `rho`.
pub fn fit_ar_gap(train: &[(Month, f64)], rho: usize) -> Result<LinearFit> {
    check_len(train.len(), 2 * rho + 5, "AR-GAP")?;
    let gaps = gap_series(train, rho);
    let (rows, y): (Vec<Vec<f64>>, Vec<f64>) = univariate_windows(&gaps, rho)
        .into_iter()
        .map(|(_, w)| (lag_row(&w.inputs, rho), w.target))
        .unzip();
    if rows.is_empty() {
        return Err(Error::Data("AR-GAP has no complete gap windows".into()));
    }
    let fit = ols(&rows, &y)?;
    Ok(LinearFit {
        coef: fit.coef,
        ridge: fit.ridge,
    })
}

pub fn ar_gap_forecast(fit: &LinearFit, rho: usize, history: &[f64], max_h: usize) -> Option<Vec<f64>> {
    let trend_at = |buf: &[f64], t: usize| buf[t - rho..t].iter().sum::<f64>() / rho as f64;
    recurse(history, 2 * rho, max_h, |buf, _| {
        let n = buf.len();
        let gaps: Vec<f64> = (n - rho..n).map(|t| buf[t] - trend_at(buf, t)).collect();
        predict_row(&fit.coef, &lag_row(&gaps, rho)) + trend_at(buf, n)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstarFit {
    /// `[alpha_0..alpha_rho, beta_0..beta_rho]`.
    pub coef: Vec<f64>,
    pub ridge: bool,
    pub c: f64,
    pub gamma: f64,
    /// Month of the first rate; time is counted in years from here.
    pub origin: Month,
}

pub fn transition(t: f64, gamma: f64, c: f64) -> f64 {
    crate::cells::sigmoid(gamma * (t - c))
}

impl LstarFit {
    /// 1-based month position since the first rate, in years.
    pub fn time_of(&self, month: Month) -> f64 {
        f64::from(month.since(self.origin) + 1) / 12.0
    }
}

fn lstar_row(lags: &[f64], f: f64) -> Vec<f64> {
    let mut row: Vec<f64> = lags.iter().map(|v| (1.0 - f) * v).collect();
    row.extend(lags.iter().map(|v| f * v));
    row
}

/// Two AR regimes blended by a logistic function of time.
pub fn fit_lstar(train: &[(Month, f64)], rho: usize, c: f64, gamma: f64) -> Result<LstarFit> {
    check_len(train.len(), 2 * (rho + 1) + 5, "LSTAR")?;
    let mut fit = LstarFit {
        coef: Vec::new(),
        ridge: false,
        c,
        gamma,
        origin: train[0].0,
    };
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (t, w) in univariate_windows(train, rho) {
        let f = transition(fit.time_of(train[t].0), gamma, c);
        rows.push(lstar_row(&lag_row(&w.inputs, rho), f));
        y.push(w.target);
    }
    let solved = ols(&rows, &y)?;
    fit.coef = solved.coef;
    fit.ridge = solved.ridge;
    Ok(fit)
}

pub fn lstar_forecast(fit: &LstarFit, rho: usize, history: &[(Month, f64)], max_h: usize) -> Option<Vec<f64>> {
    let &(last, _) = history.last()?;
    let values: Vec<f64> = history.iter().map(|&(_, v)| v).collect();
    recurse(&values, rho, max_h, |buf, j| {
        let f = transition(fit.time_of(last.offset(j as i32 + 1)), fit.gamma, fit.c);
        predict_row(&fit.coef, &lstar_row(&lag_row(buf, rho), f))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarFit {
    /// The target node first, then its system partners.
    pub members: Vec<NodeId>,
    /// One equation per member: intercept, then lag 1 for every member, lag 2, ...
    pub coef: Vec<Vec<f64>>,
    pub ridge: bool,
}

/// The node and its siblings, most correlated first, at most `max_series` in all.
pub fn var_members(view: &SplitView<'_>, node: NodeId, max_series: usize) -> Vec<NodeId> {
    let data = view.dataset();
    let mut siblings: Vec<(f64, NodeId)> = match data.parent(node) {
        Some(p) => data
            .children(p)
            .iter()
            .filter(|&&s| s != node && view.is_trainable(s))
            .map(|&s| {
                let c = view.training_correlation(node, s).map(|(c, _)| c).unwrap_or(f64::NEG_INFINITY);
                (c, s)
            })
            .collect(),
        None => Vec::new(),
    };
    siblings.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    std::iter::once(node)
        .chain(siblings.into_iter().map(|(_, s)| s))
        .take(max_series.max(1))
        .collect()
}

fn aligned(series: &[&[(Month, f64)]]) -> BTreeMap<Month, Vec<f64>> {
    let mut map: BTreeMap<Month, Vec<f64>> = BTreeMap::new();
    for (i, s) in series.iter().enumerate() {
        for &(m, v) in s.iter() {
            let e = map.entry(m).or_default();
            if e.len() == i {
                e.push(v);
            }
        }
    }
    let k = series.len();
    map.retain(|_, v| v.len() == k);
    map
}

fn var_design(table: &BTreeMap<Month, Vec<f64>>, rho: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (&m, values) in table {
        let mut row = vec![1.0];
        let mut ok = true;
        for lag in 1..=rho {
            match table.get(&m.offset(-(lag as i32))) {
                Some(v) => row.extend(v),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            rows.push(row);
            targets.push(values.clone());
        }
    }
    (rows, targets)
}

/// Per-equation least squares over months where every member has
/// training data. Members are dropped from the end of the list until the
/// system has at least five more rows than regressors.
pub fn fit_var(view: &SplitView<'_>, node: NodeId, rho: usize, max_series: usize) -> Result<VarFit> {
    let mut members = var_members(view, node, max_series);
    loop {
        let slices: Vec<&[(Month, f64)]> = members.iter().map(|&m| view.train(m)).collect();
        let (rows, targets) = var_design(&aligned(&slices), rho);
        let width = 1 + members.len() * rho;
        if rows.len() >= width + 5 {
            let mut coef = Vec::with_capacity(members.len());
            let mut ridge = false;
            for eq in 0..members.len() {
                let y: Vec<f64> = targets.iter().map(|t| t[eq]).collect();
                let fit = ols(&rows, &y)?;
                ridge |= fit.ridge;
                coef.push(fit.coef);
            }
            return Ok(VarFit { members, coef, ridge });
        }
        if members.len() == 1 {
            return Err(Error::Data(format!(
                "VAR for node {node} has {} aligned rows, needs {}",
                rows.len(),
                width + 5
            )));
        }
        members.pop();
    }
}

/// Joint recursion for every member; returns the target node's path.
/// `None` when a member lacks one of the last `rho` months.
pub fn var_forecast(fit: &VarFit, rho: usize, data: &HierarchyDataset, last: Month, max_h: usize) -> Result<Option<Vec<f64>>> {
    let mut lags: Vec<Vec<f64>> = Vec::with_capacity(rho);
    for lag in 0..rho {
        let m = last.offset(-(lag as i32));
        let mut row = Vec::with_capacity(fit.members.len());
        for &member in &fit.members {
            let r = data.rates(member)?;
            match r.position(m) {
                Some(i) => row.push(r.rates[i].1),
                None => return Ok(None),
            }
        }
        lags.push(row);
    }
    let mut out = Vec::with_capacity(max_h + 1);
    for _ in 0..=max_h {
        let mut design = vec![1.0];
        for row in &lags {
            design.extend(row);
        }
        let next: Vec<f64> = fit.coef.iter().map(|c| predict_row(c, &design)).collect();
        out.push(next[0]);
        lags.insert(0, next);
        lags.truncate(rho);
    }
    Ok(Some(out))
}
