use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use hrnn::baselines::{fit_model, parse_exog, ExogSeries, ModelRecord};
use hrnn::eval::horizon::{horizon_eval, ForecastSet};
use hrnn::eval::report::{aggregate, EvalReport};
use hrnn::eval::retrain::quarterly_retrain_eval;
use hrnn::panel::{chrono_split, descriptive_stats, parse_panel, HierarchyDataset, LevelSelector, Month, NodeId, StatsRow};

use crate::config::{slug, RunConfig};
use crate::error::{write_err, CliError};

type Result<T> = std::result::Result<T, CliError>;

fn load_data(cfg: &RunConfig) -> Result<HierarchyDataset> {
    Ok(parse_panel(cfg.data()?)?)
}

fn load_exog(cfg: &RunConfig) -> Result<Option<ExogSeries>> {
    cfg.exog.as_deref().map(parse_exog).transpose().map_err(CliError::from)
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let out = cfg.prepare_out()?;
    let levels = data.levels_top_down();
    let mut first: Option<Month> = None;
    let mut last: Option<Month> = None;
    for id in data.node_ids() {
        let obs = &data.series(id)?.observations;
        if let (Some(a), Some(b)) = (obs.first(), obs.last()) {
            first = Some(first.map_or(a.0, |m| m.min(a.0)));
            last = Some(last.map_or(b.0, |m| m.max(b.0)));
        }
    }
    let mut text = format!("{} nodes, levels 0-{}\n", data.len(), levels.len().saturating_sub(1));
    for (l, ids) in levels.iter().enumerate() {
        let _ = writeln!(text, "level {l}: {} nodes", ids.len());
    }
    if let (Some(a), Some(b)) = (first, last) {
        let _ = writeln!(text, "months {a} to {b}");
    }
    let _ = writeln!(text, "{} log-change rates", data.total_rates());
    print!("{text}");
    if let Some(out) = out {
        write_text(&out.join("ingest_summary.txt"), &text)?;
    }
    Ok(())
}

fn stats_line(label: &str, r: &StatsRow) -> String {
    format!(
        "{label},{},{:.4},{:.4},{:.4},{:.4},{},{:.2}",
        r.count, r.mean, r.std, r.min, r.max, r.node_count, r.avg_per_node
    )
}

pub fn stats(cfg: &RunConfig, level: &str) -> Result<()> {
    let selector: LevelSelector = level.parse().map_err(CliError::User)?;
    let data = load_data(cfg)?;
    let out = cfg.prepare_out()?;
    let mut text = String::from("level,count,mean,std,min,max,nodes,avg_per_node\n");
    match selector {
        LevelSelector::All => {
            for l in 0..data.levels_top_down().len() {
                let row = descriptive_stats(&data, LevelSelector::Level(l as u8))?;
                text.push_str(&stats_line(&l.to_string(), &row));
                text.push('\n');
            }
            text.push_str(&stats_line("all", &descriptive_stats(&data, LevelSelector::All)?));
            text.push('\n');
        }
        LevelSelector::Level(l) => {
            text.push_str(&stats_line(&l.to_string(), &descriptive_stats(&data, selector)?));
            text.push('\n');
        }
    }
    print!("{text}");
    if let Some(out) = out {
        write_text(&out.join("stats.csv"), &text)?;
    }
    Ok(())
}

fn model_path(out: &Path, name: &str) -> PathBuf {
    out.join("models").join(format!("{}.model", slug(name)))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let exog = load_exog(cfg)?;
    let out = cfg.out()?;
    cfg.prepare_out()?;
    let models_dir = out.join("models");
    std::fs::create_dir_all(&models_dir)
        .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", models_dir.display())))?;
    let view = chrono_split(&data, cfg.train_frac)?;
    let base = cfg.base_training();

    let log_path = out.join("training_log.csv");
    let mut log = csv_writer(&log_path)?;
    log_row(&log_path, &mut log, ["model", "node_id", "status", "epochs_run", "best_epoch", "first_loss", "final_loss", "note"])?;
    for spec in &cfg.model {
        let record = fit_model(spec, &view, exog.as_ref(), &base)?;
        let path = model_path(out, &record.name);
        record.save(&path).map_err(write_err(&path))?;
        for (node, info) in record.fit_info() {
            let node = node.map(|n| n.to_string()).unwrap_or_else(|| "all".into());
            let status = if info.diverged { "diverged" } else { "fitted" };
            log_row(
                &log_path,
                &mut log,
                [
                    record.name.clone(),
                    node,
                    status.into(),
                    info.epochs_run.to_string(),
                    info.best_epoch.to_string(),
                    opt(info.first_loss),
                    opt(info.final_loss),
                    String::new(),
                ],
            )?;
        }
        for (node, reason) in &record.skipped {
            let row = [record.name.clone(), node.to_string(), "skipped".into(), String::new(), String::new(), String::new(), String::new(), reason.clone()];
            log_row(&log_path, &mut log, row)?;
        }
        let fitted = data.node_ids().filter(|&n| record.covers(n)).count();
        println!("{}: {fitted} nodes, {} skipped -> {}", record.name, record.skipped.len(), path.display());
    }
    log.flush().map_err(|e| CliError::Internal(format!("cannot write {}: {e}", log_path.display())))?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn log_row<I, S>(path: &Path, w: &mut csv::Writer<File>, row: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row)
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn load_models(cfg: &RunConfig, explicit: &[PathBuf]) -> Result<Vec<ModelRecord>> {
    let paths: Vec<PathBuf> = if explicit.is_empty() {
        let out = cfg.out()?;
        cfg.model.iter().map(|s| model_path(out, &s.name())).collect()
    } else {
        explicit.to_vec()
    };
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for p in paths {
        if !p.exists() {
            return Err(CliError::User(format!("missing model file {} (run `hrnn train` first)", p.display())));
        }
        let rec = ModelRecord::load(&p)?;
        if !seen.insert(rec.name.clone()) {
            return Err(CliError::User(format!("model {} given twice", rec.name)));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn evaluate(cfg: &RunConfig, explicit: &[PathBuf]) -> Result<()> {
    let data = load_data(cfg)?;
    let exog = load_exog(cfg)?;
    let out = cfg.out()?;
    let records = load_models(cfg, explicit)?;
    cfg.prepare_out()?;
    let view = chrono_split(&data, cfg.train_frac)?;
    let set = horizon_eval(&records, &view, exog.as_ref(), &cfg.horizons)?;
    let fpath = out.join("forecasts.csv");
    set.write_csv(create(&fpath)?).map_err(write_err(&fpath))?;
    let mut all = EvalReport::default();
    for &g in &cfg.grouping {
        let report = aggregate(&set, &data, g);
        let path = out.join(format!("report_{}.csv", g.label()));
        report.write_csv(create(&path)?).map_err(write_err(&path))?;
        all.merge(report);
    }
    let text = all.to_text();
    write_text(&out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn retrain_eval(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let exog = load_exog(cfg)?;
    let out = cfg.out()?;
    cfg.prepare_out()?;
    let view = chrono_split(&data, cfg.train_frac)?;
    let res = quarterly_retrain_eval(&cfg.retrain, &view, exog.as_ref(), &cfg.base_training())?;
    let path = out.join("retrain_quarters.csv");
    res.write_csv(create(&path)?).map_err(write_err(&path))?;
    let mut text = format!("{}: {} quarters evaluated", res.model, res.quarters.len());
    if !res.skipped.is_empty() {
        let skipped: Vec<String> = res.skipped.iter().map(Month::to_string).collect();
        let _ = write!(text, ", skipped {}", skipped.join(" "));
    }
    text.push('\n');
    match res.dm {
        Some(dm) => {
            let _ = writeln!(
                text,
                "Diebold-Mariano, retrained vs fixed: statistic {:.4}, p-value {:.4}",
                dm.statistic, dm.p_value
            );
        }
        None => text.push_str("Diebold-Mariano: too few pairs\n"),
    }
    write_text(&out.join("retrain_summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn plot_data(cfg: &RunConfig, forecasts: &Path, node: u32, horizon: usize, model: Option<&str>) -> Result<()> {
    let file = File::open(forecasts).map_err(|e| CliError::User(format!("cannot read {}: {e}", forecasts.display())))?;
    let set = ForecastSet::read_csv(file, forecasts)?;
    let node = NodeId(node);
    let models: Vec<String> = set
        .models()
        .into_iter()
        .filter(|m| model.is_none_or(|want| want == m))
        .filter(|m| set.get(m, node, horizon).is_some())
        .collect();
    if models.is_empty() {
        return Err(CliError::User(match model {
            Some(m) => format!("no forecasts for model {m}, node {node}, horizon {horizon}"),
            None => format!("unknown node {node} (no forecasts at horizon {horizon})"),
        }));
    }
    let mut rows: BTreeMap<Month, (f64, Vec<Option<f64>>)> = BTreeMap::new();
    for (i, m) in models.iter().enumerate() {
        for p in set.get(m, node, horizon).unwrap_or_default() {
            let row = rows.entry(p.month).or_insert_with(|| (p.actual, vec![None; models.len()]));
            row.1[i] = Some(p.predicted);
        }
    }
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let header: Vec<&str> = ["month", "actual"].into_iter().chain(models.iter().map(String::as_str)).collect();
        w.write_record(&header).map_err(|e| CliError::Internal(e.to_string()))?;
        for (month, (actual, preds)) in &rows {
            let mut rec = vec![month.to_string(), actual.to_string()];
            rec.extend(preds.iter().map(|p| opt(*p)));
            w.write_record(&rec).map_err(|e| CliError::Internal(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cfg.prepare_out()? {
        Some(out) => {
            let path = out.join(format!("plot_node_{}_h{horizon}.csv", node.0));
            std::fs::write(&path, &buf).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
            println!("{} rows -> {}", rows.len(), path.display());
        }
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    Ok(())
}
