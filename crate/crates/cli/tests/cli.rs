use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use hrnn::baselines::{FittedModel, ModelRecord};
use hrnn::panel::{chrono_split, parse_panel, NodeId};
use hrnn::synth::{self, NodeSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrnn")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_rates_panel(dir: &Path, name: &str, specs: Vec<NodeSpec>) -> PathBuf {
    let data = synth::build_dataset(specs).unwrap();
    let path = dir.join(name);
    synth::write_panel(&data, fs::File::create(&path).unwrap()).unwrap();
    path
}

fn single(rates: Vec<f64>) -> Vec<NodeSpec> {
    vec![NodeSpec {
        id: 0,
        parent: None,
        level: 0,
        name: "Root".into(),
        rates,
    }]
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn ingest_summarises_the_fixture() {
    let out = run(&["ingest", "--data", s(&fixtures().join("panel12.csv"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("12 nodes, levels 0-2\n"), "{text}");
    assert!(text.contains("level 2: 8 nodes"));
    assert!(text.contains("months 2000-01 to 2019-12"));
}

#[test]
fn ingest_rejects_empty_and_cyclic_files() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&run(&["ingest", "--data", s(&empty)])), 2);

    let cyclic = dir.path().join("cyclic.csv");
    fs::write(
        &cyclic,
        "node_id,node_name,level,parent_id,month,index_value\n\
         0,Root,0,,2000-01,100\n0,Root,0,,2000-02,101\n\
         1,A,1,2,2000-01,100\n1,A,1,2,2000-02,101\n\
         2,B,1,1,2000-01,100\n2,B,1,1,2000-02,101\n",
    )
    .unwrap();
    let out = run(&["ingest", "--data", s(&cyclic)]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("cycle") && err.contains('1') && err.contains('2'), "{err}");
}

#[test]
fn stats_single_node_matches_direct_formulas() {
    let dir = TempDir::new().unwrap();
    let panel = dir.path().join("one.csv");
    fs::write(
        &panel,
        "node_id,node_name,level,parent_id,month,index_value\n\
         0,Root,0,,2000-01,100\n0,Root,0,,2000-02,110\n0,Root,0,,2000-03,99\n0,Root,0,,2000-04,105\n",
    )
    .unwrap();
    let out = run(&["stats", "--data", s(&panel), "--level", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // 100 ln(x_t / x_{t-1}) = 9.5310, -10.5361, 5.8841
    assert!(stdout(&out).contains("0,3,1.6263,8.7280,-10.5361,9.5310,1,3.00"), "{}", stdout(&out));

    assert_eq!(code(&run(&["stats", "--data", s(&panel), "--level", "3"])), 2);
    assert_eq!(code(&run(&["stats", "--data", s(&panel), "--level", "x"])), 2);
}

#[test]
fn train_is_deterministic_and_writes_resolved_config() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        &format!(
            "data = \"{}\"\nseed = 5\n[[model]]\nkind = \"hrnn\"\n[[model]]\nkind = \"knn-gru\"\nk = 2\n",
            s(&fixtures().join("panel12.csv"))
        ),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["train", "--config", s(&cfg), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let (fa, fb) = (files_under(&a), files_under(&b));
    assert!(fa.contains_key("models/hrnn_4.model") && fa.contains_key("models/knn-gru_4_k_2.model"));
    for name in ["models/hrnn_4.model", "models/knn-gru_4_k_2.model", "training_log.csv"] {
        assert_eq!(fa[name], fb[name], "{name}");
    }
    // The resolved config reruns to the same models.
    let c = dir.path().join("c");
    let o = run(&["train", "--config", s(&a.join("run_config_resolved")), "--out", s(&c)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(files_under(&c)["models/hrnn_4.model"], fa["models/hrnn_4.model"]);
}

#[test]
fn zero_precision_override_matches_independent_run() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        "seed = 11\n[[model]]\nkind = \"hrnn\"\nprecision_override = 0.0\n[[model]]\nkind = \"i-gru\"\n",
    );
    let out = dir.path().join("out");
    let o = run(&["train", "--config", s(&cfg), "--data", s(&fixtures().join("panel12.csv")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let h = ModelRecord::load(&out.join("models/hrnn_4_tau_0.model")).unwrap();
    let i = ModelRecord::load(&out.join("models/i-gru_4.model")).unwrap();
    match (h.model, i.model) {
        (FittedModel::Hrnn(h), FittedModel::IGru(i)) => assert_eq!(h.theta, i.theta),
        _ => panic!("unexpected model kinds"),
    }
}

#[test]
fn small_synthetic_training_is_fast() {
    let dir = TempDir::new().unwrap();
    let data = synth::ar1_panel(3, 200, 0.6, 0.3, 4);
    let panel = dir.path().join("three.csv");
    synth::write_panel(&data, fs::File::create(&panel).unwrap()).unwrap();
    let cfg = config(dir.path(), "[[model]]\nkind = \"hrnn\"\n");
    let start = Instant::now();
    let o = run(&["train", "--config", s(&cfg), "--data", s(&panel), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(60));
}

#[test]
fn evaluate_ar1_alone_is_parity() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "horizons = [0, 2]\n[[model]]\nkind = \"ar\"\nrho = 1\n");
    let out = dir.path().join("out");
    let data = fixtures().join("panel12.csv");
    for cmd in ["train", "evaluate"] {
        let o = run(&[cmd, "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for g in ["all", "level", "sector"] {
        let text = fs::read_to_string(out.join(format!("report_{g}.csv"))).unwrap();
        let mut rows = 0;
        for line in text.lines().skip(1) {
            assert_eq!(line.split(',').nth(7), Some("1"), "{line}");
            rows += 1;
        }
        assert!(rows > 0);
    }
    assert!(fs::read_to_string(out.join("report.txt")).unwrap().contains("AR(1)"));
}

#[test]
fn evaluate_ranks_a_better_model_below_one() {
    // AR(2) with a strong second lag: AR(1) misses it.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = rand_distr::Normal::new(0.0, 0.2).unwrap();
    let mut x = vec![0.0, 0.0];
    for _ in 0..400 {
        let k = x.len();
        x.push(0.3 * x[k - 1] - 0.6 * x[k - 2] + rand_distr::Distribution::sample(&noise, &mut rng));
    }
    let dir = TempDir::new().unwrap();
    let panel = write_rates_panel(dir.path(), "ar2.csv", single(x[100..].to_vec()));
    let cfg = config(dir.path(), "horizons = [0]\ngrouping = [\"all\"]\n[[model]]\nkind = \"ar\"\nrho = 1\n[[model]]\nkind = \"ar\"\nrho = 2\n");
    let out = dir.path().join("out");
    for cmd in ["train", "evaluate"] {
        let o = run(&[cmd, "--config", s(&cfg), "--data", s(&panel), "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let text = fs::read_to_string(out.join("report_all.csv")).unwrap();
    let ar2 = text.lines().find(|l| l.starts_with("AR(2),")).unwrap();
    let rel: f64 = ar2.split(',').nth(7).unwrap().parse().unwrap();
    assert!(rel < 0.9, "{ar2}");
}

#[test]
fn evaluate_without_model_files_is_a_user_error() {
    let dir = TempDir::new().unwrap();
    let data = fixtures().join("panel12.csv");
    let o = run(&["evaluate", "--data", s(&data), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing model file"));
    let o = run(&["evaluate", "--data", s(&data), "--out", s(dir.path()), "--models", s(&dir.path().join("nope.model"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn plot_data_emits_test_rates_verbatim() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dir = TempDir::new().unwrap();
    let panel = write_rates_panel(dir.path(), "p.csv", single(synth::ar1_rates(&mut rng, 40, 0.5, 0.0, 0.3)));
    let cfg = config(dir.path(), "train_frac = 0.75\nhorizons = [0]\n[[model]]\nkind = \"ar\"\nrho = 1\n");
    let out = dir.path().join("out");
    for cmd in ["train", "evaluate"] {
        let o = run(&[cmd, "--config", s(&cfg), "--data", s(&panel), "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let forecasts = out.join("forecasts.csv");
    let o = run(&["plot-data", "--forecasts", s(&forecasts), "--node", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    assert!(text.starts_with("month,actual,AR(1)\n"));

    let data = parse_panel(&panel).unwrap();
    let view = chrono_split(&data, 0.75).unwrap();
    for (row, (m, v)) in rows.iter().zip(view.test(NodeId(0))) {
        let mut f = row.split(',');
        assert_eq!(f.next().unwrap(), m.to_string());
        assert_eq!(f.next().unwrap().parse::<f64>().unwrap(), *v);
    }

    let o = run(&["plot-data", "--forecasts", s(&forecasts), "--node", "7", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let o = run(&["plot-data", "--forecasts", s(&forecasts), "--node", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(out.join("plot_node_0_h0.csv")).unwrap(), text);
}

#[test]
fn retrain_eval_writes_aligned_quarters() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dir = TempDir::new().unwrap();
    let panel = write_rates_panel(dir.path(), "p.csv", single(synth::ar1_rates(&mut rng, 100, 0.5, 0.1, 0.3)));
    let cfg = config(dir.path(), "[retrain]\nkind = \"ar\"\nrho = 1\n");
    let out = dir.path().join("out");
    let o = run(&["retrain-eval", "--config", s(&cfg), "--data", s(&panel), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("retrain_quarters.csv")).unwrap();
    assert!(csv.starts_with("quarter_start,pairs,fixed_rmse,retrained_rmse\n"));
    // 30 test months in blocks of three.
    assert_eq!(csv.lines().count(), 11);
    assert!(stdout(&o).contains("AR(1): 10 quarters evaluated"));

    // One quarter of test data: a single point, nothing to test.
    let o = run(&["retrain-eval", "--config", s(&cfg), "--data", s(&panel), "--out", s(&out), "--train-frac", "0.97"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("retrain_quarters.csv")).unwrap().lines().count(), 2);
    assert!(stdout(&o).contains("too few pairs"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = fixtures().join("panel12.csv");
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["ingest"])), 2);
    assert_eq!(code(&run(&["ingest", "--data", s(&dir.path().join("none.csv"))])), 2);
    assert_eq!(code(&run(&["train", "--data", s(&data), "--out", s(dir.path()), "--train-frac", "1.5"])), 2);
    let bad = config(dir.path(), "unknown_key = 1\n");
    assert_eq!(code(&run(&["ingest", "--data", s(&data), "--config", s(&bad)])), 2);

    // An output path below a regular file cannot be created: our failure, not the user's input.
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = run(&["ingest", "--data", s(&data), "--out", s(&blocker.join("sub"))]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn full_pipeline_on_the_fixture_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        &format!(
            "data = \"{}\"\nexog = \"{}\"\nseed = 1\n\
             [[model]]\nkind = \"ar\"\nrho = 1\n[[model]]\nkind = \"phillips\"\n[[model]]\nkind = \"var\"\n\
             [[model]]\nkind = \"rw\"\n[[model]]\nkind = \"ar-gap\"\n[[model]]\nkind = \"lstar\"\n[[model]]\nkind = \"fc\"\n\
             [[model]]\nkind = \"s-gru\"\n[[model]]\nkind = \"i-gru\"\n[[model]]\nkind = \"knn-gru\"\n[[model]]\nkind = \"hrnn\"\n",
            s(&fixtures().join("panel12.csv")),
            s(&fixtures().join("unemployment.csv"))
        ),
    );
    let start = Instant::now();
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        for cmd in ["ingest", "train", "evaluate"] {
            let o = run(&[cmd, "--config", s(&cfg), "--out", s(&out)]);
            assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
        }
        let mut files = files_under(&out);
        files.remove("run_config_resolved").unwrap();
        trees.push(files);
    }
    assert!(start.elapsed() < Duration::from_secs(300));
    assert_eq!(trees[0].len(), trees[1].len());
    for (name, bytes) in &trees[0] {
        assert!(trees[1][name] == *bytes, "{name} differs between runs");
    }
    assert_eq!(trees[0].keys().filter(|k| k.starts_with("models/")).count(), 11);
}
