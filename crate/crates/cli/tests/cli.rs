use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use skycast::dataset::{format_utc, SplitName};
use skycast::pipeline::{load_split, sweep_alpha, ExperimentConfig};
use skycast::Error;

const SIM: &str = r#"
seed = 5
resolution = 16
satellite_oversample = 2
sky_pixels = 32
history_days = 2

[[periods]]
start = "2018-06-10"
days = 2
regime = "broken_sky"

[[periods]]
start = "2019-06-10"
days = 2
regime = "mixed"
"#;

const PRE: &str = r#"
resolution = 16

[assembly]
sample_stride = 1800
"#;

const EXPERIMENT: &str = r#"
data = "data"
raw = "raw"
seeds = [3]

[preprocess]
resolution = 16

[preprocess.assembly]
sample_stride = 1800

[model]
input_resolution = 16
encoder_widths = [2, 3, 4]
decoder_widths = [3, 2]
latent_width = 4

[train]
epochs = 1
batch_size = 8
"#;

fn skycast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skycast"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = skycast(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Simulated raw data shared by the tests of one temp dir.
fn simulated(dir: &Path) -> PathBuf {
    let cfg = write(dir, "sim.toml", SIM);
    let raw = dir.join("raw");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&raw)]);
    raw
}

#[test]
fn simulate_is_reproducible_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let raw = simulated(dir.path());
    let again = dir.path().join("raw2");
    ok(&["simulate", "--config", s(&dir.path().join("sim.toml")), "--out", s(&again)]);
    let (a, b) = (tree(&raw), tree(&again));
    assert!(a.len() > 100);
    assert_eq!(a, b);

    let other = dir.path().join("raw3");
    ok(&["simulate", "--config", s(&dir.path().join("sim.toml")), "--out", s(&other), "--seed", "6"]);
    assert_ne!(tree(&other), a);

    let zero = write(dir.path(), "zero.toml", &SIM.replace("days = 2", "days = 0"));
    assert_eq!(skycast(&["simulate", "--config", s(&zero), "--out", s(&dir.path().join("z"))]).status.code(), Some(2));
    let unknown = write(dir.path(), "unknown.toml", &format!("{SIM}\nwind = 3\n"));
    assert_eq!(skycast(&["simulate", "--config", s(&unknown), "--out", s(&dir.path().join("u"))]).status.code(), Some(2));
}

#[test]
fn preprocess_variants_and_idempotence() {
    let dir = tempfile::tempdir().unwrap();
    let raw = simulated(dir.path());
    let pre = write(dir.path(), "pre.toml", PRE);
    let out = dir.path().join("spin");
    let args = ["preprocess", "--config", s(&pre), "--input", s(&raw), "--out", s(&out), "--sky-variant", "spin", "--sat-variant", "closeup"];
    ok(&args);
    let first = tree(&out);
    ok(&args);
    assert_eq!(tree(&out), first, "re-running preprocess changed its outputs");

    let sidecar: serde_json::Value = serde_json::from_slice(&first[Path::new("sky_geometry.json")]).unwrap();
    assert_eq!(sidecar["variant"], "spin");
    let manifest: serde_json::Value = serde_json::from_slice(&first[Path::new("preprocess.json")]).unwrap();
    assert_eq!(sidecar["centres"].as_array().unwrap().len() as u64, manifest["sky_frames"].as_u64().unwrap());
    assert_eq!(manifest["config"]["sat_variant"], "closeup");
    for split in ["train", "val", "test"] {
        assert!(first.contains_key(&PathBuf::from(format!("shards/{split}.jsonl"))));
        assert!(first.contains_key(&PathBuf::from(format!("histograms/{split}.csv"))));
    }

    let bad = skycast(&["preprocess", "--input", s(&raw), "--out", s(&out), "--sky-variant", "fisheye"]);
    assert_eq!(bad.status.code(), Some(2));
    let missing = skycast(&["preprocess", "--config", s(&pre), "--input", s(&dir.path().join("nothing")), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let exp = write(dir.path(), "exp.toml", EXPERIMENT);
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&exp), "--out", s(&run)]);
    let ck = run.join("seed_3/model.skck");
    assert!(ck.exists());
    assert!(run.join("seed_3/train_log.csv").exists());

    let e1 = dir.path().join("eval1");
    let e2 = dir.path().join("eval2");
    ok(&["evaluate", "--checkpoint", s(&ck), "--data", s(&dir.path().join("data")), "--split", "test", "--out", s(&e1)]);
    ok(&["evaluate", "--config", s(&exp), "--run", s(&run), "--split", "test", "--out", s(&e2)]);
    assert_eq!(tree(&e1), tree(&e2), "re-evaluating a checkpoint must reproduce every file");

    let mut rdr = csv::Reader::from_path(e1.join("metrics.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(headers.iter().collect::<Vec<_>>(), ["forecaster", "horizon_s", "n", "rmse", "fs_rmse_pct", "mae", "q95", "crps", "fs_crps_pct"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let spm: Vec<_> = rows.iter().filter(|r| &r[0] == "spm").collect();
    assert_eq!(spm.len(), 6);
    for r in spm {
        assert_eq!(r[4].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[8].parse::<f64>().unwrap(), 0.0);
    }

    // Per-weather rows partition the classified samples.
    let samples = load_split(&dir.path().join("data"), SplitName::Test).unwrap();
    let classified = samples.iter().filter(|s| s.weather.is_some()).count();
    let mut rdr = csv::Reader::from_path(e1.join("weather_metrics.csv")).unwrap();
    let n: usize = rdr
        .records()
        .map(Result::unwrap)
        .filter(|r| &r[1] == "model" && &r[2] == "600")
        .map(|r| r[3].parse::<usize>().unwrap())
        .sum();
    assert_eq!(n, classified);

    // Curves against a direct recomputation from the samples.
    let day = samples[0].day().to_string();
    let mut rdr = csv::Reader::from_path(e1.join(format!("curves/{day}.csv"))).unwrap();
    let curve: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let of_day: Vec<_> = samples.iter().filter(|x| x.day().to_string() == day).collect();
    assert_eq!(curve.len(), of_day.len() * 6);
    for (row, (smp, t)) in curve.iter().zip(of_day.iter().flat_map(|x| x.targets.iter().map(move |t| (*x, t)))) {
        assert_eq!(&row[0], format_utc(smp.t));
        assert_eq!(row[1].parse::<i64>().unwrap(), t.horizon);
        assert_eq!(row[4].parse::<f64>().unwrap(), t.ghi);
        assert_eq!(row[5].parse::<f64>().unwrap(), t.clear);
        assert_eq!(row[6].parse::<f64>().unwrap(), smp.ghi_t);
        let spm = smp.ghi_t * t.clear / smp.clear_t;
        assert!((row[7].parse::<f64>().unwrap() - spm).abs() < 1e-9);
        assert!(row[9].parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn sweep_rejects_empty_alpha_list() {
    let dir = tempfile::tempdir().unwrap();
    let exp = write(dir.path(), "exp.toml", EXPERIMENT);
    let cfg = ExperimentConfig::load(&exp).unwrap();
    assert!(matches!(sweep_alpha(&cfg, &[], dir.path()), Err(Error::Config(_))));
    assert!(matches!(sweep_alpha(&cfg, &[-1.0], dir.path()), Err(Error::Config(_))));
    let out = skycast(&["sweep-alpha", "--config", s(&exp), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_and_report_grid() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let exp = write(dir.path(), "exp.toml", EXPERIMENT);
    let sweep = dir.path().join("sweep");
    ok(&["sweep-alpha", "--config", s(&exp), "--alphas", "0,5", "--out", s(&sweep)]);
    let mut rdr = csv::Reader::from_path(sweep.join("alpha_sweep.csv")).unwrap();
    let alphas: Vec<f64> = rdr.records().map(|r| r.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(alphas.len(), 12);
    assert_eq!(alphas.iter().filter(|&&a| a == 0.0).count(), 6);

    let grid = format!(
        "split = \"val\"\n\n[base]\n{}\n[[cells]]\nname = \"SO+SI+IC\"\n\n[[cells]]\nname = \"SO\"\ninputs = {{ sky = false, satellite = true, irradiance = false }}\n\n[[cells]]\nname = \"SI-spin\"\ninputs = {{ sky = true, satellite = false, irradiance = false }}\nsky_variant = \"spin\"\n",
        EXPERIMENT.replace("[preprocess", "[base.preprocess").replace("[model]", "[base.model]").replace("[train]", "[base.train]")
    );
    let grid = write(dir.path(), "grid.toml", &grid);
    let out = dir.path().join("grid");
    ok(&["report", "--config", s(&grid), "--out", s(&out), "--jobs", "2"]);
    let mut rdr = csv::Reader::from_path(out.join("report.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 18);
    assert_eq!(&rows[6][1], "SO");
    assert_eq!(&rows[12][4], "spin");
    assert!(dir.path().join("data-spin-raw/preprocess.json").exists());

    let dup = write(dir.path(), "dup.toml", &fs::read_to_string(&grid).unwrap().replace("name = \"SO\"", "name = \"SO+SI+IC\""));
    assert_eq!(skycast(&["report", "--config", s(&dup), "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let exp = write(dir.path(), "exp.toml", "data = \"nowhere\"\nseeds = [1]\n");
    assert_eq!(skycast(&["train", "--config", s(&exp), "--out", s(&dir.path().join("run"))]).status.code(), Some(3));
    assert_eq!(skycast(&["train", "--out", "x"]).status.code(), Some(2));
}
