use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const MICS: &str = "[[0,0,0],[0.042,0,0],[0.084,0,0],[0.126,0,0]]";

fn iiva(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iiva"))
        .args(args)
        .env_remove("IIVA_SEED")
        .output()
        .expect("failed to start iiva")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("killed by a signal")
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn scene(snr: Value, seed: u64) -> Value {
    json!({
        "geometry": {"mic_positions": serde_json::from_str::<Value>(MICS).unwrap()},
        "sources": [
            {"doa_deg": 60, "distance": 1, "signal": 0},
            {"doa_deg": 120, "distance": 1, "signal": 1}
        ],
        "snr_db": snr,
        "seed": seed,
        "duration": 1.0,
        "sample_rate": 16000,
        "target": 1
    })
}

fn simulate(dir: &Path, snr: Value) -> PathBuf {
    let out = dir.join("scene");
    let cfg = write(dir, "sim.json", &json!({"scene": scene(snr, 5), "output_dir": out}));
    let r = iiva(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    out
}

fn run_config(input: &Path, out: &Path) -> Value {
    json!({
        "variant": 5,
        "target_doa_deg": 60,
        "solver": {"max_iters": 5},
        "geometry": {"mic_positions": serde_json::from_str::<Value>(MICS).unwrap()},
        "io": {"input": input, "output_dir": out}
    })
}

fn read_wav(p: &Path) -> Vec<Vec<f32>> {
    let mut r = hound::WavReader::open(p).unwrap();
    let ch = r.spec().channels as usize;
    let samples: Vec<f32> = r.samples::<f32>().map(|s| s.unwrap()).collect();
    (0..ch).map(|c| samples.iter().skip(c).step_by(ch).copied().collect()).collect()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn config_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let mut cfg = run_config(Path::new("mix.wav"), Path::new("out"));
    cfg["colour"] = json!("blue");
    let p = write(dir.path(), "bad.json", &cfg);
    let r = iiva(&["separate", "--config", p.to_str().unwrap()]);
    assert_eq!(code(&r), 1);

    let p = write(dir.path(), "bad.json", &json!("not an object"));
    assert_eq!(code(&iiva(&["separate", "--config", p.to_str().unwrap()])), 1);
}

#[test]
fn missing_files_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere.json");
    assert_eq!(code(&iiva(&["separate", "--config", missing.to_str().unwrap()])), 2);

    let p = write(dir.path(), "run.json", &run_config(&dir.path().join("absent.wav"), dir.path()));
    assert_eq!(code(&iiva(&["separate", "--config", p.to_str().unwrap()])), 2);
}

#[test]
fn sample_rate_mismatch_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let scene = simulate(dir.path(), json!(30));
    let mut cfg = run_config(&scene.join("mixture.wav"), &dir.path().join("out"));
    cfg["stft"] = json!({"fft_size": 512, "hop": 256, "sample_rate": 8000});
    let p = write(dir.path(), "run.json", &cfg);
    assert_eq!(code(&iiva(&["separate", "--config", p.to_str().unwrap()])), 1);
}

#[test]
fn silent_input_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("silence.wav");
    let spec = hound::WavSpec {
        channels: 4,
        sample_rate: 16000,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(&wav, spec).unwrap();
    for _ in 0..4 * 16000 {
        w.write_sample(0.0f32).unwrap();
    }
    w.finalize().unwrap();
    let mut cfg = run_config(&wav, &dir.path().join("out"));
    cfg["variant"] = json!(4);
    let p = write(dir.path(), "run.json", &cfg);
    let r = iiva(&["separate", "--config", p.to_str().unwrap()]);
    assert_eq!(code(&r), 3, "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn simulate_writes_consistent_scene() {
    let dir = TempDir::new().unwrap();
    let out = simulate(dir.path(), json!("inf"));
    let mix = read_wav(&out.join("mixture.wav"));
    let a = read_wav(&out.join("image_1.wav"));
    let b = read_wav(&out.join("image_2.wav"));
    assert_eq!(mix.len(), 4);
    assert_eq!(mix[0].len(), 16000);
    // Without noise the reference channel is the sum of the images.
    for i in 0..16000 {
        let sum = f64::from(a[0][i]) + f64::from(b[0][i]);
        assert!((f64::from(mix[0][i]) - sum).abs() <= 1e-6 * (1.0 + sum.abs()));
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("scene.json")).unwrap()).unwrap();
    assert!(manifest["measured_snr_db"].is_null());
    assert_eq!(manifest["target"], json!(1));
    // an infinite SNR is written as null
    assert!(manifest["config"]["scene"]["snr_db"].is_null());
}

#[test]
fn simulate_preset() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("preset");
    let cfg = write(
        dir.path(),
        "sim.json",
        &json!({"preset": {"room": 1, "permutation": 3, "target": 2, "duration": 0.5}, "output_dir": out}),
    );
    let r = iiva(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out.join("image_8.wav").is_file());
    assert!(!out.join("image_9.wav").exists());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("scene.json")).unwrap()).unwrap();
    assert_eq!(manifest["target"], json!(2));
}

#[test]
fn separation_is_deterministic_and_rerunnable() {
    let dir = TempDir::new().unwrap();
    let scene = simulate(dir.path(), json!(30));
    let first = dir.path().join("first");
    let p = write(dir.path(), "run.json", &run_config(&scene.join("mixture.wav"), &first));
    let r = iiva(&["separate", "--config", p.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let est = fs::read(first.join("soi_1.wav")).unwrap();
    assert!(!first.join("soi_2.wav").exists());

    let second = dir.path().join("second");
    let p = write(dir.path(), "run2.json", &run_config(&scene.join("mixture.wav"), &second));
    assert_eq!(code(&iiva(&["separate", "--config", p.to_str().unwrap()])), 0);
    assert_eq!(fs::read(second.join("soi_1.wav")).unwrap(), est);

    // The manifest is itself a config that reproduces the run in place.
    let manifest_path = first.join("manifest.json");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["seed"], json!(0));
    assert_eq!(manifest["config"]["solver"]["max_iters"], json!(5));
    fs::remove_file(first.join("soi_1.wav")).unwrap();
    let r = iiva(&["separate", "--config", manifest_path.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(fs::read(first.join("soi_1.wav")).unwrap(), est);

    let trace = fs::read_to_string(first.join("trace.csv")).unwrap();
    assert!(trace.contains("\r\n"));
    assert_eq!(trace.lines().count(), 1 + 6);
}

#[test]
fn perfect_estimate_scores_at_the_cap() {
    let dir = TempDir::new().unwrap();
    let scene = simulate(dir.path(), json!(30));
    let est = dir.path().join("est");
    fs::create_dir(&est).unwrap();
    fs::copy(scene.join("image_1.wav"), est.join("soi_1.wav")).unwrap();
    let r = iiva(&[
        "evaluate",
        "--est",
        est.to_str().unwrap(),
        "--ref",
        scene.to_str().unwrap(),
        "--target",
        "1",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let rows = csv_rows(&String::from_utf8(r.stdout).unwrap());
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 200.0);
    assert_eq!(rows[0][4].parse::<f64>().unwrap(), 200.0);

    let r = iiva(&[
        "evaluate",
        "--est",
        est.to_str().unwrap(),
        "--ref",
        scene.to_str().unwrap(),
        "--target",
        "3",
    ]);
    assert_eq!(code(&r), 1);
}

#[test]
fn single_point_sweep_matches_separate_and_evaluate() {
    let dir = TempDir::new().unwrap();
    let scene_dir = simulate(dir.path(), json!(30));
    let out = dir.path().join("sep");
    let p = write(dir.path(), "run.json", &run_config(&scene_dir.join("mixture.wav"), &out));
    assert_eq!(code(&iiva(&["separate", "--config", p.to_str().unwrap()])), 0);
    let r = iiva(&[
        "evaluate",
        "--est",
        out.to_str().unwrap(),
        "--ref",
        scene_dir.to_str().unwrap(),
        "--target",
        "1",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let eval = csv_rows(&String::from_utf8(r.stdout).unwrap());

    let sweep_dir = dir.path().join("sweep");
    let cfg = write(
        dir.path(),
        "sweep.json",
        &json!({"scenes": {"custom": [scene(json!(30), 5)]}, "variants": [5], "max_iters": 5, "output_dir": sweep_dir}),
    );
    let r = iiva(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let rows = csv_rows(&fs::read_to_string(sweep_dir.join("results.csv")).unwrap());
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][14], "ok");
    // sdr, sir, sar and their improvements
    assert_eq!(rows[0][8..14], eval[0][3..9]);
}

#[test]
fn two_by_two_grid_gives_four_rows() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sweep");
    let cfg = write(
        dir.path(),
        "sweep.json",
        &json!({
            "scenes": {"custom": [scene(json!(30), 5)]},
            "variants": [5, 6],
            "beta": [1.0, 2.0],
            "max_iters": 2,
            "output_dir": out
        }),
    );
    let r = iiva(&["sweep", "--config", cfg.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let rows = csv_rows(&fs::read_to_string(out.join("results.csv")).unwrap());
    assert_eq!(rows.len(), 4);
    let summary = csv_rows(&fs::read_to_string(out.join("summary.csv")).unwrap());
    assert_eq!(summary.len(), 4);
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn environment_seed_is_recorded() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("scene");
    let mut sc = scene(json!(30), 0);
    sc.as_object_mut().unwrap().remove("seed");
    let cfg = write(dir.path(), "sim.json", &json!({"scene": sc, "output_dir": out}));
    let r = Command::new(env!("CARGO_BIN_EXE_iiva"))
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .env("IIVA_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("scene.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed_source"], json!("environment"));
    assert_eq!(manifest["config"]["scene"]["seed"], json!(42));

    let r = Command::new(env!("CARGO_BIN_EXE_iiva"))
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .env("IIVA_SEED", "forty-two")
        .output()
        .unwrap();
    assert_eq!(code(&r), 1);
}
