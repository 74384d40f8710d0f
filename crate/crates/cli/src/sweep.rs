//! Parameter grids over simulated scenes. Every grid point runs exactly what
//! `simulate`, `separate` and `evaluate` would compute from the files,
//! including the rounding of audio to 32-bit floats.

use std::path::{Path, PathBuf};

use informed_iva::mixsim::{self, generate_signals, preset_paper_scene, ScenarioSpec};
use informed_iva::pipeline::{self, score, ChannelScore};
use informed_iva::solver::variant_info;
use informed_iva::stft::StftConfig;
use informed_iva::Error as CoreError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{env_seed, pick_seed, rebase, variant_solver, SolverSection};
use crate::error::{CliError, CliResult};
use crate::files::{fmt_f64, read_text, write_csv, write_json};
use crate::simulate::SceneDeg;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

pub const RESULTS_HEADER: [&str; 15] = [
    "trial", "variant", "beta", "gamma", "lambda_one", "bases", "seed", "channel", "sdr", "sir",
    "sar", "dsdr", "dsir", "dsar", "status",
];

pub const SUMMARY_HEADER: [&str; 10] = [
    "variant",
    "beta",
    "gamma",
    "lambda_one",
    "bases",
    "trials",
    "failures",
    "median_dsdr",
    "median_dsir",
    "median_dsar",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSet {
    /// Permutations of the eight-source preset layout.
    Preset {
        room: u8,
        permutations: Vec<usize>,
        /// 1-based.
        target: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration: Option<f64>,
    },
    /// Explicit scenes; each needs a target.
    Custom(Vec<SceneDeg>),
}

/// Document read by `sweep`. Empty parameter lists mean "variant default".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub scenes: SceneSet,
    pub variants: Vec<u8>,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub lambda_one: Vec<f64>,
    #[serde(default)]
    pub bases: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub stft: StftConfig,
    pub output_dir: PathBuf,
}

/// Parameters of one grid point; `None` takes the variant default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub trial: usize,
    pub variant: u8,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda_one: Option<f64>,
    pub bases: Option<usize>,
    pub seed: u64,
}

/// Outcome of one grid point with the parameters it actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub point: GridPoint,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_one: Option<f64>,
    pub bases: Option<usize>,
    pub score: Result<ChannelScore, String>,
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

impl SweepConfig {
    pub fn scenes(&self, env: Option<u64>) -> CliResult<Vec<ScenarioSpec>> {
        let specs = match &self.scenes {
            SceneSet::Preset {
                room,
                permutations,
                target,
                duration,
            } => permutations
                .iter()
                .map(|p| {
                    let mut s = preset_paper_scene(*room, *p, *target)?;
                    if let Some(d) = duration {
                        s.duration = *d;
                    }
                    s.validate()?;
                    Ok(s)
                })
                .collect::<CliResult<Vec<_>>>()?,
            SceneSet::Custom(scenes) => scenes
                .iter()
                .map(|s| s.to_spec(pick_seed(s.seed, env).0))
                .collect::<CliResult<Vec<_>>>()?,
        };
        if specs.is_empty() {
            return Err(CliError::Config("sweep has no scenes".into()));
        }
        for s in &specs {
            if s.target.is_none() {
                return Err(CliError::Config("every sweep scene needs a target".into()));
            }
            if s.sample_rate != self.stft.sample_rate {
                return Err(CliError::Config(format!(
                    "scene sampled at {} Hz, stft expects {} Hz",
                    s.sample_rate, self.stft.sample_rate
                )));
            }
        }
        Ok(specs)
    }

    /// Cross product in a fixed order: scene, variant, beta, gamma, lambda, bases, seed.
    /// Axes a variant does not use collapse to its default.
    pub fn grid(&self, num_scenes: usize, env: Option<u64>) -> CliResult<Vec<GridPoint>> {
        if self.variants.is_empty() {
            return Err(CliError::Config("sweep lists no variants".into()));
        }
        let seeds = if self.seeds.is_empty() {
            vec![pick_seed(None, env).0]
        } else {
            self.seeds.clone()
        };
        let mut out = Vec::new();
        for trial in 0..num_scenes {
            for &variant in &self.variants {
                let info = variant_info(variant)?;
                let lambdas = if info.lambda_one.is_some() {
                    axis(&self.lambda_one)
                } else {
                    vec![None]
                };
                let bases = if info.nmf { axis(&self.bases) } else { vec![None] };
                for beta in axis(&self.beta) {
                    for gamma in axis(&self.gamma) {
                        for &lambda_one in &lambdas {
                            for &b in &bases {
                                for &seed in &seeds {
                                    out.push(GridPoint {
                                        trial,
                                        variant,
                                        beta,
                                        gamma,
                                        lambda_one,
                                        bases: b,
                                        seed,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Audio as it comes back from a 32-bit float WAV.
pub fn as_stored(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| f64::from(*v as f32)).collect()
}

/// Scene audio after a round trip through the file formats.
#[derive(Debug, Clone)]
pub struct StoredScene {
    pub spec: ScenarioSpec,
    pub mics: Vec<Vec<f64>>,
    pub images: Vec<Vec<f64>>,
}

pub fn prepare_scene(spec: &ScenarioSpec) -> CliResult<StoredScene> {
    let sim = mixsim::simulate(spec, &generate_signals(spec))?;
    Ok(StoredScene {
        spec: spec.clone(),
        mics: sim.mics.iter().map(|c| as_stored(c)).collect(),
        images: sim.images.iter().map(|c| as_stored(c)).collect(),
    })
}

pub fn run_point(
    scene: &StoredScene,
    p: &GridPoint,
    stft: &StftConfig,
    max_iters: Option<usize>,
) -> CliResult<PointResult> {
    let info = variant_info(p.variant)?;
    let target = scene.spec.target.unwrap_or(0);
    let section = SolverSection {
        max_iters,
        beta: p.beta,
        gamma: p.gamma,
        lambda_one: p.lambda_one,
        bases: p.bases,
        seed: Some(p.seed),
        ..SolverSection::default()
    };
    let m = scene.spec.geometry.num_mics();
    let cfg = variant_solver(p.variant, m, scene.spec.sources[target].doa, &section)?;
    let outcome = pipeline::separate(&scene.mics, stft, &cfg, Some(&scene.spec.geometry))
        .map_err(|e| e.to_string())
        .and_then(|sep| {
            let est = as_stored(&sep.estimates[0]);
            score(&est, &scene.mics[0], &scene.images, target).map_err(|e: CoreError| e.to_string())
        });
    Ok(PointResult {
        point: *p,
        beta: cfg.model.beta,
        gamma: p.gamma.unwrap_or(info.gamma),
        lambda_one: p.lambda_one.or(info.lambda_one),
        bases: info.nmf.then_some(cfg.model.bases),
        score: outcome,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn result_row(r: &PointResult) -> Vec<String> {
    let p = &r.point;
    let mut row = vec![
        (p.trial + 1).to_string(),
        p.variant.to_string(),
        fmt_f64(r.beta),
        fmt_f64(r.gamma),
        opt(r.lambda_one.map(fmt_f64)),
        opt(r.bases),
        p.seed.to_string(),
        "1".to_string(),
    ];
    match &r.score {
        Ok(s) => {
            for v in [
                s.processed.sdr,
                s.processed.sir,
                s.processed.sar,
                s.delta.sdr,
                s.delta.sir,
                s.delta.sar,
            ] {
                row.push(fmt_f64(v));
            }
            row.push("ok".into());
        }
        Err(e) => {
            row.extend(std::iter::repeat_n(String::new(), 6));
            row.push(e.clone());
        }
    }
    row
}

/// Median of the finite values: middle element, or mean of the two middle ones.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Groups results by parameters (not by scene or seed) and takes medians.
pub fn summarize(results: &[PointResult]) -> Vec<Vec<String>> {
    let key = |r: &PointResult| {
        (
            r.point.variant,
            r.beta.to_bits(),
            r.gamma.to_bits(),
            r.lambda_one.map(f64::to_bits),
            r.bases,
        )
    };
    let mut order = Vec::new();
    for r in results {
        if !order.contains(&key(r)) {
            order.push(key(r));
        }
    }
    order
        .into_iter()
        .map(|k| {
            let group: Vec<&PointResult> = results.iter().filter(|r| key(r) == k).collect();
            let ok: Vec<&ChannelScore> = group.iter().filter_map(|r| r.score.as_ref().ok()).collect();
            let med = |f: fn(&ChannelScore) -> f64| {
                opt(median(&ok.iter().map(|s| f(s)).collect::<Vec<_>>()).map(fmt_f64))
            };
            let first = group[0];
            vec![
                first.point.variant.to_string(),
                fmt_f64(first.beta),
                fmt_f64(first.gamma),
                opt(first.lambda_one.map(fmt_f64)),
                opt(first.bases),
                group.len().to_string(),
                (group.len() - ok.len()).to_string(),
                med(|s| s.delta.sdr),
                med(|s| s.delta.sir),
                med(|s| s.delta.sar),
            ]
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct SweepManifest<'a> {
    command: &'static str,
    version: &'static str,
    config: &'a SweepConfig,
    jobs: usize,
    points: usize,
    failures: usize,
    outputs: Vec<String>,
}

/// Runs the grid on `jobs` worker threads and returns all point results in grid order.
pub fn run_sweep(cfg: &SweepConfig, jobs: usize, env: Option<u64>) -> CliResult<Vec<PointResult>> {
    cfg.stft.validate()?;
    let specs = cfg.scenes(env)?;
    let grid = cfg.grid(specs.len(), env)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        let scenes: Vec<StoredScene> = specs
            .par_iter()
            .map(prepare_scene)
            .collect::<CliResult<_>>()?;
        grid.par_iter()
            .map(|p| run_point(&scenes[p.trial], p, &cfg.stft, cfg.max_iters))
            .collect()
    })
}

pub fn cmd_sweep(config_path: &Path, jobs: usize) -> CliResult<Vec<PathBuf>> {
    let text = read_text(config_path)?;
    let mut cfg: SweepConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let env = env_seed()?;
    if cfg.seeds.is_empty() {
        cfg.seeds = vec![pick_seed(None, env).0];
    }
    let results = run_sweep(&cfg, jobs, env)?;
    let base = config_path.parent().unwrap_or(Path::new(""));
    let dir = rebase(base, &cfg.output_dir);
    let rows: Vec<Vec<String>> = results.iter().map(result_row).collect();
    let results_path = dir.join(RESULTS_FILE);
    write_csv(&results_path, &RESULTS_HEADER, &rows)?;
    let summary_path = dir.join(SUMMARY_FILE);
    write_csv(&summary_path, &SUMMARY_HEADER, &summarize(&results))?;
    let manifest_path = dir.join(crate::separate::MANIFEST_FILE);
    write_json(
        &manifest_path,
        &SweepManifest {
            command: "sweep",
            version: env!("CARGO_PKG_VERSION"),
            config: &cfg,
            jobs,
            points: results.len(),
            failures: results.iter().filter(|r| r.score.is_err()).count(),
            outputs: vec![RESULTS_FILE.into(), SUMMARY_FILE.into()],
        },
    )?;
    Ok(vec![results_path, summary_path, manifest_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> SweepConfig {
        serde_json::from_str(&format!(
            r#"{{"scenes": {{"preset": {{"room": 1, "permutations": [1, 2], "target": 2}}}},
                "output_dir": "o" {extra}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn median_by_sorting() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[f64::NAN, 1.0]), Some(1.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn grid_is_cross_product() {
        let c = cfg(r#", "variants": [5, 6], "beta": [1, 2], "gamma": [0.5, 1]"#);
        assert_eq!(c.grid(1, None).unwrap().len(), 2 * 2 * 2);
        let c = cfg(r#", "variants": [5], "lambda_one": [1, 2], "bases": [2, 3]"#);
        // Euclidean, non-NMF: both axes collapse.
        assert_eq!(c.grid(3, None).unwrap().len(), 3);
        let c = cfg(r#", "variants": [12], "lambda_one": [1, 2], "bases": [2, 3], "seeds": [1, 2]"#);
        assert_eq!(c.grid(1, None).unwrap().len(), 8);
    }

    #[test]
    fn unknown_grid_keys_rejected() {
        let bad = r#"{"scenes": {"preset": {"room": 1, "permutations": [1], "target": 2}}, "variants": [5], "output_dir": "o", "gammas": [1]}"#;
        assert!(serde_json::from_str::<SweepConfig>(bad).is_err());
    }
}
