use std::path::{Path, PathBuf};

use informed_iva::geometry::ArrayGeometry;
use informed_iva::mixsim::{
    self, generate_signals, measured_snr_db, preset_paper_scene, snr_db_serde, ReverbSpec,
    ScenarioSpec, Simulation, SourceSpec,
};
use serde::{Deserialize, Serialize};

use crate::config::{env_seed, pick_seed, rebase, SeedSource};
use crate::error::{CliError, CliResult};
use crate::files::{read_text, read_wav, wav_rate, write_json, write_wav};

pub const MIXTURE_FILE: &str = "mixture.wav";
pub const SCENE_FILE: &str = "scene.json";

pub fn image_file(i: usize) -> String {
    format!("image_{}.wav", i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDeg {
    pub doa_deg: f64,
    pub distance: f64,
    /// Index into the signal list.
    pub signal: usize,
}

/// A scene with angles in degrees and a 1-based target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDeg {
    pub geometry: ArrayGeometry,
    pub sources: Vec<SourceDeg>,
    #[serde(with = "snr_db_serde")]
    pub snr_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverb: Option<ReverbSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub signal_seed: u64,
    pub duration: f64,
    pub sample_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
}

impl SceneDeg {
    pub fn to_spec(&self, seed: u64) -> CliResult<ScenarioSpec> {
        let target = match self.target {
            Some(0) => return Err(CliError::Config("targets are numbered from 1".into())),
            t => t.map(|t| t - 1),
        };
        let spec = ScenarioSpec {
            geometry: self.geometry.clone(),
            sources: self
                .sources
                .iter()
                .map(|s| SourceSpec {
                    doa: s.doa_deg.to_radians(),
                    distance: s.distance,
                    signal: s.signal,
                })
                .collect(),
            snr_db: self.snr_db,
            reverb: self.reverb,
            seed,
            signal_seed: self.signal_seed,
            duration: self.duration,
            sample_rate: self.sample_rate,
            target,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetSection {
    /// 1 for the shorter, 2 for the longer reverberation tail.
    pub room: u8,
    pub permutation: usize,
    /// 1-based source to extract.
    pub target: usize,
    /// Shortens or lengthens the preset's signals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
}

impl PresetSection {
    pub fn to_spec(&self) -> CliResult<ScenarioSpec> {
        let mut spec = preset_paper_scene(self.room, self.permutation, self.target)?;
        if let Some(d) = self.duration {
            spec.duration = d;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Document read by `simulate`: either a preset or an explicit scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneDeg>,
    /// Mono WAV per signal index; speech-like noise is generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signals: Option<Vec<PathBuf>>,
    pub output_dir: PathBuf,
}

impl SimulateConfig {
    /// Scenario in radians plus the document with its seed written out.
    pub fn resolve(&self, env: Option<u64>) -> CliResult<(ScenarioSpec, SimulateConfig, SeedSource)> {
        let mut explicit = self.clone();
        match (&self.preset, &self.scene) {
            (Some(p), None) => Ok((p.to_spec()?, explicit, SeedSource::Config)),
            (None, Some(s)) => {
                let (seed, source) = pick_seed(s.seed, env);
                if let Some(sc) = explicit.scene.as_mut() {
                    sc.seed = Some(seed);
                }
                Ok((s.to_spec(seed)?, explicit, source))
            }
            _ => Err(CliError::Config(
                "give exactly one of `preset` and `scene`".into(),
            )),
        }
    }
}

#[derive(Debug, Serialize)]
struct SceneManifest<'a> {
    command: &'static str,
    version: &'static str,
    config: &'a SimulateConfig,
    seed_source: SeedSource,
    resolved_scene: &'a ScenarioSpec,
    /// 1-based, when the scene names one.
    target: Option<usize>,
    target_doa_deg: Option<f64>,
    measured_snr_db: Option<f64>,
    outputs: Vec<String>,
}

/// Loads the signals named by the document, or generates them.
pub fn load_signals(
    spec: &ScenarioSpec,
    paths: Option<&[PathBuf]>,
    base: &Path,
) -> CliResult<Vec<Vec<f64>>> {
    let Some(paths) = paths else {
        return Ok(generate_signals(spec));
    };
    if paths.len() < spec.num_signals() {
        return Err(CliError::Config(format!(
            "scene uses {} signals, {} given",
            spec.num_signals(),
            paths.len()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let path = rebase(base, p);
            let audio = read_wav(&path)?;
            if audio.channels.len() != 1 {
                return Err(CliError::Config(format!("{} is not mono", path.display())));
            }
            if f64::from(audio.sample_rate) != spec.sample_rate {
                return Err(CliError::Config(format!(
                    "{} is sampled at {} Hz, the scene at {} Hz",
                    path.display(),
                    audio.sample_rate,
                    spec.sample_rate
                )));
            }
            Ok(audio.channels.into_iter().next().unwrap_or_default())
        })
        .collect()
}

/// Simulates `spec` and writes the mixture and the reference images.
pub fn write_simulation(dir: &Path, spec: &ScenarioSpec, sim: &Simulation) -> CliResult<Vec<PathBuf>> {
    let rate = wav_rate(spec.sample_rate)?;
    let mut outputs = vec![dir.join(MIXTURE_FILE)];
    write_wav(&outputs[0], &sim.mics, rate)?;
    for (i, img) in sim.images.iter().enumerate() {
        let path = dir.join(image_file(i));
        write_wav(&path, std::slice::from_ref(img), rate)?;
        outputs.push(path);
    }
    Ok(outputs)
}

pub fn cmd_simulate(config_path: &Path) -> CliResult<Vec<PathBuf>> {
    let text = read_text(config_path)?;
    let doc: SimulateConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let base = config_path.parent().unwrap_or(Path::new("")).to_path_buf();
    let (spec, explicit, seed_source) = doc.resolve(env_seed()?)?;
    let signals = load_signals(&spec, doc.signals.as_deref(), &base)?;
    let sim = mixsim::simulate(&spec, &signals)?;

    let dir = rebase(&base, &doc.output_dir);
    let mut outputs = write_simulation(&dir, &spec, &sim)?;
    let snr = measured_snr_db(&sim);
    let manifest = SceneManifest {
        command: "simulate",
        version: env!("CARGO_PKG_VERSION"),
        config: &explicit,
        seed_source,
        resolved_scene: &spec,
        target: spec.target.map(|t| t + 1),
        target_doa_deg: spec.target.map(|t| spec.sources[t].doa.to_degrees()),
        measured_snr_db: snr.is_finite().then_some(snr),
        outputs: outputs
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let path = dir.join(SCENE_FILE);
    write_json(&path, &manifest)?;
    outputs.push(path);
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_one_scene_source() {
        let both = r#"{"preset": {"room": 1, "permutation": 1, "target": 2},
            "scene": {"geometry": {"mic_positions": [[0,0,0],[0.1,0,0]]}, "sources": [{"doa_deg": 90, "distance": 1, "signal": 0}],
                      "snr_db": null, "duration": 1, "sample_rate": 8000},
            "output_dir": "o"}"#;
        let doc: SimulateConfig = serde_json::from_str(both).unwrap();
        assert!(doc.resolve(None).is_err());
        let none: SimulateConfig = serde_json::from_str(r#"{"output_dir": "o"}"#).unwrap();
        assert!(none.resolve(None).is_err());
    }

    #[test]
    fn scene_in_degrees_and_one_based() {
        let text = r#"{"scene": {"geometry": {"mic_positions": [[0,0,0],[0.1,0,0]]},
            "sources": [{"doa_deg": 90, "distance": 1, "signal": 0}, {"doa_deg": 0, "distance": 2, "signal": 1}],
            "snr_db": "inf", "duration": 1, "sample_rate": 8000, "target": 2}, "output_dir": "o"}"#;
        let doc: SimulateConfig = serde_json::from_str(text).unwrap();
        let (spec, explicit, src) = doc.resolve(Some(7)).unwrap();
        assert_eq!(spec.target, Some(1));
        assert_eq!(spec.seed, 7);
        assert_eq!(src, SeedSource::Environment);
        assert!((spec.sources[0].doa - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(spec.snr_db.is_infinite());
        assert_eq!(explicit.scene.unwrap().seed, Some(7));
    }

    #[test]
    fn unknown_scene_keys_rejected() {
        let text = r#"{"preset": {"room": 1, "permutation": 1, "target": 2, "rooms": 3}, "output_dir": "o"}"#;
        assert!(serde_json::from_str::<SimulateConfig>(text).is_err());
    }
}
