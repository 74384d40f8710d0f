//! JSON documents accepted by the commands. Angles are given in degrees and
//! converted to radians when a document is resolved.

use std::path::{Path, PathBuf};

use informed_iva::geometry::{ArrayGeometry, ChannelPrior, PriorSpec, QuadraticPrior, Weight};
use informed_iva::source_model::ModelKind;
use informed_iva::solver::{variant_config, variant_info, variant_priors, SolverConfig};
use informed_iva::stft::StftConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable supplying the seed when a document does not set one.
pub const SEED_ENV: &str = "IIVA_SEED";

/// Where the seed of a run came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Config,
    Environment,
    Default,
}

/// Reads the seed override from the environment.
pub fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Config(format!("{SEED_ENV}: {e}"))),
    }
}

pub fn pick_seed(explicit: Option<u64>, env: Option<u64>) -> (u64, SeedSource) {
    match (explicit, env) {
        (Some(s), _) => (s, SeedSource::Config),
        (None, Some(s)) => (s, SeedSource::Environment),
        (None, None) => (0, SeedSource::Default),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticPriorDeg {
    pub doas_deg: Vec<f64>,
    pub lambda_tik: f64,
    pub lambdas: Vec<f64>,
    pub gamma: Weight,
}

impl QuadraticPriorDeg {
    fn to_radians(&self) -> QuadraticPrior {
        QuadraticPrior {
            doas: self.doas_deg.iter().map(|d| d.to_radians()).collect(),
            lambda_tik: self.lambda_tik,
            lambdas: self.lambdas.clone(),
            gamma: self.gamma.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelPriorDeg {
    None,
    QuadraticOne(QuadraticPriorDeg),
    QuadraticNull(QuadraticPriorDeg),
    EuclideanOne { doa_deg: f64, gamma: Weight },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorsDeg {
    pub channels: Vec<ChannelPriorDeg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<QuadraticPriorDeg>,
}

impl PriorsDeg {
    pub fn to_radians(&self) -> PriorSpec {
        PriorSpec {
            channels: self
                .channels
                .iter()
                .map(|c| match c {
                    ChannelPriorDeg::None => ChannelPrior::None,
                    ChannelPriorDeg::QuadraticOne(p) => ChannelPrior::QuadraticOne(p.to_radians()),
                    ChannelPriorDeg::QuadraticNull(p) => {
                        ChannelPrior::QuadraticNull(p.to_radians())
                    }
                    ChannelPriorDeg::EuclideanOne { doa_deg, gamma } => ChannelPrior::EuclideanOne {
                        doa: doa_deg.to_radians(),
                        gamma: gamma.clone(),
                    },
                })
                .collect(),
            background: self.background.as_ref().map(|b| b.to_radians()),
        }
    }
}

/// Solver settings. Unset fields take the variant's defaults, or the
/// library defaults when no variant is named.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_soi: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bases: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_cov: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_margin: Option<f64>,
    /// Prior weight override for a named variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_tik: Option<f64>,
    /// Weight of the target direction in a quadratic prior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_one: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    /// Multichannel WAV, one channel per microphone.
    pub input: PathBuf,
    pub output_dir: PathBuf,
}

/// Document read by `separate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<u8>,
    /// Direction of the source to extract, used by variant priors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_doa_deg: Option<f64>,
    #[serde(default)]
    pub solver: SolverSection,
    /// Explicit priors; replace the variant's priors when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<PriorsDeg>,
    pub geometry: ArrayGeometry,
    #[serde(default)]
    pub stft: StftConfig,
    pub io: IoSection,
}

/// Variant defaults aimed at `doa` (radians) with the overrides of `s` applied.
pub fn variant_solver(id: u8, m: usize, doa: f64, s: &SolverSection) -> CliResult<SolverConfig> {
    let info = variant_info(id)?;
    let mut cfg = variant_config(id, m, doa)?;
    if s.gamma.is_some() || s.lambda_tik.is_some() || s.lambda_one.is_some() {
        cfg.priors = variant_priors(
            &info,
            m,
            doa,
            s.gamma.unwrap_or(info.gamma),
            s.lambda_tik.or(info.lambda_tik),
            s.lambda_one.or(info.lambda_one),
        )?;
    }
    if let Some(n) = s.num_soi {
        if n != cfg.num_soi {
            return Err(CliError::Config(format!(
                "variant {id} has {} sources of interest, config asks for {n}",
                cfg.num_soi
            )));
        }
    }
    apply_overrides(&mut cfg, s);
    Ok(cfg)
}

/// Copies the scalar settings of `s` that are present onto `cfg`.
fn apply_overrides(cfg: &mut SolverConfig, s: &SolverSection) {
    if let Some(v) = s.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = s.model {
        cfg.model.kind = v;
    }
    if let Some(v) = s.beta {
        cfg.model.beta = v;
    }
    if let Some(v) = s.bases {
        cfg.model.bases = v;
    }
    if let Some(v) = s.eps_cov {
        cfg.eps_cov = v;
    }
    if let Some(v) = s.input_level {
        cfg.input_level = Some(v);
    }
    if let Some(v) = s.prior_margin {
        cfg.prior_margin = Some(v);
    }
}

/// A run configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub solver: SolverConfig,
    pub stft: StftConfig,
    pub geometry: ArrayGeometry,
    pub seed_source: SeedSource,
    /// Input to the document with all scalar defaults written out.
    pub explicit: RunConfig,
}

fn parse_error(path: &Path, e: serde_json::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

/// Parses a run document, or the `config` member of a run manifest.
pub fn parse_run_config(text: &str, path: &Path) -> CliResult<RunConfig> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_error(path, e))?;
    let doc = match value {
        serde_json::Value::Object(mut map) if map.contains_key("outputs") => map
            .remove("config")
            .ok_or_else(|| CliError::Config(format!("{}: manifest without config", path.display())))?,
        other => other,
    };
    serde_json::from_value(doc).map_err(|e| parse_error(path, e))
}

/// Makes relative paths relative to `base`.
pub fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn resolve(&self, env_seed: Option<u64>) -> CliResult<ResolvedRun> {
        self.geometry.validate()?;
        self.stft.validate()?;
        let m = self.geometry.num_mics();
        let s = &self.solver;
        let (seed, seed_source) = pick_seed(s.seed, env_seed);

        let mut cfg = match self.variant {
            Some(id) => {
                let doa = match (self.target_doa_deg, &self.priors) {
                    (Some(d), _) => d.to_radians(),
                    (None, Some(_)) => 0.0,
                    (None, None) => {
                        return Err(CliError::Config(format!(
                            "variant {id} needs target_doa_deg or explicit priors"
                        )))
                    }
                };
                variant_solver(id, m, doa, s)?
            }
            None => {
                if s.gamma.is_some() || s.lambda_tik.is_some() || s.lambda_one.is_some() {
                    return Err(CliError::Config(
                        "gamma and lambda overrides need a variant; use an explicit priors block"
                            .into(),
                    ));
                }
                let num_soi = s.num_soi.unwrap_or(m);
                let mut cfg = SolverConfig {
                    num_soi,
                    priors: PriorSpec::none(num_soi),
                    ..SolverConfig::default()
                };
                apply_overrides(&mut cfg, s);
                cfg
            }
        };
        if let Some(p) = &self.priors {
            cfg.priors = p.to_radians();
        }
        cfg.seed = seed;
        cfg.validate()?;
        if cfg.num_soi > m {
            return Err(CliError::Config(format!(
                "{} sources of interest need at least as many microphones, array has {m}",
                cfg.num_soi
            )));
        }

        let mut explicit = self.clone();
        explicit.solver = SolverSection {
            max_iters: Some(cfg.max_iters),
            num_soi: Some(cfg.num_soi),
            model: Some(cfg.model.kind),
            beta: Some(cfg.model.beta),
            bases: Some(cfg.model.bases),
            eps_cov: Some(cfg.eps_cov),
            seed: Some(seed),
            input_level: cfg.input_level,
            prior_margin: cfg.prior_margin,
            ..s.clone()
        };
        if let Some(id) = self.variant {
            let info = variant_info(id)?;
            explicit.solver.gamma = Some(s.gamma.unwrap_or(info.gamma));
            explicit.solver.lambda_tik = s.lambda_tik.or(info.lambda_tik);
            explicit.solver.lambda_one = s.lambda_one.or(info.lambda_one);
        }
        Ok(ResolvedRun {
            solver: cfg,
            stft: self.stft,
            geometry: self.geometry.clone(),
            seed_source,
            explicit,
        })
    }
}
