//! Free-field steering vectors and the spatial priors built from them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_outer, hermitian_eigenvalues, quad_form, CMatrix, CVector, C64};
use crate::types::DemixingState;

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

/// Microphone positions in meters. Microphone 0 is the phase reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    pub mic_positions: Vec<[f64; 3]>,
    #[serde(default = "default_speed")]
    pub speed_of_sound: f64,
}

fn default_speed() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

impl ArrayGeometry {
    /// Uniform linear array along the x axis starting at the origin.
    pub fn uniform_linear(num_mics: usize, spacing: f64) -> Self {
        Self {
            mic_positions: (0..num_mics)
                .map(|m| [m as f64 * spacing, 0.0, 0.0])
                .collect(),
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
        }
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mic_positions.is_empty() {
            return Err(Error::InvalidConfig("array has no microphones".into()));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::InvalidConfig("speed of sound must be positive".into()));
        }
        for (i, a) in self.mic_positions.iter().enumerate() {
            for b in &self.mic_positions[i + 1..] {
                if a == b {
                    return Err(Error::InvalidConfig("microphone positions coincide".into()));
                }
            }
        }
        Ok(())
    }

    /// Distance of every microphone to the reference microphone.
    pub fn reference_distances(&self) -> Vec<f64> {
        let r1 = self.mic_positions[0];
        self.mic_positions
            .iter()
            .map(|r| {
                ((r[0] - r1[0]).powi(2) + (r[1] - r1[1]).powi(2) + (r[2] - r1[2]).powi(2)).sqrt()
            })
            .collect()
    }
}

/// Plane-wave steering vector `[exp(j 2 pi f d_m cos(theta) / c)]_m`.
///
/// `theta` is measured from the array axis; `pi/2` is broadside.
pub fn steering_vector(geom: &ArrayGeometry, freq_hz: f64, theta: f64) -> CVector {
    let scale = 2.0 * PI * freq_hz / geom.speed_of_sound * theta.cos();
    let d = geom.reference_distances();
    CVector::from_iterator(
        d.len(),
        d.iter().enumerate().map(|(m, dist)| {
            if m == 0 {
                C64::new(1.0, 0.0)
            } else {
                C64::from_polar(1.0, scale * dist)
            }
        }),
    )
}

/// Target of the Euclidean prior on `w_k^q`.
pub fn euclidean_prior_target(geom: &ArrayGeometry, freq_hz: f64, theta: f64) -> CVector {
    steering_vector(geom, freq_hz, theta)
}

fn directional_sum(
    geom: &ArrayGeometry,
    freq_hz: f64,
    doas: &[f64],
    weights: &[f64],
) -> Result<CMatrix> {
    if doas.len() != weights.len() {
        return Err(Error::InvalidConfig(format!(
            "{} directions but {} weights",
            doas.len(),
            weights.len()
        )));
    }
    let m = geom.num_mics();
    let mut acc = CMatrix::zeros(m, m);
    for (theta, lambda) in doas.iter().zip(weights) {
        let h = steering_vector(geom, freq_hz, *theta);
        add_outer(&mut acc, h.as_slice(), *lambda);
    }
    Ok(acc)
}

/// `lambda_tik I + sum_i lambda_i h_i h_i^H`: penalizes response toward `doas`.
pub fn precision_null(
    geom: &ArrayGeometry,
    freq_hz: f64,
    doas: &[f64],
    lambda_tik: f64,
    weights: &[f64],
) -> Result<CMatrix> {
    if !(lambda_tik > 0.0) || weights.iter().any(|l| *l < 0.0) {
        return Err(Error::InvalidConfig(
            "null prior needs lambda_tik > 0 and nonnegative direction weights".into(),
        ));
    }
    let m = geom.num_mics();
    Ok(CMatrix::identity(m, m) * C64::new(lambda_tik, 0.0)
        + directional_sum(geom, freq_hz, doas, weights)?)
}

/// `lambda_tik I - sum_i lambda_i h_i h_i^H`: rewards response toward `doas`.
/// May be indefinite.
pub fn precision_one(
    geom: &ArrayGeometry,
    freq_hz: f64,
    doas: &[f64],
    lambda_tik: f64,
    weights: &[f64],
) -> Result<CMatrix> {
    if !(lambda_tik > 0.0) {
        return Err(Error::InvalidConfig("one prior needs lambda_tik > 0".into()));
    }
    let m = geom.num_mics();
    Ok(CMatrix::identity(m, m) * C64::new(lambda_tik, 0.0)
        - directional_sum(geom, freq_hz, doas, weights)?)
}

/// A prior weight that is either constant or given per frequency bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Constant(f64),
    PerFrequency(Vec<f64>),
}

impl Weight {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            Weight::Constant(g) => *g,
            Weight::PerFrequency(g) => g[k],
        }
    }

    fn validate(&self, num_freqs: Option<usize>) -> Result<()> {
        let ok = match self {
            Weight::Constant(g) => *g >= 0.0 && g.is_finite(),
            Weight::PerFrequency(g) => {
                g.iter().all(|v| *v >= 0.0 && v.is_finite())
                    && num_freqs.map_or(true, |k| g.len() == k)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "prior weights must be finite, nonnegative and cover every bin".into(),
            ))
        }
    }
}

impl From<f64> for Weight {
    fn from(g: f64) -> Self {
        Weight::Constant(g)
    }
}

/// Quadratic prior parameters: directions (radians) with per-direction weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticPrior {
    pub doas: Vec<f64>,
    pub lambda_tik: f64,
    pub lambdas: Vec<f64>,
    pub gamma: Weight,
}

/// Prior on one source-of-interest filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelPrior {
    None,
    QuadraticOne(QuadraticPrior),
    QuadraticNull(QuadraticPrior),
    EuclideanOne { doa: f64, gamma: Weight },
}

/// Priors for all source-of-interest channels plus an optional background prior.
/// The background prior is always of the null type.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub channels: Vec<ChannelPrior>,
    #[serde(default)]
    pub background: Option<QuadraticPrior>,
}

impl PriorSpec {
    /// No prior on any of `num_soi` channels.
    pub fn none(num_soi: usize) -> Self {
        Self {
            channels: vec![ChannelPrior::None; num_soi],
            background: None,
        }
    }

    pub fn validate(&self, num_soi: usize, num_freqs: Option<usize>) -> Result<()> {
        if self.channels.len() != num_soi {
            return Err(Error::InvalidConfig(format!(
                "prior covers {} channels, model has {num_soi} sources of interest",
                self.channels.len()
            )));
        }
        for c in &self.channels {
            match c {
                ChannelPrior::None => {}
                ChannelPrior::QuadraticOne(p) | ChannelPrior::QuadraticNull(p) => {
                    validate_quadratic(p, num_freqs)?
                }
                ChannelPrior::EuclideanOne { gamma, .. } => gamma.validate(num_freqs)?,
            }
        }
        if let Some(bg) = &self.background {
            validate_quadratic(bg, num_freqs)?;
        }
        Ok(())
    }
}

fn validate_quadratic(p: &QuadraticPrior, num_freqs: Option<usize>) -> Result<()> {
    if p.doas.len() != p.lambdas.len() {
        return Err(Error::InvalidConfig(
            "each prior direction needs one weight".into(),
        ));
    }
    if !(p.lambda_tik > 0.0) || p.lambdas.iter().any(|l| *l < 0.0) {
        return Err(Error::InvalidConfig(
            "prior needs lambda_tik > 0 and nonnegative weights".into(),
        ));
    }
    p.gamma.validate(num_freqs)
}

/// Per-frequency prior matrices and targets built once for a run.
#[derive(Debug, Clone)]
pub enum BuiltChannelPrior {
    None,
    Quadratic {
        precision: Vec<CMatrix>,
        gamma: Weight,
    },
    Euclidean {
        targets: Vec<CVector>,
        gamma: Weight,
    },
}

#[derive(Debug, Clone)]
pub struct BuiltBackgroundPrior {
    pub precision: Vec<CMatrix>,
    pub gamma: Weight,
}

#[derive(Debug, Clone)]
pub struct BuiltPriors {
    pub channels: Vec<BuiltChannelPrior>,
    pub background: Option<BuiltBackgroundPrior>,
}

/// Smallest eigenvalue of every quadratic precision matrix, for configuration
/// diagnostics. `None` for channels without a quadratic prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionReport {
    pub channel_min_eigenvalue: Vec<Option<f64>>,
    pub background_min_eigenvalue: Option<f64>,
}

impl BuiltPriors {
    pub fn build(spec: &PriorSpec, geom: &ArrayGeometry, freqs: &[f64]) -> Result<Self> {
        spec.validate(spec.channels.len(), Some(freqs.len()))?;
        geom.validate()?;
        let channels = spec
            .channels
            .iter()
            .map(|c| {
                Ok(match c {
                    ChannelPrior::None => BuiltChannelPrior::None,
                    ChannelPrior::QuadraticOne(p) => BuiltChannelPrior::Quadratic {
                        precision: freqs
                            .iter()
                            .map(|f| precision_one(geom, *f, &p.doas, p.lambda_tik, &p.lambdas))
                            .collect::<Result<_>>()?,
                        gamma: p.gamma.clone(),
                    },
                    ChannelPrior::QuadraticNull(p) => BuiltChannelPrior::Quadratic {
                        precision: freqs
                            .iter()
                            .map(|f| precision_null(geom, *f, &p.doas, p.lambda_tik, &p.lambdas))
                            .collect::<Result<_>>()?,
                        gamma: p.gamma.clone(),
                    },
                    ChannelPrior::EuclideanOne { doa, gamma } => BuiltChannelPrior::Euclidean {
                        targets: freqs
                            .iter()
                            .map(|f| euclidean_prior_target(geom, *f, *doa))
                            .collect(),
                        gamma: gamma.clone(),
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let background = spec
            .background
            .as_ref()
            .map(|p| {
                Ok::<_, Error>(BuiltBackgroundPrior {
                    precision: freqs
                        .iter()
                        .map(|f| precision_null(geom, *f, &p.doas, p.lambda_tik, &p.lambdas))
                        .collect::<Result<_>>()?,
                    gamma: p.gamma.clone(),
                })
            })
            .transpose()?;
        Ok(Self {
            channels,
            background,
        })
    }

    pub fn report(&self) -> PrecisionReport {
        let min_eig = |ps: &[CMatrix]| {
            ps.iter()
                .map(|p| hermitian_eigenvalues(p)[0])
                .fold(f64::INFINITY, f64::min)
        };
        PrecisionReport {
            channel_min_eigenvalue: self
                .channels
                .iter()
                .map(|c| match c {
                    BuiltChannelPrior::Quadratic { precision, .. } => Some(min_eig(precision)),
                    _ => None,
                })
                .collect(),
            background_min_eigenvalue: self.background.as_ref().map(|b| min_eig(&b.precision)),
        }
    }
}

/// Penalty split into the source-of-interest part and the background part.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PriorPenalty {
    pub soi: f64,
    pub background: f64,
}

impl PriorPenalty {
    pub fn total(&self) -> f64 {
        self.soi + self.background
    }
}

/// Evaluates the prior terms for the current filters.
///
/// The background term uses the rows `[E_k | -I]` as stored.
pub fn prior_penalty(w: &DemixingState, priors: &BuiltPriors) -> Result<PriorPenalty> {
    if priors.channels.len() != w.num_soi() {
        return Err(Error::DimensionMismatch(format!(
            "{} channel priors for {} sources of interest",
            priors.channels.len(),
            w.num_soi()
        )));
    }
    if priors.background.is_some() && !w.has_background() {
        return Err(Error::DimensionMismatch(
            "background prior without background channels".into(),
        ));
    }
    let mut out = PriorPenalty::default();
    for k in 0..w.num_freqs() {
        for (q, prior) in priors.channels.iter().enumerate() {
            match prior {
                BuiltChannelPrior::None => {}
                BuiltChannelPrior::Quadratic { precision, gamma } => {
                    out.soi += gamma.at(k) * quad_form(&precision[k], &w.filter(k, q));
                }
                BuiltChannelPrior::Euclidean { targets, gamma } => {
                    out.soi += gamma.at(k) * (w.filter(k, q) - &targets[k]).norm_squared();
                }
            }
        }
        if let Some(bg) = &priors.background {
            for q in w.num_soi()..w.num_channels() {
                out.background += bg.gamma.at(k) * quad_form(&bg.precision[k], &w.filter(k, q));
            }
        }
    }
    Ok(out)
}
