//! Registry of the supported algorithm variants and their default parameters.

use serde::{Deserialize, Serialize};

use super::{ModelConfig, SolverConfig};
use crate::error::{Error, Result};
use crate::geometry::{ChannelPrior, PriorSpec, QuadraticPrior, Weight};
use crate::source_model::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorStyle {
    /// Euclidean pull of the target filter toward the steering vector.
    EuclideanOne,
    /// Quadratic reward of the target filter's response toward the target.
    QuadraticOne,
    /// Quadratic penalty on every non-target output's response toward the target.
    /// With a background model the penalty sits on the background filters.
    QuadraticNull,
}

/// One row of the variant table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariantInfo {
    pub id: u8,
    /// One source of interest plus a background model; otherwise `S = M`.
    pub extraction: bool,
    pub prior: PriorStyle,
    pub nmf: bool,
    pub gamma: f64,
    /// `None` where the variant has no quadratic prior.
    pub lambda_tik: Option<f64>,
    pub lambda_one: Option<f64>,
    pub bases: Option<usize>,
    pub max_iters: usize,
    /// Mean microphone power each bin is normalized to; the priors are tuned
    /// against this scale.
    pub input_level: f64,
    pub prior_margin: Option<f64>,
}

impl VariantInfo {
    pub fn background_prior(&self) -> bool {
        self.extraction && self.prior == PriorStyle::QuadraticNull
    }
}

pub const FIRST_VARIANT: u8 = 2;
pub const LAST_VARIANT: u8 = 13;

pub fn variant_ids() -> impl Iterator<Item = u8> {
    FIRST_VARIANT..=LAST_VARIANT
}

pub fn variant_info(id: u8) -> Result<VariantInfo> {
    use PriorStyle::*;
    let (extraction, prior, gamma, tik, one, level, margin) = match id {
        1 => {
            return Err(Error::InvalidConfig(
                "variant 1 is the gradient-descent baseline, which is not provided".into(),
            ))
        }
        2 => (false, EuclideanOne, 0.5, None, None, 1e3, None),
        3 => (false, QuadraticOne, 1.5, Some(1.0), Some(2.0), 100.0, Some(0.1)),
        4 => (false, QuadraticNull, 0.5, Some(1e-3), Some(1.0), 1.0, None),
        5 => (true, EuclideanOne, 2.0, None, None, 1e3, None),
        6 => (true, QuadraticOne, 2.0, Some(1.0), Some(1.5), 100.0, Some(0.1)),
        7 => (true, QuadraticNull, 50.0, Some(1e-3), Some(1.0), 0.1, None),
        8 => (false, EuclideanOne, 5.0, None, None, 100.0, None),
        9 => (false, QuadraticOne, 3.0, Some(1.0), Some(1.5), 1.0, Some(0.3)),
        10 => (false, QuadraticNull, 5.0, Some(1e-3), Some(1.0), 0.01, None),
        11 => (true, EuclideanOne, 2.5, None, None, 10.0, None),
        12 => (true, QuadraticOne, 2.5, Some(1.0), Some(1.0), 1.0, None),
        13 => (true, QuadraticNull, 100.0, Some(1e-3), Some(1.0), 1.0, None),
        _ => return Err(Error::InvalidConfig(format!("unknown variant {id}"))),
    };
    let nmf = id >= 8;
    Ok(VariantInfo {
        id,
        extraction,
        prior,
        nmf,
        gamma,
        lambda_tik: tik,
        lambda_one: one,
        bases: nmf.then_some(2),
        max_iters: 100,
        input_level: level,
        prior_margin: margin,
    })
}

/// Builds the prior layout of a variant aimed at `target_doa` (radians).
pub fn variant_priors(
    info: &VariantInfo,
    num_channels: usize,
    target_doa: f64,
    gamma: f64,
    lambda_tik: Option<f64>,
    lambda_one: Option<f64>,
) -> Result<PriorSpec> {
    let num_soi = if info.extraction { 1 } else { num_channels };
    let quad = || -> Result<QuadraticPrior> {
        Ok(QuadraticPrior {
            doas: vec![target_doa],
            lambda_tik: lambda_tik.ok_or_else(|| {
                Error::InvalidConfig(format!("variant {} needs lambda_tik", info.id))
            })?,
            lambdas: vec![lambda_one.ok_or_else(|| {
                Error::InvalidConfig(format!("variant {} needs a direction weight", info.id))
            })?],
            gamma: Weight::Constant(gamma),
        })
    };
    let mut spec = PriorSpec::none(num_soi);
    match info.prior {
        PriorStyle::EuclideanOne => {
            spec.channels[0] = ChannelPrior::EuclideanOne {
                doa: target_doa,
                gamma: Weight::Constant(gamma),
            }
        }
        PriorStyle::QuadraticOne => spec.channels[0] = ChannelPrior::QuadraticOne(quad()?),
        PriorStyle::QuadraticNull if info.extraction => spec.background = Some(quad()?),
        PriorStyle::QuadraticNull => {
            for c in spec.channels.iter_mut().skip(1) {
                *c = ChannelPrior::QuadraticNull(quad()?);
            }
        }
    }
    Ok(spec)
}

/// Full solver configuration for a variant with its default parameters.
pub fn variant_config(id: u8, num_channels: usize, target_doa: f64) -> Result<SolverConfig> {
    let info = variant_info(id)?;
    if num_channels < 2 {
        return Err(Error::InvalidConfig(
            "variants need at least two microphones".into(),
        ));
    }
    let priors = variant_priors(
        &info,
        num_channels,
        target_doa,
        info.gamma,
        info.lambda_tik,
        info.lambda_one,
    )?;
    Ok(SolverConfig {
        variant: Some(id),
        max_iters: info.max_iters,
        num_soi: if info.extraction { 1 } else { num_channels },
        model: ModelConfig {
            kind: if info.nmf { ModelKind::Nmf } else { ModelKind::Ggd },
            beta: 1.0,
            bases: info.bases.unwrap_or(2),
        },
        priors,
        input_level: Some(info.input_level),
        prior_margin: info.prior_margin,
        ..SolverConfig::default()
    })
}
