//! Time-domain convenience wrappers around analysis, solving and evaluation.

use crate::error::Result;
use crate::geometry::ArrayGeometry;
use crate::metrics::{evaluate, improvement, EvalResult};
use crate::solver::{run, RunOutput, SolverConfig};
use crate::stft::{analyze, synthesize_to_len, StftConfig};

/// Result of [`separate`]: time-domain estimates plus the solver output.
#[derive(Debug, Clone)]
pub struct Separation {
    pub estimates: Vec<Vec<f64>>,
    pub run: RunOutput,
}

/// Separates equal-length microphone signals; estimates have the input length.
pub fn separate(
    mics: &[Vec<f64>],
    stft: &StftConfig,
    solver: &SolverConfig,
    geom: Option<&ArrayGeometry>,
) -> Result<Separation> {
    let x = analyze(mics, stft)?;
    let out = run(&x, solver, geom)?;
    let len = mics[0].len();
    let estimates = synthesize_to_len(&out.soi, stft, len)?;
    Ok(Separation {
        estimates,
        run: out,
    })
}

/// Metrics of one estimate and their improvement over the reference microphone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelScore {
    pub processed: EvalResult,
    pub unprocessed: EvalResult,
    pub delta: EvalResult,
}

/// Scores `estimate` against source images, relative to `mixture`.
pub fn score(
    estimate: &[f64],
    mixture: &[f64],
    images: &[Vec<f64>],
    target: usize,
) -> Result<ChannelScore> {
    let processed = evaluate(estimate, images, target)?;
    let unprocessed = evaluate(mixture, images, target)?;
    Ok(ChannelScore {
        processed,
        unprocessed,
        delta: improvement(&processed, &unprocessed),
    })
}

/// Index of the image most correlated (normalized) with `estimate`.
pub fn dominant_source(estimate: &[f64], images: &[Vec<f64>]) -> usize {
    let ee: f64 = estimate.iter().map(|v| v * v).sum();
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let ii: f64 = img.iter().map(|v| v * v).sum();
            let c: f64 = estimate.iter().zip(img).map(|(a, b)| a * b).sum();
            (i, c.abs() / (ee * ii).sqrt().max(f64::MIN_POSITIVE))
        })
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
        .0
}
