//! Energy-ratio separation measures with gain-only projections.
//!
//! The estimate is projected onto the target reference and onto the span of
//! all references with one coefficient per reference (no distortion filters).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratios above this are reported as this many dB.
pub const METRIC_CAP_DB: f64 = 200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub target: Vec<f64>,
    pub interference: Vec<f64>,
    pub artifacts: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least-squares coefficients of `estimate` on the references.
pub fn projection_coefficients(estimate: &[f64], references: &[Vec<f64>]) -> Result<Vec<f64>> {
    let q = references.len();
    let gram = DMatrix::from_fn(q, q, |i, j| dot(&references[i], &references[j]));
    let rhs = DVector::from_fn(q, |i, _| dot(&references[i], estimate));
    // Reject near-dependent sets before solving.
    let scale = (0..q).map(|i| gram[(i, i)]).fold(0.0_f64, f64::max);
    let ev = gram.clone().symmetric_eigenvalues();
    let min_ev = ev.iter().copied().fold(f64::INFINITY, f64::min);
    if !(scale > 0.0) || min_ev <= 1e-12 * scale {
        return Err(Error::RankDeficient);
    }
    let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Splits `estimate` into target, interference and artifact components.
pub fn decompose(estimate: &[f64], references: &[Vec<f64>], target: usize) -> Result<Decomposition> {
    if references.is_empty() {
        return Err(Error::InvalidInput("no references".into()));
    }
    if target >= references.len() {
        return Err(Error::InvalidInput(format!(
            "target {target} outside {} references",
            references.len()
        )));
    }
    if references.iter().any(|r| r.len() != estimate.len()) {
        return Err(Error::DimensionMismatch(
            "estimate and references differ in length".into(),
        ));
    }
    let coeffs = projection_coefficients(estimate, references)?;
    let t_ref = &references[target];
    let t_energy = dot(t_ref, t_ref);
    let alpha = dot(estimate, t_ref) / t_energy;
    let s_target: Vec<f64> = t_ref.iter().map(|v| alpha * v).collect();
    let mut proj = vec![0.0; estimate.len()];
    for (c, r) in coeffs.iter().zip(references) {
        for (p, v) in proj.iter_mut().zip(r) {
            *p += c * v;
        }
    }
    let interference = proj.iter().zip(&s_target).map(|(p, s)| p - s).collect();
    let artifacts = estimate.iter().zip(&proj).map(|(e, p)| e - p).collect();
    Ok(Decomposition {
        target: s_target,
        interference,
        artifacts,
    })
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return METRIC_CAP_DB;
    }
    (10.0 * (num / den).log10()).min(METRIC_CAP_DB)
}

pub fn sdr_sir_sar(d: &Decomposition) -> Result<EvalResult> {
    let e_t: f64 = d.target.iter().map(|v| v * v).sum();
    if !(e_t > 0.0) {
        return Err(Error::UndefinedMetric("target component has zero energy"));
    }
    let e_i: f64 = d.interference.iter().map(|v| v * v).sum();
    let e_a: f64 = d.artifacts.iter().map(|v| v * v).sum();
    let total_err: f64 = d
        .interference
        .iter()
        .zip(&d.artifacts)
        .map(|(i, a)| (i + a) * (i + a))
        .sum();
    let signal: f64 = d
        .target
        .iter()
        .zip(&d.interference)
        .map(|(t, i)| (t + i) * (t + i))
        .sum();
    Ok(EvalResult {
        sdr: ratio_db(e_t, total_err),
        sir: ratio_db(e_t, e_i),
        sar: ratio_db(signal, e_a),
    })
}

/// Convenience wrapper: decomposition followed by the three ratios.
pub fn evaluate(estimate: &[f64], references: &[Vec<f64>], target: usize) -> Result<EvalResult> {
    sdr_sir_sar(&decompose(estimate, references, target)?)
}

/// Elementwise difference in dB.
pub fn improvement(processed: &EvalResult, unprocessed: &EvalResult) -> EvalResult {
    EvalResult {
        sdr: processed.sdr - unprocessed.sdr,
        sir: processed.sir - unprocessed.sir,
        sar: processed.sar - unprocessed.sar,
    }
}
