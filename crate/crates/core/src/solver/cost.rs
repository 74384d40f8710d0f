use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{prior_penalty, BuiltPriors};
use crate::linalg::{log_abs_det, CMatrix, C64};
use crate::source_model::SourceModel;
use crate::types::{CovarianceSet, DemixingState, SpectrogramTensor};

/// Objective split into its terms. `j_total` is `+inf` when some `W_k` is singular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub j_bss: f64,
    pub j_bg: f64,
    pub j_prior: f64,
    pub j_total: f64,
}

impl CostBreakdown {
    fn new(j_bss: f64, j_bg: f64, j_prior: f64) -> Self {
        Self {
            j_bss,
            j_bg,
            j_prior,
            j_total: j_bss + j_bg + j_prior,
        }
    }
}

/// Demixed spectrum of row `q`, laid out `k * N + n`.
pub fn demix_channel(w: &DemixingState, x: &SpectrogramTensor, q: usize) -> Vec<C64> {
    let (kk, nn, m) = (x.num_freqs(), x.num_frames(), x.num_channels());
    let mut out = Vec::with_capacity(kk * nn);
    for k in 0..kk {
        let wk = w.matrix(k);
        let row: Vec<C64> = (0..m).map(|j| wk[(q, j)]).collect();
        for xn in x.bin(k).chunks_exact(m) {
            out.push(row.iter().zip(xn).map(|(a, b)| a * b).sum());
        }
    }
    out
}

/// Evaluates the objective for the current filters and model parameters.
///
/// The background term is the background likelihood with its covariance
/// profiled out, `sum_k log det(B_k (C_k + gamma P_bg) B_k^H)`, which the
/// background update minimizes exactly.
pub fn cost(
    w: &DemixingState,
    x: &SpectrogramTensor,
    model: &SourceModel,
    priors: &BuiltPriors,
    cov: &CovarianceSet,
) -> Result<CostBreakdown> {
    if x.num_channels() != w.num_channels() || x.num_freqs() != w.num_freqs() {
        return Err(Error::DimensionMismatch(
            "data and demixing matrices disagree".into(),
        ));
    }
    if cov.len() != w.num_freqs() {
        return Err(Error::DimensionMismatch(
            "one covariance per bin is required".into(),
        ));
    }
    let kk = w.num_freqs();
    let mut log_det = 0.0;
    for k in 0..kk {
        log_det += log_abs_det(w.matrix(k));
    }
    if log_det == f64::NEG_INFINITY {
        return Ok(CostBreakdown::new(f64::INFINITY, 0.0, 0.0));
    }

    let mut score = 0.0;
    for q in 0..w.num_soi() {
        score += model.channel_score(q, &demix_channel(w, x, q), kk);
    }

    let s = w.num_soi();
    let m = w.num_channels();
    let mut j_bg = 0.0;
    if s < m {
        for k in 0..kk {
            let b = w.matrix(k).rows(s, m - s).into_owned();
            let mut c = cov.matrices[k].clone();
            if let Some(bg) = &priors.background {
                c += &bg.precision[k] * C64::new(bg.gamma.at(k), 0.0);
            }
            let g: CMatrix = &b * c * b.adjoint();
            j_bg += log_abs_det(&g);
        }
    }
    let j_prior = prior_penalty(w, priors)?.soi;
    Ok(CostBreakdown::new(score - 2.0 * log_det, j_bg, j_prior))
}
