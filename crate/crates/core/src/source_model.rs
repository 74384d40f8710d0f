//! Statistical models of the sources of interest and their MM weights.
//!
//! Every model exposes a per-(bin, frame) variance `r` and a weight `phi`
//! that scales the frame's contribution to the weighted covariance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::types::{DemixedVariance, DemixingState, SpectrogramTensor};

/// Floor on the demixed variance; additive and relative to the bin mean for NMF.
pub const EPS_R: f64 = 1e-12;
/// Floor on NMF bases and activations.
pub const EPS_NMF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Spherical generalized Gaussian with shape `beta`.
    Ggd,
    /// Time-varying Gaussian with broadband variance; the `beta = 2` member.
    TvGauss,
    /// Low-rank variance `(sum_b t v)^beta` per bin.
    Nmf,
}

/// NMF parameters for every source-of-interest channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfState {
    pub bases: usize,
    pub num_freqs: usize,
    pub num_frames: usize,
    /// `t[q][k * B + b]`.
    pub t: Vec<Vec<f64>>,
    /// `v[q][b * N + n]`.
    pub v: Vec<Vec<f64>>,
}

impl NmfState {
    /// Uniform(0,1) initialization, floored.
    pub fn random(
        num_soi: usize,
        bases: usize,
        num_freqs: usize,
        num_frames: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| rng.random::<f64>().max(EPS_NMF))
                .collect()
        };
        let mut t = Vec::with_capacity(num_soi);
        let mut v = Vec::with_capacity(num_soi);
        for _ in 0..num_soi {
            t.push(draw(num_freqs * bases));
            v.push(draw(bases * num_frames));
        }
        Self {
            bases,
            num_freqs,
            num_frames,
            t,
            v,
        }
    }

    /// `sum_b t_{k,b} v_{b,n}` for channel `q`, laid out `k * N + n`.
    pub fn low_rank(&self, q: usize) -> Vec<f64> {
        let (kk, nn, bb) = (self.num_freqs, self.num_frames, self.bases);
        let (t, v) = (&self.t[q], &self.v[q]);
        let mut out = vec![0.0; kk * nn];
        for k in 0..kk {
            let row = &mut out[k * nn..(k + 1) * nn];
            for b in 0..bb {
                let tk = t[k * bb + b];
                let vb = &v[b * nn..(b + 1) * nn];
                for (o, vv) in row.iter_mut().zip(vb) {
                    *o += tk * vv;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    pub kind: ModelKind,
    pub beta: f64,
    pub nmf: Option<NmfState>,
}

impl SourceModel {
    pub fn ggd(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self {
            kind: ModelKind::Ggd,
            beta,
            nmf: None,
        })
    }

    pub fn tv_gauss() -> Self {
        Self {
            kind: ModelKind::TvGauss,
            beta: 2.0,
            nmf: None,
        }
    }

    pub fn nmf(
        beta: f64,
        bases: usize,
        num_soi: usize,
        num_freqs: usize,
        num_frames: usize,
        seed: u64,
    ) -> Result<Self> {
        check_beta(beta)?;
        if bases == 0 {
            return Err(Error::InvalidConfig("NMF needs at least one basis".into()));
        }
        Ok(Self {
            kind: ModelKind::Nmf,
            beta,
            nmf: Some(NmfState::random(num_soi, bases, num_freqs, num_frames, seed)),
        })
    }

    /// Shape actually used by the weights; the time-varying Gaussian pins it to 2.
    pub fn effective_beta(&self) -> f64 {
        match self.kind {
            ModelKind::TvGauss => 2.0,
            _ => self.beta,
        }
    }

    fn nmf_state_mut(&mut self) -> Result<&mut NmfState> {
        match (&self.kind, &mut self.nmf) {
            (ModelKind::Nmf, Some(s)) => Ok(s),
            _ => Err(Error::WrongModel("operation requires the NMF model")),
        }
    }

    /// Variance of channel `q` from its demixed spectrum (`s[k * N + n]`).
    pub fn channel_variance(&self, q: usize, s: &[C64], num_freqs: usize) -> Vec<f64> {
        let nn = s.len() / num_freqs;
        match self.kind {
            ModelKind::Ggd | ModelKind::TvGauss => {
                let r = broadband_norm(s, num_freqs);
                let mut out = Vec::with_capacity(s.len());
                for _ in 0..num_freqs {
                    out.extend(r.iter().map(|v| v.max(EPS_R)));
                }
                debug_assert_eq!(out.len(), num_freqs * nn);
                out
            }
            ModelKind::Nmf => {
                let st = self.nmf.as_ref().expect("NMF model without state");
                modeled_variance(st, q, self.beta)
            }
        }
    }

    /// Weight of channel `q` from its variance.
    pub fn channel_weights(&self, r: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::Ggd | ModelKind::TvGauss => {
                let e = self.effective_beta() - 2.0;
                if e == 0.0 {
                    vec![1.0; r.len()]
                } else {
                    r.iter().map(|x| x.powf(e)).collect()
                }
            }
            ModelKind::Nmf => r.iter().map(|x| 1.0 / x).collect(),
        }
    }

    /// Frame-averaged score `(1/N) sum_n G(s_n)` of channel `q`.
    ///
    /// The GGD score is `(2/beta) ||s||^beta`, scaled so that a weighted
    /// covariance with `phi = r^(beta-2)` is its exact quadratic majorizer.
    pub fn channel_score(&self, q: usize, s: &[C64], num_freqs: usize) -> f64 {
        let nn = (s.len() / num_freqs) as f64;
        match self.kind {
            ModelKind::Ggd | ModelKind::TvGauss => {
                let beta = self.effective_beta();
                let r = broadband_norm(s, num_freqs);
                r.iter().map(|x| x.powf(beta)).sum::<f64>() * (2.0 / beta) / nn
            }
            ModelKind::Nmf => {
                let var = self.channel_variance(q, s, num_freqs);
                s.iter()
                    .zip(&var)
                    .map(|(y, v)| v.ln() + y.norm_sqr() / v)
                    .sum::<f64>()
                    / nn
            }
        }
    }

    /// One multiplicative update of the bases then the activations of channel `q`.
    pub fn nmf_update_channel(&mut self, q: usize, s: &[C64]) -> Result<()> {
        let beta = self.beta;
        let st = self.nmf_state_mut()?;
        let (kk, nn, bb) = (st.num_freqs, st.num_frames, st.bases);
        if s.len() != kk * nn {
            return Err(Error::DimensionMismatch(format!(
                "channel spectrum has {} entries, NMF expects {}",
                s.len(),
                kk * nn
            )));
        }
        let power: Vec<f64> = s.iter().map(|y| y.norm_sqr()).collect();

        // Bases.
        let r = modeled_variance(st, q, beta);
        {
            let (t, v) = (&mut st.t[q], &st.v[q]);
            for k in 0..kk {
                let rk = &r[k * nn..(k + 1) * nn];
                let pk = &power[k * nn..(k + 1) * nn];
                for b in 0..bb {
                    let vb = &v[b * nn..(b + 1) * nn];
                    let (mut num, mut den) = (0.0, 0.0);
                    for n in 0..nn {
                        num += pk[n] * vb[n] / (rk[n] * rk[n]);
                        den += vb[n] / rk[n];
                    }
                    let tk = &mut t[k * bb + b];
                    *tk = (*tk * (num / den).sqrt()).max(EPS_NMF);
                }
            }
        }

        // Activations, with the refreshed bases.
        let r = modeled_variance(st, q, beta);
        {
            let (t, v) = (&st.t[q], &mut st.v[q]);
            for b in 0..bb {
                for n in 0..nn {
                    let (mut num, mut den) = (0.0, 0.0);
                    for k in 0..kk {
                        let rr = r[k * nn + n];
                        let tk = t[k * bb + b];
                        num += power[k * nn + n] * tk / (rr * rr);
                        den += tk / rr;
                    }
                    let vb = &mut v[b * nn + n];
                    *vb = (*vb * (num / den).sqrt()).max(EPS_NMF);
                }
            }
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("shape parameter {beta} must be positive")))
    }
}

/// `(sum_b t v)^beta` plus `EPS_R` times its mean over the bin's frames.
///
/// The floor is added rather than clamped so the multiplicative updates still
/// majorize the floored cost, and it is relative so that normalization stays
/// cost-neutral.
fn modeled_variance(st: &NmfState, q: usize, beta: f64) -> Vec<f64> {
    let nn = st.num_frames;
    let mut r: Vec<f64> = st.low_rank(q).into_iter().map(|x| x.powf(beta)).collect();
    for bin in r.chunks_exact_mut(nn) {
        let mean = bin.iter().sum::<f64>() / nn as f64;
        let floor = (EPS_R * mean).max(f64::MIN_POSITIVE);
        bin.iter_mut().for_each(|x| *x += floor);
    }
    r
}

/// `||s_n||_2` over all bins, per frame, unfloored.
fn broadband_norm(s: &[C64], num_freqs: usize) -> Vec<f64> {
    let nn = s.len() / num_freqs;
    let mut acc = vec![0.0; nn];
    for k in 0..num_freqs {
        for (a, y) in acc.iter_mut().zip(&s[k * nn..(k + 1) * nn]) {
            *a += y.norm_sqr();
        }
    }
    acc.iter_mut().for_each(|a| *a = a.sqrt());
    acc
}

/// Channel `q` of a tensor, laid out `k * N + n`.
pub fn channel_spectrum(s: &SpectrogramTensor, q: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(s.num_freqs() * s.num_frames());
    for k in 0..s.num_freqs() {
        for n in 0..s.num_frames() {
            out.push(s.get(k, n, q));
        }
    }
    out
}

/// Variances `r_{q,k,n}` of every channel of `s`.
pub fn demixed_variance(model: &SourceModel, s: &SpectrogramTensor) -> DemixedVariance {
    let values = (0..s.num_channels())
        .map(|q| model.channel_variance(q, &channel_spectrum(s, q), s.num_freqs()))
        .collect();
    DemixedVariance::new(values, s.num_freqs(), s.num_frames())
}

/// Weights `phi_{q,k,n}` for the given variances.
pub fn weighting_factor(model: &SourceModel, r: &DemixedVariance) -> DemixedVariance {
    let values = (0..r.num_channels())
        .map(|q| model.channel_weights(r.channel(q)))
        .collect();
    DemixedVariance::new(values, r.num_freqs(), r.num_frames())
}

/// NMF update for every channel of `s`.
pub fn nmf_update(model: &mut SourceModel, s: &SpectrogramTensor) -> Result<()> {
    for q in 0..s.num_channels() {
        model.nmf_update_channel(q, &channel_spectrum(s, q))?;
    }
    Ok(())
}

/// Rescales every source-of-interest channel to unit average power.
///
/// Filters are divided by `lambda_q` and bases by `lambda_q^(2/beta)`, which
/// keeps the ratio of demixed power to modeled variance unchanged.
pub fn normalize_ilrma(
    model: &mut SourceModel,
    w: &mut DemixingState,
    s: &SpectrogramTensor,
) -> Result<()> {
    let beta = model.beta;
    let st = model.nmf_state_mut()?;
    if s.num_channels() != w.num_soi() || st.t.len() != w.num_soi() {
        return Err(Error::DimensionMismatch(
            "normalization needs one demixed channel per source of interest".into(),
        ));
    }
    let count = (s.num_freqs() * s.num_frames()) as f64;
    for q in 0..w.num_soi() {
        let power: f64 = channel_spectrum(s, q).iter().map(|y| y.norm_sqr()).sum::<f64>() / count;
        let lambda = power.sqrt();
        if !(lambda > 0.0) || !lambda.is_finite() {
            continue;
        }
        for k in 0..w.num_freqs() {
            let m = w.matrix_mut(k);
            for j in 0..m.ncols() {
                m[(q, j)] /= lambda;
            }
        }
        let tscale = lambda.powf(2.0 / beta);
        for t in &mut st.t[q] {
            *t = (*t / tscale).max(EPS_NMF);
        }
    }
    Ok(())
}
