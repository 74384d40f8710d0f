//! Majorize-minimize solver with iterative-projection updates.

mod cost;
mod updates;
mod variants;

pub use cost::{cost, demix_channel, CostBreakdown};
pub use updates::{
    bg_update, ip_update, minimal_distortion_rescale, vectorwise_update_euclidean,
    weighted_covariance, weighted_covariance_bin,
};
pub use variants::{
    variant_config, variant_ids, variant_info, variant_priors, PriorStyle, VariantInfo,
    FIRST_VARIANT, LAST_VARIANT,
};

use std::io::Write;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, BuiltChannelPrior, BuiltPriors, PriorSpec, Weight};
use crate::linalg::{hermitian_eigenvalues, max_abs, trace_re, CMatrix, C64};
use crate::source_model::{ModelKind, SourceModel};
use crate::stft::bin_frequencies;
use crate::types::{CovarianceRole, CovarianceSet, DemixingState, SpectrogramTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Number of NMF bases; ignored by the other models.
    #[serde(default = "default_bases")]
    pub bases: usize,
}

fn default_beta() -> f64 {
    1.0
}

fn default_bases() -> usize {
    2
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Ggd,
            beta: 1.0,
            bases: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Variant this configuration was derived from, for bookkeeping only.
    #[serde(default)]
    pub variant: Option<u8>,
    pub max_iters: usize,
    pub num_soi: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub priors: PriorSpec,
    /// Diagonal loading relative to the average microphone power per bin.
    #[serde(default = "default_eps_cov")]
    pub eps_cov: f64,
    #[serde(default)]
    pub seed: u64,
    /// Level of the weighted covariances the input is normalized to, see
    /// [`input_gains`]. `None` runs on the raw data.
    #[serde(default = "default_input_level")]
    pub input_level: Option<f64>,
    /// Target ratio between the negative part of an indefinite quadratic
    /// prior and the expected weighted covariance, see [`margin_gains`].
    #[serde(default)]
    pub prior_margin: Option<f64>,
}

fn default_eps_cov() -> f64 {
    1e-9
}

pub const DEFAULT_INPUT_LEVEL: f64 = 100.0;

fn default_input_level() -> Option<f64> {
    Some(DEFAULT_INPUT_LEVEL)
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            variant: None,
            max_iters: 100,
            num_soi: 1,
            model: ModelConfig::default(),
            priors: PriorSpec::none(1),
            eps_cov: default_eps_cov(),
            seed: 0,
            input_level: default_input_level(),
            prior_margin: None,
        }
    }
}

impl SolverConfig {
    /// Plain blind separation of `num_channels` outputs.
    pub fn unconstrained(num_channels: usize, beta: f64) -> Self {
        Self {
            num_soi: num_channels,
            model: ModelConfig {
                kind: ModelKind::Ggd,
                beta,
                bases: 2,
            },
            priors: PriorSpec::none(num_channels),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.num_soi == 0 {
            return Err(Error::InvalidConfig(
                "at least one source of interest is required".into(),
            ));
        }
        if !(self.model.beta > 0.0) || !self.model.beta.is_finite() {
            return Err(Error::InvalidConfig("beta must be positive".into()));
        }
        if self.model.kind == ModelKind::Nmf && self.model.bases == 0 {
            return Err(Error::InvalidConfig("NMF needs at least one basis".into()));
        }
        if !(self.eps_cov > 0.0) {
            return Err(Error::InvalidConfig("eps_cov must be positive".into()));
        }
        if let Some(l) = self.input_level {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::InvalidConfig("input_level must be positive".into()));
            }
        }
        self.priors.validate(self.num_soi, None)
    }

    fn effective_beta(&self) -> f64 {
        match self.model.kind {
            ModelKind::TvGauss => 2.0,
            _ => self.model.beta,
        }
    }
}

/// Per-bin gains applied to the input before solving.
///
/// Every bin is scaled to a common average microphone power chosen so the
/// weighted covariances settle near `level`: for the broadband models a
/// filter at its optimal scale sees `E{r^beta} = K`, so the power is
/// `level * K^((2 - beta)/beta)`; the NMF model normalizes its outputs to
/// unit power, giving `level` directly. Silent bins keep gain one.
pub fn input_gains(x: &SpectrogramTensor, cfg: &SolverConfig) -> Vec<f64> {
    let kk = x.num_freqs();
    let Some(level) = cfg.input_level else {
        return vec![1.0; kk];
    };
    let target = match cfg.model.kind {
        ModelKind::Nmf => level,
        _ => {
            let beta = cfg.effective_beta();
            level * (kk as f64).powf((2.0 - beta) / beta)
        }
    };
    let m = x.num_channels() as f64;
    let n = x.num_frames() as f64;
    (0..kk)
        .map(|k| {
            let p = x.bin(k).iter().map(|z| z.norm_sqr()).sum::<f64>() / (m * n);
            if p > 0.0 && p.is_finite() {
                (target / p).sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

/// Largest generalized eigenvalue of `-gamma_k P_k` against `scale * C_k / p_k`
/// over all quadratic channel priors, per bin. Zero where every prior is
/// dominated, or where the covariance is degenerate.
fn prior_indefiniteness(xs: &SpectrogramTensor, scale: f64, priors: &BuiltPriors) -> Vec<f64> {
    let kk = xs.num_freqs();
    let m = xs.num_channels();
    let cov = xs.covariances();
    (0..kk)
        .map(|k| {
            let c = &cov.matrices[k];
            let p = trace_re(c) / m as f64;
            if !(p > 0.0) {
                return 0.0;
            }
            let v = c * C64::new(scale / p, 0.0);
            let Some(chol) = load(&v, 1e-9 * scale).cholesky() else {
                return 0.0;
            };
            let Some(l_inv) = chol.l().try_inverse() else {
                return 0.0;
            };
            let mut rho = 0.0_f64;
            for ch in &priors.channels {
                if let BuiltChannelPrior::Quadratic { precision, gamma } = ch {
                    let neg = &precision[k] * C64::new(-gamma.at(k), 0.0);
                    let mut g = &l_inv * neg * l_inv.adjoint();
                    crate::linalg::symmetrize(&mut g);
                    let top = hermitian_eigenvalues(&g)
                        .into_iter()
                        .fold(f64::NEG_INFINITY, f64::max);
                    rho = rho.max(top);
                }
            }
            rho
        })
        .collect()
}

/// Extra per-bin gains for indefinite quadratic priors.
///
/// With the input at `level`, the weighted covariance of bin `k` is close to
/// `level * C_k / p_k`. The largest generalized eigenvalue `rho_k` of
/// `-gamma P_k` against it measures how close `V + gamma P` is to losing
/// definiteness. Each such bin is rescaled so that `rho_k = margin`.
pub fn margin_gains(
    xs: &SpectrogramTensor,
    level: f64,
    margin: f64,
    priors: &BuiltPriors,
) -> Vec<f64> {
    prior_indefiniteness(xs, level, priors)
        .into_iter()
        .map(|rho| if rho > 0.0 { (rho / margin).sqrt() } else { 1.0 })
        .collect()
}

/// Per-bin prior weights for the NMF model.
///
/// NMF weights follow the output power, so the weighted covariance sits near
/// `C_k / p_k` whatever the input scale and input gains cannot restore
/// definiteness. Instead `gamma_k` of every quadratic prior is shrunk in bins
/// where `rho_k > margin` so that `rho_k = margin`.
pub fn margin_priors(xs: &SpectrogramTensor, margin: f64, priors: &BuiltPriors) -> BuiltPriors {
    let shrink: Vec<f64> = prior_indefiniteness(xs, 1.0, priors)
        .into_iter()
        .map(|rho| if rho > margin { margin / rho } else { 1.0 })
        .collect();
    let mut out = priors.clone();
    for ch in &mut out.channels {
        if let BuiltChannelPrior::Quadratic { gamma, .. } = ch {
            *gamma = Weight::PerFrequency(
                shrink.iter().enumerate().map(|(k, s)| gamma.at(k) * s).collect(),
            );
        }
    }
    out
}

/// Worst-case optimality residuals collected during one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct IterationDiagnostics {
    /// `max |w^H M w - 1|` over rows with quadratic or no prior, and
    /// `max |w^H (V~ w - gamma h) - 1|` over rows with a Euclidean prior.
    pub stationarity: f64,
    /// `max |w_p^H M w_q|`, `p != q`, right after the update of row `q`
    /// (rows with quadratic or no prior only).
    pub cross_terms: f64,
    /// `max |W_SOI (C + gamma P) B^H| / ||C||_F` after each background update.
    pub bg_orthogonality: f64,
    /// Retries with increased loading.
    pub retries: usize,
    /// Row updates left out because an indefinite quadratic prior made
    /// `V + gamma P` lose definiteness even after the retry.
    pub skipped: usize,
    /// NMF models only: total cost after the filter and NMF updates but
    /// before the per-iteration rescaling, which is not cost-neutral once a
    /// spatial prior is present.
    pub cost_before_normalization: Option<f64>,
}

impl IterationDiagnostics {
    fn merge(&mut self, o: &IterationDiagnostics) {
        self.stationarity = self.stationarity.max(o.stationarity);
        self.cross_terms = self.cross_terms.max(o.cross_terms);
        self.bg_orthogonality = self.bg_orthogonality.max(o.bg_orthogonality);
        self.retries += o.retries;
        self.skipped += o.skipped;
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Final filters for the raw input, after minimal-distortion scaling.
    pub demixing: DemixingState,
    /// Source-of-interest estimates, `S` channels.
    pub soi: SpectrogramTensor,
    /// Cost before the first iteration and after every iteration.
    pub trace: Vec<CostBreakdown>,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// Filters in the normalized domain the cost trace refers to.
    pub raw_demixing: DemixingState,
    /// Gains that produced the normalized input, see [`input_gains`].
    pub input_gains: Vec<f64>,
    pub model: SourceModel,
}

/// Everything fixed during a run.
struct Problem<'a> {
    x: &'a SpectrogramTensor,
    cov: CovarianceSet,
    eps: Vec<f64>,
    priors: BuiltPriors,
    num_soi: usize,
}

pub(crate) fn scaled_input(x: &SpectrogramTensor, gains: &[f64]) -> SpectrogramTensor {
    let mut out = x.clone();
    let per_bin = x.num_frames() * x.num_channels();
    for (k, chunk) in out.as_mut_slice().chunks_exact_mut(per_bin).enumerate() {
        for z in chunk {
            *z *= gains[k];
        }
    }
    out
}

/// Microphone covariances plus the per-bin loading `eps_k`.
fn loaded_covariances(x: &SpectrogramTensor, eps_rel: f64) -> (CovarianceSet, Vec<f64>) {
    let mut cov = x.covariances();
    let m = x.num_channels() as f64;
    let mean_power =
        cov.matrices.iter().map(trace_re).sum::<f64>() / (m * cov.matrices.len() as f64);
    let floor = eps_rel * mean_power.max(f64::MIN_POSITIVE);
    let eps: Vec<f64> = cov
        .matrices
        .iter()
        .map(|c| (eps_rel * trace_re(c) / m).max(floor))
        .collect();
    for (c, e) in cov.matrices.iter_mut().zip(&eps) {
        for i in 0..c.nrows() {
            c[(i, i)] += C64::new(*e, 0.0);
        }
    }
    cov.role = CovarianceRole::Microphone;
    (cov, eps)
}

fn model_from_config(cfg: &SolverConfig, x: &SpectrogramTensor) -> Result<SourceModel> {
    match cfg.model.kind {
        ModelKind::Ggd => SourceModel::ggd(cfg.model.beta),
        ModelKind::TvGauss => Ok(SourceModel::tv_gauss()),
        ModelKind::Nmf => SourceModel::nmf(
            cfg.model.beta,
            cfg.model.bases,
            cfg.num_soi,
            x.num_freqs(),
            x.num_frames(),
            cfg.seed,
        ),
    }
}

fn load(m: &CMatrix, amount: f64) -> CMatrix {
    let mut out = m.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += C64::new(amount, 0.0);
    }
    out
}

/// Filter `w_q` (conjugated row) of a single matrix.
fn row_filter(w: &CMatrix, q: usize) -> Vec<C64> {
    (0..w.ncols()).map(|j| w[(q, j)].conj()).collect()
}

fn bilinear(a: &[C64], m: &CMatrix, b: &[C64]) -> C64 {
    let n = a.len();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        let mut mb = C64::new(0.0, 0.0);
        for j in 0..n {
            mb += m[(i, j)] * b[j];
        }
        acc += a[i].conj() * mb;
    }
    acc
}

/// Updates row `q` and, with a background model, the background block of one bin.
fn update_bin(
    p: &Problem,
    k: usize,
    wk: &mut CMatrix,
    q: usize,
    phi: &[f64],
) -> Result<IterationDiagnostics> {
    let x = p.x;
    let (m, nn) = (x.num_channels(), x.num_frames());
    let eps = p.eps[k];
    let v = weighted_covariance_bin(x.bin(k), m, &phi[k * nn..(k + 1) * nn], eps);
    let mut diag = IterationDiagnostics::default();

    match &p.priors.channels[q] {
        BuiltChannelPrior::Euclidean { targets, gamma } => {
            let g = gamma.at(k);
            let h = &targets[k];
            let mut vt = load(&v, g);
            let before = wk.clone();
            if vectorwise_update_euclidean(wk, &vt, h, g, q, k).is_err() {
                diag.retries += 1;
                *wk = before;
                vt = load(&vt, 99.0 * eps);
                vectorwise_update_euclidean(wk, &vt, h, g, q, k)?;
            }
            let w = row_filter(wk, q);
            let hv: Vec<C64> = h.iter().copied().collect();
            let res = bilinear(&w, &vt, &w) - bilinear(&w, &CMatrix::identity(m, m), &hv) * g;
            diag.stationarity = (res - C64::new(1.0, 0.0)).norm();
        }
        prior => {
            let mut mq = match prior {
                BuiltChannelPrior::Quadratic { precision, gamma } => {
                    &v + &precision[k] * C64::new(gamma.at(k), 0.0)
                }
                _ => v,
            };
            let quadratic = matches!(prior, BuiltChannelPrior::Quadratic { .. });
            let before = wk.clone();
            if ip_update(wk, &mq, q, None, k).is_err() {
                diag.retries += 1;
                *wk = before.clone();
                mq = load(&mq, 99.0 * eps);
                if let Err(e) = ip_update(wk, &mq, q, None, k) {
                    if !quadratic {
                        return Err(e);
                    }
                    // An indefinite prior leaves the surrogate unbounded along
                    // this row; keeping the filter keeps the cost where it was.
                    *wk = before;
                    diag.skipped += 1;
                    return finish_bin(p, k, wk, diag);
                }
            }
            let wq = row_filter(wk, q);
            diag.stationarity = (bilinear(&wq, &mq, &wq).re - 1.0).abs();
            for r in 0..m {
                if r != q {
                    let wr = row_filter(wk, r);
                    diag.cross_terms = diag.cross_terms.max(bilinear(&wr, &mq, &wq).norm());
                }
            }
        }
    }

    finish_bin(p, k, wk, diag)
}

/// Background update of bin `k`, when there is a background.
fn finish_bin(
    p: &Problem,
    k: usize,
    wk: &mut CMatrix,
    mut diag: IterationDiagnostics,
) -> Result<IterationDiagnostics> {
    let m = p.x.num_channels();
    let eps = p.eps[k];
    let s = p.num_soi;
    if s < m {
        let mut c = p.cov.matrices[k].clone();
        if let Some(bg) = &p.priors.background {
            c += &bg.precision[k] * C64::new(bg.gamma.at(k), 0.0);
        }
        let before = wk.clone();
        if bg_update(wk, s, &c, k).is_err() {
            diag.retries += 1;
            *wk = before;
            c = load(&c, 99.0 * eps);
            bg_update(wk, s, &c, k)?;
        }
        let soi = wk.rows(0, s).into_owned();
        let bgm = wk.rows(s, m - s).into_owned();
        let resid = max_abs(&(soi * &c * bgm.adjoint()));
        diag.bg_orthogonality = resid / p.cov.matrices[k].norm();
    }
    Ok(diag)
}

fn update_channel(
    p: &Problem,
    w: &mut DemixingState,
    q: usize,
    phi: &[f64],
) -> Result<IterationDiagnostics> {
    let mats = w.matrices_mut();
    #[cfg(feature = "parallel")]
    let results: Vec<Result<IterationDiagnostics>> = mats
        .par_iter_mut()
        .enumerate()
        .map(|(k, wk)| update_bin(p, k, wk, q, phi))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<IterationDiagnostics>> = mats
        .iter_mut()
        .enumerate()
        .map(|(k, wk)| update_bin(p, k, wk, q, phi))
        .collect();
    let mut out = IterationDiagnostics::default();
    for r in results {
        out.merge(&r?);
    }
    Ok(out)
}

/// Runs the full iteration on `x` and returns the source-of-interest estimates.
///
/// `geom` is required whenever the configuration carries a spatial prior.
pub fn run(
    x: &SpectrogramTensor,
    cfg: &SolverConfig,
    geom: Option<&ArrayGeometry>,
) -> Result<RunOutput> {
    run_with_observer(x, cfg, geom, |_, _| {})
}

/// Like [`run`], calling `observer(iteration, cost)` after every iteration.
pub fn run_with_observer(
    x: &SpectrogramTensor,
    cfg: &SolverConfig,
    geom: Option<&ArrayGeometry>,
    mut observer: impl FnMut(usize, &CostBreakdown),
) -> Result<RunOutput> {
    cfg.validate()?;
    let m = x.num_channels();
    if cfg.num_soi > m {
        return Err(Error::InvalidPartition {
            num_soi: cfg.num_soi,
            num_channels: m,
        });
    }
    if cfg.priors.background.is_some() && cfg.num_soi == m {
        return Err(Error::InvalidConfig(
            "a background prior needs fewer sources of interest than microphones".into(),
        ));
    }
    let has_prior = cfg.priors.background.is_some()
        || cfg
            .priors
            .channels
            .iter()
            .any(|c| *c != crate::geometry::ChannelPrior::None);
    let freqs = bin_frequencies(x);
    let mut priors = match geom {
        Some(g) => {
            if g.num_mics() != m {
                return Err(Error::DimensionMismatch(format!(
                    "array has {} microphones, data has {m} channels",
                    g.num_mics()
                )));
            }
            BuiltPriors::build(&cfg.priors, g, &freqs)?
        }
        None if has_prior => {
            return Err(Error::InvalidConfig(
                "spatial priors need an array geometry".into(),
            ))
        }
        None => BuiltPriors::build(
            &cfg.priors,
            &ArrayGeometry::uniform_linear(m, 1.0),
            &freqs,
        )?,
    };

    let mut gains = input_gains(x, cfg);
    let mut xs = scaled_input(x, &gains);
    let nmf = cfg.model.kind == ModelKind::Nmf;
    if let (Some(margin), true) = (cfg.prior_margin, nmf) {
        priors = margin_priors(&xs, margin, &priors);
    } else if let (Some(level), Some(margin)) = (cfg.input_level, cfg.prior_margin) {
        let extra = margin_gains(&xs, level, margin, &priors);
        xs = scaled_input(&xs, &extra);
        for (g, e) in gains.iter_mut().zip(&extra) {
            *g *= e;
        }
    }
    let (cov, eps) = loaded_covariances(&xs, cfg.eps_cov);
    let problem = Problem {
        x: &xs,
        cov,
        eps,
        priors,
        num_soi: cfg.num_soi,
    };
    let kk = x.num_freqs();
    let mut model = model_from_config(cfg, x)?;
    let mut w = DemixingState::new(kk, m, cfg.num_soi)?;
    if let Some(level) = cfg.input_level {
        // Start the SOI rows at the output scale they settle to on the
        // normalized input, so early weighted covariances are already near
        // `level` instead of its square root.
        let c = C64::new(level.sqrt().recip(), 0.0);
        for k in 0..kk {
            let wk = w.matrix_mut(k);
            for q in 0..cfg.num_soi {
                let mut row = wk.row_mut(q);
                row *= c;
            }
        }
    }

    let mut trace = Vec::with_capacity(cfg.max_iters + 1);
    let first = cost(&w, &xs, &model, &problem.priors, &problem.cov)?;
    observer(0, &first);
    trace.push(first);
    let mut diagnostics = Vec::with_capacity(cfg.max_iters);

    for it in 1..=cfg.max_iters {
        let mut diag = IterationDiagnostics::default();
        for q in 0..cfg.num_soi {
            let s = demix_channel(&w, &xs, q);
            if model.kind == ModelKind::Nmf {
                model.nmf_update_channel(q, &s)?;
            }
            let r = model.channel_variance(q, &s, kk);
            let phi = model.channel_weights(&r);
            diag.merge(&update_channel(&problem, &mut w, q, &phi)?);
        }
        if model.kind == ModelKind::Nmf {
            let before = cost(&w, &xs, &model, &problem.priors, &problem.cov)?;
            diag.cost_before_normalization = Some(before.j_total);
            let soi = w.apply_rows(&xs, cfg.num_soi)?;
            crate::source_model::normalize_ilrma(&mut model, &mut w, &soi)?;
        }
        let c = cost(&w, &xs, &model, &problem.priors, &problem.cov)?;
        observer(it, &c);
        trace.push(c);
        diagnostics.push(diag);
    }

    let mut raw_scaled = w.clone();
    for (k, g) in gains.iter().enumerate() {
        *raw_scaled.matrix_mut(k) *= C64::new(*g, 0.0);
    }
    let demixing = minimal_distortion_rescale(&raw_scaled)?;
    let soi = demixing.apply_rows(x, cfg.num_soi)?;
    Ok(RunOutput {
        demixing,
        soi,
        trace,
        diagnostics,
        raw_demixing: w,
        input_gains: gains,
        model,
    })
}

/// Writes a cost trace as CSV (CRLF line ends) with header
/// `iter,j_bss,j_bg,j_prior,j_total`. Values round-trip exactly.
pub fn write_trace_csv(mut out: impl Write, trace: &[CostBreakdown]) -> std::io::Result<()> {
    write!(out, "iter,j_bss,j_bg,j_prior,j_total\r\n")?;
    for (i, c) in trace.iter().enumerate() {
        write!(out, "{i},{:e},{:e},{:e},{:e}\r\n", c.j_bss, c.j_bg, c.j_prior, c.j_total)?;
    }
    Ok(())
}
