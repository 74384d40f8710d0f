//! Per-frequency update kernels. Each works on one `W_k` in place.

use crate::error::{Error, Result};
use crate::linalg::{inverse, solve, symmetrize, CMatrix, CVector, C64};
use crate::types::{CovarianceRole, CovarianceSet, DemixingState, SpectrogramTensor};

/// `(1/N) sum_n phi_n x_n x_n^H + eps I` for one bin.
///
/// `frames` holds `N` consecutive channel vectors of length `m`.
pub fn weighted_covariance_bin(frames: &[C64], m: usize, phi: &[f64], eps: f64) -> CMatrix {
    let nn = phi.len();
    debug_assert_eq!(frames.len(), nn * m);
    let mut acc = vec![C64::new(0.0, 0.0); m * m];
    for (x, &p) in frames.chunks_exact(m).zip(phi) {
        if p == 0.0 {
            continue;
        }
        for i in 0..m {
            let xi = x[i] * p;
            let row = &mut acc[i * m..];
            for j in i..m {
                row[j] += xi * x[j].conj();
            }
        }
    }
    let scale = 1.0 / nn as f64;
    let mut v = CMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let z = acc[i * m + j] * scale;
            v[(i, j)] = z;
            v[(j, i)] = z.conj();
        }
        v[(i, i)] = C64::new(v[(i, i)].re + eps, 0.0);
    }
    symmetrize(&mut v);
    v
}

/// Weighted covariances of every bin for one output channel.
///
/// `phi` is laid out `k * N + n`.
pub fn weighted_covariance(
    x: &SpectrogramTensor,
    phi: &[f64],
    channel: usize,
    eps_cov: f64,
) -> Result<CovarianceSet> {
    let (kk, nn, m) = (x.num_freqs(), x.num_frames(), x.num_channels());
    if phi.len() != kk * nn {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {kk} bins of {nn} frames",
            phi.len()
        )));
    }
    if phi.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidInput("weights must be nonnegative".into()));
    }
    let matrices = (0..kk)
        .map(|k| weighted_covariance_bin(x.bin(k), m, &phi[k * nn..(k + 1) * nn], eps_cov))
        .collect();
    Ok(CovarianceSet {
        matrices,
        role: CovarianceRole::Weighted { channel },
    })
}

fn unit(m: usize, q: usize) -> CVector {
    let mut e = CVector::zeros(m);
    e[q] = C64::new(1.0, 0.0);
    e
}

fn store_row(w: &mut CMatrix, q: usize, filter: &CVector) {
    for j in 0..w.ncols() {
        w[(q, j)] = filter[j].conj();
    }
}

/// Iterative-projection update of row `q`.
///
/// Solves `(W M) w = e_q` with `M = V + reg` and rescales so that
/// `w^H M w = 1`. `reg` is the already weighted prior term, e.g. `gamma P`.
pub fn ip_update(
    w: &mut CMatrix,
    v: &CMatrix,
    q: usize,
    reg: Option<&CMatrix>,
    freq: usize,
) -> Result<()> {
    let m = w.nrows();
    let mq = match reg {
        Some(r) => v + r,
        None => v.clone(),
    };
    let singular = || Error::SingularUpdate { freq, channel: q };
    let wt = solve(&(&*w * &mq), &unit(m, q)).ok_or_else(singular)?;
    let norm = wt.dotc(&(&mq * &wt)).re;
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(singular());
    }
    store_row(w, q, &(wt / C64::new(norm.sqrt(), 0.0)));
    Ok(())
}

/// Coordinate update of row `q` under the Euclidean prior
/// `gamma ||w - h||^2`, with `v_tilde = V + gamma I`.
pub fn vectorwise_update_euclidean(
    w: &mut CMatrix,
    v_tilde: &CMatrix,
    h: &CVector,
    gamma: f64,
    q: usize,
    freq: usize,
) -> Result<()> {
    let m = w.nrows();
    let singular = || Error::SingularUpdate { freq, channel: q };
    let u = solve(&(&*w * v_tilde), &unit(m, q)).ok_or_else(singular)?;
    let u_t = solve(v_tilde, h).ok_or_else(singular)? * C64::new(gamma, 0.0);
    let vu = v_tilde * &u;
    let p = u.dotc(&vu).re;
    if !(p > 0.0) || !p.is_finite() {
        return Err(singular());
    }
    // u^H V~ u~ == (V~ u)^H u~
    let p_t = vu.dotc(&u_t);
    let filter = if p_t.norm() == 0.0 {
        &u / C64::new(p.sqrt(), 0.0) + &u_t
    } else {
        let root = -1.0 + (1.0 + 4.0 * p / p_t.norm_sqr()).sqrt();
        &u * (p_t / (2.0 * p) * root) + &u_t
    };
    store_row(w, q, &filter);
    Ok(())
}

/// Background block update: rows `S..M` become `[E | -I]` with
/// `W_SOI cov B^H = 0`. Pass `C` or `C + gamma P_bg` as `cov`.
pub fn bg_update(w: &mut CMatrix, num_soi: usize, cov: &CMatrix, freq: usize) -> Result<()> {
    let m = w.nrows();
    let s = num_soi;
    if s >= m {
        return Err(Error::InvalidPartition {
            num_soi: s,
            num_channels: m,
        });
    }
    let w_soi = w.rows(0, s).into_owned();
    let x = cov * w_soi.adjoint();
    let top = x.rows(0, s).into_owned();
    let bottom = x.rows(s, m - s).into_owned();
    let top_inv = inverse(&top).ok_or(Error::SingularBackground { freq })?;
    let e = bottom * top_inv;
    for i in 0..m - s {
        for j in 0..s {
            w[(s + i, j)] = e[(i, j)];
        }
        for j in 0..m - s {
            w[(s + i, s + j)] = if i == j {
                C64::new(-1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            };
        }
    }
    Ok(())
}

/// `W_k <- diag(W_k^{-1}) W_k` for every bin.
pub fn minimal_distortion_rescale(w: &DemixingState) -> Result<DemixingState> {
    let mats = w
        .matrices()
        .iter()
        .enumerate()
        .map(|(k, wk)| {
            let a = inverse(wk).ok_or(Error::SingularDemixing { freq: k })?;
            let mut out = wk.clone();
            for i in 0..out.nrows() {
                let d = a[(i, i)];
                for j in 0..out.ncols() {
                    out[(i, j)] *= d;
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    DemixingState::from_matrices(mats, w.num_soi())
}
