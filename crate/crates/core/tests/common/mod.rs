//! Helpers shared by the integration tests: seeded scenes and brute-force
//! reference implementations written without the library's linear algebra.
#![allow(dead_code)]

use std::f64::consts::PI;

use informed_iva::geometry::ArrayGeometry;
use informed_iva::linalg::C64;
use informed_iva::mixsim::{generate_signals, simulate, ScenarioSpec, Simulation, SourceSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SPACING: f64 = 0.042;

/// Anechoic scene on a uniform linear array with directions drawn from
/// 20..160 degrees at least 25 degrees apart (less when they would not fit).
/// Source 0 is the target.
pub fn anechoic_scene(seed: u64, mics: usize, sources: usize, duration: f64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = deg(25.0_f64.min(0.8 * 140.0 / sources as f64));
    let mut doas: Vec<f64> = Vec::new();
    let mut misses = 0;
    while doas.len() < sources {
        let d = deg(20.0 + 140.0 * rng.random::<f64>());
        if doas.iter().all(|o| (o - d).abs() > gap) {
            doas.push(d);
        } else {
            misses += 1;
        }
        // Dense layouts can jam with no gap left; start over.
        if misses > 10_000 {
            doas.clear();
            misses = 0;
        }
    }
    ScenarioSpec {
        geometry: ArrayGeometry::uniform_linear(mics, SPACING),
        sources: doas
            .iter()
            .enumerate()
            .map(|(i, d)| SourceSpec {
                doa: *d,
                distance: 1.0,
                signal: i,
            })
            .collect(),
        snr_db: 30.0,
        reverb: None,
        seed,
        signal_seed: seed,
        duration,
        sample_rate: 16000.0,
        target: Some(0),
    }
}

pub fn render(spec: &ScenarioSpec) -> Simulation {
    simulate(spec, &generate_signals(spec)).expect("scene renders")
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn random_c64(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
}

/// Plain nested matrices, `a[i][j]`.
pub type Mat = Vec<Vec<C64>>;

/// Determinant by cofactor expansion along the first row.
pub fn det(a: &Mat) -> C64 {
    let n = a.len();
    match n {
        0 => C64::new(1.0, 0.0),
        1 => a[0][0],
        _ => (0..n)
            .map(|j| {
                let minor: Mat = a[1..]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|(c, _)| *c != j)
                            .map(|(_, v)| *v)
                            .collect()
                    })
                    .collect();
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                a[0][j] * det(&minor) * sign
            })
            .sum(),
    }
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, p, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| (0..p).map(|l| a[i][l] * b[l][j]).sum())
                .collect()
        })
        .collect()
}

pub fn adjoint(a: &Mat) -> Mat {
    let (n, m) = (a.len(), a[0].len());
    (0..m).map(|j| (0..n).map(|i| a[i][j].conj()).collect()).collect()
}

/// `v^H A v` for a column vector `v`.
pub fn quad(a: &Mat, v: &[C64]) -> f64 {
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..v.len() {
        for j in 0..v.len() {
            acc += v[i].conj() * a[i][j] * v[j];
        }
    }
    acc.re
}

/// Source model of a brute-force cost evaluation.
pub enum OracleModel {
    Ggd { beta: f64 },
    TvGauss,
    /// `t[q][k][b]`, `v[q][b][n]`.
    Nmf { beta: f64, t: Vec<Vec<Vec<f64>>>, v: Vec<Vec<Vec<f64>>> },
}

pub enum OraclePrior {
    None,
    /// `gamma[k] * w^H P[k] w`.
    Quadratic { p: Vec<Mat>, gamma: Vec<f64> },
    /// `gamma[k] * ||w - h[k]||^2`.
    Euclidean { h: Vec<Vec<C64>>, gamma: Vec<f64> },
}

/// Objective straight from its definition.
///
/// `x[k][n][m]`, `w[k][i][j]`; the first `s` rows hold the sources of
/// interest, filters are the conjugated rows. `bg_prior` is `(P_k, gamma_k)`
/// added to the microphone covariance inside the background term.
pub fn oracle_cost(
    x: &[Vec<Vec<C64>>],
    w: &[Mat],
    s: usize,
    model: &OracleModel,
    priors: &[OraclePrior],
    bg_prior: Option<(&[Mat], &[f64])>,
) -> f64 {
    let kk = x.len();
    let nn = x[0].len();
    let m = x[0][0].len();
    let demixed = |q: usize, k: usize, n: usize| -> C64 {
        (0..m).map(|j| w[k][q][j] * x[k][n][j]).sum()
    };

    let mut score = 0.0;
    for q in 0..s {
        for n in 0..nn {
            match model {
                OracleModel::Ggd { beta } => {
                    let e: f64 = (0..kk).map(|k| demixed(q, k, n).norm_sqr()).sum();
                    score += 2.0 / beta * e.sqrt().powf(*beta) / nn as f64;
                }
                OracleModel::TvGauss => {
                    let e: f64 = (0..kk).map(|k| demixed(q, k, n).norm_sqr()).sum();
                    score += e / nn as f64;
                }
                OracleModel::Nmf { beta, t, v } => {
                    for k in 0..kk {
                        let lr: f64 = (0..t[q][k].len()).map(|b| t[q][k][b] * v[q][b][n]).sum();
                        let var = lr.powf(*beta).max(1e-12);
                        score += (var.ln() + demixed(q, k, n).norm_sqr() / var) / nn as f64;
                    }
                }
            }
        }
    }

    let log_det: f64 = w.iter().map(|wk| det(wk).norm().ln()).sum();

    let mut j_bg = 0.0;
    if s < m {
        for k in 0..kk {
            let mut c: Mat = vec![vec![C64::new(0.0, 0.0); m]; m];
            for n in 0..nn {
                for i in 0..m {
                    for j in 0..m {
                        c[i][j] += x[k][n][i] * x[k][n][j].conj() / nn as f64;
                    }
                }
            }
            if let Some((p, g)) = bg_prior {
                for i in 0..m {
                    for j in 0..m {
                        c[i][j] += p[k][i][j] * g[k];
                    }
                }
            }
            let b: Mat = w[k][s..].to_vec();
            j_bg += det(&mat_mul(&mat_mul(&b, &c), &adjoint(&b))).norm().ln();
        }
    }

    let mut j_prior = 0.0;
    for k in 0..kk {
        for (q, prior) in priors.iter().enumerate() {
            let filt: Vec<C64> = w[k][q].iter().map(|z| z.conj()).collect();
            match prior {
                OraclePrior::None => {}
                OraclePrior::Quadratic { p, gamma } => j_prior += gamma[k] * quad(&p[k], &filt),
                OraclePrior::Euclidean { h, gamma } => {
                    j_prior += gamma[k]
                        * filt.iter().zip(&h[k]).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
                }
            }
        }
    }
    score - 2.0 * log_det + j_bg + j_prior
}

/// `(1/N) sum_n phi_n x_n x_n^H + eps I` for one bin.
pub fn oracle_weighted_covariance(xk: &[Vec<C64>], phi: &[f64], eps: f64) -> Mat {
    let nn = xk.len();
    let m = xk[0].len();
    let mut v: Mat = vec![vec![C64::new(0.0, 0.0); m]; m];
    for n in 0..nn {
        for i in 0..m {
            for j in 0..m {
                v[i][j] += xk[n][i] * xk[n][j].conj() * phi[n] / nn as f64;
            }
        }
    }
    for (i, row) in v.iter_mut().enumerate() {
        row[i] += eps;
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Target, interference and artifact parts via a Gram-Schmidt basis of the
/// references instead of normal equations.
pub fn oracle_decompose(
    estimate: &[f64],
    references: &[Vec<f64>],
    target: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for r in references {
        let mut u = r.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&u, b);
                u.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = dot(&u, &u).sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        basis.push(u);
    }
    let mut proj = vec![0.0; estimate.len()];
    for b in &basis {
        let c = dot(estimate, b);
        proj.iter_mut().zip(b).for_each(|(p, y)| *p += c * y);
    }
    let t = &references[target];
    let alpha = dot(estimate, t) / dot(t, t);
    let s_target: Vec<f64> = t.iter().map(|v| alpha * v).collect();
    let interference = proj.iter().zip(&s_target).map(|(p, s)| p - s).collect();
    let artifacts = estimate.iter().zip(&proj).map(|(e, p)| e - p).collect();
    (s_target, interference, artifacts)
}

/// Largest deviation relative to the norm of the reference vector.
pub fn vec_rel_err(a: &[f64], b: &[f64], scale: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

pub fn deg(d: f64) -> f64 {
    d * PI / 180.0
}

use informed_iva::geometry::{BuiltBackgroundPrior, BuiltChannelPrior, BuiltPriors, Weight};
use informed_iva::linalg::{CMatrix, CVector};
use informed_iva::solver::{cost, weighted_covariance};
use informed_iva::source_model::SourceModel;
use informed_iva::types::{DemixingState, SpectrogramTensor};

fn to_cmatrix(a: &Mat) -> CMatrix {
    CMatrix::from_fn(a.len(), a[0].len(), |i, j| a[i][j])
}

fn random_hermitian(rng: &mut ChaCha8Rng, m: usize) -> Mat {
    let mut a: Mat = vec![vec![C64::new(0.0, 0.0); m]; m];
    for i in 0..m {
        a[i][i] = C64::new(rng.random::<f64>() * 4.0 - 2.0, 0.0);
        for j in i + 1..m {
            let z = random_c64(rng);
            a[i][j] = z;
            a[j][i] = z.conj();
        }
    }
    a
}

/// Worst relative deviations of the library from the brute-force versions on
/// one random tiny instance: `(cost, weighted covariance, decomposition)`.
pub fn oracle_deviations(seed: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kk = rng.random_range(2..=4);
    let nn = rng.random_range(2..=5);
    let m = rng.random_range(2..=3);
    let s = rng.random_range(1..=m);

    let x_raw: Vec<Vec<Vec<C64>>> = (0..kk)
        .map(|_| (0..nn).map(|_| (0..m).map(|_| random_c64(&mut rng)).collect()).collect())
        .collect();
    let mut x = SpectrogramTensor::zeros(kk, nn, m, 16000.0, 2 * (kk - 1), 1).unwrap();
    for k in 0..kk {
        for n in 0..nn {
            for j in 0..m {
                x.set(k, n, j, x_raw[k][n][j]);
            }
        }
    }
    let w_raw: Vec<Mat> = (0..kk)
        .map(|_| (0..m).map(|_| (0..m).map(|_| random_c64(&mut rng)).collect()).collect())
        .collect();
    let w = DemixingState::from_matrices(w_raw.iter().map(to_cmatrix).collect(), s).unwrap();

    let beta = 0.5 + 1.5 * rng.random::<f64>();
    let (model, oracle_model) = match rng.random_range(0..3) {
        0 => (SourceModel::ggd(beta).unwrap(), OracleModel::Ggd { beta }),
        1 => (SourceModel::tv_gauss(), OracleModel::TvGauss),
        _ => {
            let bases = rng.random_range(1..=2);
            let mut model = SourceModel::nmf(beta, bases, s, kk, nn, seed).unwrap();
            let t: Vec<Vec<Vec<f64>>> = (0..s)
                .map(|_| (0..kk).map(|_| (0..bases).map(|_| 0.1 + rng.random::<f64>()).collect()).collect())
                .collect();
            let v: Vec<Vec<Vec<f64>>> = (0..s)
                .map(|_| (0..bases).map(|_| (0..nn).map(|_| 0.1 + rng.random::<f64>()).collect()).collect())
                .collect();
            let st = model.nmf.as_mut().unwrap();
            for q in 0..s {
                st.t[q] = t[q].iter().flatten().copied().collect();
                st.v[q] = v[q].iter().flatten().copied().collect();
            }
            (model, OracleModel::Nmf { beta, t, v })
        }
    };

    let mut channels = Vec::new();
    let mut oracle_priors = Vec::new();
    for _ in 0..s {
        let gamma: Vec<f64> = (0..kk).map(|_| rng.random::<f64>() * 3.0).collect();
        match rng.random_range(0..3) {
            0 => {
                channels.push(BuiltChannelPrior::None);
                oracle_priors.push(OraclePrior::None);
            }
            1 => {
                let p: Vec<Mat> = (0..kk).map(|_| random_hermitian(&mut rng, m)).collect();
                channels.push(BuiltChannelPrior::Quadratic {
                    precision: p.iter().map(to_cmatrix).collect(),
                    gamma: Weight::PerFrequency(gamma.clone()),
                });
                oracle_priors.push(OraclePrior::Quadratic { p, gamma });
            }
            _ => {
                let h: Vec<Vec<C64>> =
                    (0..kk).map(|_| (0..m).map(|_| random_c64(&mut rng)).collect()).collect();
                channels.push(BuiltChannelPrior::Euclidean {
                    targets: h.iter().map(|v| CVector::from_vec(v.clone())).collect(),
                    gamma: Weight::PerFrequency(gamma.clone()),
                });
                oracle_priors.push(OraclePrior::Euclidean { h, gamma });
            }
        }
    }
    // Background prior with a positive definite precision keeps the
    // background term's determinant away from zero.
    let bg = (s < m && rng.random::<bool>()).then(|| {
        let p: Vec<Mat> = (0..kk)
            .map(|_| {
                let mut a = random_hermitian(&mut rng, m);
                for (i, row) in a.iter_mut().enumerate() {
                    row[i] += 4.0;
                }
                a
            })
            .collect();
        let g: Vec<f64> = (0..kk).map(|_| rng.random::<f64>()).collect();
        (p, g)
    });
    let priors = BuiltPriors {
        channels,
        background: bg.as_ref().map(|(p, g)| BuiltBackgroundPrior {
            precision: p.iter().map(to_cmatrix).collect(),
            gamma: Weight::PerFrequency(g.clone()),
        }),
    };

    let lib = cost(&w, &x, &model, &priors, &x.covariances()).unwrap().j_total;
    let expect = oracle_cost(
        &x_raw,
        &w_raw,
        s,
        &oracle_model,
        &oracle_priors,
        bg.as_ref().map(|(p, g)| (p.as_slice(), g.as_slice())),
    );
    let cost_err = rel_err(lib, expect);

    let phi: Vec<f64> = (0..kk * nn).map(|_| rng.random::<f64>() * 2.0).collect();
    let eps = rng.random::<f64>() * 1e-3;
    let covs = weighted_covariance(&x, &phi, 0, eps).unwrap();
    let mut cov_err: f64 = 0.0;
    for k in 0..kk {
        let expect = oracle_weighted_covariance(&x_raw[k], &phi[k * nn..(k + 1) * nn], eps);
        let scale = expect.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let diff = (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| (covs.matrices[k][(i, j)] - expect[i][j]).norm_sqr())
            .sum::<f64>()
            .sqrt();
        cov_err = cov_err.max(diff / scale);
    }

    let len = rng.random_range(8..=40);
    let q = rng.random_range(1..=3);
    let refs: Vec<Vec<f64>> = (0..q)
        .map(|_| (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
        .collect();
    let est: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let target = rng.random_range(0..q);
    let d = informed_iva::metrics::decompose(&est, &refs, target).unwrap();
    let (t, i, a) = oracle_decompose(&est, &refs, target);
    let scale = est.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dec_err = vec_rel_err(&d.target, &t, scale)
        .max(vec_rel_err(&d.interference, &i, scale))
        .max(vec_rel_err(&d.artifacts, &a, scale));

    (cost_err, cov_err, dec_err)
}
