mod common;

use informed_iva::geometry::{
    precision_null, precision_one, prior_penalty, steering_vector, ArrayGeometry,
    BuiltChannelPrior, BuiltPriors, Weight,
};
use informed_iva::linalg::{hermitian_eigenvalues, inverse, CMatrix, C64};
use informed_iva::metrics::{decompose, evaluate};
use informed_iva::mixsim::{measured_snr_db, simulate, speech_like, ScenarioSpec, SourceSpec};
use informed_iva::solver::{cost, run, weighted_covariance, SolverConfig};
use informed_iva::source_model::{
    demixed_variance, nmf_update, normalize_ilrma, weighting_factor, SourceModel,
};
use informed_iva::stft::{analyze, synthesize, StftConfig, Window};
use informed_iva::types::{DemixingState, SpectrogramTensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(seed: u64, kk: usize, nn: usize, m: usize) -> SpectrogramTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = SpectrogramTensor::zeros(kk, nn, m, 16000.0, 2 * (kk - 1), 1).unwrap();
    for v in x.as_mut_slice() {
        *v = common::random_c64(&mut rng);
    }
    x
}

/// Identity plus a small random perturbation: safely invertible.
fn random_demixing(seed: u64, kk: usize, m: usize, s: usize) -> DemixingState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mats = (0..kk)
        .map(|_| {
            CMatrix::from_fn(m, m, |i, j| {
                let z = common::random_c64(&mut rng) * 0.3;
                if i == j {
                    z + C64::new(1.0, 0.0)
                } else {
                    z
                }
            })
        })
        .collect();
    DemixingState::from_matrices(mats, s).unwrap()
}

fn stft(fft: usize) -> StftConfig {
    StftConfig {
        fft_size: fft,
        hop: fft / 2,
        window: Window::VonHann,
        sample_rate: 16000.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stft_reconstructs_interior(seed in any::<u64>(), fft_pow in 4u32..8, frames in 3usize..12) {
        let fft = 1usize << fft_pow;
        let len = fft + frames * fft / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let audio = vec![(0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect::<Vec<f64>>()];
        let cfg = stft(fft);
        let y = synthesize(&analyze(&audio, &cfg).unwrap(), &cfg).unwrap();
        let peak = audio[0].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let interior = fft..(y[0].len().min(len) - fft);
        let worst = interior.map(|i| (y[0][i] - audio[0][i]).abs()).fold(0.0_f64, f64::max);
        prop_assert!(worst <= 1e-10 * peak, "worst interior error {worst:e}");
    }

    #[test]
    fn stft_frame_energy_matches_windowed_signal(seed in any::<u64>(), fft_pow in 3u32..8) {
        let fft = 1usize << fft_pow;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let audio = vec![(0..2 * fft).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<f64>>()];
        let cfg = stft(fft);
        let x = analyze(&audio, &cfg).unwrap();
        let win = cfg.window();
        for n in 0..x.num_frames() {
            let time: f64 = (0..fft).map(|i| (audio[0][n * cfg.hop + i] * win[i]).powi(2)).sum();
            let freq: f64 = (0..x.num_freqs())
                .map(|k| {
                    let e = x.get(k, n, 0).norm_sqr();
                    if k == 0 || k == fft / 2 { e } else { 2.0 * e }
                })
                .sum::<f64>() / fft as f64;
            prop_assert!(common::rel_err(freq, time) <= 1e-8);
        }
    }

    #[test]
    fn steering_vectors_have_unit_entries(m in 1usize..8, f in 0.0f64..8000.0, theta in 0.0f64..std::f64::consts::PI) {
        let h = steering_vector(&ArrayGeometry::uniform_linear(m, 0.042), f, theta);
        prop_assert_eq!(h[0], C64::new(1.0, 0.0));
        for z in h.iter() {
            prop_assert!((z.norm() - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn precision_builders_hermitian_and_null_definite(
        m in 2usize..6,
        f in 0.0f64..8000.0,
        doas in prop::collection::vec(0.0f64..std::f64::consts::PI, 0..4),
        tik in 1e-4f64..2.0,
        lambda in 0.0f64..3.0,
    ) {
        let g = ArrayGeometry::uniform_linear(m, 0.042);
        let weights = vec![lambda; doas.len()];
        let null = precision_null(&g, f, &doas, tik, &weights).unwrap();
        let one = precision_one(&g, f, &doas, tik, &weights).unwrap();
        for p in [&null, &one] {
            let defect = (p - p.adjoint()).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
            prop_assert_eq!(defect, 0.0);
        }
        prop_assert!(null.clone().cholesky().is_some());
    }

    #[test]
    fn penalty_ignores_unconstrained_channels(seed in any::<u64>(), kk in 2usize..5, gamma in 0.0f64..3.0) {
        let m = 3;
        let g = ArrayGeometry::uniform_linear(m, 0.042);
        let freqs: Vec<f64> = (0..kk).map(|k| 500.0 * k as f64).collect();
        let quad = BuiltChannelPrior::Quadratic {
            precision: freqs.iter().map(|f| precision_null(&g, *f, &[0.7], 0.1, &[1.0]).unwrap()).collect(),
            gamma: Weight::Constant(gamma),
        };
        let one = BuiltPriors { channels: vec![quad.clone()], background: None };
        let two = BuiltPriors { channels: vec![quad, BuiltChannelPrior::None], background: None };
        let w1 = random_demixing(seed, kk, m, 1);
        let w2 = DemixingState::from_matrices(w1.matrices().to_vec(), 2).unwrap();
        let a = prior_penalty(&w1, &one).unwrap().soi;
        let b = prior_penalty(&w2, &two).unwrap().soi;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ggd_variance_and_weights_scale(seed in any::<u64>(), beta in 0.3f64..2.5, c in 0.1f64..10.0) {
        let (kk, nn) = (3, 4);
        let s = random_tensor(seed, kk, nn, 2);
        let mut scaled = s.clone();
        for k in 0..kk {
            for n in 0..nn {
                scaled.set(k, n, 1, s.get(k, n, 1) * c);
            }
        }
        let model = SourceModel::ggd(beta).unwrap();
        let (r, rs) = (demixed_variance(&model, &s), demixed_variance(&model, &scaled));
        let (p, ps) = (weighting_factor(&model, &r), weighting_factor(&model, &rs));
        for k in 0..kk {
            for n in 0..nn {
                prop_assert_eq!(r.get(0, k, n), rs.get(0, k, n));
                prop_assert!(common::rel_err(rs.get(1, k, n), c * r.get(1, k, n)) <= 1e-12);
                prop_assert!(common::rel_err(ps.get(1, k, n), c.powf(beta - 2.0) * p.get(1, k, n)) <= 1e-12);
                let r2 = weighting_factor(&SourceModel::ggd(2.0).unwrap(), &r);
                prop_assert_eq!(r2.get(1, k, n), 1.0);
            }
        }
    }

    #[test]
    fn variance_is_channel_equivariant(seed in any::<u64>()) {
        let s = random_tensor(seed, 3, 5, 3);
        let mut swapped = s.clone();
        for k in 0..3 {
            for n in 0..5 {
                swapped.set(k, n, 0, s.get(k, n, 2));
                swapped.set(k, n, 2, s.get(k, n, 0));
            }
        }
        for model in [SourceModel::ggd(1.0).unwrap(), SourceModel::tv_gauss()] {
            let (a, b) = (demixed_variance(&model, &s), demixed_variance(&model, &swapped));
            prop_assert_eq!(a.channel(0), b.channel(2));
            prop_assert_eq!(a.channel(1), b.channel(1));
        }
    }

    #[test]
    fn nmf_updates_stay_positive(seed in any::<u64>(), beta in 0.5f64..2.0, bases in 1usize..4, zeros in any::<bool>()) {
        let (kk, nn) = (4, 6);
        let mut s = random_tensor(seed, kk, nn, 2);
        if zeros {
            for n in 0..nn {
                s.set(1, n, 0, C64::new(0.0, 0.0));
            }
        }
        let mut model = SourceModel::nmf(beta, bases, 2, kk, nn, seed).unwrap();
        for _ in 0..10 {
            nmf_update(&mut model, &s).unwrap();
        }
        let st = model.nmf.as_ref().unwrap();
        for v in st.t.iter().chain(&st.v).flatten() {
            prop_assert!(v.is_finite() && *v >= 1e-12);
        }
    }

    #[test]
    fn weighted_covariance_hermitian_psd(seed in any::<u64>(), m in 1usize..5, eps in 0.0f64..1e-3) {
        let (kk, nn) = (3, 6);
        let x = random_tensor(seed, kk, nn, m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let phi: Vec<f64> = (0..kk * nn).map(|_| rng.random::<f64>() * 5.0).collect();
        for v in weighted_covariance(&x, &phi, 0, eps).unwrap().matrices {
            let defect = (&v - v.adjoint()).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
            prop_assert!(defect <= 1e-12);
            prop_assert!(hermitian_eigenvalues(&v)[0] >= -1e-10);
        }
    }

    #[test]
    fn demixing_round_trip(seed in any::<u64>(), m in 1usize..5) {
        let x = random_tensor(seed, 3, 5, m);
        let w = random_demixing(seed ^ 7, 3, m, m);
        let inv = DemixingState::from_matrices(
            w.matrices().iter().map(|a| inverse(a).unwrap()).collect(), m).unwrap();
        let back = inv.apply(&w.apply(&x).unwrap()).unwrap();
        let diff: f64 = back.as_slice().iter().zip(x.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum();
        prop_assert!(diff.sqrt() <= 1e-10 * x.frobenius_norm());
    }

    #[test]
    fn decomposition_is_additive_and_scale_free(seed in any::<u64>(), q in 1usize..4, c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = 64;
        let refs: Vec<Vec<f64>> = (0..q).map(|_| (0..len).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let est: Vec<f64> = (0..len).map(|_| rng.random::<f64>() - 0.5).collect();
        let d = decompose(&est, &refs, 0).unwrap();
        let scale = est.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sum: Vec<f64> = (0..len).map(|i| d.target[i] + d.interference[i] + d.artifacts[i]).collect();
        prop_assert!(common::vec_rel_err(&sum, &est, scale) <= 1e-10);
        let scaled: Vec<f64> = est.iter().map(|v| v * c).collect();
        let (a, b) = (evaluate(&est, &refs, 0).unwrap(), evaluate(&scaled, &refs, 0).unwrap());
        prop_assert!((a.sdr - b.sdr).abs() <= 1e-9);
        prop_assert!((a.sir - b.sir).abs() <= 1e-9);
    }

    #[test]
    fn cost_ignores_row_phases(seed in any::<u64>(), phase in 0.0f64..6.3, beta in 0.5f64..2.0) {
        let (kk, m) = (3, 3);
        let x = random_tensor(seed, kk, 5, m);
        let w = random_demixing(seed ^ 3, kk, m, m);
        let mut rotated = w.clone();
        for k in 0..kk {
            let mut row = rotated.matrix_mut(k).row_mut(1);
            row *= C64::from_polar(1.0, phase);
        }
        let priors = BuiltPriors { channels: vec![BuiltChannelPrior::None; m], background: None };
        let cov = x.covariances();
        for model in [SourceModel::ggd(beta).unwrap(), SourceModel::tv_gauss()] {
            let a = cost(&w, &x, &model, &priors, &cov).unwrap();
            let b = cost(&rotated, &x, &model, &priors, &cov).unwrap();
            prop_assert!(common::rel_err(b.j_total, a.j_total) <= 1e-12);
            prop_assert!((a.j_total - (a.j_bss + a.j_bg + a.j_prior)).abs() <= 1e-12 * a.j_total.abs().max(1.0));
        }
    }

    #[test]
    fn ilrma_normalization_keeps_cost(seed in any::<u64>(), beta in 0.5f64..2.0, s in 1usize..4) {
        let (kk, nn, m) = (3, 6, 3);
        let x = random_tensor(seed, kk, nn, m);
        let mut w = random_demixing(seed ^ 5, kk, m, s);
        let mut model = SourceModel::nmf(beta, 2, s, kk, nn, seed).unwrap();
        let priors = BuiltPriors { channels: vec![BuiltChannelPrior::None; s], background: None };
        let cov = x.covariances();
        let before = cost(&w, &x, &model, &priors, &cov).unwrap().j_total;
        let soi = w.apply_rows(&x, s).unwrap();
        normalize_ilrma(&mut model, &mut w, &soi).unwrap();
        let after = cost(&w, &x, &model, &priors, &cov).unwrap().j_total;
        prop_assert!(common::rel_err(after, before) <= 1e-9, "{before} -> {after}");
    }
}

fn two_source_spec(seed: u64, snr_db: f64) -> ScenarioSpec {
    ScenarioSpec {
        geometry: ArrayGeometry::uniform_linear(3, 0.042),
        sources: vec![
            SourceSpec { doa: 0.6, distance: 1.0, signal: 0 },
            SourceSpec { doa: 2.1, distance: 2.0, signal: 1 },
        ],
        snr_db,
        reverb: None,
        seed,
        signal_seed: seed,
        duration: 0.25,
        sample_rate: 16000.0,
        target: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulation_superposes_and_repeats(seed in any::<u64>()) {
        let spec = two_source_spec(seed, f64::INFINITY);
        let len = spec.num_samples();
        let signals = vec![speech_like(seed, len, 16000.0), speech_like(seed ^ 9, len, 16000.0)];
        let both = simulate(&spec, &signals).unwrap();
        prop_assert_eq!(&both, &simulate(&spec, &signals).unwrap());
        let mut parts = Vec::new();
        for i in 0..2 {
            let mut single = spec.clone();
            single.sources = vec![SourceSpec { signal: 0, ..spec.sources[i].clone() }];
            parts.push(simulate(&single, &[signals[i].clone()]).unwrap());
        }
        for m in 0..3 {
            for t in 0..len {
                let sum = parts[0].mics[m][t] + parts[1].mics[m][t];
                prop_assert!((both.mics[m][t] - sum).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn simulation_snr_is_calibrated(seed in any::<u64>(), snr in -10.0f64..40.0) {
        let spec = two_source_spec(seed, snr);
        let len = spec.num_samples();
        let signals = vec![speech_like(seed, len, 16000.0), speech_like(seed ^ 9, len, 16000.0)];
        let sim = simulate(&spec, &signals).unwrap();
        prop_assert!((measured_snr_db(&sim) - snr).abs() <= 0.01);
    }
}

#[test]
fn trace_matches_cost_recomputed_from_scratch() {
    let spec = common::anechoic_scene(3, 2, 2, 2.0);
    let sim = common::render(&spec);
    let x = analyze(&sim.mics, &StftConfig::default()).unwrap();
    let mut cfg = SolverConfig::unconstrained(2, 1.0);
    cfg.max_iters = 20;
    let out = run(&x, &cfg, None).unwrap();
    let mut xs = x.clone();
    let block = x.num_frames() * x.num_channels();
    for (k, g) in out.input_gains.iter().enumerate() {
        for v in &mut xs.as_mut_slice()[k * block..(k + 1) * block] {
            *v *= *g;
        }
    }
    let priors = BuiltPriors { channels: vec![BuiltChannelPrior::None; 2], background: None };
    let fresh = cost(&out.raw_demixing, &xs, &out.model, &priors, &xs.covariances()).unwrap();
    let last = out.trace.last().unwrap();
    assert!(common::rel_err(fresh.j_total, last.j_total) <= 1e-9, "{} vs {}", fresh.j_total, last.j_total);
}

#[test]
fn background_block_stays_exact() {
    let spec = common::anechoic_scene(4, 4, 3, 2.0);
    let sim = common::render(&spec);
    let x = analyze(&sim.mics, &StftConfig::default()).unwrap();
    for id in [5, 6, 7, 11, 12, 13] {
        let mut cfg = informed_iva::solver::variant_config(id, 4, spec.sources[0].doa).unwrap();
        cfg.max_iters = 5;
        let out = run(&x, &cfg, Some(&spec.geometry)).unwrap();
        assert!(out.raw_demixing.bg_structure_exact(), "variant {id}");
    }
}
