//! Synthetic multichannel scenes: far-field plane waves, an optional
//! exponentially decaying reverberation tail and calibrated white noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::linalg::C64;

/// Order of the windowed-sinc fractional delay filter.
pub const FRACTIONAL_DELAY_ORDER: usize = 64;
/// Common delay added to every path so all fractional delays stay causal.
const BULK_DELAY: f64 = 48.0;
/// Room volume assumed when converting t60 into a critical distance.
const ROOM_VOLUME: f64 = 60.0;
/// Velvet-noise pulse density in pulses per second.
const VELVET_DENSITY: f64 = 2000.0;
/// Gap between the direct path and the onset of the tail.
const TAIL_ONSET: f64 = 0.0025;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    /// Direction of arrival in radians, measured from the array axis.
    pub doa: f64,
    pub distance: f64,
    /// Index into the signal list.
    pub signal: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReverbSpec {
    pub t60: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub geometry: ArrayGeometry,
    pub sources: Vec<SourceSpec>,
    /// Signal-to-noise ratio over all microphones; `inf` (or `null` in JSON)
    /// adds no noise.
    #[serde(with = "snr_db_serde")]
    pub snr_db: f64,
    #[serde(default)]
    pub reverb: Option<ReverbSpec>,
    pub seed: u64,
    /// Seed of the generated speech-like signals, see [`generate_signals`].
    #[serde(default)]
    pub signal_seed: u64,
    pub duration: f64,
    pub sample_rate: f64,
    /// Index into `sources` of the source to extract, if any.
    #[serde(default)]
    pub target: Option<usize>,
}

/// Serde helpers for an SNR in dB where `null` or `"inf"` means noiseless.
pub mod snr_db_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Snr {
            Num(f64),
            Text(String),
        }
        match Option::<Snr>::deserialize(d)? {
            None => Ok(f64::INFINITY),
            Some(Snr::Num(v)) => Ok(v),
            Some(Snr::Text(t)) if t.eq_ignore_ascii_case("inf") => Ok(f64::INFINITY),
            Some(Snr::Text(t)) => Err(serde::de::Error::custom(format!("invalid snr {t:?}"))),
        }
    }
}

impl ScenarioSpec {
    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn num_signals(&self) -> usize {
        self.sources.iter().map(|s| s.signal + 1).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.sources.is_empty() {
            return Err(Error::InvalidConfig("scene has no sources".into()));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::InvalidConfig("snr must be finite or +inf".into()));
        }
        if !(self.duration > 0.0) || !(self.sample_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "duration and sample rate must be positive".into(),
            ));
        }
        if self.sources.iter().any(|s| !(s.distance > 0.0) || !s.doa.is_finite()) {
            return Err(Error::InvalidConfig(
                "source distances must be positive and directions finite".into(),
            ));
        }
        if let Some(r) = &self.reverb {
            if !(r.t60 > 0.0) {
                return Err(Error::InvalidConfig("t60 must be positive".into()));
            }
        }
        if let Some(t) = self.target {
            if t >= self.sources.len() {
                return Err(Error::InvalidConfig(format!(
                    "target {t} out of range for {} sources",
                    self.sources.len()
                )));
            }
        }
        Ok(())
    }
}

/// Microphone signals and per-source images at the reference microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub mics: Vec<Vec<f64>>,
    /// `images[i]` is source `i` as observed at microphone 0, noise free.
    pub images: Vec<Vec<f64>>,
    /// Noise actually added to each microphone.
    pub noise: Vec<Vec<f64>>,
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman-windowed sinc realizing the fractional part of a delay.
fn fractional_filter(frac: f64) -> Vec<f64> {
    let order = FRACTIONAL_DELAY_ORDER as f64;
    let half = order / 2.0;
    (0..=FRACTIONAL_DELAY_ORDER)
        .map(|i| {
            let t = i as f64 - frac;
            let w = if (0.0..=order).contains(&t) {
                0.42 - 0.5 * (2.0 * PI * t / order).cos() + 0.08 * (4.0 * PI * t / order).cos()
            } else {
                0.0
            };
            sinc(t - half) * w
        })
        .collect()
}

/// `out[t] += sum_i h[i] s[t - shift - i]` over the output range.
fn add_filtered(out: &mut [f64], s: &[f64], h: &[f64], shift: isize) {
    for (i, hi) in h.iter().enumerate() {
        if *hi == 0.0 {
            continue;
        }
        let off = shift + i as isize;
        for (t, o) in out.iter_mut().enumerate() {
            let idx = t as isize - off;
            if idx >= 0 && (idx as usize) < s.len() {
                *o += hi * s[idx as usize];
            }
        }
    }
}

/// Delays `s` by `delay` samples (possibly fractional) into `out`.
fn add_delayed(out: &mut [f64], s: &[f64], delay: f64) {
    let half = (FRACTIONAL_DELAY_ORDER / 2) as isize;
    let whole = delay.floor();
    let frac = delay - whole;
    let h = fractional_filter(frac);
    add_filtered(out, s, &h, whole as isize - half);
}

/// Linear convolution via FFT, truncated to `len` samples.
fn fft_convolve(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let n = (a.len() + b.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<C64> = a.iter().map(|v| C64::new(*v, 0.0)).collect();
    fa.resize(n, C64::new(0.0, 0.0));
    let mut fb: Vec<C64> = b.iter().map(|v| C64::new(*v, 0.0)).collect();
    fb.resize(n, C64::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa.iter().take(len).map(|z| z.re * scale).collect()
}

/// Sparse exponentially decaying tail of length `2 t60 fs`, scaled so its
/// energy relative to the unit direct path is `(distance / critical)^2`.
fn reverb_tail(t60: f64, fs: f64, distance: f64, seed: u64) -> Vec<f64> {
    let len = (2.0 * t60 * fs).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tail = vec![0.0; len];
    let onset = (TAIL_ONSET * fs).round() as usize;
    let spacing = (fs / VELVET_DENSITY).max(1.0);
    let mut slot = 0.0;
    loop {
        let pos = onset + (slot * spacing + rng.random::<f64>() * spacing) as usize;
        if pos >= len {
            break;
        }
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let t = pos as f64 / fs;
        tail[pos] = sign * (-3.0 * 10f64.ln() * t / t60).exp();
        slot += 1.0;
    }
    let energy: f64 = tail.iter().map(|v| v * v).sum();
    if energy > 0.0 {
        let critical = 0.057 * (ROOM_VOLUME / t60).sqrt();
        let gain = (distance / critical) / energy.sqrt();
        tail.iter_mut().for_each(|v| *v *= gain);
    }
    tail
}

fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ c.wrapping_mul(0x1656_67B1_9E37_79F9)
}

/// Image of one source at every microphone.
fn source_images(spec: &ScenarioSpec, src: &SourceSpec, signal: &[f64]) -> Vec<Vec<f64>> {
    let len = spec.num_samples();
    let fs = spec.sample_rate;
    let g = &spec.geometry;
    let lead = g
        .reference_distances()
        .into_iter()
        .map(|d| d * src.doa.cos() * fs / g.speed_of_sound)
        .collect::<Vec<_>>();
    lead.iter()
        .enumerate()
        .map(|(m, l)| {
            let delay = BULK_DELAY - l;
            let mut out = vec![0.0; len];
            add_delayed(&mut out, signal, delay);
            if let Some(r) = &spec.reverb {
                let tail = reverb_tail(r.t60, fs, src.distance, mix_seed(r.seed, src.signal as u64, m as u64));
                let mut direct = vec![0.0; len];
                add_delayed(&mut direct, signal, delay.round());
                for (o, v) in out.iter_mut().zip(fft_convolve(&direct, &tail, len)) {
                    *o += v;
                }
            }
            out
        })
        .collect()
}

/// Renders a scene. Microphone `m` receives each source `d_m cos(doa) / c`
/// seconds ahead of microphone 0, matching the steering-vector model.
pub fn simulate(spec: &ScenarioSpec, signals: &[Vec<f64>]) -> Result<Simulation> {
    spec.validate()?;
    let len = spec.num_samples();
    if signals.len() < spec.num_signals() {
        return Err(Error::InvalidInput(format!(
            "scene references {} signals, {} given",
            spec.num_signals(),
            signals.len()
        )));
    }
    for src in &spec.sources {
        if signals[src.signal].len() < len {
            return Err(Error::InvalidInput(format!(
                "signal {} has {} samples, scene needs {len}",
                src.signal,
                signals[src.signal].len()
            )));
        }
    }
    let m = spec.geometry.num_mics();
    let mut mics = vec![vec![0.0; len]; m];
    let mut images = Vec::with_capacity(spec.sources.len());
    for src in &spec.sources {
        let img = source_images(spec, src, &signals[src.signal][..len]);
        for (acc, ch) in mics.iter_mut().zip(&img) {
            for (a, v) in acc.iter_mut().zip(ch) {
                *a += v;
            }
        }
        images.push(img.into_iter().next().expect("at least one microphone"));
    }

    let mut noise = vec![vec![0.0; len]; m];
    if spec.snr_db.is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for ch in &mut noise {
            for v in ch.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        let clean: f64 = mics.iter().flatten().map(|v| v * v).sum();
        let raw: f64 = noise.iter().flatten().map(|v| v * v).sum();
        let gain = (clean / raw / 10f64.powf(spec.snr_db / 10.0)).sqrt();
        for (acc, ch) in mics.iter_mut().zip(noise.iter_mut()) {
            for (a, v) in acc.iter_mut().zip(ch.iter_mut()) {
                *v *= gain;
                *a += *v;
            }
        }
    }
    Ok(Simulation {
        mics,
        images,
        noise,
    })
}

/// `10 log10(clean energy / noise energy)` of a simulation.
pub fn measured_snr_db(sim: &Simulation) -> f64 {
    let total_noise: f64 = sim.noise.iter().flatten().map(|v| v * v).sum();
    let clean: f64 = sim
        .mics
        .iter()
        .zip(&sim.noise)
        .flat_map(|(m, n)| m.iter().zip(n).map(|(a, b)| (a - b) * (a - b)))
        .sum();
    10.0 * (clean / total_noise).log10()
}

/// Speech-like test signal: Laplacian noise, spectrally tilted and gated by a
/// random syllable envelope. Unit RMS.
pub fn speech_like(seed: u64, len: usize, sample_rate: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Per-signal voice: spectral tilt and syllable rate.
    let pole = 0.80 + 0.15 * rng.random::<f64>();
    let bright = 0.1 + 0.2 * rng.random::<f64>();
    let mean_syllable = 0.12 + 0.12 * rng.random::<f64>();

    let mut out = Vec::with_capacity(len);
    let mut lp = 0.0;
    while out.len() < len {
        let dur = mean_syllable * (0.5 + rng.random::<f64>());
        let seg = ((dur * sample_rate) as usize).max(1);
        let active = rng.random::<f64>() < 0.7;
        let amp: f64 = if active {
            let e: f64 = rng.sample(Exp1);
            0.2 + e
        } else {
            0.0
        };
        for i in 0..seg {
            let e: f64 = rng.sample(Exp1);
            let lap = if rng.random::<bool>() { e } else { -e };
            lp = pole * lp + (1.0 - pole) * lap;
            let shape = (PI * i as f64 / seg as f64).sin();
            out.push(amp * shape * (lp + bright * lap));
        }
    }
    out.truncate(len);
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Speech-like signals for every signal index of a scene.
pub fn generate_signals(spec: &ScenarioSpec) -> Vec<Vec<f64>> {
    let len = spec.num_samples();
    (0..spec.num_signals())
        .map(|i| speech_like(spec.signal_seed.wrapping_mul(1009).wrapping_add(i as u64), len, spec.sample_rate))
        .collect()
}

/// Source positions read off the published layout, as offsets in meters
/// from the array centre (x along the array, y away from it).
pub const PRESET_SOURCE_OFFSETS: [(f64, f64); 8] = [
    (-0.87, 0.5),
    (0.0, 1.0),
    (0.87, 0.5),
    (-2.0, 0.0),
    (-1.29, 1.53),
    (0.68, 1.88),
    (-1.4, 3.75),
    (2.63, 3.0),
];

pub const PRESET_MIC_SPACING: f64 = 0.042;
pub const PRESET_NUM_PERMUTATIONS: usize = 20;

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Signal assignment of permutation `index` (1-based): position `i` plays
/// signal `out[i]`. Index 1 is the identity.
pub fn preset_permutation(index: usize) -> Result<Vec<usize>> {
    if index == 0 || index > PRESET_NUM_PERMUTATIONS {
        return Err(Error::InvalidConfig(format!(
            "permutation {index} outside 1..={PRESET_NUM_PERMUTATIONS}"
        )));
    }
    let n = PRESET_SOURCE_OFFSETS.len();
    // 2017 is coprime to 8!, so ranks of distinct indices never collide.
    let mut rank = ((index - 1) * 2017) % factorial(n);
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let f = factorial(i);
        out.push(pool.remove(rank / f));
        rank %= f;
    }
    Ok(out)
}

/// Eight-source, four-microphone reverberant layout.
///
/// `room` 1 or 2 selects a 0.2 s or 0.4 s reverberation tail, `permutation`
/// in 1..=20 the signal assignment and `target` (1..=8) the source to extract.
pub fn preset_paper_scene(room: u8, permutation: usize, target: usize) -> Result<ScenarioSpec> {
    let t60 = match room {
        1 => 0.2,
        2 => 0.4,
        _ => return Err(Error::InvalidConfig(format!("room {room} is not 1 or 2"))),
    };
    if target == 0 || target > PRESET_SOURCE_OFFSETS.len() {
        return Err(Error::InvalidConfig(format!("target {target} outside 1..=8")));
    }
    let assignment = preset_permutation(permutation)?;
    let half = 1.5 * PRESET_MIC_SPACING;
    let geometry = ArrayGeometry {
        mic_positions: (0..4)
            .map(|m| [-half + m as f64 * PRESET_MIC_SPACING, 0.0, 0.0])
            .collect(),
        speed_of_sound: crate::geometry::DEFAULT_SPEED_OF_SOUND,
    };
    let sources = PRESET_SOURCE_OFFSETS
        .iter()
        .zip(assignment)
        .map(|(&(x, y), signal)| SourceSpec {
            doa: y.atan2(x),
            distance: x.hypot(y),
            signal,
        })
        .collect();
    Ok(ScenarioSpec {
        geometry,
        sources,
        snr_db: 30.0,
        reverb: Some(ReverbSpec {
            t60,
            seed: 1000 + room as u64,
        }),
        seed: permutation as u64,
        signal_seed: 0,
        duration: 20.0,
        sample_rate: 16000.0,
        target: Some(target - 1),
    })
}
