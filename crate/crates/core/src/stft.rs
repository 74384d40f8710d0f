//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Both directions use a periodic square-root von Hann window, so the product
//! of analysis and synthesis windows is a periodic Hann window which sums to
//! one at 50% overlap.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::types::SpectrogramTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    VonHann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    #[serde(default = "default_window")]
    pub window: Window,
    pub sample_rate: f64,
}

fn default_window() -> Window {
    Window::VonHann
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 2048,
            hop: 1024,
            window: Window::VonHann,
            sample_rate: 16000.0,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || self.fft_size % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "fft size {} must be even and at least 2",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.fft_size % self.hop != 0 {
            return Err(Error::InvalidConfig(format!(
                "hop {} must divide fft size {}",
                self.hop, self.fft_size
            )));
        }
        // sqrt-Hann squared is COLA only for hops of N/2, N/4, ...
        let ratio = self.fft_size / self.hop;
        if ratio < 2 || !ratio.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "hop {} is not COLA for the von Hann window of length {}",
                self.hop, self.fft_size
            )));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn num_freqs(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of full frames that fit in `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.fft_size {
            0
        } else {
            (len - self.fft_size) / self.hop + 1
        }
    }

    /// Center frequency in Hz of 0-based bin `k`.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.fft_size as f64
    }

    /// Window applied on both analysis and synthesis.
    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size as f64;
        // Normalizes the overlap-add sum of squared windows to one.
        let gain = (2.0 * self.hop as f64 / n).sqrt();
        (0..self.fft_size)
            .map(|i| {
                let hann = 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos();
                hann.sqrt() * gain
            })
            .collect()
    }
}

/// Bin center frequencies of an analysed tensor.
pub fn bin_frequencies(x: &SpectrogramTensor) -> Vec<f64> {
    (0..x.num_freqs())
        .map(|k| k as f64 * x.sample_rate / x.fft_size as f64)
        .collect()
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    }
}

/// Transforms equal-length channels into a one-sided multichannel spectrogram.
pub fn analyze(audio: &[Vec<f64>], cfg: &StftConfig) -> Result<SpectrogramTensor> {
    cfg.validate()?;
    let first = audio
        .first()
        .ok_or_else(|| Error::InvalidInput("no audio channels".into()))?;
    if first.is_empty() {
        return Err(Error::InvalidInput("empty audio".into()));
    }
    if audio.iter().any(|ch| ch.len() != first.len()) {
        return Err(Error::DimensionMismatch(
            "audio channels differ in length".into(),
        ));
    }
    let len = first.len();
    if len < cfg.fft_size {
        return Err(Error::InvalidInput(format!(
            "{len} samples are shorter than one frame of {}",
            cfg.fft_size
        )));
    }
    let frames = cfg.num_frames(len);
    let bins = cfg.num_freqs();
    let mut out = SpectrogramTensor::zeros(
        bins,
        frames,
        audio.len(),
        cfg.sample_rate,
        cfg.fft_size,
        cfg.hop,
    )?;
    let win = cfg.window();
    let fft = plans(cfg.fft_size).forward;
    let mut buf = vec![C64::new(0.0, 0.0); cfg.fft_size];
    for (m, ch) in audio.iter().enumerate() {
        for n in 0..frames {
            let start = n * cfg.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = C64::new(ch[start + i] * win[i], 0.0);
            }
            fft.process(&mut buf);
            for (k, v) in buf.iter().take(bins).enumerate() {
                out.set(k, n, m, *v);
            }
        }
    }
    Ok(out)
}

/// Weighted overlap-add inverse. The output covers `(N-1)*hop + fft_size`
/// samples per channel.
pub fn synthesize(x: &SpectrogramTensor, cfg: &StftConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if x.fft_size != cfg.fft_size || x.hop != cfg.hop || x.sample_rate != cfg.sample_rate {
        return Err(Error::InvalidConfig(format!(
            "tensor was produced with fft {} hop {} at {} Hz, config says fft {} hop {} at {} Hz",
            x.fft_size, x.hop, x.sample_rate, cfg.fft_size, cfg.hop, cfg.sample_rate
        )));
    }
    let n_fft = cfg.fft_size;
    let len = (x.num_frames() - 1) * cfg.hop + n_fft;
    let win = cfg.window();
    let ifft = plans(n_fft).inverse;
    let scale = 1.0 / n_fft as f64;
    let mut buf = vec![C64::new(0.0, 0.0); n_fft];
    let mut out = vec![vec![0.0; len]; x.num_channels()];
    for (m, ch) in out.iter_mut().enumerate() {
        for n in 0..x.num_frames() {
            for k in 0..x.num_freqs() {
                buf[k] = x.get(k, n, m);
            }
            // DC and Nyquist of a real signal carry no imaginary part.
            buf[0].im = 0.0;
            buf[n_fft / 2].im = 0.0;
            for k in 1..n_fft / 2 {
                buf[n_fft - k] = buf[k].conj();
            }
            ifft.process(&mut buf);
            let start = n * cfg.hop;
            for i in 0..n_fft {
                ch[start + i] += buf[i].re * scale * win[i];
            }
        }
    }
    Ok(out)
}

/// Synthesizes and pads or truncates every channel to `len` samples.
pub fn synthesize_to_len(
    x: &SpectrogramTensor,
    cfg: &StftConfig,
    len: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = synthesize(x, cfg)?;
    for ch in &mut out {
        ch.resize(len, 0.0);
    }
    Ok(out)
}
