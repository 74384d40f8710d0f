//! Shared data structures: spectrogram tensors, demixing matrices and the
//! partition of output channels into sources of interest and background.

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, CMatrix, CVector, C64};

/// Complex one-sided STFT data indexed by (frequency, frame, channel).
///
/// Storage is frequency-major with the channel index innermost, so the
/// channel vector `x_{k,n}` is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramTensor {
    data: Vec<C64>,
    num_freqs: usize,
    num_frames: usize,
    num_channels: usize,
    pub sample_rate: f64,
    pub fft_size: usize,
    pub hop: usize,
}

impl SpectrogramTensor {
    pub fn zeros(
        num_freqs: usize,
        num_frames: usize,
        num_channels: usize,
        sample_rate: f64,
        fft_size: usize,
        hop: usize,
    ) -> Result<Self> {
        if num_freqs == 0 || num_frames == 0 || num_channels == 0 {
            return Err(Error::InvalidInput(format!(
                "empty spectrogram ({num_freqs} bins, {num_frames} frames, {num_channels} channels)"
            )));
        }
        if fft_size / 2 + 1 != num_freqs {
            return Err(Error::DimensionMismatch(format!(
                "{num_freqs} bins do not match fft size {fft_size}"
            )));
        }
        Ok(Self {
            data: vec![C64::new(0.0, 0.0); num_freqs * num_frames * num_channels],
            num_freqs,
            num_frames,
            num_channels,
            sample_rate,
            fft_size,
            hop,
        })
    }

    /// Tensor with the same shape metadata but a different channel count.
    pub fn zeros_like(&self, num_channels: usize) -> Result<Self> {
        Self::zeros(
            self.num_freqs,
            self.num_frames,
            num_channels,
            self.sample_rate,
            self.fft_size,
            self.hop,
        )
    }

    pub fn num_freqs(&self) -> usize {
        self.num_freqs
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    #[inline]
    fn offset(&self, k: usize, n: usize) -> usize {
        (k * self.num_frames + n) * self.num_channels
    }

    #[inline]
    pub fn get(&self, k: usize, n: usize, m: usize) -> C64 {
        self.data[self.offset(k, n) + m]
    }

    #[inline]
    pub fn set(&mut self, k: usize, n: usize, m: usize, v: C64) {
        let o = self.offset(k, n);
        self.data[o + m] = v;
    }

    /// The channel vector at bin `k`, frame `n`.
    #[inline]
    pub fn frame(&self, k: usize, n: usize) -> &[C64] {
        let o = self.offset(k, n);
        &self.data[o..o + self.num_channels]
    }

    #[inline]
    pub fn frame_mut(&mut self, k: usize, n: usize) -> &mut [C64] {
        let o = self.offset(k, n);
        &mut self.data[o..o + self.num_channels]
    }

    /// All frames of bin `k`, laid out frame-major.
    pub fn bin(&self, k: usize) -> &[C64] {
        let o = self.offset(k, 0);
        &self.data[o..o + self.num_frames * self.num_channels]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// Keeps only the first `count` channels.
    pub fn take_channels(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.num_channels {
            return Err(Error::DimensionMismatch(format!(
                "cannot take {count} of {} channels",
                self.num_channels
            )));
        }
        let mut out = self.zeros_like(count)?;
        for k in 0..self.num_freqs {
            for n in 0..self.num_frames {
                out.frame_mut(k, n).copy_from_slice(&self.frame(k, n)[..count]);
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, factor: f64) {
        for z in &mut self.data {
            *z *= factor;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Plain microphone covariance `(1/N) sum_n x x^H` per bin, symmetrized.
    pub fn covariances(&self) -> CovarianceSet {
        let m = self.num_channels;
        let inv_n = 1.0 / self.num_frames as f64;
        let mats = (0..self.num_freqs)
            .map(|k| {
                let mut c = CMatrix::zeros(m, m);
                for n in 0..self.num_frames {
                    let x = self.frame(k, n);
                    for i in 0..m {
                        for j in 0..m {
                            c[(i, j)] += x[i] * x[j].conj();
                        }
                    }
                }
                c *= C64::new(inv_n, 0.0);
                symmetrize(&mut c);
                c
            })
            .collect();
        CovarianceSet {
            matrices: mats,
            role: CovarianceRole::Microphone,
        }
    }
}

/// Per-frequency demixing matrices with the first `num_soi` rows holding the
/// filters of the sources of interest and the remaining rows `[E_k | -I]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemixingState {
    matrices: Vec<CMatrix>,
    num_soi: usize,
}

impl DemixingState {
    /// Identity for separation, `diag(I_S, -I_{M-S})` for extraction.
    pub fn new(num_freqs: usize, num_channels: usize, num_soi: usize) -> Result<Self> {
        if num_soi < 1 || num_soi > num_channels {
            return Err(Error::InvalidPartition {
                num_soi,
                num_channels,
            });
        }
        let mut init = CMatrix::identity(num_channels, num_channels);
        for i in num_soi..num_channels {
            init[(i, i)] = C64::new(-1.0, 0.0);
        }
        Ok(Self {
            matrices: vec![init; num_freqs],
            num_soi,
        })
    }

    /// Wraps explicit matrices. All must be square with the same size.
    pub fn from_matrices(matrices: Vec<CMatrix>, num_soi: usize) -> Result<Self> {
        let m = matrices.first().map(|w| w.nrows()).unwrap_or(0);
        if matrices.is_empty() || matrices.iter().any(|w| w.nrows() != m || w.ncols() != m) {
            return Err(Error::DimensionMismatch(
                "demixing matrices must be square and equally sized".into(),
            ));
        }
        if num_soi < 1 || num_soi > m {
            return Err(Error::InvalidPartition {
                num_soi,
                num_channels: m,
            });
        }
        Ok(Self { matrices, num_soi })
    }

    pub fn num_freqs(&self) -> usize {
        self.matrices.len()
    }

    pub fn num_channels(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn num_soi(&self) -> usize {
        self.num_soi
    }

    pub fn has_background(&self) -> bool {
        self.num_soi < self.num_channels()
    }

    pub fn matrix(&self, k: usize) -> &CMatrix {
        &self.matrices[k]
    }

    pub fn matrix_mut(&mut self, k: usize) -> &mut CMatrix {
        &mut self.matrices[k]
    }

    pub fn matrices(&self) -> &[CMatrix] {
        &self.matrices
    }

    pub fn matrices_mut(&mut self) -> &mut [CMatrix] {
        &mut self.matrices
    }

    /// Filter `w_k^q` as a column vector, i.e. the conjugated row `q`.
    pub fn filter(&self, k: usize, q: usize) -> CVector {
        let w = &self.matrices[k];
        CVector::from_iterator(w.ncols(), (0..w.ncols()).map(|j| w[(q, j)].conj()))
    }

    /// Stores `w` so that row `q` becomes `w^H`.
    pub fn set_filter(&mut self, k: usize, q: usize, w: &CVector) {
        let mat = &mut self.matrices[k];
        for j in 0..mat.ncols() {
            mat[(q, j)] = w[j].conj();
        }
    }

    /// Rows `S..M` rewritten so their right block is exactly `-I`.
    pub fn enforce_bg_structure(&mut self) {
        let m = self.num_channels();
        let s = self.num_soi;
        for w in &mut self.matrices {
            for i in s..m {
                for j in s..m {
                    w[(i, j)] = if i == j {
                        C64::new(-1.0, 0.0)
                    } else {
                        C64::new(0.0, 0.0)
                    };
                }
            }
        }
    }

    /// True when every background block equals `-I` bit for bit.
    pub fn bg_structure_exact(&self) -> bool {
        let m = self.num_channels();
        let s = self.num_soi;
        self.matrices.iter().all(|w| {
            (s..m).all(|i| {
                (s..m).all(|j| {
                    let expect = if i == j { -1.0 } else { 0.0 };
                    w[(i, j)].re == expect && w[(i, j)].im == 0.0
                })
            })
        })
    }

    /// `y_{k,n} = W_k x_{k,n}` for every bin.
    pub fn apply(&self, x: &SpectrogramTensor) -> Result<SpectrogramTensor> {
        self.apply_rows(x, self.num_channels())
    }

    /// Applies only the first `rows` rows of every `W_k`.
    pub fn apply_rows(&self, x: &SpectrogramTensor, rows: usize) -> Result<SpectrogramTensor> {
        let m = self.num_channels();
        if x.num_channels() != m || x.num_freqs() != self.num_freqs() {
            return Err(Error::DimensionMismatch(format!(
                "demixing is {}x{m}x{m}, data has {} bins and {} channels",
                self.num_freqs(),
                x.num_freqs(),
                x.num_channels()
            )));
        }
        let mut y = x.zeros_like(rows)?;
        for k in 0..x.num_freqs() {
            let w = &self.matrices[k];
            for n in 0..x.num_frames() {
                let xv = x.frame(k, n);
                let out = y.frame_mut(k, n);
                for (q, o) in out.iter_mut().enumerate() {
                    *o = (0..m).map(|j| w[(q, j)] * xv[j]).sum();
                }
            }
        }
        Ok(y)
    }
}

/// Who produced a covariance set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceRole {
    /// `C_k = E{x x^H}`.
    Microphone,
    /// `V_k^q` for output channel `q` (0-based).
    Weighted { channel: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    pub matrices: Vec<CMatrix>,
    pub role: CovarianceRole,
}

impl CovarianceSet {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
}

/// Variance `r_{q,k,n}` of the demixed sources, floored away from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DemixedVariance {
    /// `values[q][k * N + n]`.
    values: Vec<Vec<f64>>,
    num_freqs: usize,
    num_frames: usize,
}

impl DemixedVariance {
    pub fn new(values: Vec<Vec<f64>>, num_freqs: usize, num_frames: usize) -> Self {
        debug_assert!(values.iter().all(|v| v.len() == num_freqs * num_frames));
        Self {
            values,
            num_freqs,
            num_frames,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.values.len()
    }

    pub fn num_freqs(&self) -> usize {
        self.num_freqs
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    #[inline]
    pub fn get(&self, q: usize, k: usize, n: usize) -> f64 {
        self.values[q][k * self.num_frames + n]
    }

    pub fn channel(&self, q: usize) -> &[f64] {
        &self.values[q]
    }
}
