//! Multichannel short-time Fourier analysis and single-channel overlap-add
//! synthesis.
//!
//! Spectrograms keep the one-sided spectrum only (`window_len / 2 + 1`
//! bins). Synthesis rebuilds the negative frequencies by conjugate
//! symmetry.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CVector, ZERO};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Hann analysis window, rectangular synthesis window.
    Hann,
    /// Square-root Hann for both analysis and synthesis.
    SqrtHann,
}

impl WindowKind {
    pub fn code(self) -> u8 {
        match self {
            WindowKind::Hann => 0,
            WindowKind::SqrtHann => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(WindowKind::Hann),
            1 => Some(WindowKind::SqrtHann),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate_hz: u32,
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            window_len: 512,
            hop: 256,
            window: WindowKind::SqrtHann,
        }
    }
}

/// Maximum relative ripple of the overlap-added window product.
const COLA_TOLERANCE: f64 = 1e-10;

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

impl StftConfig {
    pub fn num_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate_hz as f64 / self.window_len as f64
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        if num_samples < self.window_len {
            0
        } else {
            1 + (num_samples - self.window_len) / self.hop
        }
    }

    pub fn synthesis_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.window_len
        }
    }

    /// Time in seconds of the centre of frame `l`.
    pub fn frame_center_s(&self, l: usize) -> f64 {
        (l * self.hop) as f64 / self.sample_rate_hz as f64 + self.window_len as f64 / (2.0 * self.sample_rate_hz as f64)
    }

    /// Zeros placed before the signal by [`analyze_padded`].
    pub fn edge_padding(&self) -> usize {
        self.window_len - self.hop
    }

    /// Frame count of [`analyze_padded`] for a signal of `num_samples`.
    pub fn padded_num_frames(&self, num_samples: usize) -> usize {
        (num_samples + self.edge_padding()).div_ceil(self.hop)
    }

    /// First sample of padded frame `l`, in unpadded coordinates.
    pub fn padded_frame_start(&self, l: usize) -> isize {
        (l * self.hop) as isize - self.edge_padding() as isize
    }

    pub fn padded_frame_center_s(&self, l: usize) -> f64 {
        (self.padded_frame_start(l) as f64 + self.window_len as f64 / 2.0) / self.sample_rate_hz as f64
    }

    pub fn analysis_window(&self) -> Vec<f64> {
        let hann = periodic_hann(self.window_len);
        match self.window {
            WindowKind::Hann => hann,
            WindowKind::SqrtHann => hann.into_iter().map(f64::sqrt).collect(),
        }
    }

    pub fn synthesis_window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hann => vec![1.0; self.window_len],
            WindowKind::SqrtHann => self.analysis_window(),
        }
    }

    /// Overlap-added analysis×synthesis product over one hop period.
    pub fn overlap_sum(&self) -> Vec<f64> {
        let a = self.analysis_window();
        let s = self.synthesis_window();
        let mut sum = vec![0.0; self.hop];
        for (i, (x, y)) in a.iter().zip(&s).enumerate() {
            sum[i % self.hop] += x * y;
        }
        sum
    }

    /// Constant that the overlap-added window product equals.
    pub fn cola_gain(&self) -> f64 {
        let sum = self.overlap_sum();
        sum.iter().sum::<f64>() / sum.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if self.window_len == 0 || !self.window_len.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "window length must be positive and even, got {}",
                self.window_len
            )));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Config(format!(
                "hop must be in [1, {}], got {}",
                self.window_len, self.hop
            )));
        }
        let sum = self.overlap_sum();
        let mean = sum.iter().sum::<f64>() / sum.len() as f64;
        let ripple = sum.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max) / mean;
        if !(ripple <= COLA_TOLERANCE) {
            return Err(Error::Config(format!(
                "window/hop pair violates constant overlap-add (relative ripple {ripple:e})"
            )));
        }
        Ok(())
    }
}

/// Complex STFT indexed `(channel, bin, frame)`, stored row-major in that
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    channels: usize,
    bins: usize,
    frames: usize,
    data: Vec<Complex64>,
    config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn zeros(channels: usize, frames: usize, config: StftConfig) -> Self {
        let bins = config.num_bins();
        Self {
            channels,
            bins,
            frames,
            data: vec![ZERO; channels * bins * frames],
            config,
        }
    }

    pub fn from_raw(channels: usize, frames: usize, data: Vec<Complex64>, config: StftConfig) -> Result<Self> {
        let bins = config.num_bins();
        if data.len() != channels * bins * frames {
            return Err(Error::Shape(format!(
                "expected {} values for ({channels}, {bins}, {frames}), got {}",
                channels * bins * frames,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram"));
        }
        Ok(Self {
            channels,
            bins,
            frames,
            data,
            config,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    fn offset(&self, m: usize, k: usize, l: usize) -> usize {
        (m * self.bins + k) * self.frames + l
    }

    #[inline]
    pub fn get(&self, m: usize, k: usize, l: usize) -> Complex64 {
        self.data[self.offset(m, k, l)]
    }

    #[inline]
    pub fn set(&mut self, m: usize, k: usize, l: usize, v: Complex64) {
        let i = self.offset(m, k, l);
        self.data[i] = v;
    }

    /// The `M`-vector `y(l, k)` across channels.
    pub fn frame_vector(&self, k: usize, l: usize) -> CVector {
        (0..self.channels).map(|m| self.get(m, k, l)).collect()
    }

    /// All frames of one channel and bin.
    pub fn bin_series(&self, m: usize, k: usize) -> &[Complex64] {
        let start = self.offset(m, k, 0);
        &self.data[start..start + self.frames]
    }

    /// Per-bin view as `frames` consecutive `M`-vectors, i.e. the layout the
    /// per-bin estimators iterate over.
    pub fn bin_frames(&self, k: usize) -> Vec<CVector> {
        (0..self.frames).map(|l| self.frame_vector(k, l)).collect()
    }

    /// Builds a spectrogram from per-bin frame vectors (`per_bin[k][l][m]`).
    pub fn from_bin_frames(per_bin: &[Vec<CVector>], channels: usize, config: StftConfig) -> Self {
        let frames = per_bin.first().map_or(0, Vec::len);
        let mut out = Self::zeros(channels, frames, config);
        for (k, series) in per_bin.iter().enumerate() {
            for (l, v) in series.iter().enumerate() {
                for (m, z) in v.iter().enumerate() {
                    out.set(m, k, l, *z);
                }
            }
        }
        out
    }

    pub fn channel(&self, m: usize) -> ComplexSpectrogram {
        let start = self.offset(m, 0, 0);
        let len = self.bins * self.frames;
        Self {
            channels: 1,
            bins: self.bins,
            frames: self.frames,
            data: self.data[start..start + len].to_vec(),
            config: self.config,
        }
    }
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    }
}

/// Analyses every channel of `signal` (one `Vec` per channel).
pub fn analyze(signal: &[Vec<f64>], config: &StftConfig) -> Result<ComplexSpectrogram> {
    config.validate()?;
    let channels = signal.len();
    if channels == 0 {
        return Err(Error::InvalidInput("signal has no channels".into()));
    }
    let n = signal[0].len();
    if let Some(bad) = signal.iter().find(|c| c.len() != n) {
        return Err(Error::Shape(format!("channel lengths differ ({n} vs {})", bad.len())));
    }
    if n < config.window_len {
        return Err(Error::TooShort {
            len: n,
            need: config.window_len,
        });
    }
    if signal.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("time-domain signal"));
    }

    let frames = config.num_frames(n);
    let bins = config.num_bins();
    let window = config.analysis_window();
    let fft = plan(config.window_len, false);

    let mut out = ComplexSpectrogram::zeros(channels, frames, *config);
    par::for_each_chunk_mut(&mut out.data, bins * frames, |m, chunk| {
        let x = &signal[m];
        let mut buf = vec![ZERO; config.window_len];
        let mut scratch = vec![ZERO; fft.get_inplace_scratch_len()];
        for l in 0..frames {
            let start = l * config.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(x[start + i] * window[i], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..bins {
                chunk[k * frames + l] = buf[k];
            }
        }
    });
    Ok(out)
}

/// Weighted overlap-add resynthesis of a single-channel spectrogram.
pub fn synthesize(spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
    if spec.channels != 1 {
        return Err(Error::Shape(format!(
            "synthesis expects one channel, got {}",
            spec.channels
        )));
    }
    let config = spec.config;
    config.validate()?;
    if spec.bins != config.num_bins() {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins but config implies {}",
            spec.bins,
            config.num_bins()
        )));
    }

    let n_fft = config.window_len;
    let window = config.synthesis_window();
    let gain = 1.0 / (config.cola_gain() * n_fft as f64);
    let ifft = plan(n_fft, true);
    let mut scratch = vec![ZERO; ifft.get_inplace_scratch_len()];
    let mut buf = vec![ZERO; n_fft];
    let mut out = vec![0.0; config.synthesis_len(spec.frames)];

    for l in 0..spec.frames {
        for k in 0..spec.bins {
            buf[k] = spec.get(0, k, l);
        }
        buf[0].im = 0.0;
        buf[n_fft / 2].im = 0.0;
        for k in 1..n_fft / 2 {
            buf[n_fft - k] = buf[k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = l * config.hop;
        for (i, z) in buf.iter().enumerate() {
            out[start + i] += z.re * window[i] * gain;
        }
    }
    Ok(out)
}

/// Analysis of the signal zero-padded so that every sample lies under the
/// full set of overlapping windows; [`synthesize_padded`] then reconstructs
/// the whole signal, edges included.
pub fn analyze_padded(signal: &[Vec<f64>], config: &StftConfig) -> Result<ComplexSpectrogram> {
    config.validate()?;
    let n = signal.first().map_or(0, Vec::len);
    let pad = config.edge_padding();
    let total = config.synthesis_len(config.padded_num_frames(n)).max(config.window_len);
    let padded: Vec<Vec<f64>> = signal
        .iter()
        .map(|c| {
            let mut p = vec![0.0; pad];
            p.extend_from_slice(c);
            p.resize(total.max(pad + c.len()), 0.0);
            p
        })
        .collect();
    analyze(&padded, config)
}

/// Inverse of [`analyze_padded`] for a signal of `num_samples`.
pub fn synthesize_padded(spec: &ComplexSpectrogram, num_samples: usize) -> Result<Vec<f64>> {
    let pad = spec.config.edge_padding();
    let mut out = synthesize(spec)?;
    if out.len() < pad + num_samples {
        return Err(Error::Shape(format!(
            "{} frames cannot cover {num_samples} samples",
            spec.frames
        )));
    }
    out.drain(..pad);
    out.truncate(num_samples);
    Ok(out)
}
