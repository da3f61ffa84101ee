//! Waveforms, complex spectrograms and the STFT pair between them.
//!
//! Framing is centered: the signal is left-padded with `win_len − hop_len`
//! zeros and frame `t` starts at padded sample `t·hop_len`, so frame `t`
//! covers original samples `[t·hop − (win − hop), (t + 1)·hop)`. The frame
//! count for `N` samples is `T = ceil(N / hop_len)`, the smallest count that
//! covers every sample. Synthesis divides the overlap-added output by the
//! accumulated squared-window envelope, which is exact for any hop.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    SqrtHann,
}

impl Window {
    /// Periodic window of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::SqrtHann => (0..len)
                .map(|i| {
                    let phase = 2.0 * std::f64::consts::PI * i as f64 / len as f64;
                    (0.5 - 0.5 * phase.cos()).max(0.0).sqrt()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub win_len: usize,
    pub hop_len: usize,
    pub dft_size: usize,
    #[serde(default)]
    pub window: Window,
}

impl StftConfig {
    /// Window and hop given in milliseconds; the DFT size equals the window.
    pub fn from_ms(sample_rate: u32, win_ms: f64, hop_ms: f64) -> Result<Self> {
        let win_len = (sample_rate as f64 * win_ms / 1000.0).round() as usize;
        let hop_len = (sample_rate as f64 * hop_ms / 1000.0).round() as usize;
        let cfg = Self {
            sample_rate,
            win_len,
            hop_len,
            dft_size: win_len,
            window: Window::SqrtHann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 32 ms sqrt-Hann window with an 8 ms hop.
    pub fn standard(sample_rate: u32) -> Self {
        Self::from_ms(sample_rate, 32.0, 8.0).expect("32/8 ms is a valid configuration")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if self.hop_len == 0 || self.hop_len > self.win_len {
            return Err(Error::Config(format!(
                "hop_len {} must be in 1..=win_len ({})",
                self.hop_len, self.win_len
            )));
        }
        if self.win_len > self.dft_size {
            return Err(Error::Config(format!(
                "window of {} samples is longer than the {}-point DFT",
                self.win_len, self.dft_size
            )));
        }
        if self.dft_size % 2 != 0 {
            return Err(Error::Config(format!("dft_size {} must be even", self.dft_size)));
        }
        Ok(())
    }

    pub fn num_freqs(&self) -> usize {
        self.dft_size / 2 + 1
    }

    /// `ceil(N / hop_len)` frames for an `N`-sample signal.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.hop_len)
    }

    fn left_pad(&self) -> usize {
        self.win_len - self.hop_len
    }
}

/// Multi-channel real signal, `channels × samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub data: Array2<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(data: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("waveform contains non-finite samples".into()));
        }
        Ok(Self { data, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let n = samples.len();
        Self::new(Array2::from_shape_vec((1, n), samples).expect("shape"), sample_rate)
    }

    pub fn from_channels(channels: &[Vec<f64>], sample_rate: u32) -> Result<Self> {
        let n = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("channels have different lengths".into()));
        }
        let flat: Vec<f64> = channels.iter().flatten().copied().collect();
        Self::new(
            Array2::from_shape_vec((channels.len(), n), flat).expect("shape"),
            sample_rate,
        )
    }

    pub fn zeros(channels: usize, samples: usize, sample_rate: u32) -> Self {
        Self {
            data: Array2::zeros((channels, samples)),
            sample_rate,
        }
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.data.row(c)
    }

    pub fn channel_vec(&self, c: usize) -> Vec<f64> {
        self.data.row(c).to_vec()
    }

    /// Single-channel waveform holding channel `c`.
    pub fn select(&self, c: usize) -> Waveform {
        Waveform {
            data: self.data.slice(ndarray::s![c..c + 1, ..]).to_owned(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, factor: f64) -> Waveform {
        Waveform {
            data: &self.data * factor,
            sample_rate: self.sample_rate,
        }
    }
}

/// Complex one-sided spectrogram, `channels × frames × freqs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn new(data: Array3<Complex64>, config: StftConfig) -> Result<Self> {
        if data.shape()[2] != config.num_freqs() {
            return Err(Error::Dimension(format!(
                "{} frequency bins, config implies {}",
                data.shape()[2],
                config.num_freqs()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("spectrogram contains non-finite values".into()));
        }
        Ok(Self { data, config })
    }

    pub fn zeros(channels: usize, frames: usize, config: StftConfig) -> Self {
        Self {
            data: Array3::zeros((channels, frames, config.num_freqs())),
            config,
        }
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn freqs(&self) -> usize {
        self.data.shape()[2]
    }

    /// `frames × freqs` view of channel `c`.
    pub fn channel(&self, c: usize) -> ArrayView2<'_, Complex64> {
        self.data.index_axis(Axis(0), c)
    }

    pub fn select(&self, c: usize) -> Spectrogram {
        Spectrogram {
            data: self.data.slice(ndarray::s![c..c + 1, .., ..]).to_owned(),
            config: self.config,
        }
    }

    /// Stacks single-channel `frames × freqs` planes into one spectrogram.
    pub fn from_planes(planes: &[Array2<Complex64>], config: StftConfig) -> Result<Self> {
        let views: Vec<_> = planes.iter().map(|p| p.view()).collect();
        let data = ndarray::stack(Axis(0), &views)
            .map_err(|e| Error::Dimension(format!("cannot stack spectrogram planes: {e}")))?;
        Self::new(data, config)
    }

    /// Real/imaginary feature stack: all real parts first, then all
    /// imaginary parts, giving `2·channels × frames × freqs`.
    pub fn to_ri_features(&self) -> Array3<f64> {
        let (c, t, f) = self.data.dim();
        let mut out = Array3::zeros((2 * c, t, f));
        for ((ch, tt, ff), z) in self.data.indexed_iter() {
            out[(ch, tt, ff)] = z.re;
            out[(c + ch, tt, ff)] = z.im;
        }
        out
    }
}

/// One-sided STFT of every channel.
pub fn stft(x: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if x.is_empty() || x.channels() == 0 {
        return Err(Error::Empty("signal has no samples"));
    }
    let n = x.len();
    let frames = cfg.num_frames(n);
    let freqs = cfg.num_freqs();
    let window = cfg.window.coefficients(cfg.win_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.dft_size);
    let pad = cfg.left_pad() as isize;

    let planes: Vec<Array2<Complex64>> = (0..x.channels())
        .into_par_iter()
        .map(|ch| {
            let signal = x.channel(ch);
            let mut plane = Array2::zeros((frames, freqs));
            let mut buf = vec![Complex64::new(0.0, 0.0); cfg.dft_size];
            for t in 0..frames {
                buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
                let start = (t * cfg.hop_len) as isize - pad;
                for (i, w) in window.iter().enumerate() {
                    let idx = start + i as isize;
                    if idx >= 0 && (idx as usize) < n {
                        buf[i] = Complex64::new(signal[idx as usize] * w, 0.0);
                    }
                }
                fft.process(&mut buf);
                for f in 0..freqs {
                    plane[(t, f)] = buf[f];
                }
            }
            plane
        })
        .collect();
    Spectrogram::from_planes(&planes, *cfg)
}

/// Overlap-add inverse of [`stft`], truncated or zero-padded to `out_len`.
///
/// The DC and Nyquist bins are treated as real: their imaginary parts are
/// discarded before the inverse transform.
pub fn istft(spec: &Spectrogram, out_len: usize) -> Result<Waveform> {
    let cfg = spec.config;
    cfg.validate()?;
    if spec.freqs() != cfg.num_freqs() {
        return Err(Error::Config(format!(
            "spectrogram has {} bins but config implies {}",
            spec.freqs(),
            cfg.num_freqs()
        )));
    }
    let frames = spec.frames();
    let window = cfg.window.coefficients(cfg.win_len);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(cfg.dft_size);
    let pad = cfg.left_pad() as isize;
    let norm = 1.0 / cfg.dft_size as f64;
    let half = cfg.dft_size / 2;

    let mut envelope = vec![0.0; out_len];
    for t in 0..frames {
        let start = (t * cfg.hop_len) as isize - pad;
        for (i, w) in window.iter().enumerate() {
            let idx = start + i as isize;
            if idx >= 0 && (idx as usize) < out_len {
                envelope[idx as usize] += w * w;
            }
        }
    }

    let channels: Vec<Vec<f64>> = (0..spec.channels())
        .into_par_iter()
        .map(|ch| {
            let plane = spec.channel(ch);
            let mut out = vec![0.0; out_len];
            let mut buf = vec![Complex64::new(0.0, 0.0); cfg.dft_size];
            for t in 0..frames {
                for f in 0..=half {
                    buf[f] = plane[(t, f)];
                }
                buf[0].im = 0.0;
                buf[half].im = 0.0;
                for f in 1..half {
                    buf[cfg.dft_size - f] = buf[f].conj();
                }
                ifft.process(&mut buf);
                let start = (t * cfg.hop_len) as isize - pad;
                for (i, w) in window.iter().enumerate() {
                    let idx = start + i as isize;
                    if idx >= 0 && (idx as usize) < out_len {
                        out[idx as usize] += buf[i].re * norm * w;
                    }
                }
            }
            for (v, e) in out.iter_mut().zip(&envelope) {
                *v = if *e > 1e-12 { *v / e } else { 0.0 };
            }
            out
        })
        .collect();
    Waveform::from_channels(&channels, cfg.sample_rate)
}

/// Magnitude of every T-F unit.
pub fn magnitude(spec: &Spectrogram) -> Array3<f64> {
    spec.data.mapv(|z| z.norm())
}
