//! Synthetic reverberant multi-channel scenes:
//!
//! `y_p[n] = Σ_c (s_p(c)[n] + h_p(c)[n]) + v_p[n]`
//!
//! where the direct path `s_p(c)` is the dry source delayed and scaled, the
//! tail `h_p(c)` is the dry source convolved with a seeded exponentially
//! decaying random filter that starts right after the direct delay, and `v`
//! is white noise scaled against the summed direct paths at microphone 0.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::{stft, Spectrogram, StftConfig, Waveform};
use crate::wav::{write_wav, WavEncoding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    #[default]
    None,
}

/// Late-part filter: `length` taps, amplitude envelope `level·exp(−k/decay)`
/// with `decay` in samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailSpec {
    pub length: usize,
    pub decay: f64,
    #[serde(default = "default_tail_level")]
    pub level: f64,
}

fn default_tail_level() -> f64 {
    0.3
}

impl Default for TailSpec {
    fn default() -> Self {
        Self {
            length: 0,
            decay: 1.0,
            level: default_tail_level(),
        }
    }
}

/// Scene description. Per-(source, mic) delays and gains that are left out
/// are drawn from the seed: delays uniform in `0..=max_delay`, gains in
/// `[0.5, 1.0]`. `tails` overrides `tail` per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub sources: usize,
    pub mics: usize,
    pub sample_rate: u32,
    pub duration: f64,
    #[serde(default)]
    pub direct_delay: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub direct_gain: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_max_delay")]
    pub max_delay: usize,
    #[serde(default)]
    pub tail: TailSpec,
    #[serde(default)]
    pub tails: Option<Vec<Vec<TailSpec>>>,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_delay() -> usize {
    8
}

impl SceneSpec {
    /// `sources` talkers at `mics` microphones, anechoic and noise-free.
    pub fn new(sources: usize, mics: usize, sample_rate: u32, duration: f64, seed: u64) -> Self {
        Self {
            sources,
            mics,
            sample_rate,
            duration,
            direct_delay: None,
            direct_gain: None,
            max_delay: default_max_delay(),
            tail: TailSpec::default(),
            tails: None,
            noise: NoiseKind::None,
            snr_db: None,
            seed,
        }
    }

    pub fn with_tail(mut self, length: usize, decay: f64, level: f64) -> Self {
        self.tail = TailSpec { length, decay, level };
        self
    }

    pub fn with_noise(mut self, snr_db: f64) -> Self {
        self.noise = NoiseKind::White;
        self.snr_db = Some(snr_db);
        self
    }

    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    fn check_grid<T>(&self, name: &str, grid: &[Vec<T>]) -> Result<()> {
        if grid.len() != self.sources || grid.iter().any(|row| row.len() != self.mics) {
            return Err(Error::Config(format!(
                "{name} must be {} rows of {} entries",
                self.sources, self.mics
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources == 0 || self.mics == 0 {
            return Err(Error::Config(
                "a scene needs at least one source and one microphone".into(),
            ));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::Config(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(d) = &self.direct_delay {
            self.check_grid("direct_delay", d)?;
        }
        if let Some(g) = &self.direct_gain {
            self.check_grid("direct_gain", g)?;
            if g.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Config("direct gains must be finite".into()));
            }
        }
        if let Some(t) = &self.tails {
            self.check_grid("tails", t)?;
        }
        let tails: Vec<TailSpec> = match &self.tails {
            Some(t) => t.iter().flatten().copied().collect(),
            None => vec![self.tail],
        };
        for t in &tails {
            if t.length > 0 && (!(t.decay > 0.0) || !t.level.is_finite()) {
                return Err(Error::Config("tail decay must be positive and level finite".into()));
            }
        }
        match (self.noise, self.snr_db) {
            (NoiseKind::White, None) => return Err(Error::Config("white noise needs snr_db".into())),
            (NoiseKind::None, Some(_)) => return Err(Error::Config("snr_db given without noise".into())),
            (_, Some(s)) if !s.is_finite() => return Err(Error::Config("snr_db must be finite".into())),
            _ => {}
        }
        let max_delay = match &self.direct_delay {
            Some(d) => d.iter().flatten().copied().max().unwrap_or(0),
            None => self.max_delay,
        };
        let max_tail = tails.iter().map(|t| t.length).max().unwrap_or(0);
        let needed = max_delay + 1 + max_tail;
        if self.num_samples() <= needed {
            return Err(Error::Config(format!(
                "duration of {} samples is too short for delays and filters spanning {needed}",
                self.num_samples()
            )));
        }
        Ok(())
    }
}

/// Every component of a simulated scene, all of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    /// `C` channels, one per dry source.
    pub dry: Waveform,
    /// Per source, `P` channels.
    pub direct: Vec<Waveform>,
    /// Per source, `P` channels.
    pub tail: Vec<Waveform>,
    pub noise: Waveform,
    pub mixture: Waveform,
    pub delays: Vec<Vec<usize>>,
    pub gains: Vec<Vec<f64>>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Unit-variance white noise band-limited to 100 Hz .. 0.4·fs.
fn band_limited_noise(n: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(normal(rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let lo = 100.0;
    let hi = 0.4 * sample_rate as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k) as f64 * sample_rate as f64 / n as f64;
        if bin < lo || bin > hi {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|z| z.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    x.iter().map(|v| (v - mean) * scale).collect()
}

/// Linear convolution truncated to the input length.
fn convolve(x: &[f64], h: &[f64], offset: usize) -> Vec<f64> {
    let n = x.len();
    let mut y = vec![0.0; n];
    for (k, &hk) in h.iter().enumerate() {
        let lag = offset + k;
        if lag >= n || hk == 0.0 {
            continue;
        }
        for i in lag..n {
            y[i] += hk * x[i - lag];
        }
    }
    y
}

fn energy(x: impl Iterator<Item = f64>) -> f64 {
    x.map(|v| v * v).sum()
}

/// Generates the scene; a pure function of `spec`.
pub fn simulate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let n = spec.num_samples();
    let (c_count, p_count) = (spec.sources, spec.mics);
    let sr = spec.sample_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let dry: Vec<Vec<f64>> = (0..c_count).map(|_| band_limited_noise(n, sr, &mut rng)).collect();
    let delays = match &spec.direct_delay {
        Some(d) => d.clone(),
        None => (0..c_count)
            .map(|_| (0..p_count).map(|_| rng.random_range(0..=spec.max_delay)).collect())
            .collect(),
    };
    let gains = match &spec.direct_gain {
        Some(g) => g.clone(),
        None => (0..c_count)
            .map(|_| (0..p_count).map(|_| rng.random_range(0.5..=1.0)).collect())
            .collect(),
    };

    let mut direct = Vec::with_capacity(c_count);
    let mut tail = Vec::with_capacity(c_count);
    for c in 0..c_count {
        let mut d = Array2::zeros((p_count, n));
        let mut h = Array2::zeros((p_count, n));
        for p in 0..p_count {
            let delay = delays[c][p];
            for i in delay..n {
                d[(p, i)] = gains[c][p] * dry[c][i - delay];
            }
            let t = spec.tails.as_ref().map_or(spec.tail, |t| t[c][p]);
            if t.length > 0 {
                let filter: Vec<f64> = (0..t.length)
                    .map(|k| t.level * gains[c][p] * (-(k as f64) / t.decay).exp() * normal(&mut rng))
                    .collect();
                for (i, v) in convolve(&dry[c], &filter, delay + 1).into_iter().enumerate() {
                    h[(p, i)] = v;
                }
            }
        }
        direct.push(Waveform::new(d, sr)?);
        tail.push(Waveform::new(h, sr)?);
    }

    let mut noise = Array2::zeros((p_count, n));
    if spec.noise == NoiseKind::White {
        let raw = Array2::from_shape_fn((p_count, n), |_| normal(&mut rng));
        let speech = energy((0..n).map(|i| direct.iter().map(|w| w.data[(0, i)]).sum::<f64>()));
        let current = energy(raw.row(0).iter().copied());
        let wanted = speech / 10f64.powf(spec.snr_db.unwrap_or(0.0) / 10.0);
        let scale = if current > 0.0 { (wanted / current).sqrt() } else { 0.0 };
        noise = raw.mapv(|v| v * scale);
    }

    let mut mixture = Array2::zeros((p_count, n));
    for p in 0..p_count {
        for i in 0..n {
            let mut v = 0.0;
            for c in 0..c_count {
                v += direct[c].data[(p, i)] + tail[c].data[(p, i)];
            }
            mixture[(p, i)] = v + noise[(p, i)];
        }
    }

    Ok(Scene {
        spec: spec.clone(),
        dry: Waveform::from_channels(&dry, sr)?,
        direct,
        tail,
        noise: Waveform::new(noise, sr)?,
        mixture: Waveform::new(mixture, sr)?,
        delays,
        gains,
    })
}

impl Scene {
    /// Direct-path signal of every source at microphone `q`, one channel per
    /// source.
    pub fn targets(&self, q: usize) -> Result<Waveform> {
        if q >= self.spec.mics {
            return Err(Error::InvalidArgument(format!("microphone {q} out of range")));
        }
        let channels: Vec<Vec<f64>> = self.direct.iter().map(|w| w.channel_vec(q)).collect();
        Waveform::from_channels(&channels, self.mixture.sample_rate)
    }

    /// Writes `mixture.wav`, `noise.wav`, `dry.wav`, `targets.wav` (direct
    /// paths at microphone 0, one channel per source), per source
    /// `direct_c{c}.wav` and `tail_c{c}.wav`, and `scene.toml` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_wav(dir.join("mixture.wav"), &self.mixture, encoding)?;
        write_wav(dir.join("noise.wav"), &self.noise, encoding)?;
        write_wav(dir.join("dry.wav"), &self.dry, encoding)?;
        write_wav(dir.join("targets.wav"), &self.targets(0)?, encoding)?;
        for (c, (d, t)) in self.direct.iter().zip(&self.tail).enumerate() {
            write_wav(dir.join(format!("direct_c{c}.wav")), d, encoding)?;
            write_wav(dir.join(format!("tail_c{c}.wav")), t, encoding)?;
        }
        std::fs::write(dir.join("scene.toml"), self.spec.to_toml()?)?;
        Ok(())
    }
}

/// Scales `mixture` to unit sample variance (over all channels jointly) and
/// multiplies every target by the same factor, which is returned.
pub fn normalize_variance(mixture: &Waveform, targets: &[Waveform]) -> Result<(Waveform, Vec<Waveform>, f64)> {
    let count = mixture.data.len();
    if count == 0 {
        return Err(Error::Empty("mixture"));
    }
    let mean = mixture.data.sum() / count as f64;
    let var = mixture.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
    if !(var > 0.0) {
        return Err(Error::InvalidArgument("mixture has zero variance".into()));
    }
    let factor = 1.0 / var.sqrt();
    Ok((
        mixture.scaled(factor),
        targets.iter().map(|t| t.scaled(factor)).collect(),
        factor,
    ))
}

/// Stand-in first-stage estimator: the STFT of `targets` (one channel per
/// source) after adding seeded white noise at `corruption_db` SNR per
/// source. Noise is added in the time domain so the result is a consistent
/// spectrogram; `f64::INFINITY` adds none.
pub fn oracle_estimator(targets: &Waveform, corruption_db: f64, seed: u64, cfg: &StftConfig) -> Result<Spectrogram> {
    if corruption_db.is_nan() || corruption_db == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument(format!(
            "corruption must be a finite dB value or +inf, got {corruption_db}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = targets.data.clone();
    if corruption_db.is_finite() {
        for mut row in data.rows_mut() {
            let noise: Vec<f64> = (0..row.len()).map(|_| normal(&mut rng)).collect();
            let target = energy(row.iter().copied());
            let current = energy(noise.iter().copied());
            let scale = (target / 10f64.powf(corruption_db / 10.0) / current).sqrt();
            for (v, e) in row.iter_mut().zip(&noise) {
                *v += scale * e;
            }
        }
    }
    stft(&Waveform::new(data, targets.sample_rate)?, cfg)
}
