//! Estimate-driven linear filters, all time-invariant per utterance and
//! computed independently per (source, frequency):
//!
//! - [`mfwf`]: multi-frame Wiener filter projecting stacked mixture frames
//!   onto the first-stage estimate.
//! - [`convbf`]: convolutional beamformer, a power-weighted minimum-power
//!   filter over delayed past frames plus the current frame, constrained to
//!   be distortionless toward a mask-based steering vector.
//! - [`wpe`]: weighted prediction error dereverberation of one channel.
//!
//! Taps that fall outside the utterance read zeros, so outputs keep the
//! input's frame count.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_solve, inner, principal_eigvec, solve_normal, CMatrix, CVector, NormalEquations, DEFAULT_LOADING,
};
use crate::stft::Spectrogram;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_DELAY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Mfwf,
    Convbf,
    Wpe,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Mfwf => "mfwf",
            FilterKind::Convbf => "convbf",
            FilterKind::Wpe => "wpe",
        }
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mfwf" => Ok(FilterKind::Mfwf),
            "convbf" => Ok(FilterKind::Convbf),
            "wpe" => Ok(FilterKind::Wpe),
            other => Err(Error::InvalidArgument(format!("unknown filter kind '{other}'"))),
        }
    }
}

/// Filter taps and regularization.
///
/// `delta_l` past taps, `delta_r` future taps (MFWF only), `delta_d`
/// prediction delay (ConvBF and WPE), `epsilon` the power floor relative to
/// the estimate's peak power, `loading` the relative diagonal loading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    #[serde(default)]
    pub delta_l: usize,
    #[serde(default)]
    pub delta_r: usize,
    #[serde(default = "default_delay")]
    pub delta_d: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_loading")]
    pub loading: f64,
}

fn default_delay() -> usize {
    DEFAULT_DELAY
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_loading() -> f64 {
    DEFAULT_LOADING
}

impl FilterSpec {
    pub fn mfwf(delta_l: usize, delta_r: usize) -> Self {
        Self {
            kind: FilterKind::Mfwf,
            delta_l,
            delta_r,
            delta_d: 0,
            epsilon: DEFAULT_EPSILON,
            loading: DEFAULT_LOADING,
        }
    }

    pub fn convbf(delta_l: usize, delta_d: usize) -> Self {
        Self {
            kind: FilterKind::Convbf,
            delta_l,
            delta_r: 0,
            delta_d,
            epsilon: DEFAULT_EPSILON,
            loading: DEFAULT_LOADING,
        }
    }

    pub fn wpe(delta_l: usize, delta_d: usize) -> Self {
        Self {
            kind: FilterKind::Wpe,
            delta_l,
            delta_r: 0,
            delta_d,
            epsilon: DEFAULT_EPSILON,
            loading: DEFAULT_LOADING,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.loading >= 0.0) || !self.loading.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "loading must be >= 0, got {}",
                self.loading
            )));
        }
        match self.kind {
            FilterKind::Mfwf => Ok(()),
            FilterKind::Convbf | FilterKind::Wpe => {
                if self.delta_d < 1 {
                    return Err(Error::InvalidArgument(format!(
                        "{} needs a prediction delay of at least one frame",
                        self.kind.name()
                    )));
                }
                if self.delta_r != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "{} does not filter future frames (delta_r must be 0)",
                        self.kind.name()
                    )));
                }
                if self.kind == FilterKind::Wpe && self.delta_l < 1 {
                    return Err(Error::InvalidArgument("wpe needs at least one prediction tap".into()));
                }
                Ok(())
            }
        }
    }

    /// Frame offsets (relative to the current frame) read by the filter, in
    /// stacking order.
    pub fn frame_offsets(&self) -> Vec<isize> {
        let dl = self.delta_l as isize;
        let dd = self.delta_d as isize;
        match self.kind {
            FilterKind::Mfwf => (-dl..=self.delta_r as isize).collect(),
            FilterKind::Convbf => (-(dd + dl - 1)..=-dd).chain(std::iter::once(0)).collect(),
            FilterKind::Wpe => (-(dd + dl - 1)..=-dd).collect(),
        }
    }

    /// Filter length for `channels` input channels.
    pub fn filter_len(&self, channels: usize) -> usize {
        match self.kind {
            FilterKind::Mfwf => (self.delta_l + 1 + self.delta_r) * channels,
            FilterKind::Convbf => (self.delta_l + 1) * channels,
            FilterKind::Wpe => self.delta_l,
        }
    }
}

/// Filters indexed `[source][frequency]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub spec: FilterSpec,
    pub filters: Vec<Vec<CVector>>,
}

impl FilterBank {
    pub fn get(&self, source: usize, freq: usize) -> &CVector {
        &self.filters[source][freq]
    }
}

/// Collects `Y(t + offset, f)` for every offset, channels contiguous per
/// frame. `plane` is `channels × frames` at one frequency.
fn gather(plane: ArrayView2<'_, Complex64>, t: usize, offsets: &[isize], out: &mut Vec<Complex64>) {
    out.clear();
    let (channels, frames) = plane.dim();
    for &off in offsets {
        let src = t as isize + off;
        if src >= 0 && (src as usize) < frames {
            out.extend((0..channels).map(|p| plane[(p, src as usize)]));
        } else {
            out.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), channels));
        }
    }
}

/// `[Y(t−Δl, f)ᵀ, …, Y(t, f)ᵀ, …, Y(t+Δr, f)ᵀ]ᵀ` with zeros outside the
/// utterance; length `(Δl + 1 + Δr)·P`.
pub fn stack_frames(y: &Spectrogram, t: usize, f: usize, delta_l: usize, delta_r: usize) -> CVector {
    let offsets: Vec<isize> = (-(delta_l as isize)..=delta_r as isize).collect();
    let mut out = Vec::with_capacity(offsets.len() * y.channels());
    gather(freq_plane(y, f), t, &offsets, &mut out);
    CVector(out)
}

/// `channels × frames` view at frequency `f`.
fn freq_plane(y: &Spectrogram, f: usize) -> ArrayView2<'_, Complex64> {
    y.data.index_axis(Axis(2), f)
}

fn check_pair(y: &Spectrogram, s1: &Spectrogram) -> Result<()> {
    if y.frames() != s1.frames() || y.freqs() != s1.freqs() {
        return Err(Error::Dimension(format!(
            "mixture is {}x{} but estimate is {}x{} (frames x freqs)",
            y.frames(),
            y.freqs(),
            s1.frames(),
            s1.freqs()
        )));
    }
    Ok(())
}

/// Assembles per-(source, frequency) outputs of length `T` into a spectrogram.
fn assemble(
    y: &Spectrogram,
    per_source: Vec<Vec<(CVector, Vec<Complex64>)>>,
    spec: FilterSpec,
) -> (FilterBank, Spectrogram) {
    let sources = per_source.len();
    let (frames, freqs) = (y.frames(), y.freqs());
    let mut data = Array3::zeros((sources, frames, freqs));
    let mut filters = Vec::with_capacity(sources);
    for (c, per_freq) in per_source.into_iter().enumerate() {
        let mut bank = Vec::with_capacity(freqs);
        for (f, (w, out)) in per_freq.into_iter().enumerate() {
            for (t, v) in out.into_iter().enumerate() {
                data[(c, t, f)] = v;
            }
            bank.push(w);
        }
        filters.push(bank);
    }
    (FilterBank { spec, filters }, Spectrogram { data, config: y.config })
}

/// Multi-frame Wiener filter: per (c, f), `ŵ = argmin Σ_t |Ŝ(c,t,f) − wᴴỸ(t,f)|²`
/// and output `ŵᴴỸ(t,f)`. A frequency with no mixture energy gets the zero
/// filter.
pub fn mfwf(y: &Spectrogram, s1: &Spectrogram, spec: &FilterSpec) -> Result<(FilterBank, Spectrogram)> {
    let spec = FilterSpec {
        kind: FilterKind::Mfwf,
        ..*spec
    };
    spec.validate()?;
    check_pair(y, s1)?;
    let offsets = spec.frame_offsets();
    let dim = spec.filter_len(y.channels());

    let sources = s1.channels();

    // The mixture covariance is shared by all sources; only the cross
    // correlation with each estimate differs.
    let per_freq = (0..y.freqs())
        .into_par_iter()
        .map(|f| {
            let plane = freq_plane(y, f);
            let stacked = stack_all(plane, &offsets, dim);
            let mut covariance = CMatrix::zeros(dim, dim);
            for x in &stacked {
                covariance.add_outer(x, 1.0);
            }
            (0..sources)
                .map(|c| {
                    let mut cross = vec![Complex64::new(0.0, 0.0); dim];
                    for (t, x) in stacked.iter().enumerate() {
                        let target = s1.data[(c, t, f)].conj();
                        for (acc, v) in cross.iter_mut().zip(x) {
                            *acc += v * target;
                        }
                    }
                    let w = solve_normal(&covariance, &cross, spec.loading).map_err(|e| e.at_frequency(f))?;
                    let out = stacked.iter().map(|x| inner(&w, x)).collect();
                    Ok((w, out))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_source: Vec<Vec<(CVector, Vec<Complex64>)>> =
        (0..sources).map(|_| Vec::with_capacity(y.freqs())).collect();
    for per_c in per_freq {
        for (c, item) in per_c.into_iter().enumerate() {
            per_source[c].push(item);
        }
    }
    Ok(assemble(y, per_source, spec))
}

/// Stacked tap vectors for every frame.
fn stack_all(plane: ArrayView2<'_, Complex64>, offsets: &[isize], dim: usize) -> Vec<Vec<Complex64>> {
    (0..plane.dim().1)
        .map(|t| {
            let mut buf = Vec::with_capacity(dim);
            gather(plane, t, offsets, &mut buf);
            buf
        })
        .collect()
}

fn apply(w: &[Complex64], plane: ArrayView2<'_, Complex64>, offsets: &[isize], frames: usize) -> Vec<Complex64> {
    let mut buf = Vec::with_capacity(w.len());
    (0..frames)
        .map(|t| {
            gather(plane, t, offsets, &mut buf);
            inner(w, &buf)
        })
        .collect()
}

/// `Σ_{c,t,f} |Ŝ(c,t,f) − out(c,t,f)|²`, the least-squares objective the
/// Wiener filter minimizes.
pub fn mfwf_objective(s1: &Spectrogram, out: &Spectrogram) -> f64 {
    s1.data
        .iter()
        .zip(out.data.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum()
}

/// Power-spectral-density estimate `λ = max(ε·max|Ŝ|², |Ŝ|²)` for one
/// source (`frames × freqs`).
pub fn compute_lambda(s1: ArrayView2<'_, Complex64>, epsilon: f64) -> Result<Array2<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let power = s1.mapv(|z| z.norm_sqr());
    let peak = power.fold(0.0f64, |m, v| m.max(*v));
    if peak == 0.0 {
        return Err(Error::InvalidArgument(
            "estimate is all zero; its power floor is undefined".into(),
        ));
    }
    let floor = epsilon * peak;
    Ok(power.mapv(|p| p.max(floor)))
}

/// Mask, mask-weighted spatial covariance and reference-normalized
/// steering vector of one source.
#[derive(Debug, Clone)]
pub struct SpatialEstimate {
    /// `frames × freqs`, values in `[0, 1]`.
    pub mask: Array2<f64>,
    /// Per frequency `Σ_t m(t,f)·Y(t,f)Y(t,f)ᴴ`.
    pub covariance: Vec<CMatrix>,
    /// Per frequency principal eigenvector divided by its entry `q`.
    pub steering: Vec<CVector>,
}

/// Magnitude-ratio mask `|Ŝ|/(|Ŝ| + |Y_q − Ŝ|)`, its covariance, and the
/// relative transfer function toward microphone `q`. T-F units where both
/// terms vanish get mask 0.
pub fn compute_mask_and_rtf(y: &Spectrogram, s1: ArrayView2<'_, Complex64>, q: usize) -> Result<SpatialEstimate> {
    if q >= y.channels() {
        return Err(Error::InvalidArgument(format!(
            "reference microphone {q} out of range for {} channels",
            y.channels()
        )));
    }
    if s1.dim() != (y.frames(), y.freqs()) {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, mixture is {}x{}",
            s1.dim(),
            y.frames(),
            y.freqs()
        )));
    }
    let reference = y.data.index_axis(Axis(0), q);
    let mask = ndarray::Zip::from(&s1).and(&reference).map_collect(|s, yq| {
        let target = s.norm();
        let rest = (yq - s).norm();
        if target + rest > 0.0 {
            target / (target + rest)
        } else {
            0.0
        }
    });
    let p = y.channels();
    let per_freq: Vec<(CMatrix, CVector)> = (0..y.freqs())
        .into_par_iter()
        .map(|f| {
            let plane = freq_plane(y, f);
            let mut phi = CMatrix::zeros(p, p);
            let mut col = vec![Complex64::new(0.0, 0.0); p];
            for t in 0..y.frames() {
                for (ch, v) in col.iter_mut().enumerate() {
                    *v = plane[(ch, t)];
                }
                phi.add_outer(&col, mask[(t, f)]);
            }
            let d = principal_eigvec(&phi).map_err(|e| e.at_frequency(f))?;
            let dq = d[q];
            if dq.norm() <= 1e-12 * d.norm() {
                return Err(
                    Error::InvalidArgument(format!("steering vector vanishes at reference microphone {q}"))
                        .at_frequency(f),
                );
            }
            let steering = CVector(d.iter().map(|z| z / dq).collect());
            Ok((phi, steering))
        })
        .collect::<Result<Vec<_>>>()?;
    let (covariance, steering) = per_freq.into_iter().unzip();
    Ok(SpatialEstimate {
        mask,
        covariance,
        steering,
    })
}

/// Convolutional beamformer. Per (c, f) with `Ȳ(t) = [Y(t−Δd−Δl+1)ᵀ, …,
/// Y(t−Δd)ᵀ, Y(t)ᵀ]ᵀ`, `R = Σ_t ȲȲᴴ/λ̂(t)` and `d̃ = [0, …, 0, d̂_qᵀ]ᵀ`:
/// `ŵ = R⁻¹d̃ / (d̃ᴴR⁻¹d̃)`, output `ŵᴴȲ(t)`.
pub fn convbf(y: &Spectrogram, s1: &Spectrogram, spec: &FilterSpec, q: usize) -> Result<(FilterBank, Spectrogram)> {
    let spec = FilterSpec {
        kind: FilterKind::Convbf,
        ..*spec
    };
    spec.validate()?;
    check_pair(y, s1)?;
    let offsets = spec.frame_offsets();
    let p = y.channels();
    let dim = spec.filter_len(p);
    let frames = y.frames();

    let mut per_source = Vec::with_capacity(s1.channels());
    for c in 0..s1.channels() {
        let estimate = s1.data.index_axis(Axis(0), c);
        let lambda = compute_lambda(estimate, spec.epsilon)?;
        let spatial = compute_mask_and_rtf(y, estimate, q)?;
        let per_freq = (0..y.freqs())
            .into_par_iter()
            .map(|f| {
                let plane = freq_plane(y, f);
                let mut r = CMatrix::zeros(dim, dim);
                let mut buf = Vec::with_capacity(dim);
                for t in 0..frames {
                    gather(plane, t, &offsets, &mut buf);
                    r.add_outer(&buf, 1.0 / lambda[(t, f)]);
                }
                let mut constraint = vec![Complex64::new(0.0, 0.0); dim];
                constraint[dim - p..].copy_from_slice(&spatial.steering[f]);
                let w = distortionless(&r, &constraint, spec.loading).map_err(|e| e.at_frequency(f))?;
                let out = apply(&w, plane, &offsets, frames);
                Ok((w, out))
            })
            .collect::<Result<Vec<_>>>()?;
        per_source.push(per_freq);
    }
    Ok(assemble(y, per_source, spec))
}

/// `R⁻¹d / (dᴴR⁻¹d)`: minimizes `wᴴRw` subject to `wᴴd = 1`.
pub fn distortionless(r: &CMatrix, d: &[Complex64], loading: f64) -> Result<CVector> {
    if d.iter().all(|z| z.norm() == 0.0) {
        return Err(Error::InvalidArgument("zero steering vector".into()));
    }
    let x = hermitian_solve(r, d, loading)?;
    let denom = inner(d, &x);
    if !(denom.norm() > 0.0) || !denom.re.is_finite() {
        return Err(Error::InvalidArgument("degenerate distortionless constraint".into()));
    }
    let scale = denom.conj().inv();
    Ok(CVector(x.iter().map(|z| z * scale).collect()))
}

/// Weighted prediction error dereverberation of the single channel `y_q`.
/// Per (c, f): `ŵ = argmin Σ_t |Y_q(t) − wᴴY̆(t−Δd)|²/λ̂_c(t)` with
/// `Y̆(t−Δd) = [Y_q(t−Δd−Δl+1), …, Y_q(t−Δd)]ᵀ`; output
/// `Y_q(t) − ŵᴴY̆(t−Δd)`.
pub fn wpe(y_q: &Spectrogram, s1: &Spectrogram, spec: &FilterSpec) -> Result<(FilterBank, Spectrogram)> {
    let spec = FilterSpec {
        kind: FilterKind::Wpe,
        ..*spec
    };
    spec.validate()?;
    if y_q.channels() != 1 {
        return Err(Error::Dimension(format!(
            "wpe filters one channel, got {}",
            y_q.channels()
        )));
    }
    check_pair(y_q, s1)?;
    let offsets = spec.frame_offsets();
    let dim = spec.filter_len(1);
    let frames = y_q.frames();

    let mut per_source = Vec::with_capacity(s1.channels());
    for c in 0..s1.channels() {
        let lambda = compute_lambda(s1.data.index_axis(Axis(0), c), spec.epsilon)?;
        let per_freq = (0..y_q.freqs())
            .into_par_iter()
            .map(|f| {
                let plane = freq_plane(y_q, f);
                let mut eqs = NormalEquations::new(dim);
                let mut buf = Vec::with_capacity(dim);
                for t in 0..frames {
                    gather(plane, t, &offsets, &mut buf);
                    eqs.accumulate(&buf, plane[(0, t)], 1.0 / lambda[(t, f)]);
                }
                let w = eqs.solve(spec.loading).map_err(|e| e.at_frequency(f))?;
                let prediction = apply(&w, plane, &offsets, frames);
                let out = prediction.iter().enumerate().map(|(t, p)| plane[(0, t)] - p).collect();
                Ok((w, out))
            })
            .collect::<Result<Vec<_>>>()?;
        per_source.push(per_freq);
    }
    Ok(assemble(y_q, per_source, spec))
}

/// Dispatches on `spec.kind`. WPE filters microphone `q` only.
pub fn apply_filter(
    y: &Spectrogram,
    s1: &Spectrogram,
    spec: &FilterSpec,
    q: usize,
) -> Result<(FilterBank, Spectrogram)> {
    match spec.kind {
        FilterKind::Mfwf => mfwf(y, s1, spec),
        FilterKind::Convbf => convbf(y, s1, spec, q),
        FilterKind::Wpe => {
            if q >= y.channels() {
                return Err(Error::InvalidArgument(format!("reference microphone {q} out of range")));
            }
            wpe(&y.select(q), s1, spec)
        }
    }
}
