//! Scale-invariant SDR, the training-loss family, permutation-invariant
//! assignment and evaluation reports.
//!
//! Multi-source arguments are [`Waveform`]s with one channel per source.
//! Permutations are 0-based: `perm[c]` is the estimate assigned to
//! reference `c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::{magnitude, stft, StftConfig, Waveform};

/// Limit applied to every SI-SDR value, in dB.
pub const SI_SDR_CLAMP_DB: f64 = 60.0;
const LOG_EPS: f64 = 1e-12;
/// Largest source count `pit_assign` enumerates exhaustively.
pub const MAX_PIT_SOURCES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SisdrSe,
    SisdrSeMc,
    WavMag,
    WavMagMc,
    WavMagGeq,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::SisdrSe,
        LossKind::SisdrSeMc,
        LossKind::WavMag,
        LossKind::WavMagMc,
        LossKind::WavMagGeq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::SisdrSe => "sisdr_se",
            LossKind::SisdrSeMc => "sisdr_se_mc",
            LossKind::WavMag => "wav_mag",
            LossKind::WavMagMc => "wav_mag_mc",
            LossKind::WavMagGeq => "wav_mag_geq",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s) || k.name().replace('_', "-").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss '{s}'")))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("signal lengths differ: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Empty("signal"));
    }
    Ok(())
}

/// Least-squares gain `ŝᵀs / ŝᵀŝ` mapping `est` onto `reference`.
pub fn optimal_gain(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_len(est.len(), reference.len())?;
    let energy = dot(est, est);
    if energy == 0.0 {
        return Err(Error::InvalidArgument(
            "estimate has zero energy; its gain is undefined".into(),
        ));
    }
    Ok(dot(est, reference) / energy)
}

/// `10·log₁₀(‖s‖² / ‖α̂ŝ − s‖²)` with `α̂ = ŝᵀs/ŝᵀŝ`, 1e-12 added to both
/// energies and the result clamped to ±60 dB.
pub fn si_sdr_se(est: &[f64], reference: &[f64]) -> Result<f64> {
    let alpha = optimal_gain(est, reference)?;
    let target = dot(reference, reference);
    if target == 0.0 {
        return Err(Error::InvalidArgument("reference has zero energy".into()));
    }
    let residual: f64 = est.iter().zip(reference).map(|(e, s)| (alpha * e - s).powi(2)).sum();
    let db = 10.0 * ((target + LOG_EPS) / (residual + LOG_EPS)).log10();
    Ok(db.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB))
}

/// Evaluation SI-SDR, scaling the reference: `10·log₁₀(‖βs‖² / ‖βs − ŝ‖²)`
/// with `β = ŝᵀs/sᵀs`. Unlike [`si_sdr_se`], which is never below 0 dB, this
/// goes negative for estimates dominated by interference. Same ε and clamp.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_len(est.len(), reference.len())?;
    let target = dot(reference, reference);
    if target == 0.0 {
        return Err(Error::InvalidArgument("reference has zero energy".into()));
    }
    if dot(est, est) == 0.0 {
        return Err(Error::InvalidArgument("estimate has zero energy".into()));
    }
    let beta = dot(est, reference) / target;
    let projected = beta * beta * target;
    let residual: f64 = est.iter().zip(reference).map(|(e, s)| (beta * s - e).powi(2)).sum();
    let db = 10.0 * ((projected + LOG_EPS) / (residual + LOG_EPS)).log10();
    Ok(db.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB))
}

/// Improvement of `est` over the unprocessed mixture channel, in [`si_sdr`].
pub fn si_sdri(est: &[f64], reference: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(si_sdr(est, reference)? - si_sdr(mixture, reference)?)
}

fn check_sources(est: &Waveform, reference: &Waveform) -> Result<()> {
    if est.channels() != reference.channels() {
        return Err(Error::Dimension(format!(
            "{} estimates for {} references",
            est.channels(),
            reference.channels()
        )));
    }
    if est.channels() == 0 {
        return Err(Error::Empty("sources"));
    }
    check_len(est.len(), reference.len())
}

/// `−Σ_c si_sdr_se(ŝᶜ, sᶜ)`.
pub fn loss_sisdr_se(est: &Waveform, reference: &Waveform) -> Result<f64> {
    check_sources(est, reference)?;
    let mut total = 0.0;
    for c in 0..est.channels() {
        total -= si_sdr_se(&est.channel_vec(c), &reference.channel_vec(c))?;
    }
    Ok(total)
}

/// `(1/N)·‖Σ_c α̂ᶜŝᶜ − Σ_c sᶜ‖₁`.
pub fn mixture_constraint(est: &Waveform, reference: &Waveform) -> Result<f64> {
    check_sources(est, reference)?;
    let n = est.len();
    let mut diff = vec![0.0; n];
    for c in 0..est.channels() {
        let e = est.channel_vec(c);
        let s = reference.channel_vec(c);
        let alpha = optimal_gain(&e, &s)?;
        for (d, (x, y)) in diff.iter_mut().zip(e.iter().zip(&s)) {
            *d += alpha * x - y;
        }
    }
    Ok(diff.iter().map(|d| d.abs()).sum::<f64>() / n as f64)
}

/// SI-SDR-SE loss plus the mixture-constraint term, unweighted.
pub fn loss_sisdr_se_mc(est: &Waveform, reference: &Waveform) -> Result<f64> {
    Ok(loss_sisdr_se(est, reference)? + mixture_constraint(est, reference)?)
}

/// `(1/N)·‖ŝ − s‖₁ + (1/(T·F))·‖|STFT(ŝ)| − |STFT(s)|‖₁` for one signal pair.
pub fn wav_mag_term(est: &[f64], reference: &[f64], cfg: &StftConfig) -> Result<f64> {
    check_len(est.len(), reference.len())?;
    let n = est.len();
    let wav: f64 = est.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
    let sr = cfg.sample_rate;
    let me = magnitude(&stft(&Waveform::mono(est.to_vec(), sr)?, cfg)?);
    let ms = magnitude(&stft(&Waveform::mono(reference.to_vec(), sr)?, cfg)?);
    let cells = (me.shape()[1] * me.shape()[2]) as f64;
    let mag: f64 = me.iter().zip(ms.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / cells;
    Ok(wav + mag)
}

/// Wav+Mag loss summed over sources; `with_mc` adds the same two terms on
/// the source sums.
pub fn loss_wav_mag(est: &Waveform, reference: &Waveform, cfg: &StftConfig, with_mc: bool) -> Result<f64> {
    check_sources(est, reference)?;
    let mut total = 0.0;
    for c in 0..est.channels() {
        total += wav_mag_term(&est.channel_vec(c), &reference.channel_vec(c), cfg)?;
    }
    if with_mc {
        let sum = |w: &Waveform| -> Vec<f64> { (0..w.len()).map(|i| w.data.column(i).sum()).collect() };
        total += wav_mag_term(&sum(est), &sum(reference), cfg)?;
    }
    Ok(total)
}

/// Wav+Mag loss on dry signals after scaling each estimate by its
/// least-squares gain.
pub fn loss_wav_mag_geq(est_dry: &Waveform, ref_dry: &Waveform, cfg: &StftConfig) -> Result<f64> {
    check_sources(est_dry, ref_dry)?;
    let mut total = 0.0;
    for c in 0..est_dry.channels() {
        let e = est_dry.channel_vec(c);
        let o = ref_dry.channel_vec(c);
        let alpha = optimal_gain(&e, &o)?;
        let scaled: Vec<f64> = e.iter().map(|x| alpha * x).collect();
        total += wav_mag_term(&scaled, &o, cfg)?;
    }
    Ok(total)
}

/// Evaluates `kind` with estimates already in reference order.
pub fn loss(kind: LossKind, est: &Waveform, reference: &Waveform, cfg: &StftConfig) -> Result<f64> {
    match kind {
        LossKind::SisdrSe => loss_sisdr_se(est, reference),
        LossKind::SisdrSeMc => loss_sisdr_se_mc(est, reference),
        LossKind::WavMag => loss_wav_mag(est, reference, cfg, false),
        LossKind::WavMagMc => loss_wav_mag(est, reference, cfg, true),
        LossKind::WavMagGeq => loss_wav_mag_geq(est, reference, cfg),
    }
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    loop {
        out.push(current.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
    }
}

/// Reorders estimate channels so that output channel `c` is `est[perm[c]]`.
pub fn permute(est: &Waveform, perm: &[usize]) -> Waveform {
    let channels: Vec<Vec<f64>> = perm.iter().map(|&p| est.channel_vec(p)).collect();
    Waveform::from_channels(&channels, est.sample_rate).expect("permuted channels share a length")
}

/// Exhaustive utterance-level assignment: the permutation with the lowest
/// total loss, ties going to the lexicographically smallest.
pub fn pit_assign(est: &Waveform, reference: &Waveform, kind: LossKind, cfg: &StftConfig) -> Result<(Vec<usize>, f64)> {
    check_sources(est, reference)?;
    let c = est.channels();
    if c > MAX_PIT_SOURCES {
        return Err(Error::Unsupported(format!(
            "exhaustive assignment is limited to {MAX_PIT_SOURCES} sources, got {c}"
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in permutations(c) {
        let value = loss(kind, &permute(est, &perm), reference, cfg)?;
        if best.as_ref().is_none_or(|(_, b)| value < *b) {
            best = Some((perm, value));
        }
    }
    Ok(best.expect("at least one permutation"))
}

/// Per-source metrics after assignment; `si_sdr` and `si_sdri` use the
/// evaluation definition [`si_sdr`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss_kind: LossKind,
    pub loss: f64,
    pub permutation: Vec<usize>,
    pub si_sdr: Vec<f64>,
    pub si_sdri: Vec<f64>,
}

impl EvalReport {
    /// Assigns estimates to references with `kind`, then scores each
    /// assigned estimate against its reference and the mixture channel.
    pub fn evaluate(
        est: &Waveform,
        reference: &Waveform,
        mixture: &[f64],
        kind: LossKind,
        cfg: &StftConfig,
    ) -> Result<Self> {
        let (permutation, loss) = pit_assign(est, reference, kind, cfg)?;
        check_len(mixture.len(), reference.len())?;
        let mut values = Vec::new();
        let mut improvement = Vec::new();
        for (c, &p) in permutation.iter().enumerate() {
            let e = est.channel_vec(p);
            let s = reference.channel_vec(c);
            let value = si_sdr(&e, &s)?;
            values.push(value);
            improvement.push(value - si_sdr(mixture, &s)?);
        }
        Ok(Self {
            loss_kind: kind,
            loss,
            permutation,
            si_sdr: values,
            si_sdri: improvement,
        })
    }

    pub fn mean_si_sdr(&self) -> f64 {
        self.si_sdr.iter().sum::<f64>() / self.si_sdr.len() as f64
    }

    pub fn mean_si_sdri(&self) -> f64 {
        self.si_sdri.iter().sum::<f64>() / self.si_sdri.len() as f64
    }

    /// One line per source plus a summary line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (c, &p) in self.permutation.iter().enumerate() {
            s.push_str(&format!(
                "source {c}: estimate {p}  SI-SDR {:.2} dB  SI-SDRi {:.2} dB\n",
                self.si_sdr[c], self.si_sdri[c]
            ));
        }
        s.push_str(&format!(
            "mean: SI-SDR {:.2} dB  SI-SDRi {:.2} dB  loss ({}) {:.6}\n",
            self.mean_si_sdr(),
            self.mean_si_sdri(),
            self.loss_kind.name(),
            self.loss
        ));
        s
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sample_example() {
        let v = si_sdr_se(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - 10.0 * 2f64.log10()).abs() < 1e-9);
        assert!((optimal_gain(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scaled_estimates_hit_the_clamp() {
        let s = [0.3, -1.0, 0.7, 0.2];
        for g in [0.5, -1.0, 7.0] {
            let e: Vec<f64> = s.iter().map(|x| g * x).collect();
            assert_eq!(si_sdr_se(&e, &s).unwrap(), SI_SDR_CLAMP_DB);
        }
    }

    #[test]
    fn evaluation_metric_follows_noise_ratio() {
        // orthogonal interference 10x stronger than the target
        let s = [1.0, 0.0, 1.0, 0.0];
        let e = [1.0, 10f64.sqrt(), 1.0, -(10f64.sqrt())];
        assert!((si_sdr(&e, &s).unwrap() + 10.0).abs() < 1e-9);
        assert!(si_sdr_se(&e, &s).unwrap() > 0.0);
        assert!(si_sdri(&e, &s, &e).unwrap().abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(si_sdr_se(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(si_sdr_se(&[1.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(matches!(si_sdr_se(&[1.0], &[1.0, 0.0]), Err(Error::Dimension(_))));
        assert!(si_sdr_se(&[], &[]).is_err());
    }

    #[test]
    fn lexicographic_permutations() {
        assert_eq!(permutations(1), vec![vec![0]]);
        assert_eq!(
            permutations(3),
            vec![
                vec![0, 1, 2],
                vec![0, 2, 1],
                vec![1, 0, 2],
                vec![1, 2, 0],
                vec![2, 0, 1],
                vec![2, 1, 0]
            ]
        );
        assert_eq!(permutations(4).len(), 24);
    }

    #[test]
    fn pit_rejects_five_sources() {
        let w = Waveform::from_channels(&vec![vec![1.0, 2.0, 3.0]; 5], 8000).unwrap();
        let cfg = StftConfig::standard(8000);
        assert!(matches!(
            pit_assign(&w, &w, LossKind::SisdrSe, &cfg),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn loss_names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert_eq!("wav-mag-geq".parse::<LossKind>().unwrap(), LossKind::WavMagGeq);
    }

    #[test]
    fn report_toml_round_trip() {
        let r = EvalReport {
            loss_kind: LossKind::SisdrSe,
            loss: -12.5,
            permutation: vec![1, 0],
            si_sdr: vec![6.0, 6.5],
            si_sdri: vec![6.0, 6.5],
        };
        let text = r.to_toml().unwrap();
        assert!(text.contains("si_sdri"));
        assert_eq!(EvalReport::from_toml(&text).unwrap(), r);
        assert!(r.to_text().contains("estimate 1"));
    }
}
