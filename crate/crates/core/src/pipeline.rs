//! Two-stage separation with a linear filter in between:
//!
//! 1. a first-stage estimator (network or oracle stand-in) produces `Ŝ⁽¹⁾`
//!    from the mixture spectrogram;
//! 2. an optional filter (MFWF, ConvBF, WPE) driven by `Ŝ⁽¹⁾`;
//! 3. an optional second stage: a network fed `[mixture, Ŝ⁽¹⁾, filter
//!    output]`, or the identity.
//!
//! The mixture is normalized to unit variance on entry and every emitted
//! waveform is scaled back, so outputs are in input scale.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{apply_filter, FilterKind, FilterSpec};
use crate::model::{forward, InputMode, ModelConfig, WeightStore};
use crate::objective::{si_sdr, EvalReport, LossKind};
use crate::scene::{normalize_variance, oracle_estimator};
use crate::stft::{istft, stft, Spectrogram, StftConfig, Waveform};
use crate::wav::{write_wav, WavEncoding};

/// A stage as written in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageSpec {
    /// Target STFT plus white noise at `corruption_db` (`inf` for none).
    Oracle {
        corruption_db: f64,
        #[serde(default)]
        seed: u64,
    },
    /// A network; `weights` is a manifest path, relative to the config file.
    Model {
        model: ModelConfig,
        weights: PathBuf,
    },
    Identity,
}

/// Configuration file form of [`PipelineConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineFile {
    pub stage1: StageSpec,
    #[serde(default)]
    pub filter: Option<FilterSpec>,
    #[serde(default)]
    pub stage2: Option<StageSpec>,
    #[serde(default)]
    pub reference_mic: usize,
    /// Defaults to 32 ms windows with 8 ms hop at the input's sample rate.
    #[serde(default)]
    pub stft: Option<StftConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Oracle { corruption_db: f64, seed: u64 },
    Model { config: ModelConfig, weights: WeightStore },
    Identity,
}

impl Stage {
    fn from_spec(spec: &StageSpec, base: &Path) -> Result<Self> {
        Ok(match spec {
            StageSpec::Oracle { corruption_db, seed } => Stage::Oracle {
                corruption_db: *corruption_db,
                seed: *seed,
            },
            StageSpec::Model { model, weights } => Stage::Model {
                config: *model,
                weights: WeightStore::load(base.join(weights))?,
            },
            StageSpec::Identity => Stage::Identity,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stage1: Stage,
    pub filter: Option<FilterSpec>,
    pub stage2: Option<Stage>,
    pub reference_mic: usize,
    pub stft: Option<StftConfig>,
}

impl PipelineConfig {
    /// Oracle first stage, no filter, no second stage.
    pub fn oracle(corruption_db: f64, seed: u64) -> Self {
        Self {
            stage1: Stage::Oracle { corruption_db, seed },
            filter: None,
            stage2: None,
            reference_mic: 0,
            stft: None,
        }
    }

    pub fn with_filter(mut self, filter: FilterSpec) -> Self {
        self.filter = Some(filter);
        self
    }

    pub fn with_stage2(mut self, stage: Stage) -> Self {
        self.stage2 = Some(stage);
        self
    }

    /// Parses a configuration file and loads any referenced weights.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let file: PipelineFile = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(Self {
            stage1: Stage::from_spec(&file.stage1, base)?,
            filter: file.filter,
            stage2: file.stage2.as_ref().map(|s| Stage::from_spec(s, base)).transpose()?,
            reference_mic: file.reference_mic,
            stft: file.stft,
        })
    }

    fn stft_for(&self, sample_rate: u32) -> Result<StftConfig> {
        let cfg = self.stft.unwrap_or_else(|| StftConfig::standard(sample_rate));
        cfg.validate()?;
        if cfg.sample_rate != sample_rate {
            return Err(Error::Config(format!(
                "STFT configured for {} Hz but input is {sample_rate} Hz",
                cfg.sample_rate
            )));
        }
        Ok(cfg)
    }

    /// Checks channel, source and bin counts against the inputs and returns
    /// the source count.
    pub fn check(&self, mixture: &Waveform, targets: Option<&Waveform>) -> Result<usize> {
        let mics = mixture.channels();
        let stft_cfg = self.stft_for(mixture.sample_rate)?;
        let freqs = stft_cfg.num_freqs();
        if self.reference_mic >= mics {
            return Err(Error::Config(format!(
                "reference microphone {} but the mixture has {mics} channels",
                self.reference_mic
            )));
        }
        if let Some(t) = targets {
            if t.len() != mixture.len() {
                return Err(Error::Config(format!(
                    "targets have {} samples, mixture has {}",
                    t.len(),
                    mixture.len()
                )));
            }
        }
        let sources = match &self.stage1 {
            Stage::Oracle { corruption_db, .. } => {
                if corruption_db.is_nan() || *corruption_db == f64::NEG_INFINITY {
                    return Err(Error::Config("oracle corruption must be finite or +inf".into()));
                }
                targets
                    .ok_or_else(|| Error::Config("an oracle first stage needs reference targets".into()))?
                    .channels()
            }
            Stage::Model { config, .. } => {
                config.validate()?;
                if config.inputs != InputMode::MixtureOnly {
                    return Err(Error::Config(
                        "the first-stage network must take the mixture only".into(),
                    ));
                }
                if config.mics != mics || config.freqs != freqs {
                    return Err(Error::Config(format!(
                        "first-stage network expects P = {}, F = {}; input gives P = {mics}, F = {freqs}",
                        config.mics, config.freqs
                    )));
                }
                config.sources
            }
            Stage::Identity => return Err(Error::Config("the first stage cannot be the identity".into())),
        };
        if let Some(t) = targets {
            if t.channels() != sources {
                return Err(Error::Config(format!(
                    "{} target channels for {sources} sources",
                    t.channels()
                )));
            }
        }
        if let Some(f) = &self.filter {
            f.validate()?;
        }
        match &self.stage2 {
            Some(Stage::Model { config, .. }) => {
                config.validate()?;
                if self.filter.is_none() {
                    return Err(Error::Config(
                        "a second-stage network needs a filter output to read".into(),
                    ));
                }
                if config.inputs != InputMode::MixtureEstimateFilter {
                    return Err(Error::Config(
                        "the second-stage network must take mixture, estimate and filter inputs".into(),
                    ));
                }
                if config.mics != mics || config.sources != sources || config.freqs != freqs {
                    return Err(Error::Config(format!(
                        "second-stage network expects P = {}, C = {}, F = {}; pipeline has P = {mics}, C = {sources}, F = {freqs}",
                        config.mics, config.sources, config.freqs
                    )));
                }
            }
            Some(Stage::Oracle { .. }) => {
                return Err(Error::Config(
                    "the second stage must be a network or the identity".into(),
                ))
            }
            Some(Stage::Identity) | None => {}
        }
        Ok(sources)
    }
}

/// Everything a run produces, all in input scale and input length.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub stage1: Waveform,
    pub filtered: Option<(FilterKind, Waveform)>,
    pub stage2: Option<Waveform>,
    /// The last stage that ran.
    pub output: Waveform,
    /// Variance normalization factor applied on entry.
    pub factor: f64,
}

fn synthesize(spec: &Spectrogram, len: usize, inverse: f64) -> Result<Waveform> {
    Ok(istft(spec, len)?.scaled(inverse))
}

/// Runs the configured chain on `mixture`. `targets` (one channel per
/// source, at the reference microphone) are required by the oracle stage.
pub fn run(mixture: &Waveform, targets: Option<&Waveform>, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.check(mixture, targets)?;
    let stft_cfg = cfg.stft_for(mixture.sample_rate)?;
    let n = mixture.len();
    let q = cfg.reference_mic;

    let scaled_targets: Vec<Waveform> = targets.into_iter().cloned().collect();
    let (y, scaled_targets, factor) = normalize_variance(mixture, &scaled_targets)?;
    let inverse = 1.0 / factor;
    let y_spec = stft(&y, &stft_cfg)?;

    let s1 = match &cfg.stage1 {
        Stage::Oracle { corruption_db, seed } => {
            oracle_estimator(&scaled_targets[0], *corruption_db, *seed, &stft_cfg)?
        }
        Stage::Model { config, weights } => forward(std::slice::from_ref(&y_spec), config, weights)?,
        Stage::Identity => unreachable!("rejected by check"),
    };
    let stage1 = synthesize(&s1, n, inverse)?;

    let filtered_spec = match &cfg.filter {
        Some(spec) => Some((spec.kind, apply_filter(&y_spec, &s1, spec, q)?.1)),
        None => None,
    };
    let filtered = match &filtered_spec {
        Some((kind, spec)) => Some((*kind, synthesize(spec, n, inverse)?)),
        None => None,
    };

    let stage2 = match (&cfg.stage2, &filtered_spec) {
        (Some(Stage::Model { config, weights }), Some((_, f))) => {
            let s2 = forward(&[y_spec.clone(), s1.clone(), f.clone()], config, weights)?;
            Some(synthesize(&s2, n, inverse)?)
        }
        _ => None,
    };

    let output = match (&stage2, &filtered) {
        (Some(w), _) => w.clone(),
        (None, Some((_, w))) => w.clone(),
        (None, None) => stage1.clone(),
    };
    Ok(PipelineOutput {
        stage1,
        filtered,
        stage2,
        output,
        factor,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    #[serde(flatten)]
    pub eval: EvalReport,
}

/// Metrics of every emitted stage against references at the reference
/// microphone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub reference_mic: usize,
    pub normalization_factor: f64,
    pub mixture_si_sdr: Vec<f64>,
    pub stages: Vec<StageReport>,
}

impl PipelineReport {
    pub fn build(
        out: &PipelineOutput,
        mixture: &Waveform,
        targets: &Waveform,
        q: usize,
        stft_cfg: &StftConfig,
    ) -> Result<Self> {
        let mix = mixture.channel_vec(q);
        let mut stages = vec![("stage1".to_string(), &out.stage1)];
        if let Some((kind, w)) = &out.filtered {
            stages.push((kind.name().to_string(), w));
        }
        if let Some(w) = &out.stage2 {
            stages.push(("stage2".to_string(), w));
        }
        let stages = stages
            .into_iter()
            .map(|(stage, w)| {
                Ok(StageReport {
                    stage,
                    eval: EvalReport::evaluate(w, targets, &mix, LossKind::SisdrSe, stft_cfg)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mixture_si_sdr = (0..targets.channels())
            .map(|c| si_sdr(&mix, &targets.channel_vec(c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            reference_mic: q,
            normalization_factor: out.factor,
            mixture_si_sdr,
            stages,
        })
    }

    pub fn stage(&self, name: &str) -> Option<&EvalReport> {
        self.stages.iter().find(|s| s.stage == name).map(|s| &s.eval)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "reference microphone {}, normalization factor {:.6}\nmixture SI-SDR: {}\n",
            self.reference_mic,
            self.normalization_factor,
            self.mixture_si_sdr
                .iter()
                .map(|v| format!("{v:.2} dB"))
                .collect::<Vec<_>>()
                .join(", ")
        );
        for st in &self.stages {
            s.push_str(&format!("[{}]\n{}", st.stage, st.eval.to_text()));
        }
        s
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Writes `mixture.wav`, `s1_c{c}.wav`, `<filter>_c{c}.wav`, `s2_c{c}.wav`
/// and, given a report, `report.txt` and `report.toml` into `dir`.
pub fn export(
    dir: impl AsRef<Path>,
    mixture: &Waveform,
    out: &PipelineOutput,
    report: Option<&PipelineReport>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let enc = WavEncoding::Float32;
    write_wav(dir.join("mixture.wav"), mixture, enc)?;
    let per_source = |prefix: &str, w: &Waveform| -> Result<()> {
        for c in 0..w.channels() {
            write_wav(dir.join(format!("{prefix}_c{c}.wav")), &w.select(c), enc)?;
        }
        Ok(())
    };
    per_source("s1", &out.stage1)?;
    if let Some((kind, w)) = &out.filtered {
        per_source(kind.name(), w)?;
    }
    if let Some(w) = &out.stage2 {
        per_source("s2", w)?;
    }
    if let Some(r) = report {
        std::fs::write(dir.join("report.txt"), r.to_text())?;
        std::fs::write(dir.join("report.toml"), r.to_toml()?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{simulate, SceneSpec};

    fn scene() -> (Waveform, Waveform) {
        let s = simulate(&SceneSpec::new(2, 3, 8000, 0.25, 11)).unwrap();
        let t = s.targets(0).unwrap();
        (s.mixture, t)
    }

    #[test]
    fn oracle_needs_targets() {
        let (y, _) = scene();
        assert!(matches!(
            run(&y, None, &PipelineConfig::oracle(20.0, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stage2_network_without_filter_rejected() {
        let (y, t) = scene();
        let model = ModelConfig {
            emb_dim: 4,
            blocks: 1,
            kernel: 1,
            stride: 1,
            hidden: 4,
            heads: 1,
            qk_channels: 2,
            sources: 2,
            mics: 3,
            freqs: 129,
            unfold_order: Default::default(),
            inputs: InputMode::MixtureEstimateFilter,
        };
        let cfg = PipelineConfig::oracle(20.0, 0).with_stage2(Stage::Model {
            weights: WeightStore::zeros(&model),
            config: model,
        });
        assert!(matches!(run(&y, Some(&t), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn pass_through_is_stage1() {
        let (y, t) = scene();
        let out = run(&y, Some(&t), &PipelineConfig::oracle(20.0, 3)).unwrap();
        assert_eq!(out.output, out.stage1);
        assert_eq!(out.output.len(), y.len());
        let with_identity = run(
            &y,
            Some(&t),
            &PipelineConfig::oracle(20.0, 3).with_stage2(Stage::Identity),
        )
        .unwrap();
        assert_eq!(with_identity.output, out.stage1);
    }

    #[test]
    fn bad_reference_mic() {
        let (y, t) = scene();
        let mut cfg = PipelineConfig::oracle(20.0, 0);
        cfg.reference_mic = 3;
        assert!(run(&y, Some(&t), &cfg).is_err());
    }

    #[test]
    fn file_form_parses() {
        let text = r#"
reference_mic = 0
[stage1]
kind = "oracle"
corruption_db = inf
[filter]
kind = "mfwf"
delta_l = 5
delta_r = 4
[stage2]
kind = "identity"
"#;
        let file: PipelineFile = toml::from_str(text).unwrap();
        assert_eq!(file.filter.unwrap().delta_l, 5);
        assert!(matches!(file.stage1, StageSpec::Oracle { corruption_db, .. } if corruption_db.is_infinite()));
    }
}
