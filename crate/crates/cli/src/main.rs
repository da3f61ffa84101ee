use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gridsep::filters::{apply_filter, FilterKind, FilterSpec, DEFAULT_DELAY, DEFAULT_EPSILON};
use gridsep::linalg::DEFAULT_LOADING;
use gridsep::model::{count_params, estimate_macs, forward, InputMode, ModelConfig, UnfoldOrder, WeightStore};
use gridsep::objective::{EvalReport, LossKind};
use gridsep::pipeline::{self, PipelineConfig, PipelineReport, Stage};
use gridsep::scene::{normalize_variance, oracle_estimator, simulate, SceneSpec};
use gridsep::stft::{istft, stft, Spectrogram, StftConfig, Waveform};
use gridsep::wav::{read_wav, write_wav, WavEncoding};

#[derive(Parser)]
#[command(
    name = "gridsep",
    version,
    about = "Complex time-frequency speech separation toolkit"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic reverberant scene and write its components as WAV.
    Simulate(SimulateArgs),
    /// STFT analysis/resynthesis of a WAV file.
    Stft(StftArgs),
    /// Run the separation network on a mixture.
    Infer(InferArgs),
    /// Apply MFWF, ConvBF or WPE driven by a source estimate.
    Beamform(BeamformArgs),
    /// Score estimates against references.
    Eval(EvalArgs),
    /// Run the full estimator, filter, post-filter chain.
    Pipeline(PipelineArgs),
    /// Parameter and multiply-accumulate counts of a network config.
    Params(ParamsArgs),
}

#[derive(Args)]
struct StftFlags {
    /// Window length in ms.
    #[arg(long, default_value_t = 32.0)]
    win_ms: f64,
    /// Hop length in ms.
    #[arg(long, default_value_t = 8.0)]
    hop_ms: f64,
}

impl StftFlags {
    fn config(&self, sample_rate: u32) -> Result<StftConfig> {
        Ok(StftConfig::from_ms(sample_rate, self.win_ms, self.hop_ms)?)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene description (TOML). Flags below are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    sources: usize,
    #[arg(long, default_value_t = 1)]
    mics: usize,
    #[arg(long, default_value_t = 8000)]
    rate: u32,
    /// Seconds.
    #[arg(long, default_value_t = 4.0)]
    duration: f64,
    /// Reverberation tail length in samples (0 = anechoic).
    #[arg(long, default_value_t = 0)]
    tail: usize,
    /// Tail decay constant in samples.
    #[arg(long, default_value_t = 200.0)]
    decay: f64,
    #[arg(long, default_value_t = 0.3)]
    tail_level: f64,
    /// Noise SNR in dB against the summed direct paths at microphone 0.
    #[arg(long)]
    snr: Option<f64>,
    /// Overrides the config's seed when given.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pcm16: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StftArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    stft: StftFlags,
    /// Write the resynthesized signal here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Network config (TOML); individual flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "D")]
    d: Option<usize>,
    #[arg(long = "B")]
    b: Option<usize>,
    #[arg(long = "I")]
    i: Option<usize>,
    #[arg(long = "J")]
    j: Option<usize>,
    #[arg(long = "H")]
    h: Option<usize>,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long = "E")]
    e: Option<usize>,
    #[arg(long = "C")]
    c: Option<usize>,
    #[arg(long = "P")]
    p: Option<usize>,
    #[arg(long = "F")]
    f: Option<usize>,
    /// Normalize before unfolding (default) or after.
    #[arg(long)]
    unfold_ln: bool,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ModelConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            // 6 blocks, 64-dim embeddings, 2 sources, one 8 kHz microphone
            None => ModelConfig {
                emb_dim: 64,
                blocks: 6,
                kernel: 4,
                stride: 1,
                hidden: 256,
                heads: 4,
                qk_channels: 4,
                sources: 2,
                mics: 1,
                freqs: 129,
                unfold_order: UnfoldOrder::LnUnfold,
                inputs: InputMode::MixtureOnly,
            },
        };
        let overrides = [
            (&mut cfg.emb_dim, self.d),
            (&mut cfg.blocks, self.b),
            (&mut cfg.kernel, self.i),
            (&mut cfg.stride, self.j),
            (&mut cfg.hidden, self.h),
            (&mut cfg.heads, self.l),
            (&mut cfg.qk_channels, self.e),
            (&mut cfg.sources, self.c),
            (&mut cfg.mics, self.p),
            (&mut cfg.freqs, self.f),
        ];
        for (slot, value) in overrides {
            if let Some(v) = value {
                *slot = v;
            }
        }
        if self.unfold_ln {
            cfg.unfold_order = UnfoldOrder::UnfoldLn;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Weight manifest (.idx). Without it, seeded synthetic weights are used.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mixture WAV (P channels).
    #[arg(long)]
    input: PathBuf,
    /// First-stage estimates (C channels), for post-filter networks.
    #[arg(long)]
    estimate: Option<PathBuf>,
    /// Filter outputs (C channels), for post-filter networks.
    #[arg(long)]
    filtered: Option<PathBuf>,
    #[command(flatten)]
    stft: StftFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BeamformArgs {
    #[arg(long)]
    kind: FilterKind,
    #[arg(long, default_value_t = 0)]
    dl: usize,
    #[arg(long, default_value_t = 0)]
    dr: usize,
    #[arg(long, default_value_t = DEFAULT_DELAY)]
    dd: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_LOADING)]
    loading: f64,
    /// Mixture WAV (P channels).
    #[arg(long)]
    input: PathBuf,
    /// Source estimates driving the filter (C channels).
    #[arg(long, conflicts_with = "oracle")]
    estimate: Option<PathBuf>,
    /// Reference targets (C channels); the estimate is these plus noise.
    #[arg(long)]
    oracle: Option<PathBuf>,
    /// Oracle corruption SNR in dB (`inf` for none).
    #[arg(long, default_value_t = 20.0)]
    corruption: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// References for a report (C channels); defaults to --oracle.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    ref_mic: usize,
    #[command(flatten)]
    stft: StftFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimates (C channels).
    #[arg(long)]
    est: PathBuf,
    /// References (C channels).
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Mixture; channel --ref-mic is the baseline for SI-SDRi.
    #[arg(long)]
    mix: PathBuf,
    #[arg(long, default_value_t = 0)]
    ref_mic: usize,
    #[arg(long, default_value = "sisdr_se")]
    loss: LossKind,
    #[command(flatten)]
    stft: StftFlags,
    /// Also write the report as TOML here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Mixture WAV.
    #[arg(long)]
    input: PathBuf,
    /// Targets at the reference microphone (C channels); needed by the
    /// oracle stage and for the report.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Overrides the oracle stage's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ParamsArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Also estimate MACs for this many STFT frames.
    #[arg(long)]
    frames: Option<usize>,
}

fn group_digits(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn read(path: &Path) -> Result<Waveform> {
    if !path.exists() {
        bail!("missing file: {}", path.display());
    }
    read_wav(path).with_context(|| format!("reading {}", path.display()))
}

fn write_sources(dir: &Path, prefix: &str, w: &Waveform) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for c in 0..w.channels() {
        write_wav(
            dir.join(format!("{prefix}_c{c}.wav")),
            &w.select(c),
            WavEncoding::Float32,
        )?;
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SceneSpec::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let mut s =
                SceneSpec::new(a.sources, a.mics, a.rate, a.duration, 0).with_tail(a.tail, a.decay, a.tail_level);
            if let Some(snr) = a.snr {
                s = s.with_noise(snr);
            }
            s
        }
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let scene = simulate(&spec)?;
    let enc = if a.pcm16 {
        WavEncoding::Pcm16
    } else {
        WavEncoding::Float32
    };
    scene.export(&a.out, enc)?;
    println!(
        "{} sources, {} microphones, {} samples written to {}",
        spec.sources,
        spec.mics,
        scene.mixture.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_stft(a: &StftArgs) -> Result<()> {
    let x = read(&a.input)?;
    let cfg = a.stft.config(x.sample_rate)?;
    let spec = stft(&x, &cfg)?;
    let y = istft(&spec, x.len())?;
    let err = x
        .data
        .iter()
        .zip(y.data.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "{} channels, {} frames, {} bins; resynthesis max error {err:.3e}",
        spec.channels(),
        spec.frames(),
        spec.freqs()
    );
    if let Some(out) = &a.out {
        write_wav(out, &y, WavEncoding::Float32)?;
    }
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let cfg = a.model.resolve()?;
    let weights = match &a.weights {
        Some(p) => WeightStore::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => WeightStore::synthetic(&cfg, a.seed),
    };
    let mixture = read(&a.input)?;
    let stft_cfg = a.stft.config(mixture.sample_rate)?;
    let mut waves = vec![mixture.clone()];
    if cfg.inputs == InputMode::MixtureEstimateFilter {
        let (Some(e), Some(f)) = (&a.estimate, &a.filtered) else {
            bail!("this network also reads --estimate and --filtered");
        };
        waves.push(read(e)?);
        waves.push(read(f)?);
    }
    let (_, mut scaled, factor) = normalize_variance(&mixture, &waves)?;
    let features = scaled
        .drain(..)
        .map(|w| stft(&w, &stft_cfg))
        .collect::<gridsep::Result<Vec<Spectrogram>>>()?;
    let est = forward(&features, &cfg, &weights)?;
    let out = istft(&est, mixture.len())?.scaled(1.0 / factor);
    write_sources(&a.out, "est", &out)?;
    println!("{} estimates written to {}", out.channels(), a.out.display());
    Ok(())
}

fn cmd_beamform(a: &BeamformArgs) -> Result<()> {
    let spec = FilterSpec {
        kind: a.kind,
        delta_l: a.dl,
        delta_r: a.dr,
        delta_d: a.dd,
        epsilon: a.eps,
        loading: a.loading,
    };
    spec.validate()?;
    let mixture = read(&a.input)?;
    let stft_cfg = a.stft.config(mixture.sample_rate)?;
    let oracle = a.oracle.as_deref().map(read).transpose()?;
    let driver = match (&a.estimate, &oracle) {
        (Some(p), _) => read(p)?,
        (None, Some(t)) => t.clone(),
        (None, None) => bail!("give --estimate or --oracle"),
    };
    let (y, scaled, factor) = normalize_variance(&mixture, &[driver])?;
    let y_spec = stft(&y, &stft_cfg)?;
    let s1 = if a.estimate.is_some() {
        stft(&scaled[0], &stft_cfg)?
    } else {
        oracle_estimator(&scaled[0], a.corruption, a.seed, &stft_cfg)?
    };
    let (_, filtered) = apply_filter(&y_spec, &s1, &spec, a.ref_mic)?;
    let out = istft(&filtered, mixture.len())?.scaled(1.0 / factor);
    write_sources(&a.out, a.kind.name(), &out)?;

    let reference = match &a.reference {
        Some(p) => Some(read(p)?),
        None => oracle,
    };
    if let Some(r) = reference {
        let report = EvalReport::evaluate(&out, &r, &mixture.channel_vec(a.ref_mic), LossKind::SisdrSe, &stft_cfg)?;
        std::fs::write(a.out.join("report.txt"), report.to_text())?;
        std::fs::write(a.out.join("report.toml"), report.to_toml()?)?;
        print!("{}", report.to_text());
    }
    println!("{} outputs written to {}", out.channels(), a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let est = read(&a.est)?;
    let reference = read(&a.reference)?;
    let mix = read(&a.mix)?;
    if a.ref_mic >= mix.channels() {
        bail!(
            "--ref-mic {} but the mixture has {} channels",
            a.ref_mic,
            mix.channels()
        );
    }
    let stft_cfg = a.stft.config(reference.sample_rate)?;
    let report = EvalReport::evaluate(&est, &reference, &mix.channel_vec(a.ref_mic), a.loss, &stft_cfg)?;
    print!("{}", report.to_text());
    if let Some(out) = &a.out {
        std::fs::write(out, report.to_toml()?)?;
    }
    Ok(())
}

fn cmd_pipeline(a: &PipelineArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    if let (Some(s), Stage::Oracle { seed, .. }) = (a.seed, &mut cfg.stage1) {
        *seed = s;
    }
    let mixture = read(&a.input)?;
    let targets = a.targets.as_deref().map(read).transpose()?;
    let out = pipeline::run(&mixture, targets.as_ref(), &cfg)?;
    let report = match &targets {
        Some(t) => {
            let stft_cfg = cfg.stft.unwrap_or_else(|| StftConfig::standard(mixture.sample_rate));
            Some(PipelineReport::build(&out, &mixture, t, cfg.reference_mic, &stft_cfg)?)
        }
        None => None,
    };
    pipeline::export(&a.out, &mixture, &out, report.as_ref())?;
    if let Some(r) = &report {
        print!("{}", r.to_text());
    }
    println!("outputs written to {}", a.out.display());
    Ok(())
}

fn cmd_params(a: &ParamsArgs) -> Result<()> {
    let cfg = a.model.resolve()?;
    println!("{} parameters", group_digits(count_params(&cfg) as u64));
    if let Some(frames) = a.frames {
        let macs = estimate_macs(&cfg, frames);
        println!(
            "{} multiply-accumulates for {frames} frames",
            group_digits(macs.total())
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Stft(a) => cmd_stft(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Beamform(a) => cmd_beamform(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Params(a) => cmd_params(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
