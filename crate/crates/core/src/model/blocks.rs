//! Embedding, the three per-block modules, and the output head.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use super::config::{ModelConfig, UnfoldOrder};
use super::layers::{
    blstm, channel_freq_layer_norm, conv1x1, conv2d_3x3, deconv1d, deconv2d_3x3, global_layer_norm, layer_norm_rows,
    padded_len, prelu, softmax_rows, unfold, LstmWeights,
};
use super::weights::{WeightStore, FEATURE_NAMES};
use crate::error::{Error, Result};

/// `D × T × F` real tensor.
pub type Embedding = Array3<f64>;

/// Weights of one BLSTM-based sequence module (full-band or sub-band).
#[derive(Debug, Clone)]
pub struct SequenceWeights {
    pub norm_gain: Vec<f64>,
    pub norm_bias: Vec<f64>,
    pub fwd: LstmWeights,
    pub bwd: LstmWeights,
    pub deconv_weight: Vec<f64>,
    pub deconv_bias: Vec<f64>,
}

impl SequenceWeights {
    pub fn load(store: &WeightStore, cfg: &ModelConfig, prefix: &str) -> Result<Self> {
        let d = cfg.emb_dim;
        let h = cfg.hidden;
        let i = cfg.kernel;
        let lstm = |dir: &str| -> Result<LstmWeights> {
            let p = format!("{prefix}.blstm.{dir}");
            let w_ih = store.values(&format!("{p}.w_ih"), &[4 * h, i * d])?;
            let w_hh = store.values(&format!("{p}.w_hh"), &[4 * h, h])?;
            let b_ih = store.values(&format!("{p}.b_ih"), &[4 * h])?;
            let b_hh = store.values(&format!("{p}.b_hh"), &[4 * h])?;
            Ok(LstmWeights {
                w_ih: Array2::from_shape_vec((4 * h, i * d), w_ih).expect("shape checked"),
                w_hh: Array2::from_shape_vec((4 * h, h), w_hh).expect("shape checked"),
                bias: b_ih.iter().zip(&b_hh).map(|(a, b)| a + b).collect(),
            })
        };
        let width = cfg.norm_width();
        Ok(Self {
            norm_gain: store.values(&format!("{prefix}.norm.gain"), &[width])?,
            norm_bias: store.values(&format!("{prefix}.norm.bias"), &[width])?,
            fwd: lstm("fwd")?,
            bwd: lstm("bwd")?,
            deconv_weight: store.values(&format!("{prefix}.deconv.weight"), &[2 * h, d, i])?,
            deconv_bias: store.values(&format!("{prefix}.deconv.bias"), &[d])?,
        })
    }
}

/// Point-wise Conv2D → PReLU → cfLN.
#[derive(Debug, Clone)]
pub struct ProjectionWeights {
    pub conv_weight: Vec<f64>,
    pub conv_bias: Vec<f64>,
    pub prelu: Vec<f64>,
    pub norm_gain: Vec<f64>,
    pub norm_bias: Vec<f64>,
}

impl ProjectionWeights {
    fn load(store: &WeightStore, cfg: &ModelConfig, prefix: &str, out: usize) -> Result<Self> {
        let d = cfg.emb_dim;
        let f = cfg.freqs;
        Ok(Self {
            conv_weight: store.values(&format!("{prefix}.conv.weight"), &[out, d])?,
            conv_bias: store.values(&format!("{prefix}.conv.bias"), &[out])?,
            prelu: store.values(&format!("{prefix}.prelu"), &[out])?,
            norm_gain: store.values(&format!("{prefix}.norm.gain"), &[out, f])?,
            norm_bias: store.values(&format!("{prefix}.norm.bias"), &[out, f])?,
        })
    }

    fn apply(&self, z: &Embedding) -> Array3<f64> {
        let mut y = conv1x1(z.view(), &self.conv_weight, &self.conv_bias);
        prelu(&mut y, &self.prelu);
        channel_freq_layer_norm(&mut y, &self.norm_gain, &self.norm_bias);
        y
    }
}

#[derive(Debug, Clone)]
pub struct HeadWeights {
    pub query: ProjectionWeights,
    pub key: ProjectionWeights,
    pub value: ProjectionWeights,
}

#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub heads: Vec<HeadWeights>,
    pub proj: ProjectionWeights,
}

impl AttentionWeights {
    pub fn load(store: &WeightStore, cfg: &ModelConfig, block: usize) -> Result<Self> {
        let heads = (0..cfg.heads)
            .map(|l| {
                let p = format!("block{block}.attn.head{l}");
                Ok(HeadWeights {
                    query: ProjectionWeights::load(store, cfg, &format!("{p}.query"), cfg.qk_channels)?,
                    key: ProjectionWeights::load(store, cfg, &format!("{p}.key"), cfg.qk_channels)?,
                    value: ProjectionWeights::load(store, cfg, &format!("{p}.value"), cfg.head_dim())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let proj = ProjectionWeights::load(store, cfg, &format!("block{block}.attn.proj"), cfg.emb_dim)?;
        Ok(Self { heads, proj })
    }
}

/// All weights of block `b`.
#[derive(Debug, Clone)]
pub struct BlockWeights {
    pub intra: SequenceWeights,
    pub subband: SequenceWeights,
    pub attention: AttentionWeights,
}

impl BlockWeights {
    pub fn load(store: &WeightStore, cfg: &ModelConfig, block: usize) -> Result<Self> {
        Ok(Self {
            intra: SequenceWeights::load(store, cfg, &format!("block{block}.intra"))?,
            subband: SequenceWeights::load(store, cfg, &format!("block{block}.subband"))?,
            attention: AttentionWeights::load(store, cfg, block)?,
        })
    }
}

/// Shapes of the intermediates of one sequence module, as
/// `(channels, T, positions)` triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceShapes {
    pub unfolded: (usize, usize, usize),
    pub hidden: (usize, usize, usize),
    pub deconv: (usize, usize, usize),
}

/// Conv2D(3×3) + gLN per input feature, summed over features.
///
/// `features` are real `channels × T × F` stacks (see
/// [`crate::stft::Spectrogram::to_ri_features`]).
pub fn embed_inputs(features: &[Array3<f64>], cfg: &ModelConfig, store: &WeightStore) -> Result<Embedding> {
    let expected = cfg.feature_channels();
    if features.len() != expected.len() {
        return Err(Error::Dimension(format!(
            "{} input features given, config expects {}",
            features.len(),
            expected.len()
        )));
    }
    let (_, t_len, f_len) = features[0].dim();
    let d = cfg.emb_dim;
    let mut total = Array3::zeros((d, t_len, f_len));
    for ((x, channels), name) in features.iter().zip(expected).zip(FEATURE_NAMES) {
        if x.dim() != (channels, t_len, f_len) {
            return Err(Error::Dimension(format!(
                "{name} feature has shape {:?}, expected ({channels}, {t_len}, {f_len})",
                x.dim()
            )));
        }
        let w = store.values(&format!("embed.{name}.conv.weight"), &[d, channels, 3, 3])?;
        let b = store.values(&format!("embed.{name}.conv.bias"), &[d])?;
        let gain = store.values(&format!("embed.{name}.norm.gain"), &[d])?;
        let bias = store.values(&format!("embed.{name}.norm.bias"), &[d])?;
        let mut y = conv2d_3x3(x.view(), &w, &b);
        global_layer_norm(&mut y, &gain, &bias);
        total += &y;
    }
    Ok(total)
}

/// Runs one sequence (`length × D`) through normalize/unfold, the BLSTM and
/// Deconv1D; returns the cropped `length × D` projection (no residual).
pub fn sequence_projection(
    seq: ArrayView2<'_, f64>,
    cfg: &ModelConfig,
    w: &SequenceWeights,
) -> (Array2<f64>, SequenceShapes) {
    let len = seq.nrows();
    let unfolded = match cfg.unfold_order {
        UnfoldOrder::LnUnfold => {
            let mut x = seq.to_owned();
            layer_norm_rows(&mut x, &w.norm_gain, &w.norm_bias);
            unfold(x.view(), cfg.kernel, cfg.stride)
        }
        UnfoldOrder::UnfoldLn => {
            let mut u = unfold(seq, cfg.kernel, cfg.stride);
            layer_norm_rows(&mut u, &w.norm_gain, &w.norm_bias);
            u
        }
    };
    let hidden = blstm(unfolded.view(), &w.fwd, &w.bwd);
    let full = deconv1d(hidden.view(), &w.deconv_weight, &w.deconv_bias, cfg.kernel, cfg.stride);
    debug_assert_eq!(full.nrows(), padded_len(len, cfg.kernel, cfg.stride));
    let shapes = SequenceShapes {
        unfolded: (unfolded.ncols(), 0, unfolded.nrows()),
        hidden: (hidden.ncols(), 0, hidden.nrows()),
        deconv: (full.ncols(), 0, full.nrows()),
    };
    (full.slice(s![..len, ..]).to_owned(), shapes)
}

/// Intra-frame full-band module: each frame is a length-`F` sequence.
pub fn intra_frame_module(r: &Embedding, cfg: &ModelConfig, w: &SequenceWeights) -> Result<Embedding> {
    intra_frame_module_traced(r, cfg, w).map(|(out, _)| out)
}

pub fn intra_frame_module_traced(
    r: &Embedding,
    cfg: &ModelConfig,
    w: &SequenceWeights,
) -> Result<(Embedding, SequenceShapes)> {
    check_embedding(r, cfg)?;
    let t_len = r.dim().1;
    let per_frame: Vec<(Array2<f64>, SequenceShapes)> = (0..t_len)
        .into_par_iter()
        .map(|t| sequence_projection(r.slice(s![.., t, ..]).t(), cfg, w))
        .collect();
    let mut out = r.clone();
    for (t, (proj, _)) in per_frame.iter().enumerate() {
        let mut frame = out.slice_mut(s![.., t, ..]);
        frame += &proj.t();
    }
    let shapes = per_frame.first().map(|p| p.1).unwrap_or(SequenceShapes {
        unfolded: (0, 0, 0),
        hidden: (0, 0, 0),
        deconv: (0, 0, 0),
    });
    Ok((out, with_time(shapes, t_len)))
}

/// Sub-band temporal module: each frequency is a length-`T` sequence, with
/// one weight set shared by all frequencies.
pub fn subband_module(u: &Embedding, cfg: &ModelConfig, w: &SequenceWeights) -> Result<Embedding> {
    subband_module_traced(u, cfg, w).map(|(out, _)| out)
}

pub fn subband_module_traced(
    u: &Embedding,
    cfg: &ModelConfig,
    w: &SequenceWeights,
) -> Result<(Embedding, SequenceShapes)> {
    check_embedding(u, cfg)?;
    let f_len = u.dim().2;
    let per_freq: Vec<(Array2<f64>, SequenceShapes)> = (0..f_len)
        .into_par_iter()
        .map(|f| sequence_projection(u.slice(s![.., .., f]).t(), cfg, w))
        .collect();
    let mut out = u.clone();
    for (f, (proj, _)) in per_freq.iter().enumerate() {
        let mut column = out.slice_mut(s![.., .., f]);
        column += &proj.t();
    }
    let shapes = per_freq.first().map(|p| p.1).unwrap_or(SequenceShapes {
        unfolded: (0, 0, 0),
        hidden: (0, 0, 0),
        deconv: (0, 0, 0),
    });
    Ok((out, with_time(shapes, f_len)))
}

fn with_time(s: SequenceShapes, n: usize) -> SequenceShapes {
    SequenceShapes {
        unfolded: (s.unfolded.0, n, s.unfolded.2),
        hidden: (s.hidden.0, n, s.hidden.2),
        deconv: (s.deconv.0, n, s.deconv.2),
    }
}

fn check_embedding(x: &Embedding, cfg: &ModelConfig) -> Result<()> {
    let (d, _, f) = x.dim();
    if d != cfg.emb_dim || f != cfg.freqs {
        return Err(Error::Dimension(format!(
            "embedding shape {:?} does not match D = {}, F = {}",
            x.dim(),
            cfg.emb_dim,
            cfg.freqs
        )));
    }
    Ok(())
}

/// Cross-frame multi-head self-attention with residual connection.
pub fn attention_module(z: &Embedding, cfg: &ModelConfig, w: &AttentionWeights) -> Result<Embedding> {
    attention_module_with_maps(z, cfg, w).map(|(out, _)| out)
}

/// As [`attention_module`], also returning the `T × T` attention matrix of
/// every head.
pub fn attention_module_with_maps(
    z: &Embedding,
    cfg: &ModelConfig,
    w: &AttentionWeights,
) -> Result<(Embedding, Vec<Array2<f64>>)> {
    if cfg.emb_dim % cfg.heads != 0 {
        return Err(Error::Config(format!(
            "D = {} is not divisible by L = {}",
            cfg.emb_dim, cfg.heads
        )));
    }
    check_embedding(z, cfg)?;
    let (d, t_len, f_len) = z.dim();
    let scale = 1.0 / ((f_len * cfg.qk_channels) as f64).sqrt();
    let dh = cfg.head_dim();

    let per_head: Vec<(Array3<f64>, Array2<f64>)> = w
        .heads
        .par_iter()
        .map(|head| {
            let q = frame_matrix(head.query.apply(z));
            let k = frame_matrix(head.key.apply(z));
            let v = frame_matrix(head.value.apply(z));
            let mut probs = q.dot(&k.t());
            probs.mapv_inplace(|x| x * scale);
            softmax_rows(&mut probs);
            let attended = probs.dot(&v);
            let out = attended
                .into_shape_with_order((t_len, dh, f_len))
                .expect("head output shape")
                .permuted_axes([1, 0, 2])
                .as_standard_layout()
                .to_owned();
            (out, probs)
        })
        .collect();

    let mut concat = Array3::zeros((d, t_len, f_len));
    let mut maps = Vec::with_capacity(per_head.len());
    for (l, (out, probs)) in per_head.into_iter().enumerate() {
        concat.slice_mut(s![l * dh..(l + 1) * dh, .., ..]).assign(&out);
        maps.push(probs);
    }
    let projected = w.proj.apply(&concat);
    Ok((z + &projected, maps))
}

/// `channels × T × F` → `T × (channels·F)`, column index `c·F + f`.
fn frame_matrix(x: Array3<f64>) -> Array2<f64> {
    let (c, t, f) = x.dim();
    x.permuted_axes([1, 0, 2])
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((t, c * f))
        .expect("frame matrix shape")
}

/// Deconv2D(3×3) head producing `2C × T × F` real outputs.
pub fn output_head(x: &Embedding, cfg: &ModelConfig, store: &WeightStore) -> Result<Array3<f64>> {
    let w = store.values("head.deconv.weight", &[cfg.emb_dim, 2 * cfg.sources, 3, 3])?;
    let b = store.values("head.deconv.bias", &[2 * cfg.sources])?;
    Ok(deconv2d_3x3(x.view(), &w, &b))
}

/// Splits the `2C` head channels into `C` complex planes; channel `2c` holds
/// the real part and `2c + 1` the imaginary part of source `c`.
pub fn split_sources(out: &Array3<f64>) -> Vec<Array2<num_complex::Complex64>> {
    let sources = out.dim().0 / 2;
    (0..sources)
        .map(|c| {
            let re = out.index_axis(Axis(0), 2 * c);
            let im = out.index_axis(Axis(0), 2 * c + 1);
            ndarray::Zip::from(&re)
                .and(&im)
                .map_collect(|&a, &b| num_complex::Complex64::new(a, b))
        })
        .collect()
}
