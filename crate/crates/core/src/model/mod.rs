//! Forward inference of the grid network: Conv2D+gLN input embedding, `B`
//! blocks of (intra-frame full-band BLSTM, sub-band temporal BLSTM,
//! cross-frame self-attention), and a Deconv2D head that maps back to the
//! real and imaginary parts of `C` sources.

mod blocks;
mod config;
mod counting;
pub mod layers;
mod weights;

use ndarray::Array3;

pub use blocks::{
    attention_module, attention_module_with_maps, embed_inputs, intra_frame_module, intra_frame_module_traced,
    output_head, sequence_projection, split_sources, subband_module, subband_module_traced, AttentionWeights,
    BlockWeights, Embedding, HeadWeights, ProjectionWeights, SequenceShapes, SequenceWeights,
};
pub use config::{InputMode, ModelConfig, UnfoldOrder};
pub use counting::{attention_matrix_entries, count_params, estimate_macs, MacBreakdown};
pub use weights::{weight_shapes, Tensor, WeightStore, FEATURE_NAMES, SEQUENCE_MODULES};

use crate::error::{Error, Result};
use crate::stft::Spectrogram;

/// Separates `features` (mixture, and for the post-filter also first-stage
/// estimates and filter outputs) into `C` complex source spectrograms.
pub fn forward(features: &[Spectrogram], cfg: &ModelConfig, weights: &WeightStore) -> Result<Spectrogram> {
    cfg.validate()?;
    weights.validate(cfg)?;
    let stacks = feature_stacks(features, cfg)?;
    let out = forward_features(&stacks, cfg, weights)?;
    let planes = split_sources(&out);
    Spectrogram::from_planes(&planes, features[0].config)
}

/// Forward pass on real feature stacks; returns the `2C × T × F` head output.
pub fn forward_features(features: &[Array3<f64>], cfg: &ModelConfig, weights: &WeightStore) -> Result<Array3<f64>> {
    let mut x = embed_inputs(features, cfg, weights)?;
    for b in 0..cfg.blocks {
        x = run_block(&x, cfg, weights, b).map_err(|e| e.at_block(b))?;
    }
    output_head(&x, cfg, weights)
}

fn run_block(x: &Embedding, cfg: &ModelConfig, weights: &WeightStore, b: usize) -> Result<Embedding> {
    let w = BlockWeights::load(weights, cfg, b)?;
    let u = intra_frame_module(x, cfg, &w.intra)?;
    let z = subband_module(&u, cfg, &w.subband)?;
    attention_module(&z, cfg, &w.attention)
}

/// Checks input spectrograms against the config and converts them to real
/// RI feature stacks.
pub fn feature_stacks(features: &[Spectrogram], cfg: &ModelConfig) -> Result<Vec<Array3<f64>>> {
    let expected = [cfg.mics, cfg.sources, cfg.sources];
    let count = cfg.inputs.feature_count();
    if features.len() != count {
        return Err(Error::Dimension(format!(
            "{} input spectrograms given, config expects {count}",
            features.len()
        )));
    }
    let (frames, freqs) = (features[0].frames(), features[0].freqs());
    if freqs != cfg.freqs {
        return Err(Error::Dimension(format!(
            "{freqs} frequency bins, config expects F = {}",
            cfg.freqs
        )));
    }
    for (k, (spec, want)) in features.iter().zip(expected).enumerate() {
        if spec.channels() != want {
            return Err(Error::Dimension(format!(
                "{} input has {} channels, expected {want}",
                FEATURE_NAMES[k],
                spec.channels()
            )));
        }
        if spec.frames() != frames || spec.freqs() != freqs {
            return Err(Error::Dimension(format!(
                "{} input is {}x{}, expected {frames}x{freqs}",
                FEATURE_NAMES[k],
                spec.frames(),
                spec.freqs()
            )));
        }
    }
    Ok(features.iter().map(Spectrogram::to_ri_features).collect())
}
