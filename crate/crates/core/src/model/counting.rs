//! Closed-form parameter and multiply-accumulate counts.

use super::config::ModelConfig;
use super::layers::{padded_len, unfolded_len};

/// Learnable scalars, counted analytically per layer. Agrees with the
/// number of values in [`super::weights::weight_shapes`].
pub fn count_params(cfg: &ModelConfig) -> usize {
    let d = cfg.emb_dim;
    let h = cfg.hidden;
    let i = cfg.kernel;
    let e = cfg.qk_channels;
    let f = cfg.freqs;
    let dh = cfg.head_dim();

    // Conv2D 3×3 with bias + gLN gain/bias, per input branch
    let embed: usize = cfg.feature_channels().iter().map(|&cin| cin * d * 9 + d + 2 * d).sum();

    let lstm_direction = 4 * h * (i * d) + 4 * h * h + 2 * 4 * h;
    let sequence_module = 2 * cfg.norm_width() + 2 * lstm_direction + 2 * h * d * i + d;

    // conv (out×D + out) + PReLU (out) + cfLN (2·out·F)
    let projection = |out: usize| out * d + out + out + 2 * out * f;
    let attention = cfg.heads * (2 * projection(e) + projection(dh)) + projection(d);

    let block = 2 * sequence_module + attention;
    let head = d * 2 * cfg.sources * 9 + 2 * cfg.sources;
    embed + cfg.blocks * block + head
}

/// Per-module multiply-accumulate estimate for one utterance of `frames`
/// STFT frames. Normalization and activations are not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MacBreakdown {
    pub embed: u64,
    pub intra: u64,
    pub subband: u64,
    pub attention_projections: u64,
    pub attention_scores: u64,
    pub attention_values: u64,
    pub head: u64,
}

impl MacBreakdown {
    pub fn total(&self) -> u64 {
        self.embed
            + self.intra
            + self.subband
            + self.attention_projections
            + self.attention_scores
            + self.attention_values
            + self.head
    }
}

/// MAC estimate, summed over the network:
///
/// - embedding Conv2D: `in·D·9·T·F` per branch; head Deconv2D `D·2C·9·T·F`
/// - each sequence module, per sequence of `K` unfolded positions:
///   BLSTM `2·K·4H·(I·D + H)` and Deconv1D as linear layer + overlap-add
///   `K·2H·D·I`; full-band has `T` sequences (`K` from `F`), sub-band has
///   `F` sequences (`K` from `T`)
/// - attention per block: projections `T·F·D·(L·(2E + D/L) + D)`,
///   `Q·Kᵀ` as `L·T²·F·E`, attention-weighted values `L·T²·F·D/L`
pub fn estimate_macs(cfg: &ModelConfig, frames: usize) -> MacBreakdown {
    let d = cfg.emb_dim as u64;
    let h = cfg.hidden as u64;
    let i = cfg.kernel as u64;
    let e = cfg.qk_channels as u64;
    let l = cfg.heads as u64;
    let t = frames as u64;
    let f = cfg.freqs as u64;
    let b = cfg.blocks as u64;
    let dh = cfg.head_dim() as u64;

    let embed: u64 = cfg.feature_channels().iter().map(|&c| c as u64 * d * 9 * t * f).sum();
    let sequence = |positions: u64| 2 * positions * 4 * h * (i * d + h) + positions * 2 * h * d * i;
    let k_freq = unfolded_len(cfg.freqs, cfg.kernel, cfg.stride) as u64;
    let k_time = if frames == 0 {
        0
    } else {
        unfolded_len(frames, cfg.kernel, cfg.stride) as u64
    };
    debug_assert!(frames == 0 || padded_len(frames, cfg.kernel, cfg.stride) >= frames);

    MacBreakdown {
        embed,
        intra: b * t * sequence(k_freq),
        subband: b * f * sequence(k_time),
        attention_projections: b * t * f * d * (l * (2 * e + dh) + d),
        attention_scores: b * l * t * t * f * e,
        attention_values: b * l * t * t * f * dh,
        head: d * 2 * cfg.sources as u64 * 9 * t * f,
    }
}

/// Number of attention-matrix entries held for one utterance: `B·L·T²`.
pub fn attention_matrix_entries(cfg: &ModelConfig, frames: usize) -> usize {
    cfg.blocks * cfg.heads * frames * frames
}
