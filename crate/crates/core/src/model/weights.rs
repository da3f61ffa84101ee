//! Named weight tensors, the on-disk manifest format, and seeded synthetic
//! weights for tests.
//!
//! Tensor names (`b` = block index, `l` = head index, `m` ∈ {`intra`,
//! `subband`}, feature ∈ {`mixture`, `estimate`, `filter`}):
//!
//! ```text
//! embed.{feature}.conv.weight      [D, in, 3, 3]
//! embed.{feature}.conv.bias        [D]
//! embed.{feature}.norm.gain        [D]
//! embed.{feature}.norm.bias        [D]
//! block{b}.{m}.norm.gain           [D] (LN-Unfold) or [I·D] (Unfold-LN)
//! block{b}.{m}.norm.bias           same
//! block{b}.{m}.blstm.{fwd,bwd}.w_ih  [4H, I·D]
//! block{b}.{m}.blstm.{fwd,bwd}.w_hh  [4H, H]
//! block{b}.{m}.blstm.{fwd,bwd}.b_ih  [4H]
//! block{b}.{m}.blstm.{fwd,bwd}.b_hh  [4H]
//! block{b}.{m}.deconv.weight       [2H, D, I]
//! block{b}.{m}.deconv.bias         [D]
//! block{b}.attn.head{l}.{query,key}.conv.weight  [E, D]
//! block{b}.attn.head{l}.{query,key}.conv.bias    [E]
//! block{b}.attn.head{l}.{query,key}.prelu        [E]
//! block{b}.attn.head{l}.{query,key}.norm.gain    [E, F]
//! block{b}.attn.head{l}.{query,key}.norm.bias    [E, F]
//! block{b}.attn.head{l}.value.*    as above with D/L channels
//! block{b}.attn.proj.*             as above with D channels, conv [D, D]
//! head.deconv.weight               [D, 2C, 3, 3]
//! head.deconv.bias                 [2C]
//! ```
//!
//! LSTM gate rows are ordered (input, forget, cell, output) and both bias
//! vectors are added; states start at zero.
//!
//! The manifest is a text index next to a raw little-endian f32 blob:
//!
//! ```text
//! # gridsep weights v1
//! blob model.bin
//! total_bytes 1234
//! tensor embed.mixture.conv.weight 8x2x3x3 f32 0
//! ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};

pub const FEATURE_NAMES: [&str; 3] = ["mixture", "estimate", "filter"];
pub const SEQUENCE_MODULES: [&str; 2] = ["intra", "subband"];
const MANIFEST_HEADER: &str = "# gridsep weights v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::Weights(format!(
                "shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Every tensor a configuration needs, in a fixed order.
pub fn weight_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.emb_dim;
    let h = cfg.hidden;
    let i = cfg.kernel;
    let e = cfg.qk_channels;
    let f = cfg.freqs;
    let dh = cfg.head_dim();
    let mut shapes = Vec::new();
    let mut push = |name: String, shape: Vec<usize>| shapes.push((name, shape));

    for (feature, channels) in FEATURE_NAMES.iter().zip(cfg.feature_channels()) {
        push(format!("embed.{feature}.conv.weight"), vec![d, channels, 3, 3]);
        push(format!("embed.{feature}.conv.bias"), vec![d]);
        push(format!("embed.{feature}.norm.gain"), vec![d]);
        push(format!("embed.{feature}.norm.bias"), vec![d]);
    }
    for b in 0..cfg.blocks {
        for m in SEQUENCE_MODULES {
            let p = format!("block{b}.{m}");
            push(format!("{p}.norm.gain"), vec![cfg.norm_width()]);
            push(format!("{p}.norm.bias"), vec![cfg.norm_width()]);
            for dir in ["fwd", "bwd"] {
                push(format!("{p}.blstm.{dir}.w_ih"), vec![4 * h, i * d]);
                push(format!("{p}.blstm.{dir}.w_hh"), vec![4 * h, h]);
                push(format!("{p}.blstm.{dir}.b_ih"), vec![4 * h]);
                push(format!("{p}.blstm.{dir}.b_hh"), vec![4 * h]);
            }
            push(format!("{p}.deconv.weight"), vec![2 * h, d, i]);
            push(format!("{p}.deconv.bias"), vec![d]);
        }
        let mut projection = |prefix: String, out: usize| {
            push(format!("{prefix}.conv.weight"), vec![out, d]);
            push(format!("{prefix}.conv.bias"), vec![out]);
            push(format!("{prefix}.prelu"), vec![out]);
            push(format!("{prefix}.norm.gain"), vec![out, f]);
            push(format!("{prefix}.norm.bias"), vec![out, f]);
        };
        for l in 0..cfg.heads {
            projection(format!("block{b}.attn.head{l}.query"), e);
            projection(format!("block{b}.attn.head{l}.key"), e);
            projection(format!("block{b}.attn.head{l}.value"), dh);
        }
        projection(format!("block{b}.attn.proj"), d);
    }
    push("head.deconv.weight".into(), vec![d, 2 * cfg.sources, 3, 3]);
    push("head.deconv.bias".into(), vec![2 * cfg.sources]);
    shapes
}

/// Map from tensor name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Weights(format!("missing tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Weights(format!("missing tensor {name}")))
    }

    /// Values of `name` as f64 after checking its shape.
    pub fn values(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let t = self.get(name)?;
        if t.shape != shape {
            return Err(Error::Weights(format!(
                "{name} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t.to_f64())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|t| t.values.len()).sum()
    }

    /// Every tensor the config needs is present with the exact shape, and
    /// nothing else is.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        cfg.validate()?;
        let expected = weight_shapes(cfg);
        for (name, shape) in &expected {
            let t = self.get(name)?;
            if &t.shape != shape {
                return Err(Error::Weights(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Weights(format!("{name} contains non-finite values")));
            }
        }
        if self.tensors.len() != expected.len() {
            let known: std::collections::HashSet<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
            let extra: Vec<&str> = self.names().filter(|n| !known.contains(n)).collect();
            return Err(Error::Weights(format!("unexpected tensors: {}", extra.join(", "))));
        }
        Ok(())
    }

    /// All-zero weights for `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let mut store = Self::new();
        for (name, shape) in weight_shapes(cfg) {
            store.insert(name, Tensor::zeros(shape));
        }
        store
    }

    /// Seeded pseudo-random weights (ChaCha8 stream, tensors drawn in
    /// [`weight_shapes`] order). Matrices and biases are uniform in
    /// `±1/sqrt(fan_in)`, norm gains in `1 ± 0.1`, norm biases in `±0.1`,
    /// PReLU slopes are 0.25.
    pub fn synthetic(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for (name, shape) in weight_shapes(cfg) {
            let n: usize = shape.iter().product();
            let values: Vec<f32> = if name.ends_with(".prelu") {
                vec![0.25; n]
            } else if name.ends_with("norm.gain") {
                (0..n).map(|_| 1.0 + rng.random_range(-0.1f32..0.1)).collect()
            } else if name.ends_with("norm.bias") {
                (0..n).map(|_| rng.random_range(-0.1f32..0.1)).collect()
            } else {
                let bound = 1.0 / (fan_in(cfg, &name) as f32).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            store.insert(name, Tensor { shape, values });
        }
        store
    }

    /// Writes `<dir>/<stem>.idx` and `<dir>/<stem>.bin`; returns the index path.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<std::path::PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let blob_name = format!("{stem}.bin");
        let mut blob = Vec::with_capacity(self.scalar_count() * 4);
        let mut lines = String::new();
        for (name, t) in &self.tensors {
            let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            writeln!(lines, "tensor {name} {} f32 {}", shape.join("x"), blob.len()).unwrap();
            for v in &t.values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let index = format!(
            "{MANIFEST_HEADER}\nblob {blob_name}\ntotal_bytes {}\n{lines}",
            blob.len()
        );
        let index_path = dir.join(format!("{stem}.idx"));
        fs::write(&index_path, index)?;
        fs::write(dir.join(blob_name), blob)?;
        Ok(index_path)
    }

    /// Loads a manifest written by [`WeightStore::save`]. The blob path is
    /// resolved relative to the manifest.
    pub fn load(index_path: impl AsRef<Path>) -> Result<Self> {
        let index_path = index_path.as_ref();
        let text = fs::read_to_string(index_path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
            return Err(Error::Weights(format!(
                "{}: missing '{MANIFEST_HEADER}' header",
                index_path.display()
            )));
        }
        let mut blob_name = None;
        let mut total = None;
        let mut entries = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Weights(format!("manifest line {}: '{line}'", lineno + 2));
            match fields.as_slice() {
                ["blob", name] => blob_name = Some(name.to_string()),
                ["total_bytes", n] => total = Some(n.parse::<usize>().map_err(|_| bad())?),
                ["tensor", name, shape, dtype, offset] => {
                    if *dtype != "f32" {
                        return Err(Error::Weights(format!("{name}: unsupported dtype {dtype}")));
                    }
                    let shape = shape
                        .split('x')
                        .map(|s| s.parse::<usize>().map_err(|_| bad()))
                        .collect::<Result<Vec<_>>>()?;
                    let offset = offset.parse::<usize>().map_err(|_| bad())?;
                    entries.push((name.to_string(), shape, offset));
                }
                _ => return Err(bad()),
            }
        }
        let blob_name = blob_name.ok_or_else(|| Error::Weights("manifest has no blob line".into()))?;
        let total = total.ok_or_else(|| Error::Weights("manifest has no total_bytes line".into()))?;
        let blob_path = index_path.parent().unwrap_or(Path::new(".")).join(blob_name);
        let blob = fs::read(&blob_path)?;
        if blob.len() != total {
            return Err(Error::Weights(format!(
                "{} holds {} bytes, manifest declares {total}",
                blob_path.display(),
                blob.len()
            )));
        }
        let mut store = Self::new();
        for (name, shape, offset) in entries {
            let count: usize = shape.iter().product();
            let end = offset
                .checked_add(count * 4)
                .filter(|&e| e <= blob.len())
                .ok_or_else(|| Error::Weights(format!("{name} runs past the end of the blob")))?;
            let values = blob[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if store.tensors.contains_key(&name) {
                return Err(Error::Weights(format!("duplicate tensor {name}")));
            }
            store.insert(name, Tensor { shape, values });
        }
        Ok(store)
    }
}

fn fan_in(cfg: &ModelConfig, name: &str) -> usize {
    if let Some(rest) = name.strip_prefix("embed.") {
        let k = FEATURE_NAMES.iter().position(|f| rest.starts_with(f)).unwrap_or(0);
        cfg.feature_channels().get(k).copied().unwrap_or(2) * 9
    } else if name.starts_with("head.") {
        cfg.emb_dim * 9
    } else if name.contains(".blstm.") {
        cfg.hidden
    } else if name.contains(".deconv.") {
        2 * cfg.hidden * cfg.kernel / cfg.stride
    } else {
        cfg.emb_dim
    }
}
