use ndarray::Array3;

use super::{gauss, rng};
use gridsep::model::{InputMode, ModelConfig, Tensor, UnfoldOrder, WeightStore};

pub type T3 = Vec<Vec<Vec<f64>>>;

const EPS: f64 = 1e-5;

pub fn tiny(seed: u64) -> ModelConfig {
    // vary kernel/stride, norm placement and inputs across seeds
    let (kernel, stride) = [(4, 1), (3, 2), (2, 2), (1, 1)][(seed % 4) as usize];
    ModelConfig {
        emb_dim: 8,
        blocks: 1 + (seed % 2) as usize,
        kernel,
        stride,
        hidden: 8,
        heads: 2,
        qk_channels: 2,
        sources: 2,
        mics: 1 + (seed % 3) as usize,
        freqs: 9,
        unfold_order: if seed % 2 == 0 {
            UnfoldOrder::LnUnfold
        } else {
            UnfoldOrder::UnfoldLn
        },
        inputs: if seed % 5 == 3 {
            InputMode::MixtureEstimateFilter
        } else {
            InputMode::MixtureOnly
        },
    }
}

pub fn random_features(cfg: &ModelConfig, frames: usize, seed: u64) -> Vec<Array3<f64>> {
    let mut r = rng(seed);
    cfg.feature_channels()
        .into_iter()
        .map(|c| Array3::from_shape_fn((c, frames, cfg.freqs), |_| gauss(&mut r)))
        .collect()
}

pub fn w(store: &WeightStore, name: &str) -> Vec<f64> {
    store.get(name).unwrap().to_f64()
}

pub fn zeros3(c: usize, t: usize, f: usize) -> T3 {
    vec![vec![vec![0.0; f]; t]; c]
}

pub fn to_nested(x: &Array3<f64>) -> T3 {
    let (c, t, f) = x.dim();
    (0..c)
        .map(|i| (0..t).map(|j| (0..f).map(|k| x[(i, j, k)]).collect()).collect())
        .collect()
}

pub fn conv3x3(x: &T3, weight: &[f64], bias: &[f64]) -> T3 {
    let (cin, t, f) = (x.len(), x[0].len(), x[0][0].len());
    let cout = bias.len();
    let mut y = zeros3(cout, t, f);
    for o in 0..cout {
        for a in 0..t {
            for b in 0..f {
                let mut acc = bias[o];
                for i in 0..cin {
                    for kh in 0..3 {
                        for kw in 0..3 {
                            let (ta, fb) = (a as isize + kh as isize - 1, b as isize + kw as isize - 1);
                            if ta >= 0 && fb >= 0 && (ta as usize) < t && (fb as usize) < f {
                                acc += weight[o * cin * 9 + i * 9 + kh * 3 + kw] * x[i][ta as usize][fb as usize];
                            }
                        }
                    }
                }
                y[o][a][b] = acc;
            }
        }
    }
    y
}

pub fn transposed3x3(x: &T3, weight: &[f64], bias: &[f64]) -> T3 {
    let (cin, t, f) = (x.len(), x[0].len(), x[0][0].len());
    let cout = bias.len();
    let mut y = zeros3(cout, t, f);
    for (o, plane) in y.iter_mut().enumerate() {
        for row in plane.iter_mut() {
            row.fill(bias[o]);
        }
    }
    // scatter form: input (a, b) lands on (a + kh − 1, b + kw − 1)
    for i in 0..cin {
        for a in 0..t {
            for b in 0..f {
                for o in 0..cout {
                    for kh in 0..3 {
                        for kw in 0..3 {
                            let (ta, fb) = (a as isize + kh as isize - 1, b as isize + kw as isize - 1);
                            if ta >= 0 && fb >= 0 && (ta as usize) < t && (fb as usize) < f {
                                y[o][ta as usize][fb as usize] +=
                                    weight[i * cout * 9 + o * 9 + kh * 3 + kw] * x[i][a][b];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    values.iter().map(|v| (v - mean) / (var + EPS).sqrt()).collect()
}

pub fn gln(x: &T3, gain: &[f64], bias: &[f64]) -> T3 {
    let flat: Vec<f64> = x.iter().flatten().flatten().copied().collect();
    let normed = normalize(&flat);
    let (t, f) = (x[0].len(), x[0][0].len());
    let mut y = zeros3(x.len(), t, f);
    for c in 0..x.len() {
        for a in 0..t {
            for b in 0..f {
                y[c][a][b] = normed[(c * t + a) * f + b] * gain[c] + bias[c];
            }
        }
    }
    y
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn lstm(seq: &[Vec<f64>], store: &WeightStore, prefix: &str, hidden: usize, reverse: bool) -> Vec<Vec<f64>> {
    let w_ih = w(store, &format!("{prefix}.w_ih"));
    let w_hh = w(store, &format!("{prefix}.w_hh"));
    let b_ih = w(store, &format!("{prefix}.b_ih"));
    let b_hh = w(store, &format!("{prefix}.b_hh"));
    let input = seq[0].len();
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut out = vec![vec![0.0; hidden]; seq.len()];
    let order: Vec<usize> = if reverse {
        (0..seq.len()).rev().collect()
    } else {
        (0..seq.len()).collect()
    };
    for pos in order {
        let mut gates = vec![0.0; 4 * hidden];
        for (r, g) in gates.iter_mut().enumerate() {
            let mut acc = b_ih[r] + b_hh[r];
            for k in 0..input {
                acc += w_ih[r * input + k] * seq[pos][k];
            }
            for k in 0..hidden {
                acc += w_hh[r * hidden + k] * h[k];
            }
            *g = acc;
        }
        for k in 0..hidden {
            let ig = sigmoid(gates[k]);
            let fg = sigmoid(gates[hidden + k]);
            let gg = gates[2 * hidden + k].tanh();
            let og = sigmoid(gates[3 * hidden + k]);
            c[k] = fg * c[k] + ig * gg;
            h[k] = og * c[k].tanh();
        }
        out[pos] = h.clone();
    }
    out
}

/// One sequence (`len × D`) through norm, unfold, BLSTM and Deconv1D; the
/// cropped projection only.
pub fn sequence(seq: &[Vec<f64>], cfg: &ModelConfig, store: &WeightStore, prefix: &str) -> Vec<Vec<f64>> {
    let (len, d) = (seq.len(), cfg.emb_dim);
    let (ki, kj, h) = (cfg.kernel, cfg.stride, cfg.hidden);
    let gain = w(store, &format!("{prefix}.norm.gain"));
    let bias = w(store, &format!("{prefix}.norm.bias"));
    let affine = |v: &[f64]| -> Vec<f64> {
        normalize(v)
            .iter()
            .enumerate()
            .map(|(k, x)| x * gain[k] + bias[k])
            .collect()
    };
    let padded = if len <= ki {
        ki
    } else {
        (len - ki).div_ceil(kj) * kj + ki
    };
    let positions = (padded - ki) / kj + 1;
    let rows: Vec<Vec<f64>> = match cfg.unfold_order {
        UnfoldOrder::LnUnfold => seq.iter().map(|r| affine(r)).collect(),
        UnfoldOrder::UnfoldLn => seq.to_vec(),
    };
    let mut unfolded = vec![vec![0.0; d * ki]; positions];
    for (k, u) in unfolded.iter_mut().enumerate() {
        for i in 0..ki {
            let src = k * kj + i;
            if src < len {
                for c in 0..d {
                    u[c * ki + i] = rows[src][c];
                }
            }
        }
    }
    if cfg.unfold_order == UnfoldOrder::UnfoldLn {
        unfolded = unfolded.iter().map(|u| affine(u)).collect();
    }
    let fwd = lstm(&unfolded, store, &format!("{prefix}.blstm.fwd"), h, false);
    let bwd = lstm(&unfolded, store, &format!("{prefix}.blstm.bwd"), h, true);
    let dw = w(store, &format!("{prefix}.deconv.weight"));
    let db = w(store, &format!("{prefix}.deconv.bias"));
    let mut out = vec![db.clone(); padded];
    for k in 0..positions {
        let hk: Vec<f64> = fwd[k].iter().chain(&bwd[k]).copied().collect();
        for i in 0..ki {
            for o in 0..d {
                let mut acc = 0.0;
                for (c, v) in hk.iter().enumerate() {
                    acc += v * dw[(c * d + o) * ki + i];
                }
                out[k * kj + i][o] += acc;
            }
        }
    }
    out.truncate(len);
    out
}

pub fn projection(x: &T3, store: &WeightStore, prefix: &str) -> T3 {
    let cw = w(store, &format!("{prefix}.conv.weight"));
    let cb = w(store, &format!("{prefix}.conv.bias"));
    let slope = w(store, &format!("{prefix}.prelu"));
    let gain = w(store, &format!("{prefix}.norm.gain"));
    let bias = w(store, &format!("{prefix}.norm.bias"));
    let (cin, t, f) = (x.len(), x[0].len(), x[0][0].len());
    let cout = cb.len();
    let mut y = zeros3(cout, t, f);
    for o in 0..cout {
        for a in 0..t {
            for b in 0..f {
                let mut acc = cb[o];
                for i in 0..cin {
                    acc += cw[o * cin + i] * x[i][a][b];
                }
                y[o][a][b] = if acc >= 0.0 { acc } else { slope[o] * acc };
            }
        }
    }
    for a in 0..t {
        let frame: Vec<f64> = (0..cout).flat_map(|o| y[o][a].clone()).collect();
        let normed = normalize(&frame);
        for o in 0..cout {
            for b in 0..f {
                y[o][a][b] = normed[o * f + b] * gain[o * f + b] + bias[o * f + b];
            }
        }
    }
    y
}

pub fn attention(x: &T3, cfg: &ModelConfig, store: &WeightStore, block: usize) -> T3 {
    let (d, t, f) = (x.len(), x[0].len(), x[0][0].len());
    let dh = cfg.head_dim();
    let mut concat = zeros3(d, t, f);
    for l in 0..cfg.heads {
        let p = format!("block{block}.attn.head{l}");
        let q = projection(x, store, &format!("{p}.query"));
        let k = projection(x, store, &format!("{p}.key"));
        let v = projection(x, store, &format!("{p}.value"));
        let scale = ((f * cfg.qk_channels) as f64).sqrt();
        for a in 0..t {
            let mut scores: Vec<f64> = (0..t)
                .map(|b| {
                    let mut acc = 0.0;
                    for e in 0..cfg.qk_channels {
                        for fi in 0..f {
                            acc += q[e][a][fi] * k[e][b][fi];
                        }
                    }
                    acc / scale
                })
                .collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for s in scores.iter_mut() {
                *s = (*s - m).exp() / total;
            }
            for c in 0..dh {
                for fi in 0..f {
                    concat[l * dh + c][a][fi] = (0..t).map(|b| scores[b] * v[c][b][fi]).sum();
                }
            }
        }
    }
    let proj = projection(&concat, store, &format!("block{block}.attn.proj"));
    let mut out = x.clone();
    for c in 0..d {
        for a in 0..t {
            for b in 0..f {
                out[c][a][b] += proj[c][a][b];
            }
        }
    }
    out
}

pub fn naive_forward(features: &[Array3<f64>], cfg: &ModelConfig, store: &WeightStore) -> T3 {
    let names = ["mixture", "estimate", "filter"];
    let (t, f) = (features[0].dim().1, features[0].dim().2);
    let d = cfg.emb_dim;
    let mut x = zeros3(d, t, f);
    for (feat, name) in features.iter().zip(names) {
        let y = conv3x3(
            &to_nested(feat),
            &w(store, &format!("embed.{name}.conv.weight")),
            &w(store, &format!("embed.{name}.conv.bias")),
        );
        let y = gln(
            &y,
            &w(store, &format!("embed.{name}.norm.gain")),
            &w(store, &format!("embed.{name}.norm.bias")),
        );
        for c in 0..d {
            for a in 0..t {
                for b in 0..f {
                    x[c][a][b] += y[c][a][b];
                }
            }
        }
    }
    for block in 0..cfg.blocks {
        for a in 0..t {
            let seq: Vec<Vec<f64>> = (0..f).map(|b| (0..d).map(|c| x[c][a][b]).collect()).collect();
            let proj = sequence(&seq, cfg, store, &format!("block{block}.intra"));
            for b in 0..f {
                for c in 0..d {
                    x[c][a][b] += proj[b][c];
                }
            }
        }
        for b in 0..f {
            let seq: Vec<Vec<f64>> = (0..t).map(|a| (0..d).map(|c| x[c][a][b]).collect()).collect();
            let proj = sequence(&seq, cfg, store, &format!("block{block}.subband"));
            for a in 0..t {
                for c in 0..d {
                    x[c][a][b] += proj[a][c];
                }
            }
        }
        x = attention(&x, cfg, store, block);
    }
    transposed3x3(&x, &w(store, "head.deconv.weight"), &w(store, "head.deconv.bias"))
}

pub fn zero(store: &mut WeightStore, name: &str) {
    let t = store.get_mut(name).unwrap();
    *t = Tensor::zeros(t.shape.clone());
}

pub fn zero_final_projections(store: &mut WeightStore, cfg: &ModelConfig) {
    for b in 0..cfg.blocks {
        for m in ["intra", "subband"] {
            zero(store, &format!("block{b}.{m}.deconv.weight"));
            zero(store, &format!("block{b}.{m}.deconv.bias"));
        }
        for part in ["conv.weight", "conv.bias", "norm.gain", "norm.bias"] {
            zero(store, &format!("block{b}.attn.proj.{part}"));
        }
    }
}
