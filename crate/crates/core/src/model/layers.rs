//! Primitive layers operating on `channels × T × F` tensors or on
//! `length × channels` sequences. All arithmetic is f64.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

pub const NORM_EPS: f64 = 1e-5;

/// 3×3 convolution, stride 1, zero padding 1.
/// `weight` is laid out `[out, in, 3, 3]`.
pub fn conv2d_3x3(input: ArrayView3<'_, f64>, weight: &[f64], bias: &[f64]) -> Array3<f64> {
    let (cin, t_len, f_len) = input.dim();
    let cout = bias.len();
    debug_assert_eq!(weight.len(), cout * cin * 9);
    let mut out = Array3::zeros((cout, t_len, f_len));
    for o in 0..cout {
        let mut plane = out.index_axis_mut(Axis(0), o);
        plane.fill(bias[o]);
        for i in 0..cin {
            let src = input.index_axis(Axis(0), i);
            for kh in 0..3 {
                for kw in 0..3 {
                    let w = weight[((o * cin + i) * 3 + kh) * 3 + kw];
                    if w == 0.0 {
                        continue;
                    }
                    for t in 0..t_len {
                        let ts = t as isize + kh as isize - 1;
                        if ts < 0 || ts >= t_len as isize {
                            continue;
                        }
                        for f in 0..f_len {
                            let fs = f as isize + kw as isize - 1;
                            if fs < 0 || fs >= f_len as isize {
                                continue;
                            }
                            plane[(t, f)] += w * src[(ts as usize, fs as usize)];
                        }
                    }
                }
            }
        }
    }
    out
}

/// 3×3 transposed convolution, stride 1, padding 1 (output keeps `T × F`).
/// `weight` is laid out `[in, out, 3, 3]`.
pub fn deconv2d_3x3(input: ArrayView3<'_, f64>, weight: &[f64], bias: &[f64]) -> Array3<f64> {
    let (cin, t_len, f_len) = input.dim();
    let cout = bias.len();
    debug_assert_eq!(weight.len(), cin * cout * 9);
    let mut out = Array3::zeros((cout, t_len, f_len));
    for o in 0..cout {
        let mut plane = out.index_axis_mut(Axis(0), o);
        plane.fill(bias[o]);
        for i in 0..cin {
            let src = input.index_axis(Axis(0), i);
            for kh in 0..3 {
                for kw in 0..3 {
                    let w = weight[((i * cout + o) * 3 + kh) * 3 + kw];
                    if w == 0.0 {
                        continue;
                    }
                    // out[y] += in[x]·w[k] with y = x + k − 1
                    for t in 0..t_len {
                        let ts = t as isize + 1 - kh as isize;
                        if ts < 0 || ts >= t_len as isize {
                            continue;
                        }
                        for f in 0..f_len {
                            let fs = f as isize + 1 - kw as isize;
                            if fs < 0 || fs >= f_len as isize {
                                continue;
                            }
                            plane[(t, f)] += w * src[(ts as usize, fs as usize)];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Point-wise (1×1) convolution. `weight` is `[out, in]`.
pub fn conv1x1(input: ArrayView3<'_, f64>, weight: &[f64], bias: &[f64]) -> Array3<f64> {
    let (cin, t_len, f_len) = input.dim();
    let cout = bias.len();
    let w = ArrayView2::from_shape((cout, cin), weight).expect("conv1x1 weight shape");
    let flat = input.to_shape((cin, t_len * f_len)).expect("contiguous input");
    let mut out = w.dot(&flat);
    for (o, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        row += bias[o];
    }
    out.into_shape_with_order((cout, t_len, f_len))
        .expect("conv1x1 output shape")
}

/// Global layer norm: statistics over the whole tensor, per-channel affine.
pub fn global_layer_norm(x: &mut Array3<f64>, gain: &[f64], bias: &[f64]) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + NORM_EPS).sqrt();
    for (c, mut plane) in x.axis_iter_mut(Axis(0)).enumerate() {
        plane.mapv_inplace(|v| (v - mean) * inv * gain[c] + bias[c]);
    }
}

/// Normalizes each row of a `length × dim` matrix over `dim`.
pub fn layer_norm_rows(x: &mut Array2<f64>, gain: &[f64], bias: &[f64]) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gain[k] + bias[k];
        }
    }
}

/// Per-frame norm over (channel, frequency); `gain`/`bias` are `[C, F]`.
pub fn channel_freq_layer_norm(x: &mut Array3<f64>, gain: &[f64], bias: &[f64]) {
    let (c_len, t_len, f_len) = x.dim();
    let n = (c_len * f_len) as f64;
    for t in 0..t_len {
        let mut frame = x.index_axis_mut(Axis(1), t);
        let mean = frame.sum() / n;
        let var = frame.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        for ((c, f), v) in frame.indexed_iter_mut() {
            *v = (*v - mean) * inv * gain[c * f_len + f] + bias[c * f_len + f];
        }
    }
}

/// Parametric ReLU with one slope per channel.
pub fn prelu(x: &mut Array3<f64>, slopes: &[f64]) {
    for (c, mut plane) in x.axis_iter_mut(Axis(0)).enumerate() {
        let a = slopes[c];
        plane.mapv_inplace(|v| if v >= 0.0 { v } else { a * v });
    }
}

/// One LSTM direction. Gate rows follow the order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct LstmWeights {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub bias: Vec<f64>,
}

impl LstmWeights {
    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    /// Runs over `seq` (`length × input`), forward or reversed, from zero state.
    pub fn run(&self, seq: ArrayView2<'_, f64>, reverse: bool) -> Array2<f64> {
        let len = seq.nrows();
        let h_dim = self.hidden();
        // input projections for every step at once
        let mut pre = seq.dot(&self.w_ih.t());
        for mut row in pre.axis_iter_mut(Axis(0)) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        let mut out = Array2::zeros((len, h_dim));
        let mut h = ndarray::Array1::<f64>::zeros(h_dim);
        let mut c = vec![0.0; h_dim];
        for step in 0..len {
            let pos = if reverse { len - 1 - step } else { step };
            let gates = &pre.row(pos) + &self.w_hh.dot(&h);
            for k in 0..h_dim {
                let i = sigmoid(gates[k]);
                let f = sigmoid(gates[h_dim + k]);
                let g = gates[2 * h_dim + k].tanh();
                let o = sigmoid(gates[3 * h_dim + k]);
                c[k] = f * c[k] + i * g;
                h[k] = o * c[k].tanh();
            }
            out.row_mut(pos).assign(&h);
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Bidirectional LSTM: `[forward ‖ backward]`, giving `length × 2H`.
pub fn blstm(seq: ArrayView2<'_, f64>, fwd: &LstmWeights, bwd: &LstmWeights) -> Array2<f64> {
    let f = fwd.run(seq, false);
    let b = bwd.run(seq, true);
    ndarray::concatenate(Axis(1), &[f.view(), b.view()]).expect("blstm concat")
}

/// Length of the zero-padded axis: `ceil((len − I)/J)·J + I`, at least `I`.
pub fn padded_len(len: usize, kernel: usize, stride: usize) -> usize {
    let excess = len.saturating_sub(kernel);
    excess.div_ceil(stride) * stride + kernel
}

/// Number of unfolded positions, `(padded − I)/J + 1`.
pub fn unfolded_len(len: usize, kernel: usize, stride: usize) -> usize {
    (padded_len(len, kernel, stride) - kernel) / stride + 1
}

/// Stacks `kernel` neighbouring rows of a `length × D` sequence (zero-padded
/// to [`padded_len`]) into `positions × (D·I)` rows. Within a row the entry
/// for channel `d` and kernel offset `i` sits at `d·I + i`.
pub fn unfold(seq: ArrayView2<'_, f64>, kernel: usize, stride: usize) -> Array2<f64> {
    let (len, dim) = seq.dim();
    let positions = unfolded_len(len, kernel, stride);
    let mut out = Array2::zeros((positions, dim * kernel));
    for k in 0..positions {
        for i in 0..kernel {
            let src = k * stride + i;
            if src >= len {
                continue;
            }
            for d in 0..dim {
                out[(k, d * kernel + i)] = seq[(src, d)];
            }
        }
    }
    out
}

/// Transposed 1-D convolution realized as a linear layer followed by
/// overlap-add. `weight` is `[in, out, kernel]`; input `positions × in`,
/// output `((positions − 1)·stride + kernel) × out`.
pub fn deconv1d(input: ArrayView2<'_, f64>, weight: &[f64], bias: &[f64], kernel: usize, stride: usize) -> Array2<f64> {
    let (positions, cin) = input.dim();
    let cout = bias.len();
    let w = ArrayView2::from_shape((cin, cout * kernel), weight).expect("deconv1d weight shape");
    // positions × (out·kernel), column o·kernel + i
    let projected = input.dot(&w);
    let out_len = (positions - 1) * stride + kernel;
    let mut out = Array2::zeros((out_len, cout));
    for mut row in out.axis_iter_mut(Axis(0)) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = *b;
        }
    }
    for k in 0..positions {
        for i in 0..kernel {
            let dst = k * stride + i;
            for o in 0..cout {
                out[(dst, o)] += projected[(k, o * kernel + i)];
            }
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}
