#![allow(dead_code)]

use gridsep::linalg::{CMatrix, CVector};
use gridsep::stft::{Spectrogram, StftConfig, Waveform};
use ndarray::Array3;
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub mod naive;

pub type C = Complex64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

pub fn cgauss(r: &mut ChaCha8Rng) -> C {
    C::new(gauss(r), gauss(r))
}

pub fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    r.random_range(lo..hi)
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<C> {
    (0..n).map(|_| cgauss(r)).collect()
}

pub fn random_signal(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gauss(r)).collect()
}

/// `B Bᴴ + shift·I` for a random square `B`.
pub fn random_hpd(r: &mut ChaCha8Rng, n: usize, shift: f64) -> CMatrix {
    let b: Vec<C> = random_vec(r, n * n);
    CMatrix::from_fn(n, n, |i, j| {
        let mut acc = C::new(0.0, 0.0);
        for k in 0..n {
            acc += b[i * n + k] * b[j * n + k].conj();
        }
        if i == j {
            acc += shift;
        }
        acc
    })
}

pub fn to_rows(a: &CMatrix) -> Vec<Vec<C>> {
    (0..a.rows())
        .map(|i| (0..a.cols()).map(|j| a[(i, j)]).collect())
        .collect()
}

/// Dense Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<C>>, mut b: Vec<C>) -> Vec<C> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].norm().partial_cmp(&a[j][col].norm()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        assert!(p.norm() > 1e-300, "singular system in oracle");
        for row in col + 1..n {
            let factor = a[row][col] / p;
            if factor.norm() == 0.0 {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= factor * v;
            }
            let v = b[col];
            b[row] -= factor * v;
        }
    }
    let mut x = vec![C::new(0.0, 0.0); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Eigenvalues of a Hermitian matrix via cyclic Jacobi on its real
/// symmetric embedding `[[Re, −Im], [Im, Re]]` (each eigenvalue twice).
pub fn jacobi_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let n = a.rows();
    let m = 2 * n;
    let mut s = vec![vec![0.0; m]; m];
    for i in 0..n {
        for j in 0..n {
            let z = a[(i, j)];
            s[i][j] = z.re;
            s[i + n][j + n] = z.re;
            s[i][j + n] = -z.im;
            s[i + n][j] = z.im;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..m)
            .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| s[i][j] * s[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..m {
            for q in p + 1..m {
                if s[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (s[q][q] - s[p][p]) / (2.0 * s[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..m {
                    let skp = s[k][p];
                    let skq = s[k][q];
                    s[k][p] = c * skp - sn * skq;
                    s[k][q] = sn * skp + c * skq;
                }
                for k in 0..m {
                    let spk = s[p][k];
                    let sqk = s[q][k];
                    s[p][k] = c * spk - sn * sqk;
                    s[q][k] = sn * spk + c * sqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..m).map(|i| s[i][i]).collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eig
}

pub fn max_abs_diff(a: &[C], b: &[C]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn cvec(v: &CVector) -> Vec<C> {
    v.0.clone()
}

/// Random `channels × frames × freqs` spectrogram on a small STFT config.
pub fn random_spec(r: &mut ChaCha8Rng, channels: usize, frames: usize, config: StftConfig) -> Spectrogram {
    let f = config.num_freqs();
    let data = Array3::from_shape_fn((channels, frames, f), |_| cgauss(r));
    Spectrogram::new(data, config).unwrap()
}

/// 16-point STFT (9 bins) at 8 kHz for small filter problems.
pub fn small_config() -> StftConfig {
    StftConfig {
        sample_rate: 8000,
        win_len: 16,
        hop_len: 4,
        dft_size: 16,
        window: gridsep::stft::Window::SqrtHann,
    }
}

pub fn wave(channels: Vec<Vec<f64>>) -> Waveform {
    Waveform::from_channels(&channels, 8000).unwrap()
}
