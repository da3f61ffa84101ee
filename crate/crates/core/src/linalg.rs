//! Small dense complex linear algebra used by the filters.
//!
//! Matrices here are tiny (a few dozen rows at most: taps × microphones), so
//! everything is straightforward O(n³) code in double precision. The three
//! entry points are [`hermitian_solve`], [`principal_eigvec`] and
//! [`weighted_normal_equations`]; the latter is the kernel behind the
//! Wiener filter and WPE solves.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative diagonal loading applied to every covariance inversion.
pub const DEFAULT_LOADING: f64 = 1e-10;

const HERMITIAN_TOL: f64 = 1e-8;
const POWER_MAX_ITERS: usize = 200;
const POWER_TOL: f64 = 1e-10;
const SQUARINGS: usize = 6;

/// Dense complex matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[Complex64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest `|a_ij - conj(a_ji)|` relative to the largest entry.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in r..self.cols {
                worst = worst.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        worst / scale
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matvec(&self, x: &[Complex64]) -> CVector {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        let out = (0..self.rows)
            .map(|r| {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect();
        CVector(out)
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension");
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..other.cols {
                    out[(r, c)] += a * other[(k, c)];
                }
            }
        }
        out
    }

    /// Adds `x x^H` scaled by `weight`.
    pub fn add_outer(&mut self, x: &[Complex64], weight: f64) {
        debug_assert!(self.is_square() && x.len() == self.rows);
        let n = self.rows;
        for r in 0..n {
            let xr = x[r] * weight;
            if xr == Complex64::new(0.0, 0.0) {
                continue;
            }
            let row = &mut self.data[r * n..(r + 1) * n];
            for (dst, xc) in row.iter_mut().zip(x) {
                *dst += xr * xc.conj();
            }
        }
    }

    fn scaled(&self, s: f64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Dense complex vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CVector(pub Vec<Complex64>);

impl CVector {
    pub fn zeros(len: usize) -> Self {
        CVector(vec![Complex64::new(0.0, 0.0); len])
    }

    /// `self^H other`.
    pub fn dot(&self, other: &[Complex64]) -> Complex64 {
        inner(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }
}

impl Deref for CVector {
    type Target = [Complex64];

    fn deref(&self) -> &[Complex64] {
        &self.0
    }
}

impl DerefMut for CVector {
    fn deref_mut(&mut self) -> &mut [Complex64] {
        &mut self.0
    }
}

impl From<Vec<Complex64>> for CVector {
    fn from(v: Vec<Complex64>) -> Self {
        CVector(v)
    }
}

/// Conjugated inner product `a^H b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Solves `(A + loading·(tr(A)/n)·I) x = b` for Hermitian `A`.
///
/// Positive-definite systems go through a Cholesky factorization; indefinite
/// Hermitian systems fall back to LU with partial pivoting. A singular system
/// is reported as [`Error::RankDeficient`] rather than producing NaN.
pub fn hermitian_solve(a: &CMatrix, b: &[Complex64], loading: f64) -> Result<CVector> {
    if !a.is_square() || a.rows() != b.len() {
        return Err(Error::Dimension(format!(
            "{}x{} matrix with right-hand side of length {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    if !(loading >= 0.0) {
        return Err(Error::InvalidArgument(format!("loading must be >= 0, got {loading}")));
    }
    let defect = a.hermitian_defect();
    if defect > HERMITIAN_TOL {
        return Err(Error::NotHermitian(defect));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(CVector::zeros(0));
    }
    let mut m = a.clone();
    let shift = loading * a.trace().re / n as f64;
    if shift != 0.0 {
        for i in 0..n {
            m[(i, i)] += shift;
        }
    }
    match cholesky(&m) {
        Some(l) => Ok(cholesky_solve(&l, b)),
        None => lu_solve(m, b),
    }
}

// Lower-triangular factor, or None when a pivot is not safely positive.
fn cholesky(a: &CMatrix) -> Option<CMatrix> {
    let n = a.rows();
    let scale = (0..n).map(|i| a[(i, i)].re.abs()).fold(0.0, f64::max);
    let tiny = scale * n as f64 * f64::EPSILON;
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > tiny) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &CMatrix, b: &[Complex64]) -> CVector {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)].conj() * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    CVector(y)
}

fn lu_solve(mut m: CMatrix, b: &[Complex64]) -> Result<CVector> {
    let n = m.rows();
    let scale = m.max_abs();
    let tiny = scale * n as f64 * f64::EPSILON;
    let mut x = b.to_vec();
    for col in 0..n {
        let (piv, mag) = (col..n)
            .map(|r| (r, m[(r, col)].norm()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(mag > tiny) {
            return Err(Error::RankDeficient {
                column: col,
                pivot: mag.max(0.0),
            });
        }
        if piv != col {
            for c in 0..n {
                let tmp = m[(col, c)];
                m[(col, c)] = m[(piv, c)];
                m[(piv, c)] = tmp;
            }
            x.swap(col, piv);
        }
        let p = m[(col, col)];
        for r in col + 1..n {
            let factor = m[(r, col)] / p;
            if factor == Complex64::new(0.0, 0.0) {
                continue;
            }
            for c in col..n {
                let v = m[(col, c)];
                m[(r, c)] -= factor * v;
            }
            let xc = x[col];
            x[r] -= factor * xc;
        }
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for c in r + 1..n {
            s -= m[(r, c)] * x[c];
        }
        x[r] = s / m[(r, r)];
    }
    Ok(CVector(x))
}

/// Unit-norm eigenvector belonging to the largest eigenvalue of a Hermitian
/// positive semi-definite matrix.
///
/// Power iteration (at most 200 steps, 1e-10 tolerance). The start vector is
/// the heaviest column of `A^64`, obtained by repeated normalized squaring,
/// so the iteration cannot begin orthogonal to the dominant eigenspace. The
/// phase is fixed so that the first nonzero entry is real and nonnegative.
pub fn principal_eigvec(a: &CMatrix) -> Result<CVector> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "{}x{} matrix is not square",
            a.rows(),
            a.cols()
        )));
    }
    let defect = a.hermitian_defect();
    if defect > HERMITIAN_TOL {
        return Err(Error::NotHermitian(defect));
    }
    let norm = a.frobenius_norm();
    if norm == 0.0 || a.rows() == 0 {
        return Err(Error::ZeroMatrix);
    }
    let n = a.rows();

    let mut power = a.scaled(1.0 / norm);
    for _ in 0..SQUARINGS {
        let sq = power.matmul(&power);
        let sq_norm = sq.frobenius_norm();
        if sq_norm == 0.0 || !sq_norm.is_finite() {
            break;
        }
        power = sq.scaled(1.0 / sq_norm);
    }
    let best_col = (0..n)
        .map(|c| (c, (0..n).map(|r| power[(r, c)].norm_sqr()).sum::<f64>()))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
        .0;
    let mut v = CVector((0..n).map(|r| power[(r, best_col)]).collect());
    normalize(&mut v);

    let mut eig = rayleigh(a, &v);
    for _ in 0..POWER_MAX_ITERS {
        let mut next = a.matvec(&v);
        if next.norm() == 0.0 {
            break;
        }
        normalize(&mut next);
        let next_eig = rayleigh(a, &next);
        let change = (next_eig - eig).abs();
        v = next;
        eig = next_eig;
        let residual = residual_norm(a, &v, eig);
        if change <= POWER_TOL * norm && residual <= POWER_TOL * norm {
            break;
        }
    }
    fix_phase(&mut v);
    Ok(v)
}

fn normalize(v: &mut CVector) {
    let n = v.norm();
    if n > 0.0 {
        for z in v.iter_mut() {
            *z /= n;
        }
    }
}

fn rayleigh(a: &CMatrix, v: &[Complex64]) -> f64 {
    inner(v, &a.matvec(v)).re
}

fn residual_norm(a: &CMatrix, v: &[Complex64], eig: f64) -> f64 {
    a.matvec(v)
        .iter()
        .zip(v)
        .map(|(av, x)| (av - x * eig).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

fn fix_phase(v: &mut CVector) {
    if let Some(k) = v.iter().position(|z| z.norm() > 1e-12) {
        let lead = v[k];
        let rot = lead.conj() / lead.norm();
        for z in v.iter_mut() {
            *z *= rot;
        }
        v[k] = Complex64::new(lead.norm(), 0.0);
    }
}

/// Accumulates the normal equations of a weighted complex least-squares
/// problem `min_w Σ_t weight_t·|target_t − w^H x_t|²`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    covariance: CMatrix,
    cross: Vec<Complex64>,
}

impl NormalEquations {
    pub fn new(dim: usize) -> Self {
        Self {
            covariance: CMatrix::zeros(dim, dim),
            cross: vec![Complex64::new(0.0, 0.0); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.cross.len()
    }

    pub fn accumulate(&mut self, frame: &[Complex64], target: Complex64, weight: f64) {
        self.covariance.add_outer(frame, weight);
        let t = target.conj() * weight;
        for (acc, x) in self.cross.iter_mut().zip(frame) {
            *acc += x * t;
        }
    }

    pub fn covariance(&self) -> &CMatrix {
        &self.covariance
    }

    pub fn cross(&self) -> &[Complex64] {
        &self.cross
    }

    /// Solves for the filter. An all-zero covariance (no signal) yields the
    /// zero filter.
    pub fn solve(&self, loading: f64) -> Result<CVector> {
        solve_normal(&self.covariance, &self.cross, loading)
    }
}

/// Solves `R w = p`, returning the zero filter when `R` is all zero.
pub fn solve_normal(covariance: &CMatrix, cross: &[Complex64], loading: f64) -> Result<CVector> {
    if covariance.trace().re == 0.0 {
        return Ok(CVector::zeros(cross.len()));
    }
    hermitian_solve(covariance, cross, loading)
}

/// `argmin_w Σ_t weights[t]·|targets[t] − w^H frames[t]|²` via the normal
/// equations with [`DEFAULT_LOADING`].
pub fn weighted_normal_equations(frames: &[CVector], targets: &[Complex64], weights: &[f64]) -> Result<CVector> {
    if frames.is_empty() {
        return Err(Error::Empty("no frames"));
    }
    if frames.len() != targets.len() || frames.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} frames, {} targets, {} weights",
            frames.len(),
            targets.len(),
            weights.len()
        )));
    }
    let dim = frames[0].len();
    let mut eqs = NormalEquations::new(dim);
    for ((x, &y), &w) in frames.iter().zip(targets).zip(weights) {
        if x.len() != dim {
            return Err(Error::Dimension(format!(
                "frame of length {} (expected {dim})",
                x.len()
            )));
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidArgument(format!("weights must be positive, got {w}")));
        }
        eqs.accumulate(x, y, w);
    }
    eqs.solve(DEFAULT_LOADING)
}
