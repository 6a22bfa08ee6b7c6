//! Dense vectors and matrices, diagonal Gaussians, a seeded RNG, Adam and a
//! finite-difference gradient checker.
//!
//! Matrices are row-major. Windows are flattened time-major, so channel `j`
//! at step `t` of a window with `d` channels lives at index `t * d + j`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Vec64 = Vec<f64>;

/// Lower clamp applied to every log-variance a network emits.
pub const LOG_VAR_MIN: f64 = -10.0;
/// Upper clamp applied to every log-variance a network emits.
pub const LOG_VAR_MAX: f64 = 10.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[inline]
pub fn clamp_log_var(v: f64) -> f64 {
    v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec64]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec64 {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec64> {
        if v.len() != self.cols {
            return Err(Error::shape(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        self.matvec_into(v, &mut out);
        Ok(out)
    }

    /// `out = self * v`; shapes are the caller's responsibility.
    #[inline]
    pub(crate) fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), v);
        }
    }

    /// `out += self^T * v`; shapes are the caller's responsibility.
    #[inline]
    pub(crate) fn tr_matvec_acc(&self, v: &[f64], out: &mut [f64]) {
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                axpy(vi, self.row(i), out);
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat64) -> Result<Mat64> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat64::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), dst);
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Numerically stable `ln(sum(exp(v)))`. Returns `-inf` when every entry is `-inf`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky factorization.
pub fn cholesky_solve(a: &Mat64, b: &Mat64) -> Result<Mat64> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::shape(format!(
            "cholesky solve of {}x{} system with {}x{} right-hand side",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    // Lower factor, row-major.
    let mut l = Mat64::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s = a.get(i, j) - dot(&l.row(i)[..j], &l.row(j)[..j]);
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i });
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    let m = b.cols();
    let mut x = b.clone();
    // Forward: L Y = B.
    for i in 0..n {
        for k in 0..i {
            let lik = l.get(i, k);
            if lik != 0.0 {
                let (head, tail) = x.data.split_at_mut(i * m);
                axpy(-lik, &head[k * m..(k + 1) * m], &mut tail[..m]);
            }
        }
        let d = l.get(i, i);
        x.row_mut(i).iter_mut().for_each(|v| *v /= d);
    }
    // Backward: L^T X = Y.
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l.get(k, i);
            if lki != 0.0 {
                let (head, tail) = x.data.split_at_mut(k * m);
                axpy(-lki, &tail[..m], &mut head[i * m..(i + 1) * m]);
            }
        }
        let d = l.get(i, i);
        x.row_mut(i).iter_mut().for_each(|v| *v /= d);
    }
    Ok(x)
}

/// Diagonal Gaussian parameterized by mean and (clamped) log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDiag {
    pub mean: Vec64,
    pub log_var: Vec64,
}

impl GaussianDiag {
    /// Builds the distribution, clamping each log-variance into
    /// `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    pub fn new(mean: Vec64, mut log_var: Vec64) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::shape(format!(
                "mean has {} entries, log_var has {}",
                mean.len(),
                log_var.len()
            )));
        }
        log_var.iter_mut().for_each(|v| *v = clamp_log_var(*v));
        Ok(Self { mean, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec64 {
        self.log_var.iter().map(|v| v.exp()).collect()
    }
}

/// Log-density of `x` under a diagonal Gaussian.
pub fn gaussian_diag_logpdf(x: &[f64], g: &GaussianDiag) -> Result<f64> {
    if x.len() != g.mean.len() || g.log_var.len() != g.mean.len() {
        return Err(Error::shape(format!(
            "point of length {} against gaussian of dimension {}",
            x.len(),
            g.mean.len()
        )));
    }
    Ok(logpdf_unchecked(x, &g.mean, &g.log_var))
}

#[inline]
pub(crate) fn logpdf_unchecked(x: &[f64], mean: &[f64], log_var: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_var)
        .map(|((&xi, &mi), &lv)| {
            let d = xi - mi;
            -HALF_LN_2PI - 0.5 * lv - 0.5 * d * d * (-lv).exp()
        })
        .sum()
}

/// Reparameterized draw `mean + exp(log_var / 2) * eps` with `eps ~ N(0, I)`.
pub fn sample_gaussian_diag(g: &GaussianDiag, rng: &mut Rng) -> Vec64 {
    g.mean
        .iter()
        .zip(&g.log_var)
        .map(|(&m, &lv)| m + (0.5 * lv).exp() * rng.normal())
        .collect()
}

/// Seeded, platform-independent random stream (ChaCha8).
#[derive(Debug, Clone)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent stream `stream` of generator `seed`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self(inner)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec64 {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    m: Vec64,
    v: Vec64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// In-place bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam state of length {} with {} params and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let k = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(k);
        let c2 = 1.0 - ADAM_BETA2.powi(k);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(params: &[f64], grad: &[f64], state: &AdamState) -> Result<(Vec64, AdamState)> {
    let mut p = params.to_vec();
    let mut st = state.clone();
    st.step(&mut p, grad)?;
    Ok((p, st))
}

/// Step used by [`finite_diff_grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Compares an analytic gradient against central differences and returns
/// `max_j |fd_j - g_j| / max(1, |fd_j|, |g_j|)`.
pub fn finite_diff_grad_check<F>(mut f: F, x: &[f64], analytic: &[f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if x.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} coordinates but {} gradient entries",
            x.len(),
            analytic.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for j in 0..x.len() {
        probe[j] = x[j] + FD_STEP;
        let up = f(&probe);
        probe[j] = x[j] - FD_STEP;
        let down = f(&probe);
        probe[j] = x[j];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {j} +/- {FD_STEP}")));
        }
        let fd = (up - down) / (2.0 * FD_STEP);
        let g = analytic[j];
        let err = (fd - g).abs() / 1f64.max(fd.abs()).max(g.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
