//! Affine adjusting maps `v -> W v + b` and their least-squares fit.
//!
//! Under jointly Gaussian inputs and targets the conditional expectation of
//! the target given the input is affine, so the minimum mean-squared-error
//! adjuster over *all* functions is of this form. The fitted `W` estimates
//! `cov(t, u) cov(u, u)^-1` and `b` estimates `mean(t) - W mean(u)`.

use crate::error::{Error, Result};
use crate::numerics::{cholesky_solve, squared_distance, Mat64, Vec64};

/// Ridge penalty on `W` used when none is given.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Square affine map `v -> W v + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineAdjuster {
    weight: Mat64,
    bias: Vec64,
}

impl AffineAdjuster {
    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Mat64::identity(dim),
            bias: vec![0.0; dim],
        }
    }

    pub fn new(weight: Mat64, bias: Vec64) -> Result<Self> {
        if weight.rows() != weight.cols() || weight.rows() != bias.len() {
            return Err(Error::shape(format!(
                "adjuster needs a square weight matching the bias, got {}x{} and {}",
                weight.rows(),
                weight.cols(),
                bias.len()
            )));
        }
        if !weight.is_finite() || bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("adjuster parameters".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn weight(&self) -> &Mat64 {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec64> {
        let mut out = self.weight.matvec(v)?;
        out.iter_mut().zip(&self.bias).for_each(|(o, b)| *o += b);
        Ok(out)
    }

    /// `self ∘ inner`, i.e. `v -> W_self (W_inner v + b_inner) + b_self`.
    pub fn compose(&self, inner: &AffineAdjuster) -> Result<AffineAdjuster> {
        let weight = self.weight.matmul(&inner.weight)?;
        let bias = self.apply(&inner.bias)?;
        AffineAdjuster::new(weight, bias)
    }
}

/// Paired inputs and targets of equal dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairSet {
    inputs: Vec<Vec64>,
    targets: Vec<Vec64>,
}

impl PairSet {
    pub fn new(inputs: Vec<Vec64>, targets: Vec<Vec64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::shape(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let mut set = Self::default();
        for (u, t) in inputs.into_iter().zip(targets) {
            set.push(u, t)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, input: Vec64, target: Vec64) -> Result<()> {
        let k = self.inputs.first().map_or(input.len(), Vec::len);
        if input.len() != k || target.len() != k {
            return Err(Error::shape(format!(
                "pair of lengths ({}, {}) in a set of dimension {k}",
                input.len(),
                target.len()
            )));
        }
        if input.iter().chain(&target).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("pair {}", self.inputs.len())));
        }
        self.inputs.push(input);
        self.targets.push(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn inputs(&self) -> &[Vec64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Vec64] {
        &self.targets
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec64, &Vec64)> {
        self.inputs.iter().zip(&self.targets)
    }
}

fn mean_of(rows: &[Vec64], k: usize) -> Vec64 {
    let mut m = vec![0.0; k];
    for r in rows {
        m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Minimizes `sum_p |W u_p + b - t_p|^2 + ridge * |W|_F^2` exactly, via the
/// normal equations on centered data (the bias is not penalized).
pub fn fit_affine_closed_form(pairs: &PairSet, ridge: f64) -> Result<AffineAdjuster> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid(format!("ridge must be non-negative, got {ridge}")));
    }
    let k = pairs.dim();
    let u_mean = mean_of(pairs.inputs(), k);
    let t_mean = mean_of(pairs.targets(), k);

    // gram = Uc^T Uc + ridge I, cross = Uc^T Tc
    let mut gram = Mat64::zeros(k, k);
    let mut cross = Mat64::zeros(k, k);
    let mut uc = vec![0.0; k];
    let mut tc = vec![0.0; k];
    for (u, t) in pairs.iter() {
        for j in 0..k {
            uc[j] = u[j] - u_mean[j];
            tc[j] = t[j] - t_mean[j];
        }
        for i in 0..k {
            let ui = uc[i];
            if ui == 0.0 {
                continue;
            }
            let g = &mut gram.row_mut(i)[..=i];
            for (gj, &uj) in g.iter_mut().zip(&uc[..=i]) {
                *gj += ui * uj;
            }
            crate::numerics::axpy(ui, &tc, cross.row_mut(i));
        }
    }
    for i in 0..k {
        for j in 0..i {
            let v = gram.get(i, j);
            gram.set(j, i, v);
        }
        let d = gram.get(i, i);
        gram.set(i, i, d + ridge);
    }
    let weight = cholesky_solve(&gram, &cross)?.transpose();
    let projected = weight.matvec(&u_mean)?;
    let bias = t_mean.iter().zip(&projected).map(|(t, p)| t - p).collect();
    AffineAdjuster::new(weight, bias)
}

/// Mean squared error per pair and coordinate:
/// `sum_p |W u_p + b - t_p|^2 / (P k)`.
pub fn adjust_mse(adjuster: &AffineAdjuster, pairs: &PairSet) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    Ok(sum_squared_error(adjuster, pairs)? / (pairs.len() * pairs.dim()) as f64)
}

/// `sum_p |W u_p + b - t_p|^2`.
pub fn sum_squared_error(adjuster: &AffineAdjuster, pairs: &PairSet) -> Result<f64> {
    if !pairs.is_empty() && pairs.dim() != adjuster.dim() {
        return Err(Error::shape(format!(
            "adjuster of dimension {} on pairs of dimension {}",
            adjuster.dim(),
            pairs.dim()
        )));
    }
    let mut total = 0.0;
    for (u, t) in pairs.iter() {
        total += squared_distance(&adjuster.apply(u)?, t);
    }
    Ok(total)
}
