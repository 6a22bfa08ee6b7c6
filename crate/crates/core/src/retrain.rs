//! One retraining round around a frozen VAE.
//!
//! A [`LaraState`] is a frozen base model plus two affine adjusters: `m_z` on
//! the encoder's latent mean and `m_x` on the decoder's reconstruction mean.
//! The latest model of generation `i` is therefore
//! `encode_i = m_z ∘ encode` and `decode_i = m_x ∘ decode`.
//!
//! A round restores historical windows from the latest model, estimates a
//! target latent per new window, and fits fresh adjusters `A_z`, `A_x` on top
//! of the current ones. The stored adjusters become `A_z ∘ m_z` and
//! `A_x ∘ m_x`; the base weights are never touched.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::adjusters::{fit_affine_closed_form, sum_squared_error, AffineAdjuster, PairSet, DEFAULT_RIDGE};
use crate::error::{Error, Result};
use crate::numerics::{squared_distance, GaussianDiag, Mat64, Rng, Vec64};
use crate::ruminate::{restore_historical, ruminate_estimate, RuminateConfig};
use crate::vae::{GaussianVae, VaeModel};

/// What `m_x` sees during fitting and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MxInput {
    /// `m_x` is fitted on `decode(m_z(z))` after `m_z` is frozen, matching the
    /// scoring path.
    #[default]
    Adjusted,
    /// `m_x` is fitted on `decode(z)`; `m_z` is fitted but not used for scoring.
    Raw,
}

impl FromStr for MxInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjusted" => Ok(MxInput::Adjusted),
            "raw" => Ok(MxInput::Raw),
            other => Err(Error::invalid(format!(
                "mx_input must be 'adjusted' or 'raw', got '{other}'"
            ))),
        }
    }
}

impl fmt::Display for MxInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MxInput::Adjusted => "adjusted",
            MxInput::Raw => "raw",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    #[default]
    ClosedForm,
    GradientDescent,
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed_form" => Ok(Solver::ClosedForm),
            "gd" => Ok(Solver::GradientDescent),
            other => Err(Error::invalid(format!(
                "solver must be 'closed_form' or 'gd', got '{other}'"
            ))),
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::ClosedForm => "closed_form",
            Solver::GradientDescent => "gd",
        })
    }
}

/// Settings stored with a state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LaraConfig {
    pub ruminate: RuminateConfig,
    pub mx_input: MxInput,
}

/// Full-batch gradient descent settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GdConfig {
    /// Fixed step size; `None` uses `1 / L` per adjuster, `L` being the
    /// Lipschitz constant of the loss gradient.
    pub lr: Option<f64>,
    pub max_iters: usize,
    /// Stop once the relative loss change falls below this.
    pub tol: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            lr: None,
            max_iters: 5000,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainConfig {
    pub solver: Solver,
    pub ridge: f64,
    pub gd: GdConfig,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            solver: Solver::ClosedForm,
            ridge: DEFAULT_RIDGE,
            gd: GdConfig::default(),
        }
    }
}

/// Frozen base model, current adjusters and generation counter.
#[derive(Debug, Clone, PartialEq)]
pub struct LaraState {
    base: VaeModel,
    m_z: AffineAdjuster,
    m_x: AffineAdjuster,
    generation: u64,
    config: LaraConfig,
}

impl LaraState {
    /// Generation 0: identity adjusters, so the state scores exactly like `base`.
    pub fn new(base: VaeModel, config: LaraConfig) -> Self {
        let m_z = AffineAdjuster::identity(base.latent());
        let m_x = AffineAdjuster::identity(base.window() * base.channels());
        Self {
            base,
            m_z,
            m_x,
            generation: 0,
            config,
        }
    }

    pub fn from_parts(
        base: VaeModel,
        m_z: AffineAdjuster,
        m_x: AffineAdjuster,
        generation: u64,
        config: LaraConfig,
    ) -> Result<Self> {
        if m_z.dim() != base.latent() || m_x.dim() != base.window() * base.channels() {
            return Err(Error::shape(format!(
                "adjusters of dimension ({}, {}) for a model with latent {} and window size {}",
                m_z.dim(),
                m_x.dim(),
                base.latent(),
                base.window() * base.channels()
            )));
        }
        config.ruminate.validate()?;
        Ok(Self {
            base,
            m_z,
            m_x,
            generation,
            config,
        })
    }

    pub fn base(&self) -> &VaeModel {
        &self.base
    }

    pub fn m_z(&self) -> &AffineAdjuster {
        &self.m_z
    }

    pub fn m_x(&self) -> &AffineAdjuster {
        &self.m_x
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn config(&self) -> &LaraConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: LaraConfig) {
        self.config = config;
    }

    /// Reconstruction mean along the scoring path.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec64> {
        let z = self.base.encode(x)?.mean;
        let z = match self.config.mx_input {
            MxInput::Adjusted => self.m_z.apply(&z)?,
            MxInput::Raw => z,
        };
        self.m_x.apply(&self.base.decode(&z)?.mean)
    }
}

/// The latest model is the base wrapped in the current adjusters.
impl GaussianVae for LaraState {
    fn input_dim(&self) -> usize {
        self.base.window() * self.base.channels()
    }

    fn latent_dim(&self) -> usize {
        self.base.latent()
    }

    fn encode(&self, x: &[f64]) -> Result<GaussianDiag> {
        let q = self.base.encode(x)?;
        Ok(GaussianDiag {
            mean: self.m_z.apply(&q.mean)?,
            log_var: q.log_var,
        })
    }

    fn decode(&self, z: &[f64]) -> Result<GaussianDiag> {
        let p = self.base.decode(z)?;
        Ok(GaussianDiag {
            mean: self.m_x.apply(&p.mean)?,
            log_var: p.log_var,
        })
    }
}

/// Anomaly score of one window: mean squared reconstruction error along the
/// scoring path.
pub fn score_window(state: &LaraState, x: &[f64]) -> Result<f64> {
    let x_hat = state.reconstruct(x)?;
    Ok(squared_distance(&x_hat, x) / x.len() as f64)
}

pub fn score_windows(state: &LaraState, windows: &[Vec64]) -> Result<Vec64> {
    windows.iter().map(|w| score_window(state, w)).collect()
}

/// Latent and reconstruction pairs for one retraining round.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrainSet {
    /// `(m_z(encode(x)), ruminate target)` per window.
    pub z_pairs: PairSet,
    /// `(reconstruction, x)` per window.
    pub x_pairs: PairSet,
    /// Base-model latent mean per window.
    base_latents: Vec<Vec64>,
    windows: Vec<Vec64>,
}

pub fn build_retrain_set(state: &LaraState, windows: &[Vec64], rng: &mut Rng) -> Result<RetrainSet> {
    if windows.is_empty() {
        return Err(Error::invalid("retraining needs at least one window"));
    }
    let cfg = &state.config.ruminate;
    cfg.validate()?;
    let stream_seed = rng.next_u64() ^ cfg.seed;
    let mut z_pairs = PairSet::default();
    let mut base_latents = Vec::with_capacity(windows.len());
    for (index, x) in windows.iter().enumerate() {
        let wrap = |e: Error| Error::Window {
            index,
            source: Box::new(e),
        };
        let mut wrng = Rng::derive(stream_seed, index as u64);
        let zb = state.base.encode(x).map_err(wrap)?.mean;
        let z_in = state.m_z.apply(&zb).map_err(wrap)?;
        let restored = restore_historical(state, x, cfg.n_restored, &mut wrng).map_err(wrap)?;
        let target = ruminate_estimate(state, x, &restored, cfg, &mut wrng).map_err(wrap)?;
        z_pairs.push(z_in, target.mean).map_err(wrap)?;
        base_latents.push(zb);
    }
    let x_pairs = reconstruction_pairs(
        state,
        &base_latents,
        windows,
        &AffineAdjuster::identity(state.base.latent()),
    )?;
    Ok(RetrainSet {
        z_pairs,
        x_pairs,
        base_latents,
        windows: windows.to_vec(),
    })
}

/// `(m_x(decode(latent)), x)` pairs, where `latent` is `a_z(m_z(zb))` in
/// adjusted mode and `zb` in raw mode.
fn reconstruction_pairs(
    state: &LaraState,
    base_latents: &[Vec64],
    windows: &[Vec64],
    a_z: &AffineAdjuster,
) -> Result<PairSet> {
    let mut pairs = PairSet::default();
    for (index, (zb, x)) in base_latents.iter().zip(windows).enumerate() {
        let wrap = |e: Error| Error::Window {
            index,
            source: Box::new(e),
        };
        let z = match state.config.mx_input {
            MxInput::Adjusted => a_z.apply(&state.m_z.apply(zb).map_err(wrap)?).map_err(wrap)?,
            MxInput::Raw => zb.clone(),
        };
        let x_tilde = state
            .m_x
            .apply(&state.base.decode(&z).map_err(wrap)?.mean)
            .map_err(wrap)?;
        pairs.push(x_tilde, x.clone()).map_err(wrap)?;
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainReport {
    /// Objective after each gradient step (empty for the closed-form solver).
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub seconds: f64,
    pub converged: bool,
    /// Mean squared reconstruction-adjustment error per pair.
    pub loss_x: f64,
    /// Mean squared latent-adjustment error per pair.
    pub loss_z: f64,
}

/// Objective minimized for one adjuster:
/// `(sum_p |W u_p + b - t_p|^2 + ridge |W|_F^2) / P`.
pub fn adjuster_objective(a: &AffineAdjuster, pairs: &PairSet, ridge: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    Ok((sum_squared_error(a, pairs)? + ridge * a.weight().frobenius_sq()) / pairs.len() as f64)
}

struct BlockFit {
    adjuster: AffineAdjuster,
    trajectory: Vec<f64>,
    converged: bool,
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn largest_eigenvalue(m: &Mat64) -> f64 {
    let n = m.rows();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = m.matvec(&v).expect("square matrix");
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w.into_iter().map(|x| x / norm).collect();
        if (next - lambda).abs() <= 1e-10 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Lipschitz constant of the gradient of [`adjuster_objective`].
fn gradient_lipschitz(pairs: &PairSet, ridge: f64) -> f64 {
    let k = pairs.dim();
    let mut gram = Mat64::zeros(k + 1, k + 1);
    let mut aug = vec![1.0; k + 1];
    for u in pairs.inputs() {
        aug[..k].copy_from_slice(u);
        for i in 0..=k {
            crate::numerics::axpy(aug[i], &aug, gram.row_mut(i));
        }
    }
    let p = pairs.len() as f64;
    2.0 * (largest_eigenvalue(&gram) + ridge) / p
}

fn gd_block(pairs: &PairSet, ridge: f64, cfg: &GdConfig) -> Result<BlockFit> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let k = pairs.dim();
    let p = pairs.len() as f64;
    let step = match cfg.lr {
        Some(lr) if lr > 0.0 && lr.is_finite() => lr,
        Some(lr) => return Err(Error::invalid(format!("gd step size must be positive, got {lr}"))),
        None => 1.0 / gradient_lipschitz(pairs, ridge),
    };
    let mut w = Mat64::identity(k);
    let mut b = vec![0.0; k];
    let mut trajectory = Vec::with_capacity(cfg.max_iters);
    let mut resid = vec![0.0; k];
    let mut prev = f64::NAN;
    let mut rising = 0usize;
    let mut converged = false;

    for _ in 0..cfg.max_iters {
        let mut gw = Mat64::zeros(k, k);
        let mut gb = vec![0.0; k];
        for (u, t) in pairs.iter() {
            w.matvec_into(u, &mut resid);
            for j in 0..k {
                resid[j] += b[j] - t[j];
            }
            for (i, &r) in resid.iter().enumerate() {
                crate::numerics::axpy(r, u, gw.row_mut(i));
                gb[i] += r;
            }
        }
        let scale = 2.0 / p;
        for (g, &wv) in gw.as_mut_slice().iter_mut().zip(w.as_slice()) {
            *g = scale * (*g + ridge * wv);
        }
        gb.iter_mut().for_each(|g| *g *= scale);
        for (wv, g) in w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
            *wv -= step * g;
        }
        for (bv, g) in b.iter_mut().zip(&gb) {
            *bv -= step * g;
        }

        let a = AffineAdjuster::new(w.clone(), b.clone()).map_err(|_| Error::Divergence(rising))?;
        let loss = adjuster_objective(&a, pairs, ridge)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(rising));
        }
        trajectory.push(loss);
        if prev.is_finite() {
            if loss > prev {
                rising += 1;
                if rising >= 10 {
                    return Err(Error::Divergence(rising));
                }
            } else {
                rising = 0;
            }
            if (prev - loss).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
        prev = loss;
    }
    Ok(BlockFit {
        adjuster: AffineAdjuster::new(w, b)?,
        trajectory,
        converged,
    })
}

fn combine_trajectories(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let at = |v: &[f64], i: usize| v.get(i).or(v.last()).copied().unwrap_or(0.0);
    (0..n).map(|i| at(a, i) + at(b, i)).collect()
}

/// Fits both adjusters by full-batch gradient descent from `(I, 0)`.
///
/// The two losses share no parameters, so each block runs its own descent;
/// the reported trajectory is their per-iteration sum.
pub fn fit_adjusters_gd(
    z_pairs: &PairSet,
    x_pairs: &PairSet,
    ridge: f64,
    cfg: &GdConfig,
) -> Result<(AffineAdjuster, AffineAdjuster, RetrainReport)> {
    let start = Instant::now();
    let z = gd_block(z_pairs, ridge, cfg)?;
    let x = gd_block(x_pairs, ridge, cfg)?;
    let trajectory = combine_trajectories(&z.trajectory, &x.trajectory);
    let report = RetrainReport {
        iterations: trajectory.len(),
        trajectory,
        seconds: start.elapsed().as_secs_f64(),
        converged: z.converged && x.converged,
        loss_x: sum_squared_error(&x.adjuster, x_pairs)? / x_pairs.len() as f64,
        loss_z: sum_squared_error(&z.adjuster, z_pairs)? / z_pairs.len() as f64,
    };
    Ok((z.adjuster, x.adjuster, report))
}

/// One full retraining round. Returns the next-generation state.
pub fn lara_retrain(
    state: &LaraState,
    windows: &[Vec64],
    cfg: &RetrainConfig,
    rng: &mut Rng,
) -> Result<(LaraState, RetrainReport)> {
    let start = Instant::now();
    let set = build_retrain_set(state, windows, rng)?;
    let (a_z, a_x, mut report) = match cfg.solver {
        Solver::ClosedForm => {
            let a_z = fit_affine_closed_form(&set.z_pairs, cfg.ridge)?;
            let x_pairs = refresh_x_pairs(state, &set, &a_z)?;
            let a_x = fit_affine_closed_form(&x_pairs, cfg.ridge)?;
            let report = RetrainReport {
                trajectory: Vec::new(),
                iterations: 0,
                seconds: 0.0,
                converged: true,
                loss_x: sum_squared_error(&a_x, &x_pairs)? / x_pairs.len() as f64,
                loss_z: sum_squared_error(&a_z, &set.z_pairs)? / set.z_pairs.len() as f64,
            };
            (a_z, a_x, report)
        }
        Solver::GradientDescent => {
            let z = gd_block(&set.z_pairs, cfg.ridge, &cfg.gd)?;
            let x_pairs = refresh_x_pairs(state, &set, &z.adjuster)?;
            let x = gd_block(&x_pairs, cfg.ridge, &cfg.gd)?;
            let trajectory = combine_trajectories(&z.trajectory, &x.trajectory);
            let report = RetrainReport {
                iterations: trajectory.len(),
                trajectory,
                seconds: 0.0,
                converged: z.converged && x.converged,
                loss_x: sum_squared_error(&x.adjuster, &x_pairs)? / x_pairs.len() as f64,
                loss_z: sum_squared_error(&z.adjuster, &set.z_pairs)? / set.z_pairs.len() as f64,
            };
            (z.adjuster, x.adjuster, report)
        }
    };
    let next = LaraState {
        base: state.base.clone(),
        m_z: a_z.compose(&state.m_z)?,
        m_x: a_x.compose(&state.m_x)?,
        generation: state.generation + 1,
        config: state.config.clone(),
    };
    report.seconds = start.elapsed().as_secs_f64();
    Ok((next, report))
}

fn refresh_x_pairs(state: &LaraState, set: &RetrainSet, a_z: &AffineAdjuster) -> Result<PairSet> {
    match state.config.mx_input {
        MxInput::Adjusted => reconstruction_pairs(state, &set.base_latents, &set.windows, a_z),
        MxInput::Raw => Ok(set.x_pairs.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjusters::adjust_mse;
    use approx::assert_abs_diff_eq;

    fn small_state(seed: u64) -> LaraState {
        LaraState::new(VaeModel::new(4, 2, 3, 8, seed).unwrap(), LaraConfig::default())
    }

    fn windows(n: usize, len: usize, seed: u64) -> Vec<Vec64> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| rng.normal_vec(len)).collect()
    }

    #[test]
    fn retrain_set_has_one_pair_per_window() {
        let state = small_state(1);
        let ws = windows(7, 8, 2);
        let set = build_retrain_set(&state, &ws, &mut Rng::new(3)).unwrap();
        assert_eq!(set.z_pairs.len(), 7);
        assert_eq!(set.x_pairs.len(), 7);
        assert_eq!(set.z_pairs.dim(), 3);
        assert_eq!(set.x_pairs.dim(), 8);
    }

    #[test]
    fn retrain_set_is_seeded() {
        let state = small_state(1);
        let ws = windows(5, 8, 2);
        let a = build_retrain_set(&state, &ws, &mut Rng::new(3)).unwrap();
        let b = build_retrain_set(&state, &ws, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_ruminate_settings() {
        let cfg = LaraConfig::default();
        assert_eq!(cfg.ruminate.n_restored, 3);
        assert_eq!(cfg.ruminate.n_samples, 10);
        assert_eq!(cfg.mx_input, MxInput::Adjusted);
    }

    #[test]
    fn empty_retrain_set_is_rejected() {
        assert!(build_retrain_set(&small_state(0), &[], &mut Rng::new(0)).is_err());
    }

    #[test]
    fn window_errors_name_the_window() {
        let state = small_state(1);
        let mut ws = windows(3, 8, 2);
        ws[2] = vec![0.0; 5];
        match build_retrain_set(&state, &ws, &mut Rng::new(0)) {
            Err(Error::Window { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gd_on_identity_pairs_stays_at_identity() {
        let u = windows(30, 3, 4);
        let pairs = PairSet::new(u.clone(), u).unwrap();
        let (mz, _, report) = fit_adjusters_gd(&pairs, &pairs, 0.0, &GdConfig::default()).unwrap();
        assert!(report.loss_z < 1e-10);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(mz.weight().get(i, j), want, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn gd_reaches_closed_form_loss() {
        let mut rng = Rng::new(12);
        let u: Vec<Vec64> = (0..80).map(|_| rng.normal_vec(4)).collect();
        let t: Vec<Vec64> = u
            .iter()
            .map(|v| {
                v.iter()
                    .enumerate()
                    .map(|(j, x)| 0.5 * x + j as f64 + 0.3 * rng.normal())
                    .collect()
            })
            .collect();
        let pairs = PairSet::new(u, t).unwrap();
        let cf = fit_affine_closed_form(&pairs, DEFAULT_RIDGE).unwrap();
        let (gd, _, _) = fit_adjusters_gd(&pairs, &pairs, DEFAULT_RIDGE, &GdConfig::default()).unwrap();
        let l_cf = adjuster_objective(&cf, &pairs, DEFAULT_RIDGE).unwrap();
        let l_gd = adjuster_objective(&gd, &pairs, DEFAULT_RIDGE).unwrap();
        assert!((l_gd - l_cf).abs() / l_cf < 1e-6, "{l_gd} vs {l_cf}");
    }

    #[test]
    fn oversized_step_is_reported_as_divergence() {
        let u = windows(20, 2, 5);
        let t = windows(20, 2, 6);
        let pairs = PairSet::new(u, t).unwrap();
        let cfg = GdConfig {
            lr: Some(50.0),
            max_iters: 100,
            tol: 0.0,
        };
        assert!(matches!(
            fit_adjusters_gd(&pairs, &pairs, 0.0, &cfg),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn identity_state_scores_like_base_model() {
        let state = small_state(4);
        let x = windows(1, 8, 9).remove(0);
        let recon = state.base().reconstruct(&x).unwrap().mean;
        let mse = squared_distance(&recon, &x) / 8.0;
        assert_abs_diff_eq!(score_window(&state, &x).unwrap(), mse, epsilon = 1e-15);
    }

    #[test]
    fn retrain_leaves_base_untouched_and_bumps_generation() {
        let state = small_state(6);
        let ws = windows(12, 8, 1);
        let (next, report) = lara_retrain(&state, &ws, &RetrainConfig::default(), &mut Rng::new(2)).unwrap();
        assert_eq!(next.base(), state.base());
        assert_eq!(next.generation(), 1);
        assert!(report.converged);
        assert!(ws.iter().all(|w| score_window(&next, w).unwrap() >= 0.0));
    }

    #[test]
    fn retrain_is_deterministic() {
        let state = small_state(6);
        let ws = windows(12, 8, 1);
        let cfg = RetrainConfig::default();
        let (a, _) = lara_retrain(&state, &ws, &cfg, &mut Rng::new(2)).unwrap();
        let (b, _) = lara_retrain(&state, &ws, &cfg, &mut Rng::new(2)).unwrap();
        assert_eq!(a.m_z(), b.m_z());
        assert_eq!(a.m_x(), b.m_x());
    }

    #[test]
    fn raw_mode_fits_reconstruction_of_raw_latent() {
        let mut state = small_state(3);
        state.set_config(LaraConfig {
            mx_input: MxInput::Raw,
            ..LaraConfig::default()
        });
        let ws = windows(40, 8, 8);
        let set = build_retrain_set(&state, &ws, &mut Rng::new(1)).unwrap();
        let (next, report) = lara_retrain(&state, &ws, &RetrainConfig::default(), &mut Rng::new(1)).unwrap();
        let fitted = fit_affine_closed_form(&set.x_pairs, DEFAULT_RIDGE).unwrap();
        assert_abs_diff_eq!(
            report.loss_x,
            adjust_mse(&fitted, &set.x_pairs).unwrap() * 8.0,
            epsilon = 1e-9
        );
        assert_eq!(next.m_x(), &fitted.compose(state.m_x()).unwrap());
    }

    #[test]
    fn mode_and_solver_parse() {
        assert_eq!("raw".parse::<MxInput>().unwrap(), MxInput::Raw);
        assert_eq!("gd".parse::<Solver>().unwrap(), Solver::GradientDescent);
        assert!("other".parse::<Solver>().is_err());
        assert_eq!(Solver::ClosedForm.to_string(), "closed_form");
    }
}
