//! End-to-end comparison on a synthetic shift stream: the stale model, one
//! retraining round, and full fine-tuning of every VAE parameter on the same
//! few windows. Also produces the gradient-descent convergence series.
//!
//! Everything here is built from the public API of the other modules.

use std::time::Instant;

use crate::adjusters::fit_affine_closed_form;
use crate::dataio::{
    expand_window_scores, make_windows, synth_shift_stream, Regime, SeriesFrame, ShiftSpec, WindowSpec, ZScore,
};
use crate::detect::{best_f1, EvalReport};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Vec64};
use crate::retrain::{
    adjuster_objective, build_retrain_set, fit_adjusters_gd, lara_retrain, score_windows, GdConfig, LaraConfig,
    LaraState, RetrainConfig, RetrainReport, Solver,
};
use crate::vae::{train_vae, TrainConfig, VaeModel};

/// A synthetic shift experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ShiftSpec,
    pub window: WindowSpec,
    pub train: TrainConfig,
    /// Windows from the start of the new regime used for retraining.
    pub retrain_windows: usize,
    /// Stride between retraining windows.
    pub retrain_stride: usize,
    /// Epochs of full fine-tuning on the retraining windows.
    pub finetune_epochs: usize,
    pub lara: LaraConfig,
    pub retrain: RetrainConfig,
    pub point_adjust: bool,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            spec: ShiftSpec {
                len: 20_000,
                channels: 4,
                changepoint: 3000,
                post: Regime {
                    amplitude: 1.0,
                    frequency: 0.02,
                    level: 3.0,
                    noise: 0.1,
                },
                anomaly_magnitude: 5.0,
                ..ShiftSpec::default()
            },
            window: WindowSpec { w: 8, stride: 1 },
            train: TrainConfig {
                epochs: 60,
                latent: 2,
                ..TrainConfig::default()
            },
            retrain_windows: 50,
            retrain_stride: 8,
            finetune_epochs: 1000,
            lara: LaraConfig::default(),
            retrain: RetrainConfig {
                solver: Solver::GradientDescent,
                ..RetrainConfig::default()
            },
            point_adjust: false,
            seed: 0,
        }
    }
}

impl Scenario {
    /// The default scenario with every seed derived from `seed`.
    pub fn seeded(seed: u64) -> Self {
        let mut s = Self::default();
        s.reseed(seed);
        s
    }

    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.spec.seed = seed;
        self.train.seed = seed.wrapping_add(1);
        self.lara.ruminate.seed = seed.wrapping_add(2);
    }
}

/// Normalized pieces of a single-shift stream.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub norm: ZScore,
    /// Rows before the changepoint.
    pub old: SeriesFrame,
    /// The retraining prefix of the new regime.
    pub retrain: SeriesFrame,
    /// New-regime rows after the retraining prefix.
    pub holdout: SeriesFrame,
}

pub fn prepare(
    frame: &SeriesFrame,
    changepoint: usize,
    retrain: WindowSpec,
    retrain_windows: usize,
) -> Result<Prepared> {
    let prefix_rows = retrain_rows(retrain, retrain_windows);
    let holdout_start = changepoint + prefix_rows;
    if holdout_start + retrain.w > frame.len() {
        return Err(Error::invalid(format!(
            "stream of {} rows leaves no held-out data after {} retraining rows from row {}",
            frame.len(),
            prefix_rows,
            changepoint
        )));
    }
    let norm = ZScore::fit(&frame.slice(0..changepoint)?)?;
    let frame = norm.apply(frame)?;
    Ok(Prepared {
        norm,
        old: frame.slice(0..changepoint)?,
        retrain: frame.slice(changepoint..holdout_start)?,
        holdout: frame.slice(holdout_start..frame.len())?,
    })
}

/// Rows spanned by `count` windows.
pub fn retrain_rows(spec: WindowSpec, count: usize) -> usize {
    spec.w + (count.max(1) - 1) * spec.stride
}

impl Scenario {
    pub fn retrain_spec(&self) -> WindowSpec {
        WindowSpec {
            w: self.window.w,
            stride: self.retrain_stride,
        }
    }
}

/// Per-row scores of `frame` under `state`.
pub fn score_frame(state: &LaraState, frame: &SeriesFrame, window: WindowSpec) -> Result<Vec64> {
    let w = make_windows(frame, window)?;
    let scores = score_windows(state, &w.windows)?;
    expand_window_scores(&scores, &w.ends, frame.len())
}

/// Best F1 of `state` on a labelled frame.
pub fn evaluate_frame(
    state: &LaraState,
    frame: &SeriesFrame,
    window: WindowSpec,
    point_adjust: bool,
) -> Result<EvalReport> {
    let labels = frame
        .labels()
        .ok_or_else(|| Error::invalid("evaluation frame has no labels"))?;
    best_f1(&score_frame(state, frame, window)?, labels, point_adjust)
}

/// Trains the base model on the pre-shift rows.
pub fn train_base(old: &SeriesFrame, window: WindowSpec, cfg: &TrainConfig) -> Result<(VaeModel, Vec<f64>)> {
    let windows = make_windows(old, window)?.windows;
    let init = VaeModel::for_config(window.w, old.channels(), cfg)?;
    train_vae(&init, &windows, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub report: EvalReport,
    /// Mean window score on the retraining windows.
    pub train_mse: f64,
    pub seconds: f64,
}

/// Loss of gradient descent after `k` iterations against the closed-form
/// optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub k: usize,
    pub loss: f64,
    pub suboptimality: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    pub retrain_report: RetrainReport,
    pub base: VaeModel,
    pub lara: LaraState,
}

impl BenchOutcome {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

pub const STALE: &str = "stale";
pub const LARA: &str = "lara";
pub const FINETUNE: &str = "finetune";

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs the stale, retrained and fine-tuned detectors on one scenario.
pub fn run_bench(sc: &Scenario) -> Result<BenchOutcome> {
    let frame = synth_shift_stream(&sc.spec)?;
    let data = prepare(&frame, sc.spec.changepoint, sc.retrain_spec(), sc.retrain_windows)?;
    let (base, _) = train_base(&data.old, sc.window, &sc.train)?;
    let retrain_windows = make_windows(&data.retrain, sc.retrain_spec())?.windows;

    let mut rows = Vec::new();
    let mut push_row = |method: &str, state: &LaraState, seconds: f64| -> Result<()> {
        rows.push(BenchRow {
            method: method.into(),
            report: evaluate_frame(state, &data.holdout, sc.window, sc.point_adjust)?,
            train_mse: mean(&score_windows(state, &retrain_windows)?),
            seconds,
        });
        Ok(())
    };

    let stale = LaraState::new(base.clone(), sc.lara.clone());
    push_row(STALE, &stale, 0.0)?;

    let start = Instant::now();
    let (lara, retrain_report) = lara_retrain(&stale, &retrain_windows, &sc.retrain, &mut Rng::new(sc.seed))?;
    push_row(LARA, &lara, start.elapsed().as_secs_f64())?;

    let start = Instant::now();
    let ft_cfg = TrainConfig {
        epochs: sc.finetune_epochs,
        seed: sc.train.seed.wrapping_add(100),
        ..sc.train.clone()
    };
    let (tuned, _) = train_vae(&base, &retrain_windows, &ft_cfg)?;
    let tuned = LaraState::new(tuned, sc.lara.clone());
    push_row(FINETUNE, &tuned, start.elapsed().as_secs_f64())?;

    Ok(BenchOutcome {
        rows,
        retrain_report,
        base,
        lara,
    })
}

/// Gradient descent on the retraining pairs of `state`, compared at every
/// iteration with the closed-form optimum of the same objective.
pub fn convergence_series(
    state: &LaraState,
    windows: &[Vec64],
    ridge: f64,
    iterations: usize,
    rng: &mut Rng,
) -> Result<Vec<ConvergencePoint>> {
    let set = build_retrain_set(state, windows, rng)?;
    let gd = GdConfig {
        lr: None,
        max_iters: iterations,
        tol: 0.0,
    };
    let (_, _, report) = fit_adjusters_gd(&set.z_pairs, &set.x_pairs, ridge, &gd)?;
    let best = adjuster_objective(&fit_affine_closed_form(&set.z_pairs, ridge)?, &set.z_pairs, ridge)?
        + adjuster_objective(&fit_affine_closed_form(&set.x_pairs, ridge)?, &set.x_pairs, ridge)?;
    Ok(report
        .trajectory
        .iter()
        .enumerate()
        .map(|(i, &loss)| ConvergencePoint {
            k: i + 1,
            loss,
            suboptimality: loss - best,
        })
        .collect())
}

/// The default scenario's stale state and retraining windows.
pub fn convergence_fixture(sc: &Scenario) -> Result<(LaraState, Vec<Vec64>)> {
    let frame = synth_shift_stream(&sc.spec)?;
    let data = prepare(&frame, sc.spec.changepoint, sc.retrain_spec(), sc.retrain_windows)?;
    let (base, _) = train_base(&data.old, sc.window, &sc.train)?;
    let windows = make_windows(&data.retrain, sc.retrain_spec())?.windows;
    Ok((LaraState::new(base, sc.lara.clone()), windows))
}

/// Regime after `stage` repetitions of the `pre` to `post` change:
/// amplitude and frequency scale geometrically, level moves linearly.
pub fn shifted_regime(pre: &Regime, post: &Regime, stage: usize) -> Regime {
    let s = stage as f64;
    Regime {
        amplitude: pre.amplitude * (post.amplitude / pre.amplitude).powf(s),
        frequency: pre.frequency * (post.frequency / pre.frequency).powf(s),
        level: pre.level + s * (post.level - pre.level),
        noise: pre.noise,
    }
}

/// Held-out reports after each of `stages` consecutive retrains, stage `s`
/// moving from regime `s - 1` to regime `s`.
///
/// Normalization statistics and the base model come from the first stage's
/// pre-shift rows; each later stage retrains the previous stage's state.
pub fn run_multi_shift(sc: &Scenario, stages: usize) -> Result<Vec<EvalReport>> {
    let stage_spec = |s: usize| ShiftSpec {
        pre: shifted_regime(&sc.spec.pre, &sc.spec.post, s - 1),
        post: shifted_regime(&sc.spec.pre, &sc.spec.post, s),
        seed: sc.spec.seed.wrapping_add(s as u64),
        ..sc.spec.clone()
    };
    let first = synth_shift_stream(&stage_spec(1))?;
    let norm = ZScore::fit(&first.slice(0..sc.spec.changepoint)?)?;
    let (base, _) = train_base(
        &norm.apply(&first.slice(0..sc.spec.changepoint)?)?,
        sc.window,
        &sc.train,
    )?;
    let mut state = LaraState::new(base, sc.lara.clone());
    let mut rng = Rng::new(sc.seed);
    let mut reports = Vec::with_capacity(stages);
    for s in 1..=stages {
        let frame = norm.apply(&synth_shift_stream(&stage_spec(s))?)?;
        let prefix_rows = retrain_rows(sc.retrain_spec(), sc.retrain_windows);
        let start = sc.spec.changepoint;
        let retrain = frame.slice(start..start + prefix_rows)?;
        let holdout = frame.slice(start + prefix_rows..frame.len())?;
        let windows = make_windows(&retrain, sc.retrain_spec())?.windows;
        state = lara_retrain(&state, &windows, &sc.retrain, &mut rng)?.0;
        reports.push(evaluate_frame(&state, &holdout, sc.window, sc.point_adjust)?);
    }
    Ok(reports)
}
