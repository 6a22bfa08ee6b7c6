#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};

use lara::adjusters::{fit_affine_closed_form, PairSet};
use lara::dataio::{
    load_state, make_windows, read_csv, save_state, synth_shift_stream, write_csv, zscore_normalize, StateFile,
    StoredModel, ZScore,
};
use lara::detect::{kde_kl, pot_fit_threshold};
use lara::numerics::{gaussian_diag_logpdf, GaussianDiag, Mat64, Rng, Vec64};
use lara::retrain::{lara_retrain, score_windows, LaraConfig, LaraState, RetrainConfig};
use lara::ruminate::{ruminate_estimate, RuminateConfig};
use lara::vae::{train_vae, GaussianVae, TrainConfig, VaeModel};
use lara::{SeriesFrame, ShiftSpec, WindowSpec};

fn frame_1d(values: Vec64) -> SeriesFrame {
    let n = values.len();
    SeriesFrame::new((0..n as i64).collect(), Mat64::from_vec(n, 1, values).unwrap(), None).unwrap()
}

#[test]
fn logpdf_matches_hand_computed_density() {
    let g = GaussianDiag::new(vec![0.0], vec![2f64.ln()]).unwrap();
    let expected = (1.0 / (2.0 * std::f64::consts::PI * 2.0).sqrt() * (-1.0f64 / 4.0).exp()).ln();
    assert!((gaussian_diag_logpdf(&[1.0], &g).unwrap() - expected).abs() < 1e-12);
}

fn naive_dense(w: &Mat64, b: &[f64], x: &[f64]) -> Vec64 {
    let mut y = vec![0.0; w.rows()];
    for i in 0..w.rows() {
        let mut acc = b[i];
        for j in 0..w.cols() {
            acc += w.get(i, j) * x[j];
        }
        y[i] = acc;
    }
    y
}

fn naive_head(model: &VaeModel, first: usize, x: &[f64]) -> (Vec64, Vec64) {
    let l = model.layers();
    let h: Vec64 = naive_dense(&l[first].weight, &l[first].bias, x)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let mean = naive_dense(&l[first + 1].weight, &l[first + 1].bias, &h);
    let lv = naive_dense(&l[first + 2].weight, &l[first + 2].bias, &h)
        .into_iter()
        .map(|v| v.clamp(-10.0, 10.0))
        .collect();
    (mean, lv)
}

#[test]
fn forward_pass_matches_naive_loops() {
    let model = VaeModel::new(6, 3, 4, 11, 21).unwrap();
    let mut rng = Rng::new(5);
    for _ in 0..50 {
        let x = rng.normal_vec(18);
        let q = model.encode(&x).unwrap();
        let (mean, lv) = naive_head(&model, 0, &x);
        for (a, b) in q.mean.iter().zip(&mean).chain(q.log_var.iter().zip(&lv)) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = model.decode(&q.mean).unwrap();
        let (mean, lv) = naive_head(&model, 3, &q.mean);
        for (a, b) in p.mean.iter().zip(&mean).chain(p.log_var.iter().zip(&lv)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn state_file_round_trip_is_bit_exact() {
    let model = VaeModel::new(5, 2, 3, 7, 99).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.state");
    let norm = ZScore {
        mean: vec![0.1, -3.0],
        std: vec![1.0 / 3.0, 7.25],
    };
    save_state(
        &StateFile {
            model: StoredModel::Vae(model.clone()),
            norm: Some(norm.clone()),
        },
        &path,
    )
    .unwrap();
    let back = load_state(&path).unwrap();
    assert_eq!(back.norm.as_ref(), Some(&norm));
    let loaded = back.base().clone();
    let mut rng = Rng::new(1);
    for _ in 0..100 {
        let x = rng.normal_vec(10);
        let a = model.reconstruct(&x).unwrap();
        let b = loaded.reconstruct(&x).unwrap();
        assert_eq!(
            a.mean.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.mean.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.log_likelihood.to_bits(), b.log_likelihood.to_bits());
    }
}

#[test]
fn closed_form_recovers_population_regression() {
    let k = 3;
    let mut rng = Rng::new(8);
    let a = DMatrix::from_fn(2 * k, 2 * k, |_, _| rng.normal());
    let cov = &a * a.transpose() + DMatrix::identity(2 * k, 2 * k);
    let chol = cov.clone().cholesky().unwrap().l();
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    for _ in 0..20_000 {
        let v = &chol * DVector::from_vec(rng.normal_vec(2 * k));
        inputs.push(v.rows(0, k).iter().copied().collect());
        targets.push(v.rows(k, k).iter().copied().collect());
    }
    let fit = fit_affine_closed_form(&PairSet::new(inputs, targets).unwrap(), 0.0).unwrap();
    let s11 = cov.view((0, 0), (k, k)).into_owned();
    let s21 = cov.view((k, 0), (k, k)).into_owned();
    let w_true = s21 * s11.try_inverse().unwrap();
    for i in 0..k {
        for j in 0..k {
            assert!((fit.weight().get(i, j) - w_true[(i, j)]).abs() < 0.05, "W[{i}][{j}]");
        }
        assert!(fit.bias()[i].abs() < 0.05);
    }
}

#[test]
fn ridge_fit_with_fewer_pairs_than_dimensions_matches_dense_solve() {
    let mut rng = Rng::new(13);
    for &(dim, n) in &[(6, 3), (9, 1), (4, 4)] {
        let inputs: Vec<Vec64> = (0..n).map(|_| rng.normal_vec(dim)).collect();
        let targets: Vec<Vec64> = (0..n).map(|_| rng.normal_vec(dim)).collect();
        let ridge = 0.01;
        let fit = fit_affine_closed_form(&PairSet::new(inputs.clone(), targets.clone()).unwrap(), ridge).unwrap();

        let x = DMatrix::from_fn(n, dim + 1, |i, j| if j < dim { inputs[i][j] } else { 1.0 });
        let t = DMatrix::from_fn(n, dim, |i, j| targets[i][j]);
        let mut gram = x.transpose() * &x;
        for j in 0..dim {
            gram[(j, j)] += ridge;
        }
        let theta = gram.lu().solve(&(x.transpose() * t)).unwrap();
        for i in 0..dim {
            for j in 0..dim {
                assert!((fit.weight().get(i, j) - theta[(j, i)]).abs() < 1e-8);
            }
            assert!((fit.bias()[i] - theta[(dim, i)]).abs() < 1e-8);
        }
    }
}

/// Latent equals the window; the decoder returns `N(z, 1)`.
struct Identity1d;

impl GaussianVae for Identity1d {
    fn input_dim(&self) -> usize {
        1
    }

    fn latent_dim(&self) -> usize {
        1
    }

    fn encode(&self, x: &[f64]) -> lara::Result<GaussianDiag> {
        GaussianDiag::new(x.to_vec(), vec![0.0])
    }

    fn decode(&self, z: &[f64]) -> lara::Result<GaussianDiag> {
        GaussianDiag::new(z.to_vec(), vec![0.0])
    }
}

#[test]
fn ruminate_mean_moves_with_the_new_window() {
    let cfg = RuminateConfig {
        n_restored: 2,
        n_samples: 64,
        seed: 0,
    };
    let restored = vec![vec![0.3], vec![-0.2]];
    let mut last = f64::NEG_INFINITY;
    for step in 0..41 {
        let x = -4.0 + 0.2 * step as f64;
        let est = ruminate_estimate(&Identity1d, &[x], &restored, &cfg, &mut Rng::new(3)).unwrap();
        assert!(est.mean[0] >= last - 1e-12, "x = {x}");
        assert!(est.var[0] >= 0.0);
        last = est.mean[0];
    }
}

#[test]
fn kde_kl_of_unit_gaussians_one_apart() {
    let mut rng = Rng::new(2);
    let a = frame_1d(rng.normal_vec(4000));
    let b = frame_1d(rng.normal_vec(4000).into_iter().map(|v| v + 1.0).collect());
    let kl = kde_kl(&a, &b, None, 4000, &mut rng).unwrap();
    assert!((kl - 0.5).abs() < 0.1, "kl = {kl}");
}

#[test]
fn pot_threshold_grows_as_risk_shrinks() {
    let mut rng = Rng::new(4);
    let scores: Vec64 = (0..20_000).map(|_| -rng.uniform().ln()).collect();
    let mut last = f64::NEG_INFINITY;
    for q in [1e-2, 3e-3, 1e-3, 3e-4, 1e-4] {
        let z = pot_fit_threshold(&scores, q, 0.98).unwrap().z_q;
        assert!(z > last, "q = {q}");
        last = z;
    }
}

#[test]
fn large_csv_round_trip_is_exact() {
    let mut rng = Rng::new(6);
    let n = 10_000;
    let values = Mat64::from_vec(n, 3, (0..3 * n).map(|_| rng.normal() * 1e3).collect()).unwrap();
    let labels = (0..n).map(|_| (rng.uniform() < 0.01) as u8).collect();
    let frame = SeriesFrame::new((0..n as i64).map(|t| 10 * t - 7).collect(), values, Some(labels)).unwrap();
    let mut buf = Vec::new();
    write_csv(&frame, &mut buf).unwrap();
    assert_eq!(read_csv(buf.as_slice()).unwrap(), frame);
}

fn channel_mean(frame: &SeriesFrame, c: usize) -> f64 {
    (0..frame.len()).map(|i| frame.values().get(i, c)).sum::<f64>() / frame.len() as f64
}

#[test]
fn zscore_with_old_statistics_keeps_the_shift() {
    let spec = ShiftSpec::default();
    let frame = synth_shift_stream(&spec).unwrap();
    let pre = frame.slice(0..spec.changepoint).unwrap();
    let post = frame.slice(spec.changepoint..spec.len).unwrap();
    let (pre_n, stats) = zscore_normalize(&pre, None).unwrap();
    let (post_n, _) = zscore_normalize(&post, Some(&stats)).unwrap();
    for c in 0..spec.channels {
        let raw = (channel_mean(&post, c) - channel_mean(&pre, c)) / stats.std[c];
        let normalized = channel_mean(&post_n, c) - channel_mean(&pre_n, c);
        assert!((raw - normalized).abs() < 1e-9);
        assert!(normalized.abs() > 0.5);
    }
}

#[test]
fn generated_segments_are_far_apart_in_kl() {
    let spec = ShiftSpec::default();
    let frame = synth_shift_stream(&spec).unwrap();
    let pre = frame.slice(0..spec.changepoint).unwrap();
    let post = frame.slice(spec.changepoint..spec.len).unwrap();
    assert!(kde_kl(&pre, &post, None, 1000, &mut Rng::new(0)).unwrap() > 0.1);
}

fn sinusoid(len: usize, noise: f64, seed: u64) -> SeriesFrame {
    let mut rng = Rng::new(seed);
    frame_1d(
        (0..len)
            .map(|t| (t as f64 * 0.2).sin() + noise * rng.normal())
            .collect(),
    )
}

fn trained_sinusoid_model() -> (VaeModel, Vec<f64>) {
    let windows = make_windows(&sinusoid(1500, 0.05, 1), WindowSpec { w: 8, stride: 1 })
        .unwrap()
        .windows;
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 32,
        lr: 3e-3,
        hidden: 16,
        latent: 3,
        ..TrainConfig::default()
    };
    let init = VaeModel::for_config(8, 1, &cfg).unwrap();
    train_vae(&init, &windows, &cfg).unwrap()
}

#[test]
fn training_halves_the_loss_on_a_sinusoid() {
    let (_, losses) = trained_sinusoid_model();
    assert_eq!(losses.len(), 30);
    assert!(losses[29] <= 0.5 * losses[0], "{losses:?}");
}

#[test]
fn retraining_on_the_old_distribution_changes_little_and_keeps_spikes_visible() {
    let (model, _) = trained_sinusoid_model();
    let state = LaraState::new(model, LaraConfig::default());
    let spec = WindowSpec { w: 8, stride: 1 };
    let fresh = make_windows(&sinusoid(1200, 0.05, 2), spec).unwrap().windows;
    let held = make_windows(&sinusoid(600, 0.05, 3), spec).unwrap().windows;

    let (next, _) = lara_retrain(&state, &fresh[..300], &RetrainConfig::default(), &mut Rng::new(4)).unwrap();
    let before: f64 = score_windows(&state, &held).unwrap().iter().sum();
    let after: f64 = score_windows(&next, &held).unwrap().iter().sum();
    assert!((after - before).abs() < 0.1 * before, "before {before}, after {after}");

    let mut normal = score_windows(&next, &held).unwrap();
    normal.sort_by(f64::total_cmp);
    let p99 = normal[(0.99 * (normal.len() - 1) as f64) as usize];
    let spiked: Vec<Vec64> = held
        .iter()
        .step_by(37)
        .map(|w| {
            let mut w = w.clone();
            w[4] += 5.0;
            w
        })
        .collect();
    for s in score_windows(&next, &spiked).unwrap() {
        assert!(s > p99, "spiked score {s} <= p99 {p99}");
    }
}
