//! Turning scores into decisions: peaks-over-threshold, best-F1 evaluation,
//! transfer distance and a kernel-density estimate of KL divergence.

use std::fmt;
use std::str::FromStr;

use crate::dataio::SeriesFrame;
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, Rng};

pub const DEFAULT_INIT_QUANTILE: f64 = 0.98;
pub const DEFAULT_RISK: f64 = 1e-3;
pub const MIN_EXCESSES: usize = 30;

/// Generalized-Pareto tail fitted above an initial threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PotThreshold {
    pub init_quantile: f64,
    /// Initial threshold: the empirical `init_quantile` of the scores.
    pub t: f64,
    pub xi: f64,
    pub sigma: f64,
    pub q: f64,
    /// Final anomaly threshold.
    pub z_q: f64,
    pub n_total: usize,
    pub n_excess: usize,
}

/// Linear-interpolation empirical quantile of unsorted data.
pub fn empirical_quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("quantile level {p} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Tail quantile above `t` for a GPD(`xi`, `sigma`) fitted to `n_excess` of
/// `n_total` observations.
pub fn pot_quantile(t: f64, xi: f64, sigma: f64, q: f64, n_total: usize, n_excess: usize) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("risk q must lie in (0, 1), got {q}")));
    }
    if sigma.is_nan() || sigma <= 0.0 || n_excess == 0 || n_total < n_excess {
        return Err(Error::invalid(format!(
            "invalid tail model: sigma = {sigma}, {n_excess} excesses of {n_total}"
        )));
    }
    let ratio = q * n_total as f64 / n_excess as f64;
    if ratio >= 1.0 {
        return Err(Error::invalid(format!(
            "risk q = {q} is not in the tail ({n_excess} excesses of {n_total} observations)"
        )));
    }
    if xi.abs() < 1e-6 {
        Ok(t - sigma * ratio.ln())
    } else {
        Ok(t + sigma / xi * (ratio.powf(-xi) - 1.0))
    }
}

pub fn pot_fit_threshold(scores: &[f64], q: f64, init_quantile: f64) -> Result<PotThreshold> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    if !(init_quantile > 0.0 && init_quantile < 1.0) {
        return Err(Error::invalid(format!(
            "initial quantile must lie in (0, 1), got {init_quantile}"
        )));
    }
    let t = empirical_quantile(scores, init_quantile)?;
    let excesses: Vec<f64> = scores.iter().filter(|&&s| s > t).map(|s| s - t).collect();
    if excesses.len() < MIN_EXCESSES {
        return Err(Error::TooFewExcesses {
            found: excesses.len(),
            required: MIN_EXCESSES,
        });
    }
    let n = excesses.len() as f64;
    let m = excesses.iter().sum::<f64>() / n;
    let s2 = excesses.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (n - 1.0);
    let r = m * m / s2;
    let xi = 0.5 * (1.0 - r);
    if !xi.is_finite() || xi >= 0.5 {
        return Err(Error::InvalidMoments(xi));
    }
    let sigma = 0.5 * m * (1.0 + r);
    let z_q = pot_quantile(t, xi, sigma, q, scores.len(), excesses.len())?;
    Ok(PotThreshold {
        init_quantile,
        t,
        xi,
        sigma,
        q,
        z_q,
        n_total: scores.len(),
        n_excess: excesses.len(),
    })
}

/// Precision, recall and F1 at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub point_adjust: bool,
}

impl EvalReport {
    fn from_counts(tp: usize, fp: usize, positives: usize, threshold: f64, point_adjust: bool) -> Self {
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = tp as f64 / positives as f64;
        Self {
            precision,
            recall,
            f1: f1_score(precision, recall),
            threshold,
            point_adjust,
        }
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "precision={} recall={} f1={} threshold={} point_adjust={}",
            self.precision, self.recall, self.f1, self.threshold, self.point_adjust
        )
    }
}

impl FromStr for EvalReport {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut fields = [None; 4];
        let mut point_adjust = false;
        for token in line.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("malformed report field '{token}'")))?;
            let slot = match key {
                "precision" => 0,
                "recall" => 1,
                "f1" => 2,
                "threshold" => 3,
                "point_adjust" => {
                    point_adjust = value
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad point_adjust value '{value}'")))?;
                    continue;
                }
                other => return Err(Error::invalid(format!("unknown report field '{other}'"))),
            };
            let v: f64 = value
                .parse()
                .map_err(|_| Error::invalid(format!("bad number '{value}' for {key}")))?;
            fields[slot] = Some(v);
        }
        match fields {
            [Some(precision), Some(recall), Some(f1), Some(threshold)] => Ok(Self {
                precision,
                recall,
                f1,
                threshold,
                point_adjust,
            }),
            _ => Err(Error::invalid(
                "report needs precision, recall, f1 and threshold fields",
            )),
        }
    }
}

fn check_labels(scores: &[f64], labels: &[u8]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("labels must be 0 or 1, found {bad}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Err(Error::NoPositiveLabels);
    }
    Ok(positives)
}

/// Maximal runs of label 1 as half-open index ranges.
pub fn anomaly_segments(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut segments = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l == 1, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                segments.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        segments.push((s, labels.len()));
    }
    segments
}

/// Predicted labels (`score >= threshold`), optionally point-adjusted.
pub fn predict(scores: &[f64], labels: &[u8], threshold: f64, point_adjust: bool) -> Vec<u8> {
    let mut pred: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    if point_adjust {
        for (a, b) in anomaly_segments(labels) {
            if pred[a..b].contains(&1) {
                pred[a..b].fill(1);
            }
        }
    }
    pred
}

pub fn evaluate_at(scores: &[f64], labels: &[u8], threshold: f64, point_adjust: bool) -> Result<EvalReport> {
    let positives = check_labels(scores, labels)?;
    let pred = predict(scores, labels, threshold, point_adjust);
    let tp = pred.iter().zip(labels).filter(|(&p, &l)| p == 1 && l == 1).count();
    let fp = pred.iter().zip(labels).filter(|(&p, &l)| p == 1 && l == 0).count();
    Ok(EvalReport::from_counts(tp, fp, positives, threshold, point_adjust))
}

/// Best F1 over every distinct score used as a threshold.
///
/// Ties in F1 keep the highest threshold.
pub fn best_f1(scores: &[f64], labels: &[u8], point_adjust: bool) -> Result<EvalReport> {
    let positives = check_labels(scores, labels)?;

    // Each event turns positive once the threshold drops to its score:
    // (score, true positives gained, false positives gained).
    let mut events: Vec<(f64, usize, usize)> = Vec::with_capacity(scores.len());
    if point_adjust {
        for (a, b) in anomaly_segments(labels) {
            let top = scores[a..b].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            events.push((top, b - a, 0));
        }
        for (&s, &l) in scores.iter().zip(labels) {
            if l == 0 {
                events.push((s, 0, 1));
            }
        }
    } else {
        for (&s, &l) in scores.iter().zip(labels) {
            events.push((s, usize::from(l == 1), usize::from(l == 0)));
        }
    }
    events.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut best: Option<EvalReport> = None;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < events.len() {
        let threshold = events[i].0;
        while i < events.len() && events[i].0 == threshold {
            tp += events[i].1;
            fp += events[i].2;
            i += 1;
        }
        let report = EvalReport::from_counts(tp, fp, positives, threshold, point_adjust);
        if best.is_none_or(|b| report.f1 > b.f1) {
            best = Some(report);
        }
    }
    Ok(best.expect("at least one positive label means at least one event"))
}

/// Relative F1 loss from deploying on a shifted distribution; negative when
/// the transferred model does better.
pub fn transfer_distance(f1_star: f64, f1: f64) -> Result<f64> {
    if f1 == 0.0 {
        return Err(Error::UndefinedDistance);
    }
    if !(f1 > 0.0 && f1 <= 1.0) || !(0.0..=1.0).contains(&f1_star) {
        return Err(Error::invalid(format!(
            "F1 scores must lie in [0, 1], got {f1_star} and {f1}"
        )));
    }
    Ok((f1_star - f1) / f1)
}

/// Product-Gaussian kernel density estimate over the rows of a frame.
struct Kde<'a> {
    frame: &'a SeriesFrame,
    bandwidth: Vec<f64>,
    log_norm: f64,
}

impl<'a> Kde<'a> {
    fn new(frame: &'a SeriesFrame, fixed: Option<f64>) -> Result<Self> {
        let n = frame.len();
        let d = frame.channels();
        let bandwidth = match fixed {
            Some(h) if h > 0.0 && h.is_finite() => vec![h; d],
            Some(h) => return Err(Error::invalid(format!("bandwidth must be positive, got {h}"))),
            None => scott_bandwidth(frame),
        };
        let log_norm = -(n as f64).ln()
            - bandwidth
                .iter()
                .map(|h| 0.5 * (2.0 * std::f64::consts::PI).ln() + h.ln())
                .sum::<f64>();
        Ok(Self {
            frame,
            bandwidth,
            log_norm,
        })
    }

    fn log_density(&self, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        for i in 0..self.frame.len() {
            let row = self.frame.values().row(i);
            let mut e = 0.0;
            for ((xv, rv), h) in x.iter().zip(row).zip(&self.bandwidth) {
                let u = (xv - rv) / h;
                e -= 0.5 * u * u;
            }
            buf.push(e);
        }
        log_sum_exp(buf) + self.log_norm
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let row = self.frame.values().row(rng.below(self.frame.len()));
        row.iter()
            .zip(&self.bandwidth)
            .map(|(r, h)| r + h * rng.normal())
            .collect()
    }
}

/// Per-channel Scott bandwidth `sd * n^(-1/(d+4))`, floored for constant
/// channels.
pub fn scott_bandwidth(frame: &SeriesFrame) -> Vec<f64> {
    let n = frame.len() as f64;
    let d = frame.channels();
    let factor = n.powf(-1.0 / (d as f64 + 4.0));
    (0..d)
        .map(|j| {
            let mean = (0..frame.len()).map(|i| frame.values().get(i, j)).sum::<f64>() / n;
            let var = (0..frame.len())
                .map(|i| (frame.values().get(i, j) - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0).max(1.0);
            (var.sqrt() * factor).max(1e-8)
        })
        .collect()
}

/// Monte-Carlo estimate of `KL(a || b)` between kernel density estimates of
/// two frames, clamped below at zero.
pub fn kde_kl(a: &SeriesFrame, b: &SeriesFrame, bandwidth: Option<f64>, n_mc: usize, rng: &mut Rng) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("KDE needs non-empty frames"));
    }
    if a.channels() != b.channels() {
        return Err(Error::shape(format!(
            "frames have {} and {} channels",
            a.channels(),
            b.channels()
        )));
    }
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be at least 1"));
    }
    let ka = Kde::new(a, bandwidth)?;
    let kb = Kde::new(b, bandwidth)?;
    let mut buf = Vec::with_capacity(a.len().max(b.len()));
    let mut total = 0.0;
    for _ in 0..n_mc {
        let x = ka.sample(rng);
        total += ka.log_density(&x, &mut buf) - kb.log_density(&x, &mut buf);
    }
    Ok((total / n_mc as f64).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn exponential_limit_case() {
        let z = pot_quantile(10.0, 0.0, 2.0, 0.01, 1000, 100).unwrap();
        assert_abs_diff_eq!(z, 10.0 + 2.0 * 10f64.ln(), epsilon = 1e-12);
        assert!((z - 14.6052).abs() < 5e-5);
    }

    #[test]
    fn equal_scores_have_no_excesses() {
        assert!(matches!(
            pot_fit_threshold(&[3.0; 5000], DEFAULT_RISK, DEFAULT_INIT_QUANTILE),
            Err(Error::TooFewExcesses { found: 0, .. })
        ));
    }

    #[test]
    fn quantile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(empirical_quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&v, 1.0).unwrap(), 4.0);
        assert_abs_diff_eq!(empirical_quantile(&v, 0.5).unwrap(), 2.5);
    }

    #[test]
    fn exponential_tail_recovers_quantile() {
        let mut rng = Rng::new(3);
        let scores: Vec<f64> = (0..100_000).map(|_| -(1.0 - rng.uniform()).ln()).collect();
        let pot = pot_fit_threshold(&scores, 1e-3, 0.98).unwrap();
        assert!(pot.xi.abs() < 0.1);
        assert!((pot.z_q - 1000f64.ln()).abs() / 1000f64.ln() < 0.05);
        assert!(pot.z_q >= pot.t && pot.sigma > 0.0 && pot.n_excess >= MIN_EXCESSES);
    }

    #[test]
    fn separable_scores() {
        let r = best_f1(&[0.1, 0.9, 0.2, 0.8], &[0, 1, 0, 1], false).unwrap();
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.threshold, 0.8);
    }

    #[test]
    fn point_adjust_completes_segment() {
        let r = best_f1(&[0.0, 0.9, 0.0, 0.0], &[0, 1, 1, 0], true).unwrap();
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.f1, 1.0);
        let raw = best_f1(&[0.0, 0.9, 0.0, 0.0], &[0, 1, 1, 0], false).unwrap();
        assert!(raw.f1 < 1.0);
    }

    #[test]
    fn no_positives_is_an_error() {
        assert!(matches!(
            best_f1(&[0.1, 0.2], &[0, 0], false),
            Err(Error::NoPositiveLabels)
        ));
    }

    #[test]
    fn segments_are_maximal_runs() {
        assert_eq!(anomaly_segments(&[1, 1, 0, 1, 0, 0, 1]), vec![(0, 2), (3, 4), (6, 7)]);
    }

    #[test]
    fn transfer_distance_cases() {
        assert_abs_diff_eq!(transfer_distance(0.8, 0.4).unwrap(), 1.0);
        assert_eq!(transfer_distance(0.5, 0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(transfer_distance(0.4, 0.5).unwrap(), -0.2, epsilon = 1e-15);
        assert!(matches!(transfer_distance(0.4, 0.0), Err(Error::UndefinedDistance)));
    }

    #[test]
    fn report_line_round_trips() {
        let r = EvalReport {
            precision: 0.75,
            recall: 0.5,
            f1: 0.6,
            threshold: 1.25,
            point_adjust: true,
        };
        let line = r.to_string();
        assert!(line.starts_with("precision=0.75 recall=0.5 f1=0.6 threshold=1.25"));
        assert_eq!(line.parse::<EvalReport>().unwrap(), r);
        assert!("precision=1 recall=1".parse::<EvalReport>().is_err());
    }

    proptest! {
        #[test]
        fn smaller_risk_never_lowers_threshold(q1 in 1e-5f64..0.05, q2 in 1e-5f64..0.05, xi in -0.4f64..0.45) {
            let (lo, hi) = if q1 < q2 { (q1, q2) } else { (q2, q1) };
            let z_lo = pot_quantile(1.0, xi, 0.7, lo, 10_000, 600).unwrap();
            let z_hi = pot_quantile(1.0, xi, 0.7, hi, 10_000, 600).unwrap();
            prop_assert!(z_lo >= z_hi - 1e-12);
        }

        #[test]
        fn report_is_consistent(
            data in proptest::collection::vec((0.0f64..1.0, 0u8..2), 2..120),
            adjust in any::<bool>(),
        ) {
            let (scores, mut labels): (Vec<f64>, Vec<u8>) = data.into_iter().unzip();
            labels[0] = 1;
            let r = best_f1(&scores, &labels, adjust).unwrap();
            for v in [r.precision, r.recall, r.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let expect = f1_score(r.precision, r.recall);
            prop_assert!((r.f1 - expect).abs() <= 1e-12);
            let again = evaluate_at(&scores, &labels, r.threshold, adjust).unwrap();
            prop_assert!((again.f1 - r.f1).abs() <= 1e-12);
        }
    }
}
