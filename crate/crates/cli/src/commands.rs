use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use lara::bench::{convergence_fixture, convergence_series, run_bench, Scenario};
use lara::dataio::{
    expand_window_scores, load_csv, load_state, make_windows, save_csv, save_state, synth_shift_stream, StateFile,
    StoredModel, ZScore,
};
use lara::detect::{kde_kl, pot_fit_threshold, transfer_distance, DEFAULT_INIT_QUANTILE, DEFAULT_RISK};
use lara::retrain::{score_windows, GdConfig};
use lara::vae::train_vae;
use lara::{
    best_f1, lara_retrain, EvalReport, LaraConfig, MxInput, RetrainConfig, Rng, SeriesFrame, ShiftSpec, Solver,
    TrainConfig, VaeModel, WindowSpec,
};

use crate::settings::{bare, key, Key, Settings};
use crate::CliError;

pub struct CommandSpec {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: fn() -> Vec<Key>,
    pub run: fn(&Settings) -> Result<(), CliError>,
}

pub const ALL: &[CommandSpec] = &[
    CommandSpec {
        name: "synth",
        about: "Write a synthetic stream with one regime change and labelled anomalies",
        keys: synth_keys,
        run: synth,
    },
    CommandSpec {
        name: "train",
        about: "Train a VAE on a CSV series; writes a state file and a per-epoch loss CSV",
        keys: train_keys,
        run: train,
    },
    CommandSpec {
        name: "retrain",
        about: "Retrain a state on a slice of new data; writes the new state and a report CSV",
        keys: retrain_keys,
        run: retrain,
    },
    CommandSpec {
        name: "score",
        about: "Write per-timestamp anomaly scores of a CSV series",
        keys: score_keys,
        run: score,
    },
    CommandSpec {
        name: "eval",
        about: "Evaluate a score CSV against labels and print the report line",
        keys: eval_keys,
        run: eval,
    },
    CommandSpec {
        name: "distance",
        about: "KDE-KL divergence between two series, or transfer distance between two reports",
        keys: distance_keys,
        run: distance,
    },
    CommandSpec {
        name: "bench",
        about: "Compare the stale model, one retraining round and full fine-tuning on a synthetic shift",
        keys: bench_keys,
        run: bench,
    },
];

fn synth_keys() -> Vec<Key> {
    let d = ShiftSpec::default();
    vec![
        key("seed", d.seed, "random seed"),
        key("len", d.len, "number of rows"),
        key("channels", d.channels, "number of channels"),
        key("changepoint", d.changepoint, "first row of the new regime"),
        key("pre_amplitude", d.pre.amplitude, "amplitude before the change"),
        key("pre_frequency", d.pre.frequency, "base frequency before the change"),
        key("pre_level", d.pre.level, "level before the change"),
        key("pre_noise", d.pre.noise, "noise std before the change"),
        key("post_amplitude", d.post.amplitude, "amplitude after the change"),
        key("post_frequency", d.post.frequency, "base frequency after the change"),
        key("post_level", d.post.level, "level after the change"),
        key("post_noise", d.post.noise, "noise std after the change"),
        key("anomaly_rate", d.anomaly_rate, "fraction of labelled rows"),
        key(
            "anomaly_magnitude",
            d.anomaly_magnitude,
            "anomaly size in channel standard deviations",
        ),
        bare("out", "output CSV path"),
    ]
}

fn synth(s: &Settings) -> Result<(), CliError> {
    let mut spec = ShiftSpec {
        seed: s.get("seed")?,
        len: s.get("len")?,
        channels: s.get("channels")?,
        changepoint: s.get("changepoint")?,
        anomaly_rate: s.get("anomaly_rate")?,
        anomaly_magnitude: s.get("anomaly_magnitude")?,
        ..ShiftSpec::default()
    };
    spec.pre.amplitude = s.get("pre_amplitude")?;
    spec.pre.frequency = s.get("pre_frequency")?;
    spec.pre.level = s.get("pre_level")?;
    spec.pre.noise = s.get("pre_noise")?;
    spec.post.amplitude = s.get("post_amplitude")?;
    spec.post.frequency = s.get("post_frequency")?;
    spec.post.level = s.get("post_level")?;
    spec.post.noise = s.get("post_noise")?;
    let out = s.str("out")?;
    save_csv(&synth_shift_stream(&spec)?, out)?;
    log::info!("wrote {} rows to {out}", spec.len);
    Ok(())
}

fn range_keys() -> Vec<Key> {
    vec![
        key("start", 0, "first row of the input used"),
        bare("end", "one past the last row used [default: all rows]"),
    ]
}

fn load_range(s: &Settings) -> Result<SeriesFrame, CliError> {
    let frame = load_csv(s.str("input")?)?;
    let start: usize = s.get("start")?;
    let end: usize = s.opt("end")?.unwrap_or(frame.len());
    if start >= end || end > frame.len() {
        return Err(CliError::Usage(format!(
            "row range {start}..{end} is empty or exceeds the {} input rows",
            frame.len()
        )));
    }
    Ok(frame.slice(start..end)?)
}

fn train_keys() -> Vec<Key> {
    let d = TrainConfig::default();
    let w = WindowSpec::default();
    let mut keys = vec![
        bare("input", "training CSV"),
        bare("out", "output state file"),
        bare("loss_out", "per-epoch loss CSV [default: <out>.loss.csv]"),
        key("w", w.w, "window length"),
        key("stride", w.stride, "window stride"),
        key("epochs", d.epochs, "training epochs"),
        key("batch_size", d.batch_size, "mini-batch size"),
        key("lr", d.lr, "Adam learning rate"),
        key("hidden", d.hidden, "hidden layer width"),
        key("latent", d.latent, "latent dimension"),
        key("n_mc", d.n_mc, "Monte-Carlo samples per window in the ELBO"),
        key("seed", d.seed, "random seed"),
    ];
    keys.extend(range_keys());
    keys
}

fn train(s: &Settings) -> Result<(), CliError> {
    let frame = load_range(s)?;
    let cfg = TrainConfig {
        epochs: s.get("epochs")?,
        batch_size: s.get("batch_size")?,
        lr: s.get("lr")?,
        seed: s.get("seed")?,
        hidden: s.get("hidden")?,
        latent: s.get("latent")?,
        n_mc: s.get("n_mc")?,
    };
    let spec = WindowSpec {
        w: s.get("w")?,
        stride: s.get("stride")?,
    };
    let norm = ZScore::fit(&frame)?;
    let windows = make_windows(&norm.apply(&frame)?, spec)?.windows;
    let init = VaeModel::for_config(spec.w, frame.channels(), &cfg)?;
    let (model, losses) = train_vae(&init, &windows, &cfg)?;

    let out = s.str("out")?;
    save_state(
        &StateFile {
            model: StoredModel::Vae(model),
            norm: Some(norm),
        },
        out,
    )?;
    let loss_out = s
        .opt::<PathBuf>("loss_out")?
        .unwrap_or_else(|| PathBuf::from(format!("{out}.loss.csv")));
    let mut wtr = csv::Writer::from_path(&loss_out)?;
    wtr.write_record(["epoch", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        wtr.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    wtr.flush()?;
    log::info!(
        "trained on {} windows; final loss {}; wrote {out} and {}",
        windows.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        loss_out.display()
    );
    Ok(())
}

fn retrain_keys() -> Vec<Key> {
    let r = RetrainConfig::default();
    let mut keys = vec![
        bare("state", "input state file"),
        bare("input", "CSV holding the new data"),
        bare("out", "output state file"),
        bare("report", "retrain report CSV"),
        bare("trajectory", "per-iteration loss CSV of the gd solver"),
        key("stride", 1, "stride of the retraining windows"),
        bare(
            "n",
            "restored historical windows per new window [default: stored, else 3]",
        ),
        bare(
            "N",
            "prior draws of the importance-sampling estimate [default: stored, else 10]",
        ),
        bare("mx_input", "adjusted | raw [default: stored, else adjusted]"),
        key("solver", r.solver, "closed_form | gd"),
        key("ridge", r.ridge, "ridge penalty on the adjuster weights"),
        bare("gd_lr", "fixed gd step size [default: 1/L]"),
        key("max_iters", r.gd.max_iters, "gd iteration limit"),
        key("tol", r.gd.tol, "gd relative loss-change tolerance"),
        key("seed", 0, "random seed"),
    ];
    keys.extend(range_keys());
    keys
}

fn resolve_lara_config(s: &Settings, stored: Option<&LaraConfig>, seed: u64) -> Result<LaraConfig, CliError> {
    let mut cfg = stored.cloned().unwrap_or_else(|| {
        let mut c = LaraConfig::default();
        c.ruminate.seed = seed;
        c
    });
    if let Some(n) = s.opt("n")? {
        cfg.ruminate.n_restored = n;
    }
    if let Some(n) = s.opt("N")? {
        cfg.ruminate.n_samples = n;
    }
    if let Some(m) = s.opt::<MxInput>("mx_input")? {
        cfg.mx_input = m;
    }
    cfg.ruminate.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn retrain(s: &Settings) -> Result<(), CliError> {
    let file = load_state(s.str("state")?)?;
    let seed: u64 = s.get("seed")?;
    let stored = match &file.model {
        StoredModel::Lara(st) => Some(st.config().clone()),
        StoredModel::Vae(_) => None,
    };
    let cfg = resolve_lara_config(s, stored.as_ref(), seed)?;
    log::info!(
        "effective ruminate: n = {}, N = {}, seed = {}, mx_input = {}",
        cfg.ruminate.n_restored,
        cfg.ruminate.n_samples,
        cfg.ruminate.seed,
        cfg.mx_input
    );
    let norm = file.norm.clone();
    let mut state = file.into_lara(cfg.clone());
    state.set_config(cfg);

    let frame = normalized(load_range(s)?, norm.as_ref())?;
    let spec = WindowSpec {
        w: state.base().window(),
        stride: s.get("stride")?,
    };
    let windows = make_windows(&frame, spec)?.windows;
    let rcfg = RetrainConfig {
        solver: s.get::<Solver>("solver")?,
        ridge: s.get("ridge")?,
        gd: GdConfig {
            lr: s.opt("gd_lr")?,
            max_iters: s.get("max_iters")?,
            tol: s.get("tol")?,
        },
    };
    let (next, report) = lara_retrain(&state, &windows, &rcfg, &mut Rng::new(seed))?;

    let out = s.str("out")?;
    save_state(
        &StateFile {
            model: StoredModel::Lara(next.clone()),
            norm,
        },
        out,
    )?;
    let mut wtr = csv::Writer::from_path(s.str("report")?)?;
    wtr.write_record([
        "generation",
        "windows",
        "solver",
        "iterations",
        "converged",
        "loss_z",
        "loss_x",
        "seconds",
    ])?;
    wtr.write_record([
        next.generation().to_string(),
        windows.len().to_string(),
        rcfg.solver.to_string(),
        report.iterations.to_string(),
        report.converged.to_string(),
        report.loss_z.to_string(),
        report.loss_x.to_string(),
        report.seconds.to_string(),
    ])?;
    wtr.flush()?;
    if let Some(path) = s.opt::<PathBuf>("trajectory")? {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["k", "loss"])?;
        for (i, l) in report.trajectory.iter().enumerate() {
            wtr.write_record([(i + 1).to_string(), l.to_string()])?;
        }
        wtr.flush()?;
    }
    log::info!(
        "generation {} from {} windows; loss_z {} loss_x {}; wrote {out}",
        next.generation(),
        windows.len(),
        report.loss_z,
        report.loss_x
    );
    Ok(())
}

fn normalized(frame: SeriesFrame, norm: Option<&ZScore>) -> Result<SeriesFrame, CliError> {
    Ok(match norm {
        Some(z) => z.apply(&frame)?,
        None => frame,
    })
}

fn score_keys() -> Vec<Key> {
    let mut keys = vec![
        bare("state", "state file"),
        bare("input", "CSV to score"),
        bare("out", "output score CSV"),
    ];
    keys.extend(range_keys());
    keys
}

fn score(s: &Settings) -> Result<(), CliError> {
    let file = load_state(s.str("state")?)?;
    let norm = file.norm.clone();
    let state = file.into_lara(LaraConfig::default());
    let frame = normalized(load_range(s)?, norm.as_ref())?;
    let spec = WindowSpec {
        w: state.base().window(),
        stride: 1,
    };
    let w = make_windows(&frame, spec)?;
    let per_window = score_windows(&state, &w.windows)?;
    let scores = expand_window_scores(&per_window, &w.ends, frame.len())?;

    let out = s.str("out")?;
    let mut wtr = csv::Writer::from_path(out)?;
    let labels = frame.labels();
    if labels.is_some() {
        wtr.write_record(["timestamp", "score", "label"])?;
    } else {
        wtr.write_record(["timestamp", "score"])?;
    }
    for (i, (t, sc)) in frame.timestamps().iter().zip(&scores).enumerate() {
        let mut rec = vec![t.to_string(), sc.to_string()];
        if let Some(l) = labels {
            rec.push(l[i].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    log::info!("scored {} rows; wrote {out}", frame.len());
    Ok(())
}

fn eval_keys() -> Vec<Key> {
    vec![
        bare("scores", "score CSV with a 'score' column"),
        bare("labels", "CSV with a 'label' column [default: the score CSV's own]"),
        key("method", "best_f1", "best_f1 | pot"),
        key("point_adjust", true, "credit whole anomaly segments"),
        key("q", DEFAULT_RISK, "POT risk level"),
        key("init_quantile", DEFAULT_INIT_QUANTILE, "POT initial threshold quantile"),
        bare("out", "also write the report line to this file"),
    ]
}

fn read_column(path: &Path, name: &str) -> Result<Option<Vec<String>>, CliError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let Some(col) = headers.iter().position(|h| h.trim() == name) else {
        return Ok(None);
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let v = rec
            .get(col)
            .ok_or_else(|| CliError::Runtime(format!("{}: row {}: missing '{name}'", path.display(), i + 2)))?;
        out.push(v.trim().to_string());
    }
    Ok(Some(out))
}

fn parse_column<T: std::str::FromStr>(path: &Path, name: &str, raw: Vec<String>) -> Result<Vec<T>, CliError> {
    raw.iter()
        .enumerate()
        .map(|(i, v)| {
            v.parse()
                .map_err(|_| CliError::Runtime(format!("{}: row {}: bad '{name}' value '{v}'", path.display(), i + 2)))
        })
        .collect()
}

fn eval(s: &Settings) -> Result<(), CliError> {
    let score_path = PathBuf::from(s.str("scores")?);
    let scores: Vec<f64> = match read_column(&score_path, "score")? {
        Some(raw) => parse_column(&score_path, "score", raw)?,
        None => {
            return Err(CliError::Runtime(format!(
                "{}: no 'score' column",
                score_path.display()
            )))
        }
    };
    let label_path = s.opt::<PathBuf>("labels")?.unwrap_or_else(|| score_path.clone());
    let labels: Vec<u8> = match read_column(&label_path, "label")? {
        Some(raw) => parse_column(&label_path, "label", raw)?,
        None => {
            return Err(CliError::Runtime(format!(
                "{}: no 'label' column",
                label_path.display()
            )))
        }
    };
    if labels.len() != scores.len() {
        return Err(CliError::Runtime(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let point_adjust: bool = s.get("point_adjust")?;
    let report = match s.str("method")? {
        "best_f1" => best_f1(&scores, &labels, point_adjust)?,
        "pot" => {
            let pot = pot_fit_threshold(&scores, s.get("q")?, s.get("init_quantile")?)?;
            log::info!(
                "POT: t = {} xi = {} sigma = {} z_q = {}",
                pot.t,
                pot.xi,
                pot.sigma,
                pot.z_q
            );
            lara::detect::evaluate_at(&scores, &labels, pot.z_q, point_adjust)?
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown method '{other}' (expected best_f1 or pot)"
            )))
        }
    };
    println!("{report}");
    if let Some(path) = s.opt::<PathBuf>("out")? {
        std::fs::write(path, format!("{report}\n"))?;
    }
    Ok(())
}

fn distance_keys() -> Vec<Key> {
    vec![
        bare("a", "first series CSV (KDE-KL mode)"),
        bare("b", "second series CSV (KDE-KL mode)"),
        bare("bandwidth", "shared kernel bandwidth [default: per-channel Scott]"),
        key("n_mc", 1000, "Monte-Carlo samples of the KL estimate"),
        key("seed", 0, "random seed"),
        bare("star", "report of the in-distribution model (transfer mode)"),
        bare("report", "report of the transferred model (transfer mode)"),
    ]
}

fn read_report(path: &str) -> Result<EvalReport, CliError> {
    let text = std::fs::read_to_string(path)?;
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| CliError::Runtime(format!("{path}: empty report file")))?;
    Ok(line.trim().parse()?)
}

fn distance(s: &Settings) -> Result<(), CliError> {
    let kl_mode = s.has("a") || s.has("b");
    let transfer_mode = s.has("star") || s.has("report");
    match (kl_mode, transfer_mode) {
        (true, false) => {
            let a = load_csv(s.str("a")?)?.without_labels();
            let b = load_csv(s.str("b")?)?.without_labels();
            let kl = kde_kl(
                &a,
                &b,
                s.opt("bandwidth")?,
                s.get("n_mc")?,
                &mut Rng::new(s.get("seed")?),
            )?;
            println!("kl={kl}");
        }
        (false, true) => {
            let star = read_report(s.str("star")?)?;
            let rep = read_report(s.str("report")?)?;
            println!("transfer_distance={}", transfer_distance(star.f1, rep.f1)?);
        }
        _ => {
            return Err(CliError::Usage(
                "give either --a and --b, or --star and --report".into(),
            ))
        }
    }
    Ok(())
}

fn bench_keys() -> Vec<Key> {
    let d = Scenario::default();
    vec![
        key("seed", 7, "seed of the fixture, training and retraining"),
        key("solver", d.retrain.solver, "closed_form | gd"),
        key("mx_input", d.lara.mx_input, "adjusted | raw"),
        key(
            "n",
            d.lara.ruminate.n_restored,
            "restored historical windows per new window",
        ),
        key(
            "N",
            d.lara.ruminate.n_samples,
            "prior draws of the importance-sampling estimate",
        ),
        key(
            "retrain_windows",
            d.retrain_windows,
            "new-regime windows used for retraining",
        ),
        key("finetune_epochs", d.finetune_epochs, "epochs of full fine-tuning"),
        key("point_adjust", d.point_adjust, "credit whole anomaly segments"),
        key("iterations", 2000, "gd iterations of the convergence series"),
        bare("out", "comparison table CSV [default: stdout only]"),
        bare("convergence", "convergence CSV"),
    ]
}

fn bench(s: &Settings) -> Result<(), CliError> {
    let mut sc = Scenario::seeded(s.get("seed")?);
    sc.retrain.solver = s.get("solver")?;
    sc.lara.mx_input = s.get("mx_input")?;
    sc.lara.ruminate.n_restored = s.get("n")?;
    sc.lara.ruminate.n_samples = s.get("N")?;
    sc.lara
        .ruminate
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    sc.retrain_windows = s.get("retrain_windows")?;
    sc.finetune_epochs = s.get("finetune_epochs")?;
    sc.point_adjust = s.get("point_adjust")?;

    let outcome = run_bench(&sc)?;
    let mut table = Vec::new();
    {
        let mut wtr = csv::Writer::from_writer(&mut table);
        wtr.write_record([
            "method",
            "precision",
            "recall",
            "f1",
            "threshold",
            "train_mse",
            "seconds",
        ])?;
        for r in &outcome.rows {
            wtr.write_record([
                r.method.clone(),
                format!("{:.4}", r.report.precision),
                format!("{:.4}", r.report.recall),
                format!("{:.4}", r.report.f1),
                format!("{:.6}", r.report.threshold),
                format!("{:.6}", r.train_mse),
                format!("{:.3}", r.seconds),
            ])?;
        }
        wtr.flush()?;
    }
    std::io::stdout().write_all(&table)?;
    if let Some(path) = s.opt::<PathBuf>("out")? {
        std::fs::write(path, &table)?;
    }

    if let Some(path) = s.opt::<PathBuf>("convergence")? {
        let (state, windows) = convergence_fixture(&sc)?;
        let series = convergence_series(
            &state,
            &windows,
            sc.retrain.ridge,
            s.get("iterations")?,
            &mut Rng::new(sc.seed),
        )?;
        let mut wtr = csv::Writer::from_writer(File::create(&path)?);
        wtr.write_record(["k", "loss", "suboptimality"])?;
        for p in &series {
            wtr.write_record([p.k.to_string(), p.loss.to_string(), p.suboptimality.to_string()])?;
        }
        wtr.flush()?;
        log::info!("wrote {} convergence points to {}", series.len(), path.display());
    }
    Ok(())
}
