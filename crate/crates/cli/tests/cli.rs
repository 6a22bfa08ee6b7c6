use std::path::Path;
use std::process::{Command, Output};

fn lara(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lara"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: &Output) {
    assert_eq!(o.status.code(), Some(0), "stderr:\n{}", stderr(o));
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        ok(&lara(
            dir.path(),
            &["synth", "--seed", "42", "--len", "2000", "--out", name],
        ));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 2001);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lara(dir.path(), &["synth", "--no-such-flag", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn missing_subcommand_and_bad_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lara(dir.path(), &[]).status.code(), Some(2));
    let o = lara(dir.path(), &["synth", "--len", "many", "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--len"));
    let o = lara(dir.path(), &["synth", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn help_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = lara(dir.path(), &["retrain", "--help"]);
    ok(&o);
    assert!(stdout(&o).contains("--mx-input"));
}

#[test]
fn config_file_is_overridden_by_flags_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.cfg"),
        "# synthetic stream\nlen = 300\nchangepoint = 100\nout = cfg.csv\n",
    )
    .unwrap();
    let o = lara(dir.path(), &["synth", "--config", "run.cfg", "--len", "200"]);
    ok(&o);
    let text = std::fs::read_to_string(dir.path().join("cfg.csv")).unwrap();
    assert_eq!(text.lines().count(), 201);
    let log = stderr(&o);
    assert!(log.contains("len = 200"), "{log}");
    assert!(log.contains("changepoint = 100"), "{log}");
    assert!(log.contains("anomaly_rate = "), "{log}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "lenght = 300\n").unwrap();
    let o = lara(dir.path(), &["synth", "--config", "bad.cfg", "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lenght"));
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn runtime_errors_exit_with_one_and_name_the_module() {
    let dir = tempfile::tempdir().unwrap();
    let o = lara(
        dir.path(),
        &[
            "score",
            "--state",
            "missing.state",
            "--input",
            "x.csv",
            "--out",
            "s.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dataio: missing.state"), "{}", stderr(&o));

    std::fs::write(dir.path().join("s.csv"), "timestamp,score,label\n0,1.0,0\n1,2.0,0\n").unwrap();
    let o = lara(dir.path(), &["eval", "--scores", "s.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("detect:"), "{}", stderr(&o));
}

fn parse_report(line: &str) -> Vec<(String, String)> {
    line.split_whitespace()
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}

#[test]
fn pipeline_train_retrain_score_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&lara(
        d,
        &[
            "synth",
            "--seed",
            "3",
            "--len",
            "1200",
            "--changepoint",
            "600",
            "--out",
            "s.csv",
        ],
    ));
    ok(&lara(
        d,
        &[
            "train", "--input", "s.csv", "--end", "600", "--w", "8", "--epochs", "3", "--out", "m.state",
        ],
    ));
    let losses = std::fs::read_to_string(d.join("m.state.loss.csv")).unwrap();
    assert_eq!(losses.lines().next(), Some("epoch,loss"));
    assert_eq!(losses.lines().count(), 4);

    for out in ["r1.state", "r2.state"] {
        ok(&lara(
            d,
            &[
                "retrain",
                "--state",
                "m.state",
                "--input",
                "s.csv",
                "--start",
                "600",
                "--end",
                "657",
                "--out",
                out,
                "--report",
                "report.csv",
                "--seed",
                "5",
            ],
        ));
    }
    assert_eq!(
        std::fs::read(d.join("r1.state")).unwrap(),
        std::fs::read(d.join("r2.state")).unwrap()
    );
    let report = std::fs::read_to_string(d.join("report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().collect();
    assert!(rows[0].starts_with("generation,windows,solver"));
    assert!(rows[1].starts_with("1,50,closed_form,"), "{}", rows[1]);

    ok(&lara(
        d,
        &[
            "retrain",
            "--state",
            "r1.state",
            "--input",
            "s.csv",
            "--start",
            "657",
            "--end",
            "714",
            "--out",
            "g2.state",
            "--report",
            "report2.csv",
            "--solver",
            "gd",
            "--max-iters",
            "50",
            "--trajectory",
            "traj.csv",
        ],
    ));
    assert!(std::fs::read_to_string(d.join("report2.csv"))
        .unwrap()
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("2,50,gd,"));
    assert!(std::fs::read_to_string(d.join("traj.csv")).unwrap().lines().count() > 1);

    ok(&lara(
        d,
        &[
            "score",
            "--state",
            "g2.state",
            "--input",
            "s.csv",
            "--start",
            "714",
            "--out",
            "scores.csv",
        ],
    ));
    let scores = std::fs::read_to_string(d.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().next(), Some("timestamp,score,label"));
    assert_eq!(scores.lines().count(), 1 + 1200 - 714);

    let o = lara(d, &["eval", "--scores", "scores.csv", "--out", "rep.txt"]);
    ok(&o);
    let line = stdout(&o);
    let fields = parse_report(line.trim());
    let names: Vec<&str> = fields.iter().map(|(k, _)| k.as_str()).collect();
    assert_eq!(&names[..4], ["precision", "recall", "f1", "threshold"]);
    for (_, v) in &fields[..4] {
        v.parse::<f64>().unwrap();
    }

    let o = lara(d, &["distance", "--star", "rep.txt", "--report", "rep.txt"]);
    ok(&o);
    assert_eq!(stdout(&o).trim(), "transfer_distance=0");

    let o = lara(d, &["distance", "--a", "s.csv", "--b", "s.csv", "--n-mc", "100"]);
    ok(&o);
    assert_eq!(stdout(&o).trim(), "kl=0");

    let o = lara(d, &["distance", "--a", "s.csv", "--star", "rep.txt"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_seed_7_lara_beats_stale() {
    let dir = tempfile::tempdir().unwrap();
    let o = lara(
        dir.path(),
        &[
            "bench",
            "--seed",
            "7",
            "--out",
            "table.csv",
            "--convergence",
            "conv.csv",
        ],
    );
    ok(&o);
    let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(stdout(&o), table);
    let f1 = |method: &str| -> f64 {
        let row = table.lines().find(|l| l.starts_with(&format!("{method},"))).unwrap();
        row.split(',').nth(3).unwrap().parse().unwrap()
    };
    assert!(f1("lara") > f1("stale"), "{table}");
    f1("finetune");
    let conv = std::fs::read_to_string(dir.path().join("conv.csv")).unwrap();
    assert_eq!(conv.lines().next(), Some("k,loss,suboptimality"));
    assert_eq!(conv.lines().count(), 2001);
}
