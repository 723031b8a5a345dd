use std::path::Path;
use std::process::{Command, Output};

fn egofront(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egofront"))
        .args(args)
        .env_remove("EGOFRONT_CONFIG")
        .env_remove("EGOFRONT_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = egofront(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(egofront(&["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(egofront(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn bad_values_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = dir.path().join("out");
    let code = |args: &[&str]| egofront(args).status.code();
    assert_eq!(
        code(&[
            "infer",
            "--checkpoint",
            "x",
            "--ego",
            "y",
            "--cond",
            "bogus",
            "--out",
            "z"
        ]),
        Some(2)
    );
    assert_eq!(
        code(&[
            "prepare",
            "--input",
            missing.to_str().unwrap(),
            "--crop",
            "1,2",
            "--resolution",
            "64",
            "--out",
            out.to_str().unwrap()
        ]),
        Some(2)
    );
}

#[test]
fn synthetic_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let (data, model, pred, report) = (p("data"), p("model"), p("pred"), p("report"));

    ok(&[
        "synth-data",
        "--out",
        &data,
        "--length",
        "40",
        "--window",
        "3",
        "--seed",
        "2",
    ]);
    assert!(dir.path().join("data/ego/000039.png").is_file());
    assert!(dir.path().join("data/run_manifest.json").is_file());

    // identical directories have zero error
    let same = p("same");
    ok(&[
        "eval",
        "--pred",
        &format!("{data}/front"),
        "--gt",
        &format!("{data}/front"),
        "--out",
        &same,
    ]);
    let s = summary(Path::new(&same));
    assert_eq!(s["mean"].as_f64(), Some(0.0));
    assert_eq!(s["std"].as_f64(), Some(0.0));

    ok(&[
        "train",
        "--data",
        &data,
        "--out",
        &model,
        "--epochs",
        "1",
        "--window",
        "3",
        "--batch-size",
        "4",
        "--width-divisor",
        "16",
    ]);
    let ckpt = format!("{model}/checkpoint.bin");
    assert!(Path::new(&ckpt).is_file());

    ok(&[
        "infer",
        "--checkpoint",
        &ckpt,
        "--data",
        &data,
        "--split",
        "test",
        "--out",
        &pred,
    ]);
    let frames = std::fs::read_dir(format!("{pred}/frames")).unwrap().count();
    assert_eq!(frames, 8);
    ok(&[
        "eval",
        "--pred",
        &format!("{pred}/frames"),
        "--gt",
        &format!("{data}/front"),
        "--gt-offset",
        "32",
        "--out",
        &report,
    ]);
    let s = summary(Path::new(&report));
    assert_eq!(s["per_frame_error"].as_array().unwrap().len(), 8);
    assert!(s["mean"].as_f64().unwrap() > 0.0);

    let held = p("pred_static");
    ok(&[
        "infer",
        "--checkpoint",
        &ckpt,
        "--data",
        &data,
        "--cond",
        "static:0",
        "--select",
        "middle",
        "--out",
        &held,
    ]);
    assert_eq!(
        std::fs::read_dir(format!("{held}/frames")).unwrap().count(),
        40
    );

    // relative inputs resolve against the data root
    let root = dir.path().to_str().unwrap();
    let rel = [
        "--data-root",
        root,
        "eval",
        "--pred",
        "pred/frames",
        "--gt",
        "data/front",
    ];
    ok(&[&rel[..], &["--out", &p("r2")]].concat());
    let short = egofront(&[&rel[..], &["--gt-offset", "35", "--out", &p("r3")]].concat());
    assert_eq!(short.status.code(), Some(3));
}
