use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tricond::Raster;

fn tricond(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tricond")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key}= in {text:?}"))
}

fn sample(path: &Path) {
    Raster::from_fn(48, 40, |x, y| [(x * 5) as u8, (y * 6) as u8, if x > 24 { 220 } else { 30 }])
        .unwrap()
        .save_png(path)
        .unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn approximate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.png");
    sample(&input);
    let run = |name: &str, jobs: &str| {
        let out = tmp.path().join(name);
        let o = tricond(&["approximate", s(&input), s(&out), "--shapes", "12", "--seed", "42", "--jobs", jobs]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (fs::read(out).unwrap(), stdout(&o))
    };
    let (a, text) = run("a.png", "1");
    let (b, _) = run("b.png", "1");
    let (c, _) = run("c.png", "3");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let rmse: f64 = value(&text, "final_rmse").parse().unwrap();
    assert!(rmse > 0.0 && rmse < 255.0);
}

#[test]
fn approximate_writes_optional_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.png");
    sample(&input);
    let (out, svg, trace) = (tmp.path().join("o.ppm"), tmp.path().join("o.svg"), tmp.path().join("t.csv"));
    let o = tricond(&[
        "approximate", s(&input), s(&out), "--shapes", "5", "--resize", "32",
        "--svg", s(&svg), "--trace", s(&trace),
    ]);
    assert!(o.status.success());
    assert_eq!(Raster::load(&out).unwrap().dimensions(), (32, 32));
    assert!(fs::read_to_string(svg).unwrap().starts_with("<svg"));
    let trace = fs::read_to_string(trace).unwrap();
    assert!(trace.starts_with("shape_index,score\n"));
    assert_eq!(trace.lines().count(), 1 + value(&stdout(&o), "shapes").parse::<usize>().unwrap());
}

#[test]
fn zero_shapes_gives_flat_image() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.png");
    sample(&input);
    let out = tmp.path().join("flat.png");
    let o = tricond(&["approximate", s(&input), s(&out), "--shapes", "0"]);
    assert!(o.status.success());
    let flat = Raster::load(&out).unwrap();
    let first = flat.pixel(0, 0);
    assert!(flat.as_bytes().chunks(3).all(|p| p == first));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.png");
    let out = tmp.path().join("o.png");
    let o = tricond(&["approximate", s(&missing), s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
    assert!(!out.exists());

    assert_eq!(tricond(&["approximate", "a.png", "b.png", "--bogus"]).status.code(), Some(2));
    assert_eq!(tricond(&["approximate", "a.png", "b.png", "--alpha", "0"]).status.code(), Some(2));
    assert_eq!(tricond(&["approximate", "a.png", "b.png", "--shapes", "x"]).status.code(), Some(2));
    assert_eq!(tricond(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(tricond(&[]).status.code(), Some(2));
    assert_eq!(tricond(&["--help"]).status.code(), Some(0));
}

#[test]
fn dataset_build_validate_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, root) = (tmp.path().join("in"), tmp.path().join("ds"));
    fs::create_dir(&input).unwrap();
    for name in ["x", "y", "z"] {
        sample(&input.join(format!("{name}.png")));
        fs::write(input.join(format!("{name}.txt")), format!("picture {name}")).unwrap();
    }
    let o = tricond(&[
        "dataset", "build", s(&input), s(&root), "--resize", "64", "--shapes", "4", "--candidates", "10",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&stdout(&o), "processed"), "3");
    assert_eq!(fs::read_to_string(root.join("prompt.jsonl")).unwrap().lines().count(), 3);

    let o = tricond(&["dataset", "validate", s(&root)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("entries=3 failed=0 orphans=0"));

    let o = tricond(&["dataset", "stats", s(&root)]);
    assert!(o.status.success());
    assert_eq!(value(&stdout(&o), "count"), "3");
    assert_eq!(value(&stdout(&o), "dims"), "64x64:3");

    fs::remove_file(root.join("source/y.png")).unwrap();
    let o = tricond(&["dataset", "validate", s(&root)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL line 2 source/y.png: missing file: source/y.png"));
}

#[test]
fn dataset_reports_skips_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, root) = (tmp.path().join("in"), tmp.path().join("ds"));
    fs::create_dir(&input).unwrap();
    sample(&input.join("lonely.png"));
    let o = tricond(&["dataset", "build", s(&input), s(&root), "--resize", "64", "--shapes", "2"]);
    assert!(o.status.success());
    assert_eq!(value(&stdout(&o), "skipped"), "1");
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing caption"));

    let o = tricond(&["dataset", "build", s(&input), s(&root), "--resize", "10"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(tricond(&["dataset", "validate", s(&tmp.path().join("none"))]).status.code(), Some(1));
}

#[test]
fn zeroconv_verify_passes() {
    let o = tricond(&["zeroconv", "verify", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    for check in ["init_identity", "gradient_order", "finite_difference", "locked_immutable"] {
        assert!(text.contains(&format!("PASS {check} ")), "{text}");
    }
}

#[test]
fn zeroconv_train_writes_log_and_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let (log, ck) = (tmp.path().join("log.csv"), tmp.path().join("cb.txt"));
    let o = tricond(&[
        "zeroconv", "train", "--steps", "500", "--lr", "0.05", "--seed", "7",
        "--log", s(&log), "--checkpoint", s(&ck),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log_text = fs::read_to_string(&log).unwrap();
    assert!(log_text.starts_with("step,loss,condition_fidelity\n"));
    assert_eq!(log_text.lines().count(), 501);
    let ratio: f64 = value(&stdout(&o), "loss_ratio").parse().unwrap();
    assert!(ratio < 0.1, "{ratio}");

    let control = tmp.path().join("control.png");
    sample(&control);
    let o = tricond(&["zeroconv", "infer", "--checkpoint", s(&ck), "--control", s(&control)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let delta: f64 = value(&stdout(&o), "control_delta_norm").parse().unwrap();
    assert!(delta > 0.0);
}

#[test]
fn zeroconv_zero_lr_keeps_loss() {
    let o = tricond(&["zeroconv", "train", "--steps", "20", "--lr", "0"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(value(&text, "initial_loss"), value(&text, "final_loss"));
}

#[test]
fn zeroconv_failures_exit_one() {
    let o = tricond(&["zeroconv", "train", "--steps", "50", "--lr", "1000"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
    assert_eq!(tricond(&["zeroconv", "train", "--lr=-1"]).status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "not a checkpoint").unwrap();
    let o = tricond(&["zeroconv", "infer", "--checkpoint", s(&bad), "--control", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
}
