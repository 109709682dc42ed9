use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mergelab::{Checkpoint, Tensor};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mergelab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_pair(dir: &Path) -> (PathBuf, PathBuf) {
    let mut a = Checkpoint::new();
    a.insert("w", Tensor::from_f32(vec![2], &[1.0, 2.0]).unwrap())
        .unwrap();
    a.insert("step_count", Tensor::from_i64(vec![1], &[5]).unwrap())
        .unwrap();
    let mut b = Checkpoint::new();
    b.insert("w", Tensor::from_f32(vec![2], &[3.0, 6.0]).unwrap())
        .unwrap();
    b.insert("step_count", Tensor::from_i64(vec![1], &[5]).unwrap())
        .unwrap();
    let (pa, pb) = (dir.join("a.ckpt"), dir.join("b.ckpt"));
    a.save(&pa).unwrap();
    b.save(&pb).unwrap();
    (pa, pb)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn merge_happy_path_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_pair(dir.path());
    let out = dir.path().join("m.ckpt");
    let o = run(&["merge", s(&a), s(&b), "--alpha", "0.5", "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = Checkpoint::load(&out).unwrap();
    assert_eq!(m.tensor_values("w").unwrap(), vec![2.0, 4.0]);

    let o = run(&["inspect", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("merge.alpha = 0.5"), "{text}");
    let da = Checkpoint::load(&a).unwrap().content_digest();
    let db = Checkpoint::load(&b).unwrap().content_digest();
    assert!(text.contains(&format!("merge.base_a = {da}")));
    assert!(text.contains(&format!("merge.base_b = {db}")));
    assert!(text.contains(m.arch_fingerprint()));
}

#[test]
fn alpha_outside_unit_interval_needs_extrapolate() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_pair(dir.path());
    let out = dir.path().join("m.ckpt");
    let o = run(&["merge", s(&a), s(&b), "--alpha", "1.5", "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("AlphaOutOfRange"));
    assert!(stderr(&o).contains("--alpha"));
    assert!(!out.exists());

    let o = run(&[
        "merge",
        s(&a),
        s(&b),
        "--alpha",
        "1.5",
        "--extrapolate",
        "-o",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        Checkpoint::load(&out).unwrap().tensor_values("w").unwrap(),
        vec![4.0, 8.0]
    );
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_pair(dir.path());
    let out = dir.path().join("m.ckpt");
    for args in [
        vec![
            "merge",
            s(&a),
            s(&b),
            "--alpha",
            "0.5",
            "-o",
            s(&out),
            "--frobnicate",
        ],
        vec!["merge", s(&a), s(&b), "-o", s(&out)],
        vec![
            "merge",
            s(&a),
            s(&b),
            "--alpha",
            "0.5",
            "--policy",
            "loose",
            "-o",
            s(&out),
        ],
        vec!["sweep", s(&a), s(&b), "--steps", "0.3", "-o", s(&out)],
        vec![
            "sweep",
            s(&a),
            s(&b),
            "--alphas",
            "0,0.7,0.5,1",
            "-o",
            s(&out),
        ],
        vec!["no-such-command"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    let o = run(&["sweep", s(&a), s(&b), "--steps", "0.3", "-o", s(&out)]);
    assert!(stderr(&o).contains("--steps"));
}

#[test]
fn data_errors_exit_two_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = write_pair(dir.path());
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"\x04\x00\x00\x00\x00\x00\x00\x00{oops").unwrap();
    let o = run(&["inspect", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("MalformedHeader"));
    assert!(stderr(&o).contains("bad.ckpt"));

    let missing = dir.path().join("missing.ckpt");
    let o = run(&["merge", s(&a), s(&missing), "--alpha", "0.5", "-o", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.ckpt"));

    let cfg = dir.path().join("recipe.txt");
    std::fs::write(&cfg, "learning_rate = fast\n").unwrap();
    let o = run(&["train-toy", "--config", s(&cfg), "-o", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"));
}

#[test]
fn soup_and_sweep_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_pair(dir.path());
    let soup = dir.path().join("soup.ckpt");
    let o = run(&["soup", s(&a), s(&b), s(&a), "-o", s(&soup)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let w = Checkpoint::load(&soup).unwrap().tensor_values("w").unwrap();
    assert!((w[0] - 5.0 / 3.0).abs() < 1e-6 && (w[1] - 10.0 / 3.0).abs() < 1e-6);

    let out = dir.path().join("sweep");
    let o = run(&["sweep", s(&a), s(&b), "--steps", "0.25", "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "alpha_0.000000.ckpt",
            "alpha_0.250000.ckpt",
            "alpha_0.500000.ckpt",
            "alpha_0.750000.ckpt",
            "alpha_1.000000.ckpt"
        ]
    );
    let first = Checkpoint::load(out.join("alpha_0.000000.ckpt")).unwrap();
    assert_eq!(first.tensor_values("w").unwrap(), vec![1.0, 2.0]);
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = write_pair(dir.path());
    let o = bin()
        .env("MERGELAB_THREADS", "lots")
        .args(["inspect", s(&a)])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("MERGELAB_THREADS"));
}
