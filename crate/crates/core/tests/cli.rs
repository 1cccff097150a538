use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_relanchor"));
    c.env("RUST_LOG", "warn");
    c
}

fn ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    ok(bin()
        .args(["synth", "--n", "200", "--dim", "8", "--out"])
        .arg(dir)
        .args(extra));
}

fn optimize(data: &Path, out: &Path, seed: &str) {
    ok(bin()
        .arg("optimize")
        .arg("--src")
        .arg(data.join("x.txt"))
        .arg("--tgt")
        .arg(data.join("y.txt"))
        .args(["--n-anchors", "20", "--n-seed", "4", "--steps", "10", "--rng-seed", seed])
        .arg("--out")
        .arg(out));
}

#[test]
fn optimize_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &[]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    optimize(&data, &a, "3");
    optimize(&data, &b, "3");
    assert_eq!(fs::read(a.join("run.json")).unwrap(), fs::read(b.join("run.json")).unwrap());
    assert_eq!(fs::read(a.join("raw.bin")).unwrap(), fs::read(b.join("raw.bin")).unwrap());
    let strip = |p: &Path| -> Vec<String> {
        fs::read_to_string(p.join("trace.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(strip(&a).len(), 11);
}

#[test]
fn report_has_three_rows_per_direction() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &[]);
    let runs: Vec<_> = (0..2).map(|s| dir.path().join(format!("r{s}"))).collect();
    for (s, r) in runs.iter().enumerate() {
        optimize(&data, r, &s.to_string());
    }
    let csv = dir.path().join("report.csv");
    ok(bin().arg("report").args(&runs).arg("--out").arg(&csv));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("x,y,GT,1.0,0.0,1.0,0.0"));
    assert!(lines[2].starts_with("x,y,Seed,"));
    assert!(lines[3].starts_with("x,y,AO,"));

    let out = ok(bin().arg("eval-retrieval").arg("--run").arg(&runs[0]).args(["--method", "gt"]));
    assert!(out.lines().nth(1).unwrap().starts_with("x,y,GT,1.0,0.0,1.0,0.0"));
}

#[test]
fn stitching_with_shared_keys_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("c");
    synth(&data, &["--classes", "3"]);
    let anchors = dir.path().join("anchors.txt");
    let keys: Vec<String> = (0..20).map(|i| format!("w{:03}", i * 7)).collect();
    fs::write(&anchors, keys.join("\n")).unwrap();
    let out = ok(bin()
        .arg("eval-stitch")
        .arg("--train-space")
        .arg(data.join("x.txt"))
        .arg("--test-space")
        .arg(data.join("y.txt"))
        .arg("--anchors")
        .arg(&anchors)
        .args(["--seeds", "0..1", "--epochs", "50"]));
    let rows: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    let f_own: f64 = rows[0][3].parse().unwrap();
    let f_cross: f64 = rows[1][3].parse().unwrap();
    assert!((f_own - f_cross).abs() < 1e-6, "{f_own} vs {f_cross}");
}

#[test]
fn failures_are_one_line_and_nonzero() {
    let out = bin()
        .args(["optimize", "--src", "/nonexistent/x.txt", "--tgt", "/nonexistent/y.txt", "--out", "/tmp/never"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: Io: "));

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    synth(&data, &[]);
    let out = bin()
        .arg("optimize")
        .arg("--src")
        .arg(data.join("x.txt"))
        .arg("--tgt")
        .arg(data.join("y.txt"))
        .args(["--n-anchors", "5", "--n-seed", "6", "--out"])
        .arg(dir.path().join("r"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: SeedExceedsTotal: "));

    let out = bin().args(["optimize", "--bogus"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("Usage"));
}
