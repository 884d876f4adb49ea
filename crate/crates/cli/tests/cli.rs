use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn odelearn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odelearn"))
        .args(args)
        .current_dir(dir)
        .env_remove("ODELEARN_SEED")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = odelearn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    odelearn(dir, args).status.code().unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn synth_writes_lossless_csv_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--ic", "0.1,1,10", "--duration", "25", "--out", "train.csv"]);
    let text = String::from_utf8(read(d, "train.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,X,S,V"));
    assert_eq!(lines.clone().count(), 501);
    assert!(!text.contains('\r'));
    let last: Vec<f64> = lines.last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last[0], 25.0);
    assert!((last[3] - 12.5).abs() < 1e-12);
    let manifest: serde_json::Value = serde_json::from_slice(&read(d, "train.csv.manifest.json")).unwrap();
    assert_eq!(manifest["subcommand"], "synth");
    assert_eq!(manifest["outputs"][0]["path"], "train.csv");
}

#[test]
fn drop_fraction_keeps_endpoints() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--ic", "0.1,1,10", "--duration", "25", "--drop-fraction", "0.3", "--seed", "4", "--out", "a.csv"]);
    ok(d, &["synth", "--ic", "0.1,1,10", "--duration", "25", "--drop-fraction", "0.3", "--seed", "4", "--out", "b.csv"]);
    assert_eq!(read(d, "a.csv"), read(d, "b.csv"));
    let text = String::from_utf8(read(d, "a.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(rows.len() > 300 && rows.len() < 400, "{} rows kept", rows.len());
    assert!(rows[0].starts_with("0.0"));
    assert!(rows.last().unwrap().starts_with("2.5"));
}

#[test]
fn train_rollout_eval_and_replay() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--ic", "0.1,1,10", "--duration", "5", "--out", "train.csv"]);
    ok(d, &["synth", "--ic", "0.15,1.2,12", "--duration", "5", "--out", "test.csv"]);
    ok(d, &["train", "--method", "discrete", "--target", "mu", "--data", "train.csv", "--iters", "50", "--out", "mu.json"]);
    let loss = String::from_utf8(read(d, "mu.loss.csv")).unwrap();
    assert!(loss.starts_with("iteration,loss\n0,"));
    ok(d, &["rollout", "--model", "mu.json", "--ic", "0.15,1.2,12", "--duration", "5", "--integrator", "trapezoidal", "--out", "pred.csv"]);
    let report = ok(d, &["eval", "--pred", "pred.csv", "--truth", "test.csv", "--out", "metrics.csv"]);
    assert!(report.contains("V: rmse"));
    let metrics = String::from_utf8(read(d, "metrics.csv")).unwrap();
    assert!(metrics.starts_with("state,rmse,rel_rmse,max_abs,horizon,horizon_time\nX,"));

    let checkpoint = read(d, "mu.json");
    let stdout = ok(d, &["replay", "--manifest", "mu.json.manifest.json"]);
    assert!(stdout.contains("bit-identically"));
    assert_eq!(checkpoint, read(d, "mu.json"));
    ok(d, &["replay", "--manifest", "pred.csv.manifest.json"]);
}

#[test]
fn continuous_training_writes_state_network() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--ic", "0.1,1,10", "--duration", "2", "--out", "train.csv"]);
    ok(d, &[
        "train", "--method", "continuous", "--target", "dynamics", "--data", "train.csv", "--iters", "20",
        "--n-colloc", "21", "--hidden", "8", "--y-hidden", "8", "--out", "f.json",
    ]);
    let y: serde_json::Value = serde_json::from_slice(&read(d, "f.y.json")).unwrap();
    assert_eq!(y["role"], "state");
    let loss = String::from_utf8(read(d, "f.loss.csv")).unwrap();
    assert!(loss.starts_with("iteration,loss,data_term,residual_term\n"));
    // the state network is not a right-hand side
    assert_eq!(code(d, &["rollout", "--model", "f.y.json", "--ic", "0.1,1,10", "--out", "r.csv"]), 2);
    ok(d, &["rollout", "--model", "f.json", "--ic", "0.1,1,10", "--duration", "1", "--out", "r.csv"]);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(code(d, &["synth", "--ic", "0.1,1", "--out", "x.csv"]), 2);
    assert_eq!(code(d, &["rollout", "--model", "missing.json", "--ic", "0.1,1,10", "--out", "x.csv"]), 4);
    assert_eq!(code(d, &["train", "--preset", "no-such-preset", "--out", "m.json"]), 2);
    assert_eq!(code(d, &["train", "--method", "discrete", "--out", "m.json"]), 2);
    std::fs::write(d.join("bad.csv"), "t,X,S,V\n0,1,2\n").unwrap();
    assert_eq!(code(d, &["eval", "--pred", "bad.csv", "--truth", "bad.csv", "--out", "m.csv"]), 2);

    ok(d, &["synth", "--ic", "0.1,1,10", "--duration", "2", "--out", "train.csv"]);
    ok(d, &["train", "--method", "discrete", "--target", "mu", "--data", "train.csv", "--iters", "5", "--out", "mu.json"]);
    assert_eq!(code(d, &["rollout", "--model", "mu.json", "--mode", "dynamics", "--ic", "0.1,1,10", "--out", "r.csv"]), 2);

    // a modified input stops the replay
    ok(d, &["eval", "--pred", "train.csv", "--truth", "train.csv", "--out", "self.csv"]);
    ok(d, &["synth", "--ic", "0.2,1,10", "--duration", "2", "--out", "train.csv"]);
    assert_eq!(code(d, &["replay", "--manifest", "self.csv.manifest.json"]), 2);
}

#[test]
fn plots_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--ic", "0.1,1,10", "--duration", "5", "--out", "train.csv"]);
    ok(d, &["train", "--method", "discrete", "--target", "mu", "--data", "train.csv", "--iters", "20", "--out", "mu.json"]);
    for kind in ["states", "mu-s", "mu-t", "rhs"] {
        let args = |out: &'static str| {
            vec!["plot", "--kind", kind, "--train", "train.csv", "--learned", "train.csv", "--model", "mu.json", "--out", out]
        };
        ok(d, &args("a.svg"));
        ok(d, &args("b.svg"));
        let a = read(d, "a.svg");
        assert_eq!(a, read(d, "b.svg"), "{kind}");
        assert!(String::from_utf8(a).unwrap().starts_with("<svg"));
    }
}

#[test]
fn compare_ranks_given_models() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--ic", "0.1,1,10", "--duration", "3", "--out", "train.csv"]);
    ok(d, &["train", "--method", "discrete", "--target", "mu", "--data", "train.csv", "--iters", "30", "--out", "mu.json"]);
    ok(d, &["train", "--method", "discrete", "--target", "dynamics", "--data", "train.csv", "--iters", "30", "--hidden", "8", "--out", "f.json"]);
    let stdout = ok(d, &["compare", "--discrete-mu", "mu.json", "--discrete-dynamics", "f.json", "--duration", "3", "--out", "cmp.csv"]);
    assert!(stdout.contains("discrete: growth-rate model"));
    let table = String::from_utf8(read(d, "cmp.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(code(d, &["compare", "--discrete-mu", "f.json", "--out", "cmp.csv"]), 2);
    assert_eq!(code(d, &["compare", "--out", "cmp.csv"]), 2);
}
