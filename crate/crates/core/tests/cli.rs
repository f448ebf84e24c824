use std::path::Path;
use std::process::Command;

fn choicelab(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_choicelab")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "choicelab {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let eval = dir.path().join("eval");
    let report = dir.path().join("report");
    choicelab(&["train", "--method", "grpo", "--engine", "toy", "--targets", "ev", "--epochs", "2", "--out", s(&run)]);
    assert!(run.join("metrics.csv").is_file());
    assert!(run.join("manifest.json").is_file());
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], true);
    let cks = std::fs::read_dir(run.join("checkpoints")).unwrap().count();
    // the initial policy plus twenty per epoch
    assert_eq!(cks, 41);

    choicelab(&["evaluate", "--targets", "ev", "--checkpoint", s(&run.join("checkpoints")), "--out", s(&eval)]);
    assert!(std::fs::read_dir(&eval).unwrap().count() >= 41);

    let constant = choicelab(&["evaluate", "--targets", "ev", "--checkpoint", "none", "--predict-constant", "0.5"]);
    assert!(constant.contains("0.25"), "{constant}");

    choicelab(&["report", "--run", s(&run), "--eval", s(&eval), "--out", s(&report)]);
    let md = std::fs::read_to_string(report.join("report.md")).unwrap();
    assert!(md.contains("0.0148"), "reported reference missing:\n{md}");
    assert!(std::fs::read_dir(&report).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "svg")));
}

#[test]
fn bad_arguments_exit_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_choicelab")).args(["train", "--method", "ppo"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(!err.contains("panicked"), "{err}");
}
