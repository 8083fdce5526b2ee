use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn normlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normlab"))
        .args(args)
        .current_dir(cwd)
        .env("NORMLAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn sim_prints_summary_and_writes_run_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = normlab(&["sim", "--norm", "l2bn", "--seed", "4", "--out", "run"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let line = stdout(&o);
    let v: f64 = line
        .trim()
        .strip_prefix("final_min_angle_deg=")
        .and_then(|r| r.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((v - 120.0).abs() < 0.5);
    assert!(line.contains("converged_at=") && !line.contains("converged_at=none"));

    let csv = fs::read_to_string(dir.path().join("run/trajectory.csv")).unwrap();
    assert!(csv.starts_with("iter,min_angle_deg,c0_0"));
    assert_eq!(csv.lines().count(), 1 + 201);
    assert!(dir.path().join("run/manifest.json").exists());
}

#[test]
fn sim_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = normlab(&["sim", "--norm", "bn", "--classes", "4", "--dim", "3", "--iters", "20", "--seed", "2", "--out", out], dir.path());
        assert!(o.status.success());
    }
    for f in ["trajectory.csv", "manifest.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = normlab(&["gradcheck", "--layer", "l2bn", "--shape", "4x3x2x2"], dir.path());
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("grad_in"));
    let fail = normlab(&["gradcheck", "--layer", "bn", "--tol", "1e-30"], dir.path());
    assert_eq!(fail.status.code(), Some(1));
    assert!(stdout(&fail).contains("FAIL"));
    let bad_kind = normlab(&["gradcheck", "--layer", "xn"], dir.path());
    assert_eq!(bad_kind.status.code(), Some(1));
    let usage = normlab(&["gradcheck", "--shape", "6,4"], dir.path());
    assert_eq!(usage.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&usage.stderr).contains("Usage"));
}

const CONFIG: &str = r#"
seed = 3
epochs = 2
batch_size = 32

[model]
type = "mlp"
hidden = [16]

[norm]
kind = "l2bn"

[data]
type = "blobs"
num_classes = 3
dim = 6
samples_per_class = 40
test_per_class = 10
"#;

#[test]
fn train_writes_artifacts_and_compare_reports() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("l2bn.toml"), CONFIG).unwrap();
    fs::write(dir.path().join("bn.toml"), CONFIG.replace("\"l2bn\"", "\"bn\"")).unwrap();
    for (cfg, out) in [("l2bn.toml", "run-l2bn"), ("bn.toml", "run-bn")] {
        let o = normlab(&["train", "--config", cfg, "--out", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["log.csv", "model.ckpt", "manifest.json"] {
            assert!(dir.path().join(out).join(f).exists(), "{out}/{f}");
        }
    }
    let log = fs::read_to_string(dir.path().join("run-bn/log.csv")).unwrap();
    assert_eq!(
        log.lines().next().unwrap(),
        "epoch,train_loss,train_acc,test_acc,intra_train_deg,intra_test_deg,inter_deg,iir_train,iir_test,wall_ms"
    );
    assert_eq!(log.lines().count(), 3);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run-l2bn/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["norm"]["kind"], "l2bn");

    let o = normlab(&["compare", "--run-a", "run-bn", "--run-b", "run-l2bn"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("d_iir_train"));
    assert!(text.lines().any(|l| l.starts_with("final: d_accuracy(test)=")));
}

#[test]
fn train_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), CONFIG).unwrap();
    for out in ["a", "b"] {
        assert!(normlab(&["train", "--config", "c.toml", "--out", out], dir.path()).status.success());
    }
    for f in ["model.ckpt", "manifest.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let strip = |p: &str| -> Vec<String> {
        fs::read_to_string(dir.path().join(p))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip("a/log.csv"), strip("b/log.csv"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("top.toml", "epoch = 3\n".to_string()),
        ("nested.toml", CONFIG.replace("dim = 6", "dims = 6")),
    ] {
        fs::write(dir.path().join(name), text).unwrap();
        let o = normlab(&["train", "--config", name, "--out", "out"], dir.path());
        assert_eq!(o.status.code(), Some(1), "{name}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn train_on_generated_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = normlab(&["synth-idx", "--out", "imgs", "--per-class", "20", "--test-per-class", "5"], dir.path());
    assert!(o.status.success());
    let cfg = r#"
epochs = 1
batch_size = 50
[model]
type = "cnn"
channels = [4, 8]
[data]
type = "idx"
train_images = "imgs/train-images.idx3-ubyte"
train_labels = "imgs/train-labels.idx1-ubyte"
test_images = "imgs/test-images.idx3-ubyte"
test_labels = "imgs/test-labels.idx1-ubyte"
"#;
    fs::write(dir.path().join("cnn.toml"), cfg).unwrap();
    let o = normlab(&["train", "--config", "cnn.toml", "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn angles_prints_json_and_table() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("f.csv"),
        "x,y,label\n1,0,0\n2,0,0\n0,1,1\n0,3,1\n",
    )
    .unwrap();
    let o = normlab(&["angles", "--features", "f.csv", "--labels-column", "label"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    let json: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(json["intra_train"], 0.0);
    assert!((json["inter"].as_f64().unwrap() - 90.0).abs() < 1e-12);
    assert!(text.contains("iir_train"));

    let missing = normlab(&["angles", "--features", "f.csv", "--labels-column", "class"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
}
