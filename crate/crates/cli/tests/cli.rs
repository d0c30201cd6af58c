use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = r#"
seed = 1
target_accuracy = 50.0

[arch]
stem = "conv"
block = "invert_up"
channels = [8, 16, 32, 64]
depths = [1, 1, 2, 1]
kernel_size = 9
activation = "silu"
act_placement = "act2"
norm_placement = "no_norm"
norm_kind = "none"
num_classes = 4
input_resolution = 32

[fl]
rounds = 1
local_epochs = 1
method = { kind = "fedavg" }

[optimizer]
batch_size = 16
base_lr = 3e-3
warmup_epochs = 0
rule = { kind = "adamw", weight_decay = 0.05 }
agc = { clipping = 0.01, eps = 1e-3 }

[data]
num_clients = 4
source = { kind = "synthetic", num_classes = 4, per_class = 20, test_per_class = 5, resolution = 32 }
partition = { kind = "iid" }
"#;

fn fedconv(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fedconv"));
    cmd.args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_one_line_error(o: &Output) -> String {
    assert!(!o.status.success());
    let err = stderr(o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");
    err
}

fn printed_ks(out: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix("mean KS: "))
        .expect("KS line")
        .parse()
        .unwrap()
}

#[test]
fn partition_iid_prints_zero_ks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = dir.path().join("p");
    let o = fedconv(&["partition", "--out", out.to_str().unwrap()], Some(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean KS: 0.0000"));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("client ")).count(), 4);
    assert!(out.join("partition.json").exists());
}

#[test]
fn partition_label_skew_reaches_target() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE
        .replace("partition = { kind = \"iid\" }", "partition = { kind = \"label_skew\", target_ks = 0.57, tolerance = 0.05 }")
        .replace("num_clients = 4", "num_clients = 5")
        .replace("num_classes = 4, per_class = 20", "num_classes = 10, per_class = 100")
        .replace("num_classes = 4\n", "num_classes = 10\n");
    let cfg = write_config(dir.path(), &text);
    let o = fedconv(&["partition", "--out", dir.path().to_str().unwrap()], Some(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let ks = printed_ks(&stdout(&o));
    assert!((ks - 0.57).abs() <= 0.05, "{ks}");
}

#[test]
fn unreachable_partition_target_fails_with_reason() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace(
        "partition = { kind = \"iid\" }",
        "partition = { kind = \"label_skew\", target_ks = 0.999, tolerance = 0.0001 }",
    );
    let cfg = write_config(dir.path(), &text);
    let o = fedconv(&["partition", "--out", dir.path().to_str().unwrap()], Some(&cfg));
    let err = assert_one_line_error(&o);
    assert!(err.contains("not reached"), "{err}");
}

#[test]
fn invalid_configs_name_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("kernel_size = 9", "kernel_size = 8").replace("batch_size = 16", "batch_size = 0");
    let cfg = write_config(dir.path(), &text);
    let err = assert_one_line_error(&fedconv(&["flops"], Some(&cfg)));
    assert!(err.contains("arch.kernel_size") && err.contains("optimizer.batch_size"), "{err}");

    let cfg = write_config(dir.path(), &BASE.replace("seed = 1", "seed = 1\nsede = 2"));
    let err = assert_one_line_error(&fedconv(&["flops"], Some(&cfg)));
    assert!(err.contains("sede"), "{err}");
}

#[test]
fn usage_errors_are_single_lines() {
    assert_one_line_error(&fedconv(&["flops"], None));
    assert_one_line_error(&fedconv(&["launch"], None));
    assert_one_line_error(&fedconv(&["train", "--threads", "0", "--config", "x.toml"], None));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let err = assert_one_line_error(&fedconv(&["train"], Some(&cfg)));
    assert!(err.contains("--out"), "{err}");
    let err = assert_one_line_error(&fedconv(&["sweep", "--axis", "depth", "--values", "1", "--out", "x"], Some(&cfg)));
    assert!(err.contains("unknown sweep axis"), "{err}");
}

#[test]
fn flops_reports_and_calibrates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let o = fedconv(&["flops"], Some(&cfg));
    assert!(o.status.success());
    assert_eq!(stdout(&o), "params: 76468\nflops: 322880\n");
    let o = fedconv(&["flops", "--calibrate", "661120"], Some(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("calibrated depths: [2, 2, 6, 2]"), "{}", stdout(&o));
}

#[test]
fn train_then_eval_round_trips_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = dir.path().join("run");
    let o = fedconv(&["train", "--out", out.to_str().unwrap(), "--seed", "5"], Some(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["rounds.csv", "report.json", "partition.json", "checkpoint/manifest.txt", "checkpoint/tensors.bin"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report: String = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"seed\": 5"));
    let final_line = stdout(&o).lines().find(|l| l.starts_with("final accuracy")).unwrap().to_string();

    let ck = out.join("checkpoint");
    let o = fedconv(&["eval", "--checkpoint", ck.to_str().unwrap(), "--seed", "5"], Some(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o).trim().strip_prefix("accuracy: "),
        final_line.strip_prefix("final accuracy: ")
    );

    let err = assert_one_line_error(&fedconv(&["eval", "--checkpoint", "/nonexistent"], Some(&cfg)));
    assert!(err.contains("checkpoint") || err.contains("No such file"), "{err}");
}

#[test]
fn central_and_sweep_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let c = dir.path().join("central");
    let o = fedconv(&["central", "--out", c.to_str().unwrap()], Some(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(c.join("report.json")).unwrap().contains("\"mode\": \"central\""));

    let s = dir.path().join("sweep");
    let o = fedconv(
        &["sweep", "--axis", "activation", "--values", "relu,gelu", "--out", s.to_str().unwrap()],
        Some(&cfg),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(s.join("sweep.csv")).unwrap();
    assert_eq!(csv, stdout(&o));
    assert_eq!(csv.lines().count(), 3);
    assert!(s.join("activation=gelu").join("rounds.csv").exists());
}
