use std::fs;
use std::path::Path;

use fedconv_core::arch::{ArchConfig, BlockKind, Model};
use fedconv_core::config::ExperimentConfig;
use fedconv_core::experiment;
use fedconv_core::metrics::{read_rounds_csv, Checkpoint};
use fedconv_core::{DType, Tensor};

const CONFIG: &str = r#"
seed = 2
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
rounds = 2
local_epochs = 1
method = { kind = "fedavg" }

[optimizer]
batch_size = 16
base_lr = 3e-3
warmup_epochs = 0
rule = { kind = "adamw", weight_decay = 0.05 }
agc = { clipping = 0.01, eps = 1e-3 }

[data]
num_clients = 3
source = { kind = "synthetic", num_classes = 4, per_class = 12, test_per_class = 8, resolution = 32 }
partition = { kind = "iid" }
"#;

#[test]
fn train_writes_consistent_artifacts() {
    let cfg = ExperimentConfig::from_toml_str(CONFIG).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = experiment::train(&cfg, dir.path()).unwrap();

    let rows = read_rounds_csv(&dir.path().join("rounds.csv")).unwrap();
    assert_eq!(rows.len(), report.rounds.len());
    for (a, b) in rows.iter().zip(&report.rounds) {
        assert_eq!(a.round, b.round);
        assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
        assert_eq!(a.loss.map(f64::to_bits), b.loss.map(f64::to_bits));
        assert_eq!(a.seconds.to_bits(), b.seconds.to_bits());
    }
    assert_eq!(rows[0].loss, None);

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["mode"], "federated");
    assert_eq!(json["params"], 76468);
    assert_eq!(json["tms"].as_u64(), report.tms);
    assert!(json["config"].get("output_dir").is_none());

    let mut model = Checkpoint::load(&dir.path().join(experiment::CHECKPOINT_DIR))
        .unwrap()
        .restore_model()
        .unwrap();
    let acc = fedconv_core::metrics::evaluate(&mut model, &experiment::load_data(&cfg).unwrap().1).unwrap();
    assert_eq!(acc, report.final_accuracy);
    assert_eq!(experiment::eval(&dir.path().join(experiment::CHECKPOINT_DIR), &cfg).unwrap(), acc);
}

#[test]
fn report_is_identical_across_output_dirs() {
    let mut cfg = ExperimentConfig::from_toml_str(CONFIG).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cfg.output_dir = Some(dir.path().join("a"));
    experiment::train(&cfg, &dir.path().join("a")).unwrap();
    cfg.output_dir = Some(dir.path().join("b"));
    experiment::train(&cfg, &dir.path().join("b")).unwrap();
    let read = |d: &str| fs::read(dir.path().join(d).join("report.json")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn central_checkpoint_restores_optimizer() {
    let cfg = ExperimentConfig::from_toml_str(&CONFIG.replace("rounds = 2", "rounds = 1")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = experiment::central(&cfg, dir.path()).unwrap();
    assert_eq!(report.mode, "central");
    assert_eq!(report.rounds.len(), 2);
    let ck = Checkpoint::load(&dir.path().join(experiment::CHECKPOINT_DIR)).unwrap();
    let opt = ck.restore_optimizer().unwrap().expect("optimizer saved");
    assert_eq!(opt.steps(), 3);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let cfg = ExperimentConfig::from_toml_str(&CONFIG.replace("rounds = 2", "rounds = 1")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let values = vec!["3".to_string(), "5".to_string()];
    let axis = "kernel_size".parse().unwrap();
    let rows = experiment::sweep(&cfg, axis, &values, dir.path()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].flops < rows[1].flops);
    let csv = fs::read_to_string(dir.path().join(experiment::SWEEP_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("kernel_size,3,"));
    assert!(dir.path().join("kernel_size=5").join("report.json").exists());
    assert!(experiment::sweep(&cfg, axis, &["4".to_string()], dir.path()).is_err());
}

#[test]
fn checkpoint_keeps_dtype_tags_and_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(&ArchConfig::fedconv_tiny(BlockKind::Invert, 3), 1).unwrap();
    let mut ck = Checkpoint::from_model(&model, None);
    let half = Tensor::with_dtype(vec![2], vec![0.5, -1.25], DType::F32).unwrap();
    ck.tensors.push(("extra.f32".into(), half.clone()));
    ck.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    let (_, t) = back.tensors.iter().find(|(n, _)| n == "extra.f32").unwrap();
    assert_eq!(t.dtype(), DType::F32);
    assert!(t.bits_eq(&half));
    assert!(back.restore_model().unwrap().state_dict().bits_eq(&model.state_dict()));

    let blob = dir.path().join("tensors.bin");
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
    assert!(Checkpoint::load(dir.path()).is_err());
    assert!(Checkpoint::load(&dir.path().join("missing")).is_err());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
