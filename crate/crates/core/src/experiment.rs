//! Config-driven runners shared by the command-line tool and the tests.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::arch::{calibrate_depths, count_flops, count_params, ActPlacement, ArchConfig, NormPlacement, StemKind};
use crate::autodiff::Activation;
use crate::config::{DataSource, ExperimentConfig, PartitionSpec};
use crate::data::{
    load_cifar10_dir, mean_pairwise_ks, partition_iid, partition_label_skew, synth_dataset, Dataset, Partition,
    Split,
};
use crate::error::{Error, Result};
use crate::fl::{run_central, Federation, FlSettings, LocalConfig};
use crate::metrics::{evaluate, write_report, Checkpoint, ExperimentReport, RoundRecord};
use crate::optim::LrSchedule;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const PARTITION_FILE: &str = "partition.json";
pub const SWEEP_FILE: &str = "sweep.csv";
/// Relative calibration tolerance used by `flops --calibrate`.
pub const CALIBRATION_TOLERANCE: f64 = 0.1;

pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data.source {
        DataSource::Synthetic {
            num_classes,
            per_class,
            test_per_class,
            resolution,
        } => Ok((
            synth_dataset(cfg.seed, *num_classes, *per_class, *resolution, Split::Train)?,
            synth_dataset(cfg.seed, *num_classes, *test_per_class, *resolution, Split::Test)?,
        )),
        DataSource::Cifar10 { path } => load_cifar10_dir(path),
    }
}

/// Builds (or reads) the configured partition and its mean pairwise KS.
pub fn build_partition(cfg: &ExperimentConfig, train: &Dataset) -> Result<(Partition, f64)> {
    let (labels, k, n) = (train.labels(), train.num_classes(), cfg.data.num_clients);
    let p = match &cfg.data.partition {
        PartitionSpec::Iid {} => partition_iid(labels, k, n, cfg.seed)?,
        PartitionSpec::LabelSkew { target_ks, tolerance } => {
            partition_label_skew(labels, k, n, *target_ks, *tolerance, cfg.seed)?
        }
        PartitionSpec::File { path } => {
            let p = Partition::load(path)?;
            if p.num_clients != n {
                return Err(Error::config(
                    "data.num_clients",
                    format!("{n} differs from the {} clients in {}", p.num_clients, path.display()),
                ));
            }
            p
        }
    };
    p.validate(train.len(), true)?;
    let ks = mean_pairwise_ks(&p, labels, k)?;
    Ok((p, ks))
}

pub fn local_config(cfg: &ExperimentConfig) -> LocalConfig {
    let o = &cfg.optimizer;
    LocalConfig {
        batch_size: o.batch_size,
        epochs: cfg.fl.local_epochs,
        schedule: LrSchedule {
            base_lr: o.base_lr,
            warmup_epochs: o.warmup_epochs,
            total_epochs: cfg.total_epochs(),
        },
        agc: o.agc,
        prox_mu: 0.0,
        seed: cfg.seed,
    }
}

pub fn fl_settings(cfg: &ExperimentConfig) -> FlSettings {
    FlSettings {
        method: cfg.fl.method,
        rounds: cfg.fl.rounds,
        clients_per_round: cfg.fl.clients_per_round,
        local: local_config(cfg),
        target_accuracy: cfg.target_accuracy,
        stop_at_target: cfg.stop_at_target,
    }
}

/// Config as recorded in reports. The output directory is left out so runs
/// that differ only in where they write produce identical reports.
pub fn config_snapshot(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let mut c = cfg.clone();
    c.output_dir = None;
    Ok(serde_json::to_value(c)?)
}

/// Federated run on already loaded data and partition.
pub fn run_federated_with(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    partition: &Partition,
    partition_ks: f64,
    mut observe: impl FnMut(&Federation<'_>, &RoundRecord),
) -> Result<(ExperimentReport, Checkpoint)> {
    let mut fed = Federation::new(&cfg.arch, partition, train, test, cfg.optimizer.rule, fl_settings(cfg))?;
    let records = fed.run(|f, r| observe(f, r))?;
    let report = ExperimentReport::new(
        "federated",
        config_snapshot(cfg)?,
        records,
        cfg.target_accuracy,
        fed.server.model.num_params() as u64,
        Some(partition_ks),
    );
    Ok((report, Checkpoint::from_model(&fed.server.model, None)))
}

/// `train`: federated run writing rounds.csv, report.json, partition.json
/// and the final global model checkpoint into `out`.
pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    let (train, test) = load_data(cfg)?;
    let (partition, ks) = build_partition(cfg, &train)?;
    let (report, ck) = run_federated_with(cfg, &train, &test, &partition, ks, |_, _| {})?;
    write_report(&report, out)?;
    partition.save(&out.join(PARTITION_FILE))?;
    ck.save(&out.join(CHECKPOINT_DIR))?;
    Ok(report)
}

/// `central`: one model on the pooled training set for
/// `rounds * local_epochs` epochs, one record per epoch.
pub fn central(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    let (train, test) = load_data(cfg)?;
    let local = local_config(cfg);
    let (trainer, records) = run_central(
        &cfg.arch,
        &train,
        &test,
        cfg.optimizer.rule,
        &local,
        cfg.total_epochs(),
        |_, _| {},
    )?;
    let report = ExperimentReport::new(
        "central",
        config_snapshot(cfg)?,
        records,
        cfg.target_accuracy,
        trainer.model.num_params() as u64,
        None,
    );
    write_report(&report, out)?;
    Checkpoint::from_model(&trainer.model, Some(&trainer.optimizer)).save(&out.join(CHECKPOINT_DIR))?;
    Ok(report)
}

pub struct PartitionSummary {
    pub partition: Partition,
    pub mean_ks: f64,
    /// Per-client class histograms, by client id.
    pub histograms: Vec<Vec<usize>>,
}

impl PartitionSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, h) in self.histograms.iter().enumerate() {
            let cells: Vec<String> = h.iter().map(|c| c.to_string()).collect();
            writeln!(s, "client {k}: n={} classes=[{}]", h.iter().sum::<usize>(), cells.join(",")).unwrap();
        }
        write!(s, "mean KS: {:.4}", self.mean_ks).unwrap();
        s
    }
}

/// `partition`: builds the partition and writes partition.json into `out`.
pub fn partition(cfg: &ExperimentConfig, out: &Path) -> Result<PartitionSummary> {
    let (train, _) = load_data(cfg)?;
    let (partition, mean_ks) = build_partition(cfg, &train)?;
    fs::create_dir_all(out)?;
    partition.save(&out.join(PARTITION_FILE))?;
    let histograms = partition.clients.iter().map(|c| train.class_counts(&c.indices)).collect();
    Ok(PartitionSummary {
        partition,
        mean_ks,
        histograms,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsSummary {
    pub params: u64,
    pub flops: u64,
    /// Depths chosen by calibration, with the resulting counts.
    pub calibrated: Option<([usize; 4], u64, u64)>,
}

impl FlopsSummary {
    pub fn render(&self) -> String {
        let mut s = format!("params: {}\nflops: {}", self.params, self.flops);
        if let Some((d, p, f)) = self.calibrated {
            write!(s, "\ncalibrated depths: {d:?}\ncalibrated params: {p}\ncalibrated flops: {f}").unwrap();
        }
        s
    }
}

pub fn flops(arch: &ArchConfig, calibrate: Option<u64>) -> Result<FlopsSummary> {
    let calibrated = match calibrate {
        Some(target) => {
            let depths = calibrate_depths(arch, target, CALIBRATION_TOLERANCE)?;
            let c = ArchConfig {
                depths,
                ..arch.clone()
            };
            Some((depths, count_params(&c)?, count_flops(&c)?))
        }
        None => None,
    };
    Ok(FlopsSummary {
        params: count_params(arch)?,
        flops: count_flops(arch)?,
        calibrated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    KernelSize,
    Activation,
    Stem,
    ActPlacement,
    NormPlacement,
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "kernel_size" => SweepAxis::KernelSize,
            "activation" => SweepAxis::Activation,
            "stem" => SweepAxis::Stem,
            "act_placement" => SweepAxis::ActPlacement,
            "norm_placement" => SweepAxis::NormPlacement,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown sweep axis `{s}` (kernel_size, activation, stem, act_placement, norm_placement)"
                )))
            }
        })
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::KernelSize => "kernel_size",
            SweepAxis::Activation => "activation",
            SweepAxis::Stem => "stem",
            SweepAxis::ActPlacement => "act_placement",
            SweepAxis::NormPlacement => "norm_placement",
        }
    }

    /// Copy of `arch` with this axis set to `value`.
    pub fn apply(self, arch: &ArchConfig, value: &str) -> Result<ArchConfig> {
        let mut a = arch.clone();
        match self {
            SweepAxis::KernelSize => {
                a.kernel_size = value
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("kernel size `{value}` is not an integer")))?
            }
            SweepAxis::Activation => a.activation = value.parse::<Activation>()?,
            SweepAxis::Stem => a.stem = value.parse::<StemKind>()?,
            SweepAxis::ActPlacement => a.act_placement = value.parse::<ActPlacement>()?,
            SweepAxis::NormPlacement => a.norm_placement = value.parse::<NormPlacement>()?,
        }
        a.validate()?;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub report: ExperimentReport,
    pub flops: u64,
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut s = String::from("axis,value,final_accuracy,best_accuracy,rounds_to_target,params,flops,tms\n");
    for r in rows {
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            axis.name(),
            r.value,
            r.report.final_accuracy,
            r.report.best_accuracy,
            opt(r.report.rounds_to_target.map(|x| x as u64)),
            r.report.params,
            r.flops,
            opt(r.report.tms)
        )
        .unwrap();
    }
    s
}

/// `sweep`: one federated run per axis value with the same seed, data and
/// partition. Each run lands in `out/<axis>=<value>/`; the combined table in
/// `out/sweep.csv`.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[String], out: &Path) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    // reject bad values before any training
    let archs = values
        .iter()
        .map(|v| axis.apply(&cfg.arch, v))
        .collect::<Result<Vec<_>>>()?;
    let (train, test) = load_data(cfg)?;
    let (partition, ks) = build_partition(cfg, &train)?;
    fs::create_dir_all(out)?;
    partition.save(&out.join(PARTITION_FILE))?;
    let mut rows = Vec::new();
    for (value, arch) in values.iter().zip(archs) {
        let run_cfg = ExperimentConfig {
            arch,
            ..cfg.clone()
        };
        let (report, _) = run_federated_with(&run_cfg, &train, &test, &partition, ks, |_, _| {})?;
        write_report(&report, &out.join(format!("{}={value}", axis.name())))?;
        rows.push(SweepRow {
            value: value.clone(),
            flops: count_flops(&run_cfg.arch)?,
            report,
        });
    }
    fs::write(out.join(SWEEP_FILE), sweep_csv(axis, &rows))?;
    Ok(rows)
}

/// `eval`: accuracy of a saved model on the configured test set.
pub fn eval(checkpoint_dir: &Path, cfg: &ExperimentConfig) -> Result<f64> {
    let mut model = Checkpoint::load(checkpoint_dir)?.restore_model()?;
    if model.config().num_classes != cfg.arch.num_classes
        || model.config().input_resolution != cfg.arch.input_resolution
    {
        return Err(Error::InvalidArgument(
            "checkpoint architecture does not match the dataset in the config".into(),
        ));
    }
    let (_, test) = load_data(cfg)?;
    evaluate(&mut model, &test)
}
