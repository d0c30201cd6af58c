use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 0 is the evaluation of the initial model.
    pub round: usize,
    /// Global test accuracy in percent.
    pub accuracy: f64,
    /// Sample-weighted mean training loss of the round; absent for round 0.
    pub loss: Option<f64>,
    /// Wall-clock time of the round. Kept out of `report.json` so that file
    /// is reproducible byte for byte.
    #[serde(skip)]
    pub seconds: f64,
    /// Training samples seen by each participating client, by client id.
    pub client_samples: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// "federated" or "central".
    pub mode: String,
    pub config: serde_json::Value,
    pub rounds: Vec<RoundRecord>,
    pub target_accuracy: Option<f64>,
    pub rounds_to_target: Option<usize>,
    pub params: u64,
    pub tms: Option<u64>,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub partition_ks: Option<f64>,
}

impl ExperimentReport {
    /// Fills the derived fields from `rounds`.
    pub fn new(
        mode: &str,
        config: serde_json::Value,
        rounds: Vec<RoundRecord>,
        target_accuracy: Option<f64>,
        params: u64,
        partition_ks: Option<f64>,
    ) -> Self {
        let rtt = target_accuracy.and_then(|t| super::rounds_to_target(&rounds, t));
        let final_accuracy = rounds.last().map_or(0.0, |r| r.accuracy);
        let best_accuracy = rounds.iter().map(|r| r.accuracy).fold(0.0, f64::max);
        ExperimentReport {
            mode: mode.to_string(),
            config,
            target_accuracy,
            rounds_to_target: rtt,
            params,
            tms: rtt.map(|r| super::tms(params, r as u64)),
            final_accuracy,
            best_accuracy,
            partition_ks,
            rounds,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn rounds_csv(records: &[RoundRecord]) -> String {
    let mut s = String::from("round,accuracy,loss,seconds\n");
    for r in records {
        let loss = r.loss.map(|l| l.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{},{}", r.round, r.accuracy, loss, r.seconds).unwrap();
    }
    s
}

/// Writes `rounds.csv` and `report.json` into `dir`, creating it if needed.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("rounds.csv"), rounds_csv(&report.rounds))?;
    fs::write(dir.join("report.json"), report.to_json()?)?;
    Ok(())
}

/// Parses a `rounds.csv`; `client_samples` is not part of the CSV and comes
/// back empty.
pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("round,accuracy,loss,seconds") {
        return Err(Error::InvalidArgument(format!("{}: unexpected header", path.display())));
    }
    let bad = |line: &str| Error::InvalidArgument(format!("{}: bad row `{line}`", path.display()));
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(line));
            }
            Ok(RoundRecord {
                round: f[0].parse().map_err(|_| bad(line))?,
                accuracy: f[1].parse().map_err(|_| bad(line))?,
                loss: match f[2] {
                    "" => None,
                    v => Some(v.parse().map_err(|_| bad(line))?),
                },
                seconds: f[3].parse().map_err(|_| bad(line))?,
                client_samples: Vec::new(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentReport {
        let rounds = vec![
            RoundRecord {
                round: 0,
                accuracy: 25.0,
                loss: None,
                seconds: 0.012345678901234,
                client_samples: vec![],
            },
            RoundRecord {
                round: 1,
                accuracy: 100.0 / 3.0,
                loss: Some(1.0 / 7.0),
                seconds: 1.5,
                client_samples: vec![10, 12],
            },
        ];
        ExperimentReport::new("federated", serde_json::json!({"seed": 1}), rounds, Some(30.0), 1000, Some(0.25))
    }

    #[test]
    fn derived_fields() {
        let r = sample();
        assert_eq!(r.rounds_to_target, Some(1));
        assert_eq!(r.tms, Some(1000));
        assert_eq!(r.final_accuracy, 100.0 / 3.0);
    }

    #[test]
    fn csv_roundtrips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample();
        write_report(&r, dir.path()).unwrap();
        let back = read_rounds_csv(&dir.path().join("rounds.csv")).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&r.rounds) {
            assert_eq!((a.round, a.accuracy.to_bits(), a.loss.map(f64::to_bits), a.seconds.to_bits()),
                       (b.round, b.accuracy.to_bits(), b.loss.map(f64::to_bits), b.seconds.to_bits()));
        }
    }

    #[test]
    fn json_omits_wall_clock() {
        let j = sample().to_json().unwrap();
        assert!(!j.contains("seconds"));
        let back: ExperimentReport = serde_json::from_str(&j).unwrap();
        assert_eq!(back.rounds[1].accuracy, 100.0 / 3.0);
    }
}
