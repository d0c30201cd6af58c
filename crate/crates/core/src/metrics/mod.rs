//! Evaluation, communication cost, reports and checkpoints.

pub mod checkpoint;
pub mod report;

pub use checkpoint::Checkpoint;
pub use report::{read_rounds_csv, write_report, ExperimentReport, RoundRecord};

use crate::arch::Model;
use crate::data::Dataset;
use crate::error::{Error, Result};

pub const EVAL_BATCH_SIZE: usize = 250;

/// Top-1 accuracy in percent, eval-mode normalizers.
pub fn evaluate(model: &mut Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let indices = data.all_indices();
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_BATCH_SIZE) {
        let (x, y) = data.batch(chunk)?;
        let pred = model.predict(x)?;
        correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(accuracy_percent(correct, data.len()))
}

pub fn accuracy_percent(correct: usize, total: usize) -> f64 {
    100.0 * correct as f64 / total as f64
}

/// First round whose accuracy reaches `target_pct`.
pub fn rounds_to_target(records: &[RoundRecord], target_pct: f64) -> Option<usize> {
    records
        .iter()
        .find(|r| r.accuracy >= target_pct)
        .map(|r| r.round)
}

/// Transmitted message size: parameters times communication rounds.
pub fn tms(params: u64, rounds: u64) -> u64 {
    params * rounds
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(round: usize, accuracy: f64) -> RoundRecord {
        RoundRecord {
            round,
            accuracy,
            loss: None,
            seconds: 0.0,
            client_samples: vec![],
        }
    }

    #[test]
    fn rounds_to_target_examples() {
        let r = [rec(0, 10.0), rec(1, 80.0), rec(2, 91.0)];
        assert_eq!(rounds_to_target(&r, 90.0), Some(2));
        assert_eq!(rounds_to_target(&r, 95.0), None);
        assert_eq!(rounds_to_target(&r, 91.0), Some(2));
    }

    #[test]
    fn tms_examples() {
        assert_eq!(tms(25_600_000, 5), 128_000_000);
        assert_eq!(tms(25_600_000, 0), 0);
    }

    #[test]
    fn accuracy_by_hand() {
        // predictions (2, 0, 1) against labels (2, 1, 1)
        let correct = [2, 0, 1].iter().zip(&[2, 1, 1]).filter(|(p, t)| p == t).count();
        assert!((accuracy_percent(correct, 3) - 200.0 / 3.0).abs() < 1e-12);
    }
}
