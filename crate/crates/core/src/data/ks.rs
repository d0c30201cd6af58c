use crate::data::Partition;
use crate::error::{Error, Result};

/// Per-class probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("negative or non-finite probability in {probs:?}")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {s}")));
        }
        Ok(LabelDistribution(probs))
    }

    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Partition("label distribution of an empty client".into()));
        }
        Ok(LabelDistribution(
            counts.iter().map(|&c| c as f64 / total as f64).collect(),
        ))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

/// Largest gap between the two cumulative distributions, classes in index
/// order.
pub fn ks_two(p: &LabelDistribution, q: &LabelDistribution) -> f64 {
    assert_eq!(p.0.len(), q.0.len(), "distributions over different class counts");
    let (mut cp, mut cq, mut best) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in p.0.iter().zip(&q.0) {
        cp += a;
        cq += b;
        best = best.max((cp - cq).abs());
    }
    best.min(1.0)
}

pub(crate) fn mean_pairwise_ks_counts(counts: &[Vec<usize>]) -> Result<f64> {
    let dists = counts
        .iter()
        .map(|c| LabelDistribution::from_counts(c))
        .collect::<Result<Vec<_>>>()?;
    let k = dists.len();
    if k < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            sum += ks_two(&dists[i], &dists[j]);
        }
    }
    Ok(sum / (k * (k - 1) / 2) as f64)
}

/// Mean of [`ks_two`] over all unordered client pairs.
pub fn mean_pairwise_ks(partition: &Partition, labels: &[usize], num_classes: usize) -> Result<f64> {
    let counts = partition
        .clients
        .iter()
        .map(|c| {
            let mut h = vec![0; num_classes];
            for &i in &c.indices {
                let l = *labels
                    .get(i)
                    .ok_or_else(|| Error::Partition(format!("index {i} outside {} labels", labels.len())))?;
                if l >= num_classes {
                    return Err(Error::Partition(format!("label {l} outside 0..{num_classes}")));
                }
                h[l] += 1;
            }
            Ok(h)
        })
        .collect::<Result<Vec<_>>>()?;
    mean_pairwise_ks_counts(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClientIndices;

    fn d(p: &[f64]) -> LabelDistribution {
        LabelDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_two(&d(&[0.2, 0.8]), &d(&[0.2, 0.8])), 0.0);
        assert_eq!(ks_two(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])), 1.0);
        assert!((ks_two(&d(&[0.7, 0.3]), &d(&[0.3, 0.7])) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_distributions() {
        assert!(LabelDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(LabelDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(LabelDistribution::from_counts(&[0, 0]).is_err());
    }

    #[test]
    fn three_client_hand_case() {
        // classes: client0 {0,0}, client1 {1,1}, client2 {0,1}
        let labels = [0, 0, 1, 1, 0, 1];
        let p = Partition::new(vec![
            ClientIndices { client_id: 0, indices: vec![0, 1] },
            ClientIndices { client_id: 1, indices: vec![2, 3] },
            ClientIndices { client_id: 2, indices: vec![4, 5] },
        ]);
        // pairs: (0,1) = 1, (0,2) = 0.5, (1,2) = 0.5
        let ks = mean_pairwise_ks(&p, &labels, 2).unwrap();
        assert!((ks - 2.0 / 3.0).abs() < 1e-15);
    }
}
