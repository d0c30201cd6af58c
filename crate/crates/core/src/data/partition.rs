use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::data::ks::mean_pairwise_ks_counts;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientIndices {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

/// Client id → sample indices. Serialized as
/// `{"num_clients": n, "clients": [{"client_id": 0, "indices": [...]}, ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub num_clients: usize,
    pub clients: Vec<ClientIndices>,
}

impl Partition {
    pub fn new(clients: Vec<ClientIndices>) -> Self {
        Partition {
            num_clients: clients.len(),
            clients,
        }
    }

    fn from_lists(lists: Vec<Vec<usize>>) -> Self {
        Partition::new(
            lists
                .into_iter()
                .enumerate()
                .map(|(client_id, mut indices)| {
                    indices.sort_unstable();
                    ClientIndices { client_id, indices }
                })
                .collect(),
        )
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.indices.len()).collect()
    }

    /// Checks ids `0..num_clients`, indices below `dataset_len`, no client
    /// empty and, when `disjoint`, no index used twice.
    pub fn validate(&self, dataset_len: usize, disjoint: bool) -> Result<()> {
        if self.clients.len() != self.num_clients {
            return Err(Error::Partition(format!(
                "num_clients is {} but {} clients are listed",
                self.num_clients,
                self.clients.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for (k, c) in self.clients.iter().enumerate() {
            if c.client_id != k {
                return Err(Error::Partition(format!("client at position {k} has id {}", c.client_id)));
            }
            if c.indices.is_empty() {
                return Err(Error::Partition(format!("client {k} has no samples")));
            }
            for &i in &c.indices {
                if i >= dataset_len {
                    return Err(Error::Partition(format!(
                        "client {k} index {i} outside dataset of {dataset_len}"
                    )));
                }
                if disjoint && !seen.insert(i) {
                    return Err(Error::Partition(format!("index {i} assigned twice")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Partition::from_json(&fs::read_to_string(path)?)
    }
}

fn check_clients(num_clients: usize, len: usize) -> Result<()> {
    if num_clients == 0 {
        return Err(Error::Partition("need at least one client".into()));
    }
    if len < num_clients {
        return Err(Error::Partition(format!(
            "{len} samples cannot feed {num_clients} clients"
        )));
    }
    Ok(())
}

/// Indices of each class, each list shuffled with the partition stream.
fn shuffled_by_class(labels: &[usize], num_classes: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut r = rng::stream(seed, &[rng::STREAM_PARTITION]);
    for list in &mut by_class {
        list.shuffle(&mut r);
    }
    by_class
}

/// Deals every class's shuffled samples round-robin, the cursor carrying
/// over from class to class, so client sizes differ by at most one.
pub fn partition_iid(labels: &[usize], num_classes: usize, num_clients: usize, seed: u64) -> Result<Partition> {
    check_clients(num_clients, labels.len())?;
    let mut lists = vec![Vec::new(); num_clients];
    let mut cursor = 0;
    for class in shuffled_by_class(labels, num_classes, seed) {
        for i in class {
            lists[cursor % num_clients].push(i);
            cursor += 1;
        }
    }
    Ok(Partition::from_lists(lists))
}

/// Clients owning class `c` under the contiguous-block ownership pattern.
fn owners(c: usize, num_classes: usize, num_clients: usize) -> Vec<usize> {
    if num_classes >= num_clients {
        vec![c * num_clients / num_classes]
    } else {
        (0..num_clients)
            .filter(|&k| k * num_classes / num_clients == c)
            .collect()
    }
}

/// Integer split of `n` proportional to `shares` by largest remainders.
/// Ties go to the earliest entry of `order`.
fn largest_remainder(n: usize, shares: &[f64], order: &[usize]) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut rank: Vec<usize> = order.to_vec();
    rank.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra)
    });
    for &k in rank.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Per-class, per-client sample counts at skew `s` in `[0, 1]`: class `c`
/// sends a `(1 - s) / K` share to every client and splits the remaining `s`
/// among its owners.
fn skew_counts(class_sizes: &[usize], num_clients: usize, s: f64) -> Vec<Vec<usize>> {
    let num_classes = class_sizes.len();
    class_sizes
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let own = owners(c, num_classes, num_clients);
            let shares: Vec<f64> = (0..num_clients)
                .map(|k| {
                    let base = (1.0 - s) / num_clients as f64;
                    if own.contains(&k) {
                        base + s / own.len() as f64
                    } else {
                        base
                    }
                })
                .collect();
            let order: Vec<usize> = (0..num_clients).map(|k| (k + c) % num_clients).collect();
            largest_remainder(n, &shares, &order)
        })
        .collect()
}

fn client_histograms(per_class: &[Vec<usize>], num_clients: usize) -> Vec<Vec<usize>> {
    (0..num_clients)
        .map(|k| per_class.iter().map(|row| row[k]).collect())
        .collect()
}

fn skew_ks(class_sizes: &[usize], num_clients: usize, s: f64) -> Option<f64> {
    let per_class = skew_counts(class_sizes, num_clients, s);
    mean_pairwise_ks_counts(&client_histograms(&per_class, num_clients)).ok()
}

pub const BISECTION_STEPS: usize = 60;

/// Label-skewed partition whose mean pairwise KS lies within `tolerance` of
/// `target_ks`. The skew parameter `s` moves each class's mass from an even
/// spread (`s = 0`, the IID split) onto its owning clients (`s = 1`); it is
/// found by bisection and the resulting counts are filled from a seeded
/// per-class shuffle.
pub fn partition_label_skew(
    labels: &[usize],
    num_classes: usize,
    num_clients: usize,
    target_ks: f64,
    tolerance: f64,
    seed: u64,
) -> Result<Partition> {
    check_clients(num_clients, labels.len())?;
    if !(0.0..=1.0).contains(&target_ks) || !(tolerance > 0.0) {
        return Err(Error::Partition(format!(
            "target KS {target_ks} must lie in [0, 1] and tolerance {tolerance} must be positive"
        )));
    }
    if target_ks == 0.0 {
        return partition_iid(labels, num_classes, num_clients, seed);
    }
    let mut class_sizes = vec![0; num_classes];
    for &l in labels {
        class_sizes[l] += 1;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut found = None;
    for _ in 0..BISECTION_STEPS {
        let s = 0.5 * (lo + hi);
        let Some(ks) = skew_ks(&class_sizes, num_clients, s) else {
            // some client went empty: too much skew
            hi = s;
            continue;
        };
        if (ks - target_ks).abs() <= tolerance {
            found = Some(s);
            break;
        }
        if ks < target_ks {
            lo = s;
        } else {
            hi = s;
        }
    }
    let Some(s) = found else {
        let reach = skew_ks(&class_sizes, num_clients, 1.0).unwrap_or(f64::NAN);
        return Err(Error::Partition(format!(
            "target KS {target_ks} ± {tolerance} not reached after {BISECTION_STEPS} bisection steps \
             (fully skewed split gives {reach:.4})"
        )));
    };
    let per_class = skew_counts(&class_sizes, num_clients, s);
    let mut lists = vec![Vec::new(); num_clients];
    for (c, class) in shuffled_by_class(labels, num_classes, seed).into_iter().enumerate() {
        let mut it = class.into_iter();
        for (k, &n) in per_class[c].iter().enumerate() {
            lists[k].extend(it.by_ref().take(n));
        }
    }
    Ok(Partition::from_lists(lists))
}
