//! Server aggregation rules. Every rule visits clients in ascending id order,
//! so the result does not depend on the order updates arrive in.

use crate::arch::{EntryKind, StateDict};
use crate::error::{Error, Result};
use crate::fl::method::YogiConfig;
use crate::tensor::Tensor;

/// A client's weights after local training.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub num_samples: usize,
    pub state: StateDict,
}

/// Updates sorted by client id with their `n_k / sum(n)` weights.
fn weighted(updates: &[ClientUpdate]) -> Result<(Vec<&ClientUpdate>, Vec<f64>)> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    let first = *sorted
        .first()
        .ok_or_else(|| Error::Aggregation("no client updates".into()))?;
    for pair in sorted.windows(2) {
        if pair[0].client_id == pair[1].client_id {
            return Err(Error::Aggregation(format!("client {} reported twice", pair[0].client_id)));
        }
    }
    for u in &sorted[1..] {
        first.state.check_same_registry(&u.state)?;
    }
    let total: usize = sorted.iter().map(|u| u.num_samples).sum();
    if total == 0 {
        return Err(Error::Aggregation("clients reported zero samples".into()));
    }
    let w = sorted.iter().map(|u| u.num_samples as f64 / total as f64).collect();
    Ok((sorted, w))
}

/// `sum_k w_k * f(x_k)` for entry `idx`, accumulated from the first client.
fn weighted_entry(
    sorted: &[&ClientUpdate],
    weights: &[f64],
    idx: usize,
    f: impl Fn(&Tensor) -> Tensor,
) -> Tensor {
    let mut acc = f(&sorted[0].state.entries[idx].tensor);
    acc.scale(weights[0]);
    for (u, &w) in sorted.iter().zip(weights).skip(1) {
        acc.axpy(w, &f(&u.state.entries[idx].tensor));
    }
    acc
}

fn average_where(updates: &[ClientUpdate], base: Option<&StateDict>, skip: impl Fn(usize) -> bool) -> Result<StateDict> {
    let (sorted, w) = weighted(updates)?;
    let mut out = base.cloned().unwrap_or_else(|| sorted[0].state.clone());
    out.check_same_registry(&sorted[0].state)?;
    for idx in 0..out.entries.len() {
        if !skip(idx) {
            out.entries[idx].tensor = weighted_entry(&sorted, &w, idx, Tensor::clone);
        }
    }
    Ok(out)
}

/// Sample-count weighted mean of every entry.
pub fn aggregate_fedavg(updates: &[ClientUpdate]) -> Result<StateDict> {
    average_where(updates, None, |_| false)
}

/// FedAVG over every non-batch-norm entry; batch-norm entries keep the
/// values of `global`.
pub fn aggregate_fedbn(updates: &[ClientUpdate], global: &StateDict) -> Result<StateDict> {
    average_where(updates, Some(global), |i| global.entries[i].batch_norm)
}

/// Server Yogi moments, one pair per state entry (only parameter entries
/// are ever touched).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct YogiState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub steps: u64,
}

/// Applies Yogi to the weighted mean client delta of every parameter entry;
/// buffers are plain FedAVG.
pub fn yogi_server_step(
    state: &mut YogiState,
    cfg: &YogiConfig,
    global: &StateDict,
    updates: &[ClientUpdate],
) -> Result<StateDict> {
    let (sorted, w) = weighted(updates)?;
    global.check_same_registry(&sorted[0].state)?;
    if state.m.is_empty() {
        state.m = global.entries.iter().map(|e| Tensor::zeros_like(&e.tensor)).collect();
        state.v = global
            .entries
            .iter()
            .map(|e| Tensor::full(e.tensor.shape(), cfg.tau * cfg.tau))
            .collect();
    }
    let mut out = global.clone();
    for (idx, entry) in out.entries.iter_mut().enumerate() {
        if entry.kind == EntryKind::Buffer {
            entry.tensor = weighted_entry(&sorted, &w, idx, Tensor::clone);
            continue;
        }
        let g = &global.entries[idx].tensor;
        let delta = weighted_entry(&sorted, &w, idx, |x| {
            let mut d = x.clone();
            d.axpy(-1.0, g);
            d
        });
        let (m, v) = (state.m[idx].data_mut(), state.v[idx].data_mut());
        for (i, p) in entry.tensor.data_mut().iter_mut().enumerate() {
            let d = delta.data()[i];
            let d2 = d * d;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * d;
            v[i] -= (1.0 - cfg.beta2) * d2 * sign(v[i] - d2);
            *p += cfg.eta_server * m[i] / (v[i].sqrt() + cfg.tau);
        }
    }
    state.steps += 1;
    Ok(out)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
