use rand::seq::index::sample;

use crate::data::{ClientIndices, Partition};
use crate::error::{Error, Result};
use crate::rng;

/// Draws `ceil(fraction * n_k)` of each client's indices without replacement
/// and appends the union of the draws to every client.
pub fn build_shared_pool(partition: &Partition, fraction: f64, seed: u64) -> Result<Partition> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("share fraction {fraction} outside [0, 1)")));
    }
    let mut pool = Vec::new();
    for c in &partition.clients {
        let n = c.indices.len();
        // the epsilon keeps e.g. 0.05 * 100 from rounding up to 6
        let take = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
        let mut r = rng::stream(seed, &[rng::STREAM_SHARE, c.client_id as u64]);
        let mut picked: Vec<usize> = sample(&mut r, n, take.min(n)).into_iter().map(|i| c.indices[i]).collect();
        picked.sort_unstable();
        pool.extend(picked);
    }
    Ok(Partition::new(
        partition
            .clients
            .iter()
            .map(|c| {
                let mut indices = c.indices.clone();
                indices.extend_from_slice(&pool);
                ClientIndices {
                    client_id: c.client_id,
                    indices,
                }
            })
            .collect(),
    ))
}
