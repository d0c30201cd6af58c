//! Mean activation statistics.

use crate::arch::model::{Mode, Model};
use crate::autodiff::Graph;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStats {
    /// `(layer name, mean output)` for every activation layer, in forward order.
    pub per_layer: Vec<(String, f64)>,
    /// Uniform mean over layers.
    pub global: f64,
}

/// Runs `batch` through `model` in eval mode and averages each activation
/// layer's output.
pub fn mean_activation_stat(model: &mut Model, batch: Tensor) -> Result<ActivationStats> {
    let mut g = Graph::new();
    let x = g.input(batch);
    let out = model.forward(&mut g, x, Mode::Eval)?;
    let per_layer: Vec<(String, f64)> = model
        .spec()
        .activation_names
        .iter()
        .cloned()
        .zip(out.activation_means)
        .collect();
    let global = if per_layer.is_empty() {
        0.0
    } else {
        per_layer.iter().map(|(_, m)| m).sum::<f64>() / per_layer.len() as f64
    };
    Ok(ActivationStats { per_layer, global })
}

/// Mean of `activation` applied to `samples` standard-normal draws.
pub fn gaussian_activation_mean(activation: crate::autodiff::Activation, samples: usize, seed: u64) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = crate::rng::stream(seed, &[0x6d65_616e]);
    let mut sum = 0.0;
    for _ in 0..samples {
        let z: f64 = StandardNormal.sample(&mut r);
        sum += activation.apply(z);
    }
    sum / samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::config::{ArchConfig, BlockKind};
    use crate::autodiff::Activation;

    fn stats_for(act: Activation) -> ActivationStats {
        let mut cfg = ArchConfig::fedconv_tiny(BlockKind::Invert, 4);
        cfg.activation = act;
        let mut m = Model::new(&cfg, 5).unwrap();
        let data = (0..2 * 3 * 32 * 32).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        mean_activation_stat(&mut m, Tensor::new(vec![2, 3, 32, 32], data).unwrap()).unwrap()
    }

    #[test]
    fn relu_means_are_non_negative() {
        let s = stats_for(Activation::Relu);
        assert!(!s.per_layer.is_empty());
        assert!(s.per_layer.iter().all(|(_, m)| *m >= 0.0));
    }

    #[test]
    fn softplus_means_are_positive() {
        let s = stats_for(Activation::Softplus);
        assert!(s.per_layer.iter().all(|(_, m)| *m > 0.0));
        assert!(s.global > 0.0);
    }
}
