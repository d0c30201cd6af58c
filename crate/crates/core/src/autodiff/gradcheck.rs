//! Central-difference gradient oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compares reverse-mode gradients of `op` at `point` against central
/// differences with step `eps`, returning the largest
/// `|a - b| / max(1, |a|, |b|)` over every input element.
///
/// Non-scalar outputs are reduced with a fixed pseudo-random weighting so
/// every output element contributes.
pub fn finite_diff_check<F>(op: F, point: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let mut weights: Option<Tensor> = None;
    let mut eval = |inputs: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = op(&mut g, &vars)?;
        let w = weights
            .get_or_insert_with(|| {
                let shape = g.value(out).shape().to_vec();
                let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
                let data = (0..g.value(out).numel())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                Tensor::new(shape, data).expect("weights match output shape")
            })
            .clone();
        let loss = g.weighted_sum(out, w)?;
        Ok((g, vars, loss))
    };

    let (g, vars, loss) = eval(point)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(&g, v)).collect();

    let mut worst: f64 = 0.0;
    let mut probe = point.to_vec();
    for (j, a) in analytic.iter().enumerate() {
        for e in 0..point[j].numel() {
            let orig = point[j].data()[e];
            probe[j].data_mut()[e] = orig + eps;
            let (gp, _, lp) = eval(&probe)?;
            probe[j].data_mut()[e] = orig - eps;
            let (gm, _, lm) = eval(&probe)?;
            probe[j].data_mut()[e] = orig;
            let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * eps);
            let exact = a.data()[e];
            let rel = (exact - numeric).abs() / 1f64.max(exact.abs()).max(numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
