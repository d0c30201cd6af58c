use crate::error::Result;
use crate::optim::adamw::check_grads;
use crate::tensor::Tensor;

/// Plain SGD with an optional heavy-ball buffer:
/// `buf <- momentum * buf + g`, `p <- p - lr * buf`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub momentum: f64,
    pub buf: Vec<Tensor>,
    pub t: u64,
}

impl SgdState {
    pub fn new(momentum: f64) -> Self {
        SgdState {
            momentum,
            buf: Vec::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        check_grads(params, grads)?;
        self.t += 1;
        if self.momentum == 0.0 {
            for (p, g) in params.iter_mut().zip(grads) {
                p.axpy(-lr, g);
            }
            return Ok(());
        }
        if self.buf.is_empty() {
            self.buf = grads.to_vec();
        } else {
            for (b, g) in self.buf.iter_mut().zip(grads) {
                b.scale(self.momentum);
                b.axpy(1.0, g);
            }
        }
        for (p, b) in params.iter_mut().zip(&self.buf) {
            p.axpy(-lr, b);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn unit_lr_subtracts_gradient() {
        let mut s = SgdState::new(0.0);
        let mut p = vec![t(2.0)];
        s.step(&mut p, &[t(0.75)], 1.0).unwrap();
        assert_eq!(p[0].data()[0], 1.25);
        s.step(&mut p, &[t(0.75)], 0.0).unwrap();
        assert_eq!(p[0].data()[0], 1.25);
    }

    #[test]
    fn momentum_two_steps_by_hand() {
        let (lr, mu, g1, g2) = (0.1, 0.9, 1.0, -0.5);
        let mut s = SgdState::new(mu);
        let mut p = vec![t(1.0)];
        s.step(&mut p, &[t(g1)], lr).unwrap();
        s.step(&mut p, &[t(g2)], lr).unwrap();
        let p1 = 1.0 - lr * g1;
        let p2 = p1 - lr * (mu * g1 + g2);
        assert!((p[0].data()[0] - p2).abs() < 1e-15);
    }
}
