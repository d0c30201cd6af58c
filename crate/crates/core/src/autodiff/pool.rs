use crate::autodiff::conv::output_size;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Max pooling with implicit `-inf` padding. Returns the output and, per
/// output element, the linear input index it was taken from. Ties go to the
/// lowest index.
pub(crate) fn maxpool2d_forward(
    x: &Tensor,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = x.shape() else {
        return Err(Error::Shape(format!("maxpool expects rank 4, got {:?}", x.shape())));
    };
    let (n, c, h, w) = (*n, *c, *h, *w);
    if padding > k / 2 {
        return Err(Error::InvalidArgument(format!(
            "padding {padding} too large for pooling window {k}"
        )));
    }
    let ho = output_size(h, k, stride, padding)?;
    let wo = output_size(w, k, stride, padding)?;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let i = base + iy as usize * w + ix as usize;
                        if best_i == usize::MAX || xd[i] > best {
                            best = xd[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_i);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, argmax))
}

pub(crate) fn maxpool2d_backward(shape: &[usize], argmax: &[usize], dy: &Tensor) -> Result<Tensor> {
    let mut dx = Tensor::zeros(shape);
    let d = dx.data_mut();
    for (g, &i) in dy.data().iter().zip(argmax) {
        d[i] += g;
    }
    Ok(dx)
}

pub(crate) fn global_avg_pool_forward(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.shape() else {
        return Err(Error::Shape(format!(
            "global average pool expects rank 4, got {:?}",
            x.shape()
        )));
    };
    let plane = h * w;
    if plane == 0 {
        return Err(Error::Shape("global average pool over empty plane".into()));
    }
    let out = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new(vec![*n, *c], out)
}

pub(crate) fn global_avg_pool_backward(shape: &[usize], dy: &Tensor) -> Result<Tensor> {
    let plane = shape[2] * shape[3];
    let inv = 1.0 / plane as f64;
    let data = dy
        .data()
        .iter()
        .flat_map(|g| std::iter::repeat_n(g * inv, plane))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_enumerated_windows() {
        let x = Tensor::new(vec![1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let (y, _) = maxpool2d_forward(&x, 2, 2, 0).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn maxpool_constant_input_and_tie_rule() {
        let x = Tensor::full(&[1, 2, 4, 4], 1.5);
        let (y, arg) = maxpool2d_forward(&x, 2, 2, 0).unwrap();
        assert!(y.data().iter().all(|v| *v == 1.5));
        // ties resolve to the top-left element of each window
        assert_eq!(&arg[..4], &[0, 2, 8, 10]);
    }

    #[test]
    fn maxpool_gradient_routes_to_max() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![0.1, 0.9, 0.3, 0.2]).unwrap();
        let (_, arg) = maxpool2d_forward(&x, 2, 2, 0).unwrap();
        let dx = maxpool2d_backward(x.shape(), &arg, &Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_rejects_oversized_window() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(maxpool2d_forward(&x, 3, 1, 0).is_err());
    }

    #[test]
    fn gap_mean_and_uniform_grad() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        let y = global_avg_pool_forward(&x).unwrap();
        assert_eq!(y.data(), &[3.0]);
        let dx = global_avg_pool_backward(x.shape(), &Tensor::full(&[1, 1], 1.0)).unwrap();
        assert_eq!(dx.data(), &[0.25; 4]);
    }
}
