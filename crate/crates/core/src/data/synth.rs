use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng;

const NOISE_STD: f64 = 24.0;
const GRATING_AMPLITUDE: f64 = 48.0;
const TINT_AMPLITUDE: f64 = 20.0;

/// Oriented sinusoidal gratings, one orientation and spatial frequency per
/// class, with a weak class color tint, random phase and contrast per image
/// and Gaussian pixel noise. Sample `i` has label `i % num_classes`.
pub fn synth_dataset(
    seed: u64,
    num_classes: usize,
    per_class: usize,
    resolution: usize,
    split: Split,
) -> Result<Dataset> {
    if num_classes < 2 || per_class == 0 || resolution == 0 {
        return Err(Error::Dataset(format!(
            "synthetic data needs >= 2 classes, >= 1 sample per class and a positive resolution \
             (got {num_classes}, {per_class}, {resolution})"
        )));
    }
    let stream = match split {
        Split::Train => rng::STREAM_TRAIN_DATA,
        Split::Test => rng::STREAM_TEST_DATA,
    };
    let mut r = rng::stream(seed, &[stream]);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let n = num_classes * per_class;
    let plane = resolution * resolution;
    let mut images = Vec::with_capacity(n * 3 * plane);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % num_classes;
        let theta = PI * c as f64 / num_classes as f64;
        let cycles = 2.0 + (c % 3) as f64;
        let (ct, st) = (theta.cos(), theta.sin());
        let phase = r.random::<f64>() * 2.0 * PI;
        let contrast = 0.7 + 0.6 * r.random::<f64>();
        for ch in 0..3 {
            let tint =
                TINT_AMPLITUDE * (2.0 * PI * (c as f64 / num_classes as f64 + ch as f64 / 3.0)).cos();
            for y in 0..resolution {
                for x in 0..resolution {
                    let u = (x as f64 * ct + y as f64 * st) / resolution as f64;
                    let wave = (2.0 * PI * cycles * u + phase).sin();
                    let v = 128.0 + tint + GRATING_AMPLITUDE * contrast * wave + noise.sample(&mut r);
                    images.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        labels.push(c);
    }
    Dataset::new(images, labels, [3, resolution, resolution], num_classes, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = synth_dataset(5, 4, 10, 8, Split::Train).unwrap();
        let b = synth_dataset(5, 4, 10, 8, Split::Train).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(&a.all_indices()), vec![10; 4]);
        let t = synth_dataset(5, 4, 10, 8, Split::Test).unwrap();
        assert_ne!(a.image(0), t.image(0));
    }

    #[test]
    fn nearest_centroid_beats_chance() {
        let k = 4;
        let train = synth_dataset(1, k, 50, 16, Split::Train).unwrap();
        let test = synth_dataset(1, k, 25, 16, Split::Test).unwrap();
        let dim = 3 * 16 * 16;
        let mut centroids = vec![vec![0.0; dim]; k];
        for i in 0..train.len() {
            for (c, &p) in centroids[train.labels()[i]].iter_mut().zip(train.image(i)) {
                *c += p as f64 / 50.0;
            }
        }
        let correct = (0..test.len())
            .filter(|&i| {
                let img = test.image(i);
                let best = (0..k)
                    .min_by(|&a, &b| {
                        let da: f64 = centroids[a].iter().zip(img).map(|(c, &p)| (c - p as f64).powi(2)).sum();
                        let db: f64 = centroids[b].iter().zip(img).map(|(c, &p)| (c - p as f64).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                best == test.labels()[i]
            })
            .count();
        assert!(correct as f64 / test.len() as f64 > 1.0 / k as f64 + 0.2, "{correct}/{}", test.len());
    }
}
