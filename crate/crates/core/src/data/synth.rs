use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Gaussian blobs around class centres drawn uniformly on the unit sphere.
/// Samples are class-major: `per_class` rows of class 0, then class 1, ...
pub fn synth_clusters(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::config("data.sigma", "must be a positive finite number"));
    }
    if num_classes == 0 || per_class == 0 {
        return Err(Error::config(
            "data.per_class",
            "need at least one class and one sample per class",
        ));
    }
    if dim == 0 {
        return Err(Error::config("data.dim", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut mu: Vec<f64> = loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            if v.iter().any(|x| *x != 0.0) {
                break v;
            }
        };
        let n = mu.iter().map(|x| x * x).sum::<f64>().sqrt();
        mu.iter_mut().for_each(|x| *x /= n);
        centres.push(mu);
    }
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mu) in centres.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mu {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + sigma * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_clusters(3, 5, 4, 0.1, 9).unwrap();
        let b = synth_clusters(3, 5, 4, 0.1, 9).unwrap();
        assert_eq!(a.features.to_bytes(), b.features.to_bytes());
        assert_eq!(a.labels, b.labels);
        let c = synth_clusters(3, 5, 4, 0.1, 10).unwrap();
        assert_ne!(a.features.to_bytes(), c.features.to_bytes());
    }

    #[test]
    fn tiny_sigma_collapses_to_centres() {
        let ds = synth_clusters(3, 6, 5, 1e-300, 1).unwrap();
        for c in 0..3 {
            let first = ds.features.row(c * 5).to_vec();
            let norm: f64 = first.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            for i in 1..5 {
                assert_eq!(ds.features.row(c * 5 + i), first.as_slice());
            }
        }
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        for s in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                synth_clusters(2, 2, 2, s, 0),
                Err(Error::Config { .. })
            ));
        }
    }

    #[test]
    fn linear_classifier_separates_tight_clusters() {
        use crate::autodiff::Graph;
        let ds = synth_clusters(4, 16, 50, 0.05, 3).unwrap();
        let mut w = Tensor::zeros(&[4, 16]);
        let mut b = Tensor::zeros(&[4]);
        for _ in 0..50 {
            let mut g = Graph::new();
            let x = g.constant(ds.features.clone());
            let wv = g.param("w", w.clone());
            let bv = g.param("b", b.clone());
            let z = g.matmul_nt(x, wv).unwrap();
            let z = g.add(z, bv).unwrap();
            let loss = g.cross_entropy(z, &ds.labels).unwrap();
            let grads = g.backward(loss).unwrap();
            w.axpy(-1.0, grads.get("w").unwrap()).unwrap();
            b.axpy(-1.0, grads.get("b").unwrap()).unwrap();
        }
        let logits = ds.features.clone();
        let mut correct = 0;
        for i in 0..ds.len() {
            let x = logits.row(i);
            let scores: Vec<f64> = (0..4)
                .map(|c| b.data()[c] + w.row(c).iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let pred = (0..4)
                .fold(0, |best, c| if scores[c] > scores[best] { c } else { best });
            correct += usize::from(pred == ds.labels[i]);
        }
        assert!(correct as f64 / ds.len() as f64 >= 0.99, "{correct}");
    }
}
