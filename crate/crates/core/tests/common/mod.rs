#![allow(dead_code)]

use cfta_core::{FeatureVector, PrototypeSet, SoftLabel};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Approximately standard normal (Irwin-Hall with 12 uniforms); enough for
/// generating test geometry.
pub fn normal(rng: &mut StdRng) -> f64 {
    (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0
}

pub fn gaussian(rng: &mut StdRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| normal(rng)).collect()
}

pub fn unit(rng: &mut StdRng, d: usize) -> FeatureVector {
    FeatureVector::normalized(gaussian(rng, d)).unwrap()
}

/// Uniform point in the interior of the simplex.
pub fn simplex(rng: &mut StdRng, k: usize) -> SoftLabel {
    let w: Vec<f64> = (0..k).map(|_| -(rng.random::<f64>().max(1e-300)).ln()).collect();
    let s: f64 = w.iter().sum();
    SoftLabel::new(w.iter().map(|v| v / s).collect()).unwrap()
}

pub struct Clusters {
    pub protos: PrototypeSet,
    pub xs: Vec<FeatureVector>,
    pub labels: Vec<usize>,
}

/// `k` clusters around random centres; prototypes are the centres moved by
/// `shift`, samples have per-coordinate noise `noise`. Rows are interleaved
/// by class.
pub fn clusters(seed: u64, k: usize, d: usize, n: usize, shift: f64, noise: f64) -> Clusters {
    let mut r = rng(seed);
    let anchor = gaussian(&mut r, d);
    let centres: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let g = gaussian(&mut r, d);
            let v: Vec<f64> = anchor.iter().zip(&g).map(|(a, b)| a + 0.5 * b).collect();
            FeatureVector::normalized(v).unwrap().into_inner()
        })
        .collect();
    let protos = PrototypeSet::new(
        centres
            .iter()
            .map(|c| {
                let v: Vec<f64> =
                    c.iter().map(|&x| x + shift * normal(&mut r) / (d as f64).sqrt()).collect();
                FeatureVector::normalized(v).unwrap()
            })
            .collect(),
    )
    .unwrap();
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        for (c, centre) in centres.iter().enumerate() {
            let v: Vec<f64> = centre.iter().map(|&x| x + noise * normal(&mut r)).collect();
            xs.push(FeatureVector::normalized(v).unwrap());
            labels.push(c);
        }
    }
    Clusters { protos, xs, labels }
}

pub fn accuracy(pred: impl IntoIterator<Item = (usize, usize)>) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, y) in pred {
        hit += (p == y) as usize;
        total += 1;
    }
    hit as f64 / total as f64
}

pub fn assert_finite_simplex(y: &SoftLabel) {
    assert!(y.as_slice().iter().all(|v| v.is_finite() && *v >= 0.0), "{:?}", y);
    assert!(cfta_core::types::check_simplex(y.as_slice()).is_ok(), "{:?}", y);
}
