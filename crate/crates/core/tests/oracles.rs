//! Library outputs checked against independent, deliberately naive oracles.

#![allow(clippy::needless_range_loop)]

mod common;

use cfta_core::bank::fill_top_l;
use cfta_core::gaussian::{means_online, means_transductive, pooled_covariance, shrinkage_precision};
use cfta_core::linalg::Matrix;
use cfta_core::zeroshot::zero_shot_logits;
use cfta_core::*;
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.dim(), m.dim(), m.as_slice())
}

#[test]
fn zero_shot_matches_reciprocal_sum_form() {
    let mut r = rng(1);
    for _ in 0..200 {
        let k = r.random_range(2..12);
        let d = r.random_range(2..40);
        let protos = PrototypeSet::new((0..k).map(|_| unit(&mut r, d)).collect()).unwrap();
        let x = unit(&mut r, d);
        let tau = [0.01, 0.05, 1.0][r.random_range(0..3)];
        let y = zero_shot(&x, &protos, tau).unwrap();
        // p_k = 1 / sum_j exp(l_j - l_k) with l = t . x / tau
        let l: Vec<f64> = protos
            .iter()
            .map(|t| t.as_slice().iter().zip(x.as_slice()).map(|(a, b)| a * b).sum::<f64>() / tau)
            .collect();
        for kk in 0..k {
            let p = 1.0 / l.iter().map(|lj| (lj - l[kk]).exp()).sum::<f64>();
            assert!((y.get(kk) - p).abs() < 1e-12, "{} vs {}", y.get(kk), p);
        }
        assert_eq!(zero_shot_logits(&x, &protos, tau).unwrap().len(), k);
    }
}

#[test]
fn confidence_extremes() {
    for k in 2..10 {
        let mut onehot = vec![0.0; k];
        onehot[k / 2] = 1.0;
        assert_eq!(confidence(&SoftLabel::new(onehot).unwrap()).value(), 0.0);
        let u = confidence(&SoftLabel::uniform(k)).value();
        assert!((u + (k as f64).ln()).abs() < 1e-12);
    }
}

/// Brute-force top-L per argmax class: sort by (confidence desc, seq desc).
fn brute_top_l(cands: &[(usize, f64, u64)], k: usize, l: usize) -> Vec<Vec<u64>> {
    (0..k)
        .map(|c| {
            let mut v: Vec<_> = cands.iter().filter(|e| e.0 == c).collect();
            v.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.cmp(&a.2)));
            let mut seqs: Vec<u64> = v.iter().take(l).map(|e| e.2).collect();
            seqs.sort();
            seqs
        })
        .collect()
}

fn bank_seqs(bank: &KnowledgeBank) -> Vec<Vec<u64>> {
    (0..bank.num_classes())
        .map(|c| {
            let mut s: Vec<u64> = bank.entries(c).map(|e| e.seq()).collect();
            s.sort();
            s
        })
        .collect()
}

#[test]
fn bank_equals_brute_force_top_l() {
    let mut r = rng(2);
    let (k, d) = (5, 4);
    for trial in 0..30 {
        let l = [1, 3, 6, 16][trial % 4];
        let mut bank = KnowledgeBank::new(k, l);
        let mut cands = Vec::new();
        let mut entries = Vec::new();
        for seq in 0..300u64 {
            let logits: Vec<f64> = (0..k).map(|_| 3.0 * normal(&mut r)).collect();
            let mut p = logits.clone();
            cfta_core::math::softmax_in_place(&mut p);
            let y = SoftLabel::new(p).unwrap();
            let e = BankEntry::new(unit(&mut r, d), y.clone(), seq);
            cands.push((y.argmax(), e.confidence(), seq));
            entries.push(e.clone());
            bank.try_insert(y.argmax(), e).unwrap();
            assert!((0..k).all(|c| bank.class_len(c) <= l));
        }
        let expect = brute_top_l(&cands, k, l);
        assert_eq!(bank_seqs(&bank), expect);
        assert_eq!(bank_seqs(&fill_top_l(entries.into_iter(), k, l)), expect);
    }
}

#[test]
fn fill_top_l_prefers_newer_on_ties() {
    let x = FeatureVector::unit(vec![1.0, 0.0]).unwrap();
    let y = SoftLabel::new(vec![0.8, 0.2]).unwrap();
    let entries = (0..5u64).map(|s| BankEntry::new(x.clone(), y.clone(), s));
    let bank = fill_top_l(entries, 2, 2);
    assert_eq!(bank_seqs(&bank)[0], vec![3, 4]);
}

fn filled_bank(seed: u64, k: usize, d: usize, l: usize, n: usize) -> (KnowledgeBank, PrototypeSet) {
    let mut r = rng(seed);
    let protos = PrototypeSet::new((0..k).map(|_| unit(&mut r, d)).collect()).unwrap();
    let mut bank = KnowledgeBank::new(k, l);
    for seq in 0..n as u64 {
        let y = simplex(&mut r, k);
        bank.try_insert(y.argmax(), BankEntry::new(unit(&mut r, d), y, seq)).unwrap();
    }
    (bank, protos)
}

#[test]
fn online_means_match_naive_loops() {
    for seed in 0..10 {
        let (bank, protos) = filled_bank(seed, 4, 6, 5, 40);
        let alpha = 0.7;
        let mu = means_online(&bank, &protos, alpha);
        for k in 0..4 {
            let mut num = [0.0; 6];
            let mut den = 0.0;
            for e in bank.entries(k) {
                let w = e.soft_label().get(k);
                den += w;
                for i in 0..6 {
                    num[i] += w * e.feature().as_slice()[i];
                }
            }
            for i in 0..6 {
                let expect = alpha * num[i] / den + (1.0 - alpha) * protos.get(k).as_slice()[i];
                assert!((mu[k][i] - expect).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn empty_bank_means_are_prototypes() {
    let (_, protos) = filled_bank(3, 3, 5, 2, 0);
    let bank = KnowledgeBank::new(3, 2);
    assert_eq!(means_online(&bank, &protos, 0.9), protos.means());
}

#[test]
fn transductive_means_match_naive_loops() {
    let mut r = rng(4);
    let (bank, protos) = filled_bank(5, 3, 5, 4, 30);
    let xs: Vec<_> = (0..25).map(|_| unit(&mut r, 5)).collect();
    let ys: Vec<_> = (0..25).map(|_| simplex(&mut r, 3)).collect();
    let alpha = 0.9;
    let mu = means_transductive(&xs, &ys, &bank, &protos, alpha).unwrap();
    for k in 0..3 {
        for i in 0..5 {
            let mut num = 0.0;
            let mut den = 0.0;
            for (x, y) in xs.iter().zip(&ys) {
                num += y.get(k) * x.as_slice()[i];
                den += y.get(k);
            }
            for e in bank.entries(k) {
                num += e.soft_label().get(k) * e.feature().as_slice()[i];
                den += e.soft_label().get(k);
            }
            let expect = alpha * num / den + (1.0 - alpha) * protos.get(k).as_slice()[i];
            assert!((mu[k][i] - expect).abs() < 1e-13);
        }
    }
}

#[test]
fn pooled_covariance_matches_outer_products() {
    let (bank, protos) = filled_bank(6, 3, 4, 5, 50);
    let means = means_online(&bank, &protos, 0.9);
    let (cov, n) = pooled_covariance(&bank, &means);
    assert_eq!(n, bank.total_len());
    let mut expect = DMatrix::<f64>::zeros(4, 4);
    for (k, mu) in means.iter().enumerate() {
        for e in bank.entries(k) {
            let dev = DVector::from_column_slice(e.feature().as_slice()) - DVector::from_column_slice(mu);
            expect += &dev * dev.transpose();
        }
    }
    expect /= n as f64;
    assert!((to_na(&cov) - expect).amax() < 1e-15);
}

fn random_spd(r: &mut rand::rngs::StdRng, d: usize) -> Matrix {
    let a = DMatrix::from_fn(d, d, |_, _| normal(r));
    let s = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 1e-3;
    Matrix::from_row_major(d, s.transpose().as_slice().to_vec()).unwrap()
}

#[test]
fn shrinkage_precision_matches_dense_inverse() {
    let mut r = rng(7);
    for &d in &[2usize, 8, 33] {
        for &n in &[2usize, 16, 160] {
            let cov = random_spd(&mut r, d);
            let p = shrinkage_precision(&cov, n).unwrap();
            let a = to_na(&cov) * (n - 1) as f64 + DMatrix::identity(d, d) * cov.trace();
            let inv = a.clone().try_inverse().unwrap() * d as f64;
            assert!((to_na(&p.matrix) - &inv).amax() < 1e-9 * inv.amax());
            let residual = to_na(&p.matrix) * &a / d as f64 - DMatrix::identity(d, d);
            assert!(residual.amax() < 1e-10);
            let log_det = (inv.determinant()).ln();
            assert!((p.log_det - log_det).abs() < 1e-8 * log_det.abs().max(1.0));
        }
    }
}

#[test]
fn shrinkage_falls_back_to_identity() {
    let cov = random_spd(&mut rng(8), 4);
    assert_eq!(shrinkage_precision(&cov, 1).unwrap().matrix, Matrix::identity(4));
    assert_eq!(shrinkage_precision(&Matrix::zeros(4), 10).unwrap().matrix, Matrix::identity(4));
}

/// Full log-density `-1/2 (x - mu)^T P (x - mu)` minus the affine logit is
/// the same for every class, so differences between classes agree.
#[test]
fn affine_logits_equal_full_density_up_to_constant() {
    for seed in 0..10 {
        let (bank, protos) = filled_bank(seed + 20, 5, 7, 6, 80);
        let means = means_online(&bank, &protos, 0.9);
        let model = GaussianModel::build(&bank, means.clone(), CovarianceMode::Shared, true).unwrap();
        let p = to_na(model.precision());
        let mut r = rng(seed);
        for _ in 0..50 {
            let x = unit(&mut r, 7);
            let xv = DVector::from_column_slice(x.as_slice());
            let full: Vec<f64> = means
                .iter()
                .map(|mu| {
                    let dv = &xv - DVector::from_column_slice(mu);
                    -0.5 * (dv.transpose() * &p * &dv)[(0, 0)]
                })
                .collect();
            let logits = model.logits(&x);
            let c = full[0] - logits[0];
            for k in 0..5 {
                assert!((full[k] - logits[k] - c).abs() < 1e-9);
            }
            let am = |v: &[f64]| cfta_core::math::argmax(v);
            assert_eq!(am(&full), am(&logits));
        }
    }
}

#[test]
fn per_class_logits_are_full_log_densities() {
    let (bank, protos) = filled_bank(30, 3, 4, 8, 200);
    let means = means_online(&bank, &protos, 0.9);
    let model = GaussianModel::build(&bank, means.clone(), CovarianceMode::PerClass, true).unwrap();
    let classes = model.class_gaussians().unwrap();
    let x = unit(&mut rng(31), 4);
    let xv = DVector::from_column_slice(x.as_slice());
    let logits = model.logits(&x);
    let dens: Vec<f64> = (0..3)
        .map(|k| {
            let p = to_na(&classes[k].precision.matrix);
            let dv = &xv - DVector::from_column_slice(&means[k]);
            -0.5 * (dv.transpose() * &p * &dv)[(0, 0)] + 0.5 * p.determinant().ln()
        })
        .collect();
    for k in 1..3 {
        assert!(((logits[k] - logits[0]) - (dens[k] - dens[0])).abs() < 1e-9);
    }
}

#[test]
fn fused_label_minimizes_objective() {
    let mut r = rng(9);
    for _ in 0..200 {
        let k = r.random_range(2..8);
        let yhat = simplex(&mut r, k);
        let ll: Vec<f64> = (0..k).map(|_| 5.0 * normal(&mut r)).collect();
        let votes = BankVote::from_vec((0..k).map(|_| r.random::<f64>() * 3.0).collect());
        let z = fuse(&yhat, &ll, &votes).unwrap();
        let best = objective_z(&z, &yhat, &ll, &votes);
        for _ in 0..200 {
            let q = simplex(&mut r, k);
            assert!(best <= objective_z(&q, &yhat, &ll, &votes) + 1e-9);
        }
    }
}

#[test]
fn log_likelihood_is_gaussian_log_density() {
    let (bank, protos) = filled_bank(40, 3, 5, 6, 60);
    let means = means_online(&bank, &protos, 0.9);
    let model = GaussianModel::build(&bank, means.clone(), CovarianceMode::Shared, true).unwrap();
    let x = unit(&mut rng(41), 5);
    let p = to_na(model.precision());
    let d = 5.0;
    for k in 0..3 {
        let dv = DVector::from_column_slice(x.as_slice()) - DVector::from_column_slice(&means[k]);
        let expect = -0.5 * (dv.transpose() * &p * &dv)[(0, 0)] + 0.5 * p.determinant().ln()
            - 0.5 * d * (2.0 * std::f64::consts::PI).ln();
        assert!((model.log_likelihood(&x, k) - expect).abs() < 1e-9);
    }
}
