//! Straight-line reference implementation of the bag forward pass, written
//! with plain loops and no shared code beyond the parameter struct. Used as
//! an oracle for the graph-based model and its gradients.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smile_core::model::{FeatureBag, ModelDims, ModelKind, SmileParams};
use smile_core::DenseMatrix;

pub const EPS: f64 = 1e-5;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn ref_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Multipliers applied to raw scores: `factor` where the max-min normalized
/// score reaches the threshold, 1 elsewhere.
pub fn ref_multipliers(a: &[f64], threshold: f64, factor: f64) -> Vec<f64> {
    let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    a.iter()
        .map(|&v| {
            let norm = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            if norm >= threshold {
                factor
            } else {
                1.0
            }
        })
        .collect()
}

pub fn ref_sa(a: &[f64], threshold: f64, factor: f64) -> Vec<f64> {
    let m = ref_multipliers(a, threshold, factor);
    ref_softmax(&a.iter().zip(&m).map(|(x, k)| x * k).collect::<Vec<_>>())
}

/// Adapted features, batch statistics when `train`, running ones otherwise.
pub fn ref_adapter(x: &DenseMatrix, p: &SmileParams, train: bool) -> Vec<Vec<f64>> {
    let (n, l) = x.shape();
    let d = p.adapter_weight.cols();
    let mut normed = vec![vec![0.0; l]; n];
    for j in 0..l {
        let (mean, var) = if train {
            let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
            (mean, var)
        } else {
            (p.running_mean[j], p.running_var[j])
        };
        for i in 0..n {
            normed[i][j] = p.bn_gamma.get(0, j) * (x.get(i, j) - mean) / (var + EPS).sqrt() + p.bn_beta.get(0, j);
        }
    }
    (0..n)
        .map(|i| {
            (0..d)
                .map(|k| {
                    let mut s = p.adapter_bias.get(0, k);
                    for j in 0..l {
                        s += normed[i][j] * p.adapter_weight.get(j, k);
                    }
                    s.max(0.0)
                })
                .collect()
        })
        .collect()
}

pub fn ref_scores(h: &[Vec<f64>], p: &SmileParams) -> Vec<f64> {
    let e = p.attn_v.rows();
    h.iter()
        .map(|hi| {
            (0..e)
                .map(|k| {
                    let v: f64 = hi.iter().enumerate().map(|(j, x)| x * p.attn_v.get(k, j)).sum();
                    let u: f64 = hi.iter().enumerate().map(|(j, x)| x * p.attn_u.get(k, j)).sum();
                    p.attn_w.get(0, k) * v.tanh() * sig(u)
                })
                .sum()
        })
        .collect()
}

pub fn ref_classify(z: &[f64], p: &SmileParams) -> f64 {
    let logit: f64 = z.iter().enumerate().map(|(j, v)| v * p.clf_weight.get(j, 0)).sum::<f64>() + p.clf_bias.get(0, 0);
    sig(logit)
}

/// Bag probability. `frozen` overrides the score multipliers (the mask is a
/// constant of the forward pass, so finite differences must hold it fixed).
pub fn ref_probability(
    x: &DenseMatrix,
    p: &SmileParams,
    kind: ModelKind,
    threshold: f64,
    factor: f64,
    train: bool,
    frozen: Option<&[f64]>,
) -> f64 {
    let h = ref_adapter(x, p, train);
    let n = h.len();
    let d = h[0].len();
    let z: Vec<f64> = match kind {
        ModelKind::MaxPool => (0..d).map(|k| h.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max)).collect(),
        ModelKind::MeanPool => (0..d).map(|k| h.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect(),
        ModelKind::Smile | ModelKind::Abmil => {
            let a = ref_scores(&h, p);
            let mult = match (kind, frozen) {
                (ModelKind::Abmil, _) => vec![1.0; n],
                (_, Some(m)) => m.to_vec(),
                _ => ref_multipliers(&a, threshold, factor),
            };
            let w = ref_softmax(&a.iter().zip(&mult).map(|(x, m)| x * m).collect::<Vec<_>>());
            (0..d).map(|k| (0..n).map(|i| w[i] * h[i][k]).sum()).collect()
        }
    };
    ref_classify(&z, p)
}

pub fn ref_loss(prob: f64, label: u8) -> f64 {
    let p = prob.clamp(1e-12, 1.0 - 1e-12);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn tensor_mut(p: &mut SmileParams, index: usize) -> &mut DenseMatrix {
    let [a, b, c, d, e, f, g, h, i] = p.trainable_mut();
    [a, b, c, d, e, f, g, h, i].into_iter().nth(index).unwrap()
}

/// Central-difference gradient of the loss with respect to every trainable
/// tensor, in the model's trainable order, with the mask frozen.
pub fn fd_loss_gradients(
    bag: &FeatureBag,
    p: &SmileParams,
    kind: ModelKind,
    threshold: f64,
    factor: f64,
    train: bool,
    step: f64,
) -> Vec<Vec<f64>> {
    let frozen = match kind {
        ModelKind::Smile => Some(ref_multipliers(&ref_scores(&ref_adapter(&bag.features, p, train), p), threshold, factor)),
        _ => None,
    };
    let loss = |q: &SmileParams| {
        ref_loss(
            ref_probability(&bag.features, q, kind, threshold, factor, train, frozen.as_deref()),
            bag.label,
        )
    };
    (0..9)
        .map(|t| {
            let len = p.trainable()[t].len();
            (0..len)
                .map(|i| {
                    let mut q = p.clone();
                    let base = tensor_mut(&mut q, t).values()[i];
                    tensor_mut(&mut q, t).values_mut()[i] = base + step;
                    let up = loss(&q);
                    tensor_mut(&mut q, t).values_mut()[i] = base - step;
                    let down = loss(&q);
                    (up - down) / (2.0 * step)
                })
                .collect()
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn tensor_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

pub fn random_params(dims: ModelDims, rng: &mut ChaCha8Rng) -> SmileParams {
    let mut p = SmileParams::init(dims, rng.random());
    // move batch-norm and biases off their trivial initial values
    for t in [0usize, 1, 3, 8] {
        for v in tensor_mut(&mut p, t).values_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    for v in &mut p.running_mean {
        *v = rng.random_range(-0.5..0.5);
    }
    for v in &mut p.running_var {
        *v = rng.random_range(0.5..2.0);
    }
    p
}

pub fn random_bag(rng: &mut ChaCha8Rng, n: usize, l: usize, label: u8) -> FeatureBag {
    let values = (0..n * l).map(|_| rng.random_range(-2.0..2.0)).collect();
    FeatureBag::new(format!("bag{n}"), DenseMatrix::new(n, l, values).unwrap(), label).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// AUC by counting every positive/negative pair.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}
