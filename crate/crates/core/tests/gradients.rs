mod common;

use common::*;
use smile_core::model::{BagGraph, ModelDims, ModelKind, Mode, ScaleConfig, TRAINABLE};
use smile_core::training::cross_entropy_grad;

fn check(kind: ModelKind, seed: u64, n: usize, train: bool) {
    let dims = ModelDims::new(6, 5, 4).unwrap();
    let mut r = rng(seed);
    let params = random_params(dims, &mut r);
    let bag = random_bag(&mut r, n, 6, (seed % 2) as u8);
    let cfg = ScaleConfig::new(0.5, 0.5).unwrap();
    let mode = if train { Mode::Train } else { Mode::Eval };

    let graph = BagGraph::build(&bag, &params, kind, &cfg, mode).unwrap();
    let p = graph.probability();
    let reference = ref_probability(&bag.features, &params, kind, 0.5, 0.5, train, None);
    assert!((p - reference).abs() < 1e-12, "{kind} forward: {p} vs {reference}");

    let analytic = graph.backward(cross_entropy_grad(p, bag.label)).unwrap();
    let numeric = fd_loss_gradients(&bag, &params, kind, 0.5, 0.5, train, 1e-5);
    for ((a, num), (name, _)) in analytic.iter().zip(&numeric).zip(TRAINABLE) {
        let err = tensor_rel_err(a.values(), num);
        assert!(err < 1e-4, "{kind} seed {seed} n {n} {name}: relative error {err}");
    }
}

#[test]
fn smile_gradients_match_finite_differences() {
    for seed in 0..5 {
        for n in [1, 2, 8, 32] {
            check(ModelKind::Smile, seed, n, true);
        }
    }
}

#[test]
fn eval_mode_gradients_match_finite_differences() {
    for seed in 0..3 {
        for n in [1, 8] {
            check(ModelKind::Smile, seed, n, false);
        }
    }
}

#[test]
fn baseline_gradients_match_finite_differences() {
    for kind in [ModelKind::Abmil, ModelKind::MaxPool, ModelKind::MeanPool] {
        for seed in 0..3 {
            for n in [1, 2, 8] {
                check(kind, seed, n, true);
            }
        }
    }
}

#[test]
fn masked_scores_carry_the_factor() {
    // d(scaled score)/dA is the multiplier itself, so the loss gradient
    // through attn_w picks up exactly `factor` on masked instances.
    let dims = ModelDims::new(4, 3, 1).unwrap();
    let mut r = rng(11);
    let params = random_params(dims, &mut r);
    let bag = random_bag(&mut r, 5, 4, 1);
    for factor in [0.3, 0.5, 1.0] {
        let cfg = ScaleConfig::new(0.5, factor).unwrap();
        let graph = BagGraph::build(&bag, &params, ModelKind::Smile, &cfg, Mode::Train).unwrap();
        let trace = graph.trace().unwrap();
        let h = ref_adapter(&bag.features, &params, true);
        let a = ref_scores(&h, &params);
        let mult = ref_multipliers(&a, 0.5, factor);
        for (m, s) in mult.iter().zip(&trace.mask) {
            assert_eq!(*m, if *s == 1 { factor } else { 1.0 });
        }
        // with e = 1, A_i = w · g_i where g_i is the gated activation, so
        // dŷ/dw = Σ_i (dŷ/dlogit_i) · mult_i · g_i
        let w = params.attn_w.get(0, 0);
        let sa = ref_sa(&a, 0.5, factor);
        let p = graph.probability();
        let c: Vec<f64> = (0..h[0].len()).map(|k| params.clf_weight.get(k, 0)).collect();
        let z: Vec<f64> = (0..c.len()).map(|k| (0..h.len()).map(|i| sa[i] * h[i][k]).sum()).collect();
        let dz_dlogit = |i: usize| -> f64 {
            (0..c.len()).map(|k| c[k] * sa[i] * (h[i][k] - z[k])).sum()
        };
        let expected: f64 = (0..h.len()).map(|i| p * (1.0 - p) * dz_dlogit(i) * mult[i] * a[i] / w).sum();
        let grads = graph.backward(1.0).unwrap();
        assert!((grads[6].get(0, 0) - expected).abs() < 1e-12 * expected.abs().max(1.0), "factor {factor}");
    }
}
