/// Predictions are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-12;

fn clamp(pred: f64) -> f64 {
    pred.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy `−[y log ŷ + (1 − y) log(1 − ŷ)]`.
pub fn cross_entropy(pred: f64, label: u8) -> f64 {
    let p = clamp(pred);
    let loss = if label == 1 { -p.ln() } else { -(1.0 - p).ln() };
    loss.max(0.0)
}

/// `∂ cross_entropy / ∂ pred`; zero where the clamp is active.
pub fn cross_entropy_grad(pred: f64, label: u8) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pred) {
        return 0.0;
    }
    if label == 1 {
        -1.0 / pred
    } else {
        1.0 / (1.0 - pred)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((cross_entropy(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((cross_entropy(0.8, 0) - 1.609438).abs() < 1e-6);
        assert!(cross_entropy(1.0 - 1e-12, 1) < 1e-11);
        assert!(cross_entropy(1.0, 1) >= 0.0);
        assert!(cross_entropy(0.0, 1).is_finite());
    }

    #[test]
    fn gradient_matches_central_difference() {
        for &(p, y) in &[(0.3, 1u8), (0.3, 0), (0.91, 1), (0.05, 0)] {
            let h = 1e-6;
            let numeric = (cross_entropy(p + h, y) - cross_entropy(p - h, y)) / (2.0 * h);
            let analytic = cross_entropy_grad(p, y);
            assert!((numeric - analytic).abs() / analytic.abs() < 1e-6);
        }
        assert_eq!(cross_entropy_grad(1.0, 0), 0.0);
    }

    #[test]
    fn non_negative_everywhere() {
        for i in 0..=1000 {
            let p = i as f64 / 1000.0;
            assert!(cross_entropy(p, 0) >= 0.0 && cross_entropy(p, 1) >= 0.0);
        }
    }
}
