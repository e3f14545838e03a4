//! Planted-witness synthetic MIL benchmark.
//!
//! Every instance is drawn from a standard Gaussian. Positive bags have
//! `max(1, ⌈witness_rate · n⌉)` of their instances replaced by draws from
//! the same Gaussian shifted by `separation` along one fixed random unit
//! direction. A bag is positive exactly when it contains a witness.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BagDataset, Provenance};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::model::FeatureBag;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_bags: usize,
    pub pos_fraction: f64,
    pub min_bag_size: usize,
    pub max_bag_size: usize,
    pub feature_dim: usize,
    pub witness_rate: f64,
    /// Shift of witness instances, in units of the per-dimension noise scale.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_bags: 500,
            pos_fraction: 0.5,
            min_bag_size: 20,
            max_bag_size: 60,
            feature_dim: 64,
            witness_rate: 0.05,
            separation: 2.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_bags == 0 {
            return fail("n_bags must be at least 1".into());
        }
        if !(self.pos_fraction > 0.0 && self.pos_fraction < 1.0) {
            return fail(format!("pos_fraction must lie in (0, 1), got {}", self.pos_fraction));
        }
        if self.min_bag_size == 0 || self.min_bag_size > self.max_bag_size {
            return fail(format!(
                "bag size range [{}, {}] is invalid",
                self.min_bag_size, self.max_bag_size
            ));
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive".into());
        }
        if !(self.witness_rate > 0.0 && self.witness_rate <= 1.0) {
            return fail(format!("witness_rate must lie in (0, 1], got {}", self.witness_rate));
        }
        if !self.separation.is_finite() {
            return fail("separation must be finite".into());
        }
        Ok(())
    }

    /// Witnesses planted in a positive bag of `n` instances.
    pub fn witness_count(&self, n: usize) -> usize {
        ((self.witness_rate * n as f64).ceil() as usize).clamp(1, n)
    }

    pub fn positive_count(&self) -> usize {
        (self.pos_fraction * self.n_bags as f64).round() as usize
    }
}

fn gaussian_row(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Like [`synth_generate`], also returning the planted witness rows of
/// every bag (empty for negatives).
pub fn synth_generate_annotated(cfg: &SynthConfig) -> Result<(BagDataset, Vec<Vec<usize>>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.feature_dim;

    let mut direction = gaussian_row(&mut rng, dim);
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut direction {
        *v /= norm;
    }

    let n_pos = cfg.positive_count();
    let mut labels: Vec<u8> = (0..cfg.n_bags).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);

    let width = cfg.n_bags.to_string().len().max(4);
    let mut bags = Vec::with_capacity(cfg.n_bags);
    let mut witnesses = Vec::with_capacity(cfg.n_bags);
    for (i, &label) in labels.iter().enumerate() {
        let n = rng.random_range(cfg.min_bag_size..=cfg.max_bag_size);
        let mut values = Vec::with_capacity(n * dim);
        for _ in 0..n {
            values.extend(gaussian_row(&mut rng, dim));
        }
        let mut planted = Vec::new();
        if label == 1 {
            planted = index::sample(&mut rng, n, cfg.witness_count(n)).into_vec();
            planted.sort_unstable();
            for &row in &planted {
                let shifted = gaussian_row(&mut rng, dim);
                for (j, v) in shifted.into_iter().enumerate() {
                    values[row * dim + j] = v + cfg.separation * direction[j];
                }
            }
        }
        // stored as f32 on disk; keep memory and file bitwise identical
        for v in &mut values {
            *v = *v as f32 as f64;
        }
        let features = DenseMatrix::new(n, dim, values)?;
        bags.push(FeatureBag::new(format!("bag_{i:0width$}"), features, label)?);
        witnesses.push(planted);
    }
    Ok((BagDataset::new(bags, dim, Provenance::Synthetic)?, witnesses))
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<BagDataset> {
    synth_generate_annotated(cfg).map(|(dataset, _)| dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_bags: 41,
            min_bag_size: 3,
            max_bag_size: 9,
            feature_dim: 5,
            witness_rate: 0.01,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn every_positive_bag_has_a_witness() {
        let (ds, witnesses) = synth_generate_annotated(&small()).unwrap();
        for (bag, w) in ds.bags.iter().zip(&witnesses) {
            assert_eq!(bag.label == 1, !w.is_empty(), "{}", bag.id);
            assert!(w.iter().all(|&r| r < bag.len()));
        }
    }

    #[test]
    fn class_counts_follow_pos_fraction() {
        let cfg = SynthConfig {
            pos_fraction: 0.3,
            ..small()
        };
        let ds = synth_generate(&cfg).unwrap();
        let (_, pos) = ds.class_counts();
        assert!((pos as f64 - 0.3 * 41.0).abs() <= 1.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = synth_generate(&small()).unwrap();
        let b = synth_generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sizes_stay_in_range() {
        let ds = synth_generate(&small()).unwrap();
        assert!(ds.bags.iter().all(|b| (3..=9).contains(&b.len())));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { n_bags: 0, ..small() },
            SynthConfig { pos_fraction: 1.0, ..small() },
            SynthConfig { min_bag_size: 0, ..small() },
            SynthConfig { min_bag_size: 10, max_bag_size: 9, ..small() },
            SynthConfig { witness_rate: 0.0, ..small() },
        ] {
            assert!(synth_generate(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn witness_count_floors_at_one() {
        let cfg = small();
        assert_eq!(cfg.witness_count(3), 1);
        let cfg = SynthConfig { witness_rate: 0.05, ..cfg };
        assert_eq!(cfg.witness_count(20), 1);
        assert_eq!(cfg.witness_count(21), 2);
        assert_eq!(cfg.witness_count(60), 3);
    }
}
