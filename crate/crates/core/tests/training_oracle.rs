use smile_core::data::{synth_generate, SynthConfig};
use smile_core::training::{kfold_split, train_fold, TrainConfig};

/// Default optimizer settings on a clearly separable benchmark reach a high
/// validation AUC within 50 epochs (median over five seeds).
#[test]
fn separable_benchmark_is_learned_in_fifty_epochs() {
    let ds = synth_generate(&SynthConfig {
        separation: 4.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut aucs: Vec<f64> = (0..5u64)
        .map(|seed| {
            let cfg = TrainConfig {
                epochs: 50,
                seed,
                ..TrainConfig::default()
            };
            let split = &kfold_split(&ds.ids_with_labels(), cfg.folds, seed).unwrap()[0];
            train_fold(&ds, split, &cfg).unwrap().best_report.auc
        })
        .collect();
    aucs.sort_by(f64::total_cmp);
    eprintln!("best validation AUC per seed {aucs:?}");
    assert!(aucs[2] >= 0.95, "median {}", aucs[2]);
}
