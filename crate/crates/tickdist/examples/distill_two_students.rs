//! The two-student AT + LSR pipeline at toy scale: student one trains with
//! attention transfer on half the data, produces soft labels for all of it
//! (temperature-softened where it is right, the 0.6 replacement where it is
//! wrong), and student two trains on the combined soft-label/attention
//! objective.
//!
//! Usage: cargo run --release --example distill_two_students

use tickdist::data::{generate_synthetic_dataset, ImageStore};
use tickdist::distill::SoftLabelOrigin;
use tickdist::metrics;
use tickdist::model::{build_surrogate_teacher, Profile};
use tickdist::train::{
    kfold, score_items, split_dataset, train_at_lsr, train_baseline, AugmentConfig, ModelTeacher,
    TrainConfig, TrainData,
};

fn main() -> tickdist::Result<()> {
    let seed = 21;
    let (manifest, images) = generate_synthetic_dataset(360, 0.41, 96, seed)?;
    let store = ImageStore::from_images(images, (96, 96));
    let labels: std::collections::HashMap<u32, u8> =
        manifest.rows().iter().map(|r| (r.id, r.label)).collect();
    let (train_ids, test_ids) = split_dataset(&manifest, 11, 1, seed)?;
    let folds = kfold(&train_ids, 3, seed)?;
    let items = |ids: &[u32]| ids.iter().map(|&id| (id, labels[&id])).collect::<Vec<_>>();

    let cfg = TrainConfig {
        seed,
        max_epochs: 8,
        batch_size: 32,
        patience: None,
        augment: AugmentConfig::disabled(),
        dropout_rate: 0.1,
        ..TrainConfig::default()
    };
    let data = TrainData {
        store: &store,
        items: items(&train_ids),
        val_items: items(&folds[0].1),
    };

    println!("training the surrogate teacher...");
    let mut teacher = build_surrogate_teacher::<f32>(Profile::Reduced, seed ^ 1)?;
    train_baseline(&mut teacher, &data, &cfg)?;

    println!(
        "running AT + LSR (subset fraction {}, T = {}, beta1 = {}, beta2 = {})...",
        cfg.subset_fraction, cfg.weights.temperature, cfg.weights.beta1, cfg.weights.beta2
    );
    let outcome = train_at_lsr(&ModelTeacher::new(&teacher), &data, &cfg)?;

    let softened = outcome
        .soft_labels
        .iter()
        .filter(|r| r.origin == SoftLabelOrigin::Softened)
        .count();
    println!(
        "soft labels: {} records ({} softened, {} replaced with 0.6)",
        outcome.soft_labels.len(),
        softened,
        outcome.soft_labels.len() - softened
    );

    let test = items(&test_ids);
    for (name, model) in [("student1", &outcome.student1), ("student2", &outcome.student2)] {
        let scores = score_items(model, &store, &test, cfg.batch_size)?;
        let report = metrics::evaluate(&scores, metrics::DEFAULT_THRESHOLD)?;
        println!(
            "{name}: test accuracy {:.4}, roc_auc {:.4}, pr_auc {:.4}",
            report.accuracy, report.roc_auc, report.pr_auc
        );
    }
    Ok(())
}
