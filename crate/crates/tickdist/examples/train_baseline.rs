//! Train the reduced-profile CNN from scratch on a synthetic dataset and
//! report test metrics.
//!
//! Usage: cargo run --release --example train_baseline -- [n_samples] [max_epochs]

use tickdist::data::{generate_synthetic_dataset, ImageStore};
use tickdist::metrics;
use tickdist::model::{build_lighter_cnn, Profile};
use tickdist::train::{kfold, score_items, split_dataset, train_baseline, TrainConfig, TrainData};

fn main() -> tickdist::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(360);
    let max_epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);
    let seed = 42;

    println!("synthesizing {n} images (41% positive)...");
    let (manifest, images) = generate_synthetic_dataset(n, 0.41, 96, seed)?;
    let store = ImageStore::from_images(images, (96, 96));
    let labels: std::collections::HashMap<u32, u8> =
        manifest.rows().iter().map(|r| (r.id, r.label)).collect();

    let (train_ids, test_ids) = split_dataset(&manifest, 11, 1, seed)?;
    let folds = kfold(&train_ids, 3, seed)?;
    let items = |ids: &[u32]| -> Vec<(u32, u8)> {
        ids.iter().map(|&id| (id, labels[&id])).collect()
    };
    println!(
        "split: {} train / {} test; validating on fold 0 ({} samples)",
        train_ids.len(),
        test_ids.len(),
        folds[0].1.len()
    );

    let config = TrainConfig {
        seed,
        max_epochs,
        patience: Some(6),
        ..TrainConfig::default()
    };
    let data = TrainData {
        store: &store,
        items: items(&train_ids),
        val_items: items(&folds[0].1),
    };

    let mut model = build_lighter_cnn::<f32>(Profile::Reduced, seed)?;
    let started = std::time::Instant::now();
    let history = train_baseline(&mut model, &data, &config)?;
    println!(
        "trained {} epochs in {:.1}s{}",
        history.epochs.len(),
        started.elapsed().as_secs_f64(),
        if history.stopped_early { " (early stop)" } else { "" }
    );
    for e in &history.epochs {
        println!(
            "epoch {:>3}: train_loss {:.4}  val_loss {:.4}  val_acc {:.3}  ({:.1}s)",
            e.epoch,
            e.train_loss,
            e.val_loss.unwrap_or(f64::NAN),
            e.val_accuracy.unwrap_or(f64::NAN),
            e.seconds
        );
    }

    let scores = score_items(&model, &store, &items(&test_ids), config.batch_size)?;
    let report = metrics::evaluate(&scores, metrics::DEFAULT_THRESHOLD)?;
    println!(
        "test: accuracy {:.4}  roc_auc {:.4}  pr_auc {:.4}  confusion tp={} fp={} tn={} fn={}",
        report.accuracy,
        report.roc_auc,
        report.pr_auc,
        report.confusion.tp,
        report.confusion.fp,
        report.confusion.tn,
        report.confusion.fn_
    );
    Ok(())
}
