//! Attention transfer at a glance: spatial attention maps, the normalized
//! attention loss, and a short AT training run that pulls the student's
//! maps toward a frozen teacher's.
//!
//! Usage: cargo run --release --example attention_transfer

use tickdist::data::{generate_synthetic_dataset, ImageStore};
use tickdist::distill::{at_loss, attention_map, AT_EPSILON};
use tickdist::model::{build_lighter_cnn, build_surrogate_teacher, Profile};
use tickdist::train::{
    train_at, train_baseline, AugmentConfig, ModelTeacher, TrainConfig, TrainData,
};
use tickdist::Tensor;

fn main() -> tickdist::Result<()> {
    // the loss itself: identical maps, scaled maps, orthogonal maps
    let a = attention_map(&Tensor::from_fn(&[4, 3, 3], |i| (i as f64 * 0.37).sin()))?;
    let scaled = tickdist::distill::AttentionMap::from_raw(a.map().map(|v| v * 42.0))?;
    println!("at_loss(Q, Q)      = {:.3e}", at_loss(&a, &a, AT_EPSILON)?);
    println!("at_loss(Q, 42 Q)   = {:.3e}  (scale-invariant)", at_loss(&a, &scaled, AT_EPSILON)?);
    let e1 = tickdist::distill::AttentionMap::from_raw(Tensor::from_vec(vec![1, 2], vec![1.0, 0.0])?)?;
    let e2 = tickdist::distill::AttentionMap::from_raw(Tensor::from_vec(vec![1, 2], vec![0.0, 1.0])?)?;
    println!("orthogonal units   = {:.6}  (sqrt 2)", at_loss(&e1, &e2, AT_EPSILON)?);

    // a short training run: the mean attention loss falls epoch over epoch
    let (manifest, images) = generate_synthetic_dataset(160, 0.41, 96, 11)?;
    let store = ImageStore::from_images(images, (96, 96));
    let items: Vec<(u32, u8)> = manifest.rows().iter().map(|r| (r.id, r.label)).collect();
    let data = TrainData {
        store: &store,
        items,
        val_items: vec![],
    };
    let cfg = TrainConfig {
        seed: 3,
        max_epochs: 6,
        batch_size: 32,
        patience: None,
        augment: AugmentConfig::disabled(),
        dropout_rate: 0.0,
        ..TrainConfig::default()
    };

    println!("\ntraining the surrogate teacher briefly...");
    let mut teacher = build_surrogate_teacher::<f32>(Profile::Reduced, 1)?;
    train_baseline(&mut teacher, &data, &cfg)?;

    println!("training the student with BCE + (1/beta2) * L_AT:");
    let mut student = build_lighter_cnn::<f32>(Profile::Reduced, 2)?;
    let history = train_at(&mut student, &ModelTeacher::new(&teacher), &data, &cfg)?;
    for e in &history.epochs {
        println!(
            "epoch {}: train_loss {:.4}, mean at_loss {:.4}",
            e.epoch,
            e.train_loss,
            e.mean_at_loss.unwrap_or(f64::NAN)
        );
    }
    let first = history.epochs.first().and_then(|e| e.mean_at_loss).unwrap();
    let last = history.epochs.last().and_then(|e| e.mean_at_loss).unwrap();
    println!("attention loss fell from {first:.4} to {last:.4}");
    Ok(())
}
