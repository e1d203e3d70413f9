//! Model and attention-map file round trips: train briefly, serialize to
//! the LCNN container, reload, and verify bit-exact predictions; then do
//! the same for teacher attention maps through the ATMP container.
//!
//! Usage: cargo run --release --example model_roundtrip

use tickdist::data::{
    decode_attention_records, encode_attention_records, generate_synthetic_dataset, ImageStore,
};
use tickdist::model::{build_lighter_cnn, deserialize, serialize, Profile};
use tickdist::train::{teacher_records, train_baseline, AugmentConfig, TrainConfig, TrainData};

fn main() -> tickdist::Result<()> {
    let (manifest, images) = generate_synthetic_dataset(48, 0.5, 96, 5)?;
    let store = ImageStore::from_images(images, (96, 96));
    let items: Vec<(u32, u8)> = manifest.rows().iter().map(|r| (r.id, r.label)).collect();
    let ids: Vec<u32> = items.iter().map(|&(id, _)| id).collect();

    let mut model = build_lighter_cnn::<f32>(Profile::Reduced, 9)?;
    let cfg = TrainConfig {
        seed: 9,
        max_epochs: 2,
        batch_size: 16,
        patience: None,
        augment: AugmentConfig::disabled(),
        ..TrainConfig::default()
    };
    train_baseline(
        &mut model,
        &TrainData {
            store: &store,
            items,
            val_items: vec![],
        },
        &cfg,
    )?;

    let bytes = serialize(&model);
    println!("serialized model: {} bytes (LCNN v1)", bytes.len());
    let loaded = deserialize(&bytes)?;
    let batch = store.batch::<f32>(&ids[..8])?;
    let before = model.predict_proba(&batch)?;
    let after = loaded.predict_proba(&batch)?;
    assert_eq!(before, after);
    println!("reloaded model reproduces all {} scores bit-exactly", before.len());
    println!("first scores: {:?}", &before[..3.min(before.len())]);

    let records = teacher_records(&model, &store, &ids, 16)?;
    let encoded = encode_attention_records(&records)?;
    let decoded = decode_attention_records(&encoded)?;
    assert_eq!(decoded.records, records);
    println!(
        "attention file: {} records of {}x{} maps, {} bytes, round trip exact",
        decoded.records.len(),
        decoded.height,
        decoded.width,
        encoded.len()
    );
    Ok(())
}
