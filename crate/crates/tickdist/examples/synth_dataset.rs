//! Generate a synthetic two-class dataset and write it to disk as PNG
//! images plus a CSV manifest.
//!
//! Usage: cargo run --release --example synth_dataset -- [n] [out_dir]

use tickdist::data::{generate_synthetic_dataset, save_image_png, DatasetManifest, ManifestRow, SampleSource};

fn main() -> tickdist::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(24);
    let out = std::path::PathBuf::from(
        args.next().unwrap_or_else(|| "synth_dataset_out".to_string()),
    );
    std::fs::create_dir_all(out.join("images"))?;

    let (manifest, images) = generate_synthetic_dataset(n, 0.41, 96, 7)?;
    let mut rows = Vec::new();
    for (row, (id, image)) in manifest.rows().iter().zip(&images) {
        let rel = std::path::PathBuf::from("images").join(format!("{id:06}.png"));
        save_image_png(image, &out.join(&rel))?;
        rows.push(ManifestRow {
            id: row.id,
            source: SampleSource::File(rel),
            label: row.label,
            split: None,
        });
    }
    DatasetManifest::new(rows)?.save(&out.join("manifest.csv"))?;

    let positives = manifest.rows().iter().filter(|r| r.label == 1).count();
    println!(
        "wrote {n} images to {} ({positives} blacklegged, {} other)",
        out.display(),
        n - positives
    );
    println!("positive class: 8 thin legs; negative class: 6 thick legs + dorsal blotch");
    Ok(())
}
