//! Dataset manifests, image ingestion, and the teacher-output exchange
//! format.
//!
//! A manifest row points either at an image file (PNG or PPM) or at a
//! synthetic descriptor that regenerates the image deterministically.
//! Decoded images are 3 x H x W tensors with values in [0, 1]; grayscale
//! sources are expanded to three identical channels.

mod atmap;
mod synth;

pub use atmap::{
    decode_attention_records, encode_attention_records, read_attention_file,
    write_attention_file, AttentionRecord, TeacherOutputFile,
};
pub use synth::{generate_synthetic_dataset, synthesize_image};

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Where a sample's pixels come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleSource {
    /// Image file path, relative to the manifest location.
    File(PathBuf),
    /// Deterministic synthetic image: per-sample seed and dimensions.
    Synthetic { seed: u64, height: u32, width: u32 },
}

impl SampleSource {
    pub fn encode(&self) -> String {
        match self {
            SampleSource::File(p) => p.display().to_string(),
            SampleSource::Synthetic {
                seed,
                height,
                width,
            } => format!("synth:{seed:016x}:{height}x{width}"),
        }
    }

    pub fn decode(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("synth:") {
            let mut parts = rest.split(':');
            let seed = parts
                .next()
                .and_then(|h| u64::from_str_radix(h, 16).ok())
                .ok_or_else(|| Error::Data(format!("bad synthetic descriptor `{s}`")))?;
            let dims = parts
                .next()
                .and_then(|d| d.split_once('x'))
                .ok_or_else(|| Error::Data(format!("bad synthetic descriptor `{s}`")))?;
            let height = dims
                .0
                .parse()
                .map_err(|_| Error::Data(format!("bad synthetic descriptor `{s}`")))?;
            let width = dims
                .1
                .parse()
                .map_err(|_| Error::Data(format!("bad synthetic descriptor `{s}`")))?;
            if parts.next().is_some() {
                return Err(Error::Data(format!("bad synthetic descriptor `{s}`")));
            }
            Ok(SampleSource::Synthetic {
                seed,
                height,
                width,
            })
        } else {
            Ok(SampleSource::File(PathBuf::from(s)))
        }
    }
}

/// One dataset sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: u32,
    pub source: SampleSource,
    /// 1 = blacklegged (positive class), 0 = other.
    pub label: u8,
    /// Optional split/fold tag (`train`, `test`, `fold0`, ...).
    pub split: Option<String>,
}

/// Ordered list of samples with unique ids and binary labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for r in &rows {
            if !seen.insert(r.id) {
                return Err(Error::Data(format!("duplicate sample id {}", r.id)));
            }
            if r.label > 1 {
                return Err(Error::Data(format!(
                    "sample {} has non-binary label {}",
                    r.id, r.label
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Write as UTF-8 CSV with header `id,source,label,split` and LF line
    /// endings.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(csv_err)?;
        wtr.write_record(["id", "source", "label", "split"])
            .map_err(csv_err)?;
        for r in &self.rows {
            wtr.write_record([
                r.id.to_string(),
                r.source.encode(),
                r.label.to_string(),
                r.split.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Load a manifest and verify that referenced files exist relative to
    /// the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        let headers = rdr.headers().map_err(csv_err)?.clone();
        let expected = ["id", "source", "label", "split"];
        if headers.iter().ne(expected) {
            return Err(Error::Data(format!(
                "manifest header {:?}, expected {:?}",
                headers, expected
            )));
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(csv_err)?;
            if record.len() != 4 {
                return Err(Error::Data(format!("manifest row {:?}", record)));
            }
            let id = record[0]
                .parse()
                .map_err(|_| Error::Data(format!("bad id `{}`", &record[0])))?;
            let source = SampleSource::decode(&record[1])?;
            if let SampleSource::File(p) = &source {
                if !base.join(p).exists() {
                    return Err(Error::Data(format!(
                        "referenced image does not exist: {}",
                        base.join(p).display()
                    )));
                }
            }
            let label = record[2]
                .parse()
                .map_err(|_| Error::Data(format!("bad label `{}`", &record[2])))?;
            let split = if record[3].is_empty() {
                None
            } else {
                Some(record[3].to_string())
            };
            rows.push(ManifestRow {
                id,
                source,
                label,
                split,
            });
        }
        Self::new(rows)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

/// Decode a PNG or PPM file into a 3 x H x W tensor in [0, 1].
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let decoded = reader
        .decode()
        .map_err(|e| Error::Data(format!("cannot decode {}: {e}", path.display())))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    {
        let data = t.data_mut();
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = px.0[c] as f32 / 255.0;
            }
        }
    }
    Ok(t)
}

/// Encode a 3 x H x W tensor in [0, 1] as an 8-bit PNG.
pub fn save_image_png(image: &Tensor<f32>, path: &Path) -> Result<()> {
    let [c, h, w] = image_dims(image)?;
    debug_assert_eq!(c, 3);
    let plane = h * w;
    let mut raw = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            raw.push((image.data()[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, raw)
        .expect("buffer sized from dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn image_dims(image: &Tensor<f32>) -> Result<[usize; 3]> {
    match image.shape() {
        [c, h, w] if *c == 3 => Ok([*c, *h, *w]),
        other => Err(Error::Shape {
            op: "image",
            detail: format!("expected 3 x H x W, got {other:?}"),
        }),
    }
}

/// Bilinear resize to `target_h` x `target_w` (half-pixel centers, edges
/// clamped).
pub fn resize(image: &Tensor<f32>, target_h: usize, target_w: usize) -> Result<Tensor<f32>> {
    let [_, h, w] = image_dims(image)?;
    if target_h == 0 || target_w == 0 {
        return Err(Error::Config("resize target must be non-zero".into()));
    }
    if (h, w) == (target_h, target_w) {
        return Ok(image.clone());
    }
    let mut out = Tensor::zeros(&[3, target_h, target_w]);
    let sy = h as f64 / target_h as f64;
    let sx = w as f64 / target_w as f64;
    {
        let od = out.data_mut();
        for c in 0..3 {
            let src = &image.data()[c * h * w..(c + 1) * h * w];
            let dst = &mut od[c * target_h * target_w..(c + 1) * target_h * target_w];
            for i in 0..target_h {
                let fy = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
                let y0 = fy.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let wy = (fy - y0 as f64) as f32;
                for j in 0..target_w {
                    let fx = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                    let x0 = fx.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let wx = (fx - x0 as f64) as f32;
                    let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                    let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                    dst[i * target_w + j] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
    }
    Ok(out)
}

/// In-memory image cache keyed by sample id, with every image brought to a
/// common resolution at preload time.
pub struct ImageStore {
    base_dir: PathBuf,
    images: HashMap<u32, Tensor<f32>>,
    resolution: (usize, usize),
}

impl ImageStore {
    /// Decode/generate every manifest sample at `target` resolution.
    pub fn preload(
        manifest: &DatasetManifest,
        base_dir: &Path,
        target: (usize, usize),
    ) -> Result<Self> {
        let mut images = HashMap::with_capacity(manifest.len());
        for row in manifest.rows() {
            let img = match &row.source {
                SampleSource::File(p) => load_image(&base_dir.join(p))?,
                SampleSource::Synthetic {
                    seed,
                    height,
                    width,
                } => synth::synthesize_image(*seed, row.label, *height as usize, *width as usize),
            };
            let img = resize(&img, target.0, target.1)?;
            images.insert(row.id, img);
        }
        Ok(Self {
            base_dir: base_dir.to_path_buf(),
            images,
            resolution: target,
        })
    }

    /// Build a store from already-materialized images (synthetic pipelines).
    pub fn from_images(images: Vec<(u32, Tensor<f32>)>, resolution: (usize, usize)) -> Self {
        Self {
            base_dir: PathBuf::new(),
            images: images.into_iter().collect(),
            resolution,
        }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    pub fn image(&self, id: u32) -> Result<&Tensor<f32>> {
        self.images
            .get(&id)
            .ok_or_else(|| Error::Data(format!("no image for sample id {id}")))
    }

    /// Assemble a batch tensor N x 3 x H x W in engine precision.
    pub fn batch<E: Scalar>(&self, ids: &[u32]) -> Result<Tensor<E>> {
        let (h, w) = self.resolution;
        let plane = 3 * h * w;
        let mut out = Tensor::zeros(&[ids.len(), 3, h, w]);
        for (i, &id) in ids.iter().enumerate() {
            let img = self.image(id)?;
            for (o, &v) in out.data_mut()[i * plane..(i + 1) * plane]
                .iter_mut()
                .zip(img.data())
            {
                *o = E::from_f64(v as f64);
            }
        }
        Ok(out)
    }
}
