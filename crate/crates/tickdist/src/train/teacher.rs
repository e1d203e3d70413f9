//! Teacher abstraction for attention transfer: anything that yields a
//! per-sample (logit, spatial attention map) pair — an in-process model or
//! a precomputed attention file. Teacher maps are computed on the canonical
//! (non-augmented) image of each sample, so file-based and in-process
//! teachers are interchangeable.

use std::collections::HashMap;

use crate::data::{AttentionRecord, ImageStore, TeacherOutputFile};
use crate::distill::attention_map;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Scalar, Tensor};

/// Precomputed per-sample teacher outputs.
pub struct TeacherTable<E> {
    maps: HashMap<u32, Tensor<E>>,
    logits: HashMap<u32, f64>,
    resolution: (usize, usize),
}

impl<E: Scalar> TeacherTable<E> {
    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    pub fn logit(&self, id: u32) -> Option<f64> {
        self.logits.get(&id).copied()
    }

    pub fn map(&self, id: u32) -> Result<&Tensor<E>> {
        self.maps
            .get(&id)
            .ok_or_else(|| Error::Data(format!("teacher has no attention map for sample {id}")))
    }

    /// Stack the maps for a batch of ids into an N x H x W tensor.
    pub fn batch_maps(&self, ids: &[u32]) -> Result<Tensor<E>> {
        let (h, w) = self.resolution;
        let plane = h * w;
        let mut out = Tensor::zeros(&[ids.len(), h, w]);
        for (i, &id) in ids.iter().enumerate() {
            let map = self.map(id)?;
            out.data_mut()[i * plane..(i + 1) * plane].copy_from_slice(map.data());
        }
        Ok(out)
    }
}

/// Source of fixed attention-transfer targets.
pub trait Teacher<E: Scalar> {
    /// Spatial resolution of the teacher's attention maps.
    fn attention_resolution(&self) -> Result<(usize, usize)>;

    /// Materialize (logit, map) for every id.
    fn table(&self, store: &ImageStore, ids: &[u32], batch_size: usize) -> Result<TeacherTable<E>>;
}

/// Frozen in-process model used as the teacher.
pub struct ModelTeacher<'a, E: Scalar> {
    model: &'a Model<E>,
}

impl<'a, E: Scalar> ModelTeacher<'a, E> {
    pub fn new(model: &'a Model<E>) -> Self {
        Self { model }
    }
}

impl<E: Scalar> Teacher<E> for ModelTeacher<'_, E> {
    fn attention_resolution(&self) -> Result<(usize, usize)> {
        self.model.spec().attention_resolution()
    }

    fn table(&self, store: &ImageStore, ids: &[u32], batch_size: usize) -> Result<TeacherTable<E>> {
        let resolution = self.attention_resolution()?;
        let mut maps = HashMap::with_capacity(ids.len());
        let mut logits = HashMap::with_capacity(ids.len());
        for chunk in ids.chunks(batch_size.max(1)) {
            let batch = store.batch::<E>(chunk)?;
            let out = self.model.eval_batch(&batch)?;
            let shape = out.attention.shape().to_vec();
            let (c, h, w) = (shape[1], shape[2], shape[3]);
            let sample_len = c * h * w;
            for (i, &id) in chunk.iter().enumerate() {
                let activation = Tensor::from_vec(
                    vec![c, h, w],
                    out.attention.data()[i * sample_len..(i + 1) * sample_len].to_vec(),
                )?;
                let q = attention_map(&activation)?;
                maps.insert(id, q.map().clone());
                logits.insert(id, out.logits[i]);
            }
        }
        Ok(TeacherTable {
            maps,
            logits,
            resolution,
        })
    }
}

/// Teacher backed by an "ATMP" attention file.
pub struct FileTeacher {
    file: TeacherOutputFile,
}

impl FileTeacher {
    pub fn new(file: TeacherOutputFile) -> Self {
        Self { file }
    }

    pub fn open(path: &std::path::Path) -> Result<Self> {
        Ok(Self::new(crate::data::read_attention_file(path)?))
    }
}

impl<E: Scalar> Teacher<E> for FileTeacher {
    fn attention_resolution(&self) -> Result<(usize, usize)> {
        if self.file.records.is_empty() {
            return Err(Error::Data("attention file holds no records".into()));
        }
        Ok((self.file.height, self.file.width))
    }

    fn table(&self, _store: &ImageStore, ids: &[u32], _batch_size: usize) -> Result<TeacherTable<E>> {
        let resolution = Teacher::<E>::attention_resolution(self)?;
        let mut maps = HashMap::with_capacity(ids.len());
        let mut logits = HashMap::with_capacity(ids.len());
        for &id in ids {
            let rec = self
                .file
                .record(id)
                .ok_or_else(|| Error::Data(format!("attention file misses sample id {id}")))?;
            maps.insert(id, rec.map.cast::<E>());
            logits.insert(id, rec.logit as f64);
        }
        Ok(TeacherTable {
            maps,
            logits,
            resolution,
        })
    }
}

/// Export a model's per-sample teacher outputs as attention records
/// (f32, the ATMP on-disk precision).
pub fn teacher_records(
    model: &Model<f32>,
    store: &ImageStore,
    ids: &[u32],
    batch_size: usize,
) -> Result<Vec<AttentionRecord>> {
    let table = ModelTeacher::new(model).table(store, ids, batch_size)?;
    let mut records: Vec<AttentionRecord> = ids
        .iter()
        .map(|&id| {
            Ok(AttentionRecord {
                id,
                logit: table.logit(id).expect("id present by construction") as f32,
                map: table.map(id)?.clone(),
            })
        })
        .collect::<Result<_>>()?;
    records.sort_by_key(|r| r.id);
    Ok(records)
}
