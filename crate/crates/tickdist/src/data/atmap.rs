//! "ATMP" v1 teacher-output exchange format.
//!
//! Per-sample teacher logits and precomputed spatial attention maps, so
//! attention-transfer training can run against a file instead of an
//! in-process teacher. Layout: magic `ATMP`, u16 version, u32 record
//! count, records of (u32 id, f32 logit, u16 H, u16 W, H*W little-endian
//! f32 values), trailing CRC32.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ATMP";
pub const ATMAP_VERSION: u16 = 1;

/// One teacher record: logit plus H x W attention map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub id: u32,
    pub logit: f32,
    pub map: Tensor<f32>,
}

/// Parsed attention file with consistent map dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutputFile {
    pub records: Vec<AttentionRecord>,
    pub height: usize,
    pub width: usize,
}

impl TeacherOutputFile {
    pub fn record(&self, id: u32) -> Option<&AttentionRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

/// Encode records; refuses inconsistent map shapes or duplicate ids.
pub fn encode_attention_records(records: &[AttentionRecord]) -> Result<Vec<u8>> {
    if records.is_empty() {
        return Err(Error::Contract("no attention records to write".into()));
    }
    let dims = records[0].map.shape().to_vec();
    if dims.len() != 2 {
        return Err(Error::Shape {
            op: "atmap",
            detail: format!("maps must be 2D, got {dims:?}"),
        });
    }
    let mut seen = std::collections::HashSet::new();
    for r in records {
        if r.map.shape() != dims {
            return Err(Error::Shape {
                op: "atmap",
                detail: format!(
                    "record {} has map shape {:?}, expected {dims:?}",
                    r.id,
                    r.map.shape()
                ),
            });
        }
        if !seen.insert(r.id) {
            return Err(Error::Contract(format!("duplicate attention record id {}", r.id)));
        }
    }
    let (h, w) = (dims[0], dims[1]);
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::Shape {
            op: "atmap",
            detail: format!("map {h}x{w} exceeds the u16 dimension fields"),
        });
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&ATMAP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        buf.extend_from_slice(&r.id.to_le_bytes());
        buf.extend_from_slice(&r.logit.to_le_bytes());
        buf.extend_from_slice(&(h as u16).to_le_bytes());
        buf.extend_from_slice(&(w as u16).to_le_bytes());
        for v in r.map.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn decode_attention_records(bytes: &[u8]) -> Result<TeacherOutputFile> {
    if bytes.len() < 14 {
        return Err(Error::Format("truncated attention file".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("attention file checksum mismatch".into()));
    }
    if &body[..4] != MAGIC {
        return Err(Error::Format("bad attention file magic".into()));
    }
    let version = u16::from_le_bytes(body[4..6].try_into().unwrap());
    if version != ATMAP_VERSION {
        return Err(Error::Format(format!(
            "unsupported attention file version {version} (supported: {ATMAP_VERSION})"
        )));
    }
    let count = u32::from_le_bytes(body[6..10].try_into().unwrap()) as usize;
    let mut pos = 10usize;
    let mut records = Vec::with_capacity(count);
    let mut dims: Option<(usize, usize)> = None;
    for _ in 0..count {
        if pos + 12 > body.len() {
            return Err(Error::Format("truncated attention record".into()));
        }
        let id = u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap());
        let logit = f32::from_le_bytes(body[pos + 4..pos + 8].try_into().unwrap());
        let h = u16::from_le_bytes(body[pos + 8..pos + 10].try_into().unwrap()) as usize;
        let w = u16::from_le_bytes(body[pos + 10..pos + 12].try_into().unwrap()) as usize;
        pos += 12;
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(Error::Format(format!(
                    "record {id} has shape {h}x{w}, expected {}x{}",
                    d.0, d.1
                )));
            }
            _ => {}
        }
        let need = h * w * 4;
        if pos + need > body.len() {
            return Err(Error::Format("truncated attention record data".into()));
        }
        let data: Vec<f32> = body[pos..pos + need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += need;
        records.push(AttentionRecord {
            id,
            logit,
            map: Tensor::from_vec(vec![h, w], data)?,
        });
    }
    if pos != body.len() {
        return Err(Error::Format("trailing bytes in attention file".into()));
    }
    let (height, width) = dims.unwrap_or((0, 0));
    Ok(TeacherOutputFile {
        records,
        height,
        width,
    })
}

pub fn write_attention_file(path: &Path, records: &[AttentionRecord]) -> Result<()> {
    std::fs::write(path, encode_attention_records(records)?)?;
    Ok(())
}

pub fn read_attention_file(path: &Path) -> Result<TeacherOutputFile> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read attention file {}: {e}", path.display())))?;
    decode_attention_records(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: u32, h: usize, w: usize) -> AttentionRecord {
        AttentionRecord {
            id,
            logit: id as f32 * 0.25 - 1.0,
            map: Tensor::from_fn(&[h, w], |i| (i as f32 + id as f32).sin().abs()),
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let records = vec![record(0, 4, 4), record(1, 4, 4), record(9, 4, 4)];
        let bytes = encode_attention_records(&records).unwrap();
        let decoded = decode_attention_records(&bytes).unwrap();
        assert_eq!(decoded.records, records);
        assert_eq!((decoded.height, decoded.width), (4, 4));
        assert_eq!(encode_attention_records(&decoded.records).unwrap(), bytes);
    }

    #[test]
    fn inconsistent_shapes_refuse_to_write() {
        let records = vec![record(0, 4, 4), record(1, 3, 3)];
        assert!(encode_attention_records(&records).is_err());
        let dup = vec![record(0, 4, 4), record(0, 4, 4)];
        assert!(encode_attention_records(&dup).is_err());
    }

    #[test]
    fn checksum_and_version_violations_are_rejected() {
        let records = vec![record(0, 2, 2)];
        let mut bytes = encode_attention_records(&records).unwrap();
        bytes[10] ^= 1;
        assert!(matches!(
            decode_attention_records(&bytes),
            Err(Error::Format(_))
        ));

        let mut versioned = encode_attention_records(&records).unwrap();
        versioned[4] = 9;
        let body_len = versioned.len() - 4;
        let crc = crc32fast::hash(&versioned[..body_len]);
        versioned[body_len..].copy_from_slice(&crc.to_le_bytes());
        match decode_attention_records(&versioned) {
            Err(Error::Format(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
