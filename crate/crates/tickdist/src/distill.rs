//! Knowledge-transfer math: spatial attention maps, the normalized
//! attention-transfer loss, temperature-softened labels with the
//! replacement rule for misclassified samples, and the combined objective.
//!
//! The binary head produces a single logit theta; probabilities are the
//! complementary pair (1 - p1, p1) with p1 = sigmoid(theta), which is the
//! two-logit softmax with the other logit pinned at zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{stable_sigmoid_f64, Model};
use crate::tensor::{normalized_l2_distance, Scalar, Tensor};

/// Norm guard for attention-map normalization: maps with a smaller l2 norm
/// normalize to the zero vector.
pub const AT_EPSILON: f64 = 1e-12;

/// True-class probability assigned to samples the first student
/// misclassifies.
pub const REPLACEMENT_TRUE_CLASS_PROB: f64 = 0.6;

/// Probability clamp inside the cross-entropy term.
pub const PROB_CLAMP: f64 = 1e-7;

/// Per-sample spatial attention map: channel-wise sum of absolute
/// activations, a nonnegative H x W tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap<E> {
    map: Tensor<E>,
}

impl<E: Scalar> AttentionMap<E> {
    /// Wrap an existing 2D nonnegative map.
    pub fn from_raw(map: Tensor<E>) -> Result<Self> {
        if map.ndim() != 2 {
            return Err(Error::Shape {
                op: "attention_map",
                detail: format!("expected H x W map, got {:?}", map.shape()),
            });
        }
        if map.data().iter().any(|&v| v < E::zero()) {
            return Err(Error::Contract("attention map must be nonnegative".into()));
        }
        Ok(Self { map })
    }

    pub fn map(&self) -> &Tensor<E> {
        &self.map
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.map.shape()[0], self.map.shape()[1])
    }
}

/// Q[h, w] = sum over channels of |A[c, h, w]| for one sample's 3D
/// activation.
pub fn attention_map<E: Scalar>(activation: &Tensor<E>) -> Result<AttentionMap<E>> {
    if activation.ndim() != 3 {
        return Err(Error::Shape {
            op: "attention_map",
            detail: format!("expected C x H x W activation, got {:?}", activation.shape()),
        });
    }
    let (c, h, w) = (
        activation.shape()[0],
        activation.shape()[1],
        activation.shape()[2],
    );
    let plane = h * w;
    let mut map = Tensor::zeros(&[h, w]);
    for ch in 0..c {
        for (o, &v) in map
            .data_mut()
            .iter_mut()
            .zip(&activation.data()[ch * plane..(ch + 1) * plane])
        {
            *o = *o + v.abs();
        }
    }
    Ok(AttentionMap { map })
}

/// l2 distance between the l2-normalized vectorized maps. The teacher map
/// is a fixed target; resolutions must agree.
pub fn at_loss<E: Scalar>(
    teacher: &AttentionMap<E>,
    student: &AttentionMap<E>,
    epsilon: f64,
) -> Result<E> {
    if teacher.resolution() != student.resolution() {
        return Err(Error::Contract(format!(
            "attention map resolution mismatch: teacher {:?} vs student {:?}",
            teacher.resolution(),
            student.resolution()
        )));
    }
    Ok(normalized_l2_distance(
        student.map.data(),
        teacher.map.data(),
        E::from_f64(epsilon),
    ))
}

/// Temperature-softened probability pair from a single binary logit:
/// p1 = sigmoid(theta / T), p0 = 1 - p1.
pub fn soften_logit(theta: f64, temperature: f64) -> Result<(f64, f64)> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let p1 = stable_sigmoid_f64(theta / temperature);
    Ok((1.0 - p1, p1))
}

/// Where a soft label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftLabelOrigin {
    /// Correctly classified: temperature-softened student output.
    Softened,
    /// Misclassified: true-class probability replaced by a constant.
    Replaced,
}

impl std::fmt::Display for SoftLabelOrigin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SoftLabelOrigin::Softened => "softened",
            SoftLabelOrigin::Replaced => "replaced",
        })
    }
}

impl std::str::FromStr for SoftLabelOrigin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softened" => Ok(SoftLabelOrigin::Softened),
            "replaced" => Ok(SoftLabelOrigin::Replaced),
            other => Err(Error::Data(format!("unknown soft-label origin `{other}`"))),
        }
    }
}

/// Per-sample two-class soft target. Only p1 is stored; p0 is its
/// complement by construction, so the pair always sums to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftLabelRecord {
    pub id: u32,
    pub p1: f64,
    pub origin: SoftLabelOrigin,
}

impl SoftLabelRecord {
    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }
}

/// Loss weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta1: 1.0,
            beta2: 2.0,
            temperature: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("temperature", self.temperature),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Cross-entropy of a probability pair against soft targets, with the
/// [`PROB_CLAMP`] guard inside the logs.
pub fn cross_entropy_pair(p: (f64, f64), q: (f64, f64)) -> Result<f64> {
    for (name, pair) in [("p", p), ("q", q)] {
        if !(pair.0.is_finite() && pair.1.is_finite())
            || pair.0 < 0.0
            || pair.1 < 0.0
            || (pair.0 + pair.1 - 1.0).abs() > 1e-9
        {
            return Err(Error::Contract(format!(
                "{name} = ({}, {}) is not a probability pair",
                pair.0, pair.1
            )));
        }
    }
    let clamp = |v: f64| v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok(-(p.0 * clamp(q.0).ln() + p.1 * clamp(q.1).ln()))
}

/// Total objective: (1/beta1) * cross-entropy + (1/beta2) * attention loss.
pub fn combined_loss(p: (f64, f64), q: (f64, f64), l_at: f64, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(weighted_total(cross_entropy_pair(p, q)?, l_at, w))
}

/// The weighting rule alone, for a precomputed cross-entropy value.
pub fn weighted_total(cross_entropy: f64, l_at: f64, w: &LossWeights) -> f64 {
    cross_entropy / w.beta1 + l_at / w.beta2
}

/// Run a trained first student over the entire training set and emit one
/// soft label per sample: temperature-softened outputs where the student is
/// right, the constant replacement for the true class where it is wrong.
///
/// `fetch_batch` materializes the images for a slice of sample ids.
pub fn generate_soft_labels<E: Scalar>(
    student: &Model<E>,
    samples: &[(u32, u8)],
    mut fetch_batch: impl FnMut(&[u32]) -> Result<Tensor<E>>,
    batch_size: usize,
    temperature: f64,
    replacement: f64,
) -> Result<Vec<SoftLabelRecord>> {
    if samples.is_empty() {
        return Err(Error::Data("cannot generate soft labels for an empty dataset".into()));
    }
    if !(0.5..1.0).contains(&replacement) || replacement == 0.5 {
        return Err(Error::Config(format!(
            "replacement probability must be in (0.5, 1), got {replacement}"
        )));
    }
    if temperature <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let batch_size = batch_size.max(1);
    let mut records = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size) {
        let ids: Vec<u32> = chunk.iter().map(|&(id, _)| id).collect();
        let batch = fetch_batch(&ids)?;
        let out = student.eval_batch(&batch)?;
        if out.logits.len() != chunk.len() {
            return Err(Error::Contract(format!(
                "student produced {} logits for {} samples",
                out.logits.len(),
                chunk.len()
            )));
        }
        for (&(id, label), &theta) in chunk.iter().zip(&out.logits) {
            // scores at the 0.5 threshold classify positive, i.e. theta >= 0
            let predicted = u8::from(theta >= 0.0);
            let record = if predicted == label {
                let (_, p1) = soften_logit(theta, temperature)?;
                SoftLabelRecord {
                    id,
                    p1,
                    origin: SoftLabelOrigin::Softened,
                }
            } else {
                let p1 = if label == 1 {
                    replacement
                } else {
                    1.0 - replacement
                };
                SoftLabelRecord {
                    id,
                    p1,
                    origin: SoftLabelOrigin::Replaced,
                }
            };
            records.push(record);
        }
    }
    Ok(records)
}

/// Write the soft-label sidecar: UTF-8 CSV `id,p1,origin`.
pub fn write_soft_labels(path: &std::path::Path, records: &[SoftLabelRecord]) -> Result<()> {
    let mut out = String::from("id,p1,origin\n");
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.id, r.p1, r.origin));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_soft_labels(path: &std::path::Path) -> Result<Vec<SoftLabelRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("id,p1,origin") => {}
        other => {
            return Err(Error::Data(format!(
                "bad soft-label header {other:?}, expected id,p1,origin"
            )))
        }
    }
    let mut records = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (id, p1, origin) = (parts.next(), parts.next(), parts.next());
        let (Some(id), Some(p1), Some(origin), None) = (id, p1, origin, parts.next()) else {
            return Err(Error::Data(format!("bad soft-label row `{line}`")));
        };
        records.push(SoftLabelRecord {
            id: id
                .parse()
                .map_err(|_| Error::Data(format!("bad id in `{line}`")))?,
            p1: p1
                .parse()
                .map_err(|_| Error::Data(format!("bad p1 in `{line}`")))?,
            origin: origin.parse()?,
        });
    }
    Ok(records)
}
