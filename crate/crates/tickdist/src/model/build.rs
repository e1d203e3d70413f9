//! The lighter CNN in its two profiles, and the surrogate teacher.
//!
//! The full profile is the published 13-layer architecture: seven valid
//! (unpadded) convolutions interleaved with batch normalization, two 4/2
//! average pools with dropout, then 512-32-4-1 dense layers ending in a
//! sigmoid head. The attention hook sits on the next-to-last convolution,
//! which emits the 32 x 8 x 8 activation whose channel-absolute sum is the
//! 8 x 8 spatial attention map.
//!
//! The reduced profile shrinks the input to 3 x 96 x 96 with proportionally
//! smaller kernels and channel counts so tests and desk-scale runs finish in
//! minutes; it keeps the exact layer sequence of the full profile. The
//! surrogate teacher doubles every channel and hidden dense width, which
//! keeps the attention resolution equal to the student's while making the
//! network strictly larger.

use serde::{Deserialize, Serialize};

use super::{LayerKind, LayerSpec, Model, ModelSpec};
use crate::error::Result;
use crate::tensor::{Activation, Scalar};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_BN_EPSILON: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.99;

/// Architecture scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 3 x 300 x 300 input; the published layer table.
    Full,
    /// 3 x 96 x 96 input; same layer sequence at desk scale.
    Reduced,
}

impl Profile {
    pub fn name(&self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Reduced => "reduced",
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            Profile::Full => [3, 300, 300],
            Profile::Reduced => [3, 96, 96],
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "reduced" => Ok(Profile::Reduced),
            other => Err(crate::error::Error::Config(format!(
                "unknown profile `{other}` (expected full|reduced)"
            ))),
        }
    }
}

/// Channel / kernel table for one profile at a width multiplier.
struct Dims {
    conv_filters: [usize; 7],
    conv_kernels: [usize; 7],
    conv_strides: [usize; 7],
    pool: (usize, usize),
    dense_units: [usize; 2],
}

fn dims(profile: Profile, width: usize) -> Dims {
    match profile {
        Profile::Full => Dims {
            conv_filters: [64, 128, 256, 128, 64, 32, 32].map(|c| c * width),
            conv_kernels: [8, 8, 8, 8, 8, 5, 5],
            conv_strides: [2, 1, 1, 1, 1, 2, 1],
            pool: (4, 2),
            dense_units: [32 * width, 4 * width],
        },
        Profile::Reduced => Dims {
            conv_filters: [6, 8, 12, 8, 8, 8, 8].map(|c| c * width),
            conv_kernels: [4, 3, 3, 3, 3, 3, 3],
            conv_strides: [2, 1, 1, 1, 1, 1, 1],
            pool: (3, 2),
            dense_units: [16 * width, 4 * width],
        },
    }
}

/// First batch-norm uses leaky ReLU, the rest plain ReLU, dense layers ReLU
/// before the sigmoid head — exactly as the architecture table labels them.
fn layer_table(profile: Profile, width: usize, leaky_slope: f64) -> Vec<LayerSpec> {
    let d = dims(profile, width);
    let mut shape = profile.input_shape().to_vec();
    let mut layers = Vec::new();
    let conv = |shape: &mut Vec<usize>, layers: &mut Vec<LayerSpec>, idx: usize, act: Activation| {
        let (f, k, s) = (d.conv_filters[idx], d.conv_kernels[idx], d.conv_strides[idx]);
        let (h, w) = ((shape[1] - k) / s + 1, (shape[2] - k) / s + 1);
        *shape = vec![f, h, w];
        layers.push(LayerSpec {
            kind: LayerKind::Conv {
                filters: f,
                kernel: k,
                stride: s,
            },
            declared_output: shape.clone(),
        });
        layers.push(LayerSpec {
            kind: LayerKind::BatchNorm { activation: act },
            declared_output: shape.clone(),
        });
    };
    let pool_drop = |shape: &mut Vec<usize>, layers: &mut Vec<LayerSpec>| {
        let (k, s) = d.pool;
        let (h, w) = ((shape[1] - k) / s + 1, (shape[2] - k) / s + 1);
        *shape = vec![shape[0], h, w];
        layers.push(LayerSpec {
            kind: LayerKind::AvgPool { size: k, stride: s },
            declared_output: shape.clone(),
        });
        layers.push(LayerSpec {
            kind: LayerKind::Dropout,
            declared_output: shape.clone(),
        });
    };

    conv(&mut shape, &mut layers, 0, Activation::LeakyRelu(leaky_slope));
    conv(&mut shape, &mut layers, 1, Activation::Relu);
    pool_drop(&mut shape, &mut layers);
    conv(&mut shape, &mut layers, 2, Activation::Relu);
    conv(&mut shape, &mut layers, 3, Activation::Relu);
    pool_drop(&mut shape, &mut layers);
    conv(&mut shape, &mut layers, 4, Activation::Relu);
    conv(&mut shape, &mut layers, 5, Activation::Relu);
    conv(&mut shape, &mut layers, 6, Activation::Relu);

    let flat: usize = shape.iter().product();
    layers.push(LayerSpec {
        kind: LayerKind::Flatten,
        declared_output: vec![flat],
    });
    for units in d.dense_units {
        layers.push(LayerSpec {
            kind: LayerKind::Dense {
                units,
                activation: Activation::Relu,
            },
            declared_output: vec![units],
        });
    }
    layers.push(LayerSpec {
        kind: LayerKind::Output { units: 1 },
        declared_output: vec![1],
    });
    layers
}

/// Index of the attention-hook layer: the next-to-last convolution.
const ATTENTION_HOOK: usize = 14;

fn spec(name: &str, profile: Profile, width: usize) -> ModelSpec {
    ModelSpec {
        name: name.to_string(),
        input_shape: profile.input_shape(),
        layers: layer_table(profile, width, DEFAULT_LEAKY_SLOPE),
        attention_hook: ATTENTION_HOOK,
        leaky_slope: DEFAULT_LEAKY_SLOPE,
        bn_epsilon: DEFAULT_BN_EPSILON,
        bn_momentum: DEFAULT_BN_MOMENTUM,
    }
}

/// Spec of the lighter CNN (width 1) without instantiating parameters.
pub fn lighter_cnn_spec(profile: Profile) -> ModelSpec {
    spec(&format!("lighter-cnn-{}", profile.name()), profile, 1)
}

/// Spec of the channel-doubled surrogate teacher.
pub fn surrogate_teacher_spec(profile: Profile) -> ModelSpec {
    spec(&format!("surrogate-teacher-{}", profile.name()), profile, 2)
}

/// Build the lighter CNN with He-normal weights drawn from `seed`.
pub fn build_lighter_cnn<E: Scalar>(profile: Profile, seed: u64) -> Result<Model<E>> {
    Model::new(lighter_cnn_spec(profile), seed)
}

/// Build the surrogate teacher: a channel-doubled lighter CNN whose
/// attention hook emits a spatial map of the same resolution as the
/// student's, with strictly more parameters.
pub fn build_surrogate_teacher<E: Scalar>(profile: Profile, seed: u64) -> Result<Model<E>> {
    Model::new(surrogate_teacher_spec(profile), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Tensor};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    /// Every output-size row of the published architecture table.
    const FULL_TABLE: [(&str, &[usize]); 22] = [
        ("conv", &[64, 147, 147]),
        ("batchnorm", &[64, 147, 147]),
        ("conv", &[128, 140, 140]),
        ("batchnorm", &[128, 140, 140]),
        ("avgpool", &[128, 69, 69]),
        ("dropout", &[128, 69, 69]),
        ("conv", &[256, 62, 62]),
        ("batchnorm", &[256, 62, 62]),
        ("conv", &[128, 55, 55]),
        ("batchnorm", &[128, 55, 55]),
        ("avgpool", &[128, 26, 26]),
        ("dropout", &[128, 26, 26]),
        ("conv", &[64, 19, 19]),
        ("batchnorm", &[64, 19, 19]),
        ("conv", &[32, 8, 8]),
        ("batchnorm", &[32, 8, 8]),
        ("conv", &[32, 4, 4]),
        ("batchnorm", &[32, 4, 4]),
        ("flatten", &[512]),
        ("dense", &[32]),
        ("dense", &[4]),
        ("output", &[1]),
    ];

    fn kind_name(k: &LayerKind) -> &'static str {
        match k {
            LayerKind::Conv { .. } => "conv",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::Dropout => "dropout",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Output { .. } => "output",
        }
    }

    #[test]
    fn full_profile_reproduces_every_output_size_row() {
        let spec = lighter_cnn_spec(Profile::Full);
        let computed = spec.computed_shapes().unwrap();
        assert_eq!(spec.layers.len(), FULL_TABLE.len());
        for (i, ((kind, expected), got)) in FULL_TABLE.iter().zip(&computed).enumerate() {
            assert_eq!(kind_name(&spec.layers[i].kind), *kind, "layer {i} kind");
            assert_eq!(&got[..], *expected, "layer {i} output size");
            assert_eq!(
                &spec.layers[i].declared_output[..],
                *expected,
                "layer {i} declared"
            );
        }
    }

    #[test]
    fn full_profile_parameter_counts_are_exact() {
        let model = build_lighter_cnn::<f32>(Profile::Full, 0).unwrap();
        assert_eq!(model.count_parameters(), (5_350_633, 5_352_041));
    }

    #[test]
    fn batchnorm_running_stats_account_for_the_difference() {
        // 2 * (64+128+256+128+64+32+32) = 1408 non-trainable parameters
        let model = build_lighter_cnn::<f32>(Profile::Full, 0).unwrap();
        let running: usize = model
            .bn_states()
            .iter()
            .map(|s| s.running_mean.len() + s.running_var.len())
            .sum();
        assert_eq!(running, 1_408);
        assert_eq!(running, 2 * (64 + 128 + 256 + 128 + 64 + 32 + 32));
        let (trainable, total) = model.count_parameters();
        assert_eq!(total - trainable, 1_408);
    }

    #[test]
    fn surrogate_matches_student_attention_resolution_and_outweighs_it() {
        for profile in [Profile::Full, Profile::Reduced] {
            let student = lighter_cnn_spec(profile);
            let teacher = surrogate_teacher_spec(profile);
            assert_eq!(
                student.attention_resolution().unwrap(),
                teacher.attention_resolution().unwrap(),
                "{profile:?}"
            );
        }
        let student = build_lighter_cnn::<f32>(Profile::Full, 0).unwrap();
        let teacher = build_surrogate_teacher::<f32>(Profile::Full, 0).unwrap();
        assert!(teacher.count_parameters().0 > student.count_parameters().0);
        assert!(teacher.count_parameters().0 > 5_350_633);
    }

    #[test]
    fn full_profile_attention_source_is_32_by_8_by_8() {
        let spec = lighter_cnn_spec(Profile::Full);
        let shapes = spec.computed_shapes().unwrap();
        assert_eq!(shapes[spec.attention_hook], vec![32, 8, 8]);
        assert!(matches!(
            spec.layers[spec.attention_hook].kind,
            LayerKind::Conv { .. }
        ));
    }

    #[test]
    fn reduced_profile_validates_and_builds() {
        let model = build_lighter_cnn::<f32>(Profile::Reduced, 7).unwrap();
        let (trainable, total) = model.count_parameters();
        assert!(trainable > 0 && total > trainable);
    }

    #[test]
    fn same_seed_builds_identical_parameters() {
        let a = build_lighter_cnn::<f32>(Profile::Reduced, 42).unwrap();
        let b = build_lighter_cnn::<f32>(Profile::Reduced, 42).unwrap();
        let c = build_lighter_cnn::<f32>(Profile::Reduced, 43).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.value.data(), pb.value.data(), "{}", pa.name);
        }
        assert!(a
            .params()
            .iter()
            .zip(c.params())
            .any(|(pa, pc)| pa.value.data() != pc.value.data()));
    }

    #[test]
    fn zero_input_with_zero_biases_scores_one_half() {
        let mut model = build_lighter_cnn::<f32>(Profile::Reduced, 3).unwrap();
        let batch = Tensor::zeros(&[1, 3, 96, 96]);
        let mut g = Graph::new();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let pass = model.forward_train(&mut g, &batch, 0.0, &mut rng).unwrap();
        let logit = g.value(pass.logits).data()[0];
        assert_eq!(logit, 0.0);
        assert_eq!(super::super::stable_sigmoid_f64(logit as f64), 0.5);
    }

    #[test]
    fn eval_before_any_training_is_a_state_error() {
        let model = build_lighter_cnn::<f32>(Profile::Reduced, 3).unwrap();
        let batch = Tensor::zeros(&[1, 3, 96, 96]);
        let mut g = Graph::new();
        assert!(matches!(
            model.forward_eval(&mut g, &batch),
            Err(crate::error::Error::State(_))
        ));
    }

    #[test]
    fn eval_forward_is_pure() {
        let mut model = build_lighter_cnn::<f32>(Profile::Reduced, 11).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let batch = Tensor::from_fn(&[2, 3, 96, 96], |i| ((i * 2_654_435_761) % 997) as f32 / 997.0);
        // one train pass to initialize running statistics
        let mut g = Graph::new();
        model.forward_train(&mut g, &batch, 0.0, &mut rng).unwrap();
        let p1 = model.predict_proba(&batch).unwrap();
        let p2 = model.predict_proba(&batch).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn forward_returns_batched_logits_and_attention_source() {
        let mut model = build_lighter_cnn::<f32>(Profile::Reduced, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let batch = Tensor::from_fn(&[2, 3, 96, 96], |i| (i % 251) as f32 / 251.0);
        let mut g = Graph::new();
        let pass = model.forward_train(&mut g, &batch, 0.25, &mut rng).unwrap();
        assert_eq!(g.value(pass.logits).shape(), &[2, 1]);
        assert_eq!(g.value(pass.attention).shape(), &[2, 8, 4, 4]);
    }

    #[test]
    fn batch_shape_mismatch_is_rejected() {
        let mut model = build_lighter_cnn::<f32>(Profile::Reduced, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let batch = Tensor::zeros(&[1, 3, 64, 64]);
        let mut g = Graph::new();
        assert!(model.forward_train(&mut g, &batch, 0.0, &mut rng).is_err());
    }
}
