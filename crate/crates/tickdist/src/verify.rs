//! Verification harnesses: finite-difference checks over the whole
//! operator set (including the combined-objective composite) and fast
//! structural self-checks of the published architecture facts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::distill::{self, LossWeights};
use crate::error::Result;
use crate::model::{build_lighter_cnn, build_surrogate_teacher, lighter_cnn_spec, Profile};
use crate::tensor::{finite_difference_check, Activation, Graph, NodeId, Tensor};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Default step for central differences.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Default pass tolerance on the relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
/// Coordinate subsample per case; keeps the full suite fast.
const MAX_COORDS: usize = 48;

fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Random values bounded away from zero (for kinked ops: relu, |x|).
fn random_tensor_off_zero<R: Rng>(rng: &mut R, shape: &[usize], margin: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let mag = rng.random_range(margin..1.0);
        if rng.random::<f64>() < 0.5 {
            -mag
        } else {
            mag
        }
    })
}

struct Case {
    name: &'static str,
    /// Builds (point, f) for one seed.
    run: fn(u64, f64, f64) -> Result<crate::tensor::GradCheckReport>,
}

macro_rules! fd_case {
    ($seed:expr, $step:expr, $tol:expr, $point:expr, $f:expr) => {
        finite_difference_check($f, &$point, $step, $tol, Some(MAX_COORDS), $seed)
    };
}

fn conv_input(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let point = random_tensor(&mut rng, &[2, 3, 8, 8], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
    let b = random_tensor(&mut rng, &[4], -0.2, 0.2);
    fd_case!(seed, step, tol, point, move |g: &mut Graph<f64>, x| {
        let wn = g.constant(w.clone())?;
        let bn = g.constant(b.clone())?;
        let y = g.conv2d(x, wn, bn, 2)?;
        g.sum_all(y)
    })
}

fn conv_weight(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x11);
    let input = random_tensor(&mut rng, &[2, 2, 7, 7], -1.0, 1.0);
    let point = random_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let b = random_tensor(&mut rng, &[3], -0.2, 0.2);
    fd_case!(seed, step, tol, point, move |g: &mut Graph<f64>, w| {
        let xn = g.constant(input.clone())?;
        let bn = g.constant(b.clone())?;
        let y = g.conv2d(xn, w, bn, 1)?;
        let s = g.activation(y, Activation::Sigmoid)?;
        g.sum_all(s)
    })
}

fn conv_bias(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x12);
    let input = random_tensor(&mut rng, &[1, 2, 6, 6], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let point = random_tensor(&mut rng, &[3], -0.3, 0.3);
    fd_case!(seed, step, tol, point, move |g: &mut Graph<f64>, b| {
        let xn = g.constant(input.clone())?;
        let wn = g.constant(w.clone())?;
        let y = g.conv2d(xn, wn, b, 1)?;
        let s = g.activation(y, Activation::Sigmoid)?;
        g.sum_all(s)
    })
}

fn avgpool(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x13);
    let point = random_tensor(&mut rng, &[2, 3, 7, 7], -1.0, 1.0);
    fd_case!(seed, step, tol, point, |g: &mut Graph<f64>, x| {
        let y = g.avgpool2d(x, 3, 2)?;
        let s = g.activation(y, Activation::Sigmoid)?;
        g.sum_all(s)
    })
}

fn batchnorm_input(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x14);
    let point = random_tensor(&mut rng, &[3, 2, 4, 4], -2.0, 2.0);
    let gamma = random_tensor(&mut rng, &[2], 0.5, 1.5);
    let beta = random_tensor(&mut rng, &[2], -0.5, 0.5);
    fd_case!(seed, step, tol, point, move |g: &mut Graph<f64>, x| {
        let gn = g.constant(gamma.clone())?;
        let bn = g.constant(beta.clone())?;
        let (y, _) = g.batchnorm_train(x, gn, bn, 1e-5)?;
        let s = g.activation(y, Activation::Sigmoid)?;
        g.sum_all(s)
    })
}

fn batchnorm_gamma(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x15);
    let input = random_tensor(&mut rng, &[3, 4, 2, 2], -2.0, 2.0);
    let beta = random_tensor(&mut rng, &[4], -0.3, 0.3);
    let point = random_tensor(&mut rng, &[4], 0.5, 1.5);
    fd_case!(seed, step, tol, point, move |g: &mut Graph<f64>, gamma| {
        let xn = g.constant(input.clone())?;
        let bn = g.constant(beta.clone())?;
        let (y, _) = g.batchnorm_train(xn, gamma, bn, 1e-5)?;
        let s = g.activation(y, Activation::Sigmoid)?;
        g.sum_all(s)
    })
}

fn batchnorm_beta(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x25);
    let input = random_tensor(&mut rng, &[3, 4, 2, 2], -2.0, 2.0);
    let gamma = random_tensor(&mut rng, &[4], 0.5, 1.5);
    let point = random_tensor(&mut rng, &[4], -0.5, 0.5);
    fd_case!(seed, step, tol, point, move |g: &mut Graph<f64>, beta| {
        let xn = g.constant(input.clone())?;
        let gn = g.constant(gamma.clone())?;
        let (y, _) = g.batchnorm_train(xn, gn, beta, 1e-5)?;
        let s = g.activation(y, Activation::Sigmoid)?;
        g.sum_all(s)
    })
}

fn activations(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x16);
    let point = random_tensor_off_zero(&mut rng, &[4, 5], 0.05);
    fd_case!(seed, step, tol, point, |g: &mut Graph<f64>, x| {
        let r = g.activation(x, Activation::Relu)?;
        let l = g.activation(r, Activation::LeakyRelu(0.01))?;
        let s = g.activation(l, Activation::Sigmoid)?;
        g.sum_all(s)
    })
}

fn dense_all(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x17);
    let point = random_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[5, 4], -0.5, 0.5);
    let b = random_tensor(&mut rng, &[4], -0.2, 0.2);
    fd_case!(seed, step, tol, point, move |g: &mut Graph<f64>, x| {
        let wn = g.leaf(w.clone(), true)?;
        let bn = g.leaf(b.clone(), true)?;
        let y = g.dense(x, wn, bn)?;
        let s = g.activation(y, Activation::Sigmoid)?;
        g.sum_all(s)
    })
}

fn dense_weight(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x18);
    let input = random_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    let point = random_tensor(&mut rng, &[5, 4], -0.5, 0.5);
    fd_case!(seed, step, tol, point, move |g: &mut Graph<f64>, w| {
        let xn = g.constant(input.clone())?;
        let bn = g.constant(Tensor::zeros(&[4]))?;
        let y = g.dense(xn, w, bn)?;
        let s = g.activation(y, Activation::Sigmoid)?;
        g.sum_all(s)
    })
}

fn dropout_fixed_mask(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x19);
    let point = random_tensor(&mut rng, &[6, 6], -1.0, 1.0);
    fd_case!(seed, step, tol, point, move |g: &mut Graph<f64>, x| {
        // the mask must be identical across evaluations: reseed per call
        let mut mask_rng = ChaCha20Rng::seed_from_u64(seed ^ 0xface);
        let y = g.dropout_train(x, 0.4, &mut mask_rng)?;
        let s = g.activation(y, Activation::Sigmoid)?;
        g.sum_all(s)
    })
}

fn attention_map_case(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x1a);
    let point = random_tensor_off_zero(&mut rng, &[2, 3, 4, 4], 0.05);
    fd_case!(seed, step, tol, point, |g: &mut Graph<f64>, x| {
        let q = g.channel_abs_sum(x)?;
        let s = g.activation(q, Activation::Sigmoid)?;
        g.sum_all(s)
    })
}

fn at_loss_case(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x1b);
    let point = random_tensor_off_zero(&mut rng, &[2, 2, 4, 4], 0.05);
    let teacher = random_tensor(&mut rng, &[2, 4, 4], 0.1, 1.0);
    fd_case!(seed, step, tol, point, move |g: &mut Graph<f64>, x| {
        let q = g.channel_abs_sum(x)?;
        g.attention_loss(q, &teacher, 1e-12, true)
    })
}

fn bce_case(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x1c);
    let point = random_tensor(&mut rng, &[5, 1], -2.5, 2.5);
    let targets: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
    fd_case!(seed, step, tol, point, move |g: &mut Graph<f64>, x| {
        g.bce_with_logits(x, &targets)
    })
}

/// The full combined objective: conv -> batchnorm -> relu feeding both the
/// attention branch (abs-sum + attention loss) and the classifier branch
/// (flatten + dense + soft-target cross-entropy), summed with the 1/beta
/// prefactors.
fn combined_objective(seed: u64, step: f64, tol: f64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x1d);
    let point = random_tensor(&mut rng, &[2, 2, 9, 9], -1.0, 1.0);
    let w_conv = random_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let b_conv = random_tensor(&mut rng, &[3], -0.2, 0.2);
    let gamma = random_tensor(&mut rng, &[3], 0.8, 1.2);
    let beta = random_tensor(&mut rng, &[3], -0.2, 0.2);
    let w_dense = random_tensor(&mut rng, &[48, 1], -0.4, 0.4);
    let b_dense = random_tensor(&mut rng, &[1], -0.1, 0.1);
    let teacher = random_tensor(&mut rng, &[2, 4, 4], 0.05, 1.0);
    let targets: Vec<f64> = (0..2).map(|_| rng.random_range(0.05..0.95)).collect();
    let weights = LossWeights::default();
    fd_case!(seed, step, tol, point, move |g: &mut Graph<f64>, x| {
        let wc = g.constant(w_conv.clone())?;
        let bc = g.constant(b_conv.clone())?;
        let conv = g.conv2d(x, wc, bc, 2)?; // 2 x 3 x 4 x 4
        let gn = g.constant(gamma.clone())?;
        let bn = g.constant(beta.clone())?;
        let (normed, _) = g.batchnorm_train(conv, gn, bn, 1e-5)?;
        let act = g.activation(normed, Activation::LeakyRelu(0.01))?;

        let maps = g.channel_abs_sum(act)?;
        let at = g.attention_loss(maps, &teacher, 1e-12, true)?;
        let at_scaled = g.scale(at, 1.0 / weights.beta2)?;

        let flat = g.flatten(act)?;
        let wd = g.constant(w_dense.clone())?;
        let bd = g.constant(b_dense.clone())?;
        let logits = g.dense(flat, wd, bd)?;
        let ce = g.bce_with_logits(logits, &targets)?;
        let ce_scaled = g.scale(ce, 1.0 / weights.beta1)?;

        g.add(ce_scaled, at_scaled)
    })
}

const CASES: &[Case] = &[
    Case { name: "conv2d/input", run: conv_input },
    Case { name: "conv2d/weight", run: conv_weight },
    Case { name: "conv2d/bias", run: conv_bias },
    Case { name: "avgpool2d/input", run: avgpool },
    Case { name: "batchnorm/input", run: batchnorm_input },
    Case { name: "batchnorm/gamma", run: batchnorm_gamma },
    Case { name: "batchnorm/beta", run: batchnorm_beta },
    Case { name: "activations/chain", run: activations },
    Case { name: "dense/input", run: dense_all },
    Case { name: "dense/weight", run: dense_weight },
    Case { name: "dropout/fixed-mask", run: dropout_fixed_mask },
    Case { name: "attention_map/input", run: attention_map_case },
    Case { name: "at_loss/through-attention-map", run: at_loss_case },
    Case { name: "bce_with_logits/logits", run: bce_case },
    Case { name: "combined_objective/input", run: combined_objective },
];

/// Run every operator case over `n_seeds` seeds; one outcome per case with
/// the worst relative error observed.
pub fn gradcheck_suite(n_seeds: u64, step: f64, tolerance: f64) -> Result<Vec<CheckOutcome>> {
    let mut outcomes = Vec::with_capacity(CASES.len());
    for case in CASES {
        let mut worst = 0.0f64;
        let mut worst_seed = 0u64;
        for seed in 0..n_seeds {
            let report = (case.run)(seed, step, tolerance)?;
            if report.max_rel_err > worst {
                worst = report.max_rel_err;
                worst_seed = seed;
            }
        }
        outcomes.push(CheckOutcome::new(
            case.name,
            worst < tolerance,
            format!("max rel err {worst:.3e} (worst seed {worst_seed}, {n_seeds} seeds)"),
        ));
    }
    Ok(outcomes)
}

/// Structural self-checks: exact parameter counts, the published output-size
/// table, attention-hook geometry, and spot values of the transfer math.
pub fn selfcheck() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    let model = build_lighter_cnn::<f32>(Profile::Full, 0)?;
    let (trainable, total) = model.count_parameters();
    out.push(CheckOutcome::new(
        "parameter-count/full",
        (trainable, total) == (5_350_633, 5_352_041),
        format!("(trainable, total) = ({trainable}, {total}), expected (5350633, 5352041)"),
    ));

    let spec = lighter_cnn_spec(Profile::Full);
    let computed = spec.computed_shapes()?;
    let declared: Vec<_> = spec.layers.iter().map(|l| l.declared_output.clone()).collect();
    let mut shape_ok = computed == declared;
    let expected_rows: &[&[usize]] = &[
        &[64, 147, 147],
        &[64, 147, 147],
        &[128, 140, 140],
        &[128, 140, 140],
        &[128, 69, 69],
        &[128, 69, 69],
        &[256, 62, 62],
        &[256, 62, 62],
        &[128, 55, 55],
        &[128, 55, 55],
        &[128, 26, 26],
        &[128, 26, 26],
        &[64, 19, 19],
        &[64, 19, 19],
        &[32, 8, 8],
        &[32, 8, 8],
        &[32, 4, 4],
        &[32, 4, 4],
        &[512],
        &[32],
        &[4],
        &[1],
    ];
    shape_ok &= computed.len() == expected_rows.len()
        && computed.iter().zip(expected_rows).all(|(a, b)| a == b);
    out.push(CheckOutcome::new(
        "shape-table/full",
        shape_ok,
        format!("{} layer rows checked", computed.len()),
    ));

    let hook_shape = &computed[spec.attention_hook];
    out.push(CheckOutcome::new(
        "attention-hook/full",
        hook_shape == &vec![32, 8, 8],
        format!("hook activation {hook_shape:?}, expected [32, 8, 8]"),
    ));

    let teacher_res = build_surrogate_teacher::<f32>(Profile::Full, 0)?
        .spec()
        .attention_resolution()?;
    out.push(CheckOutcome::new(
        "surrogate/resolution",
        teacher_res == spec.attention_resolution()?,
        format!("teacher {teacher_res:?} vs student {:?}", spec.attention_resolution()?),
    ));

    // attention-loss spot values
    let q = distill::AttentionMap::from_raw(Tensor::from_vec(
        vec![2, 2],
        vec![1.0f64, 2.0, 3.0, 4.0],
    )?)?;
    let scaled = distill::AttentionMap::from_raw(Tensor::from_vec(
        vec![2, 2],
        vec![10.0f64, 20.0, 30.0, 40.0],
    )?)?;
    let zero_loss = distill::at_loss(&q, &scaled, distill::AT_EPSILON)?;
    let e1 = distill::AttentionMap::from_raw(Tensor::from_vec(vec![1, 2], vec![1.0f64, 0.0])?)?;
    let e2 = distill::AttentionMap::from_raw(Tensor::from_vec(vec![1, 2], vec![0.0f64, 1.0])?)?;
    let orth = distill::at_loss(&e1, &e2, distill::AT_EPSILON)?;
    out.push(CheckOutcome::new(
        "at-loss/invariants",
        zero_loss < 1e-9 && (orth - 2f64.sqrt()).abs() < 1e-9,
        format!("scale-invariant {zero_loss:.2e}, orthogonal {orth:.12}"),
    ));

    let (_, p1) = distill::soften_logit(5.0, 5.0)?;
    out.push(CheckOutcome::new(
        "soften-logit/theta5-t5",
        (p1 - 0.731_058_578_630_004_9).abs() < 1e-12,
        format!("p1 = {p1:.15}"),
    ));

    let ce = distill::combined_loss((0.5, 0.5), (0.5, 0.5), 0.0, &LossWeights::default())?;
    out.push(CheckOutcome::new(
        "combined-loss/even-odds",
        (ce - std::f64::consts::LN_2).abs() < 1e-12,
        format!("loss = {ce:.15}, expected ln 2"),
    ));

    Ok(out)
}

/// Convenience: verify that `loss` built by `f` is differentiable w.r.t.
/// its input at the default step/tolerance.
pub fn quick_gradcheck<F>(f: F, point: &Tensor<f64>) -> Result<crate::tensor::GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, NodeId) -> Result<NodeId>,
{
    finite_difference_check(
        f,
        point,
        GRADCHECK_STEP,
        GRADCHECK_TOLERANCE,
        Some(MAX_COORDS),
        0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradcheck_suite_passes_on_a_few_seeds() {
        for outcome in gradcheck_suite(3, GRADCHECK_STEP, GRADCHECK_TOLERANCE).unwrap() {
            assert!(outcome.passed, "{}: {}", outcome.name, outcome.detail);
        }
    }

    #[test]
    fn selfcheck_passes() {
        for outcome in selfcheck().unwrap() {
            assert!(outcome.passed, "{}: {}", outcome.name, outcome.detail);
        }
    }
}
