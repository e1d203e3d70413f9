//! Full-profile smoke test: one forward pass through the published
//! 3 x 300 x 300 network. Heavier than the unit tests (the second
//! convolution's im2col buffer alone is ~320 MB), so it lives in its own
//! integration target.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use tickdist::model::{build_lighter_cnn, Profile};
use tickdist::tensor::{Graph, Tensor};

#[test]
fn full_profile_forward_produces_a_probability() {
    let mut model = build_lighter_cnn::<f32>(Profile::Full, 12).unwrap();
    let batch = Tensor::from_fn(&[1, 3, 300, 300], |i| ((i * 131) % 251) as f32 / 251.0);
    let mut graph = Graph::new();
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let pass = model.forward_train(&mut graph, &batch, 0.0, &mut rng).unwrap();

    let logits = graph.value(pass.logits);
    assert_eq!(logits.shape(), &[1, 1]);
    let theta = logits.data()[0];
    assert!(theta.is_finite());
    let p = 1.0 / (1.0 + (-theta as f64).exp());
    assert!((0.0..1.0).contains(&p) && p > 0.0, "sigmoid(theta) = {p}");

    // the hooked activation is the 32 x 8 x 8 attention source
    assert_eq!(graph.value(pass.attention).shape(), &[1, 32, 8, 8]);
}
