//! Finite-difference verification of analytic gradients.
//!
//! The checker is independent of the backward rules: it evaluates the same
//! scalar function at perturbed points through fresh graphs and compares the
//! central difference against the analytic gradient, coordinate by
//! coordinate. Intended for the 64-bit engine mode.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate.
    pub worst_coordinate: usize,
    pub coords_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max rel err {:.3e} at coord {} over {} coords (tol {:.1e})",
            if self.passed { "pass" } else { "FAIL" },
            self.max_rel_err,
            self.worst_coordinate,
            self.coords_checked,
            self.tolerance
        )
    }
}

/// Compare the analytic gradient of `f` at `point` against central finite
/// differences `(f(x+h) - f(x-h)) / 2h`.
///
/// `f` receives a fresh graph and the node holding the evaluation point and
/// must return a scalar loss node; it is called once for the analytic pass
/// and twice per checked coordinate. When `max_coords` is set and smaller
/// than the tensor, a seeded random subsample of coordinates is checked.
pub fn finite_difference_check<F>(
    mut f: F,
    point: &Tensor<f64>,
    step: f64,
    tolerance: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, NodeId) -> Result<NodeId>,
{
    if step <= 0.0 {
        return Err(Error::Config(format!("step must be positive, got {step}")));
    }
    let analytic = {
        let mut g = Graph::new();
        let x = g.leaf(point.clone(), true)?;
        let loss = f(&mut g, x)?;
        if !g.value(loss).is_scalar() {
            return Err(Error::Contract(
                "gradient check requires a scalar-valued function".into(),
            ));
        }
        g.backward(loss)?;
        g.grad(x)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(point.shape()))
    };

    let eval = |f: &mut F, p: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.leaf(p.clone(), false)?;
        let loss = f(&mut g, x)?;
        g.value(loss).item()
    };

    let coords: Vec<usize> = match max_coords {
        Some(m) if m < point.len() => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut picked = sample(&mut rng, point.len(), m).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..point.len()).collect(),
    };

    let mut max_rel_err = 0.0f64;
    let mut worst = 0usize;
    let mut probe = point.clone();
    for &i in &coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = eval(&mut f, &probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = eval(&mut f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        // relative error with a floor: coordinates whose gradient is below
        // the floor are compared absolutely at tolerance * floor, which
        // keeps finite-difference roundoff out of the verdict
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = i;
        }
    }

    Ok(GradCheckReport {
        max_rel_err,
        worst_coordinate: worst,
        coords_checked: coords.len(),
        tolerance,
        passed: max_rel_err < tolerance,
    })
}
