//! Finite-difference verification of every analytic gradient path.
//!
//! For each loss term the analytic gradient of every parameter entry is
//! compared against a central difference of the loss value (step 1e-4,
//! shrunk per entry when a ReLU kink falls inside the stencil).
//! The adversarial term routes generator and classifier gradients through
//! the reversal junction, so those entries are compared against minus
//! lambda times the finite difference.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::DiffArray;
use crate::losses::{adversarial_disc_loss, alignment_loss, cross_entropy};
use crate::models::ModelBundle;
use crate::pfr::{scheduled_targets, PfrConfig, PfrVariant};
use crate::trainer::TrainError;

const FD_STEP: f64 = 1e-4;
const GRL_LAMBDA: f64 = 0.7;

pub struct TermReport {
    pub term: &'static str,
    pub max_rel_err: f64,
    pub checked_entries: usize,
}

pub struct GradCheckReport {
    pub seed: u64,
    pub terms: Vec<TermReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.terms.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }
}

fn rel_err(analytic: f64, reference: f64) -> f64 {
    let denom = (analytic.abs() + reference.abs()).max(1e-3);
    (analytic - reference).abs() / denom
}

struct Setup {
    bundle: ModelBundle,
    x_s: Vec<f64>,
    y_s: Vec<usize>,
    x_t: Vec<f64>,
    n_s: usize,
    n_t: usize,
}

fn setup(seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(seed));
    let (n_s, n_t) = (6usize, 5usize);
    let bundle = ModelBundle::init(2, 7, 2, 5, seed ^ 0xabcd).expect("valid dims");
    // Nudge every parameter off its initial value (biases start at exactly 0,
    // which can park a pre-activation exactly on the ReLU kink where the loss
    // is not differentiable); a generic point is what a finite-difference
    // check can meaningfully verify.
    for p in bundle.params() {
        let vals: Vec<f64> = p.values().iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
        p.load_values(vals).expect("finite");
    }
    let x_s: Vec<f64> = (0..n_s * 2).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let x_t: Vec<f64> = (0..n_t * 2).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let y_s: Vec<usize> = (0..n_s).map(|_| rng.gen_range(0..2)).collect();
    Setup { bundle, x_s, y_s, x_t, n_s, n_t }
}

/// Check one loss term: `loss_value` must rebuild the whole graph from the
/// bundle's current parameter values. `reversed` marks parameter ranges whose
/// analytic gradient passes the reversal junction.
fn check_term(
    term: &'static str,
    params: &[DiffArray],
    reversed: &[bool],
    loss_value: &dyn Fn() -> Result<DiffArray, TrainError>,
) -> Result<TermReport, TrainError> {
    for p in params {
        p.clear_grad();
    }
    let loss = loss_value()?;
    loss.backward().map_err(TrainError::Diff)?;
    let grads: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().ok_or(crate::diffcore::DiffError::MissingGrad))
        .collect::<Result<_, _>>()
        .map_err(TrainError::Diff)?;

    let fd_at = |p: &DiffArray, base: &[f64], i: usize, step: f64| -> Result<f64, TrainError> {
        let mut plus = base.to_vec();
        plus[i] += step;
        p.load_values(plus).map_err(TrainError::Diff)?;
        let f_plus = loss_value()?.scalar();
        let mut minus = base.to_vec();
        minus[i] -= step;
        p.load_values(minus).map_err(TrainError::Diff)?;
        let f_minus = loss_value()?.scalar();
        p.load_values(base.to_vec()).map_err(TrainError::Diff)?;
        Ok((f_plus - f_minus) / (2.0 * step))
    };

    let mut max_err = 0.0f64;
    let mut checked = 0usize;
    for (pi, p) in params.iter().enumerate() {
        let base = p.values();
        for i in 0..base.len() {
            // A ReLU kink inside the stencil makes the central difference
            // invalid; kinks sit at isolated points, so shrinking the step
            // eventually clears them. Walk down a decade at a time and accept
            // the first step whose estimate is confirmed by the next decade;
            // stopping at 1e-7 keeps cancellation noise below the tolerance.
            let mut fd = fd_at(p, &base, i, FD_STEP)?;
            let mut prev = fd;
            for k in 1..=3 {
                let next = fd_at(p, &base, i, FD_STEP / 10f64.powi(k))?;
                if rel_err(prev, next) <= 1e-6 {
                    fd = next;
                    break;
                }
                prev = next;
                fd = next;
            }

            let reference = if reversed[pi] { -GRL_LAMBDA * fd } else { fd };
            max_err = max_err.max(rel_err(grads[pi][i], reference));
            checked += 1;
        }
    }
    Ok(TermReport { term, max_rel_err: max_err, checked_entries: checked })
}

/// Verify analytic gradients of all three loss terms for one seeded setup.
pub fn grad_check(seed: u64) -> Result<GradCheckReport, TrainError> {
    let s = setup(seed);
    let bundle = &s.bundle;
    let x_s = DiffArray::constant(vec![s.n_s, 2], s.x_s.clone()).map_err(TrainError::Diff)?;
    let x_t = DiffArray::constant(vec![s.n_t, 2], s.x_t.clone()).map_err(TrainError::Diff)?;

    let mut terms = Vec::new();

    // cross-entropy through generator + classifier
    {
        let params: Vec<DiffArray> = bundle
            .generator
            .params()
            .into_iter()
            .chain(bundle.classifier.params())
            .collect();
        let reversed = vec![false; params.len()];
        let y_s = s.y_s.clone();
        let loss = || -> Result<DiffArray, TrainError> {
            let f = bundle.generator.forward(&x_s).map_err(TrainError::Diff)?;
            let logits = bundle.classifier.forward(&f).map_err(TrainError::Diff)?;
            cross_entropy(&logits, &y_s).map_err(TrainError::Diff)
        };
        terms.push(check_term("cross_entropy", &params, &reversed, &loss)?);
    }

    // alignment through the generator, with scheduled targets and fixed
    // pseudo-labels for the target batch
    {
        let pfr = PfrConfig::new(2, 7, 3, PfrVariant::Full)?;
        let targets = scheduled_targets(&pfr, 1)?;
        let params = bundle.generator.params();
        let reversed = vec![false; params.len()];
        let y_s = s.y_s.clone();
        let pseudo: Vec<usize> = (0..s.n_t).map(|i| i % 2).collect();
        let loss = || -> Result<DiffArray, TrainError> {
            let f_s = bundle.generator.forward(&x_s).map_err(TrainError::Diff)?;
            let f_t = bundle.generator.forward(&x_t).map_err(TrainError::Diff)?;
            alignment_loss(&f_s, &y_s, Some(&f_t), &pseudo, &targets).map_err(TrainError::Diff)
        };
        terms.push(check_term("alignment", &params, &reversed, &loss)?);
    }

    // adversarial BCE: discriminator entries are plain, everything upstream
    // of the reversal junction carries the negated, scaled gradient
    {
        let upstream: Vec<DiffArray> = bundle
            .generator
            .params()
            .into_iter()
            .chain(bundle.classifier.params())
            .collect();
        let n_up = upstream.len();
        let params: Vec<DiffArray> = upstream.into_iter().chain(bundle.discriminator.params()).collect();
        let reversed: Vec<bool> = (0..params.len()).map(|i| i < n_up).collect();
        let loss = || -> Result<DiffArray, TrainError> {
            let out_s = bundle.forward_all(&x_s, GRL_LAMBDA).map_err(TrainError::Diff)?;
            let out_t = bundle.forward_all(&x_t, GRL_LAMBDA).map_err(TrainError::Diff)?;
            adversarial_disc_loss(&out_s.d_logits, &out_t.d_logits).map_err(TrainError::Diff)
        };
        terms.push(check_term("adversarial", &params, &reversed, &loss)?);
    }

    Ok(GradCheckReport { seed, terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_match_finite_differences() {
        let report = grad_check(11).unwrap();
        for t in &report.terms {
            assert!(t.checked_entries > 0);
            assert!(t.max_rel_err < 1e-5, "{}: {}", t.term, t.max_rel_err);
        }
    }
}
