use rand::seq::SliceRandom;

use super::NnError;
use crate::seed;

/// One loss evaluation. `regime` identifies the differentiable piece the evaluation fell
/// on (ReLU masks, max-pool winners); use 0 for smooth functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub loss: f64,
    pub regime: u64,
}

impl From<f64> for Probe {
    fn from(loss: f64) -> Self {
        Self { loss, regime: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates to certify (all of them if there are fewer).
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-4, samples: 200, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index with the largest error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because `p ± eps` crossed a non-differentiable boundary.
    pub skipped_kinks: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss_fn` at `params` on a random
/// subsample of coordinates. A coordinate whose perturbations land on a different
/// regime than the base point is replaced by another one, since the difference
/// quotient there measures a kink rather than the derivative.
pub fn gradient_check<F, P>(mut loss_fn: F, params: &[f64], analytic: &[f64], cfg: &GradCheckConfig) -> Result<GradCheckReport, NnError>
where
    F: FnMut(&[f64]) -> P,
    P: Into<Probe>,
{
    if params.len() != analytic.len() {
        return Err(NnError::Shape(format!("{} params vs {} gradient entries", params.len(), analytic.len())));
    }
    let mut eval = |p: &[f64]| -> Result<Probe, NnError> {
        let probe = loss_fn(p).into();
        if probe.loss.is_finite() { Ok(probe) } else { Err(NnError::NonFiniteLoss(probe.loss)) }
    };
    let base = eval(params)?;
    let mut order: Vec<usize> = (0..params.len()).collect();
    order.shuffle(&mut seed::rng(cfg.seed));

    let mut report = GradCheckReport { max_rel_error: 0.0, worst_index: None, checked: 0, skipped_kinks: 0 };
    let mut p = params.to_vec();
    for i in order {
        if report.checked == cfg.samples {
            break;
        }
        p[i] = params[i] + cfg.eps;
        let plus = eval(&p)?;
        p[i] = params[i] - cfg.eps;
        let minus = eval(&p)?;
        p[i] = params[i];
        if plus.regime != base.regime || minus.regime != base.regime {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * cfg.eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p: Vec<f64> = (0..300).map(|i| (i as f64 * 0.1).sin()).collect();
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / 2.0;
        let r = gradient_check(f, &p, &p, &GradCheckConfig::default()).unwrap();
        assert_eq!(r.checked, 200);
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
    }

    #[test]
    fn zero_loss_has_zero_gradient() {
        let p = vec![0.3; 250];
        let r = gradient_check(|_: &[f64]| 0.0, &p, &vec![0.0; 250], &GradCheckConfig::default()).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let p = vec![1.0; 10];
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let r = gradient_check(f, &p, &p, &GradCheckConfig::default()).unwrap();
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let r = gradient_check(|_: &[f64]| f64::NAN, &[1.0], &[0.0], &GradCheckConfig::default());
        assert!(matches!(r, Err(NnError::NonFiniteLoss(_))));
    }

    #[test]
    fn kinks_are_skipped() {
        // |x| at x = 0 has no derivative; the regime flips across it.
        let p = vec![0.0, 2.0];
        let f = |x: &[f64]| Probe { loss: x[0].abs() + x[1], regime: (x[0] > 0.0) as u64 };
        let r = gradient_check(f, &p, &[0.0, 1.0], &GradCheckConfig::default()).unwrap();
        assert_eq!((r.checked, r.skipped_kinks), (1, 1));
        assert!(r.max_rel_error < 1e-10);
    }
}
