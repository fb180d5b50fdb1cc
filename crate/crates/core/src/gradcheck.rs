//! Central-difference verification of the model gradient.

use rand::seq::index::sample;
use serde::Serialize;

use crate::encoders::Mode;
use crate::error::{Error, Result};
use crate::model::{FusionModel, Sample};
use crate::seed::substream;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Parameters checked when the model is larger than this and `all` is off.
pub const DEFAULT_SUBSET: usize = 256;
/// Differences below this are treated as exact agreement.
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub total: usize,
    pub max_error: f64,
    /// Largest `|analytic - numeric|`, before the relative measure and floor.
    pub max_abs_diff: f64,
    pub worst_param: Option<String>,
    pub analytic: f64,
    pub numeric: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Error measure between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check every parameter instead of a seeded subset.
    pub all: bool,
    pub subset: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            all: false,
            subset: DEFAULT_SUBSET,
            seed: 0,
        }
    }
}

/// Compares the tape gradient of the eval-mode overall loss with central
/// differences.
pub fn check_gradients(
    model: &FusionModel<f64>,
    batch: &[Sample<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, grad) = model.loss_and_grad(batch, Mode::Eval)?;
    compare_gradients(model, batch, &grad, opts)
}

/// Compares a supplied gradient of the eval-mode overall loss with central
/// differences. An empty parameter vector checks nothing and passes.
pub fn compare_gradients(
    model: &FusionModel<f64>,
    batch: &[Sample<f64>],
    grad: &[f64],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let total = model.params().len();
    if grad.len() != total {
        return Err(Error::dims("gradient", total, grad.len()));
    }
    let indices: Vec<usize> = if opts.all || total <= opts.subset {
        (0..total).collect()
    } else {
        let mut rng = substream(opts.seed, "gradcheck");
        let mut picked = sample(&mut rng, total, opts.subset).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        checked: indices.len(),
        total,
        max_error: 0.0,
        max_abs_diff: 0.0,
        worst_param: None,
        analytic: 0.0,
        numeric: 0.0,
        tolerance: opts.tolerance,
        passed: true,
    };
    for &i in &indices {
        let original = probe.params().values()[i];
        probe.params_mut().values_mut()[i] = original + opts.step;
        let up = probe.loss(batch, Mode::Eval)?.overall;
        probe.params_mut().values_mut()[i] = original - opts.step;
        let down = probe.loss(batch, Mode::Eval)?.overall;
        probe.params_mut().values_mut()[i] = original;
        let numeric = (up - down) / (2.0 * opts.step);
        let err = relative_error(grad[i], numeric);
        report.max_abs_diff = report.max_abs_diff.max((grad[i] - numeric).abs());
        if report.worst_param.is_none() || err > report.max_error {
            report.max_error = err;
            report.worst_param = Some(model.params().name_of(i));
            report.analytic = grad[i];
            report.numeric = numeric;
        }
    }
    report.passed = report.max_error <= opts.tolerance;
    Ok(report)
}
