//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HieroError, Result};
use crate::io::{FeatureSequence, NarrationSet};
use crate::model::forward::ForwardOptions;
use crate::model::params::ModelParams;
use crate::par;
use crate::training::losses::{loss_and_gradient, loss_only, LossConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check every coordinate when the parameter count is at most this.
    pub full_limit: usize,
    /// Size of the random subset otherwise.
    pub sample: usize,
    pub seed: u64,
    /// Coordinates always checked.
    pub include: Vec<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { epsilon: 1e-5, full_limit: 2000, sample: 256, seed: 0, include: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates_checked: usize,
    pub parameter_count: usize,
}

/// Coordinates that [`grad_check`] visits, in ascending order.
pub fn check_coordinates(count: usize, opts: &GradCheckOptions) -> Vec<usize> {
    let mut coords: Vec<usize> = if count <= opts.full_limit {
        (0..count).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        sample(&mut rng, count, opts.sample.min(count)).into_vec()
    };
    coords.extend(opts.include.iter().copied().filter(|&i| i < count));
    coords.sort_unstable();
    coords.dedup();
    coords
}

/// Max of `|analytic - numeric| / max(1, |numeric|)` over the checked
/// coordinates, with `numeric` from central differences of `f`.
pub fn grad_check<F>(f: F, x: &[f64], analytic: &[f64], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(opts.epsilon > 0.0) {
        return Err(HieroError::InvalidArgument(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    if analytic.len() != x.len() {
        return Err(HieroError::Shape(format!("gradient has {} values for {} parameters", analytic.len(), x.len())));
    }
    if let Some(i) = analytic.iter().position(|v| !v.is_finite()) {
        return Err(HieroError::NonFiniteGradient(i));
    }
    let coords = check_coordinates(x.len(), opts);
    let h = opts.epsilon;
    let numeric = par::map_slice(&coords, |&i| -> Result<f64> {
        let mut y = x.to_vec();
        y[i] = x[i] + h;
        let fp = f(&y)?;
        y[i] = x[i] - h;
        let fm = f(&y)?;
        Ok((fp - fm) / (2.0 * h))
    });
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coordinate: coords.first().copied().unwrap_or(0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates_checked: coords.len(),
        parameter_count: x.len(),
    };
    for (&i, num) in coords.iter().zip(numeric) {
        let num = num?;
        if !num.is_finite() {
            return Err(HieroError::NonFiniteGradient(i));
        }
        let err = (analytic[i] - num).abs() / num.abs().max(1.0);
        if err > report.max_rel_error || i == coords[0] {
            report = GradCheckReport { max_rel_error: err, worst_coordinate: i, analytic: analytic[i], numeric: num, ..report };
        }
    }
    Ok(report)
}

/// Checks the gradient of `L_vna + L_ft` for a batch. Partitions are
/// computed once at `params` and held fixed while perturbing.
pub fn check_model_gradient(
    params: &ModelParams,
    batch: &[(&FeatureSequence, &NarrationSet)],
    fopts: &ForwardOptions,
    cfg: &LossConfig,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (lv, parts) = loss_and_gradient(params, batch, fopts, cfg, None)?;
    check_with_gradient(params, batch, fopts, cfg, opts, &lv.gradient, &parts)
}

/// Same as [`check_model_gradient`] against a caller-supplied gradient.
pub fn check_with_gradient(
    params: &ModelParams,
    batch: &[(&FeatureSequence, &NarrationSet)],
    fopts: &ForwardOptions,
    cfg: &LossConfig,
    opts: &GradCheckOptions,
    gradient: &[f64],
    partitions: &[Vec<crate::partition::PartitionResult>],
) -> Result<GradCheckReport> {
    let dims = params.dims;
    let f = |flat: &[f64]| -> Result<f64> {
        let p = ModelParams::from_flat(dims, flat)?;
        loss_only(&p, batch, fopts, cfg, Some(partitions)).map(|(v, _, _)| v)
    };
    grad_check(f, &params.to_flat(), gradient, opts)
}
