use std::f64::consts::PI;
use std::sync::Arc;

use super::model::GridModel;
use super::stencil::{axis_offsets, StencilOperator, StencilWeights};
use crate::operator::{Diagonal, SplitOperator};
use crate::setup::{Provenance, SpectralBounds};

/// `Im H = diag(k^2 R / pi)` from per-point wavenumbers and damping.
pub(crate) fn damping_diagonal(k: &[f64], damping: &[f64]) -> Vec<f64> {
    k.iter().zip(damping).map(|(k, r)| k * k * r / PI).collect()
}

/// Standard `(2d+1)`-point finite differences with Dirichlet closure:
/// `Re H = h^-2 (2d I - neighbours) - diag(k^2)`.
///
/// Bounds: `-k_max^2` below and `-k_min^2 + 4 d h^-2` above.
pub fn build_second_order(model: &GridModel) -> (SplitOperator, SpectralBounds) {
    let d = model.ndim();
    let ih2 = 1.0 / (model.h * model.h);
    let offsets = axis_offsets(d);
    let weights = StencilWeights::Constant(vec![-ih2; offsets.len()]);
    let diag: Vec<f64> = model
        .k_points
        .iter()
        .map(|k| 2.0 * d as f64 * ih2 - k * k)
        .collect();
    let re = StencilOperator::new(model.shape.clone(), offsets, weights, diag);
    let im = damping_diagonal(&model.k_points, &model.damping);

    let k_max = model.k_points.iter().copied().fold(0.0, f64::max);
    let k_min = model.k_points.iter().copied().fold(f64::INFINITY, f64::min);
    let bounds = SpectralBounds {
        lambda_min_re: -k_max * k_max,
        lambda_max_re: -k_min * k_min + 4.0 * d as f64 * ih2,
        lambda_max_im: im.iter().copied().fold(0.0, f64::max),
        provenance: Provenance::Analytic,
    };
    let h = SplitOperator::new(Arc::new(re), Arc::new(Diagonal(im)))
        .expect("operators built on the same grid")
        .with_bounds(bounds);
    (h, bounds)
}
