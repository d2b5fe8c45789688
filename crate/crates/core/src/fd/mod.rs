//! Finite-difference Helmholtz operators on rectangular grids.

pub mod compact;
pub mod model;
pub mod second_order;
pub mod stencil;

pub use compact::{build_compact, cell_eigenvalues, CoeffTable};
pub use model::{build_model, read_model_file, write_model_file, GridModel, ModelKind, ModelSpec};
pub use second_order::build_second_order;
pub use stencil::{Shape, StencilOperator, StencilWeights};

use crate::error::{Error, Result};
use crate::operator::ComplexVector;

/// Unit point source at a full-grid index. Sources inside a damping layer
/// are accepted with a warning.
pub fn point_source(model: &GridModel, location: &[usize]) -> Result<ComplexVector> {
    if location.len() != model.ndim() || location.iter().zip(model.dims()).any(|(i, n)| i >= n) {
        return Err(Error::InvalidModel(format!(
            "source {location:?} outside grid {:?}",
            model.dims()
        )));
    }
    if model.in_layer(location) {
        log::warn!("point source {location:?} lies in a damping layer");
    }
    let mut f = ComplexVector::zeros(model.len());
    f.re[model.shape.linear(location)] = 1.0;
    Ok(f)
}
