//! The mean curvature operator `div(Du / sqrt(1 + |Du|^2))` in conservative
//! staggered form.
//!
//! Face gradients use the central difference of the two adjacent cells in the
//! normal direction and the average of the four surrounding differences in
//! the transverse direction. The cell density is the net face outflow divided
//! by `h`, so sums of densities telescope exactly into boundary fluxes.

pub(crate) mod area;
mod diagnostics;
pub(crate) mod flux;

pub use area::{area_functional, boundary_lengths, AreaTerms};
pub use diagnostics::{
    default_subharmonic_tol, gradient_bound_report, max_face_gradient, point_gradient, trace_form_matrix,
    viscosity_subharmonic_check, BallVerdict, EnvelopeStatus, GradientEnvelope, GradientSample, SubharmonicReport,
    Verdict,
};
pub use flux::{boundary_flux, h1_density, DensityReport, FluxField, Interface};

use crate::field::{FieldError, Point};

#[derive(Debug, thiserror::Error)]
pub enum McoError {
    #[error("flux undefined on the interface next to cells {cells:?}")]
    UndefinedFlux { cells: Vec<usize> },
    #[error("non-finite value in the stencil of cell {cell}")]
    NonFinite { cell: usize },
    #[error("need at least 3 family members to fit an envelope, got {0}")]
    TooFewPoints(usize),
    #[error("cannot evaluate value and gradient at {0:?}")]
    Evaluation(Point),
    #[error(transparent)]
    Field(#[from] FieldError),
}
