//! Grids, masked domains, grid functions, mollification and the geometry of
//! discrete sets.

mod domain;
mod grid;
mod mollify;
mod scalar;
mod sets;

pub use domain::{make_grid, Ball, CellKind, DomainMask, Shape};
pub use grid::{distance, norm, Grid, Point};
pub use mollify::{deposit_weights, mollify_field, Kernel};
pub use scalar::{sample_function, sample_with, Formula, Provenance, ScalarField, NEG_INF};
pub use sets::{
    isoperimetric_constant, set_geometry, superlevel_set, DiscreteSet, InterfaceSegment, SetGeometry, TOL_ISO,
};

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("unsupported dimension {0}")]
    Dimension(usize),
    #[error("sizing error: {0}")]
    Sizing(String),
    #[error("interior is disconnected: reached {reached} of {total} cells")]
    Disconnected { reached: usize, total: usize },
    #[error("cell {cell} at {center:?} lies outside the parent domain closure")]
    NotInside { cell: usize, center: Point },
    #[error("value undefined at cell {cell} ({center:?})")]
    UndefinedAt { cell: usize, center: Point },
    #[error("+inf at cell {cell}; only -inf is representable")]
    PositiveInfinity { cell: usize },
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("mollifier width {eps} under-resolved on a grid with h = {h} (need eps >= 2h)")]
    UnderResolved { eps: f64, h: f64 },
    #[error("level {0} is not finite")]
    NonFiniteLevel(f64),
    #[error("malformed field JSON: {0}")]
    Json(String),
}
