//! A numerical laboratory for the mean curvature operator
//! `H_1[u] = div(Du / sqrt(1 + |Du|^2))` on one- and two-dimensional grids.
//!
//! * [`field`]: grids, domains, grid functions, mollifiers, set geometry.
//! * [`mco`]: the conservative flux discretisation, flux integrals, the area
//!   functional and subharmonicity diagnostics.
//! * [`msolve`]: Newton solver for `H_1[u] = f` with Dirichlet data and the
//!   variational minimiser with an L1 boundary penalty.
//! * [`perron`]: Perron lifting on balls, ball-cover sweeps and smooth
//!   near-subharmonic approximating sequences.
//! * [`measure`]: the mean curvature measure of nonsmooth subharmonic fields
//!   as limits of ball fluxes, and weak-convergence checks.
//! * [`levelset`]: Harnack reports, co-area profiles, eta-margins and the
//!   level-set decay check.
//! * [`dirichlet`]: the measure-data Dirichlet pipeline.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dirichlet;
pub mod field;
pub mod levelset;
pub mod linalg;
pub mod mco;
pub mod measure;
pub mod msolve;
pub mod perron;
mod sum;
pub mod table;
