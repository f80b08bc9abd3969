use serde::{Deserialize, Serialize};

use super::FieldError;

/// A point in the plane. One-dimensional grids use the first coordinate only
/// and keep the second at zero.
pub type Point = [f64; 2];

/// Uniform cell-centred grid in one or two dimensions.
///
/// Cell `(i, j)` has its centre at `origin + (i, j) * h`, computed from the
/// integer index every time so no rounding accumulates along an axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    h: f64,
    extents: [usize; 2],
    origin: Point,
}

impl Grid {
    pub fn new(dim: usize, h: f64, extents: [usize; 2], origin: Point) -> Result<Self, FieldError> {
        if !(dim == 1 || dim == 2) {
            return Err(FieldError::Dimension(dim));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(FieldError::Sizing(format!("cell size must be positive, got {h}")));
        }
        if extents[0] < 3 || (dim == 2 && extents[1] < 3) {
            return Err(FieldError::Sizing(format!("extents {extents:?} below 3 cells")));
        }
        let extents = if dim == 1 { [extents[0], 1] } else { extents };
        let origin = if dim == 1 { [origin[0], 0.0] } else { origin };
        Ok(Self { dim, h, extents, origin })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn extents(&self) -> [usize; 2] {
        self.extents
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.extents[0] * self.extents[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of one cell, `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.extents[0] * j
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.extents[0], idx / self.extents[0])
    }

    #[inline]
    pub fn center(&self, idx: usize) -> Point {
        let (i, j) = self.coords(idx);
        self.center_of(i as f64, j as f64)
    }

    #[inline]
    pub(crate) fn center_of(&self, i: f64, j: f64) -> Point {
        [self.origin[0] + i * self.h, self.origin[1] + j * self.h]
    }

    /// Neighbour of `idx` displaced by `(di, dj)` cells, if it lies on the grid.
    #[inline]
    pub fn offset(&self, idx: usize, di: isize, dj: isize) -> Option<usize> {
        let (i, j) = self.coords(idx);
        let ni = i as isize + di;
        let nj = j as isize + dj;
        if ni < 0 || nj < 0 || ni >= self.extents[0] as isize || nj >= self.extents[1] as isize {
            return None;
        }
        Some(self.index(ni as usize, nj as usize))
    }

    /// Unit step along `axis` as an `(di, dj)` pair.
    #[inline]
    pub(crate) fn axis_step(axis: usize) -> (isize, isize) {
        if axis == 0 {
            (1, 0)
        } else {
            (0, 1)
        }
    }

    /// Face neighbours (2n of them where they exist).
    pub fn face_neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let steps: &[(isize, isize)] =
            if self.dim == 1 { &[(-1, 0), (1, 0)] } else { &[(-1, 0), (1, 0), (0, -1), (0, 1)] };
        steps.iter().filter_map(move |&(di, dj)| self.offset(idx, di, dj))
    }

    /// The 3^n neighbourhood of `idx`, excluding `idx` itself.
    pub fn ring_neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let span: isize = if self.dim == 1 { 0 } else { 1 };
        (-span..=span)
            .flat_map(move |dj| (-1..=1isize).map(move |di| (di, dj)))
            .filter(|&(di, dj)| di != 0 || dj != 0)
            .filter_map(move |(di, dj)| self.offset(idx, di, dj))
    }

    /// Cell whose centre is nearest to `x`, if `x` falls within half a cell of the grid.
    pub fn locate(&self, x: Point) -> Option<usize> {
        let fi = ((x[0] - self.origin[0]) / self.h).round();
        let fj = if self.dim == 1 { 0.0 } else { ((x[1] - self.origin[1]) / self.h).round() };
        if fi < 0.0 || fj < 0.0 || fi >= self.extents[0] as f64 || fj >= self.extents[1] as f64 {
            return None;
        }
        Some(self.index(fi as usize, fj as usize))
    }

    /// Fractional grid coordinates of a point.
    pub(crate) fn fractional(&self, x: Point) -> [f64; 2] {
        [(x[0] - self.origin[0]) / self.h, if self.dim == 1 { 0.0 } else { (x[1] - self.origin[1]) / self.h }]
    }
}

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn norm(a: Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1]).sqrt()
}
