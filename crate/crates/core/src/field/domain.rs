use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::grid::{distance, Grid, Point};
use super::FieldError;

/// Closed-form description of a bounded domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Interval { a: f64, b: f64 },
    Disk { center: Point, radius: f64 },
    Rectangle { min: Point, max: Point },
    Annulus { center: Point, inner: f64, outer: f64 },
}

impl Shape {
    pub fn dim(&self) -> usize {
        match self {
            Shape::Interval { .. } => 1,
            _ => 2,
        }
    }

    /// Signed distance to the boundary, positive inside.
    pub fn signed_distance(&self, x: Point) -> f64 {
        match *self {
            Shape::Interval { a, b } => (x[0] - a).min(b - x[0]),
            Shape::Disk { center, radius } => radius - distance(x, center),
            Shape::Annulus { center, inner, outer } => {
                let r = distance(x, center);
                (outer - r).min(r - inner)
            }
            Shape::Rectangle { min, max } => {
                let dx = (min[0] - x[0]).max(x[0] - max[0]);
                let dy = (min[1] - x[1]).max(x[1] - max[1]);
                if dx <= 0.0 && dy <= 0.0 {
                    -(dx.max(dy))
                } else {
                    -(dx.max(0.0).hypot(dy.max(0.0)))
                }
            }
        }
    }

    /// Lebesgue measure of the shape.
    pub fn volume(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Shape::Interval { a, b } => b - a,
            Shape::Disk { radius, .. } => PI * radius * radius,
            Shape::Annulus { inner, outer, .. } => PI * (outer * outer - inner * inner),
            Shape::Rectangle { min, max } => (max[0] - min[0]) * (max[1] - min[1]),
        }
    }

    /// Boundary measure (point count in 1D).
    pub fn perimeter(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Shape::Interval { .. } => 2.0,
            Shape::Disk { radius, .. } => 2.0 * PI * radius,
            Shape::Annulus { inner, outer, .. } => 2.0 * PI * (inner + outer),
            Shape::Rectangle { min, max } => 2.0 * ((max[0] - min[0]) + (max[1] - min[1])),
        }
    }

    fn min_width(&self) -> f64 {
        match *self {
            Shape::Interval { a, b } => b - a,
            Shape::Disk { radius, .. } => radius,
            Shape::Annulus { inner, outer, .. } => (outer - inner).min(inner),
            Shape::Rectangle { min, max } => (max[0] - min[0]).min(max[1] - min[1]),
        }
    }
}

/// A ball `B_r(c)`; in one dimension the interval `(c - r, c + r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn centered(radius: f64) -> Self {
        Self { center: [0.0, 0.0], radius }
    }

    pub fn contains(&self, x: Point) -> bool {
        distance(x, self.center) < self.radius
    }

    pub fn inflate(&self, by: f64) -> Self {
        Self { center: self.center, radius: self.radius + by }
    }

    pub fn as_shape(&self, dim: usize) -> Shape {
        if dim == 1 {
            Shape::Interval { a: self.center[0] - self.radius, b: self.center[0] + self.radius }
        } else {
            Shape::Disk { center: self.center, radius: self.radius }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Interior,
    Boundary,
    Exterior,
}

/// Interior/boundary/exterior classification of the cells of a grid.
///
/// Boundary cells are the exterior cells in the 3^n neighbourhood of an
/// interior cell; Dirichlet data lives there, and every interior cell has its
/// full 3^n stencil inside the closure.
#[derive(Clone, Debug)]
pub struct DomainMask {
    grid: Grid,
    kinds: Vec<CellKind>,
    shape: Shape,
}

impl DomainMask {
    /// Classifies cells against `shape`: interior cells are those whose centre
    /// lies strictly inside.
    pub fn from_shape(grid: Grid, shape: Shape) -> Result<Self, FieldError> {
        let eps = 1e-9 * grid.h();
        let inside: Vec<bool> = (0..grid.len()).map(|k| shape.signed_distance(grid.center(k)) > eps).collect();
        Self::from_interior(grid, shape, &inside)
    }

    fn from_interior(grid: Grid, shape: Shape, inside: &[bool]) -> Result<Self, FieldError> {
        let mut kinds = vec![CellKind::Exterior; grid.len()];
        for (k, &inn) in inside.iter().enumerate() {
            if inn {
                kinds[k] = CellKind::Interior;
            }
        }
        for k in 0..grid.len() {
            if !inside[k] {
                continue;
            }
            let (i, j) = grid.coords(k);
            let at_edge =
                i == 0 || i + 1 == grid.extents()[0] || (grid.dim() == 2 && (j == 0 || j + 1 == grid.extents()[1]));
            if at_edge {
                return Err(FieldError::Sizing("interior cell touches the grid edge".into()));
            }
            for n in grid.ring_neighbors(k) {
                if !inside[n] {
                    kinds[n] = CellKind::Boundary;
                }
            }
        }
        let mask = Self { grid, kinds, shape };
        mask.check_connected()?;
        Ok(mask)
    }

    fn check_connected(&self) -> Result<(), FieldError> {
        let interior: Vec<usize> = self.interior_cells().collect();
        let Some(&start) = interior.first() else {
            return Err(FieldError::Sizing("domain has no interior cells".into()));
        };
        let mut seen = vec![false; self.grid.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 0usize;
        while let Some(k) = queue.pop_front() {
            count += 1;
            for n in self.grid.face_neighbors(k) {
                if !seen[n] && self.kinds[n] == CellKind::Interior {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        if count != interior.len() {
            return Err(FieldError::Disconnected { reached: count, total: interior.len() });
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn kind(&self, idx: usize) -> CellKind {
        self.kinds[idx]
    }

    pub fn kinds(&self) -> &[CellKind] {
        &self.kinds
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        self.kinds[idx] == CellKind::Interior
    }

    /// Interior or boundary.
    pub fn in_closure(&self, idx: usize) -> bool {
        self.kinds[idx] != CellKind::Exterior
    }

    pub fn interior_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.kinds.len()).filter(|&k| self.kinds[k] == CellKind::Interior)
    }

    pub fn boundary_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.kinds.len()).filter(|&k| self.kinds[k] == CellKind::Boundary)
    }

    pub fn interior_count(&self) -> usize {
        self.interior_cells().count()
    }

    pub fn signed_distance(&self, x: Point) -> f64 {
        self.shape.signed_distance(x)
    }

    /// Restriction to a ball on the same grid: cells with centre strictly
    /// inside the ball become interior. Every cell of the new closure must lie
    /// in the closure of `self`.
    pub fn ball_subregion(&self, ball: &Ball) -> Result<DomainMask, FieldError> {
        let shape = ball.as_shape(self.grid.dim());
        let eps = 1e-9 * self.grid.h();
        let inside: Vec<bool> =
            (0..self.grid.len()).map(|k| shape.signed_distance(self.grid.center(k)) > eps).collect();
        let sub = Self::from_interior(self.grid, shape, &inside)?;
        if let Some(k) = (0..self.grid.len()).find(|&k| sub.in_closure(k) && !self.in_closure(k)) {
            return Err(FieldError::NotInside { cell: k, center: self.grid.center(k) });
        }
        Ok(sub)
    }
}

/// Builds the grid and mask for a shape at `resolution` cells per unit length.
///
/// Layouts: intervals put centres on both endpoints (they become the two
/// boundary cells); disks and annuli centre a cell on the shape centre;
/// rectangles use half-offset centres so the interior cells tile the
/// rectangle exactly.
pub fn make_grid(shape: &Shape, resolution: f64) -> Result<DomainMask, FieldError> {
    if !(resolution >= 8.0) {
        return Err(FieldError::Sizing(format!("resolution {resolution} below 8 cells per unit")));
    }
    let h = 1.0 / resolution;
    if shape.min_width() <= 2.0 * h {
        return Err(FieldError::Sizing(format!("shape width {} not above 2h = {}", shape.min_width(), 2.0 * h)));
    }
    let grid = match *shape {
        Shape::Interval { a, b } => {
            if b <= a {
                return Err(FieldError::Sizing("interval with b <= a".into()));
            }
            let n = ((b - a) / h - 1e-9).ceil() as usize + 1;
            Grid::new(1, h, [n, 1], [a, 0.0])?
        }
        Shape::Disk { center, radius } | Shape::Annulus { center, outer: radius, .. } => {
            let half = (radius / h).ceil() as usize + 2;
            let n = 2 * half + 1;
            Grid::new(2, h, [n, n], [center[0] - half as f64 * h, center[1] - half as f64 * h])?
        }
        Shape::Rectangle { min, max } => {
            let nx = ((max[0] - min[0]) / h - 1e-9).ceil() as usize + 4;
            let ny = ((max[1] - min[1]) / h - 1e-9).ceil() as usize + 4;
            Grid::new(2, h, [nx, ny], [min[0] - 1.5 * h, min[1] - 1.5 * h])?
        }
    };
    if let Shape::Annulus { inner, outer, .. } = *shape {
        if inner <= 0.0 || inner >= outer {
            return Err(FieldError::Sizing("annulus needs 0 < inner < outer".into()));
        }
    }
    DomainMask::from_shape(grid, shape.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_disk_area_count() {
        let mask = make_grid(&Shape::Disk { center: [0.0; 2], radius: 1.0 }, 64.0).unwrap();
        let h = mask.grid().h();
        let count = mask.interior_count() as f64;
        assert!((count - PI / (h * h)).abs() / (PI / (h * h)) < 0.02);
    }

    #[test]
    fn interval_layout() {
        let mask = make_grid(&Shape::Interval { a: -1.0, b: 1.0 }, 100.0).unwrap();
        assert_eq!(mask.grid().len(), 201);
        assert_eq!(mask.boundary_cells().count(), 2);
        assert_eq!(mask.interior_count(), 199);
        assert_eq!(mask.grid().center(200)[0], 1.0);
    }

    #[test]
    fn rectangle_interior_tiles_exactly() {
        let mask = make_grid(&Shape::Rectangle { min: [0.0, 0.0], max: [1.0, 1.0] }, 32.0).unwrap();
        assert_eq!(mask.interior_count(), 32 * 32);
    }

    #[test]
    fn degenerate_shapes_rejected() {
        let r = make_grid(&Shape::Disk { center: [0.0; 2], radius: 0.2 }, 10.0);
        assert!(matches!(r, Err(FieldError::Sizing(_))));
        assert!(make_grid(&Shape::Disk { center: [0.0; 2], radius: 1.0 }, 4.0).is_err());
    }

    #[test]
    fn annulus_is_connected() {
        let mask = make_grid(&Shape::Annulus { center: [0.0; 2], inner: 0.5, outer: 1.0 }, 32.0).unwrap();
        assert!(mask.interior_count() > 0);
    }

    #[test]
    fn every_interior_cell_has_full_stencil() {
        let mask = make_grid(&Shape::Disk { center: [0.3, -0.1], radius: 0.7 }, 20.0);
        let mask = mask.unwrap();
        for k in mask.interior_cells() {
            for n in mask.grid().ring_neighbors(k) {
                assert!(mask.in_closure(n));
            }
        }
    }

    #[test]
    fn ball_subregion_must_fit() {
        let mask = make_grid(&Shape::Disk { center: [0.0; 2], radius: 1.0 }, 32.0).unwrap();
        assert!(mask.ball_subregion(&Ball::centered(0.5)).is_ok());
        assert!(mask.ball_subregion(&Ball::new([0.8, 0.0], 0.5)).is_err());
    }

    #[test]
    fn rectangle_signed_distance() {
        let s = Shape::Rectangle { min: [0.0, 0.0], max: [2.0, 1.0] };
        assert_eq!(s.signed_distance([1.0, 0.5]), 0.5);
        assert!((s.signed_distance([3.0, 2.0]) + 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.signed_distance([-0.5, 0.5]), -0.5);
    }
}
