use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::domain::DomainMask;
use super::grid::{norm, Grid, Point};
use super::FieldError;

/// Sentinel for the value `-inf` of an extended (upper semicontinuous) field.
///
/// Kept distinct from `NaN`, which marks cells where the field is not defined
/// at all (outside the domain closure or outside an evaluation region).
pub const NEG_INF: f64 = f64::NEG_INFINITY;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Sampled,
    Solved,
    Lifted,
    Mollified,
}

/// Grid function with per-cell values.
///
/// A value is either finite, [`NEG_INF`] (only when `extended`), or `NaN`
/// meaning undefined.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    extended: bool,
    provenance: Provenance,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>, provenance: Provenance) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::Length { expected: grid.len(), got: values.len() });
        }
        if let Some(k) = values.iter().position(|v| *v == f64::INFINITY) {
            return Err(FieldError::PositiveInfinity { cell: k });
        }
        let extended = values.contains(&NEG_INF);
        Ok(Self { grid, values, extended, provenance })
    }

    /// All cells undefined.
    pub fn undefined(grid: Grid, provenance: Provenance) -> Self {
        Self { grid, values: vec![f64::NAN; grid.len()], extended: false, provenance }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()], extended: false, provenance: Provenance::Sampled }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_extended(&self) -> bool {
        self.extended
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// The finite value at `idx`, or `None` for `NEG_INF` / undefined cells.
    #[inline]
    pub fn get(&self, idx: usize) -> Option<f64> {
        let v = self.values[idx];
        v.is_finite().then_some(v)
    }

    #[inline]
    pub fn raw(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn set(&mut self, idx: usize, value: f64) {
        if value == NEG_INF {
            self.extended = true;
        }
        self.values[idx] = value;
    }

    pub fn is_neg_inf(&self, idx: usize) -> bool {
        self.values[idx] == NEG_INF
    }

    /// Fraction of closure cells of `mask` holding `NEG_INF`.
    pub fn neg_inf_fraction(&self, mask: &DomainMask) -> f64 {
        let total = (0..self.grid.len()).filter(|&k| mask.in_closure(k)).count();
        let hits = (0..self.grid.len()).filter(|&k| mask.in_closure(k) && self.is_neg_inf(k)).count();
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    }

    /// Largest absolute difference over cells where both fields are finite.
    pub fn max_abs_diff(&self, other: &ScalarField, cells: impl Iterator<Item = usize>) -> f64 {
        cells.filter_map(|k| Some((self.get(k)? - other.get(k)?).abs())).fold(0.0, f64::max)
    }

    /// Minimum and maximum over the finite values among `cells`.
    pub fn range(&self, cells: impl Iterator<Item = usize>) -> Option<(f64, f64)> {
        cells.filter_map(|k| self.get(k)).fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    /// JSON layout: grid header plus row-major values, `"-inf"` for the
    /// sentinel and `null` for undefined cells.
    pub fn to_json(&self) -> Value {
        let values: Vec<Value> = self
            .values
            .iter()
            .map(|&v| {
                if v == NEG_INF {
                    Value::String("-inf".into())
                } else if v.is_nan() {
                    Value::Null
                } else {
                    json!(v)
                }
            })
            .collect();
        json!({
            "grid": {
                "dim": self.grid.dim(),
                "h": self.grid.h(),
                "extents": self.grid.extents(),
                "origin": self.grid.origin(),
            },
            "provenance": self.provenance,
            "extended": self.extended,
            "values": values,
        })
    }

    pub fn from_json(value: &Value) -> Result<Self, FieldError> {
        #[derive(Deserialize)]
        struct Header {
            dim: usize,
            h: f64,
            extents: [usize; 2],
            origin: Point,
        }
        let bad = |m: &str| FieldError::Json(m.to_string());
        let header: Header = serde_json::from_value(value["grid"].clone()).map_err(|e| bad(&e.to_string()))?;
        let grid = Grid::new(header.dim, header.h, header.extents, header.origin)?;
        let provenance: Provenance =
            serde_json::from_value(value["provenance"].clone()).map_err(|e| bad(&e.to_string()))?;
        let raw = value["values"].as_array().ok_or_else(|| bad("values must be an array"))?;
        let values = raw
            .iter()
            .map(|v| match v {
                Value::Null => Ok(f64::NAN),
                Value::String(s) if s == "-inf" => Ok(NEG_INF),
                Value::Number(n) => n.as_f64().ok_or_else(|| bad("non-f64 number")),
                _ => Err(bad("values must be numbers, null or \"-inf\"")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(grid, values, provenance)
    }
}

/// Closed-form scalar functions used to instantiate fields, densities and
/// boundary data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Formula {
    Constant {
        value: f64,
    },
    /// `gradient . x + offset`.
    Affine {
        gradient: Point,
        offset: f64,
    },
    /// `slope * |x - center|`.
    Cone {
        #[serde(default)]
        center: Point,
        #[serde(default = "one")]
        slope: f64,
    },
    /// `coef * |x|^2`.
    Paraboloid {
        coef: f64,
    },
    /// Lower hemisphere `-sqrt(R^2 - |x - center|^2) + shift`; `H_1 = n / R`.
    Hemisphere {
        radius: f64,
        #[serde(default)]
        center: Point,
        #[serde(default)]
        shift: f64,
    },
    /// Scherk's minimal graph `log(cos x1 / cos x2)`.
    Scherk,
    /// The radial profile `a(r-1)^delta` for `r >= 1`, `-b(1-r)^sigma - c`
    /// for `r < 1`: mean-curvature subharmonic with a jump of size `c` on the
    /// unit sphere and unbounded gradient there.
    JumpProfile {
        a: f64,
        b: f64,
        delta: f64,
        sigma: f64,
        c: f64,
    },
    /// Convex boundary data that is small for `x1 < knee` and rises to `peak`
    /// at `x1 = 1`: `base + peak * ((x1 - knee)^+ / (1 - knee))^power`.
    SteepSide {
        base: f64,
        peak: f64,
        knee: f64,
        power: f64,
    },
    /// `-| |x - center| - radius |`; its superlevel sets are annuli around the
    /// circle.
    RingDistance {
        center: Point,
        radius: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Formula {
    pub fn eval(&self, x: Point) -> f64 {
        match *self {
            Formula::Constant { value } => value,
            Formula::Affine { gradient, offset } => gradient[0] * x[0] + gradient[1] * x[1] + offset,
            Formula::Cone { center, slope } => slope * norm([x[0] - center[0], x[1] - center[1]]),
            Formula::Paraboloid { coef } => coef * (x[0] * x[0] + x[1] * x[1]),
            Formula::Hemisphere { radius, center, shift } => {
                let d2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                if d2 > radius * radius {
                    f64::NAN
                } else {
                    -(radius * radius - d2).sqrt() + shift
                }
            }
            Formula::Scherk => (x[0].cos() / x[1].cos()).ln(),
            Formula::JumpProfile { a, b, delta, sigma, c } => {
                let r = norm(x);
                if r >= 1.0 {
                    a * (r - 1.0).powf(delta)
                } else {
                    -b * (1.0 - r).powf(sigma) - c
                }
            }
            Formula::SteepSide { base, peak, knee, power } => {
                let s = ((x[0] - knee).max(0.0) / (1.0 - knee)).max(0.0);
                base + peak * s.powf(power)
            }
            Formula::RingDistance { center, radius } => -(norm([x[0] - center[0], x[1] - center[1]]) - radius).abs(),
        }
    }
}

/// Samples `f` at the centres of interior and boundary cells; exterior cells
/// are left undefined.
pub fn sample_function(f: &Formula, mask: &DomainMask) -> Result<ScalarField, FieldError> {
    sample_with(mask, |x| f.eval(x))
}

/// Like [`sample_function`] for an arbitrary closure. `NEG_INF` results are
/// kept (the field becomes extended); `NaN` is an error naming the cell.
pub fn sample_with(mask: &DomainMask, f: impl Fn(Point) -> f64) -> Result<ScalarField, FieldError> {
    let grid = *mask.grid();
    let mut values = vec![f64::NAN; grid.len()];
    for k in 0..grid.len() {
        if !mask.in_closure(k) {
            continue;
        }
        let x = grid.center(k);
        let v = f(x);
        if v.is_nan() {
            return Err(FieldError::UndefinedAt { cell: k, center: x });
        }
        values[k] = v;
    }
    ScalarField::new(grid, values, Provenance::Sampled)
}
