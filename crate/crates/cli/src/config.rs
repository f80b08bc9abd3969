use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use curvlab::dirichlet::MeasureSpec;
use curvlab::field::{Ball, Formula, Shape};
use curvlab::msolve::SolveOptions;

/// One experiment: what to run, on which domain, at which resolutions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub domain: Shape,
    /// Cells per unit length.
    pub resolutions: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(flatten)]
    pub experiment: Experiment,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Solve {
        f: Formula,
        boundary: Formula,
        #[serde(default)]
        exact: Option<Formula>,
        /// Required error reduction per halving of h.
        #[serde(default = "default_ratio")]
        min_ratio: f64,
    },
    Perron {
        field: Formula,
        levels: Vec<u32>,
        /// Mollifier widths for the smooth sequence, in cells; one per level.
        #[serde(default)]
        width_cells: Vec<f64>,
    },
    Measure {
        field: Formula,
        balls: Vec<Ball>,
        /// Mollifier widths in cells; empty measures the field itself.
        #[serde(default)]
        width_cells: Vec<f64>,
        /// Expected `mu` per ball, checked at the finest resolution.
        #[serde(default)]
        expected: Option<Vec<f64>>,
        #[serde(default = "default_rel_tol")]
        rel_tol: f64,
    },
    Harnack {
        /// Boundary data of the minimal graphs.
        members: Vec<Formula>,
        #[serde(default = "one")]
        r: f64,
        #[serde(default)]
        levels: Vec<f64>,
        /// Ratios must increase strictly along the members.
        #[serde(default)]
        increasing: bool,
        /// Bound on `u(0)`.
        #[serde(default)]
        center_bound: Option<f64>,
    },
    Dirichlet {
        measure: MeasureSpec,
        boundary: Formula,
        deltas: Vec<f64>,
        #[serde(default)]
        test_radii: Vec<f64>,
        /// Side cap (in cells) of the rectangles certifying the margin.
        #[serde(default)]
        certify_rectangles: Option<usize>,
    },
    Verify {},
}

fn default_ratio() -> f64 {
    3.0
}

fn default_rel_tol() -> f64 {
    0.02
}

fn one() -> f64 {
    1.0
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Solve { .. } => "solve",
            Experiment::Perron { .. } => "perron",
            Experiment::Measure { .. } => "measure",
            Experiment::Harnack { .. } => "harnack",
            Experiment::Dirichlet { .. } => "dirichlet",
            Experiment::Verify {} => "verify",
        }
    }
}

impl ExperimentConfig {
    pub fn verify_default() -> Self {
        Self {
            domain: Shape::Disk { center: [0.0; 2], radius: 1.0 },
            resolutions: vec![16.0, 32.0],
            seed: 0,
            output: None,
            solver: SolveOptions::default(),
            experiment: Experiment::Verify {},
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            bail!("resolution list is empty");
        }
        if let Some(r) = self.resolutions.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            bail!("resolution {r} must be positive");
        }
        self.solver.validate()?;
        match &self.experiment {
            Experiment::Perron { levels, width_cells, .. } => {
                if levels.is_empty() {
                    bail!("perron needs at least one level");
                }
                if !width_cells.is_empty() && width_cells.len() != levels.len() {
                    bail!("width_cells needs one entry per level");
                }
            }
            Experiment::Measure { balls, expected, width_cells, .. } => {
                if balls.is_empty() {
                    bail!("measure needs at least one ball");
                }
                if expected.as_ref().is_some_and(|e| e.len() != balls.len()) {
                    bail!("expected needs one value per ball");
                }
                if width_cells.iter().any(|&w| w < 2.0) {
                    bail!("mollifier widths must be at least 2 cells");
                }
            }
            Experiment::Harnack { members, .. } if members.is_empty() => {
                bail!("harnack needs members")
            }
            Experiment::Dirichlet { measure, deltas, .. } => {
                measure.validate(self.domain.dim())?;
                if deltas.is_empty() {
                    bail!("dirichlet needs a delta schedule");
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Hex SHA-256 of the resolved configuration.
    pub fn inputs_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
