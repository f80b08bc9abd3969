use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use curvlab::dirichlet::{solve_measure_dirichlet, ContinuationSchedule, MeasureSpec};
use curvlab::field::{make_grid, sample_function, Ball, DomainMask, Formula, Shape};
use curvlab::levelset::{decay_level, eta_margin, harnack_report, MassGrid, SetFamily};
use curvlab::measure::{ball_measure_table, Sequence, Source, DEFAULT_BAND};
use curvlab::msolve::{solve_dirichlet, SolveOptions};
use curvlab::perron::{approximation_sweep, perron_lift, smooth_subharmonic_sequence};
use curvlab::table::{num, Table};

use crate::config::{Experiment, ExperimentConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub inputs_hash: String,
    pub seed: u64,
    pub resolutions: Vec<f64>,
    pub outputs: Vec<String>,
    pub assertions: Vec<Assertion>,
    pub passed: bool,
}

/// Collects output files and assertions of one experiment directory.
struct Run {
    dir: PathBuf,
    outputs: Vec<String>,
    assertions: Vec<Assertion>,
}

impl Run {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        self.write(name, &t.to_csv())
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.assertions.push(Assertion { name: name.into(), passed, detail: detail.into() });
    }
}

fn mask_at(shape: &Shape, res: f64) -> Result<DomainMask> {
    make_grid(shape, res).with_context(|| format!("building the grid at resolution {res}"))
}

/// Runs the experiment into `dir` and writes its manifest.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut run = Run { dir: dir.to_path_buf(), outputs: Vec::new(), assertions: Vec::new() };
    run.write("config.json", &serde_json::to_string_pretty(cfg)?)?;
    match &cfg.experiment {
        Experiment::Solve { f, boundary, exact, min_ratio } => {
            solve(cfg, &mut run, f, boundary, exact.as_ref(), *min_ratio)?
        }
        Experiment::Perron { field, levels, width_cells } => perron(cfg, &mut run, field, levels, width_cells)?,
        Experiment::Measure { field, balls, width_cells, expected, rel_tol } => {
            measure(cfg, &mut run, field, balls, width_cells, expected.as_deref(), *rel_tol)?
        }
        Experiment::Harnack { members, r, levels, increasing, center_bound } => {
            harnack(cfg, &mut run, members, *r, levels, *increasing, *center_bound)?
        }
        Experiment::Dirichlet { measure, boundary, deltas, test_radii, certify_rectangles } => {
            dirichlet(cfg, &mut run, measure, boundary, deltas, test_radii, *certify_rectangles)?
        }
        Experiment::Verify {} => verify(cfg, &mut run)?,
    }
    let mut outputs = run.outputs;
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        kind: cfg.experiment.name().into(),
        inputs_hash: cfg.inputs_hash(),
        seed: cfg.seed,
        resolutions: cfg.resolutions.clone(),
        outputs,
        passed: run.assertions.iter().all(|a| a.passed),
        assertions: run.assertions,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn solve(
    cfg: &ExperimentConfig,
    run: &mut Run,
    f: &Formula,
    boundary: &Formula,
    exact: Option<&Formula>,
    min_ratio: f64,
) -> Result<()> {
    let mut summary = Table::new(&["resolution", "h", "iters", "residual", "converged", "linf_error"]);
    let mut errors = Vec::new();
    for &res in &cfg.resolutions {
        let mask = mask_at(&cfg.domain, res)?;
        let rhs = sample_function(f, &mask)?;
        let phi = sample_function(boundary, &mask)?;
        let out = solve_dirichlet(&mask, &rhs, &phi, &cfg.solver)?;
        let err = exact.map(|e| {
            mask.interior_cells()
                .map(|k| (out.solution.raw(k) - e.eval(mask.grid().center(k))).abs())
                .fold(0.0, f64::max)
        });
        summary.push(vec![
            num(res),
            num(mask.grid().h()),
            out.iterations.to_string(),
            num(out.residual),
            out.converged.to_string(),
            num(err.unwrap_or(f64::NAN)),
        ]);
        run.check(format!("converged_res{res}"), out.converged, format!("residual {:e}", out.residual));
        errors.extend(err);
        run.write(&format!("solution_res{res}.json"), &out.solution.to_json().to_string())?;
    }
    run.table("solve.csv", &summary)?;
    convergence_checks(run, &cfg.resolutions, &errors, min_ratio);
    Ok(())
}

/// Error-halving checks between successive resolutions.
fn convergence_checks(run: &mut Run, res: &[f64], errors: &[f64], min_ratio: f64) {
    if errors.len() != res.len() {
        return;
    }
    for i in 1..errors.len() {
        let ratio = errors[i - 1] / errors[i];
        let refine = res[i] / res[i - 1];
        // a factor min_ratio per halving, scaled to the actual refinement
        let want = min_ratio.powf(refine.log2());
        run.check(
            format!("error_ratio_res{}_to_res{}", res[i - 1], res[i]),
            ratio >= want || errors[i] < 1e-12,
            format!("{} -> {} (ratio {ratio:.3}, need {want:.3})", errors[i - 1], errors[i]),
        );
    }
}

fn perron(cfg: &ExperimentConfig, run: &mut Run, field: &Formula, levels: &[u32], width_cells: &[f64]) -> Result<()> {
    let tol = cfg.solver.tol;
    for &res in &cfg.resolutions {
        let mask = mask_at(&cfg.domain, res)?;
        let u = sample_function(field, &mask)?;
        for &level in levels {
            let sweep = approximation_sweep(&u, &mask, level, &cfg.solver)?;
            run.table(&format!("sweep_res{res}_level{level}.csv"), &sweep.trace.to_table())?;
            let tag = format!("res{res}_level{level}");
            run.check(format!("sweep_complete_{tag}"), sweep.aborted.is_none(), format!("{:?}", sweep.aborted));
            run.check(
                format!("sweep_monotone_{tag}"),
                sweep.trace.monotone,
                format!(
                    "min increase {:e} against -10 tol",
                    sweep.trace.balls.iter().map(|b| b.min_increase).fold(0.0, f64::min)
                ),
            );
            // outside invariance of a single lift
            let ball = Ball::new([0.0; 2], sweep.trace.radius);
            if let Ok(lift) = perron_lift(&u, &mask, &ball, &cfg.solver) {
                let outside = mask
                    .interior_cells()
                    .filter(|&k| !ball.contains(mask.grid().center(k)))
                    .map(|k| (lift.field.raw(k) - u.raw(k)).abs())
                    .fold(0.0, f64::max);
                run.check(format!("lift_outside_invariant_{tag}"), outside <= 10.0 * tol, format!("{outside:e}"));
            }
        }
        if !width_cells.is_empty() {
            let h = mask.grid().h();
            let plan: Vec<(u32, f64)> = levels.iter().zip(width_cells).map(|(&j, &w)| (j, w * h)).collect();
            let terms = smooth_subharmonic_sequence(&u, &mask, &plan, &cfg.solver)?;
            let mut t = Table::new(&["level", "eps", "defect"]);
            for term in &terms {
                t.push_nums(&[term.level as f64, term.eps, term.defect]);
            }
            run.table(&format!("sequence_res{res}.csv"), &t)?;
        }
    }
    Ok(())
}

fn measure(
    cfg: &ExperimentConfig,
    run: &mut Run,
    field: &Formula,
    balls: &[Ball],
    width_cells: &[f64],
    expected: Option<&[f64]>,
    rel_tol: f64,
) -> Result<()> {
    let mut summary = Table::new(&["resolution", "h", "center_x", "center_y", "r", "mu", "band", "converged"]);
    let mut per_res: Vec<Vec<f64>> = Vec::new();
    for &res in &cfg.resolutions {
        let mask = mask_at(&cfg.domain, res)?;
        let h = mask.grid().h();
        let u = sample_function(field, &mask)?;
        let table = if width_cells.is_empty() {
            ball_measure_table(Source::Smooth(&u), &mask, balls, DEFAULT_BAND)?
        } else {
            let widths: Vec<f64> = width_cells.iter().map(|w| w * h).collect();
            let seq = Sequence::mollified(&u, &mask, &widths)?;
            ball_measure_table(Source::Sequence(&seq), &mask, balls, DEFAULT_BAND)?
        };
        run.table(&format!("measure_res{res}.csv"), &table.to_table())?;
        for row in &table.rows {
            summary.push(vec![
                num(res),
                num(h),
                num(row.ball.center[0]),
                num(row.ball.center[1]),
                num(row.ball.radius),
                num(row.mu),
                num(row.band),
                row.converged.to_string(),
            ]);
        }
        per_res.push(table.mu());
    }
    run.table("measure_summary.csv", &summary)?;
    if let (Some(want), Some(last)) = (expected, per_res.last()) {
        for (i, (&w, &m)) in want.iter().zip(last).enumerate() {
            let rel = (m - w).abs() / w.abs().max(1e-300);
            run.check(
                format!("ball{i}_within_{rel_tol}"),
                rel <= rel_tol,
                format!("mu {m} expected {w} (rel {rel:.4})"),
            );
        }
        for i in 0..want.len() {
            let errs: Vec<f64> = per_res.iter().map(|r| (r[i] - want[i]).abs()).collect();
            let settles = errs.windows(2).all(|p| p[1] <= p[0] * 1.05 + 1e-12);
            run.check(format!("ball{i}_error_nonincreasing"), settles, format!("{errs:?}"));
        }
    }
    Ok(())
}

fn harnack(
    cfg: &ExperimentConfig,
    run: &mut Run,
    members: &[Formula],
    r: f64,
    levels: &[f64],
    increasing: bool,
    center_bound: Option<f64>,
) -> Result<()> {
    let res = *cfg.resolutions.last().expect("validated");
    let mask = mask_at(&cfg.domain, res)?;
    let zero = sample_function(&Formula::Constant { value: 0.0 }, &mask)?;
    let origin = mask.grid().locate([0.0; 2]).context("origin outside the grid")?;
    let mut ratios = Vec::new();
    let mut t = Table::new(&["member", "sup", "inf", "ratio", "u0", "converged"]);
    for (i, m) in members.iter().enumerate() {
        let phi = sample_function(m, &mask)?;
        let out = solve_dirichlet(&mask, &zero, &phi, &cfg.solver)?;
        let rep = harnack_report(&out.solution, &mask, r, levels)?;
        let u0 = out.solution.raw(origin);
        t.push(vec![i.to_string(), num(rep.sup), num(rep.inf), num(rep.ratio), num(u0), out.converged.to_string()]);
        run.table(&format!("psi_member{i}.csv"), &rep.to_table())?;
        run.check(format!("member{i}_converged"), out.converged, format!("residual {:e}", out.residual));
        run.check(format!("member{i}_ratio_finite"), rep.ratio.is_finite(), num(rep.ratio));
        if let Some(b) = center_bound {
            run.check(format!("member{i}_center_bound"), u0 <= b + cfg.solver.tol, format!("u(0) = {u0}"));
        }
        ratios.push(rep.ratio);
    }
    run.table("harnack.csv", &t)?;
    if increasing {
        let ok = ratios.windows(2).all(|w| w[1] > w[0]);
        run.check("ratios_strictly_increasing", ok, format!("{ratios:?}"));
    }
    Ok(())
}

fn dirichlet(
    cfg: &ExperimentConfig,
    run: &mut Run,
    nu: &MeasureSpec,
    boundary: &Formula,
    deltas: &[f64],
    test_radii: &[f64],
    certify: Option<usize>,
) -> Result<()> {
    for &res in &cfg.resolutions {
        let mask = mask_at(&cfg.domain, res)?;
        let phi = sample_function(boundary, &mask)?;
        let sched = ContinuationSchedule::standard(mask.grid().h(), deltas.to_vec(), cfg.solver.clone());
        let fam = certify.map(|cap| SetFamily { rectangles: Some(cap), ..Default::default() });
        let out = solve_measure_dirichlet(&mask, nu, &phi, &sched, fam.as_ref())?;
        run.table(&format!("stages_res{res}.csv"), &out.to_table())?;
        let tag = format!("res{res}");
        run.check(format!("completed_{tag}"), out.completed(), out.stopped.clone().unwrap_or_default());
        run.check(format!("monotone_{tag}"), out.violations() == 0, format!("{} violations", out.violations()));
        run.check(format!("sup_bound_{tag}"), out.sup_bound, "");
        if let Some(u) = out.limit() {
            run.write(&format!("limit_res{res}.json"), &u.to_json().to_string())?;
        }
        if out.completed() && !test_radii.is_empty() {
            let balls: Vec<Ball> = test_radii.iter().map(|&r| Ball::centered(r)).collect();
            let rows = out.mass_recovery(nu, &mask, &balls)?;
            let mut t = Table::new(&["r", "nu", "mu", "error", "within"]);
            for row in &rows {
                t.push(vec![num(row.ball.radius), num(row.nu), num(row.mu), num(row.error), row.within.to_string()]);
                run.check(
                    format!("mass_recovery_{tag}_r{}", row.ball.radius),
                    row.within,
                    format!("mu {} nu {}", row.mu, row.nu),
                );
            }
            run.table(&format!("mass_recovery_res{res}.csv"), &t)?;
        }
        let tags: Vec<String> = out.tags.iter().map(|t| format!("{t:?}")).collect();
        run.write(&format!("tags_res{res}.json"), &serde_json::to_string(&tags)?)?;
    }
    Ok(())
}

/// Cases whose answers are exact: affine data, zero measures, constants.
fn verify(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let opts = SolveOptions { tol: 1e-11, ..cfg.solver.clone() };
    let plane = Formula::Affine { gradient: [0.3, -0.2], offset: 0.5 };
    let zero_f = Formula::Constant { value: 0.0 };
    for &res in &cfg.resolutions {
        let mask = mask_at(&cfg.domain, res)?;
        let zero = sample_function(&zero_f, &mask)?;
        let phi = sample_function(&plane, &mask)?;
        let out = solve_dirichlet(&mask, &zero, &phi, &opts)?;
        let err = mask
            .interior_cells()
            .map(|k| (out.solution.raw(k) - plane.eval(mask.grid().center(k))).abs())
            .fold(0.0, f64::max);
        run.check(format!("affine_solve_exact_res{res}"), err <= 1e-10, format!("{err:e}"));

        let u = sample_function(&plane, &mask)?;
        let balls = [Ball::centered(0.25), Ball::centered(0.5)];
        let mu = ball_measure_table(Source::Smooth(&u), &mask, &balls, DEFAULT_BAND)?;
        let worst = mu.mu().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        run.check(format!("affine_measure_zero_res{res}"), worst <= 1e-12, format!("{worst:e}"));

        let c = sample_function(&Formula::Constant { value: 1.5 }, &mask)?;
        let lift = perron_lift(&c, &mask, &Ball::centered(0.5), &opts)?;
        let dev = lift.field.max_abs_diff(&c, mask.interior_cells());
        run.check(format!("constant_lift_fixed_res{res}"), dev <= 10.0 * opts.tol, format!("{dev:e}"));

        let sched = ContinuationSchedule::standard(mask.grid().h(), vec![0.25, 0.125, 0.0625], opts.clone());
        let d = solve_measure_dirichlet(&mask, &MeasureSpec::default(), &zero, &sched, None)?;
        let peak = d.fields.iter().flat_map(|u| mask.interior_cells().map(move |k| u.raw(k).abs())).fold(0.0, f64::max);
        run.check(format!("zero_measure_zero_solution_res{res}"), d.completed() && peak <= 1e-12, format!("{peak:e}"));

        let eta =
            eta_margin(&MassGrid::zero(*mask.grid()), &mask, &SetFamily { rectangles: Some(8), ..Default::default() })?;
        run.check(format!("zero_measure_margin_one_res{res}"), eta.eta_star == 1.0, num(eta.eta_star));
    }
    let t = decay_level(1.0)?;
    run.check("decay_level_eta_one", (t - 3f64.powf(-0.75)).abs() < 1e-12, num(t));
    let ring = curvlab::dirichlet::MeasureSpec::ring(0.5, 1.0);
    let mask = mask_at(&Shape::Disk { center: [0.0; 2], radius: 1.0 }, 32.0)?;
    let mass = ring.total_mass(&mask)?;
    run.check("ring_mass_pi", (mass - PI).abs() < 1e-12, num(mass));
    let mut t = Table::new(&["assertion", "passed"]);
    for a in &run.assertions {
        t.push(vec![a.name.clone(), a.passed.to_string()]);
    }
    run.table("verify.csv", &t)
}
