use std::f64::consts::PI;

use curvlab::field::{make_grid, sample_function, sample_with, Ball, DomainMask, Formula, Shape};
use curvlab::measure::*;
use curvlab::msolve::SolveOptions;
use curvlab::perron::smooth_subharmonic_sequence;
use proptest::prelude::*;

fn disk(radius: f64, res: f64) -> DomainMask {
    make_grid(&Shape::Disk { center: [0.0; 2], radius }, res).unwrap()
}

fn cone(mask: &DomainMask) -> curvlab::field::ScalarField {
    sample_function(&Formula::Cone { center: [0.0; 2], slope: 1.0 }, mask).unwrap()
}

#[test]
fn affine_fields_carry_no_measure() {
    let mask = disk(1.0, 32.0);
    let u = sample_function(&Formula::Affine { gradient: [0.8, -0.3], offset: 1.0 }, &mask).unwrap();
    let fam =
        BallFamily::random(&mask, &FamilySpec { count: 6, radii: (0.25, 0.4), gap: 0.0, clearance: 0.0 }, 1).unwrap();
    let t = ball_measure_table(Source::Smooth(&u), &mask, &fam.balls, DEFAULT_BAND).unwrap();
    assert_eq!(t.method, Method::Flux);
    assert!(t.rows.iter().all(|r| r.mu.abs() < 1e-12));
    assert!(t.total.abs() < 1e-12);
}

#[test]
fn hemisphere_flux_matches_the_analytic_law() {
    // u = -sqrt(R^2 - r^2): Du / W = x / R, so the flux out of B_r is 2 pi r^2 / R
    let mask = disk(1.0, 64.0);
    let big_r = 2.0;
    let u = sample_function(&Formula::Hemisphere { radius: big_r, center: [0.0; 2], shift: 0.0 }, &mask).unwrap();
    let balls: Vec<Ball> = [0.25, 0.5, 0.75].iter().map(|&r| Ball::centered(r)).collect();
    let t = ball_measure_table(Source::Smooth(&u), &mask, &balls, DEFAULT_BAND).unwrap();
    let h = mask.grid().h();
    for r in &t.rows {
        let want = 2.0 * PI * r.ball.radius.powi(2) / big_r;
        assert!((r.mu / want - 1.0).abs() < 0.02, "{} {want}", r.mu);
        // against the area of the enclosed cells the staircase error drops out
        let cells = mask.interior_cells().filter(|&k| r.ball.contains(mask.grid().center(k))).count();
        let staircase = 2.0 * cells as f64 * h * h / big_r;
        assert!((r.mu / staircase - 1.0).abs() < 1e-3, "{} {staircase}", r.mu);
    }
    let dens = density_integrals(&u, &mask, &balls);
    for (r, d) in t.rows.iter().zip(dens) {
        assert!((r.mu - d).abs() <= 1e-12 * r.mu.abs().max(1.0));
    }
    assert!(t.total <= 2.0 * PI);
}

#[test]
fn cone_measure_from_the_mollified_sequence() {
    let mask = disk(1.0, 128.0);
    let u = cone(&mask);
    let seq = Sequence::mollified(&u, &mask, &[1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]).unwrap();
    let balls: Vec<Ball> = [0.25, 0.5, 0.75].iter().map(|&r| Ball::centered(r)).collect();
    let t = ball_measure_table(Source::Sequence(&seq), &mask, &balls, DEFAULT_BAND).unwrap();
    assert_eq!(t.method, Method::LimitOfSequence);
    for r in &t.rows {
        let want = 2f64.sqrt() * PI * r.ball.radius;
        assert!((r.mu / want - 1.0).abs() < 0.02, "{} {want}", r.mu);
        assert!(r.converged && r.terms.len() == 3);
        assert!(r.mu >= -r.eps_neg);
    }
    let csv = t.to_table().to_csv();
    assert!(csv.starts_with("center_x,center_y,r,mu,method,band\n0,0,0.25,"));
    assert!(csv.lines().nth(1).unwrap().contains(",limit-of-sequence,"));
}

#[test]
fn cone_in_one_dimension_has_an_atom_at_the_tip() {
    let mask = make_grid(&Shape::Interval { a: -1.0, b: 1.0 }, 128.0).unwrap();
    let u = sample_with(&mask, |x| x[0].abs()).unwrap();
    let seq = Sequence::mollified(&u, &mask, &[1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0]).unwrap();
    let balls = vec![Ball::new([0.0, 0.0], 0.3), Ball::new([0.1, 0.0], 0.2), Ball::new([-0.5, 0.0], 0.25)];
    let t = ball_measure_table(Source::Sequence(&seq), &mask, &balls, DEFAULT_BAND).unwrap();
    let mu = t.mu();
    assert!((mu[0] / 2f64.sqrt() - 1.0).abs() < 0.01, "{mu:?}");
    assert!((mu[1] / 2f64.sqrt() - 1.0).abs() < 0.01, "{mu:?}");
    assert!(mu[2].abs() < 1e-12, "{mu:?}");
}

#[test]
fn singular_mass_of_a_kink_and_of_smooth_fields() {
    let mask = make_grid(&Shape::Interval { a: -1.0, b: 1.0 }, 128.0).unwrap();
    let h = 1.0 / 128.0;
    let u = sample_with(&mask, |x| x[0].abs()).unwrap();
    let m = interface_singular_mass(&u, &JumpSet::Point { x: 0.0 }, [16.0 * h, 8.0 * h, 4.0 * h]).unwrap();
    assert!((m.mass.unwrap() / 2f64.sqrt() - 1.0).abs() < 0.01, "{m:?}");

    let smooth = sample_with(&mask, |x| 0.3 * x[0] * x[0] + x[0]).unwrap();
    let m = interface_singular_mass(&smooth, &JumpSet::Point { x: 0.1 }, [16.0 * h, 8.0 * h, 4.0 * h]).unwrap();
    assert!(m.vanishes(), "{m:?}");

    let disk = disk(1.0, 64.0);
    let h = 1.0 / 64.0;
    let bowl = sample_function(&Formula::Hemisphere { radius: 2.0, center: [0.0; 2], shift: 0.0 }, &disk).unwrap();
    let circle = JumpSet::Circle { center: [0.0; 2], radius: 0.5 };
    let m = interface_singular_mass(&bowl, &circle, [16.0 * h, 8.0 * h, 4.0 * h]).unwrap();
    assert!(m.vanishes(), "{m:?}");
}

#[test]
fn singular_mass_flags_oscillating_shells_and_bad_widths() {
    // the shell differences alternate in sign with equal size
    let mask = make_grid(&Shape::Interval { a: -1.0, b: 1.0 }, 256.0).unwrap();
    let u = sample_with(&mask, |x| 0.05 * (2.0 * PI * x[0] / 0.15).cos()).unwrap();
    let m = interface_singular_mass(&u, &JumpSet::Point { x: 0.0 }, [0.4, 0.2, 0.1]).unwrap();
    assert!(m.mass.is_none() && !m.vanishes(), "{m:?}");
    assert!(matches!(
        interface_singular_mass(&u, &JumpSet::Point { x: 0.0 }, [0.1, 0.2, 0.05]),
        Err(MeasureError::Widths(_))
    ));
}

#[test]
fn aitken_extrapolation() {
    // geometric tails are extrapolated exactly
    let lim = 3.0;
    let x = [lim + 1.0, lim + 0.5, lim + 0.25];
    assert!((aitken(x) - lim).abs() < 1e-14);
    // constant and slowly contracting sequences fall back to the last term
    assert_eq!(aitken([2.0, 2.0, 2.0]), 2.0);
    assert_eq!(aitken([1.0, 1.9, 2.7]), 2.7);
}

#[test]
fn ball_families() {
    let mask = disk(1.0, 32.0);
    let spec = FamilySpec { count: 12, radii: (0.25, 0.35), gap: 0.125, clearance: 0.0 };
    let a = BallFamily::random(&mask, &spec, 5).unwrap();
    let b = BallFamily::random(&mask, &spec, 5).unwrap();
    assert_eq!(a.balls, b.balls);
    assert_eq!(a.seed, Some(5));
    assert!(a.balls.iter().all(|x| x.radius >= 0.25 && x.radius < 0.35));
    assert!(a.inflated().iter().all(|x| x.center[0].hypot(x.center[1]) + x.radius < 1.0));
    let c = BallFamily::random(&mask, &spec, 6).unwrap();
    assert_ne!(a.balls, c.balls);

    assert!(matches!(BallFamily::new(&mask, vec![Ball::centered(0.2)], 0.0, 0.0), Err(MeasureError::Family { .. })));
    assert!(matches!(
        BallFamily::new(&mask, vec![Ball::new([0.5, 0.0], 0.3)], 0.25, 0.0),
        Err(MeasureError::Family { .. })
    ));
    let spec = FamilySpec { count: 3, radii: (1.0, 1.1), gap: 0.0, clearance: 0.0 };
    assert!(matches!(BallFamily::random(&mask, &spec, 1), Err(MeasureError::Sampling { .. })));
}

#[test]
fn sandwich_of_two_cone_sequences() {
    let mask = disk(1.0, 64.0);
    let h = 1.0 / 64.0;
    let u = cone(&mask);
    let sched: Vec<(u32, f64)> = (1..=3).map(|j| (j, 0.5f64.powi(j as i32) / 4.0)).collect();
    let widths: Vec<f64> = sched.iter().map(|s| s.1).collect();
    let a = Sequence::mollified(&u, &mask, &widths).unwrap();
    let b = Sequence::from_terms(smooth_subharmonic_sequence(&u, &mask, &sched, &SolveOptions::default()).unwrap());
    let spec = FamilySpec { count: 4, radii: (0.2, 0.4), gap: 4.0 * h, clearance: widths[0] + 2.0 * h };
    let fam = BallFamily::random(&mask, &spec, 3).unwrap();
    let opts = SandwichOptions { gap: 4.0 * h, tol: 0.03, l1_threshold: 0.05, band: DEFAULT_BAND };

    let same = weak_convergence_check(&a, &a, &mask, &fam, &opts).unwrap();
    assert!(same.passed && same.l1_distance == 0.0);

    let v = weak_convergence_check(&a, &b, &mask, &fam, &opts).unwrap();
    assert!(v.passed, "{:?}", v.worst);
    assert!(v.l1_distance > 0.0);

    let mut shifted = a.clone();
    for f in &mut shifted.fields {
        for v in f.values_mut() {
            *v += 1.0;
        }
    }
    assert!(matches!(weak_convergence_check(&a, &shifted, &mask, &fam, &opts), Err(MeasureError::Disagree { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn measure_of_smooth_subharmonic_fields(
        c in (-0.3..0.3f64, -0.3..0.3f64),
        a in (-0.5..0.5f64, -0.5..0.5f64),
        b in 0.0..0.5f64,
        centre in (-0.3..0.3f64, -0.3..0.3f64),
        (r1, r2) in (0.1..0.3f64, 0.32..0.6f64),
    ) {
        // hemisphere plus a plane plus a paraboloid: convex with H_1 > 0
        let mask = disk(1.0, 32.0);
        let u = sample_with(&mask, |x| {
            let d2 = (x[0] - c.0).powi(2) + (x[1] - c.1).powi(2);
            -(4.0 - d2).sqrt() + a.0 * x[0] + a.1 * x[1] + b * (x[0] * x[0] + x[1] * x[1])
        }).unwrap();
        let inner = Ball::new([centre.0, centre.1], r1);
        let outer = Ball::new([centre.0, centre.1], r2);
        let t = ball_measure_table(Source::Smooth(&u), &mask, &[inner, outer], DEFAULT_BAND).unwrap();
        let dens = density_integrals(&u, &mask, &[inner, outer]);
        for (row, d) in t.rows.iter().zip(&dens) {
            prop_assert!(row.mu >= -1e-12);
            prop_assert!((row.mu - d).abs() <= 1e-12 * row.mu.abs().max(1.0));
        }
        prop_assert!(t.rows[0].mu <= t.rows[1].mu);
        prop_assert!(t.total <= 2.0 * PI + t.eps_neg_total);
    }
}
