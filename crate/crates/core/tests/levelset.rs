use std::f64::consts::PI;

use curvlab::field::{make_grid, sample_function, sample_with, Ball, DomainMask, Formula, Shape};
use curvlab::levelset::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn disk(radius: f64, res: f64) -> DomainMask {
    make_grid(&Shape::Disk { center: [0.0; 2], radius }, res).unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs()
}

#[test]
fn level_sets_of_radial_and_affine_fields() {
    let mask = disk(1.25, 128.0);
    let delta = default_delta(2);
    let cone = sample_with(&mask, |x| x[0].hypot(x[1])).unwrap();
    // {|x| > 1/2} in B_1: an annulus touching the sphere
    let s = level_set_report(&cone, &mask, 1.0, 0.5, delta).unwrap();
    assert!(close(s.gamma_int, 2.0 * PI, 0.01), "{s:?}");
    assert!(close(s.gamma_bdy, PI, 0.01), "{s:?}");
    assert!(close(s.ratio.unwrap(), 0.5, 0.02));
    assert!(close(s.area, 0.75 * PI, 0.02));
    assert!(close(s.rho, PI, 0.01));
    assert_eq!(s.steep_fraction, Some(0.0));

    let steep = sample_with(&mask, |x| 20.0 * x[0].hypot(x[1])).unwrap();
    let s = level_set_report(&steep, &mask, 1.0, 10.0, delta).unwrap();
    assert_eq!(s.steep_fraction, Some(1.0));

    let peak = sample_with(&mask, |x| 1.0 - x[0].hypot(x[1])).unwrap();
    let s = level_set_report(&peak, &mask, 1.0, 0.5, delta).unwrap();
    assert_eq!(s.gamma_int, 0.0);
    assert_eq!(s.ratio, Some(f64::INFINITY));

    let flat = sample_function(&Formula::Constant { value: 2.0 }, &mask).unwrap();
    let s = level_set_report(&flat, &mask, 1.0, 0.0, delta).unwrap();
    assert_eq!((s.gamma_bdy, s.ratio), (0.0, Some(0.0)));
    assert!(level_set_report(&flat, &mask, 1.0, 3.0, delta).unwrap().ratio.is_none());

    let x1 = sample_with(&mask, |x| x[0]).unwrap();
    let s = level_set_report(&x1, &mask, 1.0, 0.0, delta).unwrap();
    assert!(close(s.gamma_int, PI, 0.01));
    assert!(close(s.gamma_bdy, 2.0, 0.01));
    assert!(close(s.ratio.unwrap(), 2.0 / PI, 0.02));

    assert!(matches!(level_set_report(&x1, &mask, 1.5, 0.0, delta), Err(LevelSetError::BallOutside { .. })));
}

#[test]
fn coarea_identity_on_a_cone() {
    let mask = disk(1.25, 128.0);
    let u = sample_with(&mask, |x| 1.0 - x[0].hypot(x[1])).unwrap();
    let levels: Vec<f64> = (2..=8).map(|k| k as f64 / 10.0).collect();
    let p = coarea_profile(&u, &mask, Some(&Ball::centered(1.0)), &levels, 0.05).unwrap();
    for r in &p.rows {
        let s = 1.0 - r.t;
        assert!(close(r.phi, PI * s * s, 0.03), "{r:?}");
        assert!(close(r.integral, 2.0 * PI * s, 0.02), "{r:?}");
        assert!(!r.flagged);
    }
    assert!(p.worst_mismatch() < 0.03, "{}", p.worst_mismatch());
    let csv = p.to_table().to_csv();
    assert!(csv.starts_with("t,phi,dphi,coarea_integral,flagged"));
}

#[test]
fn coarea_flags_critical_levels() {
    let square = make_grid(&Shape::Rectangle { min: [0.0; 2], max: [1.0; 2] }, 64.0).unwrap();
    let x1 = sample_with(&square, |x| x[0]).unwrap();
    let p = coarea_profile(&x1, &square, None, &[0.3, 0.5], 0.05).unwrap();
    for r in &p.rows {
        // interior cells stop short of the walls, the reconstructed level
        // line does not
        assert!(close(r.integral, 1.0, 0.01), "{r:?}");
    }
    let mask = disk(1.25, 128.0);
    let x1 = sample_with(&mask, |x| x[0]).unwrap();
    let p = coarea_profile(&x1, &mask, Some(&Ball::centered(1.0)), &[-0.5, 0.0, 0.5], 0.05).unwrap();
    for r in &p.rows {
        let chord = 2.0 * (1.0 - r.t * r.t).sqrt();
        assert!(close(-r.dphi, chord, 0.02), "{r:?}");
        assert!(close(r.integral, chord, 0.02), "{r:?}");
    }
    assert!(p.worst_mismatch() < 0.03);
    // a level just above the minimum of a parabola sits where Du vanishes
    let bump = sample_with(&mask, |x| (x[0] - 1.0 / 256.0).powi(2)).unwrap();
    let p = coarea_profile(&bump, &mask, None, &[1e-20], 1e-3).unwrap();
    assert!(p.rows[0].flagged, "{:?}", p.rows[0]);
}

#[test]
fn harnack_ratio_of_an_affine_field() {
    let mask = disk(1.25, 64.0);
    let u = sample_with(&mask, |x| 1.0 + 0.5 * x[0]).unwrap();
    let rep = harnack_report(&u, &mask, 1.0, &[0.4, 1.0, 2.0]).unwrap();
    assert!((rep.sup - 1.25).abs() < 1e-12 && (rep.inf - 0.75).abs() < 1e-12, "{rep:?}");
    assert!((rep.ratio - 5.0 / 3.0).abs() < 1e-12);
    assert!(close(rep.psi[0].1, 2.0 * PI, 1e-9));
    assert!(close(rep.psi[1].1, PI, 0.02), "{:?}", rep.psi);
    assert_eq!(rep.psi[2].1, 0.0);
    assert!(rep.to_table().to_csv().starts_with("t,psi"));

    let c = sample_function(&Formula::Constant { value: 3.0 }, &mask).unwrap();
    assert_eq!(harnack_report(&c, &mask, 1.0, &[]).unwrap().ratio, 1.0);

    let x1 = sample_with(&mask, |x| x[0]).unwrap();
    assert!(matches!(harnack_report(&x1, &mask, 1.0, &[]), Err(LevelSetError::NotPositive { .. })));
}

#[test]
fn weak_harnack_constants() {
    let mask = disk(1.25, 128.0);
    let one = sample_function(&Formula::Constant { value: 1.0 }, &mask).unwrap();
    let w = weak_harnack_check(&one, &mask, 2.0, 1.0).unwrap();
    assert!(close(w.implied_c.unwrap(), PI.powf(-0.5), 0.01), "{w:?}");

    let cone = sample_with(&mask, |x| x[0].hypot(x[1])).unwrap();
    let w = weak_harnack_check(&cone, &mask, 1.0, 1.0).unwrap();
    assert!(close(w.implied_c.unwrap(), 3.0 / (4.0 * PI), 0.01), "{w:?}");

    let neg = sample_function(&Formula::Constant { value: -1.0 }, &mask).unwrap();
    assert!(weak_harnack_check(&neg, &mask, 1.0, 1.0).unwrap().implied_c.is_none());
    assert!(matches!(weak_harnack_check(&one, &mask, 0.0, 1.0), Err(LevelSetError::Exponent(_))));
}

fn brute_force_rectangles(nu: &MassGrid, mask: &DomainMask) -> f64 {
    let g = mask.grid();
    let [nx, ny] = g.extents();
    let mut best = 0.0f64;
    for i0 in 0..nx {
        for i1 in i0..nx {
            for j0 in 0..ny {
                for j1 in j0..ny {
                    let cells: Vec<usize> =
                        (i0..=i1).flat_map(|i| (j0..=j1).map(move |j| (i, j))).map(|(i, j)| g.index(i, j)).collect();
                    if cells.iter().any(|&k| !mask.is_interior(k)) {
                        continue;
                    }
                    let mass: f64 = cells.iter().map(|&k| nu.cells()[k]).sum();
                    let per = 2.0 * ((i1 - i0 + 1) + (j1 - j0 + 1)) as f64 * g.h();
                    best = best.max(mass / per);
                }
            }
        }
    }
    1.0 - best
}

#[test]
fn rectangle_margin_matches_exhaustive_search() {
    let mask = make_grid(&Shape::Rectangle { min: [0.0; 2], max: [1.0; 2] }, 8.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cells = vec![0.0; mask.grid().len()];
    for k in mask.interior_cells() {
        cells[k] = rng.random_range(0..64) as f64 / 256.0;
    }
    let nu = MassGrid::from_cells(*mask.grid(), cells);
    let fam = SetFamily { rectangles: Some(usize::MAX), ..Default::default() };
    let rep = eta_margin(&nu, &mask, &fam).unwrap();
    assert_eq!(rep.eta_star, brute_force_rectangles(&nu, &mask));
    assert_eq!(rep.rectangles_tested, 36 * 36);

    let one = sample_function(&Formula::Constant { value: 1.0 }, &mask).unwrap();
    let rep = eta_margin(&MassGrid::from_density(&one, &mask), &mask, &fam).unwrap();
    assert!((rep.eta_star - 0.75).abs() < 1e-12, "{rep:?}");

    let zero = MassGrid::zero(*mask.grid());
    assert_eq!(eta_margin(&zero, &mask, &fam).unwrap().eta_star, 1.0);
}

#[test]
fn ring_mass_is_bounded_by_balls_not_annuli() {
    let mask = disk(1.0, 64.0);
    let lambda = 0.5;
    let n = 2048;
    let ds = 2.0 * PI * 0.5 / n as f64;
    let pts: Vec<([f64; 2], f64)> = (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            ([0.5 * a.cos(), 0.5 * a.sin()], lambda * ds)
        })
        .collect();
    let mut nu = MassGrid::zero(*mask.grid());
    assert!(nu.add_points(&pts).is_empty());
    assert!(close(nu.total(), lambda * PI, 1e-9));

    let ring = sample_function(&Formula::RingDistance { center: [0.0; 2], radius: 0.5 }, &mask).unwrap();
    let fam = SetFamily { superlevel: Some((&ring, vec![-0.05, -0.1, -0.2])), ..Default::default() };
    let annuli = eta_margin(&nu, &mask, &fam).unwrap();
    // an annulus holds the whole ring and has boundary 2 pi
    assert!(close(1.0 - annuli.eta_star, lambda / 2.0, 0.05), "{}", annuli.eta_star);

    let fam = SetFamily { ball_radii: vec![0.52, 0.6], ball_stride: 2, ..fam };
    let all = eta_margin(&nu, &mask, &fam).unwrap();
    let worst = all.worst.as_ref().unwrap();
    assert_eq!(worst.kind, SetKind::Ball);
    assert_eq!(worst.params[..3], [0.0, 0.0, 0.52]);
    // the midpoint interface of a cell set is a chamfered staircase, longer
    // than the circle by this factor on average
    let chamfer = 4.0 / PI * ((PI / 4.0).sin() + (2f64.sqrt() - 1.0) * (1.0 - (PI / 4.0).cos()));
    let want = lambda * PI / (chamfer * 2.0 * PI * 0.52);
    assert!(close(worst.ratio, want, 0.02), "{} {want}", worst.ratio);
    assert!(close(1.0 - all.eta_star, worst.ratio, 1e-12));
    assert!(all.to_table().to_csv().starts_with("kind,"));
}

fn decay_level_oracle(eta: f64) -> f64 {
    let target = 1.0 - eta / 2.0;
    let f = |t: f64| t.powf(2.0 / 3.0) / (1.0 + t.powf(4.0 / 3.0)).sqrt();
    let (mut lo, mut hi) = (0.0, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn decay_level_closed_form() {
    assert!((decay_level(0.2).unwrap() - 2.967).abs() < 1e-3);
    assert!((decay_level(1.0).unwrap() - 3f64.powf(-0.75)).abs() < 1e-12);
    assert!(matches!(decay_level(0.0), Err(LevelSetError::Eta(_))));
}

proptest! {
    #[test]
    fn decay_level_inverts_the_profile(eta in 0.01f64..1.99) {
        let t = decay_level(eta).unwrap();
        prop_assert!((t / decay_level_oracle(eta) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn sublevel_volumes_of_a_cone_decay_to_zero() {
    let mask = disk(1.0, 64.0);
    let u = sample_with(&mask, |x| x[0].hypot(x[1]) - 1.0).unwrap();
    let rep = decay_bound_check(&u, &mask, 1.0, 1.0 / 16.0).unwrap();
    assert!(!rep.anchor_lowered);
    assert!((rep.vanishing_level - 1.0).abs() < 1e-12);
    assert!(rep.c > 0.0 && rep.c.is_finite());
    assert!(rep.passed);
    assert!(rep.predicted >= rep.vanishing_level);
    assert!(rep.to_table().to_csv().starts_with("t,phi,phi_root,envelope"));

    let pos = sample_function(&Formula::Constant { value: 1.0 }, &mask).unwrap();
    let rep = decay_bound_check(&pos, &mask, 1.0, 1.0 / 16.0).unwrap();
    assert!(rep.anchor_lowered && rep.passed);
    assert!(matches!(decay_bound_check(&u, &mask, -0.5, 0.1), Err(LevelSetError::Eta(_))));
}

#[test]
fn truncated_total_variation_of_a_cone() {
    let mask = disk(1.0, 64.0);
    let h = mask.grid().h();
    let u = sample_with(&mask, |x| -x[0].hypot(x[1])).unwrap();
    let bv = truncated_bv_norm(&u, 0.5, &Ball::centered(1.0 - 2.0 * h));
    assert!(close(bv, PI / 4.0, 0.03), "{bv}");
    // truncation far below the field leaves the full variation pi r^2
    let full = truncated_bv_norm(&u, 10.0, &Ball::centered(0.75));
    assert!(close(full, PI * 0.75 * 0.75, 0.03), "{full}");
}
