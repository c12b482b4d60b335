use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use wedgedisc_core::bishop::{self, SolverParams};
use wedgedisc_core::cone::ConeRegion;
use wedgedisc_core::geometry::{CRGraphManifold, Monomial, QuadricForm};
use wedgedisc_core::harmonics::CircleGrid;
use wedgedisc_core::quadric_discs::DiscFamilyParams;
use wedgedisc_core::sampling;
use wedgedisc_core::wedge::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn solver() -> SolverParams {
    SolverParams::with_grid(CircleGrid::new(64).unwrap())
}

fn lewy() -> CRGraphManifold {
    CRGraphManifold::quadric_manifold(QuadricForm::lewy(), 1.0).unwrap()
}

fn perturbed_lewy() -> CRGraphManifold {
    CRGraphManifold::new(
        2,
        1,
        QuadricForm::lewy(),
        Monomial::real_part(&[0.05], vec![0], vec![3], vec![0]),
        1.0,
    )
    .unwrap()
}

fn origin() -> GraphPoint {
    GraphPoint::new(vec![0.0], vec![c(0.0, 0.0)])
}

fn single(t: f64) -> DiscFamilyParams {
    DiscFamilyParams::new(vec![0.0], vec![c(0.0, 0.0)], vec![vec![c(1.0, 0.0)]], vec![t]).unwrap()
}

fn three_directions() -> DiscFamilyParams {
    DiscFamilyParams::new(
        vec![0.0],
        vec![c(0.0, 0.0)],
        vec![vec![c(1.0, 0.0)], vec![c(0.0, 1.0)], vec![c(1.0, 0.0)]],
        vec![0.1, 0.0, 0.0],
    )
    .unwrap()
}

fn omega3() -> ConeRegion {
    ConeRegion::new(vec![1.0, 0.0, 0.0], 0.6, 0.3).unwrap()
}

fn lewy_sweep(m: &CRGraphManifold) -> WedgeCertificate {
    let bases: Vec<GraphPoint> = (0..5)
        .map(|i| GraphPoint::new(vec![-0.08 + 0.04 * i as f64], vec![c(0.0, 0.0)]))
        .collect();
    let ts: Vec<Vec<f64>> = (1..=32).map(|i| vec![0.3 * i as f64 / 32.0]).collect();
    sweep_centers(m, &single(0.1), &bases, &ts, &solver(), &SweepOptions::default()).unwrap()
}

fn check_certificate(m: &CRGraphManifold, cert: &WedgeCertificate) {
    assert!(!cert.evidence.is_empty());
    for e in &cert.evidence {
        // Independent recomposition z = (x + i h(x, w)) + i eta.
        let h = m.h(&e.edge_point.x, &e.edge_point.w);
        for l in 0..m.d() {
            let z = c(e.edge_point.x[l], h[l] + e.eta[l]);
            assert!((z - e.center_z[l]).norm() < 1e-8);
        }
        assert_eq!(e.edge_point.w, e.center_w);
        assert!(e.edge_point.distance(&cert.edge_center) <= cert.edge_radius);
        assert!(cert.cone.contains(&e.eta));
    }
}

#[test]
fn lewy_sweep_certifies_upward_cone() {
    let m = lewy();
    let cert = lewy_sweep(&m);
    assert_eq!(cert.cone.axis(), &[1.0]);
    assert!((cert.cone.scale_max() - 0.09).abs() < 0.005, "{:?}", cert.cone);
    assert!(cert.excluded.is_empty());
    check_certificate(&m, &cert);
    // Closed-form centres (x + i t^2, 0).
    for e in &cert.evidence {
        let t = e.t[0];
        assert!((e.center_z[0] - c(e.base.x[0], t * t)).norm() < 1e-12);
    }
}

#[test]
fn perturbed_sweep_recentres_through_bishop() {
    let m = perturbed_lewy();
    let bases = vec![
        GraphPoint::new(vec![0.0], vec![c(0.0, 0.0)]),
        GraphPoint::new(vec![0.05], vec![c(0.03, -0.02)]),
    ];
    let ts: Vec<Vec<f64>> = (1..=24).map(|i| vec![0.2 * i as f64 / 24.0]).collect();
    let cert = sweep_centers(&m, &single(0.1), &bases, &ts, &solver(), &SweepOptions::default()).unwrap();
    assert!(cert.cone.scale_max() > 0.02, "{:?}", cert.cone);
    assert!(cert.cone.axis()[0] > 0.0);
    check_certificate(&m, &cert);
}

#[test]
fn product_quadric_cone_is_around_the_diagonal() {
    let q = QuadricForm::diagonal(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let m = CRGraphManifold::quadric_manifold(q, 1.0).unwrap();
    let family = DiscFamilyParams::new(
        vec![0.0; 2],
        vec![c(0.0, 0.0); 2],
        vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]],
        vec![0.1, 0.1],
    )
    .unwrap();
    let mut ts = Vec::new();
    for i in 1..=24 {
        for j in 1..=24 {
            ts.push(vec![0.3 * i as f64 / 24.0, 0.3 * j as f64 / 24.0]);
        }
    }
    let bases = vec![GraphPoint::new(vec![0.0; 2], vec![c(0.0, 0.0); 2])];
    let cert = sweep_centers(&m, &family, &bases, &ts, &solver(), &SweepOptions::default()).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    assert!((cert.cone.axis()[0] - s).abs() < 1e-9 && (cert.cone.axis()[1] - s).abs() < 1e-9);
    assert!(cert.cone.half_angle() > 0.1 && cert.cone.half_angle() < std::f64::consts::FRAC_PI_4);
    check_certificate(&m, &cert);
}

#[test]
fn zero_quadric_has_no_wedge() {
    let m = CRGraphManifold::quadric_manifold(QuadricForm::zero(1, 1), 1.0).unwrap();
    let ts: Vec<Vec<f64>> = (1..=8).map(|i| vec![0.03 * i as f64]).collect();
    let err = sweep_centers(&m, &single(0.1), &[origin()], &ts, &solver(), &SweepOptions::default()).unwrap_err();
    assert!(format!("{err}").contains("normal displacement"));
}

#[test]
fn avoidance_is_monotone_in_tube_radius() {
    let m = lewy();
    let z = [c(0.0, 0.01)];
    let w = [c(0.0, 0.0)];
    let options = AvoidanceOptions {
        solver: solver(),
        clearance_floor: 0.0,
        seed: 17,
        ..AvoidanceOptions::default()
    };
    let eps = 0.05;
    let k = ThinSet::point(2, 1, origin(), eps).unwrap();
    let AvoidanceOutcome::Found { disc, attempts } =
        find_avoiding_disc(&m, &k, &z, &w, &three_directions(), &omega3(), None, &options).unwrap()
    else {
        panic!("no disc found")
    };
    for eps2 in [0.04, 0.02, 0.0] {
        let k2 = k.with_tube_radius(eps2);
        let c2 = k2.clearance_of(&boundary_points(&disc.disc));
        assert!((c2 - (disc.clearance + eps - eps2)).abs() < 1e-15);
        let out = find_avoiding_disc(&m, &k2, &z, &w, &three_directions(), &omega3(), None, &options).unwrap();
        let AvoidanceOutcome::Found { attempts: a2, .. } = out else { panic!("{out:?}") };
        assert!(a2 <= attempts);
    }
}

#[test]
fn avoiding_disc_on_perturbed_manifold() {
    let m = perturbed_lewy();
    let k = ThinSet::point(2, 1, origin(), 0.02).unwrap();
    let z = [c(0.01, 0.012)];
    let w = [c(0.0, 0.0)];
    let options = AvoidanceOptions {
        solver: solver(),
        clearance_floor: 0.03,
        seed: 4,
        budget: 40,
        ..AvoidanceOptions::default()
    };
    let out = find_avoiding_disc(&m, &k, &z, &w, &three_directions(), &omega3(), None, &options).unwrap();
    let AvoidanceOutcome::Found { disc, .. } = out else { panic!("{out:?}") };
    let (g0, w0) = bishop::disc_center(&disc.disc);
    assert!((g0[0] - z[0]).norm() < 1e-9, "{} vs {}", g0[0], z[0]);
    assert!((w0[0] - w[0]).norm() < 1e-12);
    assert!(disc.disc.diagnostics.boundary_residual < bishop::BOUNDARY_TOLERANCE);
    assert!(disc.clearance >= 0.03);
}

#[test]
fn target_outside_certificate_is_rejected() {
    let m = lewy();
    let cert = lewy_sweep(&m);
    let k = ThinSet::empty();
    let options = AvoidanceOptions {
        solver: solver(),
        ..AvoidanceOptions::default()
    };
    // Below the manifold: negative normal component.
    let err = find_avoiding_disc(&m, &k, &[c(0.0, -0.01)], &[c(0.0, 0.0)], &single(0.1), &ConeRegion::new(vec![1.0], 0.5, 0.3).unwrap(), Some(&cert), &options)
        .unwrap_err();
    assert!(matches!(err, wedgedisc_core::Error::Precondition(_)));
}

#[test]
fn isotopy_boundaries_move_continuously() {
    let m = lewy();
    let start = DiscFamilyParams::new(
        vec![0.05],
        vec![c(0.0, 0.0)],
        vec![vec![c(1.0, 0.0)], vec![c(0.0, 1.0)]],
        vec![0.1, 0.02],
    )
    .unwrap();
    let k = ThinSet::point(2, 1, origin(), 0.02).unwrap();
    let mut scaled = Vec::new();
    for steps in [10, 20, 40] {
        let path = isotopy_path(&m, &k, &start, &[0.05], steps, &solver()).unwrap();
        assert_eq!(path.len(), steps + 1);
        assert!(path.iter().all(|s| s.clearance > 0.0));
        let last = path.last().unwrap();
        assert_eq!(last.s, 0.0);
        // The s = 0 disc is constant at the base point.
        for p in boundary_points(&last.disc) {
            assert!(p.distance(&GraphPoint::new(vec![0.05], vec![c(0.0, 0.0)])) < 1e-15);
        }
        let mut worst = 0.0f64;
        for pair in path.windows(2) {
            let a = boundary_points(&pair[0].disc);
            let b = boundary_points(&pair[1].disc);
            for (p, q) in a.iter().zip(&b) {
                worst = worst.max(p.distance(q));
            }
        }
        scaled.push(worst * steps as f64);
    }
    let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    assert!(hi / lo < 1.5, "{scaled:?}");
}

#[test]
fn isotopy_end_point_is_shifted_off_the_thin_set() {
    let m = lewy();
    let k = ThinSet::point(2, 1, origin(), 0.02).unwrap();
    let start = single(0.1);
    assert!(isotopy_path(&m, &k, &start, &[0.0], 20, &solver()).is_err());
    let end = choose_isotopy_end(&m, &k, &start, 20, &solver(), 1).unwrap();
    let path = isotopy_path(&m, &k, &start, &end, 20, &solver()).unwrap();
    assert!(path.iter().all(|s| s.clearance > 0.0));
    assert!(isotopy_path(&m, &ThinSet::empty(), &start, &[0.0], 20, &solver()).is_ok());
}

#[test]
fn hit_fraction_shrinks_with_tube_radius() {
    let m = lewy();
    let k = ThinSet::point(2, 1, origin(), 0.0).unwrap();
    let options = AvoidanceOptions {
        solver: solver(),
        seed: 8,
        ..AvoidanceOptions::default()
    };
    let radii = [0.1, 0.03, 0.01, 0.003];
    let (fractions, drawn) =
        hit_fractions(&m, &k, &[c(0.0, 0.01)], &[c(0.0, 0.0)], &three_directions(), &omega3(), 2000, &radii, &options)
            .unwrap();
    assert_eq!(drawn, 2000);
    for pair in fractions.windows(2) {
        assert!(pair[1] <= pair[0], "{fractions:?}");
    }
    assert!(fractions[0] > fractions[3]);
}

#[test]
fn consistency_for_constant_function_is_exact() {
    let m = lewy();
    let k = ThinSet::point(2, 1, origin(), 0.02).unwrap();
    let options = AvoidanceOptions {
        solver: solver(),
        seed: 2,
        ..AvoidanceOptions::default()
    };
    let report = consistency_check(
        &ConstantFunction(c(2.0, -1.0)),
        &m,
        &k,
        &[c(0.0, 0.01)],
        &[c(0.0, 0.0)],
        &three_directions(),
        &omega3(),
        6,
        1e-12,
        &options,
    )
    .unwrap();
    assert_eq!(report.values.len(), 6);
    assert!(report.max_deviation < 1e-15);
}

#[test]
fn consistency_needs_two_clear_discs() {
    let m = lewy();
    let k = ThinSet::point(2, 1, origin(), 10.0).unwrap();
    let options = AvoidanceOptions {
        solver: solver(),
        budget: 20,
        ..AvoidanceOptions::default()
    };
    let f = ReciprocalAffine::inverse_coordinate(1, 1, 0);
    let err = consistency_check(&f, &m, &k, &[c(0.0, 0.01)], &[c(0.0, 0.0)], &three_directions(), &omega3(), 5, 1e-6, &options)
        .unwrap_err();
    assert!(matches!(err, wedgedisc_core::Error::Precondition(_)));
}

#[test]
fn oracle_failure_reports_angle() {
    let m = lewy();
    let disc = family_disc(&m, &single(0.1), &solver()).unwrap();
    // W = 0.1 zeta, so 1 / (w - 0.1) has a pole at the boundary node zeta = 1.
    let f = ReciprocalAffine {
        constant: c(-0.1, 0.0),
        z_coefficients: vec![c(0.0, 0.0)],
        w_coefficients: vec![c(1.0, 0.0)],
    };
    let err = cauchy_extend(&f, &disc).unwrap_err();
    assert!(matches!(err, wedgedisc_core::Error::OracleFailure { phi, .. } if phi == 0.0));
}

/// Random polynomial in `(z, w)` of total degree at most 6.
fn random_polynomial(seed: u64) -> PolynomialFunction {
    let mut rng = sampling::rng(seed);
    let mut terms = Vec::new();
    for a in 0..=6u32 {
        for b in 0..=(6 - a) {
            if rng.random_bool(0.5) {
                terms.push((c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)), vec![a], vec![b]));
            }
        }
    }
    PolynomialFunction { terms }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mean_value_exactness(seed in any::<u64>(), t1 in -0.3..0.3f64, t2 in -0.3..0.3f64, x in -0.3..0.3f64, a0r in -0.2..0.2f64) {
        let m = CRGraphManifold::quadric_manifold(QuadricForm::lewy(), 2.0).unwrap();
        let p = DiscFamilyParams::new(vec![x], vec![c(a0r, 0.1)], vec![vec![c(1.0, 0.0)], vec![c(0.3, 0.7)]], vec![t1, t2]).unwrap();
        let disc = family_disc(&m, &p, &solver()).unwrap();
        let f = random_polynomial(seed);
        let (g0, w0) = bishop::disc_center(&disc);
        let expected = f.eval_at(&g0, &w0);
        let got = cauchy_extend(&f, &disc).unwrap();
        prop_assert!((got - expected).norm() < 1e-9 * (1.0 + expected.norm()), "{} vs {}", got, expected);
    }

    #[test]
    fn mean_value_exactness_on_perturbed_manifold(seed in any::<u64>(), t1 in -0.1..0.1f64, x in -0.1..0.1f64) {
        let m = perturbed_lewy();
        let p = DiscFamilyParams::new(vec![x], vec![c(0.0, 0.0)], vec![vec![c(1.0, 0.0)], vec![c(0.0, 1.0)]], vec![t1, 0.05]).unwrap();
        let disc = family_disc(&m, &p, &solver()).unwrap();
        let f = random_polynomial(seed);
        let (g0, w0) = bishop::disc_center(&disc);
        let expected = f.eval_at(&g0, &w0);
        let got = cauchy_extend(&f, &disc).unwrap();
        prop_assert!((got - expected).norm() < 1e-9 * (1.0 + expected.norm()));
    }

    #[test]
    fn decomposition_recovers_manifold_points(xr in -0.3..0.3f64, wr in -0.3..0.3f64, wi in -0.3..0.3f64, eta in 0.0..0.1f64) {
        let m = perturbed_lewy();
        let w = [c(wr, wi)];
        let h = m.h(&[xr], &w)[0];
        let (p, e, residual) = decompose(&m, &[c(xr, h + eta)], &w);
        prop_assert_eq!(p.x[0], xr);
        prop_assert!((e[0] - eta).abs() < 1e-15);
        prop_assert!(residual < 1e-15);
    }
}

#[test]
fn thin_set_rules() {
    let patch = Patch::sample(&[(-0.5, 0.5)], 21, |u| GraphPoint::new(vec![0.0], vec![c(u[0], 0.0)])).unwrap();
    assert!(ThinSet::new(2, 1, vec![ThinComponent::Patch { patch: patch.clone(), tube_radius: 0.0 }], false).is_err());
    let relaxed = ThinSet::new(2, 1, vec![ThinComponent::Patch { patch, tube_radius: 0.0 }], true).unwrap();
    assert!(relaxed.is_relaxed());
    // Sampled distance never overestimates the distance to the segment.
    let p = GraphPoint::new(vec![0.1], vec![c(0.0237, 0.0)]);
    assert!(relaxed.core_distance(&p) <= 0.1 + 1e-15);
    // n = 4, d = 1: curves are thin.
    let curve = Patch::sample(&[(0.0, 1.0)], 11, |u| GraphPoint::new(vec![u[0]], vec![c(0.0, 0.0); 3])).unwrap();
    assert!(ThinSet::new(4, 1, vec![ThinComponent::Patch { patch: curve, tube_radius: 0.01 }], false).is_ok());
    assert!(ThinSet::point(2, 1, GraphPoint::new(vec![0.0, 1.0], vec![c(0.0, 0.0)]), 0.0).is_err());
}
