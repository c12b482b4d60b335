use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use wedgedisc_core::cone::ConeRegion;
use wedgedisc_core::geometry::{self, CRGraphManifold, Monomial, NormalFormViolation, QuadricForm};
use wedgedisc_core::sampling;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// A Hermitian form on `C^m` with `d` components, from seeded entries.
fn random_quadric(d: usize, m: usize, seed: u64) -> QuadricForm {
    let mut rng = sampling::rng(seed);
    let matrices = (0..d)
        .map(|_| {
            let mut h = vec![c(0.0, 0.0); m * m];
            for i in 0..m {
                h[i * m + i] = c(rng.random_range(-1.0..1.0), 0.0);
                for j in i + 1..m {
                    let z = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    h[i * m + j] = z;
                    h[j * m + i] = z.conj();
                }
            }
            h
        })
        .collect();
    QuadricForm::new(m, matrices).unwrap()
}

/// Cubic and quartic real-valued perturbations on `C^2` (d = 1).
fn perturbation(a: f64, b: f64, e: f64) -> Vec<Monomial> {
    let mut p = Monomial::real_part(&[a], vec![0], vec![3], vec![0]);
    p.extend(Monomial::real_part(&[b], vec![1], vec![2], vec![0]));
    p.push(Monomial::new(vec![c(e, 0.0)], vec![0], vec![2], vec![2]));
    p.push(Monomial::new(vec![c(e, 0.0)], vec![1], vec![1], vec![1]));
    p
}

/// `d^2 / d lambda d lambda_bar` of `lambda -> h(0, lambda W)` at 0 by the
/// five-point Laplacian on the complex line.
fn levi_by_differences(m: &CRGraphManifold, w: &[Complex64], s: f64) -> Vec<f64> {
    let x = vec![0.0; m.d()];
    let h0 = m.h(&x, &vec![c(0.0, 0.0); w.len()]);
    let mut acc: Vec<f64> = h0.iter().map(|v| -4.0 * v).collect();
    for dir in [c(s, 0.0), c(-s, 0.0), c(0.0, s), c(0.0, -s)] {
        let ws: Vec<Complex64> = w.iter().map(|v| v * dir).collect();
        for (a, v) in acc.iter_mut().zip(m.h(&x, &ws)) {
            *a += v;
        }
    }
    acc.iter().map(|v| v / (4.0 * s * s)).collect()
}

#[test]
fn lewy_levi_form_is_modulus_squared() {
    let m = CRGraphManifold::quadric_manifold(QuadricForm::lewy(), 1.0).unwrap();
    let v = geometry::levi_form(&m, &[c(0.3, -0.4)]).unwrap();
    assert!((v[0] - 0.25).abs() < 1e-15);
}

#[test]
fn pure_square_is_reported_as_violation() {
    let m = CRGraphManifold::new(
        2,
        1,
        QuadricForm::lewy(),
        Monomial::real_part(&[1.0], vec![0], vec![2], vec![0]),
        1.0,
    )
    .unwrap();
    let v = geometry::check_normal_form(&m);
    assert!(!v.is_empty());
    assert!(v.iter().all(|x| matches!(x, NormalFormViolation::PureDerivative { order: 2, .. })));
    assert!(geometry::describe_violations(&v).contains("pure derivative"));
}

#[test]
fn perturbed_lewy_is_in_normal_form() {
    let m = CRGraphManifold::new(2, 1, QuadricForm::lewy(), perturbation(0.05, 0.1, 0.2), 1.0).unwrap();
    assert!(geometry::check_normal_form(&m).is_empty());
}

#[test]
fn levi_image_is_real() {
    let q = random_quadric(3, 4, 11);
    let mut rng = sampling::rng(12);
    for _ in 0..10_000 {
        let a = sampling::complex_gaussian(&mut rng, 4);
        for v in q.eval(&a, &a) {
            assert!(v.im.abs() < 1e-12);
        }
    }
}

#[test]
fn product_quadric_witness_cone_lies_in_the_hull() {
    let q = QuadricForm::diagonal(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let report = geometry::quadric_hull_report(&q, 4096, 5);
    assert!(report.hull_has_interior);
    let cone: ConeRegion = report.witness_cone.expect("witness cone");
    // Hull of {(|w1|^2, |w2|^2) : |w| = 1} with the origin is the triangle
    // x, y >= 0, x + y <= 1.
    let mut rng = sampling::rng(6);
    for _ in 0..50 {
        let p = cone.sample_point(&mut rng, 0.0, 1.0);
        assert!(p[0] >= -1e-8 && p[1] >= -1e-8 && p[0] + p[1] <= 1.0 + 1e-8, "{p:?}");
    }
}

#[test]
fn degenerate_line_quadric_has_no_hull_interior() {
    // q = (|w|^2, |w|^2): image on a line in R^2.
    let q = QuadricForm::diagonal(&[vec![1.0], vec![1.0]]).unwrap();
    let report = geometry::quadric_hull_report(&q, 4096, 5);
    assert!(!report.hull_has_interior);
    assert!(report.witness_cone.is_none());
}

#[test]
fn normalized_chart_round_trip() {
    let m = CRGraphManifold::new(2, 1, QuadricForm::lewy(), perturbation(0.05, 0.1, 0.2), 1.0).unwrap();
    let (chart, local) = geometry::normalize_at_point(&m, &[0.1], &[c(0.05, -0.1)], geometry::NORMALIZE_DEGREE).unwrap();
    assert!(geometry::check_normal_form(&local).is_empty());
    // The base point goes to the origin and nearby points of M go to points
    // of the recentred manifold up to the truncation order.
    let (z0, w0) = m.lift(&[0.1], &[c(0.05, -0.1)]);
    let (zc, wc) = chart.apply(&z0, &w0);
    assert!(zc.iter().chain(&wc).all(|v| v.norm() < 1e-12));
    let (z1, w1) = m.lift(&[0.11], &[c(0.06, -0.095)]);
    let (zl, wl) = chart.apply(&z1, &w1);
    let x: Vec<f64> = zl.iter().map(|v| v.re).collect();
    let y = local.h(&x, &wl);
    assert!((zl[0].im - y[0]).abs() < 1e-6, "{} vs {}", zl[0].im, y[0]);
    let (zb, wb) = chart.apply_inverse(&zl, &wl).unwrap();
    assert!((zb[0] - z1[0]).norm() < 1e-12 && (wb[0] - w1[0]).norm() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn levi_form_matches_finite_differences(
        a in -0.5..0.5f64, b in -0.5..0.5f64, e in -0.5..0.5f64,
        wr in -1.0..1.0f64, wi in -1.0..1.0f64,
    ) {
        let m = CRGraphManifold::new(2, 1, QuadricForm::lewy(), perturbation(a, b, e), 1.0).unwrap();
        let w = [c(wr, wi)];
        let exact = geometry::levi_form(&m, &w).unwrap();
        let fd = levi_by_differences(&m, &w, 1e-4);
        prop_assert!((exact[0] - fd[0]).abs() < 1e-6 * (1.0 + exact[0].abs()), "{} vs {}", exact[0], fd[0]);
    }

    #[test]
    fn general_quadric_levi_form_matches_finite_differences(seed in 0u64..1000) {
        let q = random_quadric(2, 3, seed);
        let m = CRGraphManifold::quadric_manifold(q, 1.0).unwrap();
        let mut rng = sampling::rng(seed + 1);
        let w = sampling::complex_gaussian(&mut rng, 3);
        let exact = geometry::levi_form(&m, &w).unwrap();
        let fd = levi_by_differences(&m, &w, 1e-3);
        for (x, y) in exact.iter().zip(&fd) {
            prop_assert!((x - y).abs() < 1e-8 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn rescale_round_trip(lambda in 1e-3..1e3f64, a in -1.0..1.0f64, b in -1.0..1.0f64, e in -1.0..1.0f64) {
        let m = CRGraphManifold::new(2, 1, QuadricForm::lewy(), perturbation(a, b, e), 1.0).unwrap();
        let back = geometry::rescale(&geometry::rescale(&m, lambda).unwrap(), 1.0 / lambda).unwrap();
        for (p, q) in m.perturbation().iter().zip(back.perturbation()) {
            for (x, y) in p.coefficient.iter().zip(&q.coefficient) {
                prop_assert!((x - y).norm() <= 1e-15 * x.norm().max(1.0) * 4.0);
            }
        }
        prop_assert_eq!(m.quadric(), back.quadric());
    }

    #[test]
    fn rescaled_graph_is_the_dilated_graph(lambda in 0.05..1.0f64, xr in -0.3..0.3f64, wr in -0.3..0.3f64, wi in -0.3..0.3f64) {
        let m = CRGraphManifold::new(2, 1, QuadricForm::lewy(), perturbation(0.3, -0.2, 0.4), 1.0).unwrap();
        let r = geometry::rescale(&m, lambda).unwrap();
        let w = [c(wr, wi)];
        let lhs = r.h(&[xr], &w)[0];
        let rhs = m.h(&[lambda * xr], &[w[0] * lambda])[0] / (lambda * lambda);
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn recentring_preserves_normal_form(xp in -0.2..0.2f64, wr in -0.2..0.2f64, wi in -0.2..0.2f64) {
        let m = CRGraphManifold::new(2, 1, QuadricForm::lewy(), perturbation(0.05, 0.1, 0.2), 1.0).unwrap();
        let (_, local) = geometry::normalize_at_point(&m, &[xp], &[c(wr, wi)], geometry::NORMALIZE_DEGREE).unwrap();
        prop_assert!(geometry::check_normal_form(&local).is_empty());
    }
}
