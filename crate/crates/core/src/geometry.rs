//! Generic CR submanifolds of `C^n` in graph normal form
//! `M = {(x + iy, w) : y = h(x, w)}` with `x, y in R^d`, `w in C^(n-d)`.
//!
//! The defining function is `h = q(w, w_bar) + P(x, w, w_bar)` where `q` is a
//! vector-valued Hermitian form and `P` a finite real polynomial.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::cone::{self, ConeRegion};
use crate::error::{Error, Result};
use crate::hull;
use crate::poly::Poly;
use crate::sampling;

const HERMITIAN_TOLERANCE: f64 = 1e-12;

/// Vector-valued Hermitian form. Component `l` of `q(a, b_bar)` is
/// `sum_{j,k} H_l[j][k] a_j conj(b_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadricForm {
    cr_dim: usize,
    // row-major cr_dim x cr_dim, one per normal direction
    matrices: Vec<Vec<Complex64>>,
}

impl QuadricForm {
    pub fn new(cr_dim: usize, matrices: Vec<Vec<Complex64>>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::InvalidManifold("quadric needs at least one matrix".into()));
        }
        for (l, h) in matrices.iter().enumerate() {
            if h.len() != cr_dim * cr_dim {
                return Err(Error::InvalidManifold(format!(
                    "quadric matrix {l} has {} entries, expected {}",
                    h.len(),
                    cr_dim * cr_dim
                )));
            }
            for j in 0..cr_dim {
                for k in 0..cr_dim {
                    if (h[j * cr_dim + k] - h[k * cr_dim + j].conj()).norm() > HERMITIAN_TOLERANCE {
                        return Err(Error::InvalidManifold(format!(
                            "quadric matrix {l} is not Hermitian at ({j}, {k})"
                        )));
                    }
                }
            }
        }
        Ok(Self { cr_dim, matrices })
    }

    pub fn zero(codim: usize, cr_dim: usize) -> Self {
        Self {
            cr_dim,
            matrices: vec![vec![Complex64::new(0.0, 0.0); cr_dim * cr_dim]; codim],
        }
    }

    /// Diagonal real forms, one diagonal per normal direction.
    pub fn diagonal(diagonals: &[Vec<f64>]) -> Result<Self> {
        let cr_dim = diagonals.first().map(|d| d.len()).unwrap_or(0);
        let matrices = diagonals
            .iter()
            .map(|diag| {
                let mut h = vec![Complex64::new(0.0, 0.0); cr_dim * cr_dim];
                for (j, v) in diag.iter().enumerate() {
                    h[j * cr_dim + j] = Complex64::new(*v, 0.0);
                }
                h
            })
            .collect();
        Self::new(cr_dim, matrices)
    }

    /// `q(w, w_bar) = |w|^2` on `C^1`, the Lewy quadric.
    pub fn lewy() -> Self {
        Self::diagonal(&[vec![1.0]]).unwrap()
    }

    pub fn codim(&self) -> usize {
        self.matrices.len()
    }

    pub fn cr_dim(&self) -> usize {
        self.cr_dim
    }

    pub fn matrix(&self, l: usize) -> &[Complex64] {
        &self.matrices[l]
    }

    pub fn matrices(&self) -> &[Vec<Complex64>] {
        &self.matrices
    }

    /// `q(a, b_bar)`.
    pub fn eval(&self, a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
        let m = self.cr_dim;
        self.matrices
            .iter()
            .map(|h| {
                let mut s = Complex64::new(0.0, 0.0);
                for j in 0..m {
                    for k in 0..m {
                        s += h[j * m + k] * a[j] * b[k].conj();
                    }
                }
                s
            })
            .collect()
    }

    /// `q(a, a_bar)`, real by Hermitian symmetry.
    pub fn eval_real(&self, a: &[Complex64]) -> Vec<f64> {
        self.eval(a, a).into_iter().map(|z| z.re).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.matrices.iter().flatten().all(|z| z.norm() == 0.0)
    }
}

/// One term `c * x^alpha w^beta w_bar^gamma` of the perturbation, with a
/// coefficient vector in `C^d`. Real-valuedness of the whole perturbation is
/// achieved by conjugate pairs (`beta` and `gamma` swapped, coefficient
/// conjugated).
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coefficient: Vec<Complex64>,
    pub x_exp: Vec<u32>,
    pub w_exp: Vec<u32>,
    pub wbar_exp: Vec<u32>,
}

impl Monomial {
    pub fn new(coefficient: Vec<Complex64>, x_exp: Vec<u32>, w_exp: Vec<u32>, wbar_exp: Vec<u32>) -> Self {
        Self {
            coefficient,
            x_exp,
            w_exp,
            wbar_exp,
        }
    }

    /// Terms representing `coeff * Re(x^alpha w^beta w_bar^gamma)`.
    pub fn real_part(coeff: &[f64], x_exp: Vec<u32>, w_exp: Vec<u32>, wbar_exp: Vec<u32>) -> Vec<Monomial> {
        if w_exp == wbar_exp {
            let c = coeff.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            return vec![Monomial::new(c, x_exp, w_exp, wbar_exp)];
        }
        let half: Vec<Complex64> = coeff.iter().map(|&v| Complex64::new(v / 2.0, 0.0)).collect();
        vec![
            Monomial::new(half.clone(), x_exp.clone(), w_exp.clone(), wbar_exp.clone()),
            Monomial::new(half, x_exp, wbar_exp, w_exp),
        ]
    }

    /// Terms representing `coeff * Im(x^alpha w^beta w_bar^gamma)`; empty when
    /// the monomial is itself real.
    pub fn imag_part(coeff: &[f64], x_exp: Vec<u32>, w_exp: Vec<u32>, wbar_exp: Vec<u32>) -> Vec<Monomial> {
        if w_exp == wbar_exp {
            return Vec::new();
        }
        let a: Vec<Complex64> = coeff.iter().map(|&v| Complex64::new(0.0, -v / 2.0)).collect();
        let b: Vec<Complex64> = coeff.iter().map(|&v| Complex64::new(0.0, v / 2.0)).collect();
        vec![
            Monomial::new(a, x_exp.clone(), w_exp.clone(), wbar_exp.clone()),
            Monomial::new(b, x_exp, wbar_exp, w_exp),
        ]
    }

    pub fn degree(&self) -> u32 {
        self.x_exp.iter().chain(&self.w_exp).chain(&self.wbar_exp).sum()
    }

    fn holomorphic_degree(&self) -> u32 {
        self.w_exp.iter().sum()
    }

    fn antiholomorphic_degree(&self) -> u32 {
        self.wbar_exp.iter().sum()
    }

    fn value(&self, x: &[f64], w: &[Complex64]) -> Complex64 {
        let mut v = Complex64::new(1.0, 0.0);
        for (xi, &k) in x.iter().zip(&self.x_exp) {
            v *= libm::pow(*xi, k as f64);
        }
        for (wi, &k) in w.iter().zip(&self.w_exp) {
            v *= wi.powu(k);
        }
        for (wi, &k) in w.iter().zip(&self.wbar_exp) {
            v *= wi.conj().powu(k);
        }
        v
    }

    fn key(&self) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
        (self.x_exp.clone(), self.w_exp.clone(), self.wbar_exp.clone())
    }

    /// Multiplies the coefficient by `lambda^(degree - 2)`.
    fn rescaled(&self, lambda: f64) -> Self {
        let f = libm::pow(lambda, self.degree() as f64 - 2.0);
        Self {
            coefficient: self.coefficient.iter().map(|c| c * f).collect(),
            ..self.clone()
        }
    }
}

/// A failed normal-form vanishing condition.
#[derive(Debug, Clone, PartialEq)]
pub enum NormalFormViolation {
    /// `h(0) != 0`.
    NonzeroValue { component: usize },
    /// A pure derivative `d^(|a|+|b|) h(0) / dx^a dw^b` (or with `w_bar`) of
    /// order at most two is nonzero.
    PureDerivative {
        monomial: usize,
        order: u32,
        antiholomorphic: bool,
    },
    /// A mixed `w w_bar` term of order two in the perturbation; it belongs in
    /// the quadric.
    MixedSecondOrder { monomial: usize },
}

impl fmt::Display for NormalFormViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonzeroValue { component } => {
                write!(f, "normal-form condition h(0) = 0 fails in component {component}")
            }
            Self::PureDerivative {
                monomial,
                order,
                antiholomorphic,
            } => {
                let w = if *antiholomorphic { "w_bar" } else { "w" };
                write!(
                    f,
                    "normal-form condition violated by monomial {monomial}: pure derivative \
                     d^{order} h(0) / dx^alpha d{w}^beta with |alpha| + |beta| = {order} <= 2 must vanish"
                )
            }
            Self::MixedSecondOrder { monomial } => write!(
                f,
                "monomial {monomial} is a mixed second-order w w_bar term; it must be part of the quadric"
            ),
        }
    }
}

/// Generic CR submanifold `{y = q(w, w_bar) + P(x, w, w_bar)}` of `C^n` with
/// real codimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CRGraphManifold {
    n: usize,
    d: usize,
    quadric: QuadricForm,
    perturbation: Vec<Monomial>,
    domain_radius: f64,
}

impl CRGraphManifold {
    pub fn new(n: usize, d: usize, quadric: QuadricForm, perturbation: Vec<Monomial>, domain_radius: f64) -> Result<Self> {
        if d == 0 || d >= n {
            return Err(Error::InvalidManifold(format!("codimension {d} must satisfy 1 <= d <= n - 1 (n = {n})")));
        }
        let m = n - d;
        if quadric.codim() != d || quadric.cr_dim() != m {
            return Err(Error::InvalidManifold(format!(
                "quadric has {} components on C^{}, expected {d} on C^{m}",
                quadric.codim(),
                quadric.cr_dim()
            )));
        }
        if !(domain_radius > 0.0) || !domain_radius.is_finite() {
            return Err(Error::InvalidManifold("domain radius must be positive".into()));
        }
        for (i, mono) in perturbation.iter().enumerate() {
            if mono.coefficient.len() != d || mono.x_exp.len() != d || mono.w_exp.len() != m || mono.wbar_exp.len() != m {
                return Err(Error::InvalidManifold(format!("monomial {i} has inconsistent dimensions")));
            }
        }
        check_real_valued(&perturbation)?;
        Ok(Self {
            n,
            d,
            quadric,
            perturbation,
            domain_radius,
        })
    }

    /// `y = q(w, w_bar)`.
    pub fn quadric_manifold(quadric: QuadricForm, domain_radius: f64) -> Result<Self> {
        let d = quadric.codim();
        let n = d + quadric.cr_dim();
        Self::new(n, d, quadric, Vec::new(), domain_radius)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Complex dimension `n - d` of the `w` variables.
    pub fn cr_dim(&self) -> usize {
        self.n - self.d
    }

    pub fn real_dimension(&self) -> usize {
        2 * self.n - self.d
    }

    pub fn quadric(&self) -> &QuadricForm {
        &self.quadric
    }

    pub fn perturbation(&self) -> &[Monomial] {
        &self.perturbation
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    pub fn is_quadric(&self) -> bool {
        self.perturbation.iter().all(|m| m.coefficient.iter().all(|c| c.norm() == 0.0))
    }

    pub fn with_domain_radius(&self, domain_radius: f64) -> Result<Self> {
        Self::new(self.n, self.d, self.quadric.clone(), self.perturbation.clone(), domain_radius)
    }

    /// Euclidean norm of `(x, w)` in `R^(2n-d)`.
    pub fn point_norm(x: &[f64], w: &[Complex64]) -> f64 {
        libm::sqrt(x.iter().map(|v| v * v).sum::<f64>() + w.iter().map(|z| z.norm_sqr()).sum::<f64>())
    }

    pub fn in_domain(&self, x: &[f64], w: &[Complex64]) -> bool {
        Self::point_norm(x, w) <= self.domain_radius
    }

    /// `h(x, w)` without the domain check.
    pub fn h(&self, x: &[f64], w: &[Complex64]) -> Vec<f64> {
        let mut out = self.quadric.eval_real(w);
        for mono in &self.perturbation {
            let v = mono.value(x, w);
            for (o, c) in out.iter_mut().zip(&mono.coefficient) {
                *o += (c * v).re;
            }
        }
        out
    }

    /// Writes `h(x, w)` into `out` (length `d`) without allocating for the
    /// quadric part.
    pub(crate) fn h_into(&self, x: &[f64], w: &[Complex64], out: &mut [f64]) {
        let m = self.cr_dim();
        for (l, h) in self.quadric.matrices.iter().enumerate() {
            let mut s = 0.0;
            for j in 0..m {
                for k in 0..m {
                    s += (h[j * m + k] * w[j] * w[k].conj()).re;
                }
            }
            out[l] = s;
        }
        for mono in &self.perturbation {
            let v = mono.value(x, w);
            for (o, c) in out.iter_mut().zip(&mono.coefficient) {
                *o += (c * v).re;
            }
        }
    }

    /// `h(x, w)` for `(x, w)` within the domain radius.
    pub fn evaluate_h(&self, x: &[f64], w: &[Complex64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::SizeMismatch {
                expected: self.d,
                found: x.len(),
            });
        }
        if w.len() != self.cr_dim() {
            return Err(Error::SizeMismatch {
                expected: self.cr_dim(),
                found: w.len(),
            });
        }
        let norm = Self::point_norm(x, w);
        if norm > self.domain_radius {
            return Err(Error::OutOfDomain {
                norm,
                radius: self.domain_radius,
            });
        }
        Ok(self.h(x, w))
    }

    /// The point `(x + i h(x, w), w)` of `M` in `C^n` coordinates.
    pub fn lift(&self, x: &[f64], w: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let y = self.h(x, w);
        (
            x.iter().zip(&y).map(|(a, b)| Complex64::new(*a, *b)).collect(),
            w.to_vec(),
        )
    }

    /// `h` as polynomials in the variables `(x_1..x_d, w_1..w_m, w_bar_1..w_bar_m)`.
    pub fn h_polynomials(&self) -> Vec<Poly> {
        let d = self.d;
        let m = self.cr_dim();
        let nv = d + 2 * m;
        let mut out = vec![Poly::zero(nv); d];
        for (l, h) in self.quadric.matrices.iter().enumerate() {
            for j in 0..m {
                for k in 0..m {
                    let mut e = vec![0; nv];
                    e[d + j] += 1;
                    e[d + m + k] += 1;
                    out[l].add_term(e, h[j * m + k]);
                }
            }
        }
        for mono in &self.perturbation {
            let e: Vec<u32> = mono.x_exp.iter().chain(&mono.w_exp).chain(&mono.wbar_exp).copied().collect();
            for (l, c) in mono.coefficient.iter().enumerate() {
                out[l].add_term(e.clone(), *c);
            }
        }
        out
    }
}

fn check_real_valued(perturbation: &[Monomial]) -> Result<()> {
    let mut grouped: BTreeMap<(Vec<u32>, Vec<u32>, Vec<u32>), Vec<Complex64>> = BTreeMap::new();
    for mono in perturbation {
        let slot = grouped
            .entry(mono.key())
            .or_insert_with(|| vec![Complex64::new(0.0, 0.0); mono.coefficient.len()]);
        for (s, c) in slot.iter_mut().zip(&mono.coefficient) {
            *s += c;
        }
    }
    for ((x, w, wb), coeff) in &grouped {
        let partner = grouped.get(&(x.clone(), wb.clone(), w.clone()));
        let ok = match partner {
            Some(p) => coeff
                .iter()
                .zip(p)
                .all(|(a, b)| (a - b.conj()).norm() <= 1e-12 * (1.0 + a.norm())),
            None => coeff.iter().all(|c| c.norm() == 0.0),
        };
        if !ok {
            return Err(Error::InvalidManifold(format!(
                "perturbation is not real-valued: term x^{x:?} w^{w:?} w_bar^{wb:?} lacks its conjugate partner"
            )));
        }
    }
    Ok(())
}

/// Lists every failed normal-form vanishing condition of the perturbation.
/// The quadric is the exempt mixed second-order part.
pub fn check_normal_form(m: &CRGraphManifold) -> Vec<NormalFormViolation> {
    let mut out = Vec::new();
    for (i, mono) in m.perturbation.iter().enumerate() {
        if mono.coefficient.iter().all(|c| c.norm() == 0.0) {
            continue;
        }
        let deg = mono.degree();
        let hol = mono.holomorphic_degree();
        let antihol = mono.antiholomorphic_degree();
        if deg == 0 {
            for (l, c) in mono.coefficient.iter().enumerate() {
                if c.norm() != 0.0 {
                    out.push(NormalFormViolation::NonzeroValue { component: l });
                }
            }
            continue;
        }
        if deg <= 2 {
            if antihol == 0 {
                out.push(NormalFormViolation::PureDerivative {
                    monomial: i,
                    order: deg,
                    antiholomorphic: false,
                });
            } else if hol == 0 {
                out.push(NormalFormViolation::PureDerivative {
                    monomial: i,
                    order: deg,
                    antiholomorphic: true,
                });
            } else {
                out.push(NormalFormViolation::MixedSecondOrder { monomial: i });
            }
        }
    }
    out
}

/// The quadric `q = d^2 h / dw dw_bar (0)`.
pub fn quadric_of(m: &CRGraphManifold) -> QuadricForm {
    m.quadric.clone()
}

/// Extrinsic Levi form at the origin of the normal form. With defining
/// functions `rho_l = h_l - y_l` the value is `q(W, W_bar)`.
pub fn levi_form(m: &CRGraphManifold, direction: &[Complex64]) -> Result<Vec<f64>> {
    if direction.len() != m.cr_dim() {
        return Err(Error::SizeMismatch {
            expected: m.cr_dim(),
            found: direction.len(),
        });
    }
    Ok(m.quadric.eval_real(direction))
}

/// Sampled image of the Levi form and the verdict on its convex hull.
#[derive(Debug, Clone, PartialEq)]
pub struct LeviReport {
    pub evaluations: Vec<(Vec<Complex64>, Vec<f64>)>,
    pub hull_has_interior: bool,
    pub witness_cone: Option<ConeRegion>,
}

/// Minimum number of sampled directions for a hull verdict.
pub const MIN_HULL_SAMPLES: usize = 4096;
/// Radius of the ball the hull must contain around the averaged point.
pub const HULL_BALL_RADIUS: f64 = 1e-6;
const MEMBERSHIP_TOLERANCE: f64 = 1e-10;

pub fn levi_hull_report(m: &CRGraphManifold, samples: usize, seed: u64) -> LeviReport {
    quadric_hull_report(&m.quadric, samples, seed)
}

/// Samples `q(W, W_bar)` over unit directions and decides whether the convex
/// hull of the image has nonempty interior. The image of `q` is a cone, so the
/// hull is taken together with the origin; the test point is half the mean of
/// the sampled values, which is interior exactly when the hull is full
/// dimensional.
pub fn quadric_hull_report(q: &QuadricForm, samples: usize, seed: u64) -> LeviReport {
    let samples = samples.max(MIN_HULL_SAMPLES);
    let d = q.codim();
    let mut rng = sampling::rng(seed);
    let evaluations: Vec<(Vec<Complex64>, Vec<f64>)> = (0..samples)
        .map(|_| {
            let w = sampling::complex_unit(&mut rng, q.cr_dim());
            let v = q.eval_real(&w);
            (w, v)
        })
        .collect();
    let mut points: Vec<Vec<f64>> = evaluations.iter().map(|(_, v)| v.clone()).collect();
    let values = points.clone();
    points.push(vec![0.0; d]);

    let mut centre = vec![0.0; d];
    for v in &values {
        for (c, x) in centre.iter_mut().zip(v) {
            *c += x;
        }
    }
    for c in &mut centre {
        *c /= 2.0 * values.len() as f64;
    }

    // The cross-polytope c +- r sqrt(d) e_k contains the ball B(c, r).
    let offset = HULL_BALL_RADIUS * libm::sqrt(d as f64);
    let has_interior = (0..d).all(|k| {
        [-1.0, 1.0].iter().all(|s| {
            let mut p = centre.clone();
            p[k] += s * offset;
            hull::hull_residual(&points, &p) < MEMBERSHIP_TOLERANCE
        })
    });

    let witness_cone = if has_interior {
        witness_cone(&values, &points, &centre, &mut rng)
    } else {
        None
    };
    LeviReport {
        evaluations,
        hull_has_interior: has_interior,
        witness_cone,
    }
}

/// Largest round cone around the mean direction whose boundary probes lie in
/// the cone generated by the values, truncated at a scale where the probe
/// points still lie in the hull.
fn witness_cone(values: &[Vec<f64>], points: &[Vec<f64>], centre: &[f64], rng: &mut sampling::SeededRng) -> Option<ConeRegion> {
    let d = centre.len();
    let axis_norm = cone::norm(centre);
    if axis_norm == 0.0 {
        return None;
    }
    let axis: Vec<f64> = centre.iter().map(|c| c / axis_norm).collect();
    const PROBES: usize = 64;
    let half_angle = if d == 1 {
        core::f64::consts::FRAC_PI_4
    } else {
        let (mut lo, mut hi) = (0.0, core::f64::consts::FRAC_PI_2);
        for _ in 0..20 {
            let mid = 0.5 * (lo + hi);
            let ok = cone::boundary_probes(&axis, mid, rng, PROBES)
                .iter()
                .all(|u| hull::cone_residual(values, u) < MEMBERSHIP_TOLERANCE);
            if ok {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.9 * lo
    };
    if half_angle <= 0.0 {
        return None;
    }
    let mut probes = cone::boundary_probes(&axis, half_angle, rng, PROBES);
    probes.push(axis.clone());
    let reach = values.iter().map(|v| cone::norm(v)).fold(0.0, f64::max);
    let mut scale = f64::INFINITY;
    for u in &probes {
        let (mut lo, mut hi) = (0.0, reach);
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            let p: Vec<f64> = u.iter().map(|x| x * mid).collect();
            if hull::hull_residual(points, &p) < MEMBERSHIP_TOLERANCE {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        scale = scale.min(lo);
    }
    let scale = 0.5 * scale * libm::cos(half_angle);
    ConeRegion::new(axis, half_angle, scale).ok()
}

/// `h_lambda(x, w) = h(lambda x, lambda w) / lambda^2`: the quadric is kept and a
/// degree-`k` monomial picks up `lambda^(k-2)`.
pub fn rescale(m: &CRGraphManifold, lambda: f64) -> Result<CRGraphManifold> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("rescale factor must be positive, got {lambda}")));
    }
    Ok(CRGraphManifold {
        perturbation: m.perturbation.iter().map(|mono| mono.rescaled(lambda)).collect(),
        domain_radius: m.domain_radius / lambda,
        ..m.clone()
    })
}

/// Default truncation degree of recentered defining functions.
pub const NORMALIZE_DEGREE: u32 = 4;

/// Holomorphic polynomial map of degree at most two,
/// `(z, w) -> (Z1 - i R(Z1, w - w_p), w - w_p)` with
/// `Z1 = P (z - z_p - i K (w - w_p))`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalChart {
    d: usize,
    m: usize,
    z_p: Vec<Complex64>,
    w_p: Vec<Complex64>,
    linear: DMatrix<Complex64>,
    linear_inv: DMatrix<Complex64>,
    shear: DMatrix<Complex64>,
    // d holomorphic polynomials in (Z1_1..Z1_d, omega_1..omega_m)
    quadratic: Vec<Poly>,
}

impl NormalChart {
    pub fn identity(d: usize, m: usize) -> Self {
        Self {
            d,
            m,
            z_p: vec![Complex64::new(0.0, 0.0); d],
            w_p: vec![Complex64::new(0.0, 0.0); m],
            linear: DMatrix::identity(d, d),
            linear_inv: DMatrix::identity(d, d),
            shear: DMatrix::zeros(d, m),
            quadratic: vec![Poly::zero(d + m); d],
        }
    }

    /// The point of `C^n` sent to the origin.
    pub fn base_point(&self) -> (&[Complex64], &[Complex64]) {
        (&self.z_p, &self.w_p)
    }

    pub fn linear_part(&self) -> &DMatrix<Complex64> {
        &self.linear
    }

    pub fn shear(&self) -> &DMatrix<Complex64> {
        &self.shear
    }

    pub fn quadratic_part(&self) -> &[Poly] {
        &self.quadratic
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity(self.d, self.m)
    }

    fn stage_one(&self, z: &[Complex64], omega: &[Complex64]) -> Vec<Complex64> {
        let i = Complex64::new(0.0, 1.0);
        let shifted: Vec<Complex64> = (0..self.d)
            .map(|r| {
                let kw: Complex64 = (0..self.m).map(|j| self.shear[(r, j)] * omega[j]).sum();
                z[r] - self.z_p[r] - i * kw
            })
            .collect();
        (0..self.d)
            .map(|l| (0..self.d).map(|r| self.linear[(l, r)] * shifted[r]).sum())
            .collect()
    }

    fn quadratic_at(&self, z1: &[Complex64], omega: &[Complex64]) -> Vec<Complex64> {
        let pt: Vec<Complex64> = z1.iter().chain(omega).copied().collect();
        self.quadratic.iter().map(|p| p.eval(&pt)).collect()
    }

    pub fn apply(&self, z: &[Complex64], w: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let omega: Vec<Complex64> = w.iter().zip(&self.w_p).map(|(a, b)| a - b).collect();
        let z1 = self.stage_one(z, &omega);
        let r = self.quadratic_at(&z1, &omega);
        let i = Complex64::new(0.0, 1.0);
        (z1.iter().zip(&r).map(|(a, b)| a - i * b).collect(), omega)
    }

    /// Inverse map by Newton iteration on the quadratic stage.
    pub fn apply_inverse(&self, z: &[Complex64], w: &[Complex64]) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let i = Complex64::new(0.0, 1.0);
        let omega = w.to_vec();
        let mut z1 = z.to_vec();
        let pt_of = |z1: &[Complex64]| -> Vec<Complex64> { z1.iter().chain(&omega).copied().collect() };
        let mut converged = self.quadratic.iter().all(|p| p.is_zero());
        for _ in 0..50 {
            if converged {
                break;
            }
            let pt = pt_of(&z1);
            let f: Vec<Complex64> = (0..self.d)
                .map(|l| z1[l] - i * self.quadratic[l].eval(&pt) - z[l])
                .collect();
            let jac = DMatrix::from_fn(self.d, self.d, |l, r| {
                let delta = if l == r { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
                delta - i * self.quadratic[l].derivative(r).eval(&pt)
            });
            let step = jac
                .lu()
                .solve(&nalgebra::DVector::from_column_slice(&f))
                .ok_or(Error::SingularChart)?;
            let mut size = 0.0f64;
            for l in 0..self.d {
                z1[l] -= step[l];
                size = size.max(step[l].norm());
            }
            if size < 1e-15 * (1.0 + z1.iter().map(|v| v.norm()).fold(0.0, f64::max)) {
                converged = true;
            }
        }
        if !converged {
            return Err(Error::NotConverged {
                iterations: 50,
                residual: f64::NAN,
            });
        }
        let back: Vec<Complex64> = (0..self.d)
            .map(|r| (0..self.d).map(|l| self.linear_inv[(r, l)] * z1[l]).sum())
            .collect();
        let zz: Vec<Complex64> = (0..self.d)
            .map(|r| {
                let kw: Complex64 = (0..self.m).map(|j| self.shear[(r, j)] * omega[j]).sum();
                self.z_p[r] + back[r] + i * kw
            })
            .collect();
        let ww: Vec<Complex64> = omega.iter().zip(&self.w_p).map(|(a, b)| a + b).collect();
        Ok((zz, ww))
    }
}

fn conj_perm(d: usize, m: usize) -> Vec<usize> {
    (0..d)
        .chain(d + m..d + 2 * m)
        .chain(d..d + m)
        .collect()
}

/// Solves `x = xi + N(xi, w, w_bar)` for `xi` as a truncated series in
/// `(x, w, w_bar)`, given `x` as polynomials whose linear part in `xi` is the
/// identity.
fn invert_real_part(x_polys: &[Poly], d: usize, nv: usize, degree: u32) -> Vec<Poly> {
    let nonlinear: Vec<Poly> = x_polys
        .iter()
        .enumerate()
        .map(|(i, p)| p.sub(&Poly::var(nv, i)))
        .collect();
    let mut xi: Vec<Poly> = (0..d).map(|i| Poly::var(nv, i)).collect();
    for _ in 0..=degree {
        let subs: Vec<Poly> = xi.iter().cloned().chain((d..nv).map(|k| Poly::var(nv, k))).collect();
        xi = (0..d)
            .map(|i| Poly::var(nv, i).sub(&nonlinear[i].compose(&subs, degree)))
            .collect();
    }
    xi
}

fn real_and_imag(z: &[Poly], perm: &[usize]) -> (Vec<Poly>, Vec<Poly>) {
    let half = Complex64::new(0.5, 0.0);
    let minus_half_i = Complex64::new(0.0, -0.5);
    z.iter()
        .map(|p| {
            let c = p.conjugate(perm);
            (p.add(&c).scale(half), p.sub(&c).scale(minus_half_i))
        })
        .unzip()
}

/// Re-expresses `M` near `p = (x_p, w_p)` in holomorphic coordinates centred at
/// `p` in which the defining function satisfies every normal-form vanishing
/// condition. The new defining function is truncated at `degree`.
pub fn normalize_at_point(
    m: &CRGraphManifold,
    x_p: &[f64],
    w_p: &[Complex64],
    degree: u32,
) -> Result<(NormalChart, CRGraphManifold)> {
    let d = m.d;
    let cm = m.cr_dim();
    if x_p.len() != d || w_p.len() != cm {
        return Err(Error::SizeMismatch {
            expected: d + cm,
            found: x_p.len() + w_p.len(),
        });
    }
    let norm = CRGraphManifold::point_norm(x_p, w_p);
    if norm > m.domain_radius / 2.0 {
        return Err(Error::OutOfDomain {
            norm,
            radius: m.domain_radius / 2.0,
        });
    }
    if norm == 0.0 {
        return Ok((NormalChart::identity(d, cm), m.clone()));
    }
    let degree = degree.max(2);
    let nv = d + 2 * cm;
    let perm = conj_perm(d, cm);
    let i = Complex64::new(0.0, 1.0);
    let cplx = |v: f64| Complex64::new(v, 0.0);

    // h(x_p + xi, w_p + omega) - y_p
    let shift: Vec<Poly> = (0..nv)
        .map(|k| {
            let c = if k < d {
                cplx(x_p[k])
            } else if k < d + cm {
                w_p[k - d]
            } else {
                w_p[k - d - cm].conj()
            };
            Poly::constant(nv, c).add(&Poly::var(nv, k))
        })
        .collect();
    let y_p = m.h(x_p, w_p);
    let eta: Vec<Poly> = m
        .h_polynomials()
        .iter()
        .enumerate()
        .map(|(l, p)| {
            let mut s = p.compose(&shift, degree);
            s.add_term(vec![0; nv], cplx(-y_p[l]));
            s.prune(0.0);
            s
        })
        .collect();

    let unit = |k: usize| {
        let mut e = vec![0u32; nv];
        e[k] = 1;
        e
    };
    let a_mat = DMatrix::from_fn(d, d, |l, r| cplx(eta[l].coefficient(&unit(r)).re));
    let b_mat = DMatrix::from_fn(d, cm, |l, j| eta[l].coefficient(&unit(d + j)));
    let ident = DMatrix::<Complex64>::identity(d, d);
    let plus = &ident + a_mat.map(|v| v * i);
    let minus = &ident - a_mat.map(|v| v * i);
    let linear = plus.clone().try_inverse().ok_or(Error::SingularChart)?;
    let minus_inv = minus.try_inverse().ok_or(Error::SingularChart)?;
    let shear = &b_mat + &plus * &minus_inv * &b_mat;

    // Z1 = P (xi + i eta - i K omega) on M
    let inner: Vec<Poly> = (0..d)
        .map(|r| {
            let mut p = Poly::var(nv, r).add(&eta[r].scale(i));
            for j in 0..cm {
                p = p.sub(&Poly::var(nv, d + j).scale(i * shear[(r, j)]));
            }
            p
        })
        .collect();
    let z1: Vec<Poly> = (0..d)
        .map(|l| {
            let mut p = Poly::zero(nv);
            for r in 0..d {
                p.add_assign(&inner[r].scale(linear[(l, r)]));
            }
            p
        })
        .collect();

    let (x1, y1) = real_and_imag(&z1, &perm);
    let xi1 = invert_real_part(&x1, d, nv, degree);
    let subs1: Vec<Poly> = xi1.iter().cloned().chain((d..nv).map(|k| Poly::var(nv, k))).collect();
    let h1: Vec<Poly> = y1.iter().map(|p| p.compose(&subs1, degree)).collect();

    // Pure second-order part of h1 -> holomorphic quadratic R(Z1, omega)
    let nq = d + cm;
    let quadratic: Vec<Poly> = h1
        .iter()
        .map(|p| {
            let mut r = Poly::zero(nq);
            for (e, c) in p.homogeneous(2).terms() {
                if e[d + cm..].iter().any(|&k| k > 0) {
                    continue;
                }
                let has_w = e[d..d + cm].iter().any(|&k| k > 0);
                let factor = if has_w { 2.0 } else { 1.0 };
                r.add_term(e[..nq].to_vec(), c * factor);
            }
            r
        })
        .collect();

    // Z' = Z1 - i R(Z1, omega)
    let subs_r: Vec<Poly> = z1.iter().cloned().chain((d..d + cm).map(|k| Poly::var(nv, k))).collect();
    let z2: Vec<Poly> = z1
        .iter()
        .zip(&quadratic)
        .map(|(a, r)| a.sub(&r.compose(&subs_r, degree).scale(i)))
        .collect();
    let (x2, y2) = real_and_imag(&z2, &perm);
    let xi2 = invert_real_part(&x2, d, nv, degree);
    let subs2: Vec<Poly> = xi2.iter().cloned().chain((d..nv).map(|k| Poly::var(nv, k))).collect();
    let h2: Vec<Poly> = y2.iter().map(|p| p.compose(&subs2, degree)).collect();

    let scale = 1.0 + h2.iter().map(|p| p.max_coefficient()).fold(0.0, f64::max);
    let tol = 1e-10 * scale;
    let mut matrices = vec![vec![Complex64::new(0.0, 0.0); cm * cm]; d];
    let mut grouped: BTreeMap<Vec<u32>, Vec<Complex64>> = BTreeMap::new();
    for (l, p) in h2.iter().enumerate() {
        for (e, c) in p.terms() {
            let deg: u32 = e.iter().sum();
            let hol: u32 = e[d..d + cm].iter().sum();
            let antihol: u32 = e[d + cm..].iter().sum();
            if deg <= 2 && (hol == 0 || antihol == 0) {
                if c.norm() > tol {
                    return Err(Error::Verification(format!(
                        "recentered defining function keeps a pure term of order {deg} (|c| = {:e})",
                        c.norm()
                    )));
                }
                continue;
            }
            if deg == 2 {
                let j = (0..cm).find(|&j| e[d + j] == 1).unwrap();
                let k = (0..cm).find(|&k| e[d + cm + k] == 1).unwrap();
                matrices[l][j * cm + k] += *c;
                continue;
            }
            if c.norm() <= 1e-15 * scale {
                continue;
            }
            grouped
                .entry(e.clone())
                .or_insert_with(|| vec![Complex64::new(0.0, 0.0); d])[l] += *c;
        }
    }
    // exact Hermitian symmetry
    for h in &mut matrices {
        for j in 0..cm {
            for k in j..cm {
                let avg = 0.5 * (h[j * cm + k] + h[k * cm + j].conj());
                h[j * cm + k] = avg;
                h[k * cm + j] = avg.conj();
            }
        }
    }
    let mut perturbation: Vec<Monomial> = Vec::new();
    for (e, coeff) in &grouped {
        perturbation.push(Monomial::new(
            coeff.clone(),
            e[..d].to_vec(),
            e[d..d + cm].to_vec(),
            e[d + cm..].to_vec(),
        ));
    }
    symmetrize_pairs(&mut perturbation);
    let quadric = QuadricForm::new(cm, matrices)?;
    let recentered = CRGraphManifold::new(m.n, d, quadric, perturbation, m.domain_radius / 2.0)?;

    let chart = NormalChart {
        d,
        m: cm,
        z_p: x_p.iter().zip(&y_p).map(|(a, b)| Complex64::new(*a, *b)).collect(),
        w_p: w_p.to_vec(),
        linear_inv: plus,
        linear,
        shear,
        quadratic,
    };
    Ok((chart, recentered))
}

/// Makes conjugate partner coefficients exact conjugates of each other
/// (rounding in the series algebra breaks the symmetry at the 1e-16 level).
fn symmetrize_pairs(terms: &mut Vec<Monomial>) {
    let index: BTreeMap<(Vec<u32>, Vec<u32>, Vec<u32>), usize> =
        terms.iter().enumerate().map(|(i, t)| (t.key(), i)).collect();
    let mut fixed = terms.clone();
    for (i, t) in terms.iter().enumerate() {
        let partner = index.get(&(t.x_exp.clone(), t.wbar_exp.clone(), t.w_exp.clone()));
        match partner {
            Some(&j) => {
                for (l, c) in fixed[i].coefficient.iter_mut().enumerate() {
                    *c = 0.5 * (t.coefficient[l] + terms[j].coefficient[l].conj());
                }
            }
            None => {
                // partner pruned as negligible: drop this side as well
                for c in fixed[i].coefficient.iter_mut() {
                    *c = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
    fixed.retain(|t| t.coefficient.iter().any(|c| c.norm() > 0.0));
    *terms = fixed;
}

/// Human-readable list of violations.
pub fn describe_violations(v: &[NormalFormViolation]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn lewy(radius: f64) -> CRGraphManifold {
        CRGraphManifold::quadric_manifold(QuadricForm::lewy(), radius).unwrap()
    }

    fn lewy_cubic(coeff: f64, radius: f64) -> CRGraphManifold {
        CRGraphManifold::new(2, 1, QuadricForm::lewy(), Monomial::real_part(&[coeff], vec![0], vec![3], vec![0]), radius).unwrap()
    }

    #[test]
    fn evaluate_h_examples() {
        let m = lewy(1.0);
        assert_eq!(m.evaluate_h(&[0.0], &[c(0.0, 0.0)]).unwrap(), vec![0.0]);
        let v = m.evaluate_h(&[0.3], &[c(0.0, 0.5)]).unwrap();
        assert!((v[0] - 0.25).abs() < 1e-15);
        let mc = lewy_cubic(1.0, 3.0);
        for x in [-0.7, 0.0, 1.3] {
            let v = mc.evaluate_h(&[x], &[c(1.0, 0.0)]).unwrap();
            assert!((v[0] - 2.0).abs() < 1e-14);
        }
        assert!(matches!(
            m.evaluate_h(&[0.9], &[c(0.9, 0.0)]),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn normal_form_examples() {
        assert!(check_normal_form(&lewy(1.0)).is_empty());
        let bad = CRGraphManifold::new(2, 1, QuadricForm::lewy(), Monomial::real_part(&[1.0], vec![0], vec![2], vec![0]), 1.0).unwrap();
        let v = check_normal_form(&bad);
        assert_eq!(v.len(), 2);
        assert!(matches!(v[0], NormalFormViolation::PureDerivative { order: 2, .. }));
        let ok = CRGraphManifold::new(2, 1, QuadricForm::lewy(), Monomial::real_part(&[1.0], vec![1], vec![1], vec![1]), 1.0).unwrap();
        assert!(check_normal_form(&ok).is_empty());
        let xw = CRGraphManifold::new(2, 1, QuadricForm::lewy(), Monomial::real_part(&[1.0], vec![1], vec![1], vec![0]), 1.0).unwrap();
        assert!(!check_normal_form(&xw).is_empty());
        let mixed = CRGraphManifold::new(2, 1, QuadricForm::lewy(), Monomial::real_part(&[1.0], vec![0], vec![1], vec![1]), 1.0).unwrap();
        assert!(matches!(check_normal_form(&mixed)[0], NormalFormViolation::MixedSecondOrder { .. }));
        let constant = CRGraphManifold::new(2, 1, QuadricForm::lewy(), Monomial::real_part(&[0.1], vec![0], vec![0], vec![0]), 1.0).unwrap();
        assert!(matches!(check_normal_form(&constant)[0], NormalFormViolation::NonzeroValue { .. }));
    }

    #[test]
    fn unpaired_perturbation_is_rejected() {
        let lonely = vec![Monomial::new(vec![c(1.0, 0.0)], vec![0], vec![3], vec![0])];
        assert!(CRGraphManifold::new(2, 1, QuadricForm::lewy(), lonely, 1.0).is_err());
    }

    #[test]
    fn quadric_extraction() {
        assert_eq!(quadric_of(&lewy(1.0)).matrix(0), &[c(1.0, 0.0)]);
        let zero = CRGraphManifold::quadric_manifold(QuadricForm::zero(1, 1), 1.0).unwrap();
        assert!(quadric_of(&zero).is_zero());
        let prod = CRGraphManifold::quadric_manifold(QuadricForm::diagonal(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), 1.0).unwrap();
        let q = quadric_of(&prod);
        assert_eq!(q.matrix(0), &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(q.matrix(1), &[c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
    }

    #[test]
    fn rescale_examples() {
        let q = lewy(1.0);
        assert_eq!(rescale(&q, 0.3).unwrap().quadric(), q.quadric());
        let cubic = lewy_cubic(1.0, 1.0);
        let r = rescale(&cubic, 0.1).unwrap();
        for mono in r.perturbation() {
            assert!((mono.coefficient[0].re - 0.05).abs() < 1e-15);
        }
        let quartic = CRGraphManifold::new(2, 1, QuadricForm::lewy(), Monomial::real_part(&[1.0], vec![2], vec![1], vec![1]), 1.0).unwrap();
        let r = rescale(&quartic, 0.5).unwrap();
        assert!((r.perturbation()[0].coefficient[0].re - 0.25).abs() < 1e-15);
        assert!(rescale(&q, 0.0).is_err());
        assert!(rescale(&q, -1.0).is_err());
    }

    #[test]
    fn levi_hull_examples() {
        let m = lewy(1.0);
        assert_eq!(levi_form(&m, &[c(1.0, 0.0)]).unwrap(), vec![1.0]);
        let rep = levi_hull_report(&m, 4096, 7);
        assert!(rep.hull_has_interior);
        let cone = rep.witness_cone.unwrap();
        assert!((cone.axis()[0] - 1.0).abs() < 1e-12);

        let zero = CRGraphManifold::quadric_manifold(QuadricForm::zero(1, 1), 1.0).unwrap();
        let rep = levi_hull_report(&zero, 4096, 7);
        assert!(!rep.hull_has_interior && rep.witness_cone.is_none());

        let line = CRGraphManifold::quadric_manifold(QuadricForm::diagonal(&[vec![1.0], vec![-1.0]]).unwrap(), 1.0).unwrap();
        let rep = levi_hull_report(&line, 4096, 7);
        assert!(!rep.hull_has_interior && rep.witness_cone.is_none());
        for (_, v) in &rep.evaluations {
            assert!((v[0] + v[1]).abs() < 1e-14 && v[0] >= 0.0);
        }
    }

    #[test]
    fn recenter_at_origin_is_identity() {
        let m = lewy_cubic(0.05, 1.0);
        let (chart, out) = normalize_at_point(&m, &[0.0], &[c(0.0, 0.0)], NORMALIZE_DEGREE).unwrap();
        assert!(chart.is_identity());
        assert_eq!(out, m);
    }

    #[test]
    fn recenter_lewy_along_x_is_translation() {
        let m = lewy(1.0);
        let (chart, out) = normalize_at_point(&m, &[0.3], &[c(0.0, 0.0)], NORMALIZE_DEGREE).unwrap();
        let (z, w) = chart.apply(&[c(0.5, 0.2)], &[c(0.1, -0.1)]);
        assert!((z[0] - c(0.2, 0.2)).norm() < 1e-15);
        assert!((w[0] - c(0.1, -0.1)).norm() < 1e-15);
        assert!((out.quadric().matrix(0)[0] - c(1.0, 0.0)).norm() < 1e-14);
        assert!(out.perturbation().is_empty());
    }

    #[test]
    fn recenter_lewy_along_w_is_shear() {
        let m = lewy(1.0);
        let wp = c(0.2, -0.1);
        let (chart, out) = normalize_at_point(&m, &[0.0], &[wp], NORMALIZE_DEGREE).unwrap();
        let z = c(0.3, 0.4);
        let w = c(-0.1, 0.25);
        let (zz, ww) = chart.apply(&[z], &[w]);
        let i = c(0.0, 1.0);
        let expected = z - 2.0 * i * wp.conj() * (w - wp) - i * wp.norm_sqr();
        assert!((zz[0] - expected).norm() < 1e-14);
        assert!((ww[0] - (w - wp)).norm() < 1e-15);
        assert!((out.quadric().matrix(0)[0] - c(1.0, 0.0)).norm() < 1e-13);
        assert!(out.perturbation().is_empty());
        assert!(check_normal_form(&out).is_empty());
    }
}
