//! Wedge coverage by disc centres, discs avoiding a thin set, isotopies to
//! constant discs and the Cauchy-formula extension at disc centres.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::bishop::{self, AttachedDisc, DiscDiagnostics, SolverParams};
use crate::cone::{self, ConeRegion};
use crate::error::{Error, Result};
use crate::geometry::{self, CRGraphManifold};
use crate::harmonics::FourierSeries;
use crate::quadric_discs::{self, DiscFamilyParams};
use crate::sampling::{self, SeededRng};

/// A point of `M` in graph coordinates `(x, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPoint {
    pub x: Vec<f64>,
    pub w: Vec<Complex64>,
}

impl GraphPoint {
    pub fn new(x: Vec<f64>, w: Vec<Complex64>) -> Self {
        Self { x, w }
    }

    pub fn distance(&self, other: &GraphPoint) -> f64 {
        let dx: f64 = self.x.iter().zip(&other.x).map(|(a, b)| (a - b) * (a - b)).sum();
        let dw: f64 = self.w.iter().zip(&other.w).map(|(a, b)| (a - b).norm_sqr()).sum();
        libm::sqrt(dx + dw)
    }
}

/// Sampled parametrised patch of a given dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    dimension: usize,
    samples: Vec<GraphPoint>,
    /// Half of the largest distance between neighbouring samples; the distance
    /// to the patch is underestimated by at most this much.
    sampling_gap: f64,
}

impl Patch {
    /// Samples `map` on a tensor grid of `per_axis` points over `domain`
    /// (one interval per patch dimension).
    pub fn sample(
        domain: &[(f64, f64)],
        per_axis: usize,
        map: impl Fn(&[f64]) -> GraphPoint,
    ) -> Result<Self> {
        let dim = domain.len();
        if per_axis < 2 && dim > 0 {
            return Err(Error::InvalidParameter("a patch needs at least two samples per axis".into()));
        }
        let total = per_axis.pow(dim as u32);
        let mut samples = Vec::with_capacity(total);
        let mut gap = 0.0f64;
        let coords = |index: usize| -> Vec<f64> {
            let mut rem = index;
            domain
                .iter()
                .map(|(lo, hi)| {
                    let k = rem % per_axis;
                    rem /= per_axis;
                    lo + (hi - lo) * k as f64 / (per_axis - 1) as f64
                })
                .collect()
        };
        for index in 0..total {
            let u = coords(index);
            let p = map(&u);
            // neighbour along each axis
            let mut stride = 1;
            for _ in 0..dim {
                if (index / stride) % per_axis + 1 < per_axis {
                    gap = gap.max(p.distance(&map(&coords(index + stride))));
                }
                stride *= per_axis;
            }
            samples.push(p);
        }
        Ok(Self {
            dimension: dim,
            samples,
            sampling_gap: 0.5 * gap,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn samples(&self) -> &[GraphPoint] {
        &self.samples
    }

    fn distance(&self, p: &GraphPoint) -> f64 {
        let d = self.samples.iter().map(|s| s.distance(p)).fold(f64::INFINITY, f64::min);
        (d - self.sampling_gap).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThinComponent {
    Points { points: Vec<GraphPoint>, tube_radius: f64 },
    Patch { patch: Patch, tube_radius: f64 },
}

impl ThinComponent {
    pub fn tube_radius(&self) -> f64 {
        match self {
            Self::Points { tube_radius, .. } | Self::Patch { tube_radius, .. } => *tube_radius,
        }
    }

    fn core_distance(&self, p: &GraphPoint) -> f64 {
        match self {
            Self::Points { points, .. } => points.iter().map(|s| s.distance(p)).fold(f64::INFINITY, f64::min),
            Self::Patch { patch, .. } => patch.distance(p),
        }
    }

    fn with_tube_radius(&self, r: f64) -> Self {
        match self {
            Self::Points { points, .. } => Self::Points {
                points: points.clone(),
                tube_radius: r,
            },
            Self::Patch { patch, .. } => Self::Patch {
                patch: patch.clone(),
                tube_radius: r,
            },
        }
    }
}

/// Closed set `K` of `M` given by tubes around point clouds and
/// low-dimensional patches.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinSet {
    components: Vec<ThinComponent>,
    hausdorff_dim_bound: usize,
    relaxed: bool,
}

impl ThinSet {
    /// Patches must have dimension below `2n - d - 2`; with `relaxed` the
    /// bound is `2n - d - 1`.
    pub fn new(n: usize, d: usize, components: Vec<ThinComponent>, relaxed: bool) -> Result<Self> {
        let bound = (2 * n - d) as i64 - if relaxed { 1 } else { 2 };
        for (i, c) in components.iter().enumerate() {
            let r = c.tube_radius();
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::InvalidParameter(format!("component {i} has an invalid tube radius {r}")));
            }
            let dim = match c {
                ThinComponent::Points { points, .. } => {
                    check_points(n, d, points)?;
                    0
                }
                ThinComponent::Patch { patch, .. } => {
                    check_points(n, d, &patch.samples)?;
                    patch.dimension
                }
            };
            let allowed = dim == 0 && matches!(c, ThinComponent::Points { .. }) || (dim as i64) < bound;
            if !allowed {
                return Err(Error::InvalidParameter(format!(
                    "component {i} has dimension {dim}; thin sets need dimension below {bound}"
                )));
            }
        }
        Ok(Self {
            components,
            hausdorff_dim_bound: bound.max(0) as usize,
            relaxed,
        })
    }

    pub fn empty() -> Self {
        Self {
            components: Vec::new(),
            hausdorff_dim_bound: 0,
            relaxed: false,
        }
    }

    pub fn point(n: usize, d: usize, p: GraphPoint, tube_radius: f64) -> Result<Self> {
        Self::new(
            n,
            d,
            vec![ThinComponent::Points {
                points: vec![p],
                tube_radius,
            }],
            false,
        )
    }

    pub fn components(&self) -> &[ThinComponent] {
        &self.components
    }

    pub fn hausdorff_dim_bound(&self) -> usize {
        self.hausdorff_dim_bound
    }

    pub fn is_relaxed(&self) -> bool {
        self.relaxed
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Same cores with every tube radius replaced.
    pub fn with_tube_radius(&self, r: f64) -> Self {
        Self {
            components: self.components.iter().map(|c| c.with_tube_radius(r)).collect(),
            ..self.clone()
        }
    }

    /// Distance from `p` to the cores, ignoring tubes.
    pub fn core_distance(&self, p: &GraphPoint) -> f64 {
        self.components
            .iter()
            .map(|c| c.core_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Signed clearance `min (distance to core - tube radius)`; negative
    /// inside a tube, infinite for the empty set.
    pub fn clearance(&self, p: &GraphPoint) -> f64 {
        self.components
            .iter()
            .map(|c| c.core_distance(p) - c.tube_radius())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn clearance_of(&self, points: &[GraphPoint]) -> f64 {
        points.iter().map(|p| self.clearance(p)).fold(f64::INFINITY, f64::min)
    }
}

fn check_points(n: usize, d: usize, points: &[GraphPoint]) -> Result<()> {
    for p in points {
        if p.x.len() != d || p.w.len() != n - d {
            return Err(Error::SizeMismatch {
                expected: n,
                found: p.x.len() + p.w.len(),
            });
        }
    }
    Ok(())
}

/// Disc of the family at `params` (closed form for quadrics, Bishop's equation
/// otherwise).
pub fn family_disc(m: &CRGraphManifold, params: &DiscFamilyParams, solver: &SolverParams) -> Result<AttachedDisc> {
    let grid = solver.grid;
    let w = params.w_series(grid)?;
    if m.is_quadric() {
        let g = quadric_discs::closed_form_g(m.quadric(), params, grid)?;
        let mut disc = AttachedDisc {
            w,
            g,
            base_x: params.x.clone(),
            diagnostics: DiscDiagnostics {
                converged: true,
                ..DiscDiagnostics::default()
            },
        };
        disc.diagnostics = bishop::disc_residual(&disc, m);
        return Ok(disc);
    }
    bishop::solve_bishop(m, &w, &params.x, solver)
}

/// Boundary points `(Re G, W)` of a disc at the grid nodes.
pub fn boundary_points(disc: &AttachedDisc) -> Vec<GraphPoint> {
    let (x, w) = disc.boundary_graph_points();
    let d = disc.g.dim();
    let m = disc.w.dim();
    (0..disc.g.grid().size())
        .map(|k| GraphPoint::new(x[k * d..(k + 1) * d].to_vec(), w[k * m..(k + 1) * m].to_vec()))
        .collect()
}

/// `z = p + i eta` with `p = (Re z + i h(Re z, w), w)` on `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterEvidence {
    pub base: GraphPoint,
    pub t: Vec<f64>,
    pub center_z: Vec<Complex64>,
    pub center_w: Vec<Complex64>,
    pub edge_point: GraphPoint,
    pub eta: Vec<f64>,
    pub decomposition_residual: f64,
}

/// Decomposes `(z, w)` as a point of `M` plus a normal displacement `i eta`.
pub fn decompose(m: &CRGraphManifold, z: &[Complex64], w: &[Complex64]) -> (GraphPoint, Vec<f64>, f64) {
    let x: Vec<f64> = z.iter().map(|c| c.re).collect();
    let h = m.h(&x, w);
    let eta: Vec<f64> = z.iter().zip(&h).map(|(c, hv)| c.im - hv).collect();
    let residual = z
        .iter()
        .zip(&x)
        .zip(h.iter().zip(&eta))
        .map(|((c, xv), (hv, e))| (c - Complex64::new(*xv, hv + e)).norm())
        .fold(0.0, f64::max);
    (GraphPoint::new(x, w.to_vec()), eta, residual)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WedgeCertificate {
    pub edge_center: GraphPoint,
    pub edge_radius: f64,
    pub cone: ConeRegion,
    /// Centres whose normal displacement lies in the fitted cone.
    pub evidence: Vec<CenterEvidence>,
    /// Centres outside the fitted cone.
    pub discarded: usize,
    /// Grid nodes whose disc could not be computed, with the reason.
    pub excluded: Vec<(GraphPoint, Vec<f64>, String)>,
    pub max_decomposition_residual: f64,
}

impl WedgeCertificate {
    /// Whether `(z, w)` lies in the certified wedge.
    pub fn contains(&self, m: &CRGraphManifold, z: &[Complex64], w: &[Complex64]) -> bool {
        let (p, eta, _) = decompose(m, z, w);
        p.distance(&self.edge_center) <= self.edge_radius && self.cone.contains(&eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    /// A scale `s` along a probe ray `u` is covered when some centre satisfies
    /// `|eta - s u| <= cover_tolerance * S` (`S` the candidate cone scale).
    pub cover_tolerance: f64,
    pub scale_samples: usize,
    pub probes: usize,
    pub bisection_steps: usize,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            cover_tolerance: 0.05,
            scale_samples: 16,
            probes: 32,
            bisection_steps: 12,
            seed: 0,
        }
    }
}

/// Solves discs for every base point and scale vector, maps their centres back
/// from the recentred coordinates and fits the largest truncated cone of
/// normal directions covered by the centres.
pub fn sweep_centers(
    m: &CRGraphManifold,
    family: &DiscFamilyParams,
    base_grid: &[GraphPoint],
    t_grid: &[Vec<f64>],
    solver: &SolverParams,
    options: &SweepOptions,
) -> Result<WedgeCertificate> {
    let d = m.d();
    let cm = m.cr_dim();
    let mut evidence_all = Vec::new();
    let mut excluded = Vec::new();
    for base in base_grid {
        let (chart, local) = geometry::normalize_at_point(m, &base.x, &base.w, geometry::NORMALIZE_DEGREE)?;
        for t in t_grid {
            let mut params = family.with_scales(t.clone());
            params.x = vec![0.0; d];
            params.a0 = vec![Complex64::new(0.0, 0.0); cm];
            let disc = match family_disc(&local, &params, solver) {
                Ok(disc) => disc,
                Err(e) => {
                    excluded.push((base.clone(), t.clone(), format!("{e}")));
                    continue;
                }
            };
            let (g0, w0) = bishop::disc_center(&disc);
            let (z, w) = match chart.apply_inverse(&g0, &w0) {
                Ok(p) => p,
                Err(e) => {
                    excluded.push((base.clone(), t.clone(), format!("{e}")));
                    continue;
                }
            };
            let (edge_point, eta, residual) = decompose(m, &z, &w);
            evidence_all.push(CenterEvidence {
                base: base.clone(),
                t: t.clone(),
                center_z: z,
                center_w: w,
                edge_point,
                eta,
                decomposition_residual: residual,
            });
        }
    }
    let etas: Vec<Vec<f64>> = evidence_all.iter().map(|e| e.eta.clone()).collect();
    let cone = fit_cone(&etas, options)?;
    let mut evidence = Vec::new();
    let mut discarded = 0;
    for e in evidence_all {
        if cone.contains(&e.eta) {
            evidence.push(e);
        } else {
            discarded += 1;
        }
    }
    let (edge_center, edge_radius) = edge_patch(base_grid, &evidence);
    let max_decomposition_residual = evidence.iter().map(|e| e.decomposition_residual).fold(0.0, f64::max);
    Ok(WedgeCertificate {
        edge_center,
        edge_radius,
        cone,
        evidence,
        discarded,
        excluded,
        max_decomposition_residual,
    })
}

fn edge_patch(base_grid: &[GraphPoint], evidence: &[CenterEvidence]) -> (GraphPoint, f64) {
    let first = &base_grid[0];
    let mut cx = vec![0.0; first.x.len()];
    let mut cw = vec![Complex64::new(0.0, 0.0); first.w.len()];
    for b in base_grid {
        for (c, v) in cx.iter_mut().zip(&b.x) {
            *c += v / base_grid.len() as f64;
        }
        for (c, v) in cw.iter_mut().zip(&b.w) {
            *c += v / base_grid.len() as f64;
        }
    }
    let center = GraphPoint::new(cx, cw);
    let radius = evidence
        .iter()
        .map(|e| e.edge_point.distance(&center))
        .chain(base_grid.iter().map(|b| b.distance(&center)))
        .fold(0.0, f64::max);
    (center, radius)
}

/// Largest truncated cone whose probe rays are covered by the sampled normal
/// displacements at every sampled scale.
pub fn fit_cone(etas: &[Vec<f64>], options: &SweepOptions) -> Result<ConeRegion> {
    let Some(first) = etas.first() else {
        return Err(Error::Verification("no disc centres to fit a cone to".into()));
    };
    let d = first.len();
    let mut mean = vec![0.0; d];
    for e in etas {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    let norm = cone::norm(&mean);
    let reach = etas.iter().map(|e| cone::norm(e)).fold(0.0, f64::max);
    if !(norm > 1e-14 * (1.0 + reach)) || reach == 0.0 {
        return Err(Error::Verification("disc centres show no normal displacement; no cone can be fitted".into()));
    }
    let axis: Vec<f64> = mean.iter().map(|v| v / norm).collect();
    let mut rng = sampling::rng(options.seed ^ 0x3ed6e);

    let covered = |probes: &[Vec<f64>], scale: f64| -> bool {
        let tol = options.cover_tolerance * scale;
        probes.iter().all(|u| {
            (1..=options.scale_samples).all(|k| {
                let s = scale * k as f64 / options.scale_samples as f64;
                etas.iter().any(|e| {
                    let dist2: f64 = e.iter().zip(u).map(|(a, b)| (a - s * b) * (a - s * b)).sum();
                    dist2 <= tol * tol
                })
            })
        })
    };
    let mut candidates: Vec<f64> = etas.iter().map(|e| cone::norm(e)).filter(|v| *v > 0.0).collect();
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();
    let max_scale = |probes: &[Vec<f64>]| -> f64 {
        candidates
            .iter()
            .copied()
            .find(|&s| covered(probes, s))
            .unwrap_or(0.0)
    };

    let axis_only = vec![axis.clone()];
    let axis_scale = max_scale(&axis_only);
    if axis_scale == 0.0 {
        return Err(Error::Verification("the centres do not cover any segment of the mean normal ray".into()));
    }
    let (half_angle, probes) = if d == 1 {
        (FRAC_PI_4, axis_only)
    } else {
        let (mut lo, mut hi) = (0.0, FRAC_PI_2);
        for _ in 0..options.bisection_steps {
            let mid = 0.5 * (lo + hi);
            let mut probes = cone::boundary_probes(&axis, mid, &mut rng, options.probes);
            probes.push(axis.clone());
            if covered(&probes, 0.5 * axis_scale) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo == 0.0 {
            return Err(Error::Verification("no open cone of normal directions is covered".into()));
        }
        let angle = 0.9 * lo;
        let mut probes = cone::boundary_probes(&axis, angle, &mut rng, options.probes);
        probes.push(axis.clone());
        (angle, probes)
    };
    let scale = max_scale(&probes);
    if scale == 0.0 {
        return Err(Error::Verification("the fitted cone has zero scale".into()));
    }
    ConeRegion::new(axis, half_angle, scale)
}

/// Values `v(t, 0) = Im G(0)` of the disc centre and their `t`-Jacobian.
fn center_height(
    m: &CRGraphManifold,
    params: &DiscFamilyParams,
    solver: &SolverParams,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = m.d();
    let n = params.len();
    if m.is_quadric() {
        let (g0, _) = quadric_discs::center_map(m.quadric(), params)?;
        let mut jac = DMatrix::zeros(d, n);
        for j in 1..=n {
            for (l, v) in quadric_discs::dv0_dt(m.quadric(), params, j)?.iter().enumerate() {
                jac[(l, j - 1)] = *v;
            }
        }
        return Ok((g0.iter().map(|z| z.im).collect(), jac));
    }
    let v = |p: &DiscFamilyParams| -> Result<Vec<f64>> {
        let disc = family_disc(m, p, solver)?;
        Ok(disc.g.coefficient(0).unwrap().iter().map(|z| z.im).collect())
    };
    let v0 = v(params)?;
    let scale = params.scales.iter().fold(0.0, |a: f64, b| a.max(b.abs())).max(1e-3);
    let h = 1e-5 * scale;
    let mut jac = DMatrix::zeros(d, n);
    for j in 0..n {
        let mut plus = params.scales.clone();
        plus[j] += h;
        let mut minus = params.scales.clone();
        minus[j] -= h;
        let vp = v(&params.with_scales(plus))?;
        let vm = v(&params.with_scales(minus))?;
        for l in 0..d {
            jac[(l, j)] = (vp[l] - vm[l]) / (2.0 * h);
        }
    }
    Ok((v0, jac))
}

/// Minimum-norm Newton projection of `t` onto `{v(t, 0) = target}`.
fn project_to_level(
    m: &CRGraphManifold,
    params: &DiscFamilyParams,
    target: &[f64],
    solver: &SolverParams,
) -> Result<Option<DiscFamilyParams>> {
    let mut p = params.clone();
    let size = target.iter().map(|v| v.abs()).fold(0.0, f64::max);
    // Newton converges quadratically; iterate to roundoff and accept once the
    // residual stops decreasing below the loose threshold.
    let tight = 8.0 * f64::EPSILON * size + f64::MIN_POSITIVE;
    let loose = 1e-10 * (size + 1e-3);
    let mut previous = f64::INFINITY;
    for _ in 0..40 {
        let (v, jac) = match center_height(m, &p, solver) {
            Ok(r) => r,
            Err(_) => return Ok(None),
        };
        let r: Vec<f64> = v.iter().zip(target).map(|(a, b)| a - b).collect();
        let res = r.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if res < tight || (res < loose && res >= 0.5 * previous) {
            return Ok(Some(p));
        }
        previous = res;
        let jjt = &jac * jac.transpose();
        let Some(inv) = jjt.try_inverse() else {
            return Ok(None);
        };
        let step = jac.transpose() * inv * DVector::from_column_slice(&r);
        let scales: Vec<f64> = p.scales.iter().zip(step.iter()).map(|(t, s)| t - s).collect();
        if scales.iter().any(|t| !t.is_finite()) {
            return Ok(None);
        }
        p = p.with_scales(scales);
    }
    Ok(None)
}

/// Tangent direction of the level set through `p`: a seeded random vector with
/// its component along the rows of the Jacobian removed.
fn tangential_move(
    m: &CRGraphManifold,
    p: &DiscFamilyParams,
    solver: &SolverParams,
    size: f64,
    rng: &mut SeededRng,
) -> Result<Option<Vec<f64>>> {
    let (_, jac) = center_height(m, p, solver)?;
    let r = DVector::from_vec(sampling::real_gaussian(rng, p.len()));
    let jjt = &jac * jac.transpose();
    let Some(inv) = jjt.try_inverse() else {
        return Ok(None);
    };
    let tangent = &r - jac.transpose() * (inv * (&jac * &r));
    let norm = tangent.norm();
    if norm < 1e-14 {
        return Ok(None);
    }
    Ok(Some(p.scales.iter().zip(tangent.iter()).map(|(t, v)| t + size * v / norm).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvoidanceOptions {
    pub budget: usize,
    pub clearance_floor: f64,
    pub seed: u64,
    pub solver: SolverParams,
    /// Fraction of attempts that move tangentially along the level set from
    /// the previous point instead of restarting from a random cone point.
    pub tangential_fraction: f64,
}

impl Default for AvoidanceOptions {
    fn default() -> Self {
        Self {
            budget: 200,
            clearance_floor: 0.0,
            seed: 0,
            solver: SolverParams::default(),
            tangential_fraction: 0.5,
        }
    }
}

/// An attached disc of the family through a target point.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscThrough {
    pub params: DiscFamilyParams,
    pub disc: AttachedDisc,
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AvoidanceOutcome {
    Found { disc: DiscThrough, attempts: usize },
    BudgetExhausted { best_clearance: f64, attempts: usize },
}

/// Family with base point and centre fixed by the target `(z, w)`:
/// `x = Re z`, `t_0 a_0 = w`.
pub fn family_through(family: &DiscFamilyParams, z: &[Complex64], w: &[Complex64]) -> DiscFamilyParams {
    let mut p = family.clone();
    p.x = z.iter().map(|c| c.re).collect();
    p.a0 = w.to_vec();
    p.t0 = 1.0;
    p
}

/// Iterator-like sampler of the level set `E_eta` of discs through `(z, w)`.
pub struct LevelSetSampler<'a> {
    m: &'a CRGraphManifold,
    base: DiscFamilyParams,
    cone: &'a ConeRegion,
    target: Vec<f64>,
    solver: SolverParams,
    tangential_fraction: f64,
    rng: SeededRng,
    last: Option<DiscFamilyParams>,
}

impl<'a> LevelSetSampler<'a> {
    pub fn new(
        m: &'a CRGraphManifold,
        family: &DiscFamilyParams,
        cone: &'a ConeRegion,
        z: &[Complex64],
        w: &[Complex64],
        solver: SolverParams,
        tangential_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if cone.dimension() != family.len() {
            return Err(Error::SizeMismatch {
                expected: family.len(),
                found: cone.dimension(),
            });
        }
        Ok(Self {
            m,
            base: family_through(family, z, w),
            cone,
            target: z.iter().map(|c| c.im).collect(),
            solver,
            tangential_fraction,
            rng: sampling::rng(seed),
            last: None,
        })
    }

    /// Next point of `E_eta` inside the cone, or `None` when the projection
    /// failed for this attempt.
    pub fn next_point(&mut self) -> Result<Option<DiscFamilyParams>> {
        let tangential = self.last.is_some() && self.rng.random_bool(self.tangential_fraction);
        let start = if tangential {
            let last = self.last.clone().unwrap();
            let size = 0.3 * self.cone.scale_max() * self.rng.random_range(0.0..1.0);
            match tangential_move(self.m, &last, &self.solver, size, &mut self.rng)? {
                Some(s) => s,
                None => self.cone.sample_point(&mut self.rng, 0.05, 0.95),
            }
        } else {
            self.cone.sample_point(&mut self.rng, 0.05, 0.95)
        };
        let projected = project_to_level(self.m, &self.base.with_scales(start), &self.target, &self.solver)?;
        match projected {
            Some(p) if self.cone.contains(&p.scales) => {
                self.last = Some(p.clone());
                Ok(Some(p))
            }
            _ => Ok(None),
        }
    }
}

/// Searches the level set of discs through `(z, w)` for one whose boundary
/// clears `K` by at least the configured floor.
pub fn find_avoiding_disc(
    m: &CRGraphManifold,
    k: &ThinSet,
    z: &[Complex64],
    w: &[Complex64],
    family: &DiscFamilyParams,
    cone: &ConeRegion,
    certificate: Option<&WedgeCertificate>,
    options: &AvoidanceOptions,
) -> Result<AvoidanceOutcome> {
    if let Some(cert) = certificate {
        if !cert.contains(m, z, w) {
            return Err(Error::Precondition("target point lies outside the certified wedge".into()));
        }
    }
    let mut sampler = LevelSetSampler::new(m, family, cone, z, w, options.solver, options.tangential_fraction, options.seed)?;
    let mut best = f64::NEG_INFINITY;
    for attempt in 1..=options.budget {
        let Some(params) = sampler.next_point()? else { continue };
        let disc = match family_disc(m, &params, &options.solver) {
            Ok(d) => d,
            Err(_) => continue,
        };
        let clearance = k.clearance_of(&boundary_points(&disc));
        best = best.max(clearance);
        if clearance >= options.clearance_floor && clearance > 0.0 {
            return Ok(AvoidanceOutcome::Found {
                disc: DiscThrough { params, disc, clearance },
                attempts: attempt,
            });
        }
    }
    Ok(AvoidanceOutcome::BudgetExhausted {
        best_clearance: best,
        attempts: options.budget,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsotopyStep {
    pub s: f64,
    pub params: DiscFamilyParams,
    pub disc: AttachedDisc,
    pub clearance: f64,
}

/// Discs with scales `s t` and base point `x + (1 - s)(end_x - x)` for
/// `s = 1, ..., 0`. At `s = 0` the disc is the constant disc at
/// `(end_x, t_0 a_0)`, which must lie outside the tubes of `K`.
pub fn isotopy_path(
    m: &CRGraphManifold,
    k: &ThinSet,
    start: &DiscFamilyParams,
    end_x: &[f64],
    steps: usize,
    solver: &SolverParams,
) -> Result<Vec<IsotopyStep>> {
    if steps == 0 {
        return Err(Error::InvalidParameter("an isotopy needs at least one step".into()));
    }
    let w0: Vec<Complex64> = start.a0.iter().map(|a| a * start.t0).collect();
    let end = GraphPoint::new(end_x.to_vec(), w0);
    if k.clearance(&end) <= 0.0 {
        return Err(Error::Precondition("the end point of the isotopy lies inside the thin set's tube".into()));
    }
    let mut out = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let s = 1.0 - i as f64 / steps as f64;
        let mut p = start.with_scales(start.scales.iter().map(|t| t * s).collect());
        p.x = start.x.iter().zip(end_x).map(|(a, b)| a + (1.0 - s) * (b - a)).collect();
        let disc = family_disc(m, &p, solver)?;
        let clearance = k.clearance_of(&boundary_points(&disc));
        if !(clearance > 0.0) {
            return Err(Error::Verification(format!(
                "isotopy step {i} (s = {s}) has clearance {clearance:e}"
            )));
        }
        out.push(IsotopyStep {
            s,
            params: p,
            disc,
            clearance,
        });
    }
    Ok(out)
}

/// Chooses the isotopy end point: the disc's own base point when it is clear
/// of `K`, otherwise the candidate displacement in `x` whose path keeps the
/// largest minimum clearance.
pub fn choose_isotopy_end(
    m: &CRGraphManifold,
    k: &ThinSet,
    start: &DiscFamilyParams,
    steps: usize,
    solver: &SolverParams,
    seed: u64,
) -> Result<Vec<f64>> {
    let w0: Vec<Complex64> = start.a0.iter().map(|a| a * start.t0).collect();
    if k.clearance(&GraphPoint::new(start.x.clone(), w0.clone())) > 0.0
        && isotopy_path(m, k, start, &start.x, steps, solver).is_ok()
    {
        return Ok(start.x.clone());
    }
    let d = m.d();
    let mut rng = sampling::rng(seed);
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for l in 0..d {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[l] = sign;
            directions.push(e);
        }
    }
    for _ in 0..8 {
        let g = sampling::real_gaussian(&mut rng, d);
        let n = cone::norm(&g);
        directions.push(g.into_iter().map(|v| v / n).collect());
    }
    let reach = m.domain_radius() / 4.0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for dir in &directions {
        for frac in [0.1, 0.2, 0.4, 0.8] {
            let end: Vec<f64> = start.x.iter().zip(dir).map(|(x, u)| x + frac * reach * u).collect();
            if let Ok(path) = isotopy_path(m, k, start, &end, steps, solver) {
                let worst = path.iter().map(|s| s.clearance).fold(f64::INFINITY, f64::min);
                if best.as_ref().is_none_or(|(b, _)| worst > *b) {
                    best = Some((worst, end));
                }
            }
        }
    }
    best.map(|(_, e)| e)
        .ok_or_else(|| Error::Verification("no isotopy end point keeps the boundaries clear of K".into()))
}

/// Boundary values of a CR function on `M \ K`, evaluated at points
/// `(z, w)` of `C^n`.
pub trait BoundaryFunction {
    fn eval(&self, z: &[Complex64], w: &[Complex64]) -> core::result::Result<Complex64, String>;
}

/// Constant function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantFunction(pub Complex64);

impl BoundaryFunction for ConstantFunction {
    fn eval(&self, _: &[Complex64], _: &[Complex64]) -> core::result::Result<Complex64, String> {
        Ok(self.0)
    }
}

/// Restriction of a holomorphic polynomial `sum c z^alpha w^beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialFunction {
    pub terms: Vec<(Complex64, Vec<u32>, Vec<u32>)>,
}

impl PolynomialFunction {
    /// The coordinate function `z_index`.
    pub fn coordinate_z(d: usize, m: usize, index: usize) -> Self {
        let mut za = vec![0; d];
        za[index] = 1;
        Self {
            terms: vec![(Complex64::new(1.0, 0.0), za, vec![0; m])],
        }
    }

    pub fn eval_at(&self, z: &[Complex64], w: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(c, za, wb)| {
                let mut v = *c;
                for (zi, &k) in z.iter().zip(za) {
                    v *= zi.powu(k);
                }
                for (wi, &k) in w.iter().zip(wb) {
                    v *= wi.powu(k);
                }
                v
            })
            .sum()
    }
}

impl BoundaryFunction for PolynomialFunction {
    fn eval(&self, z: &[Complex64], w: &[Complex64]) -> core::result::Result<Complex64, String> {
        Ok(self.eval_at(z, w))
    }
}

/// `1 / l(z, w)` for an affine `l = c + sum alpha_i z_i + sum beta_j w_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReciprocalAffine {
    pub constant: Complex64,
    pub z_coefficients: Vec<Complex64>,
    pub w_coefficients: Vec<Complex64>,
}

impl ReciprocalAffine {
    /// `1 / z_index`.
    pub fn inverse_coordinate(d: usize, m: usize, index: usize) -> Self {
        let mut zc = vec![Complex64::new(0.0, 0.0); d];
        zc[index] = Complex64::new(1.0, 0.0);
        Self {
            constant: Complex64::new(0.0, 0.0),
            z_coefficients: zc,
            w_coefficients: vec![Complex64::new(0.0, 0.0); m],
        }
    }

    pub fn affine(&self, z: &[Complex64], w: &[Complex64]) -> Complex64 {
        let mut v = self.constant;
        for (a, zi) in self.z_coefficients.iter().zip(z) {
            v += a * zi;
        }
        for (b, wi) in self.w_coefficients.iter().zip(w) {
            v += b * wi;
        }
        v
    }
}

impl BoundaryFunction for ReciprocalAffine {
    fn eval(&self, z: &[Complex64], w: &[Complex64]) -> core::result::Result<Complex64, String> {
        let l = self.affine(z, w);
        if l.norm() < 1e-14 {
            return Err(format!("affine form vanishes (|l| = {:e})", l.norm()));
        }
        Ok(Complex64::new(1.0, 0.0) / l)
    }
}

impl<F: BoundaryFunction + ?Sized> BoundaryFunction for Box<F> {
    fn eval(&self, z: &[Complex64], w: &[Complex64]) -> core::result::Result<Complex64, String> {
        (**self).eval(z, w)
    }
}

/// Largest grid used when refining the boundary quadrature.
pub const MAX_QUADRATURE_GRID: usize = 1 << 16;

fn boundary_mean(f: &dyn BoundaryFunction, g: &FourierSeries, w: &FourierSeries) -> Result<Complex64> {
    let grid = g.grid();
    let gs = g.synthesize();
    let ws = w.synthesize();
    let (d, m, n) = (g.dim(), w.dim(), grid.size());
    let mut sum = Complex64::new(0.0, 0.0);
    for k in 0..n {
        sum += f
            .eval(&gs[k * d..(k + 1) * d], &ws[k * m..(k + 1) * m])
            .map_err(|message| Error::OracleFailure {
                phi: grid.angle(k),
                message,
            })?;
    }
    Ok(sum / n as f64)
}

/// Mean of `f` over the disc boundary: the Cauchy formula at `zeta = 0`.
///
/// The composite `f(G, W)` need not be band-limited, so the trapezoidal mean
/// is recomputed on successively doubled grids (exact resampling of `G` and
/// `W`) until two consecutive values agree to 1e-13 relative.
pub fn cauchy_extend(f: &dyn BoundaryFunction, disc: &AttachedDisc) -> Result<Complex64> {
    let mut g = disc.g.clone();
    let mut w = disc.w.clone();
    let mut value = boundary_mean(f, &g, &w)?;
    loop {
        let grid = g.grid().refined();
        if grid.size() > MAX_QUADRATURE_GRID {
            return Err(Error::NotConverged {
                iterations: grid.size(),
                residual: f64::NAN,
            });
        }
        g = g.resample(grid);
        w = w.resample(grid);
        let next = boundary_mean(f, &g, &w)?;
        let change = (next - value).norm();
        value = next;
        if change <= 1e-13 * (1.0 + value.norm()) {
            return Ok(value);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub values: Vec<Complex64>,
    pub scales: Vec<Vec<f64>>,
    pub clearances: Vec<f64>,
    pub max_deviation: f64,
    pub passed: bool,
}

/// Extension values at `(z, w)` from up to `trials` distinct discs of the
/// level set whose boundaries clear `K`.
pub fn consistency_check(
    f: &dyn BoundaryFunction,
    m: &CRGraphManifold,
    k: &ThinSet,
    z: &[Complex64],
    w: &[Complex64],
    family: &DiscFamilyParams,
    cone: &ConeRegion,
    trials: usize,
    tolerance: f64,
    options: &AvoidanceOptions,
) -> Result<ConsistencyReport> {
    let mut sampler = LevelSetSampler::new(m, family, cone, z, w, options.solver, options.tangential_fraction, options.seed)?;
    let mut values = Vec::new();
    let mut scales: Vec<Vec<f64>> = Vec::new();
    let mut clearances = Vec::new();
    for _ in 0..options.budget {
        if values.len() >= trials {
            break;
        }
        let Some(params) = sampler.next_point()? else { continue };
        if scales.iter().any(|s| cone::norm(&diff(s, &params.scales)) < 1e-6 * cone.scale_max()) {
            continue;
        }
        let Ok(disc) = family_disc(m, &params, &options.solver) else { continue };
        let clearance = k.clearance_of(&boundary_points(&disc));
        if !(clearance > 0.0 && clearance >= options.clearance_floor) {
            continue;
        }
        values.push(cauchy_extend(f, &disc)?);
        scales.push(params.scales.clone());
        clearances.push(clearance);
    }
    if values.len() < 2 {
        return Err(Error::Precondition(format!(
            "found {} disc(s) through the point with clear boundary; at least two are needed",
            values.len()
        )));
    }
    let mut max_deviation = 0.0f64;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            max_deviation = max_deviation.max((values[i] - values[j]).norm());
        }
    }
    Ok(ConsistencyReport {
        values,
        scales,
        clearances,
        max_deviation,
        passed: max_deviation < tolerance,
    })
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Fraction of sampled level-set discs whose boundary enters the tube of
/// radius `r` around the cores of `K`, for each `r` in `radii`.
pub fn hit_fractions(
    m: &CRGraphManifold,
    k: &ThinSet,
    z: &[Complex64],
    w: &[Complex64],
    family: &DiscFamilyParams,
    cone: &ConeRegion,
    samples: usize,
    radii: &[f64],
    options: &AvoidanceOptions,
) -> Result<(Vec<f64>, usize)> {
    let mut sampler = LevelSetSampler::new(m, family, cone, z, w, options.solver, options.tangential_fraction, options.seed)?;
    let mut hits = vec![0usize; radii.len()];
    let mut drawn = 0usize;
    let mut attempts = 0usize;
    while drawn < samples && attempts < samples.saturating_mul(20) {
        attempts += 1;
        let Some(params) = sampler.next_point()? else { continue };
        let Ok(disc) = family_disc(m, &params, &options.solver) else { continue };
        let dist = boundary_points(&disc)
            .iter()
            .map(|p| k.core_distance(p))
            .fold(f64::INFINITY, f64::min);
        for (h, r) in hits.iter_mut().zip(radii) {
            if dist < *r {
                *h += 1;
            }
        }
        drawn += 1;
    }
    if drawn == 0 {
        return Err(Error::Verification("no level-set samples could be drawn".into()));
    }
    Ok((hits.into_iter().map(|h| h as f64 / drawn as f64).collect(), drawn))
}

/// Angles of the solver grid, for reporting.
pub fn grid_angles(solver: &SolverParams) -> Vec<f64> {
    (0..solver.grid.size())
        .map(|k| 2.0 * PI * k as f64 / solver.grid.size() as f64)
        .collect()
}
