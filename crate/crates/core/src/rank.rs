//! Derivative matrices of the quadric disc family, their numerical rank, the
//! seeded search for maximal-rank parameters, patching over the circle and the
//! submersion check for perturbed manifolds.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::bishop::{self, SolverParams};
use crate::cone::ConeRegion;
use crate::error::{Error, Result};
use crate::geometry::{self, CRGraphManifold, QuadricForm};
use crate::harmonics::DISC_TOLERANCE;
use crate::quadric_discs::{self, DiscFamilyParams};
use crate::sampling;

/// Default relative singular-value threshold.
pub const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Rows `dW/dt_j`, `dW_bar/dt_j`, `d Re G / dt_j`, `d v(0) / dt_j`.
    M,
    /// The row-reduced form with `i P_j` in place of `d Re G / dt_j` and
    /// `t_j q(a_j, a_j_bar)` in place of `2 t_j q(a_j, a_j_bar)`.
    MPrime,
}

/// `2n x N` complex matrix with row blocks `(W, W_bar, Re G, v(0))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix {
    cr_dim: usize,
    codim: usize,
    cols: usize,
    zeta: Complex64,
    // row-major
    entries: Vec<Complex64>,
}

impl RankMatrix {
    /// Assembles a matrix from per-column blocks: `w[j]` (complex, length
    /// `n - d`), `reg[j]` and `v0[j]` (real, length `d`). The conjugate block is
    /// `conj(w[j])`.
    pub fn from_columns(zeta: Complex64, w: &[Vec<Complex64>], reg: &[Vec<f64>], v0: &[Vec<f64>]) -> Result<Self> {
        let cols = w.len();
        if cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        if reg.len() != cols || v0.len() != cols {
            return Err(Error::SizeMismatch {
                expected: cols,
                found: reg.len().min(v0.len()),
            });
        }
        let cr_dim = w[0].len();
        let codim = reg[0].len();
        let rows = 2 * cr_dim + 2 * codim;
        let mut entries = vec![Complex64::new(0.0, 0.0); rows * cols];
        for j in 0..cols {
            if w[j].len() != cr_dim || reg[j].len() != codim || v0[j].len() != codim {
                return Err(Error::SizeMismatch {
                    expected: rows,
                    found: 2 * w[j].len() + reg[j].len() + v0[j].len(),
                });
            }
            for r in 0..cr_dim {
                entries[r * cols + j] = w[j][r];
                entries[(cr_dim + r) * cols + j] = w[j][r].conj();
            }
            for l in 0..codim {
                entries[(2 * cr_dim + l) * cols + j] = Complex64::new(reg[j][l], 0.0);
                entries[(2 * cr_dim + codim + l) * cols + j] = Complex64::new(v0[j][l], 0.0);
            }
        }
        Ok(Self {
            cr_dim,
            codim,
            cols,
            zeta,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        2 * (self.cr_dim + self.codim)
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn zeta(&self) -> Complex64 {
        self.zeta
    }

    /// Maximal possible rank `2n`.
    pub fn full_rank(&self) -> usize {
        self.rows()
    }

    pub fn entry(&self, r: usize, c: usize) -> Complex64 {
        self.entries[r * self.cols + c]
    }

    pub fn complex_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.rows(), self.cols, &self.entries)
    }

    /// Real `2n x N` matrix: real and imaginary parts of the `W` block
    /// followed by the `Re G` and `v(0)` blocks. Its real rank equals the
    /// complex rank of the full matrix because the first two blocks are
    /// conjugate to each other.
    pub fn realified(&self) -> DMatrix<f64> {
        let m = self.cr_dim;
        DMatrix::from_fn(self.rows(), self.cols, |r, c| {
            if r < m {
                self.entry(r, c).re
            } else if r < 2 * m {
                self.entry(r - m, c).im
            } else {
                self.entry(r, c).re
            }
        })
    }

    /// Largest deviation of the second block from the conjugate of the first.
    pub fn conjugate_block_defect(&self) -> f64 {
        let m = self.cr_dim;
        let mut worst = 0.0f64;
        for r in 0..m {
            for c in 0..self.cols {
                worst = worst.max((self.entry(m + r, c) - self.entry(r, c).conj()).norm());
            }
        }
        worst
    }

    /// Largest imaginary part in the real blocks.
    pub fn real_block_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 2 * self.cr_dim..self.rows() {
            for c in 0..self.cols {
                worst = worst.max(self.entry(r, c).im.abs());
            }
        }
        worst
    }

    /// Rows of the `v(0)` block as real vectors.
    pub fn v0_block(&self) -> Vec<Vec<f64>> {
        let start = 2 * self.cr_dim + self.codim;
        (0..self.codim)
            .map(|l| (0..self.cols).map(|c| self.entry(start + l, c).re).collect())
            .collect()
    }

    /// Rows of the `Re G` block as real vectors.
    pub fn reg_block(&self) -> Vec<Vec<f64>> {
        let start = 2 * self.cr_dim;
        (0..self.codim)
            .map(|l| (0..self.cols).map(|c| self.entry(start + l, c).re).collect())
            .collect()
    }
}

fn check_unit(zeta: Complex64) -> Result<()> {
    if (zeta.norm() - 1.0).abs() > DISC_TOLERANCE {
        return Err(Error::InvalidParameter(format!("|zeta| = {} is not on the unit circle", zeta.norm())));
    }
    Ok(())
}

/// `P_j = 2 sum_{k<j} t_k (q(a_j, a_k_bar) zeta^(j-k) - q(a_k, a_j_bar) zeta^(k-j))`,
/// purely imaginary on the unit circle. The sum includes the base term
/// `k = 0`.
pub fn build_p(q: &QuadricForm, params: &DiscFamilyParams, j: usize, zeta: Complex64) -> Result<Vec<Complex64>> {
    check_unit(zeta)?;
    if j == 0 || j > params.len() {
        return Err(Error::InvalidParameter(format!("column index {j} outside 1..={}", params.len())));
    }
    let aj = params.direction(j);
    let mut out = vec![Complex64::new(0.0, 0.0); q.codim()];
    for k in 0..j {
        let tk = params.scale(k);
        if tk == 0.0 {
            continue;
        }
        let ak = params.direction(k);
        let fwd = zeta.powi((j - k) as i32);
        let bwd = fwd.conj();
        for ((o, x), y) in out.iter_mut().zip(q.eval(aj, ak)).zip(q.eval(ak, aj)) {
            *o += 2.0 * tk * (x * fwd - y * bwd);
        }
    }
    Ok(out)
}

/// The derivative matrix of the quadric family at `zeta`. Column `j`
/// (`j = 1..=N`) holds `(a_j zeta^j, conj(a_j zeta^j), r_j, c t_j q(a_j, a_j_bar))`
/// with `r_j = d Re G / dt_j`, `c = 2` for [`Variant::M`] and `r_j = i P_j`,
/// `c = 1` for [`Variant::MPrime`].
pub fn build_matrix(q: &QuadricForm, params: &DiscFamilyParams, zeta: Complex64, variant: Variant) -> Result<RankMatrix> {
    check_unit(zeta)?;
    let n = params.len();
    let mut w = Vec::with_capacity(n);
    let mut reg = Vec::with_capacity(n);
    let mut v0 = Vec::with_capacity(n);
    let i = Complex64::new(0.0, 1.0);
    for j in 1..=n {
        let p = zeta.powi(j as i32);
        w.push(params.direction(j).iter().map(|a| a * p).collect());
        match variant {
            Variant::M => {
                reg.push(quadric_discs::d_re_g_dt(q, params, j, zeta)?);
                v0.push(quadric_discs::dv0_dt(q, params, j)?);
            }
            Variant::MPrime => {
                reg.push(build_p(q, params, j, zeta)?.into_iter().map(|z| (i * z).re).collect());
                let t = params.scale(j);
                v0.push(q.eval_real(params.direction(j)).into_iter().map(|v| t * v).collect());
            }
        }
    }
    RankMatrix::from_columns(zeta, &w, &reg, &v0)
}

/// `M'` at many points of the circle for one family: the pairings
/// `q(a_j, a_k_bar)` are computed once.
struct PrimeEvaluator<'a> {
    params: &'a DiscFamilyParams,
    // pairs[j][k] = q(a_j, a_k_bar), j, k in 0..=N
    pairs: Vec<Vec<Vec<Complex64>>>,
}

impl<'a> PrimeEvaluator<'a> {
    fn new(q: &QuadricForm, params: &'a DiscFamilyParams) -> Self {
        let n = params.len();
        let pairs = (0..=n)
            .map(|j| (0..=n).map(|k| q.eval(params.direction(j), params.direction(k))).collect())
            .collect();
        Self { params, pairs }
    }

    fn matrix(&self, zeta: Complex64) -> Result<RankMatrix> {
        let p = self.params;
        let n = p.len();
        let powers: Vec<Complex64> = (0..=n).scan(Complex64::new(1.0, 0.0), |acc, _| {
            let cur = *acc;
            *acc *= zeta;
            Some(cur)
        }).collect();
        let d = self.pairs[0][0].len();
        let mut w = Vec::with_capacity(n);
        let mut reg = Vec::with_capacity(n);
        let mut v0 = Vec::with_capacity(n);
        for j in 1..=n {
            w.push(p.direction(j).iter().map(|a| a * powers[j]).collect());
            // i P_j = -Im P_j
            let mut r = vec![0.0; d];
            for k in 0..j {
                let tk = p.scale(k);
                if tk == 0.0 {
                    continue;
                }
                let fwd = powers[j - k];
                for l in 0..d {
                    let pj = 2.0 * tk * (self.pairs[j][k][l] * fwd - self.pairs[k][j][l] * fwd.conj());
                    r[l] -= pj.im;
                }
            }
            reg.push(r);
            let t = p.scale(j);
            v0.push(self.pairs[j][j].iter().map(|v| t * v.re).collect());
        }
        RankMatrix::from_columns(zeta, &w, &reg, &v0)
    }
}

/// Singular values of the realified matrix, largest first.
pub fn singular_values(mat: &RankMatrix) -> Vec<f64> {
    sorted_singular_values(mat.realified())
}

fn sorted_singular_values(a: DMatrix<f64>) -> Vec<f64> {
    let a = if a.nrows() < a.ncols() { a.transpose() } else { a };
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Rows below this fraction of the largest entry are treated as exact zeros
/// before equilibration.
const ZERO_ROW_FRACTION: f64 = 1e-13;

/// Realified matrix with every row scaled to unit max-norm. Diagonal
/// scaling preserves rank and makes the result invariant under `t -> lambda t`.
pub fn equilibrated(mat: &RankMatrix) -> DMatrix<f64> {
    let mut a = mat.realified();
    let global = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for r in 0..a.nrows() {
        let row_max = a.row(r).iter().map(|v| v.abs()).fold(0.0, f64::max);
        if row_max <= ZERO_ROW_FRACTION * global || row_max == 0.0 {
            a.row_mut(r).fill(0.0);
        } else {
            a.row_mut(r).scale_mut(1.0 / row_max);
        }
    }
    a
}

/// Number of singular values of the row-equilibrated realified matrix above
/// `tol` times the largest one.
pub fn numerical_rank(mat: &RankMatrix, tol: f64) -> Result<usize> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidParameter(format!("rank tolerance {tol} must lie in (0, 1)")));
    }
    if mat.cols() == 0 || mat.rows() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let s = sorted_singular_values(equilibrated(mat));
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v > tol * top).count())
}

/// `sigma_{2n} / sigma_1` of the row-equilibrated realified matrix.
pub fn relative_margin(mat: &RankMatrix) -> f64 {
    rank_and_margin(mat, RANK_TOLERANCE).1
}

fn rank_and_margin(mat: &RankMatrix, tol: f64) -> (usize, f64) {
    let s = sorted_singular_values(equilibrated(mat));
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return (0, 0.0);
    }
    let rank = s.iter().filter(|&&v| v > tol * top).count();
    let low = s.get(mat.full_rank() - 1).copied().unwrap_or(0.0);
    (rank, low / top)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub budget: usize,
    pub tolerance: f64,
    /// Probability of proposing `a_j = i a_(j-1)`.
    pub pair_bias: f64,
    /// Consecutive rejections after which the greedy build restarts.
    pub restart_after: usize,
    pub hull_samples: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            budget: 10_000,
            tolerance: RANK_TOLERANCE,
            pair_bias: 0.5,
            restart_after: 200,
            hull_samples: geometry::MIN_HULL_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchOutcome {
    Found {
        params: DiscFamilyParams,
        rank: usize,
        attempts: usize,
    },
    /// The convex hull of the quadric's image has empty interior, so no
    /// parameters can reach maximal rank.
    HullPrecondition,
    BudgetExhausted {
        best_rank: usize,
        attempts: usize,
    },
}

impl SearchOutcome {
    pub fn params(&self) -> Option<&DiscFamilyParams> {
        match self {
            Self::Found { params, .. } => Some(params),
            _ => None,
        }
    }
}

/// Greedy seeded search for `(b, s)` with `rank M'(b, zeta, s) = 2n`: random
/// columns are appended only when they raise the rank.
pub fn search_max_rank_at(q: &QuadricForm, zeta: Complex64, seed: u64, options: &SearchOptions) -> Result<SearchOutcome> {
    check_unit(zeta)?;
    let report = geometry::quadric_hull_report(q, options.hull_samples, seed);
    if !report.hull_has_interior {
        return Ok(SearchOutcome::HullPrecondition);
    }
    let m = q.cr_dim();
    let d = q.codim();
    let full = 2 * (m + d);
    let mut rng = sampling::rng(seed ^ 0x5eed_0001);
    let zero = vec![Complex64::new(0.0, 0.0); m];
    let mut directions: Vec<Vec<Complex64>> = Vec::new();
    let mut scales: Vec<f64> = Vec::new();
    let mut rank = 0;
    let mut best = 0;
    let mut rejections = 0;
    for attempt in 1..=options.budget {
        let a = match directions.last() {
            Some(prev) if rng.random_bool(options.pair_bias) => prev.iter().map(|z| z * Complex64::new(0.0, 1.0)).collect(),
            _ => sampling::complex_unit(&mut rng, m),
        };
        let t = rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut cand_dirs = directions.clone();
        cand_dirs.push(a);
        let mut cand_scales = scales.clone();
        cand_scales.push(t);
        let params = DiscFamilyParams::new(vec![0.0; d], zero.clone(), cand_dirs, cand_scales)?;
        let r = numerical_rank(&build_matrix(q, &params, zeta, Variant::MPrime)?, options.tolerance)?;
        if r > rank {
            rank = r;
            best = best.max(r);
            directions = params.directions.clone();
            scales = params.scales.clone();
            rejections = 0;
            if rank == full {
                return Ok(SearchOutcome::Found {
                    params,
                    rank,
                    attempts: attempt,
                });
            }
        } else {
            rejections += 1;
            if rejections >= options.restart_after {
                directions.clear();
                scales.clear();
                rank = 0;
                rejections = 0;
            }
        }
    }
    Ok(SearchOutcome::BudgetExhausted {
        best_rank: best,
        attempts: options.budget,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchOptions {
    /// Number `k` of sample points `exp(2 pi i m / k)` covering the circle.
    pub circle_samples: usize,
    /// Growth factor `theta_(m+1) / theta_m` of the scale ladder.
    pub ladder_ratio: f64,
    /// Size of the verification grid on the circle.
    pub fine_grid: usize,
    pub bisection_steps: usize,
    pub rays: usize,
    pub search: SearchOptions,
}

impl Default for PatchOptions {
    fn default() -> Self {
        Self {
            circle_samples: 8,
            ladder_ratio: 100.0,
            fine_grid: 720,
            bisection_steps: 10,
            rays: 32,
            search: SearchOptions::default(),
        }
    }
}

/// Bound on `|d M / d phi|` over the circle against the grid spacing:
/// when `lipschitz * spacing < min_sigma / 2` no rank drop can hide between
/// grid nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityCertificate {
    pub lipschitz: f64,
    pub spacing: f64,
    pub min_sigma: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchResult {
    pub params: DiscFamilyParams,
    pub cone: ConeRegion,
    /// Sample points used for the blocks, as angles.
    pub sample_angles: Vec<f64>,
    /// Number of columns contributed by each block.
    pub block_sizes: Vec<usize>,
    pub min_rank: usize,
    /// Smallest `sigma_{2n} / sigma_1` of the equilibrated matrix on the grid.
    pub min_margin: f64,
    pub worst_angle: f64,
    pub continuity: ContinuityCertificate,
}

/// Rank of the family on `grid` equally spaced points; returns the minimal
/// rank, its angle and the smallest relative margin.
pub fn rank_on_circle(q: &QuadricForm, params: &DiscFamilyParams, grid: usize, tol: f64) -> Result<(usize, f64, f64)> {
    let eval = PrimeEvaluator::new(q, params);
    let mut worst = (usize::MAX, 0.0, f64::INFINITY);
    for k in 0..grid {
        let phi = 2.0 * PI * k as f64 / grid as f64;
        let zeta = Complex64::from_polar(1.0, phi);
        let mat = eval.matrix(zeta)?;
        let (r, margin) = rank_and_margin(&mat, tol);
        if r < worst.0 || (r == worst.0 && margin < worst.2) {
            worst = (r, phi, margin.min(worst.2));
        } else {
            worst.2 = worst.2.min(margin);
        }
    }
    Ok(worst)
}

/// Concatenates maximal-rank solutions found at `k` points of the circle into
/// one family with a geometric scale ladder, verifies maximal rank on a fine
/// grid and fits a cone of scale vectors around the representative.
pub fn patch_over_circle(q: &QuadricForm, seed: u64, options: &PatchOptions) -> Result<PatchResult> {
    let k = options.circle_samples.max(1);
    if !(options.ladder_ratio >= 1.0) {
        return Err(Error::InvalidParameter("ladder ratio must be at least 1".into()));
    }
    let m = q.cr_dim();
    let d = q.codim();
    let full = 2 * (m + d);
    let mut directions = Vec::new();
    let mut scales = Vec::new();
    let mut block_sizes = Vec::new();
    let mut angles = Vec::new();
    for block in 0..k {
        let phi = 2.0 * PI * block as f64 / k as f64;
        angles.push(phi);
        let zeta = Complex64::from_polar(1.0, phi);
        let outcome = search_max_rank_at(q, zeta, seed.wrapping_add(block as u64), &options.search)?;
        let found = match outcome {
            SearchOutcome::Found { params, .. } => params,
            SearchOutcome::HullPrecondition => {
                return Err(Error::Precondition("the convex hull of the quadric's image has empty interior".into()))
            }
            SearchOutcome::BudgetExhausted { best_rank, .. } => {
                return Err(Error::RankDeficient {
                    phi,
                    rank: best_rank,
                    expected: full,
                })
            }
        };
        let theta = libm::pow(options.ladder_ratio, -((k - 1 - block) as f64));
        block_sizes.push(found.len());
        directions.extend(found.directions.iter().cloned());
        scales.extend(found.scales.iter().map(|s| s * theta));
    }
    let params = DiscFamilyParams::new(vec![0.0; d], vec![Complex64::new(0.0, 0.0); m], directions, scales)?;
    let tol = options.search.tolerance;
    let (min_rank, worst_angle, min_margin) = rank_on_circle(q, &params, options.fine_grid, tol)?;
    if min_rank < full {
        return Err(Error::RankDeficient {
            phi: worst_angle,
            rank: min_rank,
            expected: full,
        });
    }

    let t_star = params.scales.clone();
    let t_norm = libm::sqrt(t_star.iter().map(|t| t * t).sum());
    let axis_cone = ConeRegion::new(t_star.clone(), 1e-3, 2.0 * t_norm)?;
    let mut rng = sampling::rng(seed ^ 0xc0_4e);
    let passes = |angle: f64, rng: &mut sampling::SeededRng| -> Result<bool> {
        for ray in axis_cone.with_half_angle(angle)?.boundary_probes(rng, options.rays) {
            let trial = params.with_scales(ray.iter().map(|r| r * t_norm).collect());
            if rank_on_circle(q, &trial, options.fine_grid, tol)?.0 < full {
                return Ok(false);
            }
        }
        Ok(true)
    };
    let (mut lo, mut hi) = (0.0, FRAC_PI_2);
    for _ in 0..options.bisection_steps {
        let mid = 0.5 * (lo + hi);
        if passes(mid, &mut rng)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let half_angle = if lo > 0.0 { lo } else { 0.5 * hi };
    let cone = ConeRegion::new(t_star, half_angle, 2.0 * t_norm)?;
    let continuity = continuity_certificate(q, &params, options.fine_grid)?;
    Ok(PatchResult {
        params,
        cone,
        sample_angles: angles,
        block_sizes,
        min_rank,
        min_margin,
        worst_angle,
        continuity,
    })
}

/// Lipschitz bound for the fixed-scaled `M'` as a trigonometric polynomial in
/// `phi`, compared with its smallest `sigma_{2n}` on a grid of `grid` points.
pub fn continuity_certificate(q: &QuadricForm, params: &DiscFamilyParams, grid: usize) -> Result<ContinuityCertificate> {
    let m = q.cr_dim();
    let d = q.codim();
    let n_cols = params.len();
    let rows = 2 * (m + d);
    // Entry-wise sup bounds (for the fixed row scaling) and phi-derivative bounds.
    let mut sup = DMatrix::<f64>::zeros(rows, n_cols);
    let mut deriv = DMatrix::<f64>::zeros(rows, n_cols);
    for j in 1..=n_cols {
        let c = j - 1;
        for (r, a) in params.direction(j).iter().enumerate() {
            sup[(r, c)] = a.norm();
            sup[(m + r, c)] = a.norm();
            deriv[(r, c)] = j as f64 * a.norm();
            deriv[(m + r, c)] = j as f64 * a.norm();
        }
        let aj = params.direction(j);
        for k in 0..j {
            let tk = params.scale(k).abs();
            for (l, (x, y)) in q.eval(aj, params.direction(k)).iter().zip(q.eval(params.direction(k), aj)).enumerate() {
                let b = 2.0 * tk * (x.norm() + y.norm());
                sup[(2 * m + l, c)] += b;
                deriv[(2 * m + l, c)] += (j - k) as f64 * b;
            }
        }
        for (l, v) in q.eval_real(aj).iter().enumerate() {
            sup[(2 * m + d + l, c)] = (params.scale(j) * v).abs();
        }
    }
    let scale: Vec<f64> = (0..rows)
        .map(|r| {
            let s = sup.row(r).iter().fold(0.0, |a: f64, &b| a.max(b));
            if s > 0.0 {
                1.0 / s
            } else {
                0.0
            }
        })
        .collect();
    let mut lipschitz = 0.0;
    for r in 0..rows {
        for c in 0..n_cols {
            let v = deriv[(r, c)] * scale[r];
            lipschitz += v * v;
        }
    }
    let lipschitz = libm::sqrt(lipschitz);
    let eval = PrimeEvaluator::new(q, params);
    let mut min_sigma = f64::INFINITY;
    for k in 0..grid {
        let zeta = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / grid as f64);
        let mut a = eval.matrix(zeta)?.realified();
        for r in 0..rows {
            a.row_mut(r).scale_mut(scale[r]);
        }
        let s = sorted_singular_values(a);
        min_sigma = min_sigma.min(s.get(rows - 1).copied().unwrap_or(0.0));
    }
    let spacing = 2.0 * PI / grid as f64;
    Ok(ContinuityCertificate {
        lipschitz,
        spacing,
        min_sigma,
        certified: lipschitz * spacing < 0.5 * min_sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    /// Closed-form derivatives; only valid for quadric manifolds.
    Exact,
    /// Central finite differences of solved discs.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubmersionOptions {
    pub solver: SolverParams,
    /// Finite-difference step relative to `max |t_j|`.
    pub relative_step: f64,
    pub sigma_floor: f64,
    /// `None` picks exact derivatives for quadrics and finite differences
    /// otherwise.
    pub mode: Option<JacobianMode>,
}

impl Default for SubmersionOptions {
    fn default() -> Self {
        Self {
            solver: SolverParams {
                tolerance: 1e-13,
                ..SolverParams::default()
            },
            relative_step: 1e-4,
            sigma_floor: 1e-6,
            mode: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmersionNode {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    /// `sigma_{2n}` at every angle of the circle grid.
    pub sigmas: Vec<f64>,
    pub min_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmersionReport {
    pub nodes: Vec<SubmersionNode>,
    pub min_sigma: f64,
    pub mode: JacobianMode,
    pub passed: bool,
}

/// Unequilibrated derivative matrix at base point `x` and scales `t`, for each
/// angle in `zetas`.
pub fn submersion_matrices(
    m: &CRGraphManifold,
    family: &DiscFamilyParams,
    x: &[f64],
    t: &[f64],
    zetas: &[Complex64],
    mode: JacobianMode,
    options: &SubmersionOptions,
) -> Result<Vec<RankMatrix>> {
    let mut params = family.with_scales(t.to_vec());
    params.x = x.to_vec();
    let n = params.len();
    let q = m.quadric();
    if mode == JacobianMode::Exact {
        if !m.is_quadric() {
            return Err(Error::InvalidParameter("exact derivatives need a quadric manifold".into()));
        }
        return zetas.iter().map(|&z| build_matrix(q, &params, z, Variant::M)).collect();
    }
    let scale = t.iter().fold(0.0, |a: f64, b| a.max(b.abs())).max(1e-300);
    let h = options.relative_step * scale;
    let grid = options.solver.grid;
    let mut reg: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(n); zetas.len()];
    let mut v0 = Vec::with_capacity(n);
    for j in 0..n {
        let mut plus = t.to_vec();
        plus[j] += h;
        let mut minus = t.to_vec();
        minus[j] -= h;
        let solve = |scales: Vec<f64>| -> Result<bishop::AttachedDisc> {
            let p = params.with_scales(scales);
            let w = p.w_series(grid)?;
            bishop::solve_bishop(m, &w, x, &options.solver)
        };
        let dp = solve(plus)?;
        let dm = solve(minus)?;
        for (zi, &z) in zetas.iter().enumerate() {
            let gp = dp.g.evaluate_on_circle(z);
            let gm = dm.g.evaluate_on_circle(z);
            reg[zi].push(gp.iter().zip(&gm).map(|(a, b)| (a.re - b.re) / (2.0 * h)).collect());
        }
        let cp = dp.g.coefficient(0).unwrap();
        let cm = dm.g.coefficient(0).unwrap();
        v0.push(cp.iter().zip(cm).map(|(a, b)| (a.im - b.im) / (2.0 * h)).collect::<Vec<f64>>());
    }
    zetas
        .iter()
        .zip(reg)
        .map(|(&z, r)| {
            let w: Vec<Vec<Complex64>> = (1..=n)
                .map(|j| {
                    let p = z.powi(j as i32);
                    params.direction(j).iter().map(|a| a * p).collect()
                })
                .collect();
            RankMatrix::from_columns(z, &w, &r, &v0)
        })
        .collect()
}

/// `sigma_{2n}` of the unequilibrated realified matrix.
pub fn lowest_sigma(mat: &RankMatrix) -> f64 {
    let s = singular_values(mat);
    s.get(mat.full_rank() - 1).copied().unwrap_or(0.0)
}

/// One `(x, t)` node of the submersion check.
pub fn submersion_node(
    m: &CRGraphManifold,
    family: &DiscFamilyParams,
    x: &[f64],
    t: &[f64],
    zetas: &[Complex64],
    options: &SubmersionOptions,
) -> Result<SubmersionNode> {
    let mode = resolve_mode(m, options);
    let mats = submersion_matrices(m, family, x, t, zetas, mode, options)?;
    let sigmas: Vec<f64> = mats.iter().map(lowest_sigma).collect();
    let min_sigma = sigmas.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SubmersionNode {
        x: x.to_vec(),
        t: t.to_vec(),
        sigmas,
        min_sigma,
    })
}

fn resolve_mode(m: &CRGraphManifold, options: &SubmersionOptions) -> JacobianMode {
    options.mode.unwrap_or(if m.is_quadric() {
        JacobianMode::Exact
    } else {
        JacobianMode::FiniteDifference
    })
}

/// Minimum `sigma_{2n}` of the disc map's derivative over the grid
/// `x_grid x t_grid x zetas`. Every `t` must lie in `cone`.
pub fn verify_submersion(
    m: &CRGraphManifold,
    family: &DiscFamilyParams,
    cone: &ConeRegion,
    x_grid: &[Vec<f64>],
    t_grid: &[Vec<f64>],
    zetas: &[Complex64],
    options: &SubmersionOptions,
) -> Result<SubmersionReport> {
    for t in t_grid {
        if !cone.contains(t) {
            return Err(Error::Precondition("scale vector outside the parameter cone".into()));
        }
    }
    let nodes = x_grid
        .iter()
        .flat_map(|x| t_grid.iter().map(move |t| (x, t)))
        .map(|(x, t)| submersion_node(m, family, x, t, zetas, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_submersion(nodes, resolve_mode(m, options), options.sigma_floor))
}

pub fn summarize_submersion(nodes: Vec<SubmersionNode>, mode: JacobianMode, floor: f64) -> SubmersionReport {
    let min_sigma = nodes.iter().map(|n| n.min_sigma).fold(f64::INFINITY, f64::min);
    SubmersionReport {
        passed: min_sigma > floor,
        nodes,
        min_sigma,
        mode,
    }
}

/// `k` equally spaced points of the unit circle.
pub fn circle_points(k: usize) -> Vec<Complex64> {
    (0..k)
        .map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / k as f64))
        .collect()
}

/// The axis of `cone` together with `count - 1` seeded rays at half its
/// half-angle, each scaled to `magnitude`.
pub fn cone_rays(cone: &ConeRegion, count: usize, magnitude: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = sampling::rng(seed);
    let mut out = vec![cone.axis().iter().map(|a| a * magnitude).collect::<Vec<f64>>()];
    let inner = cone.with_half_angle(0.5 * cone.half_angle()).unwrap_or_else(|_| cone.clone());
    while out.len() < count {
        let towards = sampling::real_gaussian(&mut rng, cone.dimension());
        let ray = inner.ray_at_angle(inner.half_angle(), &towards);
        out.push(ray.into_iter().map(|r| r * magnitude).collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn family(dirs: Vec<Vec<Complex64>>, scales: Vec<f64>) -> DiscFamilyParams {
        let m = dirs[0].len();
        DiscFamilyParams::new(vec![0.0], vec![c(0.0, 0.0); m], dirs, scales).unwrap()
    }

    #[test]
    fn p_examples() {
        let q = QuadricForm::lewy();
        let p = family(vec![vec![c(1.0, 0.0)], vec![c(1.0, 0.0)]], vec![1.0, 1.0]);
        assert_eq!(build_p(&q, &p, 1, c(1.0, 0.0)).unwrap(), vec![c(0.0, 0.0)]);
        assert!(build_p(&q, &p, 2, c(1.0, 0.0)).unwrap()[0].norm() < 1e-15);
        assert!((build_p(&q, &p, 2, c(0.0, 1.0)).unwrap()[0] - c(0.0, 4.0)).norm() < 1e-15);
    }

    #[test]
    fn single_column_matrix() {
        let q = QuadricForm::lewy();
        let p = family(vec![vec![c(1.0, 0.0)]], vec![1.0]);
        let mat = build_matrix(&q, &p, c(1.0, 0.0), Variant::MPrime).unwrap();
        let col: Vec<Complex64> = (0..4).map(|r| mat.entry(r, 0)).collect();
        assert_eq!(col, vec![c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(numerical_rank(&mat, RANK_TOLERANCE).unwrap(), 1);
    }

    #[test]
    fn cached_evaluator_matches_direct_build() {
        let q = QuadricForm::diagonal(&[vec![1.0, 0.5], vec![0.2, -1.0]]).unwrap();
        let mut rng = sampling::rng(4);
        let dirs: Vec<Vec<Complex64>> = (0..5).map(|_| sampling::complex_gaussian(&mut rng, 2)).collect();
        let p = DiscFamilyParams::new(vec![0.0, 0.0], vec![c(0.3, -0.2), c(0.1, 0.0)], dirs, vec![0.4, -1.0, 0.7, 0.2, 1.1]).unwrap();
        let eval = PrimeEvaluator::new(&q, &p);
        for zeta in circle_points(7) {
            let a = build_matrix(&q, &p, zeta, Variant::MPrime).unwrap().realified();
            let b = eval.matrix(zeta).unwrap().realified();
            assert!((a - b).abs().max() < 1e-14);
        }
    }

    #[test]
    fn zero_scales_kill_real_rows() {
        let q = QuadricForm::lewy();
        let p = family(vec![vec![c(0.3, 0.1)], vec![c(-1.0, 0.5)]], vec![0.0, 0.0]);
        let mat = build_matrix(&q, &p, c(0.0, 1.0), Variant::MPrime).unwrap();
        assert!(mat.reg_block().iter().flatten().all(|v| *v == 0.0));
        assert!(mat.v0_block().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn search_lewy() {
        let q = QuadricForm::lewy();
        let out = search_max_rank_at(&q, c(1.0, 0.0), 1, &SearchOptions::default()).unwrap();
        match out {
            SearchOutcome::Found { params, rank, .. } => {
                assert_eq!(rank, 4);
                assert!(params.len() <= 8);
            }
            other => panic!("search failed: {other:?}"),
        }
        let zero = QuadricForm::zero(1, 1);
        assert_eq!(
            search_max_rank_at(&zero, c(1.0, 0.0), 1, &SearchOptions::default()).unwrap(),
            SearchOutcome::HullPrecondition
        );
    }
}
