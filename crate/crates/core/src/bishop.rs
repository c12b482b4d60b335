//! Bishop's equation `u = -T(h(u, W)) + x` on the discretised circle and the
//! analytic discs it attaches to a graph manifold.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::CRGraphManifold;
use crate::harmonics::{self, CircleGrid, FourierSeries};

/// Boundary residual required, on top of a small iterate change, before an
/// iteration counts as converged.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub grid: CircleGrid,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub damping: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            grid: CircleGrid::default(),
            max_iterations: 500,
            tolerance: 1e-11,
            damping: 1.0,
        }
    }
}

impl SolverParams {
    pub fn with_grid(grid: CircleGrid) -> Self {
        Self {
            grid,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("solver tolerance must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter("damping must lie in (0, 1]".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiscDiagnostics {
    pub boundary_residual: f64,
    pub center_residual: f64,
    pub analyticity_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Analytic disc `A = (G, W)` whose boundary lies in the manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct AttachedDisc {
    pub w: FourierSeries,
    pub g: FourierSeries,
    pub base_x: Vec<f64>,
    pub diagnostics: DiscDiagnostics,
}

impl AttachedDisc {
    /// Boundary values `(Re G, W)` at the grid nodes, in graph coordinates.
    pub fn boundary_graph_points(&self) -> (Vec<f64>, Vec<Complex64>) {
        let g = self.g.synthesize();
        (g.iter().map(|z| z.re).collect(), self.w.synthesize())
    }
}

/// Solves Bishop's equation starting from `u = x`.
pub fn solve_bishop(m: &CRGraphManifold, w: &FourierSeries, x: &[f64], params: &SolverParams) -> Result<AttachedDisc> {
    solve_bishop_from(m, w, x, None, params)
}

/// Solves Bishop's equation from an optional initial boundary iterate `u0`
/// (node-major, `d` values per node).
pub fn solve_bishop_from(
    m: &CRGraphManifold,
    w: &FourierSeries,
    x: &[f64],
    u0: Option<&[f64]>,
    params: &SolverParams,
) -> Result<AttachedDisc> {
    params.validate()?;
    let d = m.d();
    let cm = m.cr_dim();
    let grid = params.grid;
    let n = grid.size();
    if x.len() != d {
        return Err(Error::SizeMismatch { expected: d, found: x.len() });
    }
    if w.dim() != cm {
        return Err(Error::SizeMismatch {
            expected: cm,
            found: w.dim(),
        });
    }
    let content = w.negative_content();
    if content > harmonics::ANALYTIC_TOLERANCE {
        return Err(Error::NotAnalytic { content });
    }
    let w = if w.grid() == grid { w.clone() } else { w.resample(grid) };
    let w_nodes = w.synthesize();
    let radius = m.domain_radius();
    for node in 0..n {
        let wn = &w_nodes[node * cm..(node + 1) * cm];
        if CRGraphManifold::point_norm(&[], wn) > radius {
            return Err(Error::DomainEscape { iteration: 0, node });
        }
    }
    if !m.in_domain(x, &vec![Complex64::new(0.0, 0.0); cm]) {
        let norm = CRGraphManifold::point_norm(x, &[]);
        return Err(Error::OutOfDomain { norm, radius });
    }

    let mut u: Vec<f64> = match u0 {
        Some(init) => {
            if init.len() != n * d {
                return Err(Error::SizeMismatch {
                    expected: n * d,
                    found: init.len(),
                });
            }
            init.to_vec()
        }
        None => (0..n).flat_map(|_| x.iter().copied()).collect(),
    };
    let mut v = vec![0.0; n * d];
    let mut target = vec![0.0; n * d];
    let mut h_buf = vec![0.0; d];
    let mut last = f64::INFINITY;

    for iteration in 1..=params.max_iterations {
        evaluate_on_boundary(m, &u, &w_nodes, &mut v, iteration - 1)?;
        let tv = harmonics::hilbert_transform(grid, d, &v)?;
        for (i, t) in target.iter_mut().enumerate() {
            *t = x[i % d] - tv[i];
        }
        // boundary residual of the disc assembled from v: Re G = target, Im G = v
        let mut residual = 0.0f64;
        let mut escaped = None;
        for node in 0..n {
            let un = &target[node * d..(node + 1) * d];
            let wn = &w_nodes[node * cm..(node + 1) * cm];
            if !m.in_domain(un, wn) {
                escaped = Some(node);
                break;
            }
            m.h_into(un, wn, &mut h_buf);
            for c in 0..d {
                residual = residual.max((h_buf[c] - v[node * d + c]).abs());
            }
        }
        let mut change = 0.0f64;
        for (ui, ti) in u.iter_mut().zip(&target) {
            let next = (1.0 - params.damping) * *ui + params.damping * ti;
            change = change.max((next - *ui).abs());
            *ui = next;
        }
        if let Some(node) = escaped {
            if params.damping == 1.0 {
                return Err(Error::DomainEscape { iteration, node });
            }
        }
        last = change.max(residual);
        if !change.is_finite() {
            return Err(Error::NotConverged {
                iterations: iteration,
                residual: change,
            });
        }
        if escaped.is_none() && change < params.tolerance && residual < BOUNDARY_TOLERANCE {
            let g = assemble_g(grid, d, &v, x)?;
            let mut disc = AttachedDisc {
                w,
                g,
                base_x: x.to_vec(),
                diagnostics: DiscDiagnostics::default(),
            };
            let mut diag = disc_residual(&disc, m);
            diag.iterations = iteration;
            diag.converged = true;
            disc.diagnostics = diag;
            return Ok(disc);
        }
    }
    Err(Error::NotConverged {
        iterations: params.max_iterations,
        residual: last,
    })
}

fn evaluate_on_boundary(m: &CRGraphManifold, u: &[f64], w_nodes: &[Complex64], v: &mut [f64], iteration: usize) -> Result<()> {
    let d = m.d();
    let cm = m.cr_dim();
    for (node, out) in v.chunks_mut(d).enumerate() {
        let un = &u[node * d..(node + 1) * d];
        let wn = &w_nodes[node * cm..(node + 1) * cm];
        if !m.in_domain(un, wn) {
            return Err(Error::DomainEscape { iteration, node });
        }
        m.h_into(un, wn, out);
    }
    Ok(())
}

/// `G = x + i F` where `F` is the analytic completion of the boundary values
/// `v` with `Re F(0) = mean(v)`.
fn assemble_g(grid: CircleGrid, d: usize, v: &[f64], x: &[f64]) -> Result<FourierSeries> {
    let spectrum = harmonics::fourier_analyze_real(grid, d, v)?;
    let i = Complex64::new(0.0, 1.0);
    let mut g = harmonics::complete_from_spectrum(&spectrum, |c| i * c, x);
    let mean = harmonics::mean(d, v);
    let c0 = g.coefficient_mut(0).unwrap();
    for (c, mv) in c0.iter_mut().zip(&mean) {
        *c = Complex64::new(c.re, *mv);
    }
    Ok(g)
}

/// Centre `(G(0), W(0))` of the disc.
pub fn disc_center(disc: &AttachedDisc) -> (Vec<Complex64>, Vec<Complex64>) {
    (
        disc.g.coefficient(0).unwrap().to_vec(),
        disc.w.coefficient(0).unwrap().to_vec(),
    )
}

/// Recomputes the residuals on a grid twice as fine as the disc's own grid.
/// Points outside the graph domain are still evaluated with the polynomial
/// defining function.
pub fn disc_residual(disc: &AttachedDisc, m: &CRGraphManifold) -> DiscDiagnostics {
    let d = m.d();
    let cm = m.cr_dim();
    let fine = disc.g.grid().refined();
    let g = disc.g.resample(fine).synthesize();
    let w = disc.w.resample(fine).synthesize();
    let mut h_buf = vec![0.0; d];
    let mut boundary = 0.0f64;
    let mut re = vec![0.0; d];
    for node in 0..fine.size() {
        for c in 0..d {
            re[c] = g[node * d + c].re;
        }
        m.h_into(&re, &w[node * cm..(node + 1) * cm], &mut h_buf);
        for c in 0..d {
            boundary = boundary.max((g[node * d + c].im - h_buf[c]).abs());
        }
    }
    let c0 = disc.g.coefficient(0).unwrap();
    let center = c0
        .iter()
        .zip(&disc.base_x)
        .map(|(c, x)| (c.re - x).abs())
        .fold(0.0, f64::max);
    DiscDiagnostics {
        boundary_residual: boundary,
        center_residual: center,
        analyticity_residual: disc.g.negative_content().max(disc.w.negative_content()),
        iterations: disc.diagnostics.iterations,
        converged: disc.diagnostics.converged,
    }
}

/// `W(zeta) = sum_j t_j a_j zeta^j` on the given grid.
pub fn polynomial_w(grid: CircleGrid, cr_dim: usize, coefficients: &[Vec<Complex64>]) -> Result<FourierSeries> {
    let modes: Vec<(i64, Vec<Complex64>)> = coefficients
        .iter()
        .enumerate()
        .map(|(j, c)| (j as i64, c.clone()))
        .collect();
    FourierSeries::from_modes(grid, cr_dim, &modes)
}
