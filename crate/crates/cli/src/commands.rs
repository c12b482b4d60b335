//! The experiment pipelines behind each subcommand.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use wedgedisc_core::bishop::{self, SolverParams, BOUNDARY_TOLERANCE};
use wedgedisc_core::geometry::{self, CRGraphManifold};
use wedgedisc_core::harmonics::{self, CircleGrid};
use wedgedisc_core::quadric_discs::{self, DiscFamilyParams};
use wedgedisc_core::rank::{
    self, JacobianMode, PatchOptions, SearchOptions, SearchOutcome, SubmersionNode, SubmersionOptions, Variant,
    RANK_TOLERANCE,
};
use wedgedisc_core::sampling;
use wedgedisc_core::wedge::{self, AvoidanceOptions, AvoidanceOutcome, BoundaryFunction, GraphPoint, SweepOptions};

use crate::error::{CliError, Stage};
use crate::report::{self, Report, Table};
use crate::spec::{self, ExperimentSpec, LoadedSpec};

/// Default grid of the Hilbert self-test when `--grid` is absent.
pub const SELFTEST_GRID: usize = 256;
/// Random band-limited signals checked by the self-test.
pub const SELFTEST_SIGNALS: usize = 50;
pub const SELFTEST_TOLERANCE: f64 = 1e-10;
/// Central-difference step of the derivative oracle.
pub const DERIVATIVE_STEP: f64 = 1e-5;
/// Allowed residual of the centre decomposition `p + i eta`.
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    SelftestHilbert,
    SolveDisc,
    ClosedFormCheck,
    RankSearch,
    PatchCircle,
    VerifySubmersion,
    SweepWedge,
    RemovabilityDemo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::SelftestHilbert => "selftest-hilbert",
            Self::SolveDisc => "solve-disc",
            Self::ClosedFormCheck => "closed-form-check",
            Self::RankSearch => "rank-search",
            Self::PatchCircle => "patch-circle",
            Self::VerifySubmersion => "verify-submersion",
            Self::SweepWedge => "sweep-wedge",
            Self::RemovabilityDemo => "removability-demo",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ALL.iter().copied().find(|c| c.name() == name)
    }
}

pub const ALL: [Command; 8] = [
    Command::SelftestHilbert,
    Command::SolveDisc,
    Command::ClosedFormCheck,
    Command::RankSearch,
    Command::PatchCircle,
    Command::VerifySubmersion,
    Command::SweepWedge,
    Command::RemovabilityDemo,
];

/// Resolved inputs of one run: the spec plus command-line overrides.
#[derive(Debug, Clone)]
pub struct Context {
    pub spec: Option<LoadedSpec>,
    pub seed: u64,
    pub grid: Option<usize>,
    pub tol: Option<f64>,
}

impl Context {
    pub fn new(spec: Option<LoadedSpec>, seed: Option<u64>, grid: Option<usize>, tol: Option<f64>) -> Self {
        let seed = seed.or(spec.as_ref().map(|s| s.spec.seed)).unwrap_or(0);
        Self { spec, seed, grid, tol }
    }

    fn spec(&self) -> Result<&ExperimentSpec, CliError> {
        self.spec
            .as_ref()
            .map(|s| &s.spec)
            .ok_or_else(|| CliError::spec("spec", "this command needs --spec".into()))
    }

    fn hash(&self) -> String {
        self.spec.as_ref().map(|s| s.hash.clone()).unwrap_or_default()
    }

    fn solver(&self) -> Result<SolverParams, CliError> {
        self.spec()?.solver(self.grid, self.tol)
    }

    fn report(&self, command: Command, params: Value) -> Report {
        Report {
            spec_hash: self.hash(),
            command: command.name().into(),
            params,
            results: Value::Null,
            diagnostics: Value::Null,
            tables: Vec::new(),
            failure: None,
        }
    }

    fn solver_params(&self, solver: &SolverParams) -> Value {
        json!({
            "seed": self.seed,
            "grid": solver.grid.size(),
            "tolerance": solver.tolerance,
            "max_iterations": solver.max_iterations,
            "damping": solver.damping,
        })
    }
}

pub fn run(command: Command, ctx: &Context) -> Result<Report, CliError> {
    match command {
        Command::SelftestHilbert => selftest_hilbert(ctx),
        Command::SolveDisc => solve_disc(ctx),
        Command::ClosedFormCheck => closed_form_check(ctx),
        Command::RankSearch => rank_search(ctx),
        Command::PatchCircle => patch_circle(ctx),
        Command::VerifySubmersion => verify_submersion(ctx),
        Command::SweepWedge => sweep_wedge(ctx),
        Command::RemovabilityDemo => removability_demo(ctx),
    }
}

fn merge(a: Value, b: Value) -> Value {
    match (a, b) {
        (Value::Object(mut x), Value::Object(y)) => {
            x.extend(y);
            Value::Object(x)
        }
        (a, _) => a,
    }
}

fn fail(failures: &[String]) -> Option<String> {
    if failures.is_empty() {
        None
    } else {
        Some(failures.join("; "))
    }
}

fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |a: f64, b| a.max(b.abs()))
}

fn selftest_hilbert(ctx: &Context) -> Result<Report, CliError> {
    let n = ctx.grid.unwrap_or(SELFTEST_GRID);
    let grid = CircleGrid::new(n).stage("grid")?;
    let angles: Vec<f64> = (0..n).map(|j| grid.angle(j)).collect();
    let mut table = Table::new("modes", &["k", "cos_residual", "sin_residual"]);
    let mut pure = 0.0f64;
    for k in 1..(n / 2) as i64 {
        let cos: Vec<f64> = angles.iter().map(|a| (k as f64 * a).cos()).collect();
        let sin: Vec<f64> = angles.iter().map(|a| (k as f64 * a).sin()).collect();
        let tc = harmonics::hilbert_transform(grid, 1, &cos).stage("hilbert")?;
        let ts = harmonics::hilbert_transform(grid, 1, &sin).stage("hilbert")?;
        let rc = max_abs(tc.iter().zip(&sin).map(|(a, b)| a - b));
        let rs = max_abs(ts.iter().zip(&cos).map(|(a, b)| a + b));
        pure = pure.max(rc).max(rs);
        table.push(vec![k as f64, rc, rs]);
    }
    let mut rng = sampling::rng(ctx.seed);
    let mut double = 0.0f64;
    let mut signals = Table::new("signals", &["signal", "double_transform_residual"]);
    for s in 0..SELFTEST_SIGNALS {
        let a = sampling::real_gaussian(&mut rng, n / 2);
        let b = sampling::real_gaussian(&mut rng, n / 2);
        let u: Vec<f64> = angles
            .iter()
            .map(|phi| {
                a[0] + (1..n / 2)
                    .map(|k| a[k] * (k as f64 * phi).cos() + b[k] * (k as f64 * phi).sin())
                    .sum::<f64>()
            })
            .collect();
        let mean = harmonics::mean(1, &u)[0];
        let tu = harmonics::hilbert_transform(grid, 1, &u).stage("hilbert")?;
        let ttu = harmonics::hilbert_transform(grid, 1, &tu).stage("hilbert")?;
        let r = max_abs(ttu.iter().zip(&u).map(|(t, v)| t + v - mean));
        double = double.max(r);
        signals.push(vec![s as f64, r]);
    }
    let residual = pure.max(double);
    let mut report = ctx.report(Command::SelftestHilbert, json!({ "seed": ctx.seed, "grid": n, "tolerance": SELFTEST_TOLERANCE }));
    report.results = json!({
        "max_identity_residual": residual,
        "pure_harmonic_residual": pure,
        "double_transform_residual": double,
        "signals": SELFTEST_SIGNALS,
    });
    report.diagnostics = json!({ "modes_checked": n / 2 - 1 });
    report.tables = vec![table, signals];
    if !(residual < SELFTEST_TOLERANCE) {
        report.failure = Some(format!("Hilbert identity residual {residual:e} exceeds {SELFTEST_TOLERANCE:e}"));
    }
    Ok(report)
}

fn solve_disc(ctx: &Context) -> Result<Report, CliError> {
    let spec = ctx.spec()?;
    let m = spec.manifold()?;
    let family = spec.family()?;
    let solver = ctx.solver()?;
    let w = family.w_series(solver.grid).stage("family")?;
    let disc = bishop::solve_bishop(&m, &w, &family.x, &solver).stage("solve")?;
    let check = bishop::disc_residual(&disc, &m);
    let (g0, w0) = bishop::disc_center(&disc);
    let mut failures = Vec::new();
    if !disc.diagnostics.converged {
        failures.push("solver did not converge".to_string());
    }
    if !(check.boundary_residual < BOUNDARY_TOLERANCE) {
        failures.push(format!("boundary residual {:e} exceeds {BOUNDARY_TOLERANCE:e}", check.boundary_residual));
    }
    let closed = if m.is_quadric() {
        let c = quadric_discs::closed_form_g(m.quadric(), &family, solver.grid).stage("closed-form")?;
        Some(disc.g.max_coefficient_distance(&c))
    } else {
        None
    };
    let d = m.d();
    let cm = m.cr_dim();
    let mut headers = vec!["angle".to_string()];
    headers.extend((0..d).flat_map(|l| [format!("re_g{l}"), format!("im_g{l}")]));
    headers.extend((0..cm).flat_map(|j| [format!("re_w{j}"), format!("im_w{j}")]));
    let mut table = Table::with_headers("boundary", headers);
    let gs = disc.g.synthesize();
    let ws = disc.w.synthesize();
    for k in 0..solver.grid.size() {
        let mut row = vec![solver.grid.angle(k)];
        row.extend(gs[k * d..(k + 1) * d].iter().flat_map(|z| [z.re, z.im]));
        row.extend(ws[k * cm..(k + 1) * cm].iter().flat_map(|z| [z.re, z.im]));
        table.push(row);
    }
    let mut report = ctx.report(Command::SolveDisc, ctx.solver_params(&solver));
    report.results = json!({
        "family": report::family(&family),
        "g": report::series(&disc.g),
        "w": report::series(&disc.w),
        "center": { "z": report::complexes(&g0), "w": report::complexes(&w0) },
        "closed_form_distance": closed,
    });
    report.diagnostics = json!({
        "iterations": disc.diagnostics.iterations,
        "converged": disc.diagnostics.converged,
        "boundary_residual": check.boundary_residual,
        "center_residual": check.center_residual,
        "analyticity_residual": check.analyticity_residual,
    });
    report.tables = vec![table];
    report.failure = fail(&failures);
    Ok(report)
}

/// Seeded family on `C^m` with at most `max_n` directions and
/// `|t_j| |a_j| <= reach`.
pub fn random_family(seed: u64, d: usize, m: usize, max_n: usize, reach: f64) -> DiscFamilyParams {
    let mut rng = sampling::rng(seed);
    let n = rng.random_range(1..=max_n.max(1));
    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-0.2..0.2)).collect();
    let a0: Vec<Complex64> = sampling::complex_unit(&mut rng, m).into_iter().map(|z| z * 0.05).collect();
    let directions: Vec<Vec<Complex64>> = (0..n)
        .map(|_| {
            let scale = rng.random_range(0.5..2.0);
            sampling::complex_unit(&mut rng, m).into_iter().map(|z| z * scale).collect()
        })
        .collect();
    let scales: Vec<f64> = directions
        .iter()
        .map(|a| {
            let norm = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            rng.random_range(-1.0..1.0) * reach / norm
        })
        .collect();
    DiscFamilyParams::new(x, a0, directions, scales).expect("consistent family shape")
}

struct DrawCheck {
    coefficient_distance: f64,
    boundary_residual: f64,
    d_re_g_error: f64,
    dv0_error: f64,
    directions: usize,
    error: Option<String>,
}

fn check_draw(m: &CRGraphManifold, p: &DiscFamilyParams, zeta: Complex64, solver: &SolverParams) -> DrawCheck {
    let q = m.quadric();
    let mut out = DrawCheck {
        coefficient_distance: f64::NAN,
        boundary_residual: f64::NAN,
        d_re_g_error: f64::NAN,
        dv0_error: f64::NAN,
        directions: p.len(),
        error: None,
    };
    let solved = p
        .w_series(solver.grid)
        .and_then(|w| bishop::solve_bishop(m, &w, &p.x, solver))
        .and_then(|disc| Ok((quadric_discs::closed_form_g(q, p, solver.grid)?, disc)));
    match solved {
        Ok((closed, disc)) => {
            out.coefficient_distance = disc.g.max_coefficient_distance(&closed);
            out.boundary_residual = bishop::disc_residual(&disc, m).boundary_residual;
        }
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    }
    let h = DERIVATIVE_STEP;
    let mut dg = 0.0f64;
    let mut dv = 0.0f64;
    let derivatives = (1..=p.len()).try_for_each(|j| -> wedgedisc_core::Result<()> {
        let bump = |delta: f64| {
            let mut s = p.scales.clone();
            s[j - 1] += delta;
            p.with_scales(s)
        };
        let gp = quadric_discs::closed_form_g_at(q, &bump(h), zeta)?;
        let gm = quadric_discs::closed_form_g_at(q, &bump(-h), zeta)?;
        let exact = quadric_discs::d_re_g_dt(q, p, j, zeta)?;
        for l in 0..q.codim() {
            dg = dg.max(((gp[l].re - gm[l].re) / (2.0 * h) - exact[l]).abs());
        }
        let vp = quadric_discs::center_map(q, &bump(h))?.0;
        let vm = quadric_discs::center_map(q, &bump(-h))?.0;
        let exact = quadric_discs::dv0_dt(q, p, j)?;
        for l in 0..q.codim() {
            dv = dv.max(((vp[l].im - vm[l].im) / (2.0 * h) - exact[l]).abs());
        }
        Ok(())
    });
    if let Err(e) = derivatives {
        out.error = Some(e.to_string());
    }
    out.d_re_g_error = dg;
    out.dv0_error = dv;
    out
}

fn closed_form_check(ctx: &Context) -> Result<Report, CliError> {
    let spec = ctx.spec()?;
    let m = spec.manifold()?;
    if !m.is_quadric() {
        return Err(CliError::spec("closed-form", "the closed form applies to quadric manifolds only".into()));
    }
    let solver = ctx.solver()?;
    let checks = &spec.checks;
    let (d, cm) = (m.d(), m.cr_dim());
    let draws: Vec<DrawCheck> = (0..checks.draws as u64)
        .into_par_iter()
        .map(|i| {
            let seed = ctx.seed.wrapping_add(i);
            let p = random_family(seed, d, cm, checks.max_directions, checks.reach);
            let mut rng = sampling::rng(seed ^ 0xd1ff);
            let zeta = Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
            check_draw(&m, &p, zeta, &solver)
        })
        .collect();
    let mut table = Table::new(
        "draws",
        &["draw", "directions", "coefficient_distance", "boundary_residual", "d_re_g_error", "dv0_error"],
    );
    let mut failures = Vec::new();
    let mut errors = Vec::new();
    for (i, r) in draws.iter().enumerate() {
        table.push(vec![
            i as f64,
            r.directions as f64,
            r.coefficient_distance,
            r.boundary_residual,
            r.d_re_g_error,
            r.dv0_error,
        ]);
        if let Some(e) = &r.error {
            errors.push(json!({ "draw": i, "message": e }));
        }
    }
    let worst = |f: fn(&DrawCheck) -> f64| draws.iter().map(f).fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
    let coeff = worst(|r| r.coefficient_distance);
    let boundary = worst(|r| r.boundary_residual);
    let dg = worst(|r| r.d_re_g_error);
    let dv = worst(|r| r.dv0_error);
    if !errors.is_empty() {
        failures.push(format!("{} draw(s) failed to solve", errors.len()));
    }
    if !(coeff < checks.tolerance) {
        failures.push(format!("solver and closed form differ by {coeff:e}"));
    }
    if !(boundary < BOUNDARY_TOLERANCE) {
        failures.push(format!("boundary residual {boundary:e} exceeds {BOUNDARY_TOLERANCE:e}"));
    }
    if !(dg < checks.tolerance && dv < checks.tolerance) {
        failures.push(format!("derivative oracle mismatch (dReG {dg:e}, dv0 {dv:e})"));
    }
    let mut report = ctx.report(
        Command::ClosedFormCheck,
        merge(
            ctx.solver_params(&solver),
            json!({
                "draws": checks.draws,
                "max_directions": checks.max_directions,
                "reach": checks.reach,
                "check_tolerance": checks.tolerance,
                "derivative_step": DERIVATIVE_STEP,
            }),
        ),
    );
    report.results = json!({
        "max_coefficient_distance": coeff,
        "max_boundary_residual": boundary,
        "max_d_re_g_error": dg,
        "max_dv0_error": dv,
    });
    report.diagnostics = json!({ "errors": errors });
    report.tables = vec![table];
    report.failure = fail(&failures);
    Ok(report)
}

fn search_options(spec: &ExperimentSpec) -> SearchOptions {
    SearchOptions {
        budget: spec.rank.budget,
        ..SearchOptions::default()
    }
}

fn rank_search(ctx: &Context) -> Result<Report, CliError> {
    let spec = ctx.spec()?;
    let m = spec.manifold()?;
    let q = m.quadric();
    let options = search_options(spec);
    let full = 2 * m.n();
    let hull = geometry::quadric_hull_report(q, options.hull_samples, ctx.seed);
    let outcomes: Vec<(f64, SearchOutcome)> = spec
        .rank
        .angles
        .par_iter()
        .enumerate()
        .map(|(i, &phi)| {
            let zeta = Complex64::from_polar(1.0, phi);
            rank::search_max_rank_at(q, zeta, ctx.seed.wrapping_add(i as u64), &options).map(|o| (phi, o))
        })
        .collect::<wedgedisc_core::Result<_>>()
        .stage("rank-search")?;
    let mut failures = Vec::new();
    let mut results = Vec::new();
    for (phi, outcome) in &outcomes {
        let zeta = Complex64::from_polar(1.0, *phi);
        results.push(match outcome {
            SearchOutcome::Found { params, rank: r, attempts } => {
                let mat = rank::build_matrix(q, params, zeta, Variant::MPrime).stage("rank-search")?;
                json!({
                    "phi": phi,
                    "outcome": "found",
                    "rank": r,
                    "attempts": attempts,
                    "params": report::family(params),
                    "singular_values": rank::singular_values(&mat),
                    "relative_margin": rank::relative_margin(&mat),
                })
            }
            SearchOutcome::HullPrecondition => {
                failures.push(format!("phi = {phi}: the convex hull of the quadric's image has empty interior"));
                json!({ "phi": phi, "outcome": "hull_precondition_failed" })
            }
            SearchOutcome::BudgetExhausted { best_rank, attempts } => {
                failures.push(format!("phi = {phi}: budget exhausted at rank {best_rank} < {full}"));
                json!({ "phi": phi, "outcome": "budget_exhausted", "best_rank": best_rank, "attempts": attempts })
            }
        });
    }
    failures.dedup();
    let mut report = ctx.report(
        Command::RankSearch,
        json!({
            "seed": ctx.seed,
            "budget": options.budget,
            "rank_tolerance": options.tolerance,
            "pair_bias": options.pair_bias,
            "restart_after": options.restart_after,
            "hull_samples": options.hull_samples,
        }),
    );
    report.results = json!({
        "full_rank": full,
        "searches": results,
        "certificate_issued": failures.is_empty(),
    });
    report.diagnostics = json!({
        "hull_has_interior": hull.hull_has_interior,
        "witness_cone": hull.witness_cone.as_ref().map(report::cone),
    });
    report.failure = fail(&failures);
    Ok(report)
}

fn patch_options(spec: &ExperimentSpec) -> PatchOptions {
    PatchOptions {
        circle_samples: spec.rank.circle_samples,
        fine_grid: spec.rank.fine_grid,
        search: search_options(spec),
        ..PatchOptions::default()
    }
}

fn patch_circle(ctx: &Context) -> Result<Report, CliError> {
    let spec = ctx.spec()?;
    let m = spec.manifold()?;
    let q = m.quadric();
    let options = patch_options(spec);
    let full = 2 * m.n();
    let patch = rank::patch_over_circle(q, ctx.seed, &options).stage("patch")?;
    let grid = options.fine_grid;
    let rows: Vec<(usize, f64)> = (0..grid)
        .into_par_iter()
        .map(|k| {
            let zeta = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / grid as f64);
            let mat = rank::build_matrix(q, &patch.params, zeta, Variant::MPrime)?;
            Ok((rank::numerical_rank(&mat, RANK_TOLERANCE)?, rank::relative_margin(&mat)))
        })
        .collect::<wedgedisc_core::Result<_>>()
        .stage("patch")?;
    let mut table = Table::new("circle", &["phi", "rank", "relative_margin"]);
    for (k, (r, margin)) in rows.iter().enumerate() {
        table.push(vec![2.0 * PI * k as f64 / grid as f64, *r as f64, *margin]);
    }
    let mut failures = Vec::new();
    let grid_min = rows.iter().map(|r| r.0).min().unwrap_or(0);
    if grid_min < full {
        failures.push(format!("rank drops to {grid_min} < {full} on the {grid}-point grid"));
    }
    let mut scale_checks = Vec::new();
    for &lambda in &spec.rank.scale_checks {
        let scaled = patch
            .params
            .with_scales(patch.params.scales.iter().map(|t| t * lambda).collect())
            .with_t0(patch.params.t0 * lambda);
        let (r, phi, margin) = rank::rank_on_circle(q, &scaled, grid, RANK_TOLERANCE).stage("patch")?;
        if r < full {
            failures.push(format!("rank {r} < {full} at phi = {phi} after scaling by {lambda}"));
        }
        scale_checks.push(json!({ "lambda": lambda, "min_rank": r, "worst_phi": phi, "min_margin": margin }));
    }
    let mut report = ctx.report(
        Command::PatchCircle,
        json!({
            "seed": ctx.seed,
            "circle_samples": options.circle_samples,
            "ladder_ratio": options.ladder_ratio,
            "fine_grid": grid,
            "rank_tolerance": RANK_TOLERANCE,
            "budget": options.search.budget,
        }),
    );
    report.results = json!({
        "params": report::family(&patch.params),
        "cone": report::cone(&patch.cone),
        "sample_angles": patch.sample_angles,
        "block_sizes": patch.block_sizes,
        "min_rank": patch.min_rank,
        "full_rank": full,
        "min_margin": patch.min_margin,
        "worst_angle": patch.worst_angle,
        "scale_checks": scale_checks,
    });
    report.diagnostics = json!({
        "continuity": {
            "lipschitz": patch.continuity.lipschitz,
            "spacing": patch.continuity.spacing,
            "min_sigma": patch.continuity.min_sigma,
            "certified": patch.continuity.certified,
        }
    });
    report.tables = vec![table];
    report.failure = fail(&failures);
    Ok(report)
}

fn submersion_nodes(
    m: &CRGraphManifold,
    family: &DiscFamilyParams,
    x_grid: &[Vec<f64>],
    rays: &[Vec<f64>],
    zetas: &[Complex64],
    options: &SubmersionOptions,
) -> Result<Vec<SubmersionNode>, CliError> {
    let pairs: Vec<(&Vec<f64>, &Vec<f64>)> = x_grid.iter().flat_map(|x| rays.iter().map(move |t| (x, t))).collect();
    pairs
        .par_iter()
        .map(|(x, t)| rank::submersion_node(m, family, x, t, zetas, options))
        .collect::<wedgedisc_core::Result<_>>()
        .stage("submersion")
}

/// Smallest grid, at least `base`, that resolves `h(x, W)` for a family of
/// `n` directions: the boundary data then has frequencies up to `deg * n`.
fn resolving_grid(m: &CRGraphManifold, n: usize, base: CircleGrid) -> wedgedisc_core::Result<CircleGrid> {
    let degree = m.perturbation().iter().map(|p| p.degree() as usize).max().unwrap_or(2).max(2);
    let needed = (2 * (degree * n + 1)).next_power_of_two();
    CircleGrid::new(needed.max(base.size()))
}

fn verify_submersion(ctx: &Context) -> Result<Report, CliError> {
    let spec = ctx.spec()?;
    let m = spec.manifold()?;
    let q = m.quadric();
    let sub = &spec.submersion;
    let solver = ctx.solver()?;
    let patch = rank::patch_over_circle(q, ctx.seed, &patch_options(spec)).stage("patch")?;
    let family = patch.params.clone();
    let t_norm = family.scales.iter().map(|t| t * t).sum::<f64>().sqrt();
    let rays = rank::cone_rays(&patch.cone, sub.rays, sub.ray_fraction * t_norm, ctx.seed);
    if let Some(bad) = rays.iter().find(|t| !patch.cone.contains(t)) {
        return Err(CliError::property("submersion", format!("ray {bad:?} lies outside the parameter cone")));
    }
    let x_grid: Vec<Vec<f64>> = sub.x_values.iter().map(|&x| vec![x; m.d()]).collect();
    let zetas = rank::circle_points(sub.angles);
    let options = SubmersionOptions {
        solver: SolverParams {
            grid: resolving_grid(&m, family.len(), solver.grid).stage("submersion")?,
            tolerance: solver.tolerance.min(1e-13),
            ..solver
        },
        ..SubmersionOptions::default()
    };
    let mode = if m.is_quadric() { JacobianMode::Exact } else { JacobianMode::FiniteDifference };
    let nodes = submersion_nodes(&m, &family, &x_grid, &rays, &zetas, &options)?;
    let perturbed = rank::summarize_submersion(nodes, mode, options.sigma_floor);
    let reference = if m.is_quadric() {
        perturbed.clone()
    } else {
        let flat = CRGraphManifold::quadric_manifold(q.clone(), m.domain_radius()).stage("submersion")?;
        let nodes = submersion_nodes(&flat, &family, &x_grid, &rays, &zetas, &options)?;
        rank::summarize_submersion(nodes, JacobianMode::Exact, options.sigma_floor)
    };
    let deviation = (perturbed.min_sigma - reference.min_sigma).abs() / reference.min_sigma;
    let mut failures = Vec::new();
    if !perturbed.passed {
        failures.push(format!("min sigma {:e} below the floor {:e}", perturbed.min_sigma, options.sigma_floor));
    }
    if !(deviation <= sub.persistence) {
        failures.push(format!(
            "min sigma {:e} deviates {:.3} from the quadric value {:e}",
            perturbed.min_sigma, deviation, reference.min_sigma
        ));
    }
    let mut table = Table::new("nodes", &["x", "ray", "phi", "sigma"]);
    for (i, node) in perturbed.nodes.iter().enumerate() {
        for (k, s) in node.sigmas.iter().enumerate() {
            table.push(vec![node.x[0], (i % rays.len()) as f64, zetas[k].arg().rem_euclid(2.0 * PI), *s]);
        }
    }
    let mut report = ctx.report(
        Command::VerifySubmersion,
        merge(
            json!({
                "seed": ctx.seed,
                "grid": options.solver.grid.size(),
                "tolerance": options.solver.tolerance,
                "relative_step": options.relative_step,
                "sigma_floor": options.sigma_floor,
                "rays": sub.rays,
                "ray_fraction": sub.ray_fraction,
                "angles": sub.angles,
                "persistence": sub.persistence,
            }),
            json!({ "x_values": sub.x_values }),
        ),
    );
    report.results = json!({
        "family": report::family(&family),
        "cone": report::cone(&patch.cone),
        "rays": rays,
        "min_sigma": perturbed.min_sigma,
        "reference_min_sigma": reference.min_sigma,
        "relative_deviation": deviation,
        "mode": format!("{:?}", perturbed.mode),
        "node_min_sigmas": perturbed.nodes.iter().map(|n| n.min_sigma).collect::<Vec<_>>(),
    });
    report.diagnostics = json!({
        "nodes": perturbed.nodes.len(),
        "quadric_reference": m.is_quadric(),
        "patch_min_margin": patch.min_margin,
    });
    report.tables = vec![table];
    report.failure = fail(&failures);
    Ok(report)
}

fn scale_grid(n: usize, t_max: f64, points: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (1..=points).map(|i| t_max * i as f64 / points as f64).collect();
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&t| {
                    let mut p = prefix.clone();
                    p.push(t);
                    p
                })
            })
            .collect();
    }
    out
}

fn sweep_wedge(ctx: &Context) -> Result<Report, CliError> {
    let spec = ctx.spec()?;
    let sweep = spec
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::spec("sweep", "this command needs a sweep section".into()))?;
    let m = spec.manifold()?;
    let solver = ctx.solver()?;
    let mut family = spec.family()?;
    if let Some(dirs) = &sweep.directions {
        family.directions = dirs.iter().map(|a| a.iter().map(spec::complex).collect()).collect();
    }
    family.scales = vec![0.0; family.len()];
    let family = DiscFamilyParams::new(family.x, family.a0, family.directions, family.scales).stage("sweep")?;
    if sweep.t_points == 0 || !(sweep.t_max > 0.0) {
        return Err(CliError::spec("sweep", "the scale grid needs t_points >= 1 and t_max > 0".into()));
    }
    let t_grid = scale_grid(family.len(), sweep.t_max, sweep.t_points);
    let bases: Vec<GraphPoint> = sweep.base_points.iter().map(spec::graph_point).collect();
    if bases.is_empty() {
        return Err(CliError::spec("sweep", "the sweep needs at least one base point".into()));
    }
    let options = SweepOptions {
        cover_tolerance: sweep.cover_tolerance,
        seed: ctx.seed,
        ..SweepOptions::default()
    };
    let cert = wedge::sweep_centers(&m, &family, &bases, &t_grid, &solver, &options).stage("sweep")?;
    let mut failures = Vec::new();
    if !(cert.max_decomposition_residual < DECOMPOSITION_TOLERANCE) {
        failures.push(format!("centre decomposition residual {:e}", cert.max_decomposition_residual));
    }
    if cert.evidence.is_empty() {
        failures.push("no centre lies in the fitted cone".into());
    }
    let d = m.d();
    let mut headers = vec!["base".to_string()];
    headers.extend((0..family.len()).map(|j| format!("t{}", j + 1)));
    headers.extend((0..d).map(|l| format!("x{l}")));
    headers.extend((0..d).map(|l| format!("eta{l}")));
    let mut table = Table::with_headers("centers", headers);
    for e in &cert.evidence {
        let base = bases.iter().position(|b| *b == e.base).unwrap_or(0);
        let mut row = vec![base as f64];
        row.extend(&e.t);
        row.extend(&e.edge_point.x);
        row.extend(&e.eta);
        table.push(row);
    }
    let mut report = ctx.report(
        Command::SweepWedge,
        merge(
            ctx.solver_params(&solver),
            json!({
                "t_max": sweep.t_max,
                "t_points": sweep.t_points,
                "cover_tolerance": options.cover_tolerance,
                "probes": options.probes,
                "scale_samples": options.scale_samples,
                "bisection_steps": options.bisection_steps,
            }),
        ),
    );
    report.results = json!({
        "cone": report::cone(&cert.cone),
        "edge_center": report::graph_point(&cert.edge_center),
        "edge_radius": cert.edge_radius,
        "evidence": cert.evidence.len(),
        "discarded": cert.discarded,
        "max_decomposition_residual": cert.max_decomposition_residual,
    });
    report.diagnostics = json!({
        "excluded": cert.excluded.iter().map(|(b, t, msg)| json!({
            "base": report::graph_point(b),
            "t": t,
            "reason": msg,
        })).collect::<Vec<_>>(),
        "discs": t_grid.len() * bases.len(),
    });
    report.tables = vec![table];
    report.failure = fail(&failures);
    Ok(report)
}

fn removability_demo(ctx: &Context) -> Result<Report, CliError> {
    let spec = ctx.spec()?;
    let demo = &spec.demo;
    let m = spec.manifold()?;
    let solver = ctx.solver()?;
    let k = spec.thin_set()?;
    let f = spec.oracle()?;
    let (z, w) = spec.target()?;
    let family = spec.family()?;
    let cone = spec.cone()?;
    let options = AvoidanceOptions {
        budget: demo.budget,
        clearance_floor: demo.clearance_floor,
        seed: ctx.seed,
        solver,
        ..AvoidanceOptions::default()
    };
    let mut failures = Vec::new();
    let expected = f.eval(&z, &w).map_err(|e| CliError::spec("oracle", format!("oracle undefined at the target: {e}")))?;

    let outcome = wedge::find_avoiding_disc(&m, &k, &z, &w, &family, &cone, None, &options).stage("avoidance")?;
    let found = match outcome {
        AvoidanceOutcome::Found { disc, attempts } => Some((disc, attempts)),
        AvoidanceOutcome::BudgetExhausted { best_clearance, attempts } => {
            failures.push(format!(
                "no disc clears K by {} within {attempts} attempts (best {best_clearance:e})",
                demo.clearance_floor
            ));
            None
        }
    };
    let mut results = serde_json::Map::new();
    results.insert("expected_value".into(), report::complex(expected));
    let mut tables = Vec::new();
    if let Some((through, attempts)) = &found {
        let value = wedge::cauchy_extend(&f, &through.disc).stage("extension")?;
        let error = (value - expected).norm();
        if !(error < demo.consistency_tolerance) {
            failures.push(format!("extension {value} differs from {expected} by {error:e}"));
        }
        let (g0, w0) = bishop::disc_center(&through.disc);
        results.insert(
            "disc".into(),
            json!({
                "params": report::family(&through.params),
                "clearance": through.clearance,
                "attempts": attempts,
                "center": { "z": report::complexes(&g0), "w": report::complexes(&w0) },
            }),
        );
        results.insert("extension_value".into(), report::complex(value));
        results.insert("extension_error".into(), json!(error));

        let d = m.d();
        let cm = m.cr_dim();
        let mut headers = vec!["angle".to_string()];
        headers.extend((0..d).flat_map(|l| [format!("re_g{l}"), format!("im_g{l}")]));
        headers.extend((0..cm).flat_map(|j| [format!("re_w{j}"), format!("im_w{j}")]));
        let mut boundary = Table::with_headers("boundary", headers);
        let gs = through.disc.g.synthesize();
        let ws = through.disc.w.synthesize();
        let grid = through.disc.g.grid();
        for node in 0..grid.size() {
            let mut row = vec![grid.angle(node)];
            row.extend(gs[node * d..(node + 1) * d].iter().flat_map(|v| [v.re, v.im]));
            row.extend(ws[node * cm..(node + 1) * cm].iter().flat_map(|v| [v.re, v.im]));
            boundary.push(row);
        }
        tables.push(boundary);

        match wedge::choose_isotopy_end(&m, &k, &through.params, demo.isotopy_steps, &solver, ctx.seed)
            .and_then(|end| Ok((wedge::isotopy_path(&m, &k, &through.params, &end, demo.isotopy_steps, &solver)?, end)))
        {
            Ok((path, end)) => {
                let min = path.iter().map(|s| s.clearance).fold(f64::INFINITY, f64::min);
                if !(min > 0.0) {
                    failures.push(format!("isotopy clearance drops to {min:e}"));
                }
                let mut iso = Table::new("isotopy", &["s", "clearance"]);
                for step in &path {
                    iso.push(vec![step.s, step.clearance]);
                }
                tables.push(iso);
                results.insert(
                    "isotopy".into(),
                    json!({ "end_x": end, "steps": demo.isotopy_steps, "min_clearance": min }),
                );
            }
            Err(e) => {
                failures.push(format!("isotopy failed: {e}"));
                results.insert("isotopy".into(), json!({ "error": e.to_string() }));
            }
        }
    }

    let consistency_options = AvoidanceOptions {
        clearance_floor: 0.0,
        ..options
    };
    match wedge::consistency_check(
        &f,
        &m,
        &k,
        &z,
        &w,
        &family,
        &cone,
        demo.trials,
        demo.consistency_tolerance,
        &consistency_options,
    ) {
        Ok(rep) => {
            if rep.values.len() < demo.trials {
                failures.push(format!("only {} of {} distinct discs found", rep.values.len(), demo.trials));
            }
            if !rep.passed {
                failures.push(format!("extension values deviate by {:e}", rep.max_deviation));
            }
            results.insert(
                "consistency".into(),
                json!({
                    "values": rep.values.iter().map(|v| report::complex(*v)).collect::<Vec<_>>(),
                    "scales": rep.scales,
                    "clearances": rep.clearances,
                    "max_deviation": rep.max_deviation,
                }),
            );
        }
        Err(e @ wedgedisc_core::Error::Precondition(_)) => {
            failures.push(e.to_string());
            results.insert("consistency".into(), json!({ "error": e.to_string() }));
        }
        Err(e) => return Err(CliError::core("consistency", e)),
    }

    if demo.thinness_samples > 0 {
        let (fractions, drawn) = wedge::hit_fractions(
            &m,
            &k,
            &z,
            &w,
            &family,
            &cone,
            demo.thinness_samples,
            &demo.thinness_radii,
            &consistency_options,
        )
        .stage("thinness")?;
        let monotone = fractions.windows(2).all(|p| p[1] <= p[0]);
        let last = fractions.last().copied().unwrap_or(0.0);
        if !monotone {
            failures.push(format!("hit fractions {fractions:?} are not monotone in the tube radius"));
        }
        if !(last < demo.hit_ceiling) {
            failures.push(format!("hit fraction {last} at the smallest radius is not below {}", demo.hit_ceiling));
        }
        let mut hits = Table::new("thinness", &["radius", "hit_fraction"]);
        for (r, h) in demo.thinness_radii.iter().zip(&fractions) {
            hits.push(vec![*r, *h]);
        }
        tables.push(hits);
        results.insert(
            "thinness".into(),
            json!({ "radii": demo.thinness_radii, "hit_fractions": fractions, "samples": drawn, "monotone": monotone }),
        );
    }

    let mut report = ctx.report(
        Command::RemovabilityDemo,
        merge(
            ctx.solver_params(&solver),
            json!({
                "clearance_floor": demo.clearance_floor,
                "budget": demo.budget,
                "trials": demo.trials,
                "consistency_tolerance": demo.consistency_tolerance,
                "isotopy_steps": demo.isotopy_steps,
                "thinness_samples": demo.thinness_samples,
            }),
        ),
    );
    report.results = Value::Object(results);
    report.diagnostics = json!({
        "target": { "z": report::complexes(&z), "w": report::complexes(&w) },
        "cone": report::cone(&cone),
        "thin_set_dimension_bound": k.hausdorff_dim_bound(),
        "thin_set_relaxed": k.is_relaxed(),
    });
    report.tables = tables;
    report.failure = fail(&failures);
    Ok(report)
}
