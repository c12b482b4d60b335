//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails.

use std::time::{Duration, Instant};

use serde_json::Value;
use wedgedisc::commands::{self, Command, Context};
use wedgedisc::spec::{self, BUNDLED};
use wedgedisc::{CliError, Report};

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(cond: bool, detail: String) -> Outcome {
    Outcome { passed: cond, detail }
}

fn run_bundled(command: Command, name: &str) -> Result<Report, CliError> {
    wedgedisc::run(command, Some(name), None, None, None)
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn criterion_1() -> Outcome {
    let report = match wedgedisc::run(Command::SelftestHilbert, None, Some(1), Some(256), None) {
        Ok(r) => r,
        Err(e) => return check(false, e.to_string()),
    };
    let residual = f(&report.results["max_identity_residual"]);
    let signals = report.results["signals"].as_u64().unwrap_or(0);
    check(
        residual < 1e-10 && signals >= 50 && report.passed(),
        format!("max residual {residual:.2e} over pure harmonics and {signals} random signals"),
    )
}

fn criterion_2() -> Outcome {
    let report = match run_bundled(Command::ClosedFormCheck, "lewy") {
        Ok(r) => r,
        Err(e) => return check(false, e.to_string()),
    };
    let draws = report.params["draws"].as_u64().unwrap_or(0);
    let coeff = f(&report.results["max_coefficient_distance"]);
    let boundary = f(&report.results["max_boundary_residual"]);
    let errors = report.diagnostics["errors"].as_array().map_or(1, |e| e.len());
    check(
        draws >= 100 && coeff < 1e-8 && boundary < 1e-9 && errors == 0,
        format!("{draws} families, coefficient distance {coeff:.2e}, boundary residual {boundary:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let report = match run_bundled(Command::ClosedFormCheck, "product_quadric") {
        Ok(r) => r,
        Err(e) => return check(false, e.to_string()),
    };
    let draws = report.params["draws"].as_u64().unwrap_or(0);
    let dg = f(&report.results["max_d_re_g_error"]);
    let dv = f(&report.results["max_dv0_error"]);
    let step = f(&report.params["derivative_step"]);
    check(
        draws >= 100 && step == 1e-5 && dg < 1e-8 && dv < 1e-8,
        format!("{draws} draws, dReG/dt error {dg:.2e}, dv0/dt error {dv:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let lewy = match run_bundled(Command::RankSearch, "lewy") {
        Ok(r) => r,
        Err(e) => return check(false, e.to_string()),
    };
    let searches = lewy.results["searches"].as_array().cloned().unwrap_or_default();
    let ranks: Vec<u64> = searches.iter().map(|s| s["rank"].as_u64().unwrap_or(0)).collect();
    let found = searches.len() == 3 && searches.iter().all(|s| s["outcome"] == "found" && s["rank"] == 4);
    let budget_ok = lewy.params["budget"].as_u64() == Some(10_000);
    let degenerate = match run_bundled(Command::RankSearch, "degenerate_line") {
        Ok(r) => r,
        Err(e) => return check(false, e.to_string()),
    };
    let refused = !degenerate.passed()
        && degenerate.results["certificate_issued"] == false
        && degenerate.diagnostics["hull_has_interior"] == false;
    check(
        found && budget_ok && refused,
        format!("Lewy ranks {ranks:?} at three angles; degenerate quadric refused: {refused}"),
    )
}

fn criterion_5() -> Outcome {
    let report = match run_bundled(Command::PatchCircle, "lewy") {
        Ok(r) => r,
        Err(e) => return check(false, e.to_string()),
    };
    let grid = report.params["fine_grid"].as_u64().unwrap_or(0);
    let min_rank = report.results["min_rank"].as_u64().unwrap_or(0);
    let checks = report.results["scale_checks"].as_array().cloned().unwrap_or_default();
    let lambdas: Vec<f64> = checks.iter().map(|c| f(&c["lambda"])).collect();
    let scale_ok = lambdas == [1e-3, 1.0, 10.0] && checks.iter().all(|c| c["min_rank"] == 4);
    check(
        report.passed() && grid == 720 && min_rank == 4 && scale_ok,
        format!("min rank {min_rank} on {grid} points, scale checks {lambdas:?} full rank: {scale_ok}"),
    )
}

fn criterion_6() -> Outcome {
    let report = match run_bundled(Command::VerifySubmersion, "perturbed_lewy") {
        Ok(r) => r,
        Err(e) => return check(false, e.to_string()),
    };
    let nodes = report.diagnostics["nodes"].as_u64().unwrap_or(0);
    let angles = report.params["angles"].as_u64().unwrap_or(0);
    let sigma = f(&report.results["min_sigma"]);
    let reference = f(&report.results["reference_min_sigma"]);
    let dev = f(&report.results["relative_deviation"]);
    check(
        report.passed() && nodes == 25 && angles == 32 && dev <= 0.2 && sigma > 0.0,
        format!("{nodes} nodes x {angles} angles, min sigma_4 {sigma:.5} vs quadric {reference:.5} ({:.2e} relative)", dev),
    )
}

fn criterion_7() -> Outcome {
    let report = match run_bundled(Command::SweepWedge, "lewy") {
        Ok(r) => r,
        Err(e) => return check(false, e.to_string()),
    };
    let axis: Vec<f64> = report.results["cone"]["axis"].as_array().map_or(vec![], |a| a.iter().map(f).collect());
    let scale = f(&report.results["cone"]["scale_max"]);
    let residual = f(&report.results["max_decomposition_residual"]);
    let evidence = report.results["evidence"].as_u64().unwrap_or(0);
    let t_max = f(&report.params["t_max"]);
    let up = axis.len() == 1 && axis[0] > 1.0 - 1e-12;
    check(
        report.passed() && up && scale >= 0.05 && residual < 1e-8 && evidence > 0 && t_max <= 0.3,
        format!("axis {axis:?}, scale_max {scale:.4}, {evidence} centres, decomposition residual {residual:.1e}"),
    )
}

/// The bundled Lewy spec with the Monte Carlo stage switched off.
fn lewy_without_thinness() -> Result<Report, CliError> {
    let mut loaded = spec::load("lewy")?;
    loaded.spec.demo.thinness_samples = 0;
    let ctx = Context::new(Some(loaded), None, None, None);
    commands::run(Command::RemovabilityDemo, &ctx)
}

fn criterion_8() -> Outcome {
    let report = match lewy_without_thinness() {
        Ok(r) => r,
        Err(e) => return check(false, e.to_string()),
    };
    let r = &report.results;
    let clearance = f(&r["disc"]["clearance"]);
    let v = &r["extension_value"];
    let error = (f(&v[0]).powi(2) + (f(&v[1]) + 100.0).powi(2)).sqrt();
    let discs = r["consistency"]["values"].as_array().map_or(0, |a| a.len());
    let deviation = f(&r["consistency"]["max_deviation"]);
    let steps = r["isotopy"]["steps"].as_u64().unwrap_or(0);
    let iso = f(&r["isotopy"]["min_clearance"]);
    check(
        report.passed() && clearance >= 0.05 && error < 1e-6 && discs >= 5 && deviation < 1e-6 && steps == 20 && iso > 0.0,
        format!(
            "clearance {clearance:.4}, |F - (-100i)| = {error:.1e}, {discs} discs deviate {deviation:.1e}, isotopy min clearance {iso:.4}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let report = match run_bundled(Command::RemovabilityDemo, "lewy") {
        Ok(r) => r,
        Err(e) => return check(false, e.to_string()),
    };
    let t = &report.results["thinness"];
    let radii: Vec<f64> = t["radii"].as_array().map_or(vec![], |a| a.iter().map(f).collect());
    let hits: Vec<f64> = t["hit_fractions"].as_array().map_or(vec![], |a| a.iter().map(f).collect());
    let monotone = hits.windows(2).all(|p| p[1] <= p[0]);
    let last = hits.last().copied().unwrap_or(1.0);
    check(
        radii == [0.1, 0.03, 0.01, 0.003] && hits.len() == 4 && monotone && last < 0.01,
        format!("hit fractions {hits:?} over {} samples", t["samples"]),
    )
}

fn payload(command: Command, name: &str) -> String {
    match run_bundled(command, name) {
        Ok(r) => r.to_json(),
        Err(e) => e.to_json(),
    }
}

fn criterion_10() -> Outcome {
    let mut runs = 0;
    let mut mismatches = Vec::new();
    for (name, text) in BUNDLED {
        let listed: Value = serde_json::from_str::<Value>(text).unwrap()["commands"].clone();
        for cmd in listed.as_array().cloned().unwrap_or_default() {
            let Some(command) = Command::from_name(cmd.as_str().unwrap_or("")) else {
                mismatches.push(format!("{name}: unknown command {cmd}"));
                continue;
            };
            let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
            let a = single.install(|| payload(command, name));
            let b = payload(command, name);
            runs += 2;
            if a != b {
                mismatches.push(format!("{name} {}", command.name()));
            }
        }
    }
    check(
        mismatches.is_empty() && runs > 0,
        format!("{runs} runs across {} bundled specs, mismatches: {mismatches:?}", BUNDLED.len()),
    )
}

fn main() {
    let criteria: [(fn() -> Outcome, Duration); 10] = [
        (criterion_1, Duration::from_secs(1)),
        (criterion_2, Duration::from_secs(30)),
        (criterion_3, Duration::from_secs(10)),
        (criterion_4, Duration::from_secs(60)),
        (criterion_5, Duration::from_secs(120)),
        (criterion_6, Duration::from_secs(300)),
        (criterion_7, Duration::from_secs(120)),
        (criterion_8, Duration::from_secs(120)),
        (criterion_9, Duration::from_secs(120)),
        (criterion_10, Duration::MAX),
    ];
    let mut failed = Vec::new();
    for (i, (run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *limit;
        let pass = outcome.passed && in_time;
        let budget = if *limit == Duration::MAX { String::new() } else { format!(" / limit {:.0?}", limit) };
        println!(
            "criterion {:>2}: {} ({}; {:.2?}{budget})",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed
        );
        if !pass {
            failed.push(i + 1);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
