//! Experiment specification files.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wedgedisc_core::bishop::SolverParams;
use wedgedisc_core::cone::ConeRegion;
use wedgedisc_core::geometry::{self, CRGraphManifold, Monomial, QuadricForm};
use wedgedisc_core::harmonics::CircleGrid;
use wedgedisc_core::quadric_discs::DiscFamilyParams;
use wedgedisc_core::wedge::{
    BoundaryFunction, ConstantFunction, GraphPoint, PolynomialFunction, ReciprocalAffine, ThinComponent, ThinSet,
};

use crate::error::CliError;

/// Complex numbers are written as `[re, im]`.
pub type C = [f64; 2];

pub fn complex(c: &C) -> Complex64 {
    Complex64::new(c[0], c[1])
}

fn complexes(v: &[C]) -> Vec<Complex64> {
    v.iter().map(complex).collect()
}

pub const BUNDLED: [(&str, &str); 4] = [
    ("lewy", include_str!("../specs/lewy.json")),
    ("perturbed_lewy", include_str!("../specs/perturbed_lewy.json")),
    ("product_quadric", include_str!("../specs/product_quadric.json")),
    ("degenerate_line", include_str!("../specs/degenerate_line.json")),
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub manifold: ManifoldSpec,
    pub family: FamilySpec,
    #[serde(default)]
    pub cone: Option<ConeSpec>,
    #[serde(default)]
    pub thin_set: Option<ThinSetSpec>,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rank: RankSpec,
    #[serde(default)]
    pub checks: CheckSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub submersion: SubmersionSpec,
    #[serde(default)]
    pub demo: DemoSpec,
    /// Commands this spec is meant for; used by determinism runs.
    #[serde(default)]
    pub commands: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    pub n: usize,
    pub d: usize,
    /// One Hermitian `(n-d) x (n-d)` matrix per normal direction, row-major.
    pub quadric: Vec<Vec<Vec<C>>>,
    #[serde(default)]
    pub perturbation: Vec<MonomialSpec>,
    pub domain_radius: f64,
    /// Optional dilation `h -> h(lambda .)/lambda^2` applied after validation.
    #[serde(default)]
    pub rescale: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialSpec {
    pub coefficient: Vec<C>,
    #[serde(default)]
    pub x_exp: Vec<u32>,
    #[serde(default)]
    pub w_exp: Vec<u32>,
    #[serde(default)]
    pub wbar_exp: Vec<u32>,
    /// Adds the conjugate term so that the pair is `2 Re(c x^a w^b w_bar^g)`
    /// halved, i.e. `Re(c x^a w^b w_bar^g)`.
    #[serde(default)]
    pub real_part: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub x: Vec<f64>,
    pub a0: Vec<C>,
    pub directions: Vec<Vec<C>>,
    pub scales: Vec<f64>,
    #[serde(default = "one")]
    pub t0: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeSpec {
    pub axis: Vec<f64>,
    pub half_angle: f64,
    pub scale_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub x: Vec<f64>,
    pub w: Vec<C>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub z: Vec<C>,
    pub w: Vec<C>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThinSetSpec {
    #[serde(default)]
    pub points: Vec<PointSpec>,
    /// Sampled polylines through the given vertices; each is a 1-dimensional
    /// patch.
    #[serde(default)]
    pub curves: Vec<CurveSpec>,
    pub tube_radius: f64,
    #[serde(default)]
    pub relaxed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub from: PointSpec,
    pub to: PointSpec,
    #[serde(default = "default_curve_samples")]
    pub samples: usize,
}

fn default_curve_samples() -> usize {
    65
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    Constant {
        value: C,
    },
    Polynomial {
        terms: Vec<PolynomialTerm>,
    },
    /// `1 / (constant + z . z_coefficients + w . w_coefficients)`.
    ReciprocalAffine {
        #[serde(default)]
        constant: C,
        z_coefficients: Vec<C>,
        w_coefficients: Vec<C>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialTerm {
    pub coefficient: C,
    pub z_exp: Vec<u32>,
    pub w_exp: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "one")]
    pub damping: f64,
}

fn default_grid() -> usize {
    64
}

fn default_iterations() -> usize {
    500
}

fn default_tolerance() -> f64 {
    1e-11
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            max_iterations: default_iterations(),
            tolerance: default_tolerance(),
            damping: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankSpec {
    /// Angles (radians) at which to search for maximal rank.
    #[serde(default = "default_angles")]
    pub angles: Vec<f64>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_fine_grid")]
    pub fine_grid: usize,
    #[serde(default = "default_circle_samples")]
    pub circle_samples: usize,
    #[serde(default = "default_scale_checks")]
    pub scale_checks: Vec<f64>,
}

fn default_angles() -> Vec<f64> {
    vec![0.0, std::f64::consts::FRAC_PI_2, 0.7]
}

fn default_budget() -> usize {
    10_000
}

fn default_fine_grid() -> usize {
    720
}

fn default_circle_samples() -> usize {
    8
}

fn default_scale_checks() -> Vec<f64> {
    vec![1e-3, 1.0, 10.0]
}

impl Default for RankSpec {
    fn default() -> Self {
        Self {
            angles: default_angles(),
            budget: default_budget(),
            fine_grid: default_fine_grid(),
            circle_samples: default_circle_samples(),
            scale_checks: default_scale_checks(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    /// Random families compared against the closed form.
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_max_directions")]
    pub max_directions: usize,
    /// Bound on `|t_j| |a_j|`.
    #[serde(default = "default_reach")]
    pub reach: f64,
    #[serde(default = "default_check_tolerance")]
    pub tolerance: f64,
}

fn default_draws() -> usize {
    100
}

fn default_max_directions() -> usize {
    4
}

fn default_reach() -> f64 {
    0.1
}

fn default_check_tolerance() -> f64 {
    1e-8
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            draws: default_draws(),
            max_directions: default_max_directions(),
            reach: default_reach(),
            tolerance: default_check_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Directions of the swept family; defaults to the spec family's.
    #[serde(default)]
    pub directions: Option<Vec<Vec<C>>>,
    pub t_max: f64,
    /// Points per axis of the scale grid `(0, t_max]^N`.
    pub t_points: usize,
    pub base_points: Vec<PointSpec>,
    #[serde(default = "default_cover_tolerance")]
    pub cover_tolerance: f64,
}

fn default_cover_tolerance() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmersionSpec {
    #[serde(default = "default_x_values")]
    pub x_values: Vec<f64>,
    #[serde(default = "default_rays")]
    pub rays: usize,
    /// Ray length as a fraction of `|t*|` of the patched family.
    #[serde(default = "default_ray_fraction")]
    pub ray_fraction: f64,
    #[serde(default = "default_submersion_angles")]
    pub angles: usize,
    /// Allowed relative deviation of `sigma_{2n}` from the pure quadric.
    #[serde(default = "default_persistence")]
    pub persistence: f64,
}

fn default_x_values() -> Vec<f64> {
    vec![-0.2, -0.1, 0.0, 0.1, 0.2]
}

fn default_rays() -> usize {
    5
}

fn default_ray_fraction() -> f64 {
    0.25
}

fn default_submersion_angles() -> usize {
    32
}

fn default_persistence() -> f64 {
    0.2
}

impl Default for SubmersionSpec {
    fn default() -> Self {
        Self {
            x_values: default_x_values(),
            rays: default_rays(),
            ray_fraction: default_ray_fraction(),
            angles: default_submersion_angles(),
            persistence: default_persistence(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoSpec {
    #[serde(default = "default_floor")]
    pub clearance_floor: f64,
    #[serde(default = "default_demo_budget")]
    pub budget: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_consistency")]
    pub consistency_tolerance: f64,
    #[serde(default = "default_steps")]
    pub isotopy_steps: usize,
    /// Level-set samples for the hit-fraction estimate; 0 skips it.
    #[serde(default)]
    pub thinness_samples: usize,
    #[serde(default = "default_radii")]
    pub thinness_radii: Vec<f64>,
    /// The hit fraction at the smallest radius must stay below this.
    #[serde(default = "default_hit_ceiling")]
    pub hit_ceiling: f64,
}

fn default_floor() -> f64 {
    0.05
}

fn default_demo_budget() -> usize {
    400
}

fn default_trials() -> usize {
    5
}

fn default_consistency() -> f64 {
    1e-6
}

fn default_steps() -> usize {
    20
}

fn default_radii() -> Vec<f64> {
    vec![0.1, 0.03, 0.01, 0.003]
}

fn default_hit_ceiling() -> f64 {
    0.01
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            clearance_floor: default_floor(),
            budget: default_demo_budget(),
            trials: default_trials(),
            consistency_tolerance: default_consistency(),
            isotopy_steps: default_steps(),
            thinness_samples: 0,
            thinness_radii: default_radii(),
            hit_ceiling: default_hit_ceiling(),
        }
    }
}

/// A parsed spec together with the hash of its source text.
#[derive(Debug, Clone)]
pub struct LoadedSpec {
    pub spec: ExperimentSpec,
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse(text: &str) -> Result<LoadedSpec, CliError> {
    let spec: ExperimentSpec =
        serde_json::from_str(text).map_err(|e| CliError::spec("parse", format!("invalid spec JSON: {e}")))?;
    Ok(LoadedSpec {
        spec,
        hash: sha256_hex(text.as_bytes()),
    })
}

/// Loads a spec from a file path, or a bundled spec by name.
pub fn load(source: &str) -> Result<LoadedSpec, CliError> {
    if let Some((_, text)) = BUNDLED.iter().find(|(name, _)| *name == source) {
        return parse(text);
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::spec("load", format!("cannot read spec {}: {e}", path.display())))?;
    parse(&text)
}

impl ExperimentSpec {
    /// The validated manifold (normal form checked), rescaled if requested.
    pub fn manifold(&self) -> Result<CRGraphManifold, CliError> {
        let raw = self.raw_manifold()?;
        let violations = geometry::check_normal_form(&raw);
        if !violations.is_empty() {
            return Err(CliError::spec("manifold", geometry::describe_violations(&violations)));
        }
        match self.manifold.rescale {
            Some(lambda) => geometry::rescale(&raw, lambda).map_err(|e| CliError::spec("manifold", e.to_string())),
            None => Ok(raw),
        }
    }

    fn raw_manifold(&self) -> Result<CRGraphManifold, CliError> {
        let ms = &self.manifold;
        let quadric = self.quadric()?;
        let mut perturbation = Vec::new();
        for (i, mono) in ms.perturbation.iter().enumerate() {
            let c = complexes(&mono.coefficient);
            let x = if mono.x_exp.is_empty() { vec![0; ms.d] } else { mono.x_exp.clone() };
            let m = ms.n.saturating_sub(ms.d);
            let w = if mono.w_exp.is_empty() { vec![0; m] } else { mono.w_exp.clone() };
            let wb = if mono.wbar_exp.is_empty() { vec![0; m] } else { mono.wbar_exp.clone() };
            if mono.real_part {
                if w == wb {
                    if c.iter().any(|v| v.im != 0.0) {
                        return Err(CliError::spec(
                            "manifold",
                            format!("monomial {i}: a real term w^b w_bar^b needs a real coefficient"),
                        ));
                    }
                    perturbation.push(Monomial::new(c, x, w, wb));
                } else {
                    let half: Vec<Complex64> = c.iter().map(|v| v * 0.5).collect();
                    let conj: Vec<Complex64> = half.iter().map(|v| v.conj()).collect();
                    perturbation.push(Monomial::new(half, x.clone(), w.clone(), wb.clone()));
                    perturbation.push(Monomial::new(conj, x, wb, w));
                }
            } else {
                perturbation.push(Monomial::new(c, x, w, wb));
            }
        }
        CRGraphManifold::new(ms.n, ms.d, quadric, perturbation, ms.domain_radius)
            .map_err(|e| CliError::spec("manifold", e.to_string()))
    }

    pub fn quadric(&self) -> Result<QuadricForm, CliError> {
        let ms = &self.manifold;
        if ms.d == 0 || ms.d >= ms.n {
            return Err(CliError::spec("manifold", format!("codimension {} must lie in 1..n (n = {})", ms.d, ms.n)));
        }
        let m = ms.n - ms.d;
        let mut matrices = Vec::new();
        for (l, rows) in ms.quadric.iter().enumerate() {
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(CliError::spec("manifold", format!("quadric component {l} must be {m} x {m}")));
            }
            matrices.push(rows.iter().flat_map(|r| complexes(r)).collect());
        }
        QuadricForm::new(m, matrices).map_err(|e| CliError::spec("manifold", e.to_string()))
    }

    pub fn family(&self) -> Result<DiscFamilyParams, CliError> {
        let f = &self.family;
        let directions = f.directions.iter().map(|a| complexes(a)).collect();
        DiscFamilyParams::new(f.x.clone(), complexes(&f.a0), directions, f.scales.clone())
            .map(|p| p.with_t0(f.t0))
            .map_err(|e| CliError::spec("family", e.to_string()))
    }

    pub fn solver(&self, grid: Option<usize>, tol: Option<f64>) -> Result<SolverParams, CliError> {
        let size = grid.unwrap_or(self.solver.grid);
        let grid = CircleGrid::new(size).map_err(|e| CliError::spec("solver", e.to_string()))?;
        let params = SolverParams {
            grid,
            max_iterations: self.solver.max_iterations,
            tolerance: tol.unwrap_or(self.solver.tolerance),
            damping: self.solver.damping,
        };
        params.validate().map_err(|e| CliError::spec("solver", e.to_string()))?;
        Ok(params)
    }

    pub fn cone(&self) -> Result<ConeRegion, CliError> {
        let c = self
            .cone
            .as_ref()
            .ok_or_else(|| CliError::spec("cone", "this command needs a parameter cone".into()))?;
        ConeRegion::new(c.axis.clone(), c.half_angle, c.scale_max).map_err(|e| CliError::spec("cone", e.to_string()))
    }

    pub fn thin_set(&self) -> Result<ThinSet, CliError> {
        let Some(ts) = &self.thin_set else {
            return Ok(ThinSet::empty());
        };
        let mut components = Vec::new();
        if !ts.points.is_empty() {
            components.push(ThinComponent::Points {
                points: ts.points.iter().map(graph_point).collect(),
                tube_radius: ts.tube_radius,
            });
        }
        for curve in &ts.curves {
            let a = graph_point(&curve.from);
            let b = graph_point(&curve.to);
            let patch = wedgedisc_core::wedge::Patch::sample(&[(0.0, 1.0)], curve.samples, |u| {
                let s = u[0];
                GraphPoint::new(
                    a.x.iter().zip(&b.x).map(|(p, q)| p + s * (q - p)).collect(),
                    a.w.iter().zip(&b.w).map(|(p, q)| p + (q - p) * s).collect(),
                )
            })
            .map_err(|e| CliError::spec("thin_set", e.to_string()))?;
            components.push(ThinComponent::Patch {
                patch,
                tube_radius: ts.tube_radius,
            });
        }
        ThinSet::new(self.manifold.n, self.manifold.d, components, ts.relaxed)
            .map_err(|e| CliError::spec("thin_set", e.to_string()))
    }

    pub fn oracle(&self) -> Result<Box<dyn BoundaryFunction + Send + Sync>, CliError> {
        let o = self
            .oracle
            .as_ref()
            .ok_or_else(|| CliError::spec("oracle", "this command needs a boundary-value oracle".into()))?;
        let d = self.manifold.d;
        let m = self.manifold.n - d;
        Ok(match o {
            OracleSpec::Constant { value } => Box::new(ConstantFunction(complex(value))),
            OracleSpec::Polynomial { terms } => {
                for t in terms {
                    if t.z_exp.len() != d || t.w_exp.len() != m {
                        return Err(CliError::spec("oracle", "polynomial exponents do not match (d, n - d)".into()));
                    }
                }
                Box::new(PolynomialFunction {
                    terms: terms.iter().map(|t| (complex(&t.coefficient), t.z_exp.clone(), t.w_exp.clone())).collect(),
                })
            }
            OracleSpec::ReciprocalAffine {
                constant,
                z_coefficients,
                w_coefficients,
            } => {
                if z_coefficients.len() != d || w_coefficients.len() != m {
                    return Err(CliError::spec("oracle", "affine coefficients do not match (d, n - d)".into()));
                }
                Box::new(ReciprocalAffine {
                    constant: complex(constant),
                    z_coefficients: complexes(z_coefficients),
                    w_coefficients: complexes(w_coefficients),
                })
            }
        })
    }

    /// Target point `(z, w)` of the removability demo.
    pub fn target(&self) -> Result<(Vec<Complex64>, Vec<Complex64>), CliError> {
        let t = self
            .target
            .as_ref()
            .ok_or_else(|| CliError::spec("target", "this command needs a target point".into()))?;
        if t.z.len() != self.manifold.d || t.w.len() != self.manifold.n - self.manifold.d {
            return Err(CliError::spec("target", "target dimensions do not match (d, n - d)".into()));
        }
        Ok((complexes(&t.z), complexes(&t.w)))
    }
}

pub fn graph_point(p: &PointSpec) -> GraphPoint {
    GraphPoint::new(p.x.clone(), complexes(&p.w))
}
