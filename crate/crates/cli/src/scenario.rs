//! Scenario files: schema, defaults and construction of the fields they describe.

use std::path::Path;

use homoclinic::bifurcation::{default_anchors, NonlinearField, PerturbedSystemSpec, Residual};
use homoclinic::dichotomy::{ProjectorOptions, SpectrumOptions, SplitOptions};
use homoclinic::field::{
    construct_hyperbolic_family, mobius_bundle, realization_field, DiscreteVectorField, ParameterLoop, SampledBundle,
    TabulatedField,
};
use homoclinic::linalg::{mat_from_rows, RealMatrix};
use homoclinic::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub parameters: ParameterSpec,
    pub field: FieldSpec,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub spectrum: SpectrumSpec,
    #[serde(default)]
    pub solve: SolveSpec,
    #[serde(default)]
    pub certify: CertifySpec,
    #[serde(default)]
    pub realize: RealizeSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParameterSpec {
    /// A single parameter value.
    Point {
        #[serde(default = "zero_point")]
        value: Vec<f64>,
    },
    /// theta_i = 2 pi i / samples on the circle.
    Angular { samples: usize },
    /// An explicit closed loop of parameter vectors.
    Points { points: Vec<Vec<f64>> },
}

fn zero_point() -> Vec<f64> {
    vec![0.0]
}

impl Default for ParameterSpec {
    fn default() -> Self {
        ParameterSpec::Point { value: zero_point() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BundleSpec {
    Mobius,
    /// Moebius bundle plus itself, in R^4.
    MobiusSum,
    Trivial { rank: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSpec {
    #[default]
    None,
    /// exp(-|n|) (x1^2, x1 x2), two dimensions only.
    DecayingQuadratic,
}

fn half() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}
fn minus_two() -> i64 {
    -2
}
fn two() -> i64 {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Autonomous {
        matrix: Vec<Vec<f64>>,
    },
    Asymptotic {
        minus: Vec<Vec<f64>>,
        plus: Vec<Vec<f64>>,
        #[serde(default)]
        switch: i64,
    },
    HyperbolicFamily {
        bundle: BundleSpec,
        #[serde(default = "half")]
        q: f64,
    },
    Realization {
        e: BundleSpec,
        f: BundleSpec,
        #[serde(default = "half")]
        q: f64,
        #[serde(default = "minus_two")]
        kappa_minus: i64,
        #[serde(default = "two")]
        kappa_plus: i64,
        #[serde(default)]
        residual: ResidualSpec,
        #[serde(default = "half")]
        r0: f64,
    },
    /// Realization of (Moebius, trivial line) with the decaying quadratic residual.
    System2Mobius {
        #[serde(default = "half")]
        q: f64,
        #[serde(default = "minus_two")]
        kappa_minus: i64,
        #[serde(default = "two")]
        kappa_plus: i64,
        #[serde(default = "half")]
        r0: f64,
    },
    /// Componentwise a x + x^2.
    Quadratic {
        a: f64,
        dim: usize,
        #[serde(default = "one")]
        r0: f64,
    },
    /// Matrices for every (parameter, time), row-major with shape (n_params, n_times, dim).
    Tabulated {
        shape: [usize; 3],
        n_min: i64,
        params: Vec<Vec<f64>>,
        data: Vec<f64>,
    },
}

impl FieldSpec {
    pub fn name(&self) -> &'static str {
        match self {
            FieldSpec::Autonomous { .. } => "autonomous",
            FieldSpec::Asymptotic { .. } => "asymptotic",
            FieldSpec::HyperbolicFamily { .. } => "hyperbolic_family",
            FieldSpec::Realization { .. } => "realization",
            FieldSpec::System2Mobius { .. } => "system2_mobius",
            FieldSpec::Quadratic { .. } => "quadratic",
            FieldSpec::Tabulated { .. } => "tabulated",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub horizon: usize,
    pub length: usize,
    pub gap_ratio: f64,
    pub sigma_reg: f64,
    pub tau_inv: f64,
    pub verify_horizon: usize,
    /// Truncation window for index computations and localization.
    pub window: Option<[i64; 2]>,
    /// [minus anchor, plus anchor]; derived from the field window when absent.
    pub anchors: Option<[i64; 2]>,
    pub nodes: usize,
    /// Size of the shift-operator cross-check in `projectors`; 0 disables it.
    pub truncation: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        let p = ProjectorOptions::default();
        Numerics {
            horizon: p.horizon,
            length: p.length,
            gap_ratio: p.gap_ratio,
            sigma_reg: p.sigma_reg,
            tau_inv: p.tau_inv,
            verify_horizon: 20,
            window: None,
            anchors: None,
            nodes: homoclinic::matrixcore::DEFAULT_NODES,
            truncation: 0,
        }
    }
}

impl Numerics {
    pub fn projector(&self) -> ProjectorOptions {
        ProjectorOptions {
            horizon: self.horizon,
            length: self.length,
            gap_ratio: self.gap_ratio,
            sigma_reg: self.sigma_reg,
            tau_inv: self.tau_inv,
        }
    }

    pub fn split(&self) -> SplitOptions {
        SplitOptions { horizon: self.horizon, gap_ratio: self.gap_ratio }
    }

    /// (minus, plus) anchors; defaults are materialized before any command runs.
    pub fn anchor_pair(&self) -> (i64, i64) {
        let a = self.anchors.expect("anchors are materialized");
        (a[0], a[1])
    }

    pub fn window_pair(&self) -> (i64, i64) {
        let w = self.window.expect("window is materialized");
        (w[0], w[1])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSpec {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub grid: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub anchor: i64,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        let s = SpectrumOptions::default();
        SpectrumSpec {
            gamma_min: s.gamma_min,
            gamma_max: s.gamma_max,
            grid: s.grid_size,
            horizon: s.horizon,
            burn_in: s.burn_in,
            anchor: s.anchor,
        }
    }
}

impl SpectrumSpec {
    pub fn options(&self, gap_ratio: f64) -> SpectrumOptions {
        SpectrumOptions {
            gamma_min: self.gamma_min,
            gamma_max: self.gamma_max,
            grid_size: self.grid,
            horizon: self.horizon,
            burn_in: self.burn_in,
            gap_ratio,
            anchor: self.anchor,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum SideSpec {
    #[default]
    Plus,
    Minus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhsSpec {
    /// e_component at `offset` steps from the anchor, into the half-line.
    Impulse {
        #[serde(default)]
        offset: i64,
        #[serde(default)]
        component: usize,
    },
    /// Entries uniform in [-1, 1] on `support` steps next to the anchor.
    Random {
        #[serde(default = "default_count")]
        count: usize,
        #[serde(default = "default_support")]
        support: usize,
    },
}

fn default_count() -> usize {
    1
}
fn default_support() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveSpec {
    pub side: SideSpec,
    /// Defaults to the anchor of the chosen side.
    pub anchor: Option<i64>,
    /// Number of steps of the half-window beyond the anchor.
    pub length: usize,
    pub tol: f64,
    pub rhs: RhsSpec,
}

impl Default for SolveSpec {
    fn default() -> Self {
        SolveSpec {
            side: SideSpec::Plus,
            anchor: None,
            length: 60,
            tol: homoclinic::fredholm::SOLVE_TOL,
            rhs: RhsSpec::Impulse { offset: 0, component: 0 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySpec {
    pub localize: bool,
    pub refinement: usize,
    pub manifold_dim: Option<usize>,
}

impl Default for CertifySpec {
    fn default() -> Self {
        CertifySpec { localize: true, refinement: 2, manifold_dim: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RealizeSpec {
    /// Extra times tabulated beyond the field window on each side.
    pub pad: i64,
}

impl Default for RealizeSpec {
    fn default() -> Self {
        RealizeSpec { pad: 1 }
    }
}

/// The field, its nonlinear version when there is one, and the parameters to evaluate at.
pub struct Built {
    pub linear: DiscreteVectorField,
    pub nonlinear: Option<NonlinearField>,
    pub base: Option<ParameterLoop>,
    pub lambdas: Vec<Vec<f64>>,
}

pub fn parse(text: &str) -> Result<Scenario> {
    let sc: Scenario = toml::from_str(text).map_err(|e| Error::Input(format!("malformed scenario: {e}")))?;
    if sc.schema_version != SCHEMA_VERSION {
        return Err(Error::Input(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            sc.schema_version
        )));
    }
    Ok(sc)
}

pub fn load(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read scenario {}: {e}", path.display())))?;
    parse(&text)
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<RealMatrix> {
    let m = mat_from_rows(rows).map_err(|e| Error::Input(format!("field.{what}: {e}")))?;
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Input(format!("field.{what} must be a nonempty square matrix")));
    }
    Ok(m)
}

fn bundle(spec: &BundleSpec, base: &ParameterLoop) -> Result<SampledBundle> {
    match spec {
        BundleSpec::Mobius => mobius_bundle(base),
        BundleSpec::MobiusSum => {
            let m = mobius_bundle(base)?;
            m.direct_sum(&m)
        }
        BundleSpec::Trivial { rank, dim } => SampledBundle::trivial(base.clone(), *rank, *dim),
    }
}

/// Linear field f(x) = A x for commands that need a nonlinear system.
fn linear_as_nonlinear(a: &DiscreteVectorField, r0: f64) -> Result<NonlinearField> {
    let spec = PerturbedSystemSpec { linear: a.clone(), perturbation: None, residual: Residual::zero(a.dim()), r0 };
    spec.into_field()
}

impl Scenario {
    fn parameter_loop(&self) -> Result<Option<ParameterLoop>> {
        match &self.parameters {
            ParameterSpec::Point { .. } => Ok(None),
            ParameterSpec::Angular { samples } => ParameterLoop::angular(*samples).map(Some),
            ParameterSpec::Points { points } => ParameterLoop::new(points.clone()).map(Some),
        }
    }

    /// Bundles are analytic, so a loop is only needed to validate them.
    fn bundle_base(&self, base: &Option<ParameterLoop>) -> Result<ParameterLoop> {
        match base {
            Some(b) if b.is_angular() => Ok(b.clone()),
            Some(_) => Err(Error::Input("bundle builtins need an angular parameter loop".into())),
            None => ParameterLoop::angular(16),
        }
    }

    pub fn build(&self) -> Result<Built> {
        let base = self.parameter_loop()?;
        let lambdas = match (&self.parameters, &base) {
            (ParameterSpec::Point { value }, _) => vec![value.clone()],
            (_, Some(b)) => b.samples().to_vec(),
            _ => unreachable!(),
        };
        let (linear, nonlinear) = match &self.field {
            FieldSpec::Autonomous { matrix: m } => (DiscreteVectorField::autonomous(matrix(m, "matrix")?)?, None),
            FieldSpec::Asymptotic { minus, plus, switch } => {
                (DiscreteVectorField::asymptotic(matrix(minus, "minus")?, matrix(plus, "plus")?, *switch)?, None)
            }
            FieldSpec::HyperbolicFamily { bundle: b, q } => {
                let bb = self.bundle_base(&base)?;
                (construct_hyperbolic_family(&bundle(b, &bb)?, *q)?, None)
            }
            FieldSpec::Realization { e, f, q, kappa_minus, kappa_plus, residual, r0 } => {
                let bb = self.bundle_base(&base)?;
                let a = realization_field(&bundle(e, &bb)?, &bundle(f, &bb)?, *q, *kappa_minus, *kappa_plus, None)?;
                let nl = match residual {
                    ResidualSpec::None => None,
                    ResidualSpec::DecayingQuadratic => {
                        if a.dim() != 2 {
                            return Err(Error::Input("the decaying quadratic residual needs dimension 2".into()));
                        }
                        let spec = PerturbedSystemSpec {
                            linear: a.clone(),
                            perturbation: None,
                            residual: Residual::decaying_quadratic(),
                            r0: *r0,
                        };
                        Some(spec.into_field()?)
                    }
                };
                (a, nl)
            }
            FieldSpec::System2Mobius { q, kappa_minus, kappa_plus, r0 } => {
                let bb = self.bundle_base(&base)?;
                let e = mobius_bundle(&bb)?;
                let t = SampledBundle::trivial(bb, 1, 2)?;
                let a = realization_field(&e, &t, *q, *kappa_minus, *kappa_plus, None)?;
                let spec = PerturbedSystemSpec {
                    linear: a.clone(),
                    perturbation: None,
                    residual: Residual::decaying_quadratic(),
                    r0: *r0,
                };
                (a, Some(spec.into_field()?))
            }
            FieldSpec::Quadratic { a, dim, r0 } => {
                let f = NonlinearField::quadratic(*a, *dim, *r0)?;
                (homoclinic::bifurcation::linearize_at_zero(&f)?, Some(f))
            }
            FieldSpec::Tabulated { shape, n_min, params, data } => {
                let [np, nt, d] = *shape;
                if params.len() != np || data.len() != np * nt * d * d || d == 0 || nt == 0 {
                    return Err(Error::Input(format!(
                        "field.data has {} entries and field.params {} rows; shape {:?} needs {} and {np}",
                        data.len(),
                        params.len(),
                        shape,
                        np * nt * d * d
                    )));
                }
                let matrices = (0..np)
                    .map(|p| {
                        (0..nt)
                            .map(|t| {
                                let o = (p * nt + t) * d * d;
                                RealMatrix::from_row_slice(d, d, &data[o..o + d * d])
                            })
                            .collect()
                    })
                    .collect();
                let tab = TabulatedField { dim: d, n_min: *n_min, params: params.clone(), matrices };
                (tab.into_field()?, None)
            }
        };
        Ok(Built { linear, nonlinear, base, lambdas })
    }

    /// Fill every defaulted option that depends on the field so the echoed scenario is complete.
    pub fn materialize(&mut self, built: &Built) {
        let w = built.linear.window();
        if self.numerics.anchors.is_none() {
            let (km, kp) = default_anchors(w);
            self.numerics.anchors = Some([km, kp]);
        }
        if self.numerics.window.is_none() {
            let (km, kp) = self.numerics.anchor_pair();
            self.numerics.window = Some([(km - 37).min(-40), (kp + 37).max(40)]);
        }
        if self.solve.anchor.is_none() {
            let (km, kp) = self.numerics.anchor_pair();
            self.solve.anchor = Some(if self.solve.side == SideSpec::Plus { kp } else { km });
        }
    }
}

impl Built {
    /// The nonlinear system, or f(x) = A x when the scenario is linear.
    pub fn nonlinear_or_linear(&self, r0: f64) -> Result<NonlinearField> {
        match &self.nonlinear {
            Some(f) => Ok(f.clone()),
            None => linear_as_nonlinear(&self.linear, r0),
        }
    }
}
