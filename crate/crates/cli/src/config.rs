//! Experiment configuration (TOML), built-in problems and their resolution
//! into solver objects.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fklab_core::{
    Coefficients, DomainSpec, ProblemSpec, ProcessSpec, SmoothMeasure, SpatialFn,
};

use crate::expr::Expr;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ExitTime,
    Semigroup,
    Potential,
    Revuz,
    ShiftLaw,
    SolveParabolic,
    SolveElliptic,
    TruncationGap,
    Apriori,
    TransformCheck,
    VerifyConvergence,
    FitDecay,
    OracleCompare,
}

impl Experiment {
    pub const ALL: [Experiment; 13] = [
        Self::ExitTime,
        Self::Semigroup,
        Self::Potential,
        Self::Revuz,
        Self::ShiftLaw,
        Self::SolveParabolic,
        Self::SolveElliptic,
        Self::TruncationGap,
        Self::Apriori,
        Self::TransformCheck,
        Self::VerifyConvergence,
        Self::FitDecay,
        Self::OracleCompare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ExitTime => "exit-time",
            Self::Semigroup => "semigroup",
            Self::Potential => "potential",
            Self::Revuz => "revuz",
            Self::ShiftLaw => "shift-law",
            Self::SolveParabolic => "solve-parabolic",
            Self::SolveElliptic => "solve-elliptic",
            Self::TruncationGap => "truncation-gap",
            Self::Apriori => "apriori",
            Self::TransformCheck => "transform-check",
            Self::VerifyConvergence => "verify-convergence",
            Self::FitDecay => "fit-decay",
            Self::OracleCompare => "oracle-compare",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Self::ExitTime => "mean exit time E_x ζ at x0",
            Self::Semigroup => "P_t φ(x0) over numerics.times, against the interval eigen-expansion",
            Self::Potential => "R_α(g(·,0)μ) on a grid, against the Green-function integral",
            Self::Revuz => "α E_m ∫ e^{-αt} dA_t for each α against μ(D)",
            Self::ShiftLaw => "KS test of the law of A_t against A_{s+t} - A_s",
            Self::SolveParabolic => "space-time solution u(t, x) on a grid",
            Self::SolveElliptic => "elliptic solution v(x), optionally over a bandwidth sequence",
            Self::TruncationGap => "|u(m,·) - u(n,·)| against the tail estimate",
            Self::Apriori => "a-priori bound on the driver integrals of the solved u",
            Self::TransformCheck => "G, Φ, Φ⁻¹, H tables for the gradient nonlinearity h",
            Self::VerifyConvergence => "gap |u(t,·) - v| against the large-time bound",
            Self::FitDecay => "decay fit of sup_x of the bound (or gap) sequence",
            Self::OracleCompare => "Monte Carlo solution against a deterministic solver",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Interval([f64; 2]),
    Box { lows: Vec<f64>, highs: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessName {
    KilledBrownian,
    ReflectedBrownian,
    KilledStable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    Zero,
    Lebesgue {
        #[serde(default = "one")]
        density: String,
    },
    Point {
        center: Vec<f64>,
        #[serde(default = "unit")]
        mass: f64,
        bandwidth: f64,
    },
    Surface {
        #[serde(default = "one")]
        weight: String,
    },
}

fn one() -> String {
    "1".into()
}

fn unit() -> f64 {
    1.0
}

/// Problem block. A built-in supplies every field; explicit fields override it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_stable: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub killing_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_mono: Option<f64>,
    /// Gradient nonlinearity `h`, written in `y`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Power,
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesName {
    Bound,
    Gap,
}

/// Numerical settings; unset fields take per-experiment defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    /// Paths of the check estimators (bounds, tails) when they differ from the solver's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check_paths: Option<usize>,
    /// Paths of the inner potential `Ψ` of the large-time bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi_paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_time: Option<usize>,
    /// Parabolic time-slice length for experiments that read several times.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub picard_sweeps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_sweeps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_floor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidths: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd_cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd_dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quad_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series: Option<SeriesName>,
    /// Discretization budget of the convergence check; calibrated when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
}

/// Assertion thresholds; unset fields take per-experiment defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    /// Multiple of the standard error allowed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_sup_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default, rename = "assert")]
    pub checks: Checks,
}

fn default_seed() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))
    }
}

const SIN_PI_X: &str = "sin(3.141592653589793*x)";

/// Names and one-line descriptions of the built-in problems.
pub const BUILTINS: [(&str, &str); 12] = [
    ("interval-half", "killed Brownian motion on (0,1) from x0 = 0.5"),
    ("ball-2d", "killed Brownian motion on the unit disk from the origin"),
    ("linear-heat", "(0,1), φ = sin(πx), f = g = 0"),
    ("heat-killed", "linear-heat with killing rate λ = 1"),
    ("lebesgue-unit", "(0,1), μ = Lebesgue, g = 1, f = 0, φ = 0"),
    ("green-point", "(0,1), μ = mollified δ_{1/2} (ε = 0.05), g = 1, f = 0, φ = 0"),
    ("semilinear", "(0,1), φ = sin(πx), f = -y³ + 1, g = 1/(1 + max(y,0)), μ = mollified δ_{1/2} (ε = 0.05)"),
    ("semilinear-killed", "semilinear with killing rate λ = 1"),
    ("relaxation", "(0,1), φ = sin(πx), f = -y + 1, g = 0"),
    ("stable-interval", "killed 1-stable process on (-1,1), φ = 1, f = 1, g = 0"),
    ("quadratic-gradient", "(0,1), φ = sin(πx), h(y) = y, μ = Lebesgue, g = 1"),
    ("reflected-surface", "reflected Brownian motion on (0,1), μ = unit surface measure, g = 1"),
];

pub fn builtin(name: &str) -> Option<ProblemConfig> {
    let unit = || Some(DomainConfig::Interval([0.0, 1.0]));
    let base = ProblemConfig {
        builtin: Some(name.to_string()),
        domain: unit(),
        process: Some(ProcessName::KilledBrownian),
        alpha_stable: None,
        killing_rate: Some(0.0),
        x0: Some(vec![0.5]),
        phi: Some("0".into()),
        f: Some("0".into()),
        g: Some("0".into()),
        alpha_mono: Some(0.0),
        h: None,
        measure: Some(MeasureConfig::Zero),
    };
    let point = || Some(MeasureConfig::Point { center: vec![0.5], mass: 1.0, bandwidth: 0.05 });
    let p = match name {
        "interval-half" => base,
        "ball-2d" => ProblemConfig {
            domain: Some(DomainConfig::Ball { center: vec![0.0, 0.0], radius: 1.0 }),
            x0: Some(vec![0.0, 0.0]),
            ..base
        },
        "linear-heat" => ProblemConfig { phi: Some(SIN_PI_X.into()), ..base },
        "heat-killed" => ProblemConfig { phi: Some(SIN_PI_X.into()), killing_rate: Some(1.0), ..base },
        "lebesgue-unit" => ProblemConfig {
            g: Some("1".into()),
            measure: Some(MeasureConfig::Lebesgue { density: "1".into() }),
            ..base
        },
        "green-point" => ProblemConfig { g: Some("1".into()), measure: point(), ..base },
        "semilinear" | "semilinear-killed" => ProblemConfig {
            phi: Some(SIN_PI_X.into()),
            f: Some("-y^3 + 1".into()),
            g: Some("1/(1 + max(y, 0))".into()),
            measure: point(),
            killing_rate: Some(if name == "semilinear" { 0.0 } else { 1.0 }),
            ..base
        },
        "relaxation" => ProblemConfig { phi: Some(SIN_PI_X.into()), f: Some("-y + 1".into()), ..base },
        "stable-interval" => ProblemConfig {
            domain: Some(DomainConfig::Interval([-1.0, 1.0])),
            process: Some(ProcessName::KilledStable),
            alpha_stable: Some(1.0),
            x0: Some(vec![0.0]),
            phi: Some("1".into()),
            f: Some("1".into()),
            ..base
        },
        "quadratic-gradient" => ProblemConfig {
            phi: Some(SIN_PI_X.into()),
            g: Some("1".into()),
            h: Some("y".into()),
            measure: Some(MeasureConfig::Lebesgue { density: "1".into() }),
            ..base
        },
        "reflected-surface" => ProblemConfig {
            process: Some(ProcessName::ReflectedBrownian),
            g: Some("1".into()),
            measure: Some(MeasureConfig::Surface { weight: "1".into() }),
            ..base
        },
        _ => return None,
    };
    Some(p)
}

impl ProblemConfig {
    /// Fills unset fields from the named built-in, or from plain defaults.
    pub fn resolve(&self) -> Result<ProblemConfig, CliError> {
        let base = match &self.builtin {
            Some(name) => builtin(name).ok_or_else(|| {
                let known: Vec<&str> = BUILTINS.iter().map(|b| b.0).collect();
                CliError::Schema(format!("unknown builtin '{name}'; known: {}", known.join(", ")))
            })?,
            None => ProblemConfig {
                domain: self.domain.clone(),
                process: Some(ProcessName::KilledBrownian),
                killing_rate: Some(0.0),
                phi: Some("0".into()),
                f: Some("0".into()),
                g: Some("0".into()),
                alpha_mono: Some(0.0),
                measure: Some(MeasureConfig::Zero),
                ..Default::default()
            },
        };
        let pick = |a: &Option<String>, b: &Option<String>| a.clone().or_else(|| b.clone());
        let mut out = ProblemConfig {
            builtin: self.builtin.clone(),
            domain: self.domain.clone().or(base.domain),
            process: self.process.or(base.process),
            alpha_stable: self.alpha_stable.or(base.alpha_stable),
            killing_rate: self.killing_rate.or(base.killing_rate),
            x0: self.x0.clone().or(base.x0),
            phi: pick(&self.phi, &base.phi),
            f: pick(&self.f, &base.f),
            g: pick(&self.g, &base.g),
            alpha_mono: self.alpha_mono.or(base.alpha_mono),
            h: pick(&self.h, &base.h),
            measure: self.measure.clone().or(base.measure),
        };
        let Some(domain) = &out.domain else {
            return Err(CliError::Schema("problem.domain is required without a builtin".into()));
        };
        if out.x0.is_none() {
            out.x0 = Some(match domain {
                DomainConfig::Interval([a, b]) => vec![0.5 * (a + b)],
                DomainConfig::Box { lows, highs } => lows.iter().zip(highs).map(|(l, h)| 0.5 * (l + h)).collect(),
                DomainConfig::Ball { center, .. } => center.clone(),
            });
        }
        if out.process == Some(ProcessName::KilledStable) && out.alpha_stable.is_none() {
            return Err(CliError::Schema("problem.alpha_stable is required for killed-stable".into()));
        }
        Ok(out)
    }
}

fn schema<E: std::fmt::Display>(what: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Schema(format!("{what}: {e}"))
}

fn parse(what: &str, src: &str) -> Result<Expr, CliError> {
    Expr::parse(src).map_err(schema(what))
}

/// A resolved problem ready for the solvers.
#[derive(Clone, Debug)]
pub struct Problem {
    pub config: ProblemConfig,
    pub spec: ProblemSpec<f64>,
    pub x0: Vec<f64>,
    pub h: Option<Expr>,
    /// `(a, b)` for one-dimensional interval problems.
    pub interval: Option<(f64, f64)>,
}

impl Problem {
    /// Builds the solver objects from a resolved config; all failures are schema errors.
    pub fn build(config: &ProblemConfig) -> Result<Self, CliError> {
        let domain = match config.domain.as_ref().expect("resolved") {
            DomainConfig::Interval([a, b]) => DomainSpec::interval(*a, *b),
            DomainConfig::Box { lows, highs } => DomainSpec::boxed(lows.clone(), highs.clone()),
            DomainConfig::Ball { center, radius } => DomainSpec::ball(center.clone(), *radius),
        }
        .map_err(schema("problem.domain"))?;
        let interval = match config.domain.as_ref().expect("resolved") {
            DomainConfig::Interval([a, b]) => Some((*a, *b)),
            _ => None,
        };
        let process = match config.process.expect("resolved") {
            ProcessName::KilledBrownian => ProcessSpec::killed_brownian(domain.clone()),
            ProcessName::ReflectedBrownian => ProcessSpec::reflected_brownian(domain.clone()),
            ProcessName::KilledStable => {
                ProcessSpec::killed_stable(domain.clone(), config.alpha_stable.expect("resolved"))
            }
        }
        .and_then(|p| p.with_killing_rate(config.killing_rate.unwrap_or(0.0)))
        .map_err(schema("problem.process"))?;
        let dim = domain.dim();
        let exprs = [("problem.phi", &config.phi), ("problem.f", &config.f), ("problem.g", &config.g)];
        let mut parsed = Vec::new();
        for (what, src) in exprs {
            let e = parse(what, src.as_deref().unwrap_or("0"))?;
            if dim > 1 && e.uses_x() {
                return Err(CliError::Schema(format!("{what}: expressions in x are one-dimensional only")));
            }
            parsed.push(e);
        }
        let phi = parsed[0].spatial().map_err(schema("problem.phi"))?;
        let coefficients = Coefficients::new(
            parsed[1].coefficient(),
            parsed[2].coefficient(),
            phi,
            config.alpha_mono.unwrap_or(0.0),
        );
        let measure = match config.measure.as_ref().unwrap_or(&MeasureConfig::Zero) {
            MeasureConfig::Zero => SmoothMeasure::zero(),
            MeasureConfig::Lebesgue { density } => {
                let e = parse("problem.measure.density", density)?;
                SmoothMeasure::lebesgue(spatial_1d(&e, dim, "problem.measure.density")?)
            }
            MeasureConfig::Point { center, mass, bandwidth } => {
                SmoothMeasure::mollified_point(center.clone(), *mass, *bandwidth).map_err(schema("problem.measure"))?
            }
            MeasureConfig::Surface { weight } => {
                let e = parse("problem.measure.weight", weight)?;
                SmoothMeasure::surface(spatial_1d(&e, dim, "problem.measure.weight")?)
            }
        };
        measure.validate(&domain).map_err(schema("problem.measure"))?;
        let spec = ProblemSpec::new(process, coefficients, measure).map_err(schema("problem"))?;
        let h = match &config.h {
            Some(src) => {
                let e = parse("problem.h", src)?;
                let _ = e.of_y().map_err(schema("problem.h"))?;
                Some(e)
            }
            None => None,
        };
        let x0 = config.x0.clone().expect("resolved");
        if x0.len() != dim {
            return Err(CliError::Schema(format!("problem.x0 has {} coordinates, domain has {dim}", x0.len())));
        }
        if !domain.closure_contains(&x0) {
            return Err(CliError::Schema(format!("problem.x0 = {x0:?} lies outside the closed domain")));
        }
        Ok(Self { config: config.clone(), spec, x0, h, interval })
    }

    pub fn is_killed_brownian(&self) -> bool {
        self.config.process == Some(ProcessName::KilledBrownian)
    }
}

fn spatial_1d(e: &Expr, dim: usize, what: &str) -> Result<SpatialFn<f64>, CliError> {
    if dim > 1 && e.uses_x() {
        return Err(CliError::Schema(format!("{what}: expressions in x are one-dimensional only")));
    }
    e.spatial().map_err(schema(what))
}
