//! JSON-configured verification scenarios.
//!
//! A scenario names a metric preset, the charge, an initial state and the
//! integrator settings, and lists the checks to run. [`run_scenario`]
//! integrates the trajectory, evaluates every check, and writes the
//! trajectory CSV plus drift, residual and report JSON files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conserved::{
    conic_identity, equatorial_sphere_orbit, lift_coefficients, named_observable, radial_effective_potential,
    radial_rl_params, runge_lenz_radial, tangency_angle, two_center_sphere, ObservableContext, SphereSpec,
    TwoCenterSpec,
};
use crate::dynamics::{hamiltonian, EffectivePotential, Observable, PhaseState};
use crate::error::{ConfigError, ConservedError};
use crate::geometry::{metric_eval, Center, ExternalPotential, MetricSpec, RadialRlParams};
use crate::integrate::{integrate, DriftEntry, DriftReport, IntegratorConfig, Trajectory, TrajectoryStatus};
use crate::killing::{
    laplace_obstruction, rank1_rotation_condition, rank2_rl_condition, van_holten_residuals, ConstraintResiduals,
    KillingCoefficients,
};
use crate::Vec3;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MetricConfig {
    TaubNut { m: f64 },
    LeeLee { m: f64, a0: f64 },
    WindingString {
        #[serde(default)]
        u0: f64,
    },
    ExtendedTaubNut { a: f64, b: f64, c: f64, d: f64 },
    FlatKepler { k: f64 },
    TwoCenter {
        m1: f64,
        m2: f64,
        a: [f64; 3],
        #[serde(default = "one")]
        f0: f64,
    },
    Multicenter { f0: f64, centers: Vec<CenterConfig> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterConfig {
    pub mass: f64,
    pub position: [f64; 3],
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialConfig {
    State { x: [f64; 3], pi: [f64; 3] },
    /// Circular orbit on the equator of the two-center confinement sphere;
    /// fixes `β` and `γ` of the two-center potential.
    SphereEquator {
        #[serde(default = "x_axis")]
        hint: [f64; 3],
    },
}

fn x_axis() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

/// Explicit two-center potential parameters for `State` initial data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoCenterPotentialConfig {
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CheckConfig {
    /// Relative drift of named observables along the trajectory.
    Drift {
        observables: Vec<String>,
        #[serde(default = "t_1e8")]
        threshold: f64,
    },
    /// Constraint hierarchy of the angular-momentum and Runge-Lenz
    /// coefficients at seeded random points and on the trajectory.
    KillingResiduals {
        #[serde(default = "t_1e8")]
        threshold: f64,
        #[serde(default)]
        points: Option<usize>,
    },
    /// Rotation and Runge-Lenz conditions on `∇f`.
    KillingConditions {
        #[serde(default = "t_1e12")]
        threshold: f64,
        #[serde(default)]
        points: Option<usize>,
    },
    /// `Δ(G - q²g²/2r²)` at random points.
    Laplace {
        #[serde(default = "t_1e6")]
        threshold: f64,
        #[serde(default)]
        points: Option<usize>,
    },
    ConicIdentity {
        #[serde(default = "t_1e8")]
        threshold: f64,
    },
    SphereConfinement {
        #[serde(default = "t_1e6")]
        threshold: f64,
        #[serde(default = "t_1e6")]
        tangency_threshold: f64,
    },
    /// Four-dimensional lift of the Runge-Lenz polynomial at random states.
    LiftRoundtrip {
        #[serde(default = "t_1e10")]
        threshold: f64,
        #[serde(default)]
        points: Option<usize>,
    },
    /// Return to the initial position after one period.
    OrbitClosure {
        #[serde(default)]
        period: Option<f64>,
        #[serde(default = "t_1e8")]
        threshold: f64,
    },
}

fn t_1e6() -> f64 {
    1e-6
}
fn t_1e8() -> f64 {
    1e-8
}
fn t_1e10() -> f64 {
    1e-10
}
fn t_1e12() -> f64 {
    1e-12
}
fn default_points() -> usize {
    100
}
fn default_seed() -> u64 {
    20_240_517
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub metric: MetricConfig,
    pub q: f64,
    pub initial: InitialConfig,
    /// Energy `E` of the effective potential; defaults to `H` of the initial state.
    #[serde(default)]
    pub energy: Option<f64>,
    #[serde(default)]
    pub two_center_potential: Option<TwoCenterPotentialConfig>,
    /// Direction `n` for `Kn` and for the lift check.
    #[serde(default = "z_axis")]
    pub direction: [f64; 3],
    #[serde(default)]
    pub integrator: IntegratorConfig,
    /// CSV observable columns; defaults to the union of drift-check observables.
    #[serde(default)]
    pub observables: Vec<String>,
    #[serde(default)]
    pub checks: Vec<CheckConfig>,
    #[serde(default = "default_points")]
    pub residual_points: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn z_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn v3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// Parses and validates a scenario document.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    Scenario::from_config(&cfg)?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// A validated scenario with every derived quantity resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub spec: MetricSpec,
    pub state0: PhaseState,
    pub energy: f64,
    pub radial: Option<RadialRlParams>,
    pub two_center: Option<TwoCenterSpec>,
    pub two_center_beta_gamma: Option<(f64, f64)>,
    pub sphere: Option<SphereSpec>,
    pub warnings: Vec<String>,
}

fn validation(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        cfg.integrator.validate().map_err(|e| validation(e.to_string()))?;
        if !cfg.q.is_finite() {
            return Err(validation("q must be finite"));
        }
        let mut warnings = Vec::new();

        let (mut spec, two_center) = match &cfg.metric {
            MetricConfig::TaubNut { m } => (MetricSpec::taub_nut(*m), None),
            MetricConfig::LeeLee { m, a0 } => (MetricSpec::lee_lee(*m, *a0), None),
            MetricConfig::WindingString { u0 } => (MetricSpec::winding_string(*u0), None),
            MetricConfig::ExtendedTaubNut { a, b, c, d } => (MetricSpec::extended_taub_nut(*a, *b, *c, *d), None),
            MetricConfig::FlatKepler { k } => (MetricSpec::flat_kepler(*k), None),
            MetricConfig::TwoCenter { m1, m2, a, f0 } => {
                let tc = TwoCenterSpec::new(*m1, *m2, v3(a), *f0).map_err(|e| validation(e.to_string()))?;
                (tc.metric_spec(), Some(tc))
            }
            MetricConfig::Multicenter { f0, centers } => (
                MetricSpec::multicenter(
                    *f0,
                    centers.iter().map(|c| Center { mass: c.mass, position: v3(&c.position) }).collect(),
                ),
                None,
            ),
        };

        let needs_sphere = matches!(cfg.initial, InitialConfig::SphereEquator { .. })
            || cfg.checks.iter().any(|c| matches!(c, CheckConfig::SphereConfinement { .. }));
        let wants = |name: &str| {
            cfg.observables.iter().any(|o| o == name)
                || cfg.checks.iter().any(|c| matches!(c, CheckConfig::Drift { observables, .. } if observables.iter().any(|o| o == name)))
        };
        let mut sphere = None;
        if let Some(tc) = &two_center {
            match two_center_sphere(tc) {
                Ok(s) => sphere = Some(s),
                Err(ConservedError::MedianPlane { normal }) if needs_sphere || wants("Ka") => {
                    return Err(validation(format!(
                        "equal NUT charges m1 = m2: the confinement sphere degenerates to the median plane \
                         (normal {normal:?}), so sphere checks and K_a are unavailable"
                    )));
                }
                Err(_) => {}
            }
        } else if needs_sphere {
            return Err(validation("sphere initial data and sphere checks need a two-center metric"));
        }

        let mut two_center_beta_gamma = cfg.two_center_potential.map(|p| (p.beta, p.gamma));
        let state0 = match &cfg.initial {
            InitialConfig::State { x, pi } => PhaseState::new(v3(x), v3(pi), cfg.q),
            InitialConfig::SphereEquator { hint } => {
                let tc = two_center.as_ref().expect("checked above");
                if cfg.two_center_potential.is_some() {
                    return Err(validation("sphere-equator initial data fixes beta and gamma; remove two_center_potential"));
                }
                let orbit = equatorial_sphere_orbit(tc, cfg.q, &v3(hint)).map_err(|e| validation(e.to_string()))?;
                two_center_beta_gamma = Some((orbit.beta, orbit.gamma));
                orbit.state
            }
        };
        if wants("Ka") && cfg.q == 0.0 {
            return Err(validation("K_a is defined for charged motion only (q = 0)"));
        }

        let mut energy = 0.0;
        let mut radial = None;
        if let Some(tc) = &two_center {
            if let Some((beta, gamma)) = two_center_beta_gamma {
                energy = cfg.energy.unwrap_or(0.0);
                spec = spec.with_potential(ExternalPotential::MulticenterRungeLenz { q: cfg.q, beta, gamma, energy });
                let g = 0.5 * state0.pi.norm_squared()
                    + crate::conserved::two_center_effective_potential(tc, cfg.q, beta, gamma, &state0.x)
                        .map_err(|e| validation(format!("initial state: {e}")))?;
                if g.abs() > 1e-10 * (1.0 + state0.pi.norm_squared()) {
                    warnings.push(format!(
                        "rescaled energy ½Π² + G = {g:e} is not zero; K_a is conserved only on the zero level"
                    ));
                }
            }
        } else {
            let h0 = hamiltonian(&state0, &spec).map_err(|e| validation(format!("initial state: {e}")))?;
            if let Some(e) = cfg.energy {
                if (e - h0).abs() > 1e-12 * h0.abs().max(1.0) {
                    warnings.push(format!(
                        "configured energy {e} differs from H(initial state) = {h0}; using the realized value"
                    ));
                }
            }
            energy = h0;
            radial = radial_rl_params(&spec, cfg.q, energy);
        }

        metric_eval(&spec, &state0.x).map_err(|e| validation(format!("initial state: {e}")))?;

        if let (Some(s), InitialConfig::State { .. }) = (&sphere, &cfg.initial) {
            if needs_sphere {
                let d = s.deviation(&state0.x) * s.radius;
                let normal = (state0.x - s.center) / (state0.x - s.center).norm();
                let radial_pi = state0.pi.dot(&normal);
                if d > 1e-10 || radial_pi.abs() > 1e-10 {
                    return Err(validation(format!(
                        "sphere scenario needs x on the sphere and Π tangent to it (|Δr| = {d:e}, Π·n = {radial_pi:e})"
                    )));
                }
            }
        }

        let uses_rl = wants("Kx") || wants("Ky") || wants("Kz")
            || cfg.checks.iter().any(|c| matches!(c, CheckConfig::ConicIdentity { .. } | CheckConfig::LiftRoundtrip { .. }));
        if uses_rl && radial.is_none() {
            return Err(validation("Runge-Lenz vector checks need a radial preset with its own potential"));
        }
        if cfg.checks.iter().any(|c| matches!(c, CheckConfig::LiftRoundtrip { .. })) && cfg.q == 0.0 {
            return Err(validation("the four-dimensional lift needs q ≠ 0"));
        }

        let scenario = Scenario {
            config: cfg.clone(),
            spec,
            state0,
            energy,
            radial,
            two_center,
            two_center_beta_gamma,
            sphere,
            warnings,
        };
        for name in scenario.observable_names() {
            if named_observable(&name, &scenario.observable_context()).is_none() {
                return Err(validation(format!("unknown or unavailable observable `{name}`")));
            }
        }
        Ok(scenario)
    }

    pub fn observable_context(&self) -> ObservableContext {
        let (g, beta) = match (&self.radial, &self.two_center_beta_gamma) {
            (Some(p), _) => (p.g, p.beta),
            (None, Some((b, _))) => (0.0, *b),
            _ => (self.spec.monopole_charge, 0.0),
        };
        let kepler_strength = match self.spec.potential {
            ExternalPotential::Coulomb { strength } => -strength,
            _ => 0.0,
        };
        ObservableContext {
            g,
            beta,
            two_center: self.two_center,
            n: v3(&self.config.direction).normalize(),
            kepler_mass: 1.0,
            kepler_strength,
        }
    }

    /// CSV columns: the configured list, else the drift observables in order.
    pub fn observable_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.config.observables.clone();
        if names.is_empty() {
            for c in &self.config.checks {
                if let CheckConfig::Drift { observables, .. } = c {
                    for o in observables {
                        if !names.contains(o) {
                            names.push(o.clone());
                        }
                    }
                }
            }
        }
        names
    }

    /// The rescaled potential `G` whose hierarchy the scenario's invariants satisfy.
    pub fn effective_potential(&self) -> Option<EffectivePotential> {
        if let Some(p) = &self.radial {
            return Some(radial_effective_potential(p));
        }
        match (&self.two_center, &self.two_center_beta_gamma) {
            (Some(tc), Some((beta, gamma))) => {
                Some(EffectivePotential::TwoCenter { tc: *tc, q: self.config.q, beta: *beta, gamma: *gamma })
            }
            _ => None,
        }
    }

    /// Seeded sample points away from the singularities: a spherical shell
    /// for radial presets, the confinement sphere for two-center metrics.
    pub fn sample_points(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let d = random_unit(rng);
            let x = match (&self.sphere, &self.two_center) {
                (Some(s), Some(_)) => s.center + d * s.radius,
                _ => {
                    let r0 = if matches!(self.config.metric, MetricConfig::WindingString { .. }) { 1.5 } else { 0.5 };
                    d * rng.gen_range(r0..r0 + 5.0)
                }
            };
            if self.spec.singularity_distance(&x) > 0.1 && metric_eval(&self.spec, &x).is_ok() {
                out.push(x);
            }
        }
        out
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Reported only; does not affect the verdict.
    pub informational: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckResult {
    fn new(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        CheckResult {
            name: name.into(),
            measured,
            threshold,
            passed: measured < threshold,
            informational: false,
            note: None,
        }
    }

    fn failed(name: impl Into<String>, note: String) -> Self {
        CheckResult {
            name: name.into(),
            measured: f64::NAN,
            threshold: f64::NAN,
            passed: false,
            informational: false,
            note: Some(note),
        }
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSummary {
    pub coefficients: String,
    pub points: usize,
    pub max: ConstraintResiduals,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema: u32,
    pub name: String,
    pub seed: u64,
    pub energy: f64,
    pub trajectory: Option<TrajectoryStatus>,
    pub samples: usize,
    pub drift: DriftReport,
    pub residuals: Vec<ResidualSummary>,
    pub checks: Vec<CheckResult>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

impl RunReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Overrides applied on top of a config, as given on the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub rel_tol: Option<f64>,
    pub seed: Option<u64>,
    /// Skip the integration and all trajectory-based checks.
    pub static_only: bool,
}

fn needs_trajectory(c: &CheckConfig) -> bool {
    matches!(
        c,
        CheckConfig::Drift { .. } | CheckConfig::ConicIdentity { .. } | CheckConfig::SphereConfinement { .. }
    )
}

/// Runs a scenario and, if `opts.out_dir` is set, writes its files there.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunReport, ConfigError> {
    let mut cfg = cfg.clone();
    if let Some(t) = opts.rel_tol {
        cfg.integrator.rel_tol = t;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let sc = Scenario::from_config(&cfg)?;
    for w in &sc.warnings {
        log::warn!("{}: {w}", cfg.name);
    }

    let names = sc.observable_names();
    let ctx = sc.observable_context();
    let observables: Vec<Box<dyn Observable>> =
        names.iter().map(|n| named_observable(n, &ctx).expect("validated")).collect();
    let obs_refs: Vec<&dyn Observable> = observables.iter().map(|b| b.as_ref()).collect();

    let mut checks = Vec::new();
    let mut drift = DriftReport::default();
    let mut residuals = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut traj: Option<Trajectory> = None;
    if !opts.static_only {
        match integrate(&sc.state0, &sc.spec, &cfg.integrator) {
            Ok(mut t) => {
                if !t.is_complete() {
                    checks.push(CheckResult::failed("integration", format!("{:?}", t.status)));
                }
                if let Err(e) = t.record(&obs_refs, &sc.spec) {
                    checks.push(CheckResult::failed("observables", e.to_string()));
                }
                traj = Some(t);
            }
            Err(e) => checks.push(CheckResult::failed("integration", e.to_string())),
        }
    }

    for check in &cfg.checks {
        if opts.static_only && needs_trajectory(check) {
            continue;
        }
        let results = run_check(check, &sc, traj.as_ref(), &mut rng, &mut drift, &mut residuals);
        checks.extend(results);
    }

    let passed = checks.iter().all(|c| c.passed || c.informational);
    let report = RunReport {
        schema: SCHEMA_VERSION,
        name: cfg.name.clone(),
        seed: cfg.seed,
        energy: sc.energy,
        trajectory: traj.as_ref().map(|t| t.status),
        samples: traj.as_ref().map_or(0, |t| t.samples.len()),
        drift,
        residuals,
        checks,
        warnings: sc.warnings.clone(),
        passed,
    };

    if let Some(dir) = &opts.out_dir {
        write_outputs(dir, &report, traj.as_ref())?;
    }
    Ok(report)
}

fn run_check(
    check: &CheckConfig,
    sc: &Scenario,
    traj: Option<&Trajectory>,
    rng: &mut ChaCha8Rng,
    drift: &mut DriftReport,
    residuals: &mut Vec<ResidualSummary>,
) -> Vec<CheckResult> {
    let q = sc.config.q;
    let n_points = |p: &Option<usize>| p.unwrap_or(sc.config.residual_points);
    match check {
        CheckConfig::Drift { observables, threshold } => {
            let Some(traj) = traj else { return vec![CheckResult::failed("drift", "no trajectory".into())] };
            observables
                .iter()
                .map(|name| {
                    let entry = match traj.observables.iter().find(|s| &s.name == name) {
                        Some(series) => DriftReport::from_series(name, &series.values),
                        None => {
                            let ctx = sc.observable_context();
                            let obs = named_observable(name, &ctx).expect("validated");
                            match crate::integrate::drift_report(traj, &[obs.as_ref()], &sc.spec) {
                                Ok(r) => r.entries[0].clone(),
                                Err(e) => return CheckResult::failed(format!("drift {name}"), e.to_string()),
                            }
                        }
                    };
                    let res = CheckResult::new(format!("drift {name}"), entry.max_rel_deviation, *threshold);
                    push_drift(drift, entry);
                    res
                })
                .collect()
        }
        CheckConfig::KillingResiduals { threshold, points } => {
            let Some(pot) = sc.effective_potential() else {
                return vec![CheckResult::failed("killing-residuals", "no Runge-Lenz potential for this preset".into())];
            };
            let mut pts = sc.sample_points(n_points(points), rng);
            if let Some(t) = traj {
                pts.extend(t.samples.iter().map(|s| s.state.x));
            }
            let sets: Vec<(&str, Box<dyn Fn(&Vec3) -> KillingCoefficients>)> = match (&sc.radial, &sc.two_center) {
                (Some(p), _) => {
                    let qg = p.q * p.g;
                    let beta = p.beta;
                    vec![
                        ("angular-momentum", Box::new(move |n: &Vec3| KillingCoefficients::AngularMomentum { n: *n, qg })),
                        ("runge-lenz", Box::new(move |n: &Vec3| KillingCoefficients::RungeLenz { n: *n, qg, beta })),
                    ]
                }
                (None, Some(tc)) => {
                    let tc = *tc;
                    let beta = sc.two_center_beta_gamma.map_or(0.0, |b| b.0);
                    vec![
                        ("axial-angular-momentum", Box::new(move |_: &Vec3| KillingCoefficients::TwoCenterAxial { tc, q })),
                        ("axial-runge-lenz", Box::new(move |_: &Vec3| KillingCoefficients::TwoCenterRungeLenz { tc, q, beta })),
                    ]
                }
                _ => unreachable!("effective potential implies radial or two-center data"),
            };
            let mut out = Vec::new();
            for (label, make) in sets {
                let mut acc = ConstraintResiduals::default();
                let mut error = None;
                for x in &pts {
                    let n = random_unit(rng);
                    match van_holten_residuals(&make(&n), &sc.spec, &pot, q, x) {
                        Ok(r) => acc = acc.max_with(&r),
                        Err(e) => {
                            error = Some(e.to_string());
                            break;
                        }
                    }
                }
                if let Some(e) = error {
                    out.push(CheckResult::failed(format!("killing-residuals {label}"), e));
                    continue;
                }
                residuals.push(ResidualSummary { coefficients: label.to_string(), points: pts.len(), max: acc });
                for (order, v) in acc.as_array().iter().enumerate() {
                    out.push(CheckResult::new(format!("killing-residuals {label} order {order}"), *v, *threshold));
                }
            }
            out
        }
        CheckConfig::KillingConditions { threshold, points } => {
            let pts = sc.sample_points(n_points(points), rng);
            let mut rot: f64 = 0.0;
            let mut rl: f64 = 0.0;
            for x in &pts {
                let n = match &sc.two_center {
                    Some(tc) => tc.axis(),
                    None => random_unit(rng),
                };
                match (rank1_rotation_condition(&sc.spec, &n, x), rank2_rl_condition(&sc.spec, &n, x)) {
                    (Ok(a), Ok((_, b))) => {
                        rot = rot.max(a);
                        rl = rl.max(b);
                    }
                    (Err(e), _) | (_, Err(e)) => return vec![CheckResult::failed("killing-conditions", e.to_string())],
                }
            }
            // the Runge-Lenz condition on the sphere carries the rounding of S near the centers
            let rl_threshold = if sc.two_center.is_some() { threshold.max(1e-9) } else { *threshold };
            vec![
                CheckResult::new("killing-conditions rotation", rot, *threshold),
                CheckResult::new("killing-conditions runge-lenz", rl, rl_threshold),
            ]
        }
        CheckConfig::Laplace { threshold, points } => {
            let Some(pot) = sc.effective_potential() else {
                return vec![CheckResult::failed("laplace", "no Runge-Lenz potential for this preset".into())];
            };
            let g = sc.radial.map_or(0.0, |p| p.g);
            let pts = sc.sample_points(n_points(points), rng);
            let mut analytic: f64 = 0.0;
            let mut stencil: f64 = 0.0;
            for x in &pts {
                let r = x.norm();
                let a = laplace_obstruction(&pot, q, g, x);
                let s = pot.stencil_laplacian(x).map(|l| l - q * q * g * g / r.powi(4));
                match (a, s) {
                    (Ok(a), Ok(s)) => {
                        analytic = analytic.max(a.abs());
                        stencil = stencil.max(s.abs());
                    }
                    (Err(e), _) | (_, Err(e)) => return vec![CheckResult::failed("laplace", e.to_string())],
                }
            }
            let mut out = vec![
                CheckResult::new("laplace analytic", analytic, *threshold),
                CheckResult::new("laplace stencil", stencil, *threshold),
            ];
            if sc.radial.is_none() {
                for c in &mut out {
                    c.informational = true;
                    c.note = Some("two-center potential: Δ(q²S²/2) = q²|∇S|² is not harmonic; measured only".into());
                }
            }
            out
        }
        CheckConfig::ConicIdentity { threshold } => {
            let (Some(traj), Some(p)) = (traj, &sc.radial) else {
                return vec![CheckResult::failed("conic-identity", "needs a trajectory and radial parameters".into())];
            };
            let mut first = None;
            let mut worst: f64 = 0.0;
            for s in &traj.samples {
                match conic_identity(&s.state, p.g, p.beta) {
                    Ok((lhs, rhs)) => {
                        let r0 = *first.get_or_insert(rhs);
                        let scale = f64::abs(r0).max(1.0);
                        worst = worst.max((lhs - rhs).abs() / scale).max((lhs - r0).abs() / scale);
                    }
                    Err(e) => return vec![CheckResult::failed("conic-identity", e.to_string())],
                }
            }
            vec![CheckResult::new("conic-identity", worst, *threshold)]
        }
        CheckConfig::SphereConfinement { threshold, tangency_threshold } => {
            let (Some(traj), Some(sphere)) = (traj, &sc.sphere) else {
                return vec![CheckResult::failed("sphere-confinement", "needs a trajectory and a sphere".into())];
            };
            let dev = traj.samples.iter().map(|s| sphere.deviation(&s.state.x)).fold(0.0, f64::max);
            let mut angle: f64 = 0.0;
            for s in &traj.samples {
                match tangency_angle(&s.state, &sc.spec, sphere) {
                    Ok(a) => angle = angle.max(a),
                    Err(e) => return vec![CheckResult::failed("sphere-tangency", e.to_string())],
                }
            }
            vec![
                CheckResult::new("sphere-confinement", dev, *threshold),
                CheckResult::new("sphere-tangency", angle, *tangency_threshold).note("radians"),
            ]
        }
        CheckConfig::LiftRoundtrip { threshold, points } => {
            let Some(p) = &sc.radial else {
                return vec![CheckResult::failed("lift-roundtrip", "needs radial parameters".into())];
            };
            let n = v3(&sc.config.direction).normalize();
            let coeffs = KillingCoefficients::RungeLenz { n, qg: p.q * p.g, beta: p.beta };
            let mut worst: f64 = 0.0;
            let mut used = 0;
            for x in sc.sample_points(n_points(points), rng) {
                let pi = random_unit(rng) * rng.gen_range(0.1..2.0);
                let (lift, a) = match lift_coefficients(&coeffs, &sc.spec, q, &x) {
                    Ok(v) => v,
                    // points on the Dirac string have no lift in this gauge
                    Err(ConservedError::Domain(crate::error::DomainError::GaugeString { .. })) => continue,
                    Err(e) => return vec![CheckResult::failed("lift-roundtrip", e.to_string())],
                };
                let pm = pi + a * q;
                let form = lift.quadratic_form(&[pm[0], pm[1], pm[2], q]);
                let state = PhaseState::new(x, pi, q);
                match runge_lenz_radial(&state, p.g, p.beta) {
                    Ok(k) => {
                        let kn = k.dot(&n);
                        worst = worst.max((form - kn).abs() / kn.abs().max(1.0));
                        used += 1;
                    }
                    Err(e) => return vec![CheckResult::failed("lift-roundtrip", e.to_string())],
                }
            }
            vec![CheckResult::new("lift-roundtrip", worst, *threshold).note(format!("{used} states"))]
        }
        CheckConfig::OrbitClosure { period, threshold } => {
            let period = match period {
                Some(t) => *t,
                None => match kepler_period(sc) {
                    Some(t) => t,
                    None => {
                        return vec![CheckResult::failed(
                            "orbit-closure",
                            "period is required unless the preset is a bound flat Kepler orbit".into(),
                        )]
                    }
                },
            };
            let icfg = sc.config.integrator.with_t_max(period).with_sample_interval(period);
            match integrate(&sc.state0, &sc.spec, &icfg) {
                Ok(t) if t.is_complete() => {
                    let d = (t.last().state.x - sc.state0.x).norm() / sc.state0.x.norm().max(1.0);
                    vec![CheckResult::new("orbit-closure", d, *threshold).note(format!("period {period}"))]
                }
                Ok(t) => vec![CheckResult::failed("orbit-closure", format!("{:?}", t.status))],
                Err(e) => vec![CheckResult::failed("orbit-closure", e.to_string())],
            }
        }
    }
}

fn push_drift(drift: &mut DriftReport, entry: DriftEntry) {
    if drift.get(&entry.name).is_none() {
        drift.entries.push(entry);
    }
}

/// `2π a^{3/2}/√k` with `a = -k/2E` for flat Kepler motion at `q = 0`.
fn kepler_period(sc: &Scenario) -> Option<f64> {
    let MetricConfig::FlatKepler { k } = sc.config.metric else { return None };
    let e = sc.energy - 0.5 * sc.config.q * sc.config.q;
    if k <= 0.0 || e >= 0.0 {
        return None;
    }
    let a = -k / (2.0 * e);
    Some(2.0 * std::f64::consts::PI * a.powf(1.5) / k.sqrt())
}

fn json_with_schema<T: Serialize>(name: &str, key: &str, value: &T) -> serde_json::Value {
    serde_json::json!({ "schema": SCHEMA_VERSION, "name": name, key: value })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), ConfigError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ConfigError::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes `t, x1..x3, Pi1..Pi3` and the recorded observables, 17 significant digits.
pub fn write_trajectory_csv<W: Write>(out: &mut W, traj: &Trajectory) -> std::io::Result<()> {
    let mut header = String::from("t,x1,x2,x3,Pi1,Pi2,Pi3");
    for s in &traj.observables {
        header.push(',');
        header.push_str(&s.name);
    }
    writeln!(out, "{header}")?;
    for (i, s) in traj.samples.iter().enumerate() {
        let mut row = vec![s.t, s.state.x[0], s.state.x[1], s.state.x[2], s.state.pi[0], s.state.pi[1], s.state.pi[2]];
        row.extend(traj.observables.iter().map(|o| o.values[i]));
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

fn write_outputs(dir: &Path, report: &RunReport, traj: Option<&Trajectory>) -> Result<(), ConfigError> {
    fs::create_dir_all(dir)?;
    let stem = &report.name;
    if let Some(t) = traj {
        let file = fs::File::create(dir.join(format!("{stem}.csv")))?;
        let mut w = std::io::BufWriter::new(file);
        write_trajectory_csv(&mut w, t)?;
        w.flush()?;
    }
    write_json(&dir.join(format!("{stem}.drift.json")), &json_with_schema(stem, "drift", &report.drift))?;
    write_json(
        &dir.join(format!("{stem}.residuals.json")),
        &json_with_schema(stem, "residuals", &report.residuals),
    )?;
    let value = serde_json::to_value(report).map_err(|e| ConfigError::Io(e.to_string()))?;
    write_json(&dir.join(format!("{stem}.report.json")), &value)?;
    Ok(())
}
