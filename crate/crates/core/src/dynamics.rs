//! The reduced Hamiltonian system on `g_ij = f δ_ij`.
//!
//! Phase space is `(x, Π)` with the covariant momentum `Π_j = p_j - q A_j`
//! and the conserved charge `q` as a parameter. The brackets are
//! `{x^i, Π_j} = δ^i_j` and `{Π_i, Π_j} = q F_ij`.

use std::fmt;
use std::sync::Arc;

use crate::conserved::TwoCenterSpec;
use crate::error::DomainError;
use crate::fd;
use crate::geometry::{
    christoffel, gauge_potential, magnetic_field, metric_eval, MetricSample, MetricSpec, R_MIN,
};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub x: Vec3,
    /// Covariant momentum `Π`.
    pub pi: Vec3,
    /// Vertical momentum `p_4`, the electric charge of the reduced motion.
    pub q: f64,
}

impl PhaseState {
    pub fn new(x: Vec3, pi: Vec3, q: f64) -> Self {
        PhaseState { x, pi, q }
    }

    /// Reverses the motion: `Π → -Π` and `q → -q`, the latter so that the
    /// magnetic force also retraces its path.
    pub fn time_reversed(&self) -> Self {
        PhaseState { x: self.x, pi: -self.pi, q: -self.q }
    }

    pub(crate) fn to_array(self) -> [f64; 6] {
        [self.x[0], self.x[1], self.x[2], self.pi[0], self.pi[1], self.pi[2]]
    }

    pub(crate) fn from_array(y: &[f64; 6], q: f64) -> Self {
        PhaseState {
            x: Vec3::new(y[0], y[1], y[2]),
            pi: Vec3::new(y[3], y[4], y[5]),
            q,
        }
    }
}

/// `V = q²/2h + U` and its gradient.
pub fn scalar_potential(sample: &MetricSample, q: f64) -> (f64, Vec3) {
    let k = 0.5 * q * q;
    let v = k / sample.h + sample.u;
    let grad = -sample.grad_h * (k / (sample.h * sample.h)) + sample.grad_u;
    (v, grad)
}

/// `H = ½ g^ij Π_i Π_j + q²/2h + U`.
pub fn hamiltonian(state: &PhaseState, spec: &MetricSpec) -> Result<f64, DomainError> {
    let s = metric_eval(spec, &state.x)?;
    let (v, _) = scalar_potential(&s, state.q);
    Ok(0.5 * state.pi.norm_squared() / s.f + v)
}

/// Time derivatives of `(x, Π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseRate {
    pub dx: Vec3,
    pub dpi: Vec3,
}

/// Hamilton's equations
/// `ẋ^i = g^ij Π_j`,
/// `Π̇_i = q F_ij ẋ^j - ∂_i V + Γ^k_ij Π_k ẋ^j`.
pub fn eom_rhs(state: &PhaseState, spec: &MetricSpec) -> Result<PhaseRate, DomainError> {
    let s = metric_eval(spec, &state.x)?;
    let field = magnetic_field(spec, &state.x)?;
    let gamma = christoffel(&s, &state.x);
    let (_, grad_v) = scalar_potential(&s, state.q);
    let dx = state.pi / s.f;

    let mut dpi = field.f * dx * state.q - grad_v;
    for i in 0..3 {
        let mut curv = 0.0;
        for k in 0..3 {
            for j in 0..3 {
                curv += gamma.gamma[k][i][j] * state.pi[k] * dx[j];
            }
        }
        dpi[i] += curv;
    }
    Ok(PhaseRate { dx, dpi })
}

/// `f dv/dt` with `v = Π/f`, i.e. `Π̇ - Π (∇f·ẋ)/f`.
pub fn scaled_acceleration(state: &PhaseState, spec: &MetricSpec) -> Result<Vec3, DomainError> {
    let s = metric_eval(spec, &state.x)?;
    let rate = eom_rhs(state, spec)?;
    Ok(rate.dpi - state.pi * (s.grad_f.dot(&rate.dx) / s.f))
}

/// `dx⁴/dt = q/h - A_k ẋ^k` in the Dirac-string gauge. Radial kinds only.
pub fn vertical_rate(state: &PhaseState, spec: &MetricSpec) -> Result<f64, DomainError> {
    if !spec.is_radial() {
        return Err(DomainError::Unsupported(
            "vertical reconstruction is only provided for radial metrics".into(),
        ));
    }
    let s = metric_eval(spec, &state.x)?;
    let a = gauge_potential(spec, &state.x)?;
    Ok(state.q / s.h - a.dot(&(state.pi / s.f)))
}

pub type PotentialFn = Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>;

/// The scalar `G = f W` of the augmented Hamiltonian `½ Π² + G`.
#[derive(Clone)]
pub enum EffectivePotential {
    /// `G = (qg)²/2r² + β/r + γ`, the radial form admitting a Runge-Lenz vector.
    RadialRungeLenz { qg: f64, beta: f64, gamma: f64 },
    /// `G = (q²/2) S² + β S + γ` with `S = m1/|x-a| + m2/|x+a|`.
    TwoCenter { tc: TwoCenterSpec, q: f64, beta: f64, gamma: f64 },
    /// `G = f (U + q²/2h + E/f - E)` read off a metric with its potential.
    Reduced { spec: Box<MetricSpec>, q: f64, energy: f64 },
    Custom(PotentialFn),
}

impl fmt::Debug for EffectivePotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EffectivePotential::RadialRungeLenz { qg, beta, gamma } => {
                write!(f, "RadialRungeLenz {{ qg: {qg}, beta: {beta}, gamma: {gamma} }}")
            }
            EffectivePotential::TwoCenter { tc, q, beta, gamma } => write!(
                f,
                "TwoCenter {{ tc: {tc:?}, q: {q}, beta: {beta}, gamma: {gamma} }}"
            ),
            EffectivePotential::Reduced { spec, q, energy } => {
                write!(f, "Reduced {{ spec: {spec:?}, q: {q}, energy: {energy} }}")
            }
            EffectivePotential::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

fn radial_check(x: &Vec3) -> Result<f64, DomainError> {
    let r = x.norm();
    if r <= R_MIN {
        return Err(DomainError::NearSingularity { distance: r, point: [x[0], x[1], x[2]] });
    }
    Ok(r)
}

impl EffectivePotential {
    pub fn value(&self, x: &Vec3) -> Result<f64, DomainError> {
        match self {
            EffectivePotential::RadialRungeLenz { qg, beta, gamma } => {
                let r = radial_check(x)?;
                Ok(0.5 * qg * qg / (r * r) + beta / r + gamma)
            }
            EffectivePotential::TwoCenter { tc, q, beta, gamma } => {
                let s = tc.sum(x)?;
                Ok(0.5 * q * q * s * s + beta * s + gamma)
            }
            EffectivePotential::Reduced { spec, q, energy } => {
                let s = metric_eval(spec, x)?;
                Ok(s.f * (s.u + 0.5 * q * q / s.h + energy / s.f - energy))
            }
            EffectivePotential::Custom(g) => Ok(g(x)),
        }
    }

    pub fn gradient(&self, x: &Vec3) -> Result<Vec3, DomainError> {
        match self {
            EffectivePotential::RadialRungeLenz { qg, beta, .. } => {
                let r = radial_check(x)?;
                let dr = -qg * qg / (r * r * r) - beta / (r * r);
                Ok(x * (dr / r))
            }
            EffectivePotential::TwoCenter { tc, q, beta, .. } => {
                let s = tc.sum(x)?;
                Ok(tc.grad_sum(x)? * (q * q * s + beta))
            }
            EffectivePotential::Reduced { spec, q, energy } => {
                let s = metric_eval(spec, x)?;
                let k = 0.5 * q * q;
                Ok(s.grad_f * (s.u + k / s.h - energy)
                    + (s.grad_u - s.grad_h * (k / (s.h * s.h))) * s.f)
            }
            EffectivePotential::Custom(g) => {
                let h = fd::scaled_step(fd::FIRST_DERIVATIVE_STEP, x);
                Ok(fd::gradient(|y| g(y), x, h))
            }
        }
    }

    /// Closed form where available, otherwise a five-point stencil.
    pub fn laplacian(&self, x: &Vec3) -> Result<f64, DomainError> {
        match self {
            EffectivePotential::RadialRungeLenz { qg, .. } => {
                let r = radial_check(x)?;
                Ok(qg * qg / (r * r * r * r))
            }
            EffectivePotential::TwoCenter { tc, q, .. } => {
                // S is harmonic off the centers
                Ok(q * q * tc.grad_sum(x)?.norm_squared())
            }
            _ => self.stencil_laplacian(x),
        }
    }

    pub fn stencil_laplacian(&self, x: &Vec3) -> Result<f64, DomainError> {
        let mut h = fd::scaled_step(fd::SECOND_DERIVATIVE_STEP, x);
        if let EffectivePotential::Reduced { spec, .. } = self {
            h = h.min(spec.singularity_distance(x) / 20.0);
        }
        fd::try_laplacian(|y| self.value(y), x, h)
    }
}

/// Partial derivatives of an observable with respect to `x` and `Π`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseGradient {
    pub dx: Vec3,
    pub dpi: Vec3,
}

/// A smooth function on phase space, optionally with analytic gradients.
pub trait Observable: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, state: &PhaseState, spec: &MetricSpec) -> Result<f64, DomainError>;
    fn gradient(
        &self,
        _state: &PhaseState,
        _spec: &MetricSpec,
    ) -> Option<Result<PhaseGradient, DomainError>> {
        None
    }
}

pub type ObservableFn = Arc<dyn Fn(&PhaseState, &MetricSpec) -> Result<f64, DomainError> + Send + Sync>;

/// Observable defined by a closure.
#[derive(Clone)]
pub struct FnObservable {
    pub name: String,
    pub f: ObservableFn,
}

impl FnObservable {
    pub fn new<F>(name: &str, f: F) -> Self
    where
        F: Fn(&PhaseState, &MetricSpec) -> Result<f64, DomainError> + Send + Sync + 'static,
    {
        FnObservable { name: name.to_string(), f: Arc::new(f) }
    }
}

impl Observable for FnObservable {
    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, state: &PhaseState, spec: &MetricSpec) -> Result<f64, DomainError> {
        (self.f)(state, spec)
    }
}

/// The reduced Hamiltonian with its analytic gradient.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hamiltonian;

impl Observable for Hamiltonian {
    fn name(&self) -> &str {
        "H"
    }

    fn value(&self, state: &PhaseState, spec: &MetricSpec) -> Result<f64, DomainError> {
        hamiltonian(state, spec)
    }

    fn gradient(
        &self,
        state: &PhaseState,
        spec: &MetricSpec,
    ) -> Option<Result<PhaseGradient, DomainError>> {
        Some(metric_eval(spec, &state.x).map(|s| {
            let (_, grad_v) = scalar_potential(&s, state.q);
            let p2 = state.pi.norm_squared();
            PhaseGradient {
                dx: -s.grad_f * (0.5 * p2 / (s.f * s.f)) + grad_v,
                dpi: state.pi / s.f,
            }
        }))
    }
}

/// Relative step of the bracket's finite-difference fallback.
pub const BRACKET_STEP: f64 = 1e-6;

fn numeric_gradient(
    obs: &dyn Observable,
    state: &PhaseState,
    spec: &MetricSpec,
) -> Result<PhaseGradient, DomainError> {
    let hx = BRACKET_STEP * state.x.norm().max(1.0);
    let hp = BRACKET_STEP * state.pi.norm().max(1.0);
    let mut g = PhaseGradient { dx: Vec3::zeros(), dpi: Vec3::zeros() };
    for k in 0..3 {
        let mut p = *state;
        let mut m = *state;
        p.x[k] += hx;
        m.x[k] -= hx;
        g.dx[k] = (obs.value(&p, spec)? - obs.value(&m, spec)?) / (2.0 * hx);
        let mut p = *state;
        let mut m = *state;
        p.pi[k] += hp;
        m.pi[k] -= hp;
        g.dpi[k] = (obs.value(&p, spec)? - obs.value(&m, spec)?) / (2.0 * hp);
    }
    Ok(g)
}

fn phase_gradient(
    obs: &dyn Observable,
    state: &PhaseState,
    spec: &MetricSpec,
) -> Result<PhaseGradient, DomainError> {
    match obs.gradient(state, spec) {
        Some(g) => g,
        None => numeric_gradient(obs, state, spec),
    }
}

/// Covariant bracket
/// `{A, B} = ∂_k A ∂B/∂Π_k - ∂A/∂Π_k ∂_k B + q F_kl ∂A/∂Π_k ∂B/∂Π_l`.
pub fn poisson_bracket(
    a: &dyn Observable,
    b: &dyn Observable,
    state: &PhaseState,
    spec: &MetricSpec,
) -> Result<f64, DomainError> {
    let ga = phase_gradient(a, state, spec)?;
    let gb = phase_gradient(b, state, spec)?;
    let field = magnetic_field(spec, &state.x)?;
    Ok(ga.dx.dot(&gb.dpi) - ga.dpi.dot(&gb.dx)
        + state.q * ga.dpi.dot(&(field.f * gb.dpi)))
}
