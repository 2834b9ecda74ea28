//! Closed-form conserved quantities and admissible potentials, the
//! two-center confinement sphere, and the lifted Killing-Stäckel tensors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{scaled_acceleration, EffectivePotential, FnObservable, Hamiltonian, Observable, PhaseState};
use crate::error::{ConservedError, DomainError};
use crate::geometry::{gauge_potential, to_array, Center, MetricKind, MetricSpec, RadialRlParams, R_MIN};
use crate::killing::{CoefficientJet, KillingCoefficients};
use crate::Vec3;

fn radius(x: &Vec3) -> Result<f64, DomainError> {
    let r = x.norm();
    if r <= R_MIN {
        return Err(DomainError::NearSingularity { distance: r, point: to_array(x) });
    }
    Ok(r)
}

/// `J = x × Π - qg x/r`.
pub fn angular_momentum(state: &PhaseState, g: f64) -> Result<Vec3, DomainError> {
    let r = radius(&state.x)?;
    Ok(state.x.cross(&state.pi) - state.x * (state.q * g / r))
}

/// `K = Π × J + β x/r`.
pub fn runge_lenz_radial(state: &PhaseState, g: f64, beta: f64) -> Result<Vec3, DomainError> {
    let r = radius(&state.x)?;
    let j = angular_momentum(state, g)?;
    Ok(state.pi.cross(&j) + state.x * (beta / r))
}

/// Both sides of `K·x - βr = J² - q²g²`.
pub fn conic_identity(state: &PhaseState, g: f64, beta: f64) -> Result<(f64, f64), DomainError> {
    let r = radius(&state.x)?;
    let k = runge_lenz_radial(state, g, beta)?;
    let j = angular_momentum(state, g)?;
    let qg = state.q * g;
    Ok((k.dot(&state.x) - beta * r, j.norm_squared() - qg * qg))
}

/// `U = (q²g²/2r² + β/r + γ)/f - q²/2h + E` at one radius.
pub fn runge_lenz_potential(f: f64, h: f64, r: f64, p: &RadialRlParams) -> f64 {
    let qg = p.q * p.g;
    (0.5 * qg * qg / (r * r) + p.beta / r + p.gamma) / f - 0.5 * p.q * p.q / h + p.energy
}

/// The `(g, β, γ)` for which the preset's own potential takes the radial
/// Runge-Lenz form at energy `energy`, or `None` for kinds without one.
pub fn radial_rl_params(spec: &MetricSpec, q: f64, energy: f64) -> Option<RadialRlParams> {
    let q2 = q * q;
    let (g, beta, gamma) = match (&spec.kind, &spec.potential) {
        (MetricKind::TaubNut { m }, crate::ExternalPotential::Zero) => {
            (4.0 * m, -4.0 * m * (energy - q2), 0.5 * q2 - energy)
        }
        (MetricKind::LeeLee { m, a0 }, crate::ExternalPotential::Zero) => {
            (4.0 * m, -4.0 * m * (energy - q2), 0.5 * q2 - energy + 0.5 * a0 * a0)
        }
        (MetricKind::WindingString, crate::ExternalPotential::Constant(u)) => {
            (1.0, -q2, 0.5 * q2 + u - energy)
        }
        (MetricKind::WindingString, crate::ExternalPotential::Zero) => (1.0, -q2, 0.5 * q2 - energy),
        (MetricKind::ExtendedTaubNut { a, b, c, d }, crate::ExternalPotential::Zero) => {
            (1.0, 0.5 * q2 * d - a * energy, 0.5 * q2 * c - b * energy)
        }
        (MetricKind::FlatKepler, crate::ExternalPotential::Coulomb { strength }) => {
            (0.0, *strength, 0.5 * q2 - energy)
        }
        (MetricKind::FlatKepler, crate::ExternalPotential::Zero) => (0.0, 0.0, 0.5 * q2 - energy),
        (_, crate::ExternalPotential::RadialRungeLenz(p)) if spec.is_radial() => {
            return Some(*p);
        }
        _ => return None,
    };
    if g != spec.monopole_charge {
        return None;
    }
    Some(RadialRlParams { q, g, beta, gamma, energy })
}

pub fn radial_effective_potential(p: &RadialRlParams) -> EffectivePotential {
    EffectivePotential::RadialRungeLenz { qg: p.q * p.g, beta: p.beta, gamma: p.gamma }
}

/// Two NUT charges, `m1` at `+a` and `m2` at `-a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoCenterSpec {
    pub m1: f64,
    pub m2: f64,
    pub a: Vec3,
    pub f0: f64,
}

impl TwoCenterSpec {
    pub fn new(m1: f64, m2: f64, a: Vec3, f0: f64) -> Result<Self, ConservedError> {
        let tc = TwoCenterSpec { m1, m2, a, f0 };
        tc.validate()?;
        Ok(tc)
    }

    pub fn validate(&self) -> Result<(), ConservedError> {
        if !(self.m1 > 0.0 && self.m2 > 0.0) {
            return Err(ConservedError::InvalidTwoCenter(format!(
                "NUT charges must be positive, got m1 = {}, m2 = {}",
                self.m1, self.m2
            )));
        }
        if !(self.a.norm() > 0.0) {
            return Err(ConservedError::InvalidTwoCenter("the centers coincide (a = 0)".into()));
        }
        Ok(())
    }

    pub fn axis(&self) -> Vec3 {
        self.a / self.a.norm()
    }

    pub fn centers(&self) -> [Center; 2] {
        [
            Center { mass: self.m1, position: self.a },
            Center { mass: self.m2, position: -self.a },
        ]
    }

    pub fn metric_spec(&self) -> MetricSpec {
        MetricSpec::multicenter(self.f0, self.centers().to_vec())
    }

    fn offsets(&self, x: &Vec3) -> Result<[(f64, Vec3, f64); 2], DomainError> {
        let mut out = [(0.0, Vec3::zeros(), 0.0); 2];
        for (o, c) in out.iter_mut().zip(self.centers()) {
            let d = x - c.position;
            let n = d.norm();
            if n <= R_MIN {
                return Err(DomainError::NearSingularity { distance: n, point: to_array(x) });
            }
            *o = (c.mass, d, n);
        }
        Ok(out)
    }

    /// `S = m1/|x-a| + m2/|x+a|`.
    pub fn sum(&self, x: &Vec3) -> Result<f64, DomainError> {
        Ok(self.offsets(x)?.iter().map(|(m, _, n)| m / n).sum())
    }

    pub fn grad_sum(&self, x: &Vec3) -> Result<Vec3, DomainError> {
        Ok(self
            .offsets(x)?
            .iter()
            .fold(Vec3::zeros(), |acc, (m, d, n)| acc - d * (m / (n * n * n))))
    }

    /// `W·â` with `W = m1 (x-a)/|x-a| + m2 (x+a)/|x+a|`.
    pub fn axial_potential(&self, x: &Vec3) -> Result<f64, DomainError> {
        let a = self.axis();
        Ok(self.offsets(x)?.iter().map(|(m, d, n)| m * d.dot(&a) / n).sum())
    }

    pub fn grad_axial_potential(&self, x: &Vec3) -> Result<Vec3, DomainError> {
        let a = self.axis();
        Ok(self.offsets(x)?.iter().fold(Vec3::zeros(), |acc, (m, d, n)| {
            acc + (a / *n - d * (d.dot(&a) / (n * n * n))) * *m
        }))
    }
}

/// The sphere `|x - ρa| = R` on which `m2/|x+a|³ = m1/|x-a|³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SphereSpec {
    pub rho: f64,
    pub center: Vec3,
    pub radius: f64,
}

impl SphereSpec {
    /// `| |x - ρa| - R | / R`.
    pub fn deviation(&self, x: &Vec3) -> f64 {
        ((x - self.center).norm() - self.radius).abs() / self.radius
    }
}

pub fn two_center_sphere(tc: &TwoCenterSpec) -> Result<SphereSpec, ConservedError> {
    tc.validate()?;
    if tc.m1 == tc.m2 {
        return Err(ConservedError::MedianPlane { normal: to_array(&tc.axis()) });
    }
    let p1 = tc.m1.powf(2.0 / 3.0);
    let p2 = tc.m2.powf(2.0 / 3.0);
    let rho = (p1 + p2) / (p2 - p1);
    Ok(SphereSpec {
        rho,
        center: tc.a * rho,
        radius: tc.a.norm() * (rho * rho - 1.0).sqrt(),
    })
}

/// `G = (q²/2) S² + β S + γ`.
pub fn two_center_effective_potential(
    tc: &TwoCenterSpec,
    q: f64,
    beta: f64,
    gamma: f64,
    x: &Vec3,
) -> Result<f64, DomainError> {
    let s = tc.sum(x)?;
    Ok(0.5 * q * q * s * s + beta * s + gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoCenterObservables {
    pub ja: f64,
    pub q2: f64,
    /// Absent for uncharged motion.
    pub ka: Option<f64>,
}

pub fn two_center_observables(
    state: &PhaseState,
    tc: &TwoCenterSpec,
    beta: f64,
) -> Result<TwoCenterObservables, DomainError> {
    let a = tc.axis();
    let (x, pi, q) = (&state.x, &state.pi, state.q);
    let la = x.cross(pi).dot(&a);
    let w = tc.axial_potential(x)?;
    let ja = la - q * w;
    let pa = pi.dot(&a);
    let ka = if q == 0.0 {
        None
    } else {
        let offsets = tc.offsets(x)?;
        let wvec = offsets.iter().fold(Vec3::zeros(), |acc, (m, d, n)| acc + d * (m / n));
        let j = x.cross(pi) - wvec * q;
        Some(pi.cross(&j).dot(&a) + beta / q * (la - ja))
    };
    Ok(TwoCenterObservables { ja, q2: ja * ja + pa * pa, ka })
}

/// A circular orbit on the equator of the confinement sphere together with
/// the potential parameters that sustain it at zero rescaled energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereOrbit {
    pub state: PhaseState,
    pub beta: f64,
    pub gamma: f64,
    pub sphere: SphereSpec,
}

/// Builds the equatorial circular orbit of the sphere, moving along `â × e1`
/// where `e1` is the projection of `hint` orthogonal to the axis.
///
/// Along the sphere `∇S = -2k x` with `k = m1/|x-a|³`; balancing the axial
/// and cylindrical components of `q Π × B - ∇G` for uniform circular
/// motion fixes the speed and `β`, and `γ` sets `½ Π² + G = 0`.
pub fn equatorial_sphere_orbit(tc: &TwoCenterSpec, q: f64, hint: &Vec3) -> Result<SphereOrbit, ConservedError> {
    if q == 0.0 {
        return Err(ConservedError::ZeroCharge);
    }
    let sphere = two_center_sphere(tc)?;
    let a_hat = tc.axis();
    let mut e1 = hint - a_hat * hint.dot(&a_hat);
    if e1.norm() < 1e-8 {
        e1 = a_hat.cross(&Vec3::x());
        if e1.norm() < 1e-8 {
            e1 = a_hat.cross(&Vec3::y());
        }
    }
    let e1 = e1 / e1.norm();
    let e2 = a_hat.cross(&e1);
    let z0 = sphere.rho * tc.a.norm();
    let r_c = sphere.radius;
    let x0 = a_hat * z0 + e1 * r_c;
    let k = tc.m1 / (x0 - tc.a).norm().powi(3);
    let p = -2.0 * k * q * q * r_c * r_c * x0.norm_squared() / (z0 * z0);
    let v = p * z0 / (q * r_c);
    let s = tc.sum(&x0)?;
    let beta = p - q * q * s;
    let gamma = -0.5 * v * v - 0.5 * q * q * s * s - beta * s;
    Ok(SphereOrbit { state: PhaseState::new(x0, e2 * v, q), beta, gamma, sphere })
}

/// Angle between `f dv/dt` and `x - ρa`, ignoring orientation.
pub fn tangency_angle(state: &PhaseState, spec: &MetricSpec, sphere: &SphereSpec) -> Result<f64, DomainError> {
    let acc = scaled_acceleration(state, spec)?;
    let d = state.x - sphere.center;
    Ok(acc.cross(&d).norm().atan2(acc.dot(&d).abs()))
}

/// A symmetric tensor on the lifted manifold. Indices run over `x^1..x^3`
/// then the extra coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedTensor {
    pub dim: usize,
    pub components: DMatrix<f64>,
}

impl LiftedTensor {
    /// `½ C^{μν} p_μ p_ν`.
    pub fn quadratic_form(&self, p: &[f64]) -> f64 {
        assert_eq!(p.len(), self.dim, "momentum dimension mismatch");
        let v = nalgebra::DVector::from_column_slice(p);
        0.5 * v.dot(&(&self.components * &v))
    }

    pub fn is_symmetric(&self) -> bool {
        self.components == self.components.transpose()
    }
}

/// Lifts `C + C^i Π_i + ½ C^ij Π_i Π_j` to a quadratic form on the
/// four-manifold, so that with `p_4 = q` and `p_j = Π_j + q A_j` it
/// reproduces the reduced polynomial:
/// `C^{i4} = C^i/q - C^ik A_k`, `C^{44} = 2C/q² - 2 C^k A_k/q + C^jk A_j A_k`.
pub fn lift_killing_stackel(jet: &CoefficientJet, q: f64, a: &Vec3) -> Result<LiftedTensor, ConservedError> {
    if q == 0.0 {
        return Err(ConservedError::ZeroCharge);
    }
    let mut m = DMatrix::zeros(4, 4);
    let ci4 = jet.ci / q - jet.cij * a;
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = jet.cij[(i, j)];
        }
        m[(i, 3)] = ci4[i];
        m[(3, i)] = ci4[i];
    }
    m[(3, 3)] = 2.0 * jet.c / (q * q) - 2.0 * jet.ci.dot(a) / q + a.dot(&(jet.cij * a));
    Ok(LiftedTensor { dim: 4, components: m })
}

/// [`lift_killing_stackel`] with the Dirac-string gauge of `spec` at `x`.
pub fn lift_coefficients(
    coeffs: &KillingCoefficients,
    spec: &MetricSpec,
    q: f64,
    x: &Vec3,
) -> Result<(LiftedTensor, Vec3), ConservedError> {
    let a = gauge_potential(spec, x)?;
    let jet = coeffs.jet(spec, x)?;
    Ok((lift_killing_stackel(&jet, q, &a)?, a))
}

/// Inverse Bargmann metric for `dx² + 2 ds dt - 2V dt²`, coordinates ordered
/// `(x, s, t)`.
pub fn bargmann_inverse_metric(v: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(5, 5);
    for i in 0..3 {
        g[(i, i)] = 1.0;
    }
    g[(3, 3)] = 2.0 * v;
    g[(3, 4)] = 1.0;
    g[(4, 3)] = 1.0;
    g
}

pub fn bargmann_metric(v: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(5, 5);
    for i in 0..3 {
        g[(i, i)] = 1.0;
    }
    g[(3, 4)] = 1.0;
    g[(4, 3)] = 1.0;
    g[(4, 4)] = -2.0 * v;
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct BargmannTensor {
    /// `C^ij = 2η̂ δ^ij - n^i x^j - n^j x^i`, `C^{ss} = 2η̂ V`, others zero.
    pub components: LiftedTensor,
    /// The same tensor with its Bargmann trace removed.
    pub trace_free: LiftedTensor,
}

pub fn bargmann_kepler_tensor(n: &Vec3, x: &Vec3, v: f64) -> Result<BargmannTensor, DomainError> {
    radius(x)?;
    let n = n / n.norm();
    let eta = n.dot(x);
    let mut c = DMatrix::zeros(5, 5);
    for i in 0..3 {
        for j in 0..3 {
            let d = if i == j { 2.0 * eta } else { 0.0 };
            c[(i, j)] = d - n[i] * x[j] - n[j] * x[i];
        }
    }
    c[(3, 3)] = 2.0 * eta * v;
    let trace = (&bargmann_metric(v) * &c).trace();
    let trace_free = &c - bargmann_inverse_metric(v) * (trace / 5.0);
    Ok(BargmannTensor {
        components: LiftedTensor { dim: 5, components: c },
        trace_free: LiftedTensor { dim: 5, components: trace_free },
    })
}

/// `(p × L + m² V x)·n` for the Kepler potential `V = -k/r`.
pub fn bargmann_kepler_kn(x: &Vec3, p: &Vec3, n: &Vec3, mass: f64, k: f64) -> Result<f64, DomainError> {
    let r = radius(x)?;
    let l = x.cross(p);
    let v = -k / r;
    Ok((p.cross(&l) + x * (mass * mass * v)).dot(n))
}

/// Parameters that the named observables need besides the state.
#[derive(Debug, Clone, Copy)]
pub struct ObservableContext {
    pub g: f64,
    pub beta: f64,
    pub two_center: Option<TwoCenterSpec>,
    pub n: Vec3,
    pub kepler_mass: f64,
    pub kepler_strength: f64,
}

impl Default for ObservableContext {
    fn default() -> Self {
        ObservableContext {
            g: 0.0,
            beta: 0.0,
            two_center: None,
            n: Vec3::z(),
            kepler_mass: 1.0,
            kepler_strength: 1.0,
        }
    }
}

pub const OBSERVABLE_NAMES: [&str; 12] = ["H", "q", "Jx", "Jy", "Jz", "Kx", "Ky", "Kz", "Ja", "Q2", "Ka", "Kn"];

/// Looks up a registered observable. Two-center names need
/// `ctx.two_center`; `Ka` is unavailable for `q = 0`.
pub fn named_observable(name: &str, ctx: &ObservableContext) -> Option<Box<dyn Observable>> {
    let ObservableContext { g, beta, two_center, n, kepler_mass, kepler_strength } = *ctx;
    let component = |name: &str| match name.as_bytes()[1] {
        b'x' => 0,
        b'y' => 1,
        _ => 2,
    };
    let obs: Box<dyn Observable> = match name {
        "H" => Box::new(Hamiltonian),
        "q" => Box::new(FnObservable::new("q", |s, _| Ok(s.q))),
        "Jx" | "Jy" | "Jz" => {
            let i = component(name);
            Box::new(FnObservable::new(name, move |s, _| Ok(angular_momentum(s, g)?[i])))
        }
        "Kx" | "Ky" | "Kz" => {
            let i = component(name);
            Box::new(FnObservable::new(name, move |s, _| Ok(runge_lenz_radial(s, g, beta)?[i])))
        }
        "Ja" => {
            let tc = two_center?;
            Box::new(FnObservable::new(name, move |s, _| Ok(two_center_observables(s, &tc, beta)?.ja)))
        }
        "Q2" => {
            let tc = two_center?;
            Box::new(FnObservable::new(name, move |s, _| Ok(two_center_observables(s, &tc, beta)?.q2)))
        }
        "Ka" => {
            let tc = two_center?;
            Box::new(FnObservable::new(name, move |s, _| {
                two_center_observables(s, &tc, beta)?
                    .ka
                    .ok_or_else(|| DomainError::Unsupported("K_a is undefined for q = 0".into()))
            }))
        }
        "Kn" => Box::new(FnObservable::new(name, move |s, _| {
            bargmann_kepler_kn(&s.x, &s.pi, &n, kepler_mass, kepler_strength)
        })),
        _ => return None,
    };
    Some(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{metric_eval, ExternalPotential};
    use crate::killing::van_holten_residuals;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tc18() -> TwoCenterSpec {
        TwoCenterSpec::new(1.0, 8.0, Vec3::new(0.0, 0.0, 1.0), 1.0).unwrap()
    }

    #[test]
    fn angular_momentum_examples() {
        let s = PhaseState::new(Vec3::x(), Vec3::y(), 1.0);
        assert_relative_eq!(angular_momentum(&s, 0.0).unwrap(), Vec3::new(0.0, 0.0, 1.0));
        assert_relative_eq!(angular_momentum(&s, 2.0).unwrap(), Vec3::new(-2.0, 0.0, 1.0));
        assert!(angular_momentum(&PhaseState::new(Vec3::zeros(), Vec3::y(), 1.0), 1.0).is_err());
    }

    #[test]
    fn circular_kepler_rl_vanishes() {
        let s = PhaseState::new(Vec3::x(), Vec3::y(), 0.0);
        assert!(runge_lenz_radial(&s, 0.0, -1.0).unwrap().norm() < 1e-15);
    }

    #[test]
    fn conic_and_projection_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let x = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let pi = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let (q, g, beta) = (rng.gen_range(-1.0..1.0), rng.gen_range(-4.0..4.0), rng.gen_range(-3.0..3.0));
            let s = PhaseState::new(x, pi, q);
            let (lhs, rhs) = conic_identity(&s, g, beta).unwrap();
            assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0));
            let jk = angular_momentum(&s, g).unwrap().dot(&runge_lenz_radial(&s, g, beta).unwrap());
            assert!((jk + beta * q * g).abs() < 1e-10 * jk.abs().max(1.0));
        }
    }

    #[test]
    fn rl_matches_coefficient_polynomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let spec = MetricSpec::taub_nut(1.0);
        for _ in 0..50 {
            let x = Vec3::new(rng.gen_range(0.5..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let pi = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let n = Vec3::new(0.3, -0.4, 0.866).normalize();
            let (q, g, beta) = (0.5, 4.0, -1.7);
            let s = PhaseState::new(x, pi, q);
            let poly = KillingCoefficients::RungeLenz { n, qg: q * g, beta }.jet(&spec, &x).unwrap().polynomial(&pi);
            assert_relative_eq!(poly, runge_lenz_radial(&s, g, beta).unwrap().dot(&n), max_relative = 1e-12);
            let poly = KillingCoefficients::AngularMomentum { n, qg: q * g }.jet(&spec, &x).unwrap().polynomial(&pi);
            assert_relative_eq!(poly, angular_momentum(&s, g).unwrap().dot(&n), max_relative = 1e-12);
        }
    }

    #[test]
    fn runge_lenz_potential_reproduces_presets() {
        let q = 0.5;
        for (spec, energy) in [
            (MetricSpec::taub_nut(1.0), 0.7),
            (MetricSpec::extended_taub_nut(2.0, 1.0, 0.5, 0.3), -0.2),
            (MetricSpec::winding_string(0.3), 0.9),
            (MetricSpec::flat_kepler(1.0), -0.4),
        ] {
            let p = radial_rl_params(&spec, q, energy).unwrap();
            for r in [0.1, 0.5, 1.0, 3.0, 10.0, 100.0] {
                let x = Vec3::new(0.0, 0.0, if spec.kind.name() == "winding-string" { r + 1.0 } else { r });
                let m = metric_eval(&spec, &x).unwrap();
                let u = runge_lenz_potential(m.f, m.h, x.norm(), &p);
                assert!((u - m.u).abs() < 1e-12 * m.u.abs().max(1.0), "{spec:?} r = {r}: {u} vs {}", m.u);
            }
        }
        // Lee-Lee: the a0 term is absorbed by shifting γ
        let ll = MetricSpec::lee_lee(1.0, 0.6);
        let p = radial_rl_params(&ll, q, 0.7).unwrap();
        let tn = radial_rl_params(&MetricSpec::taub_nut(1.0), q, 0.7).unwrap();
        assert_relative_eq!(p.gamma - tn.gamma, 0.18, epsilon = 1e-15);
        for r in [0.3, 2.0, 20.0] {
            let m = metric_eval(&ll, &Vec3::new(r, 0.0, 0.0)).unwrap();
            assert!((runge_lenz_potential(m.f, m.h, r, &p) - m.u).abs() < 1e-12);
        }
        // flat consistency
        let p = RadialRlParams { q, g: 0.0, beta: 0.0, gamma: 0.0, energy: 0.5 * q * q };
        assert!(runge_lenz_potential(1.0, 1.0, 2.0, &p).abs() < 1e-15);
    }

    #[test]
    fn sphere_examples() {
        let s = two_center_sphere(&tc18()).unwrap();
        assert_relative_eq!(s.rho, 5.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(s.center, Vec3::new(0.0, 0.0, 5.0 / 3.0), epsilon = 1e-14);
        assert_relative_eq!(s.radius, 4.0 / 3.0, epsilon = 1e-14);

        // brute-force check of the defining ratio on sampled sphere points
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let tc = tc18();
        for _ in 0..100 {
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let x = s.center + d * s.radius;
            let lhs = tc.m2 / (x + tc.a).norm().powi(3);
            let rhs = tc.m1 / (x - tc.a).norm().powi(3);
            assert!((lhs - rhs).abs() < 1e-10 * rhs);
        }

        let eq = TwoCenterSpec::new(1.0, 1.0, Vec3::z(), 1.0).unwrap();
        assert!(matches!(two_center_sphere(&eq), Err(ConservedError::MedianPlane { .. })));

        let mut last = f64::INFINITY;
        for m2 in [10.0, 1e3, 1e6, 1e9] {
            let s = two_center_sphere(&TwoCenterSpec::new(1.0, m2, Vec3::z(), 1.0).unwrap()).unwrap();
            assert!(s.rho > 1.0 && s.radius < last);
            last = s.radius;
        }
        assert!(last < 1e-2);
        assert!(TwoCenterSpec::new(-1.0, 1.0, Vec3::z(), 1.0).is_err());
        assert!(TwoCenterSpec::new(1.0, 1.0, Vec3::zeros(), 1.0).is_err());
    }

    #[test]
    fn two_center_observable_examples() {
        let tc = TwoCenterSpec::new(1.0, 1.0, Vec3::z(), 1.0).unwrap();
        let s = PhaseState::new(Vec3::x(), Vec3::y(), 1.0);
        let o = two_center_observables(&s, &tc, 0.3).unwrap();
        assert_relative_eq!(o.ja, 1.0, epsilon = 1e-15);

        let s0 = PhaseState::new(Vec3::new(0.4, 0.3, 0.2), Vec3::new(0.1, -0.5, 0.7), 0.0);
        let o = two_center_observables(&s0, &tc18(), 0.3).unwrap();
        let la = s0.x.cross(&s0.pi)[2];
        assert_eq!(o.ja, la);
        assert_relative_eq!(o.q2, la * la + 0.49, epsilon = 1e-15);
        assert!(o.ka.is_none());
    }

    #[test]
    fn two_center_reduces_to_radial() {
        // m1 → 0 and a → 0: J_a becomes the axial component of the monopole J
        let tc = TwoCenterSpec { m1: 0.0, m2: 3.0, a: Vec3::z() * 1e-12, f0: 1.0 };
        let s = PhaseState::new(Vec3::new(0.7, -0.2, 1.1), Vec3::new(0.3, 0.4, -0.2), 0.8);
        let ja = two_center_observables(&s, &tc, 0.0).unwrap().ja;
        let j = angular_momentum(&s, 3.0).unwrap();
        assert!((ja - j[2]).abs() < 1e-10);
    }

    #[test]
    fn two_center_scalars_match_coefficients() {
        let tc = tc18();
        let spec = tc.metric_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..50 {
            let x = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let pi = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let (q, beta) = (0.9, -1.2);
            let s = PhaseState::new(x, pi, q);
            let o = two_center_observables(&s, &tc, beta).unwrap();
            let ja = KillingCoefficients::TwoCenterAxial { tc, q }.jet(&spec, &x).unwrap().polynomial(&pi);
            let q2 = KillingCoefficients::TwoCenterQuadratic { tc, q }.jet(&spec, &x).unwrap().polynomial(&pi);
            let ka = KillingCoefficients::TwoCenterRungeLenz { tc, q, beta }.jet(&spec, &x).unwrap().polynomial(&pi);
            assert!((o.ja - ja).abs() < 1e-12 * ja.abs().max(1.0));
            assert!((o.q2 - q2).abs() < 1e-12 * q2.abs().max(1.0));
            assert!((o.ka.unwrap() - ka).abs() < 1e-12 * ka.abs().max(1.0));
        }
    }

    #[test]
    fn two_center_potential_examples() {
        let tc = TwoCenterSpec::new(1.0, 1.0, Vec3::z(), 1.0).unwrap();
        assert_eq!(two_center_effective_potential(&tc, 0.0, 0.0, 0.0, &Vec3::new(0.3, 0.0, 0.1)).unwrap(), 0.0);
        let (q, b, g) = (0.7, 0.3, -0.2);
        assert_relative_eq!(
            two_center_effective_potential(&tc, q, b, g, &Vec3::zeros()).unwrap(),
            2.0 * q * q + 2.0 * b + g,
            epsilon = 1e-15
        );
    }

    #[test]
    fn axial_hierarchy_and_sphere_restricted_rl() {
        let tc = tc18();
        let spec = tc.metric_spec();
        let sphere = two_center_sphere(&tc).unwrap();
        let (q, beta, gamma) = (0.8, -0.6, 0.2);
        let pot = EffectivePotential::TwoCenter { tc, q, beta, gamma };
        let free = EffectivePotential::TwoCenter { tc, q: 0.0, beta: 0.0, gamma: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..50 {
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let on = sphere.center + d * sphere.radius;
            let res = van_holten_residuals(&KillingCoefficients::TwoCenterAxial { tc, q }, &spec, &pot, q, &on).unwrap();
            assert!(res.max() < 1e-8, "{res:?}");
            // J_a² passes, but the axial translation part of Q = J_a² + Π_a²
            // meets the magnetic term at order 2 wherever a × B ≠ 0
            let res = van_holten_residuals(&KillingCoefficients::TwoCenterQuadratic { tc, q }, &spec, &free, q, &on).unwrap();
            assert!(res.order0 < 1e-8 && res.order1 < 1e-8 && res.order3 < 1e-8, "{res:?}");
            let b = crate::geometry::magnetic_field(&spec, &on).unwrap().b;
            if tc.axis().cross(&b).norm() > 1e-2 {
                assert!(res.order2 > 1e-3, "{res:?}");
            }
            let res = van_holten_residuals(&KillingCoefficients::TwoCenterRungeLenz { tc, q, beta }, &spec, &pot, q, &on).unwrap();
            assert!(res.max() < 1e-8, "on sphere {res:?}");
        }
        let off = sphere.center + Vec3::new(0.9, 0.0, 0.5) * sphere.radius;
        let res = van_holten_residuals(&KillingCoefficients::TwoCenterRungeLenz { tc, q, beta }, &spec, &pot, q, &off).unwrap();
        assert!(res.order1 > 1e-3);
    }

    #[test]
    fn equatorial_orbit_data() {
        let tc = tc18();
        let orbit = equatorial_sphere_orbit(&tc, 1.0, &Vec3::x()).unwrap();
        assert!(orbit.sphere.deviation(&orbit.state.x) < 1e-14);
        assert!(orbit.state.pi.dot(&(orbit.state.x - orbit.sphere.center)).abs() < 1e-12);
        assert_relative_eq!(orbit.beta, -5.1143, epsilon = 1e-4);
        assert_relative_eq!(orbit.gamma, 9.1084, epsilon = 1e-4);
        let g = two_center_effective_potential(&tc, 1.0, orbit.beta, orbit.gamma, &orbit.state.x).unwrap();
        assert!((0.5 * orbit.state.pi.norm_squared() + g).abs() < 1e-12);
        let spec = tc.metric_spec().with_potential(ExternalPotential::MulticenterRungeLenz {
            q: 1.0,
            beta: orbit.beta,
            gamma: orbit.gamma,
            energy: 0.3,
        });
        assert!(tangency_angle(&orbit.state, &spec, &orbit.sphere).unwrap() < 1e-10);
        assert!(matches!(equatorial_sphere_orbit(&tc, 0.0, &Vec3::x()), Err(ConservedError::ZeroCharge)));
    }

    #[test]
    fn lift_reproduces_reduced_polynomial() {
        let spec = MetricSpec::taub_nut(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let q = 0.5;
        let qg = q * spec.monopole_charge;
        for _ in 0..50 {
            let x = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.1..3.0));
            let pi = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let n = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let coeffs = KillingCoefficients::RungeLenz { n, qg, beta: -1.4 };
            let (lift, a) = lift_coefficients(&coeffs, &spec, q, &x).unwrap();
            assert!(lift.is_symmetric());
            let p = pi + a * q;
            let form = lift.quadratic_form(&[p[0], p[1], p[2], q]);
            let k = runge_lenz_radial(&PhaseState::new(x, pi, q), spec.monopole_charge, -1.4).unwrap().dot(&n);
            assert!((form - k).abs() < 1e-10 * k.abs().max(1.0));

            // gauge shift A → A + ∇χ with χ = x·c changes p but not Π
            let c = Vec3::new(0.3, -0.2, 0.5);
            let jet = coeffs.jet(&spec, &x).unwrap();
            let shifted = lift_killing_stackel(&jet, q, &(a + c)).unwrap();
            let p2 = pi + (a + c) * q;
            assert!((shifted.quadratic_form(&[p2[0], p2[1], p2[2], q]) - form).abs() < 1e-10 * form.abs().max(1.0));
        }
        let jet = CoefficientJet { c: 1.5, ci: Vec3::new(1.0, 2.0, 3.0), ..Default::default() };
        let l = lift_killing_stackel(&jet, 2.0, &Vec3::zeros()).unwrap();
        assert_eq!(l.components[(0, 3)], 0.5);
        assert_eq!(l.components[(3, 3)], 0.75);
        assert!(matches!(lift_killing_stackel(&jet, 0.0, &Vec3::zeros()), Err(ConservedError::ZeroCharge)));
        assert!(lift_coefficients(&KillingCoefficients::MetricTensor, &spec, q, &Vec3::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn bargmann_components() {
        let r = 2.0;
        let v = -1.0 / r;
        let t = bargmann_kepler_tensor(&Vec3::z(), &Vec3::new(0.0, 0.0, r), v).unwrap();
        let c = &t.components.components;
        assert_eq!(c[(2, 2)], 0.0);
        assert_eq!(c[(0, 0)], 2.0 * r);
        assert_eq!(c[(1, 1)], 2.0 * r);
        assert_eq!(c[(3, 3)], 2.0 * r * v);

        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..50 {
            let x = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let p = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let n = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let v = -1.0 / x.norm();
            let t = bargmann_kepler_tensor(&n, &x, v).unwrap();
            let tf = &t.trace_free.components;
            assert!((bargmann_metric(v) * tf).trace().abs() < 1e-12);
            // null momentum with unit mass: p_s = 1, p_t = -E
            let energy = 0.5 * p.norm_squared() + v;
            let mom = [p[0], p[1], p[2], 1.0, -energy];
            let kn = bargmann_kepler_kn(&x, &p, &n, 1.0, 1.0).unwrap();
            assert!((t.components.quadratic_form(&mom) - kn).abs() < 1e-10);
            // the removed trace is proportional to the null norm of p
            assert!((t.trace_free.quadratic_form(&mom) - kn).abs() < 1e-10);
        }
    }

    #[test]
    fn named_observables_resolve() {
        let ctx = ObservableContext { two_center: Some(tc18()), g: 1.0, beta: -0.5, ..Default::default() };
        for name in OBSERVABLE_NAMES {
            assert!(named_observable(name, &ctx).is_some(), "{name}");
        }
        assert!(named_observable("Ja", &ObservableContext::default()).is_none());
        assert!(named_observable("bogus", &ctx).is_none());
        let s = PhaseState::new(Vec3::new(1.0, 2.0, 0.5), Vec3::new(0.1, 0.2, 0.3), 0.4);
        let spec = MetricSpec::flat_kepler(0.0).with_monopole_charge(1.0);
        let jy = named_observable("Jy", &ctx).unwrap().value(&s, &spec).unwrap();
        assert_eq!(jy, angular_momentum(&s, 1.0).unwrap()[1]);
    }
}
