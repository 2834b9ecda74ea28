//! Conformally flat reduced 3-metrics `g_ij = f(x) δ_ij`, the vertical
//! factor `h(x)`, the external potential `U(x)` and the monopole field.
//!
//! Every preset is evaluated from closed-form expressions. Only
//! [`MetricKind::Custom`] and [`ExternalPotential::Custom`] fall back to
//! central differences.

use std::fmt;
use std::sync::Arc;

use crate::error::DomainError;
use crate::fd;
use crate::{Mat3, Vec3};

/// Exclusion radius around coordinate singularities.
pub const R_MIN: f64 = 1e-9;

pub type ScalarFn = Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>;

/// A NUT center of a multicenter metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Center {
    pub mass: f64,
    pub position: Vec3,
}

#[derive(Clone)]
pub struct CustomMetric {
    pub f: ScalarFn,
    /// Defaults to `h ≡ 1` when absent.
    pub h: Option<ScalarFn>,
}

#[derive(Clone)]
pub enum MetricKind {
    /// `f = 1/h = 1 + 4m/r`.
    TaubNut { m: f64 },
    /// Taub-NUT geometry with the extra potential `a0² / (2f)` added to `U`.
    LeeLee { m: f64, a0: f64 },
    /// `f = 1`, `h = (1 - 1/r)^-2`, defined for `r > 1`.
    WindingString,
    /// `f = b + a/r`, `h = (a r + b r²) / (1 + d r + c r²)`.
    ExtendedTaubNut { a: f64, b: f64, c: f64, d: f64 },
    /// Gibbons-Hawking: `f = 1/h = f0 + Σ m_i / |x - a_i|`.
    Multicenter { f0: f64, centers: Vec<Center> },
    /// `f = h = 1`.
    FlatKepler,
    Custom(CustomMetric),
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::TaubNut { .. } => "taub-nut",
            MetricKind::LeeLee { .. } => "lee-lee",
            MetricKind::WindingString => "winding-string",
            MetricKind::ExtendedTaubNut { .. } => "extended-taub-nut",
            MetricKind::Multicenter { .. } => "multicenter",
            MetricKind::FlatKepler => "flat-kepler",
            MetricKind::Custom(_) => "custom",
        }
    }
}

/// Parameters of the radial Runge-Lenz-admitting external potential
/// `U = (q²g²/2r² + β/r + γ)/f - q²/2h + E`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialRlParams {
    pub q: f64,
    pub g: f64,
    pub beta: f64,
    pub gamma: f64,
    pub energy: f64,
}

/// External scalar potential `U(x)` added to the reduced Lagrangian.
#[derive(Clone)]
pub enum ExternalPotential {
    Zero,
    Constant(f64),
    /// `U = strength / r`.
    Coulomb { strength: f64 },
    /// The radial family that admits a conserved Runge-Lenz vector.
    RadialRungeLenz(RadialRlParams),
    /// `U = G/f - q²/2h + E` with `G = (q²/2) S² + β S + γ` and
    /// `S = f - f0` the multicenter sum. Only valid on multicenter metrics.
    MulticenterRungeLenz { q: f64, beta: f64, gamma: f64, energy: f64 },
    Custom(ScalarFn),
}

impl fmt::Debug for ExternalPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExternalPotential::Zero => write!(f, "Zero"),
            ExternalPotential::Constant(c) => write!(f, "Constant({c})"),
            ExternalPotential::Coulomb { strength } => write!(f, "Coulomb({strength})"),
            ExternalPotential::RadialRungeLenz(p) => write!(f, "RadialRungeLenz({p:?})"),
            ExternalPotential::MulticenterRungeLenz { q, beta, gamma, energy } => write!(
                f,
                "MulticenterRungeLenz {{ q: {q}, beta: {beta}, gamma: {gamma}, energy: {energy} }}"
            ),
            ExternalPotential::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Immutable description of a reduced metric together with its monopole
/// charge and external potential.
#[derive(Clone)]
pub struct MetricSpec {
    pub kind: MetricKind,
    /// Monopole charge `g` of the radial kinds. Multicenter fields are
    /// sourced by the NUT charges instead.
    pub monopole_charge: f64,
    pub potential: ExternalPotential,
}

impl fmt::Debug for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricSpec")
            .field("kind", &self.kind.name())
            .field("monopole_charge", &self.monopole_charge)
            .field("potential", &self.potential)
            .finish()
    }
}

impl MetricSpec {
    pub fn taub_nut(m: f64) -> Self {
        MetricSpec {
            kind: MetricKind::TaubNut { m },
            monopole_charge: 4.0 * m,
            potential: ExternalPotential::Zero,
        }
    }

    pub fn lee_lee(m: f64, a0: f64) -> Self {
        MetricSpec {
            kind: MetricKind::LeeLee { m, a0 },
            monopole_charge: 4.0 * m,
            potential: ExternalPotential::Zero,
        }
    }

    /// Winding-string metric with a constant external potential.
    pub fn winding_string(u0: f64) -> Self {
        MetricSpec {
            kind: MetricKind::WindingString,
            monopole_charge: 1.0,
            potential: ExternalPotential::Constant(u0),
        }
    }

    pub fn extended_taub_nut(a: f64, b: f64, c: f64, d: f64) -> Self {
        MetricSpec {
            kind: MetricKind::ExtendedTaubNut { a, b, c, d },
            monopole_charge: 1.0,
            potential: ExternalPotential::Zero,
        }
    }

    pub fn multicenter(f0: f64, centers: Vec<Center>) -> Self {
        MetricSpec {
            kind: MetricKind::Multicenter { f0, centers },
            monopole_charge: 0.0,
            potential: ExternalPotential::Zero,
        }
    }

    /// Flat space with `U = -k/r`.
    pub fn flat_kepler(k: f64) -> Self {
        MetricSpec {
            kind: MetricKind::FlatKepler,
            monopole_charge: 0.0,
            potential: if k == 0.0 {
                ExternalPotential::Zero
            } else {
                ExternalPotential::Coulomb { strength: -k }
            },
        }
    }

    pub fn custom(f: ScalarFn, h: Option<ScalarFn>) -> Self {
        MetricSpec {
            kind: MetricKind::Custom(CustomMetric { f, h }),
            monopole_charge: 0.0,
            potential: ExternalPotential::Zero,
        }
    }

    pub fn with_potential(mut self, potential: ExternalPotential) -> Self {
        self.potential = potential;
        self
    }

    pub fn with_monopole_charge(mut self, g: f64) -> Self {
        self.monopole_charge = g;
        self
    }

    /// True when `f`, `h` and the monopole field depend on `r` only.
    pub fn is_radial(&self) -> bool {
        !matches!(self.kind, MetricKind::Multicenter { .. } | MetricKind::Custom(_))
    }

    /// Asymptotic constant of `f` for multicenter metrics.
    pub fn multicenter_f0(&self) -> Option<f64> {
        match &self.kind {
            MetricKind::Multicenter { f0, .. } => Some(*f0),
            _ => None,
        }
    }

    /// Distance from `x` to the nearest coordinate singularity, or
    /// infinity for kinds without one.
    pub fn singularity_distance(&self, x: &Vec3) -> f64 {
        let r = x.norm();
        match &self.kind {
            MetricKind::TaubNut { .. }
            | MetricKind::LeeLee { .. }
            | MetricKind::ExtendedTaubNut { .. } => r,
            MetricKind::WindingString => r - 1.0,
            MetricKind::Multicenter { centers, .. } => centers
                .iter()
                .map(|c| (x - c.position).norm())
                .fold(f64::INFINITY, f64::min),
            MetricKind::FlatKepler | MetricKind::Custom(_) => {
                let singular_potential = matches!(
                    self.potential,
                    ExternalPotential::Coulomb { .. } | ExternalPotential::RadialRungeLenz(_)
                );
                if self.monopole_charge != 0.0 || singular_potential {
                    r
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    fn check_domain(&self, x: &Vec3) -> Result<(), DomainError> {
        let d = self.singularity_distance(x);
        if d.is_nan() || d <= R_MIN {
            return Err(DomainError::NearSingularity {
                distance: d,
                point: to_array(x),
            });
        }
        Ok(())
    }
}

/// Metric data at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSample {
    pub x: Vec3,
    pub f: f64,
    pub grad_f: Vec3,
    pub laplacian_f: f64,
    pub h: f64,
    pub grad_h: Vec3,
    pub u: f64,
    pub grad_u: Vec3,
}

impl MetricSample {
    pub fn metric(&self) -> Mat3 {
        Mat3::identity() * self.f
    }

    pub fn inverse_metric(&self) -> Mat3 {
        Mat3::identity() / self.f
    }
}

/// Values of a radial profile and its first two `r`-derivatives.
#[derive(Clone, Copy)]
struct Radial {
    v: f64,
    d1: f64,
    d2: f64,
}

impl Radial {
    fn constant(v: f64) -> Self {
        Radial { v, d1: 0.0, d2: 0.0 }
    }

    /// `b + a/r`
    fn harmonic(b: f64, a: f64, r: f64) -> Self {
        Radial {
            v: b + a / r,
            d1: -a / (r * r),
            d2: 2.0 * a / (r * r * r),
        }
    }

    fn reciprocal(&self) -> Self {
        let v = 1.0 / self.v;
        Radial {
            v,
            d1: -self.d1 * v * v,
            d2: (2.0 * self.d1 * self.d1 / self.v - self.d2) * v * v,
        }
    }

    fn gradient(&self, x: &Vec3, r: f64) -> Vec3 {
        x * (self.d1 / r)
    }

    fn laplacian(&self, r: f64) -> f64 {
        self.d2 + 2.0 * self.d1 / r
    }
}

pub(crate) fn to_array(x: &Vec3) -> [f64; 3] {
    [x[0], x[1], x[2]]
}

/// Evaluate `f`, `h`, `U` and their derivatives at `x`.
pub fn metric_eval(spec: &MetricSpec, x: &Vec3) -> Result<MetricSample, DomainError> {
    spec.check_domain(x)?;
    let r = x.norm();

    let (f, grad_f, laplacian_f, h, grad_h) = match &spec.kind {
        MetricKind::TaubNut { m } | MetricKind::LeeLee { m, .. } => {
            let f = Radial::harmonic(1.0, 4.0 * m, r);
            let h = f.reciprocal();
            (f.v, f.gradient(x, r), f.laplacian(r), h.v, h.gradient(x, r))
        }
        MetricKind::WindingString => {
            let s = 1.0 - 1.0 / r;
            let h = Radial {
                v: 1.0 / (s * s),
                d1: -2.0 / (s * s * s * r * r),
                d2: 0.0,
            };
            (1.0, Vec3::zeros(), 0.0, h.v, h.gradient(x, r))
        }
        MetricKind::ExtendedTaubNut { a, b, c, d } => {
            let f = Radial::harmonic(*b, *a, r);
            let num = a * r + b * r * r;
            let den = 1.0 + d * r + c * r * r;
            let dnum = a + 2.0 * b * r;
            let dden = d + 2.0 * c * r;
            let h = Radial {
                v: num / den,
                d1: (dnum * den - num * dden) / (den * den),
                d2: 0.0,
            };
            (f.v, f.gradient(x, r), f.laplacian(r), h.v, h.gradient(x, r))
        }
        MetricKind::Multicenter { f0, centers } => {
            let mut f = *f0;
            let mut grad = Vec3::zeros();
            for c in centers {
                let d = x - c.position;
                let dn = d.norm();
                f += c.mass / dn;
                grad -= d * (c.mass / (dn * dn * dn));
            }
            // Each 1/|x - a_i| is harmonic off its center.
            let lap = 0.0;
            (f, grad, lap, 1.0 / f, -grad / (f * f))
        }
        MetricKind::FlatKepler => {
            let one = Radial::constant(1.0);
            (one.v, Vec3::zeros(), 0.0, one.v, Vec3::zeros())
        }
        MetricKind::Custom(cm) => {
            let hstep = fd::scaled_step(fd::FIRST_DERIVATIVE_STEP, x);
            let h2 = fd::scaled_step(fd::SECOND_DERIVATIVE_STEP, x);
            let f = (cm.f)(x);
            let grad_f = fd::gradient(|y| (cm.f)(y), x, hstep);
            let lap = fd::laplacian(|y| (cm.f)(y), x, h2);
            match &cm.h {
                Some(hf) => (f, grad_f, lap, hf(x), fd::gradient(|y| hf(y), x, hstep)),
                None => (f, grad_f, lap, 1.0, Vec3::zeros()),
            }
        }
    };

    if !(f > 0.0) {
        return Err(DomainError::NonPositiveConformalFactor {
            value: f,
            point: to_array(x),
        });
    }
    if !(h > 0.0) {
        return Err(DomainError::NonPositiveVerticalFactor {
            value: h,
            point: to_array(x),
        });
    }

    let mut sample = MetricSample {
        x: *x,
        f,
        grad_f,
        laplacian_f,
        h,
        grad_h,
        u: 0.0,
        grad_u: Vec3::zeros(),
    };
    let (u, grad_u) = external_potential(spec, &sample)?;
    sample.u = u;
    sample.grad_u = grad_u;
    if let MetricKind::LeeLee { a0, .. } = spec.kind {
        let k = 0.5 * a0 * a0;
        sample.u += k / f;
        sample.grad_u -= grad_f * (k / (f * f));
    }
    Ok(sample)
}

fn external_potential(spec: &MetricSpec, s: &MetricSample) -> Result<(f64, Vec3), DomainError> {
    let x = &s.x;
    let r = x.norm();
    Ok(match &spec.potential {
        ExternalPotential::Zero => (0.0, Vec3::zeros()),
        ExternalPotential::Constant(c) => (*c, Vec3::zeros()),
        ExternalPotential::Coulomb { strength } => {
            (strength / r, -x * (strength / (r * r * r)))
        }
        ExternalPotential::RadialRungeLenz(p) => {
            let qg2 = p.q * p.q * p.g * p.g;
            let num = 0.5 * qg2 / (r * r) + p.beta / r + p.gamma;
            let dnum = -qg2 / (r * r * r) - p.beta / (r * r);
            let grad_num = x * (dnum / r);
            let u = num / s.f - 0.5 * p.q * p.q / s.h + p.energy;
            let grad = grad_num / s.f - s.grad_f * (num / (s.f * s.f))
                + s.grad_h * (0.5 * p.q * p.q / (s.h * s.h));
            (u, grad)
        }
        ExternalPotential::MulticenterRungeLenz { q, beta, gamma, energy } => {
            let f0 = spec.multicenter_f0().ok_or_else(|| {
                DomainError::Unsupported(
                    "the multicenter Runge-Lenz potential needs a multicenter metric".into(),
                )
            })?;
            let sum = s.f - f0;
            let g = 0.5 * q * q * sum * sum + beta * sum + gamma;
            let grad_g = s.grad_f * (q * q * sum + beta);
            let u = g / s.f - 0.5 * q * q / s.h + energy;
            let grad = grad_g / s.f - s.grad_f * (g / (s.f * s.f))
                + s.grad_h * (0.5 * q * q / (s.h * s.h));
            (u, grad)
        }
        ExternalPotential::Custom(uf) => {
            let h = fd::scaled_step(fd::FIRST_DERIVATIVE_STEP, x);
            (uf(x), fd::gradient(|y| uf(y), x, h))
        }
    })
}

/// Christoffel symbols `gamma[k][i][j] = Γ^k_ij`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChristoffelSample {
    pub gamma: [[[f64; 3]; 3]; 3],
}

impl ChristoffelSample {
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gamma[k][i][j]
    }
}

/// Levi-Civita connection of `g_ij = f δ_ij`:
/// `Γ^k_ij = (δ^k_i ∂_j f + δ^k_j ∂_i f - δ_ij ∂_k f) / 2f`.
pub fn christoffel(sample: &MetricSample, _x: &Vec3) -> ChristoffelSample {
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let g = &sample.grad_f;
    let inv = 0.5 / sample.f;
    let mut gamma = [[[0.0; 3]; 3]; 3];
    for (k, gk) in gamma.iter_mut().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                gk[i][j] = inv * (d(k, i) * g[j] + d(k, j) * g[i] - d(i, j) * g[k]);
            }
        }
    }
    ChristoffelSample { gamma }
}

/// Magnetic field and its field-strength matrix `F_ij = ε_ijk B_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub b: Vec3,
    pub f: Mat3,
}

impl FieldSample {
    pub fn from_b(b: Vec3) -> Self {
        FieldSample { b, f: field_strength(&b) }
    }

    /// `B_k = ½ ε_kij F_ij`.
    pub fn b_from_f(f: &Mat3) -> Vec3 {
        Vec3::new(
            0.5 * (f[(1, 2)] - f[(2, 1)]),
            0.5 * (f[(2, 0)] - f[(0, 2)]),
            0.5 * (f[(0, 1)] - f[(1, 0)]),
        )
    }
}

pub fn field_strength(b: &Vec3) -> Mat3 {
    Mat3::new(0.0, b[2], -b[1], -b[2], 0.0, b[0], b[1], -b[0], 0.0)
}

/// Monopole field `B = g x / r³` for the radial kinds, and the
/// superposition `Σ m_i (x - a_i)/|x - a_i|³` for multicenter metrics.
pub fn magnetic_field(spec: &MetricSpec, x: &Vec3) -> Result<FieldSample, DomainError> {
    spec.check_domain(x)?;
    let b = match &spec.kind {
        MetricKind::Multicenter { centers, .. } => centers.iter().fold(Vec3::zeros(), |acc, c| {
            let d = x - c.position;
            let n = d.norm();
            acc + d * (c.mass / (n * n * n))
        }),
        _ => {
            let g = spec.monopole_charge;
            if g == 0.0 {
                Vec3::zeros()
            } else {
                let r = x.norm();
                x * (g / (r * r * r))
            }
        }
    };
    Ok(FieldSample::from_b(b))
}

/// Dirac monopole potential `A = g (1 - cos θ) dφ` about `center`, with
/// the string along the negative z direction from the center.
fn monopole_gauge(g: f64, d: &Vec3) -> Result<Vec3, DomainError> {
    let r = d.norm();
    let denom = r * (r + d[2]);
    if r <= R_MIN || r + d[2] <= R_MIN * r.max(1.0) {
        return Err(DomainError::GaugeString { point: to_array(d) });
    }
    Ok(Vec3::new(-d[1], d[0], 0.0) * (g / denom))
}

/// Gauge potential `A_k` whose curl is [`magnetic_field`]. Only used when
/// lifting reduced quantities back to the four-dimensional metric.
pub fn gauge_potential(spec: &MetricSpec, x: &Vec3) -> Result<Vec3, DomainError> {
    spec.check_domain(x)?;
    match &spec.kind {
        MetricKind::Multicenter { centers, .. } => {
            let mut a = Vec3::zeros();
            for c in centers {
                a += monopole_gauge(c.mass, &(x - c.position)).map_err(|_| {
                    DomainError::GaugeString { point: to_array(x) }
                })?;
            }
            Ok(a)
        }
        _ => {
            if spec.monopole_charge == 0.0 {
                Ok(Vec3::zeros())
            } else {
                monopole_gauge(spec.monopole_charge, x)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn presets() -> Vec<MetricSpec> {
        vec![
            MetricSpec::taub_nut(1.0),
            MetricSpec::taub_nut(-0.5),
            MetricSpec::lee_lee(1.0, 0.7),
            MetricSpec::winding_string(0.2),
            MetricSpec::extended_taub_nut(2.0, 1.0, 0.5, 0.3),
            MetricSpec::multicenter(
                1.0,
                vec![
                    Center { mass: 1.0, position: Vec3::new(0.0, 0.0, 1.0) },
                    Center { mass: 8.0, position: Vec3::new(0.0, 0.0, -1.0) },
                ],
            ),
            MetricSpec::flat_kepler(1.0),
        ]
    }

    fn random_point(rng: &mut ChaCha8Rng, spec: &MetricSpec) -> Vec3 {
        loop {
            let x = Vec3::new(
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
            );
            let r = x.norm();
            // keep away from r = 2 where the m = -1/2 Taub-NUT factor vanishes
            if spec.singularity_distance(&x) > 0.5 && (r - 2.0).abs() > 0.3 && r > 0.5 {
                if metric_eval(spec, &x).is_ok() {
                    return x;
                }
            }
        }
    }

    #[test]
    fn taub_nut_values_at_unit_x() {
        let s = metric_eval(&MetricSpec::taub_nut(1.0), &Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(s.f, 5.0);
        assert_relative_eq!(s.grad_f, Vec3::new(-4.0, 0.0, 0.0));
        assert_relative_eq!(s.h, 0.2);
    }

    #[test]
    fn flat_factor_is_constant() {
        let s = metric_eval(&MetricSpec::flat_kepler(0.0), &Vec3::new(0.3, 2.0, -1.0)).unwrap();
        assert_eq!(s.f, 1.0);
        assert_eq!(s.grad_f, Vec3::zeros());
        assert_eq!(s.laplacian_f, 0.0);
    }

    #[test]
    fn two_center_midpoint() {
        let spec = MetricSpec::multicenter(
            1.0,
            vec![
                Center { mass: 1.0, position: Vec3::new(0.0, 0.0, 1.0) },
                Center { mass: 1.0, position: Vec3::new(0.0, 0.0, -1.0) },
            ],
        );
        let x = Vec3::zeros();
        let s = metric_eval(&spec, &x).unwrap();
        assert_relative_eq!(s.f, 3.0);
        assert!(s.grad_f.norm() < 1e-15);
        // finite-difference oracle on the closed form
        let f = |y: &Vec3| metric_eval(&spec, y).unwrap().f;
        let lap = fd::laplacian(f, &x, 1e-3);
        assert!(lap.abs() < 1e-6, "{lap}");
        assert_eq!(s.laplacian_f, 0.0);
    }

    #[test]
    fn domain_errors() {
        let tn = MetricSpec::taub_nut(1.0);
        assert!(matches!(
            metric_eval(&tn, &Vec3::zeros()),
            Err(DomainError::NearSingularity { .. })
        ));
        let ws = MetricSpec::winding_string(0.0);
        assert!(metric_eval(&ws, &Vec3::new(0.5, 0.0, 0.0)).is_err());
        // m = -1/2 makes f negative inside r = 2
        let mono = MetricSpec::taub_nut(-0.5);
        assert!(matches!(
            metric_eval(&mono, &Vec3::new(1.0, 0.0, 0.0)),
            Err(DomainError::NonPositiveConformalFactor { .. })
        ));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for spec in presets() {
            for _ in 0..100 {
                let x = random_point(&mut rng, &spec);
                let s = metric_eval(&spec, &x).unwrap();
                let h = 1e-5 * x.norm().max(1.0);
                let gf = fd::gradient(|y| metric_eval(&spec, y).unwrap().f, &x, h);
                let gh = fd::gradient(|y| metric_eval(&spec, y).unwrap().h, &x, h);
                let gu = fd::gradient(|y| metric_eval(&spec, y).unwrap().u, &x, h);
                let lap = fd::laplacian(|y| metric_eval(&spec, y).unwrap().f, &x, 1e-3);
                let close = |a: &Vec3, b: &Vec3| (a - b).norm() <= 1e-6 * b.norm().max(1e-3);
                assert!(close(&s.grad_f, &gf), "{:?} grad f {} vs {}", spec, s.grad_f, gf);
                assert!(close(&s.grad_h, &gh), "{:?} grad h {} vs {}", spec, s.grad_h, gh);
                assert!(close(&s.grad_u, &gu), "{:?} grad U {} vs {}", spec, s.grad_u, gu);
                assert!((s.laplacian_f - lap).abs() < 1e-6, "{:?} lap {}", spec, lap);
            }
        }
    }

    /// Christoffel symbols from central differences of `g_ij = f δ_ij`.
    fn christoffel_oracle(spec: &MetricSpec, x: &Vec3) -> [[[f64; 3]; 3]; 3] {
        let h = 1e-5 * x.norm().max(1.0);
        let f = metric_eval(spec, x).unwrap().f;
        let df = fd::gradient(|y| metric_eval(spec, y).unwrap().f, x, h);
        // ∂_k g_ij = ∂_k f δ_ij; Γ^k_ij = ½ g^kl (∂_i g_lj + ∂_j g_li - ∂_l g_ij)
        let dg = |l: usize, i: usize, j: usize| if i == j { df[l] } else { 0.0 };
        let mut out = [[[0.0; 3]; 3]; 3];
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    out[k][i][j] = 0.5 / f * (dg(i, k, j) + dg(j, k, i) - dg(k, i, j));
                }
            }
        }
        out
    }

    #[test]
    fn christoffel_flat_and_taub_nut() {
        let flat = metric_eval(&MetricSpec::flat_kepler(0.0), &Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let c = christoffel(&flat, &flat.x);
        assert!(c.gamma.iter().flatten().flatten().all(|v| *v == 0.0));

        let x = Vec3::new(1.0, 0.0, 0.0);
        let tn = MetricSpec::taub_nut(1.0);
        let s = metric_eval(&tn, &x).unwrap();
        let c = christoffel(&s, &x);
        assert_relative_eq!(c.get(0, 0, 0), -0.4, epsilon = 1e-15);
        let oracle = christoffel_oracle(&tn, &x);
        assert!((oracle[0][0][0] + 0.4).abs() < 1e-9);
    }

    #[test]
    fn christoffel_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in presets() {
            for _ in 0..100 {
                let x = random_point(&mut rng, &spec);
                let s = metric_eval(&spec, &x).unwrap();
                let c = christoffel(&s, &x);
                let oracle = christoffel_oracle(&spec, &x);
                let scale = s.grad_f.norm() / s.f + 1e-3;
                for k in 0..3 {
                    // contracted identity g^ij Γ^k_ij = -∂_k f / 2f²
                    let tr: f64 = (0..3).map(|i| c.gamma[k][i][i]).sum::<f64>() / s.f;
                    assert!((tr + s.grad_f[k] / (2.0 * s.f * s.f)).abs() < 1e-12 * scale.max(1.0));
                    for i in 0..3 {
                        for j in 0..3 {
                            assert_eq!(c.gamma[k][i][j], c.gamma[k][j][i]);
                            assert!((c.gamma[k][i][j] - oracle[k][i][j]).abs() <= 1e-6 * scale);
                            // metric compatibility D_k g_ij = 0
                            let dkg = if i == j { s.grad_f[k] } else { 0.0 }
                                - c.gamma[i][k][j] * s.f
                                - c.gamma[j][k][i] * s.f;
                            assert!(dkg.abs() <= 1e-9 * s.grad_f.norm().max(1e-12), "{dkg}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn monopole_field_values() {
        let spec = MetricSpec::flat_kepler(0.0).with_monopole_charge(1.0);
        let x = Vec3::new(0.0, 0.0, 2.0);
        let b = magnetic_field(&spec, &x).unwrap().b;
        assert_relative_eq!(b, Vec3::new(0.0, 0.0, 0.25), epsilon = 1e-15);

        // numeric curl of the string-free gauge potential
        let h = 1e-5;
        let comp = |y: &Vec3, i: usize| gauge_potential(&spec, y).unwrap()[i];
        let d = |i: usize, j: usize| {
            let mut p = x;
            let mut m = x;
            p[j] += h;
            m[j] -= h;
            (comp(&p, i) - comp(&m, i)) / (2.0 * h)
        };
        let curl = Vec3::new(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
        assert!((curl - b).norm() < 1e-8, "{curl}");

        let none = magnetic_field(&MetricSpec::flat_kepler(0.0), &x).unwrap();
        assert_eq!(none.b, Vec3::zeros());
        assert_eq!(none.f, Mat3::zeros());
    }

    #[test]
    fn two_center_field_cancels_at_midpoint() {
        let spec = MetricSpec::multicenter(
            1.0,
            vec![
                Center { mass: 1.0, position: Vec3::new(0.0, 0.0, 1.0) },
                Center { mass: 1.0, position: Vec3::new(0.0, 0.0, -1.0) },
            ],
        );
        assert_eq!(magnetic_field(&spec, &Vec3::zeros()).unwrap().b, Vec3::zeros());
    }

    #[test]
    fn field_is_divergence_free_and_curl_of_gauge() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for spec in presets() {
            for _ in 0..30 {
                let x = random_point(&mut rng, &spec);
                let field = magnetic_field(&spec, &x).unwrap();
                assert_eq!(field.f, -field.f.transpose());
                assert_eq!(FieldSample::b_from_f(&field.f), field.b);
                let h = 1e-5 * x.norm().max(1.0);
                let mut div = 0.0;
                for k in 0..3 {
                    let mut p = x;
                    let mut m = x;
                    p[k] += h;
                    m[k] -= h;
                    div += (magnetic_field(&spec, &p).unwrap().b[k]
                        - magnetic_field(&spec, &m).unwrap().b[k])
                        / (2.0 * h);
                }
                assert!(div.abs() < 1e-6, "div B = {div}");
                // stay clear of the strings below each center
                if let Ok(_) = gauge_potential(&spec, &x) {
                    let a = |y: &Vec3, i: usize| gauge_potential(&spec, y).map(|v| v[i]);
                    let d = |i: usize, j: usize| -> Option<f64> {
                        let mut p = x;
                        let mut m = x;
                        p[j] += h;
                        m[j] -= h;
                        Some((a(&p, i).ok()? - a(&m, i).ok()?) / (2.0 * h))
                    };
                    if let (Some(a12), Some(a21), Some(a20), Some(a02), Some(a10), Some(a01)) =
                        (d(1, 2), d(2, 1), d(2, 0), d(0, 2), d(1, 0), d(0, 1))
                    {
                        let curl = Vec3::new(a21 - a12, a02 - a20, a10 - a01);
                        assert!(
                            (curl - field.b).norm() < 1e-6 * field.b.norm().max(1e-3),
                            "{spec:?}: curl {curl} vs {}",
                            field.b
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gauge_string_is_rejected() {
        let spec = MetricSpec::taub_nut(1.0);
        assert!(matches!(
            gauge_potential(&spec, &Vec3::new(0.0, 0.0, -2.0)),
            Err(DomainError::GaugeString { .. })
        ));
        assert!(gauge_potential(&spec, &Vec3::new(0.0, 0.0, 2.0)).is_ok());
    }

    #[test]
    fn radial_rl_potential_vanishes_for_taub_nut() {
        let (m, q) = (1.0, 0.5);
        let energy = 0.7;
        let params = RadialRlParams {
            q,
            g: 4.0 * m,
            beta: -4.0 * m * (energy - q * q),
            gamma: 0.5 * q * q - energy,
            energy,
        };
        let spec = MetricSpec::taub_nut(m).with_potential(ExternalPotential::RadialRungeLenz(params));
        for r in [0.1, 0.5, 1.0, 3.0, 10.0, 100.0] {
            let s = metric_eval(&spec, &Vec3::new(0.0, r, 0.0)).unwrap();
            assert!(s.u.abs() < 1e-12, "U({r}) = {}", s.u);
            assert!(s.grad_u.norm() < 1e-12);
        }
    }
}
