//! Killing-tensor conditions and the van Holten constraint hierarchy.
//!
//! A momentum-polynomial observable is written
//! `Q = C + C^i Π_i + ½ C^ij Π_i Π_j + ⅙ C^ijk Π_i Π_j Π_k`. Its bracket with
//! the rescaled Hamiltonian `½ Π² + G`, `G = f W`, vanishes identically iff
//! the constraints of orders 0..3 hold. Because that Hamiltonian has a flat
//! kinetic term the constraints use plain partial derivatives, and the
//! coefficients are the flat components that contract `Π` directly.
//!
//! Symmetrizations are sums over the cyclic index assignments, not averages.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::conserved::TwoCenterSpec;
use crate::dynamics::EffectivePotential;
use crate::error::DomainError;
use crate::fd;
use crate::geometry::{christoffel, magnetic_field, metric_eval, MetricSpec, R_MIN};
use crate::{Mat3, Vec3};

pub type Tensor3 = [[[f64; 3]; 3]; 3];

/// Coefficient fields and their first derivatives at one point.
///
/// Derivative layouts: `dci[(k, l)] = ∂_k C_l`, `dcij[k][(i, j)] = ∂_k C_ij`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientJet {
    pub c: f64,
    pub dc: Vec3,
    pub ci: Vec3,
    pub dci: Mat3,
    pub cij: Mat3,
    pub dcij: [Mat3; 3],
    pub cijk: Tensor3,
}

impl Default for CoefficientJet {
    fn default() -> Self {
        CoefficientJet {
            c: 0.0,
            dc: Vec3::zeros(),
            ci: Vec3::zeros(),
            dci: Mat3::zeros(),
            cij: Mat3::zeros(),
            dcij: [Mat3::zeros(); 3],
            cijk: [[[0.0; 3]; 3]; 3],
        }
    }
}

impl CoefficientJet {
    /// `C + C^i Π_i + ½ C^ij Π_i Π_j + ⅙ C^ijk Π_i Π_j Π_k`.
    pub fn polynomial(&self, pi: &Vec3) -> f64 {
        let mut cubic = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    cubic += self.cijk[i][j][k] * pi[i] * pi[j] * pi[k];
                }
            }
        }
        self.c + self.ci.dot(pi) + 0.5 * pi.dot(&(self.cij * pi)) + cubic / 6.0
    }
}

pub type VectorFn = Arc<dyn Fn(&Vec3) -> Vec3 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&Vec3) -> Mat3 + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>;

/// User-supplied coefficient fields, differentiated by central differences.
#[derive(Clone, Default)]
pub struct CustomCoefficients {
    pub c: Option<ScalarField>,
    pub ci: Option<VectorFn>,
    pub cij: Option<MatrixFn>,
}

fn cross_basis(n: &Vec3) -> Mat3 {
    // row k is n × e_k, so m[(k, l)] = ∂_k (n × x)_l
    let mut m = Mat3::zeros();
    for k in 0..3 {
        let mut e = Vec3::zeros();
        e[k] = 1.0;
        m.set_row(k, &n.cross(&e).transpose());
    }
    m
}

/// `T_jl = 2 δ_jl (n·x) - n_j x_l - n_l x_j` and `∂_k T_jl`.
fn rl_tensor(n: &Vec3, x: &Vec3) -> (Mat3, [Mat3; 3]) {
    let eta = n.dot(x);
    let t = Mat3::identity() * (2.0 * eta) - n * x.transpose() - x * n.transpose();
    let dt = std::array::from_fn(|k| {
        let mut e = Vec3::zeros();
        e[k] = 1.0;
        Mat3::identity() * (2.0 * n[k]) - n * e.transpose() - e * n.transpose()
    });
    (t, dt)
}

fn unit(n: &Vec3) -> Vec3 {
    let norm = n.norm();
    if norm == 0.0 {
        *n
    } else {
        n / norm
    }
}

/// Coefficient fields of the observables this crate knows how to check.
#[derive(Clone)]
pub enum KillingCoefficients {
    /// `J·n` with `J = x × Π - qg x/r`.
    AngularMomentum { n: Vec3, qg: f64 },
    /// `K·n` with `K = Π × J + β x/r`.
    RungeLenz { n: Vec3, qg: f64, beta: f64 },
    /// The rescaled Hamiltonian itself, `½ Π² + G`.
    Energy(EffectivePotential),
    /// Axial angular momentum `J_a` of a two-center metric.
    TwoCenterAxial { tc: TwoCenterSpec, q: f64 },
    /// `J_a² + Π_a²`. Its order-2 constraint fails wherever `â × B ≠ 0`, so it
    /// is conserved only on orbits with `Π_a = 0`.
    TwoCenterQuadratic { tc: TwoCenterSpec, q: f64 },
    /// The axial Runge-Lenz scalar `K_a`.
    TwoCenterRungeLenz { tc: TwoCenterSpec, q: f64, beta: f64 },
    /// `C_ij = g_ij`.
    MetricTensor,
    /// `C_i = g_im (n × x)^m`.
    RotationLowered { n: Vec3 },
    /// `C_ij = f T_ij`, the Runge-Lenz tensor with indices lowered once by `f`.
    RungeLenzTensorLowered { n: Vec3 },
    /// `C_i = x_i`, not Killing for any metric.
    Dilation,
    Custom(CustomCoefficients),
}

impl fmt::Debug for KillingCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KillingCoefficients::AngularMomentum { n, qg } => write!(f, "AngularMomentum(n = {n:?}, qg = {qg})"),
            KillingCoefficients::RungeLenz { n, qg, beta } => {
                write!(f, "RungeLenz(n = {n:?}, qg = {qg}, beta = {beta})")
            }
            KillingCoefficients::Energy(p) => write!(f, "Energy({p:?})"),
            KillingCoefficients::TwoCenterAxial { q, .. } => write!(f, "TwoCenterAxial(q = {q})"),
            KillingCoefficients::TwoCenterQuadratic { q, .. } => write!(f, "TwoCenterQuadratic(q = {q})"),
            KillingCoefficients::TwoCenterRungeLenz { q, beta, .. } => {
                write!(f, "TwoCenterRungeLenz(q = {q}, beta = {beta})")
            }
            KillingCoefficients::MetricTensor => write!(f, "MetricTensor"),
            KillingCoefficients::RotationLowered { n } => write!(f, "RotationLowered(n = {n:?})"),
            KillingCoefficients::RungeLenzTensorLowered { n } => write!(f, "RungeLenzTensorLowered(n = {n:?})"),
            KillingCoefficients::Dilation => write!(f, "Dilation"),
            KillingCoefficients::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl KillingCoefficients {
    /// Highest momentum power carried by the observable.
    pub fn order(&self) -> usize {
        match self {
            KillingCoefficients::AngularMomentum { .. }
            | KillingCoefficients::TwoCenterAxial { .. }
            | KillingCoefficients::RotationLowered { .. }
            | KillingCoefficients::Dilation => 1,
            KillingCoefficients::Custom(c) => {
                if c.cij.is_some() {
                    2
                } else if c.ci.is_some() {
                    1
                } else {
                    0
                }
            }
            _ => 2,
        }
    }

    /// The direction parameter, normalized, where one applies.
    pub fn direction(&self) -> Option<Vec3> {
        match self {
            KillingCoefficients::AngularMomentum { n, .. }
            | KillingCoefficients::RungeLenz { n, .. }
            | KillingCoefficients::RotationLowered { n }
            | KillingCoefficients::RungeLenzTensorLowered { n } => Some(unit(n)),
            KillingCoefficients::TwoCenterAxial { tc, .. }
            | KillingCoefficients::TwoCenterQuadratic { tc, .. }
            | KillingCoefficients::TwoCenterRungeLenz { tc, .. } => Some(tc.axis()),
            _ => None,
        }
    }

    /// Coefficients and derivatives at `x`. Only the lowered variants read
    /// the metric; built-ins are exact, custom fields use central differences.
    pub fn jet(&self, spec: &MetricSpec, x: &Vec3) -> Result<CoefficientJet, DomainError> {
        let mut jet = CoefficientJet::default();
        match self {
            KillingCoefficients::AngularMomentum { n, qg } => {
                let n = unit(n);
                let r = radius(x)?;
                jet.ci = n.cross(x);
                jet.dci = cross_basis(&n);
                jet.c = -qg * n.dot(x) / r;
                jet.dc = -(n / r - x * (n.dot(x) / (r * r * r))) * *qg;
            }
            KillingCoefficients::RungeLenz { n, qg, beta } => {
                let n = unit(n);
                let r = radius(x)?;
                let (t, dt) = rl_tensor(&n, x);
                let u = n.cross(x);
                jet.cij = t;
                jet.dcij = dt;
                jet.ci = u * (qg / r);
                jet.dci = (cross_basis(&n) / r - x * u.transpose() / (r * r * r)) * *qg;
                let eta = n.dot(x);
                jet.c = beta * eta / r;
                jet.dc = (n / r - x * (eta / (r * r * r))) * *beta;
            }
            KillingCoefficients::Energy(pot) => {
                jet.cij = Mat3::identity();
                jet.c = pot.value(x)?;
                jet.dc = pot.gradient(x)?;
            }
            KillingCoefficients::TwoCenterAxial { tc, q } => {
                let a = tc.axis();
                jet.ci = a.cross(x);
                jet.dci = cross_basis(&a);
                jet.c = -q * tc.axial_potential(x)?;
                jet.dc = -tc.grad_axial_potential(x)? * *q;
            }
            KillingCoefficients::TwoCenterQuadratic { tc, q } => {
                let a = tc.axis();
                let u = a.cross(x);
                let du = cross_basis(&a);
                let w = tc.axial_potential(x)?;
                let dw = tc.grad_axial_potential(x)?;
                jet.cij = (u * u.transpose() + a * a.transpose()) * 2.0;
                jet.dcij = std::array::from_fn(|k| {
                    let duk: Vec3 = du.row(k).transpose();
                    (duk * u.transpose() + u * duk.transpose()) * 2.0
                });
                jet.ci = u * (-2.0 * q * w);
                jet.dci = (dw * u.transpose() + du * w) * (-2.0 * q);
                jet.c = q * q * w * w;
                jet.dc = dw * (2.0 * q * q * w);
            }
            KillingCoefficients::TwoCenterRungeLenz { tc, q, beta } => {
                let a = tc.axis();
                let (t, dt) = rl_tensor(&a, x);
                let u = a.cross(x);
                let s = tc.sum(x)?;
                let ds = tc.grad_sum(x)?;
                jet.cij = t;
                jet.dcij = dt;
                jet.ci = u * (q * s);
                jet.dci = (ds * u.transpose() + cross_basis(&a) * s) * *q;
                jet.c = beta * tc.axial_potential(x)?;
                jet.dc = tc.grad_axial_potential(x)? * *beta;
            }
            KillingCoefficients::MetricTensor => {
                let s = metric_eval(spec, x)?;
                jet.cij = Mat3::identity() * s.f;
                jet.dcij = std::array::from_fn(|k| Mat3::identity() * s.grad_f[k]);
            }
            KillingCoefficients::RotationLowered { n } => {
                let n = unit(n);
                let s = metric_eval(spec, x)?;
                let u = n.cross(x);
                jet.ci = u * s.f;
                jet.dci = s.grad_f * u.transpose() + cross_basis(&n) * s.f;
            }
            KillingCoefficients::RungeLenzTensorLowered { n } => {
                let n = unit(n);
                let s = metric_eval(spec, x)?;
                let (t, dt) = rl_tensor(&n, x);
                jet.cij = t * s.f;
                jet.dcij = std::array::from_fn(|k| t * s.grad_f[k] + dt[k] * s.f);
            }
            KillingCoefficients::Dilation => {
                jet.ci = *x;
                jet.dci = Mat3::identity();
            }
            KillingCoefficients::Custom(cc) => {
                let h = fd::scaled_step(fd::FIRST_DERIVATIVE_STEP, x);
                if let Some(c) = &cc.c {
                    jet.c = c(x);
                    jet.dc = fd::gradient(|y| c(y), x, h);
                }
                if let Some(ci) = &cc.ci {
                    jet.ci = ci(x);
                    for k in 0..3 {
                        let d = central(|y| ci(y), x, k, h);
                        jet.dci.set_row(k, &d.transpose());
                    }
                }
                if let Some(cij) = &cc.cij {
                    jet.cij = cij(x);
                    jet.dcij = std::array::from_fn(|k| central(|y| cij(y), x, k, h));
                }
            }
        }
        Ok(jet)
    }
}

fn central<T, F>(fun: F, x: &Vec3, k: usize, h: f64) -> T
where
    F: Fn(&Vec3) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Div<f64, Output = T>,
{
    let mut p = *x;
    let mut m = *x;
    p[k] += h;
    m[k] -= h;
    (fun(&p) - fun(&m)) / (2.0 * h)
}

fn radius(x: &Vec3) -> Result<f64, DomainError> {
    let r = x.norm();
    if r <= R_MIN {
        return Err(DomainError::NearSingularity { distance: r, point: [x[0], x[1], x[2]] });
    }
    Ok(r)
}

/// Rotation-generator condition `|(n × ∇f)·x|`; zero means `f (n × x)` is Killing.
pub fn rank1_rotation_condition(spec: &MetricSpec, n: &Vec3, x: &Vec3) -> Result<f64, DomainError> {
    let s = metric_eval(spec, x)?;
    Ok(n.cross(&s.grad_f).dot(x).abs())
}

/// Runge-Lenz condition `n × (x × ∇f)` and its norm.
pub fn rank2_rl_condition(spec: &MetricSpec, n: &Vec3, x: &Vec3) -> Result<(Vec3, f64), DomainError> {
    let s = metric_eval(spec, x)?;
    let v = n.cross(&x.cross(&s.grad_f));
    Ok((v, v.norm()))
}

/// `D_i C_j + D_j C_i` for the covariant rank-1 part of `coeffs`.
pub fn symmetrized_derivative_rank1(
    coeffs: &KillingCoefficients,
    spec: &MetricSpec,
    x: &Vec3,
) -> Result<Mat3, DomainError> {
    let jet = coeffs.jet(spec, x)?;
    let s = metric_eval(spec, x)?;
    let gamma = christoffel(&s, x);
    let mut d = jet.dci;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                d[(i, j)] -= gamma.gamma[k][i][j] * jet.ci[k];
            }
        }
    }
    Ok(d + d.transpose())
}

/// `D_i C_jl + D_j C_li + D_l C_ij` for the covariant rank-2 part of `coeffs`.
pub fn symmetrized_derivative_rank2(
    coeffs: &KillingCoefficients,
    spec: &MetricSpec,
    x: &Vec3,
) -> Result<Tensor3, DomainError> {
    let jet = coeffs.jet(spec, x)?;
    let s = metric_eval(spec, x)?;
    let g = christoffel(&s, x);
    // D_k C_ij = ∂_k C_ij - Γ^m_ki C_mj - Γ^m_kj C_im
    let dcov = |k: usize, i: usize, j: usize| {
        let mut v = jet.dcij[k][(i, j)];
        for m in 0..3 {
            v -= g.gamma[m][k][i] * jet.cij[(m, j)] + g.gamma[m][k][j] * jet.cij[(i, m)];
        }
        v
    };
    let mut out = [[[0.0; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for l in 0..3 {
                out[i][j][l] = dcov(i, j, l) + dcov(j, l, i) + dcov(l, i, j);
            }
        }
    }
    Ok(out)
}

fn max_abs_mat(m: &Mat3) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn max_abs_t3(t: &Tensor3) -> f64 {
    t.iter().flatten().flatten().fold(0.0, |a, v| a.max(v.abs()))
}

/// Max-norm of the symmetrized covariant derivative of the rank-1 or
/// rank-2 part of `coeffs`.
pub fn symmetrized_covariant_derivative(
    coeffs: &KillingCoefficients,
    spec: &MetricSpec,
    x: &Vec3,
    rank: usize,
) -> Result<f64, DomainError> {
    match rank {
        1 => Ok(max_abs_mat(&symmetrized_derivative_rank1(coeffs, spec, x)?)),
        2 => Ok(max_abs_t3(&symmetrized_derivative_rank2(coeffs, spec, x)?)),
        r => Err(DomainError::Unsupported(format!("rank {r} is not supported"))),
    }
}

/// Closed form of the symmetrized derivative of `C_ij = f T_ij`:
/// `-(∂_i f T_jl + ∂_j f T_li + ∂_l f T_ij) + δ_ij (T∇f)_l + δ_jl (T∇f)_i + δ_li (T∇f)_j`.
pub fn rl_tensor_derivative_closed_form(spec: &MetricSpec, n: &Vec3, x: &Vec3) -> Result<Tensor3, DomainError> {
    let s = metric_eval(spec, x)?;
    let (t, _) = rl_tensor(&unit(n), x);
    let tg = t * s.grad_f;
    let df = s.grad_f;
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut out = [[[0.0; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for l in 0..3 {
                out[i][j][l] = -(df[i] * t[(j, l)] + df[j] * t[(l, i)] + df[l] * t[(i, j)])
                    + d(i, j) * tg[l]
                    + d(j, l) * tg[i]
                    + d(l, i) * tg[j];
            }
        }
    }
    Ok(out)
}

/// Max-norm residual of each order of the constraint hierarchy at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ConstraintResiduals {
    pub order0: f64,
    pub order1: f64,
    pub order2: f64,
    pub order3: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        self.order0.max(self.order1).max(self.order2).max(self.order3)
    }

    /// Componentwise maximum, for accumulating over sample points.
    pub fn max_with(&self, other: &ConstraintResiduals) -> ConstraintResiduals {
        ConstraintResiduals {
            order0: self.order0.max(other.order0),
            order1: self.order1.max(other.order1),
            order2: self.order2.max(other.order2),
            order3: self.order3.max(other.order3),
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.order0, self.order1, self.order2, self.order3]
    }
}

/// Evaluates the four constraint lines for `Q` against `½ Π² + G`:
///
/// - order 0: `C^m ∂_m G`
/// - order 1: `∂_n C - q F_nm C^m - C^nm ∂_m G`
/// - order 2: `∂_i C_l + ∂_l C_i - q (F_im C_lm + F_lm C_im) - C_ilk ∂_k G`
/// - order 3: `∂_i C_lj + ∂_l C_ji + ∂_j C_il - q (F_im C_ljm + F_jm C_ilm + F_lm C_ijm)`
///
/// `q` enters only through the magnetic terms; `G` is taken from `eff_pot`.
pub fn van_holten_residuals(
    coeffs: &KillingCoefficients,
    spec: &MetricSpec,
    eff_pot: &EffectivePotential,
    q: f64,
    x: &Vec3,
) -> Result<ConstraintResiduals, DomainError> {
    let jet = coeffs.jet(spec, x)?;
    let dg = eff_pot.gradient(x)?;
    let f = magnetic_field(spec, x)?.f;

    let order0 = jet.ci.dot(&dg).abs();

    let line1 = jet.dc - f * jet.ci * q - jet.cij * dg;
    let order1 = line1.amax();

    let mut line2 = jet.dci + jet.dci.transpose() - (f * jet.cij + (f * jet.cij).transpose()) * q;
    for i in 0..3 {
        for l in 0..3 {
            for k in 0..3 {
                line2[(i, l)] -= jet.cijk[i][l][k] * dg[k];
            }
        }
    }
    let order2 = max_abs_mat(&line2);

    let fc3 = |i: usize, a: usize, b: usize| -> f64 {
        (0..3).map(|m| f[(i, m)] * jet.cijk[a][b][m]).sum()
    };
    let mut order3: f64 = 0.0;
    for i in 0..3 {
        for l in 0..3 {
            for j in 0..3 {
                let v = jet.dcij[i][(l, j)] + jet.dcij[l][(j, i)] + jet.dcij[j][(i, l)]
                    - q * (fc3(i, l, j) + fc3(j, i, l) + fc3(l, i, j));
                order3 = order3.max(v.abs());
            }
        }
    }

    Ok(ConstraintResiduals { order0, order1, order2, order3 })
}

/// `Δ(G - q²g²/2r²)`; the Runge-Lenz construction requires it to vanish.
pub fn laplace_obstruction(
    eff_pot: &EffectivePotential,
    q: f64,
    g: f64,
    x: &Vec3,
) -> Result<f64, DomainError> {
    let r = radius(x)?;
    Ok(eff_pot.laplacian(x)? - q * q * g * g / (r * r * r * r))
}
