//! Central-difference fallbacks for user-supplied fields.
//!
//! Built-in metrics, potentials and coefficient fields carry closed-form
//! derivatives; these helpers are used only for custom closures.

use crate::Vec3;

/// Relative step for first derivatives.
pub const FIRST_DERIVATIVE_STEP: f64 = 1e-5;

/// Relative step for the five-point second-derivative stencil. With a
/// 1e-5 step the roundoff term eps*|u|/h^2 is already ~1e-6, so the
/// second-derivative stencil uses a coarser step.
pub const SECOND_DERIVATIVE_STEP: f64 = 1e-3;

pub fn scaled_step(rel: f64, x: &Vec3) -> f64 {
    rel * x.norm().max(1.0)
}

pub fn gradient<F>(fun: F, x: &Vec3, h: f64) -> Vec3
where
    F: Fn(&Vec3) -> f64,
{
    let mut g = Vec3::zeros();
    for k in 0..3 {
        let mut xp = *x;
        let mut xm = *x;
        xp[k] += h;
        xm[k] -= h;
        g[k] = (fun(&xp) - fun(&xm)) / (2.0 * h);
    }
    g
}

/// Same as [`gradient`] for fallible closures.
pub fn try_gradient<F, E>(fun: F, x: &Vec3, h: f64) -> Result<Vec3, E>
where
    F: Fn(&Vec3) -> Result<f64, E>,
{
    let mut g = Vec3::zeros();
    for k in 0..3 {
        let mut xp = *x;
        let mut xm = *x;
        xp[k] += h;
        xm[k] -= h;
        g[k] = (fun(&xp)? - fun(&xm)?) / (2.0 * h);
    }
    Ok(g)
}

/// Laplacian from a fourth-order five-point stencil along each axis.
pub fn try_laplacian<F, E>(fun: F, x: &Vec3, h: f64) -> Result<f64, E>
where
    F: Fn(&Vec3) -> Result<f64, E>,
{
    let centre = fun(x)?;
    let mut lap = 0.0;
    for k in 0..3 {
        let at = |s: f64| {
            let mut y = *x;
            y[k] += s;
            fun(&y)
        };
        let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
        lap += (-p2 + 16.0 * p1 - 30.0 * centre + 16.0 * m1 - m2) / (12.0 * h * h);
    }
    Ok(lap)
}

pub fn laplacian<F>(fun: F, x: &Vec3, h: f64) -> f64
where
    F: Fn(&Vec3) -> f64,
{
    try_laplacian::<_, ()>(|y| Ok(fun(y)), x, h).unwrap_or(f64::NAN)
}
