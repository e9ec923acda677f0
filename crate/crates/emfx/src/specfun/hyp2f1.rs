//! The Gauss hypergeometric factor Omega(z) = 2F1(1, 1-2/alpha; 2-2/alpha; z).
//!
//! Every closed-form interference functional in this crate reduces to the
//! parameter triple (1, b; b+1) with b = 1 - 2/alpha in (0, 1), for which
//! 2F1(1, b; b+1; z) = b * sum_{n>=0} z^n / (b + n). Arguments arriving from
//! characteristic functions are purely imaginary (z = j t P / r^alpha) and can
//! be arbitrarily large, so the unit disk series is complemented by the
//! z -> 1/z linear transformation and, in the annulus where neither converges
//! fast, by the integral representation Omega(z) = int_0^1 ds / (1 - z s^{1/b})
//! (obtained from the Euler integral via t = s^{1/b}).

use num_complex::Complex64;

use super::quad::adaptive_gk_complex;
use crate::error::{Error, Result};

const SERIES_RADIUS: f64 = 0.80;
const INVERSION_RADIUS: f64 = 1.25;

/// Omega(z; alpha) = 2F1(1, 1-2/alpha; 2-2/alpha; z) for alpha > 2 and z off
/// the branch cut [1, inf).
///
/// Accuracy: relative error below 1e-12 on |z| <= 0.8 and |z| >= 1.25, below
/// 1e-10 in the crossover annulus. For alpha = 4 the closed form
/// atanh(sqrt z)/sqrt z is used directly.
pub fn hyp2f1_omega(z: Complex64, alpha: f64) -> Result<Complex64> {
    if !(alpha > 2.0) || !alpha.is_finite() {
        return Err(Error::Domain {
            op: "hyp2f1_omega",
            msg: format!("alpha must be finite and > 2, got {alpha}"),
        });
    }
    if z.im == 0.0 && z.re >= 1.0 {
        return Err(Error::Domain {
            op: "hyp2f1_omega",
            msg: format!("z = {z} lies on the branch cut [1, inf)"),
        });
    }
    if alpha == 4.0 {
        return Ok(omega_alpha4(z));
    }
    omega_general(z, alpha)
}

/// alpha = 4 closed form: 2F1(1, 1/2; 3/2; z) = atanh(sqrt z)/sqrt z.
pub(crate) fn omega_alpha4(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        // atanh(w)/w = sum z^n/(2n+1); avoids 0/0 and keeps full precision.
        return Complex64::new(1.0, 0.0) + z / 3.0 + z * z / 5.0 + z * z * z / 7.0;
    }
    let w = z.sqrt();
    w.atanh() / w
}

/// Series / inversion / integral dispatch, valid for every alpha > 2.
pub(crate) fn omega_general(z: Complex64, alpha: f64) -> Result<Complex64> {
    let b = 1.0 - 2.0 / alpha;
    let r = z.norm();
    if r <= SERIES_RADIUS {
        return omega_series(z, b);
    }
    if r >= INVERSION_RADIUS {
        // DLMF 15.8.2 with a = 1, c = b + 1; the companion function is the
        // same family at parameter 1 - b and argument 1/z:
        //   F_b(z) = b/(b-1) (-z)^{-1} F_{1-b}(1/z) + b pi/sin(pi b) (-z)^{-b}.
        let f_inv = omega_series(1.0 / z, 1.0 - b)?;
        let neg_z = -z;
        let term1 = b / (b - 1.0) * f_inv / neg_z;
        let term2 = b * std::f64::consts::PI / (std::f64::consts::PI * b).sin()
            * neg_z.powf(-b);
        return Ok(term1 + term2);
    }
    omega_integral(z, b)
}

/// Power series b sum_n z^n/(b+n), |z| < 1.
fn omega_series(z: Complex64, b: f64) -> Result<Complex64> {
    let mut sum = Complex64::new(0.0, 0.0);
    let mut zn = Complex64::new(1.0, 0.0);
    for n in 0..4000 {
        let term = zn * (b / (b + n as f64));
        sum += term;
        if term.norm() < 1e-17 * sum.norm().max(1e-300) && n > 3 {
            return Ok(sum);
        }
        zn *= z;
    }
    Err(Error::AccuracyNotReached {
        op: "hyp2f1_omega series",
        achieved: zn.norm(),
        wanted: 1e-17,
    })
}

/// Integral fallback for the crossover annulus: int_0^1 ds/(1 - z s^{1/b}).
fn omega_integral(z: Complex64, b: f64) -> Result<Complex64> {
    let inv_b = 1.0 / b;
    let f = |s: f64| {
        let sb = if s <= 0.0 { 0.0 } else { s.powf(inv_b) };
        (Complex64::new(1.0, 0.0) - z * sb).inv()
    };
    let (val, err) = adaptive_gk_complex(&f, 0.0, 1.0, 1e-13, 1e-12, 400);
    if err > 1e-9 {
        return Err(Error::AccuracyNotReached {
            op: "hyp2f1_omega integral",
            achieved: err,
            wanted: 1e-9,
        });
    }
    Ok(val)
}
