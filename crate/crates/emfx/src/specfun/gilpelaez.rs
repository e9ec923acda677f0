//! Per-point distribution recovery from a characteristic function:
//!
//!   F(tau) = 1/2 - (1/pi) int_0^inf Im{Phi(t) e^{-j t tau}} / t dt
//!   f(tau) =       (1/pi) int_0^inf Re{Phi(t) e^{-j t tau}}     dt
//!
//! The half-line integral is summed over panels of roughly one oscillation
//! half-period. The panel width starts from the a-priori frequency bound
//! |tau| + 1/scale and is rescaled once the actual sign-change spacing of the
//! panel sums is observable, so the series of panel sums alternates and
//! Wynn's epsilon algorithm can extrapolate its limit. Tails with no visible
//! oscillation are swept with geometrically widening Filon panels: the
//! smooth factor is fitted by a polynomial and the residual rotation is
//! integrated exactly, so width is not limited by the rotation period. This
//! path is the accuracy reference; batch inversion goes through `CfTable`.

use num_complex::Complex64;

use super::cftable::{cheb_nodes, cheb_power_matrix, eval_power, fit_power, mu_all, DEGREE};
use super::quad::adaptive_gk;
use super::{CfHandle, DecayClass, QuadratureSpec};
use crate::error::{Error, Result};

const SMOOTH_MAX_PANELS: usize = 800;
const WYNN_WINDOW: usize = 32;

/// CDF of a nonnegative random variable at `tau`, clipped to [0, 1].
pub fn gil_pelaez_cdf(cf: &CfHandle, tau: f64, quad: &QuadratureSpec) -> Result<f64> {
    let integral = half_line_integral(cf, tau, Mode::ImOverT, quad)?;
    Ok((0.5 - integral / std::f64::consts::PI).clamp(0.0, 1.0))
}

/// Density at `tau`, assuming the distribution has one there; clipped at 0.
pub fn gil_pelaez_pdf(cf: &CfHandle, tau: f64, quad: &QuadratureSpec) -> Result<f64> {
    let integral = half_line_integral(cf, tau, Mode::Re, quad)?;
    Ok((integral / std::f64::consts::PI).max(0.0))
}

#[derive(Clone, Copy)]
enum Mode {
    ImOverT,
    Re,
}

fn half_line_integral(cf: &CfHandle, tau: f64, mode: Mode, quad: &QuadratureSpec) -> Result<f64> {
    quad.validate()?;
    let g = |t: f64| {
        let w = cf.eval(t) * Complex64::from_polar(1.0, -t * tau);
        match mode {
            Mode::ImOverT => w.im / t,
            Mode::Re => w.re,
        }
    };
    let decay_streak_goal = match cf.decay_class {
        DecayClass::Exponential => 2,
        _ => 3,
    };
    let t_cap = quad.t_max_hint.unwrap_or(f64::INFINITY);

    // A-priori half-period: the rotation frequency is at most |tau| plus the
    // CF phase drift, which is of order 1/scale for a variable of typical
    // size scale_hint. This can overestimate the true frequency; the
    // rescaling step below corrects it from observed sign changes.
    let mut h = std::f64::consts::PI / (tau.abs() + 1.0 / cf.scale_hint);

    // Head: the integrand is finite at 0+ even for infinite-mean laws whose
    // 1/sqrt(t)-type growth starts later, so a midpoint rectangle over a
    // vanishing interval is enough.
    let t0 = quad.t_start / cf.scale_hint;
    let mut total = g(0.5 * t0) * t0;

    // The first stretch spans many decades (t0 up to one half-period) and may
    // contain an integrable cusp; give it a deep subdivision budget.
    let (s0, _) = adaptive_gk(&g, t0, t0 + h, 1e-15, 1e-13, 4000);
    total += s0;
    let mut t = t0 + h;

    let mut partials: Vec<f64> = vec![total];
    let mut panel_vals: Vec<f64> = vec![s0];
    let mut prev_est: Option<f64> = None;
    let mut decay_streak = 0usize;
    let mut rescales = 0usize;
    let mut smooth = false;
    let mut k = 0usize;

    while k < quad.max_panels {
        if t >= t_cap {
            return Ok(total);
        }
        let (s, _) = adaptive_gk(&g, t, t + h, 1e-300, 1e-13, 60);
        t += h;
        total += s;
        k += 1;
        partials.push(total);
        panel_vals.push(s);

        // Termination on CF decay: once |Phi| is negligible the remaining
        // tail cannot move the integral. Panel smallness alone is not a stop
        // signal, because the integrand may merely start near zero.
        if s.abs() <= quad.abs_tol * (1.0 + total.abs()) && cf.eval(t).norm() < 1e-10 {
            decay_streak += 1;
            if decay_streak >= decay_streak_goal {
                return Ok(total);
            }
        } else {
            decay_streak = 0;
        }

        if k % 16 == 0 && partials.len() >= WYNN_WINDOW {
            let window = &panel_vals[panel_vals.len() - WYNN_WINDOW..];
            if count_sign_changes(window) >= 6 {
                let (est, errw) = wynn_limit(&partials[partials.len() - WYNN_WINDOW..]);
                let scale = 1.0 + est.abs();
                if errw <= 0.1 * quad.rel_tol * scale {
                    if let Some(p) = prev_est {
                        if (est - p).abs() <= quad.rel_tol * scale {
                            return Ok(est);
                        }
                    }
                }
                prev_est = Some(est);
            }
        }

        // Period correction: if sign changes arrive every d panels, the true
        // half-period is about d*h. Widening to match makes the panel series
        // properly alternating; no visible oscillation at all means the
        // integrand is (locally) one-signed and belongs to the smooth sweep.
        if (k == 96 || (k > 96 && (k - 96) % 512 == 0)) && rescales < 3 {
            let tail = &panel_vals[panel_vals.len().saturating_sub(64)..];
            match median_sign_gap(tail) {
                None => {
                    smooth = true;
                    break;
                }
                Some(d) if d >= 1.6 => {
                    h *= d.min(100.0);
                    rescales += 1;
                    partials.clear();
                    partials.push(total);
                    panel_vals.clear();
                    prev_est = None;
                }
                Some(_) => {}
            }
        }
    }

    if !smooth {
        let achieved = match (prev_est, partials.len() >= WYNN_WINDOW) {
            (Some(p), true) => {
                let (est, _) = wynn_limit(&partials[partials.len() - WYNN_WINDOW..]);
                (est - p).abs()
            }
            _ => f64::INFINITY,
        };
        return Err(Error::AccuracyNotReached {
            op: "gil_pelaez oscillatory tail",
            achieved,
            wanted: quad.rel_tol,
        });
    }

    // Smooth sweep: with no visible sign changes the factor multiplying
    // e^{-j t tau} is locally smooth, so fit it with a degree-7 Chebyshev
    // polynomial per panel and integrate the rotation exactly. Panel width
    // then widens geometrically regardless of how many rotation periods it
    // spans, and runs until both the panel sums and the CF have vanished.
    // No extrapolation: an integrand that looks one-signed here can pick up
    // slow oscillation much further out, which a geometric tail model would
    // miss.
    let xi = cheb_nodes();
    let tmat = cheb_power_matrix();
    let mut w = h;
    let mut last_s = f64::INFINITY;
    let mut sweep_streak = 0usize;
    for _ in 0..SMOOTH_MAX_PANELS {
        if t >= t_cap {
            return Ok(total);
        }
        w = (w * 1.35).min(0.24 * t);
        let mut attempts = 0usize;
        let (s, max_phi) = loop {
            let t_c = t + 0.5 * w;
            let t_h = 0.5 * w;
            let mut nodes = [Complex64::new(0.0, 0.0); DEGREE];
            let mut max_g = 0.0f64;
            let mut max_phi = 0.0f64;
            for (i, node) in nodes.iter_mut().enumerate() {
                let ti = t_c + t_h * xi[i];
                let v = cf.eval(ti);
                max_phi = max_phi.max(v.norm());
                *node = match mode {
                    Mode::ImOverT => v / ti,
                    Mode::Re => v,
                };
                max_g = max_g.max(node.norm());
            }
            let c = fit_power(&nodes, &tmat);
            let mut rel_err = 0.0f64;
            if max_g > 1e-300 {
                for &xc in &[-0.62, 0.81] {
                    let tc = t_c + t_h * xc;
                    let v = cf.eval(tc);
                    let fac = match mode {
                        Mode::ImOverT => v / tc,
                        Mode::Re => v,
                    };
                    rel_err = rel_err.max((eval_power(&c, xc) - fac).norm() / max_g);
                }
            }
            attempts += 1;
            if rel_err <= 2e-10 || attempts >= 25 || w <= 1e-6 * t {
                let mu = mu_all(tau * t_h);
                let mut acc = Complex64::new(0.0, 0.0);
                for (cm, mm) in c.iter().zip(mu.iter()) {
                    acc += cm * mm;
                }
                let v = t_h * Complex64::from_polar(1.0, -tau * t_c) * acc;
                let s = match mode {
                    Mode::ImOverT => v.im,
                    Mode::Re => v.re,
                };
                break (s, max_phi);
            }
            w *= 0.5;
        };
        t += w;
        total += s;
        last_s = s;
        if s.abs() <= quad.abs_tol * (1.0 + total.abs()) && max_phi < 1e-10 {
            sweep_streak += 1;
            if sweep_streak >= decay_streak_goal {
                return Ok(total);
            }
        } else {
            sweep_streak = 0;
        }
    }
    Err(Error::AccuracyNotReached {
        op: "gil_pelaez smooth tail",
        achieved: last_s.abs(),
        wanted: 1e-15,
    })
}

fn count_sign_changes(vals: &[f64]) -> usize {
    vals.windows(2)
        .filter(|w| w[0] != 0.0 && w[1] != 0.0 && w[0].signum() != w[1].signum())
        .count()
}

/// Median spacing (in panels) between sign changes; None with fewer than two
/// changes observed.
fn median_sign_gap(vals: &[f64]) -> Option<f64> {
    let mut idx = Vec::new();
    for (i, w) in vals.windows(2).enumerate() {
        if w[0] != 0.0 && w[1] != 0.0 && w[0].signum() != w[1].signum() {
            idx.push(i);
        }
    }
    if idx.len() < 2 {
        return None;
    }
    let mut gaps: Vec<usize> = idx.windows(2).map(|p| p[1] - p[0]).collect();
    gaps.sort_unstable();
    Some(gaps[gaps.len() / 2] as f64)
}

/// Wynn epsilon extrapolation of a partial-sum sequence. Returns the limit
/// estimate and the difference between the last two even-column estimates as
/// an error indicator.
fn wynn_limit(partials: &[f64]) -> (f64, f64) {
    let n = partials.len();
    let mut prev_prev = vec![0.0f64; n];
    let mut prev = partials.to_vec();
    let mut best = *partials.last().expect("non-empty window");
    let mut err = (partials[n - 1] - partials[n - 2]).abs();
    let mut col = 0usize;
    while prev.len() >= 2 {
        let mut cur = Vec::with_capacity(prev.len() - 1);
        let mut cut = prev.len() - 1;
        for i in 0..prev.len() - 1 {
            let d = prev[i + 1] - prev[i];
            if d == 0.0 || d.abs() < 1e-305 || !d.is_finite() {
                cut = i;
                break;
            }
            cur.push(prev_prev[i + 1] + 1.0 / d);
        }
        cur.truncate(cut);
        if cur.is_empty() {
            break;
        }
        col += 1;
        if col % 2 == 0 {
            let cand = *cur.last().expect("non-empty column");
            err = (cand - best).abs();
            best = cand;
        }
        prev_prev = prev;
        prev = cur;
    }
    (best, err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exp_cf(theta: f64) -> CfHandle {
        CfHandle::new(theta, move |t| (Complex64::new(1.0, -theta * t)).inv())
    }

    fn gamma2_cf() -> CfHandle {
        CfHandle::new(2.0, |t| {
            let d = Complex64::new(1.0, -t);
            (d * d).inv()
        })
    }

    #[test]
    fn exponential_cdf_pinned_value() {
        // Exp(1): F(1) = 1 - 1/e.
        let f1 = gil_pelaez_cdf(&exp_cf(1.0), 1.0, &QuadratureSpec::default()).unwrap();
        assert_relative_eq!(f1, 0.632_120_558_828_557_7, epsilon = 1e-10);
    }

    #[test]
    fn exponential_cdf_grid() {
        let cf = exp_cf(1.0);
        let mut tau = 0.05;
        while tau <= 8.0 {
            let got = gil_pelaez_cdf(&cf, tau, &QuadratureSpec::default()).unwrap();
            let want = 1.0 - (-tau).exp();
            assert!(
                (got - want).abs() < 5e-9,
                "tau = {tau}: got {got}, want {want}"
            );
            tau += 0.35;
        }
    }

    #[test]
    fn gamma_2_cdf_pinned_value() {
        // Gamma(2, 1): F(2) = 1 - 3 e^{-2}.
        let f2 = gil_pelaez_cdf(&gamma2_cf(), 2.0, &QuadratureSpec::default()).unwrap();
        assert_relative_eq!(f2, 0.593_994_150_290_161_6, epsilon = 1e-10);
    }

    #[test]
    fn gamma_2_cdf_grid() {
        let cf = gamma2_cf();
        for tau in [0.2, 0.7, 1.3, 2.0, 3.4, 6.0, 10.0] {
            let got = gil_pelaez_cdf(&cf, tau, &QuadratureSpec::default()).unwrap();
            let want = 1.0 - (-tau).exp() * (1.0 + tau);
            assert!(
                (got - want).abs() < 5e-9,
                "tau = {tau}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn densities_match_closed_forms() {
        let e = exp_cf(1.0);
        for tau in [0.3, 1.0, 2.5] {
            let got = gil_pelaez_pdf(&e, tau, &QuadratureSpec::default()).unwrap();
            assert!((got - (-tau).exp()).abs() < 5e-9, "tau = {tau}: {got}");
        }
        let g = gamma2_cf();
        let got = gil_pelaez_pdf(&g, 2.0, &QuadratureSpec::default()).unwrap();
        assert_relative_eq!(got, 0.270_670_566_473_225_4, epsilon = 1e-8);
    }

    #[test]
    fn uniform_cdf_slow_decay() {
        // Phi(t) = (e^{jt} - 1)/(jt) decays only like 1/t; the tail relies
        // on series acceleration, and two incommensurate frequencies beat.
        let cf = CfHandle::new(0.5, |t| {
            if t.abs() < 1e-8 {
                Complex64::new(1.0, t / 2.0)
            } else {
                (Complex64::from_polar(1.0, t) - 1.0) / Complex64::new(0.0, t)
            }
        });
        for x in [0.3, 0.5, 0.9] {
            let got = gil_pelaez_cdf(&cf, x, &QuadratureSpec::default()).unwrap();
            assert!((got - x).abs() < 1e-7, "x = {x}: got {got}");
        }
    }

    #[test]
    fn scale_extremes() {
        // Same law at scale 1e-3 and 1e4; scale_hint keeps the panel width
        // matched to the problem.
        let small = exp_cf(1e-3);
        let got = gil_pelaez_cdf(&small, 1e-3, &QuadratureSpec::default()).unwrap();
        assert!((got - (1.0 - (-1.0f64).exp())).abs() < 5e-9, "{got}");

        let large = exp_cf(1e4);
        let got = gil_pelaez_cdf(&large, 1e4 * std::f64::consts::LN_2, &QuadratureSpec::default()).unwrap();
        assert!((got - 0.5).abs() < 5e-9, "{got}");
    }

    #[test]
    fn shifted_support_gives_zero_below() {
        // X = 5 + Exp(1): strong rotation e^{5jt}, F(4.5) = 0 exactly.
        let cf = CfHandle::new(6.0, |t| {
            Complex64::from_polar(1.0, 5.0 * t) / Complex64::new(1.0, -t)
        });
        let below = gil_pelaez_cdf(&cf, 4.5, &QuadratureSpec::default()).unwrap();
        assert!(below.abs() < 1e-8, "{below}");
        let inside = gil_pelaez_cdf(&cf, 6.0, &QuadratureSpec::default()).unwrap();
        assert!((inside - (1.0 - (-1.0f64).exp())).abs() < 1e-8, "{inside}");
    }

    #[test]
    fn atom_plus_continuous_mixture() {
        // X = 0 with probability 0.3, else Exp(1). The constant CF component
        // leaves a non-decaying sin(t tau)/t term in the integrand.
        let cf = CfHandle::new(1.0, |t| {
            Complex64::new(0.3, 0.0) + 0.7 * Complex64::new(1.0, -t).inv()
        });
        let got = gil_pelaez_cdf(&cf, 1.0, &QuadratureSpec::default()).unwrap();
        let want = 0.3 + 0.7 * (1.0 - (-1.0f64).exp());
        assert!((got - want).abs() < 5e-8, "got {got}, want {want}");
    }

    #[test]
    fn infinite_mean_cusp_integrand() {
        // One-sided stable CF exp(-sqrt t (1 - j)): the integrand grows like
        // 1/sqrt t near 0, stressing the head and first-panel treatment.
        // True CDF is erfc(sqrt(1/(2x))); values pinned from that law.
        let cf = CfHandle::new(2.2, |t: f64| {
            let s = t.sqrt();
            Complex64::new(-s, s).exp()
        });
        let med = gil_pelaez_cdf(&cf, 2.198_109_338_317_732_6, &QuadratureSpec::default()).unwrap();
        assert!((med - 0.5).abs() < 2e-7, "{med}");
    }

    #[test]
    fn cdf_monotone_on_grid() {
        let cf = gamma2_cf();
        let mut prev = -1.0;
        for i in 0..40 {
            let tau = 0.1 + 0.25 * i as f64;
            let v = gil_pelaez_cdf(&cf, tau, &QuadratureSpec::default()).unwrap();
            assert!(v > prev - 1e-9, "dip at tau = {tau}");
            prev = v;
        }
    }
}
