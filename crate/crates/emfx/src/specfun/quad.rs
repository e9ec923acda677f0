//! Quadrature kernels: Gauss-Kronrod 15 with global adaptive subdivision for
//! real and complex integrands, and cached Gauss-Legendre / Gauss-Laguerre
//! rules generated by Newton iteration on the orthogonal-polynomial
//! recurrences.

use std::collections::BinaryHeap;
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;

/// 15-point Kronrod abscissae on [0, 1] (symmetric; negate for the mirror
/// half). Odd-indexed entries are the embedded 7-point Gauss nodes.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.000000000000000,
];

/// Kronrod weights paired with `XGK`.
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];

/// Embedded 7-point Gauss weights (for XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One GK15 panel over [a, b]: returns (kronrod_value, error_estimate).
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = WGK[7] * fc;
    let mut resg = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let fsum = f(c - x) + f(c + x);
        resk += WGK[j] * fsum;
        if j % 2 == 1 {
            resg += WG[j / 2] * fsum;
        }
    }
    let value = resk * h;
    // QUADPACK-style rescaled error estimate; the plain |K - G| bound is far
    // too pessimistic for smooth integrands.
    let mean = value / (b - a);
    let mut asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        let x = h * XGK[j];
        asc += WGK[j] * ((f(c - x) - mean).abs() + (f(c + x) - mean).abs());
    }
    let asc = asc * h.abs();
    let raw = ((resk - resg) * h).abs();
    let err = if asc != 0.0 && raw != 0.0 {
        asc * ((200.0 * raw / asc).powf(1.5)).min(1.0)
    } else {
        raw
    };
    (value, err)
}

/// GK15 panel for complex-valued integrands of a real variable.
pub fn gk15_complex<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> (Complex64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let fsum = f(c - x) + f(c + x);
        resk += fsum * WGK[j];
        if j % 2 == 1 {
            resg += fsum * WG[j / 2];
        }
    }
    (resk * h, ((resk - resg) * h).norm())
}

#[derive(PartialEq)]
struct Panel {
    err: f64,
    a: f64,
    b: f64,
    val: f64,
}
impl Eq for Panel {}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.partial_cmp(&other.err).unwrap_or(std::cmp::Ordering::Equal)
    }
}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Globally adaptive GK15 over [a, b]: repeatedly bisects the panel with the
/// largest error estimate. Returns (value, error_estimate); never panics, the
/// caller decides whether the achieved error is acceptable.
pub fn adaptive_gk<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> (f64, f64) {
    let (v0, e0) = gk15(f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Panel { err: e0, a, b, val: v0 });
    let mut total_val = v0;
    let mut total_err = e0;
    while total_err > abs_tol.max(rel_tol * total_val.abs()) && heap.len() < max_panels {
        let worst = heap.pop().expect("heap holds at least one panel");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel narrower than f64 spacing; put it back and stop.
            heap.push(worst);
            break;
        }
        let (vl, el) = gk15(f, worst.a, mid);
        let (vr, er) = gk15(f, mid, worst.b);
        total_val += vl + vr - worst.val;
        total_err += el + er - worst.err;
        heap.push(Panel { err: el, a: worst.a, b: mid, val: vl });
        heap.push(Panel { err: er, a: mid, b: worst.b, val: vr });
    }
    total_val = heap.iter().map(|p| p.val).sum();
    total_err = heap.iter().map(|p| p.err).sum();
    (total_val, total_err)
}

/// Complex-valued counterpart of `adaptive_gk`. Error is tracked in norm.
pub fn adaptive_gk_complex<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> (Complex64, f64) {
    struct CPanel {
        err: f64,
        a: f64,
        b: f64,
        val: Complex64,
    }
    let (v0, e0) = gk15_complex(f, a, b);
    let mut panels = vec![CPanel { err: e0, a, b, val: v0 }];
    loop {
        let total_val: Complex64 = panels.iter().map(|p| p.val).sum();
        let total_err: f64 = panels.iter().map(|p| p.err).sum();
        if total_err <= abs_tol.max(rel_tol * total_val.norm()) || panels.len() >= max_panels {
            return (total_val, total_err);
        }
        let (worst_idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.partial_cmp(&y.1.err).unwrap_or(std::cmp::Ordering::Equal))
            .expect("non-empty");
        let worst = panels.swap_remove(worst_idx);
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            panels.push(worst);
            let total_val: Complex64 = panels.iter().map(|p| p.val).sum();
            let total_err: f64 = panels.iter().map(|p| p.err).sum();
            return (total_val, total_err);
        }
        let (vl, el) = gk15_complex(f, worst.a, mid);
        let (vr, er) = gk15_complex(f, mid, worst.b);
        panels.push(CPanel { err: el, a: worst.a, b: mid, val: vl });
        panels.push(CPanel { err: er, a: mid, b: worst.b, val: vr });
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], cached per order.
///
/// Newton iteration on P_n with the three-term recurrence; initial guesses are
/// the Chebyshev-like asymptotic angles. Exact for polynomials of degree
/// 2n - 1; verified by moment tests.
pub fn gauss_legendre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<Mutex<Vec<(usize, &'static (Vec<f64>, Vec<f64>))>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
    let mut guard = cache.lock().expect("gauss_legendre cache poisoned");
    if let Some(&(_, hit)) = guard.iter().find(|(m, _)| *m == n) {
        return hit;
    }
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..64 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        ws[i] = w;
        xs[n - 1 - i] = x;
        ws[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        xs[n / 2] = 0.0;
    }
    let leaked: &'static (Vec<f64>, Vec<f64>) = Box::leak(Box::new((xs, ws)));
    guard.push((n, leaked));
    leaked
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Laguerre nodes and weights for int_0^inf f(x) e^{-x} dx, cached per
/// order. Newton on L_n with the Stroud-Secrest initial guesses; weights via
/// w_i = x_i / ((n+1)^2 L_{n+1}(x_i)^2).
pub fn gauss_laguerre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<Mutex<Vec<(usize, &'static (Vec<f64>, Vec<f64>))>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
    let mut guard = cache.lock().expect("gauss_laguerre cache poisoned");
    if let Some(&(_, hit)) = guard.iter().find(|(m, _)| *m == n) {
        return hit;
    }
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    let nf = n as f64;
    let mut x = 0.0_f64;
    for i in 0..n {
        // Initial guesses from Numerical Recipes; refined by Newton below.
        x = if i == 0 {
            3.0 / (1.0 + 2.4 * nf)
        } else if i == 1 {
            x + 15.0 / (1.0 + 2.5 * nf)
        } else {
            let ai = i as f64 - 1.0;
            x + (1.0 + 2.55 * ai) / (1.9 * ai) * (x - xs[i - 2])
        };
        for _ in 0..128 {
            let (l, dl) = laguerre_and_derivative(n, x);
            let dx = l / dl;
            x -= dx;
            if dx.abs() < 1e-15 * x.max(1.0) {
                break;
            }
        }
        xs[i] = x;
        let lnp1 = laguerre_value(n + 1, x);
        ws[i] = x / (((nf + 1.0) * lnp1) * ((nf + 1.0) * lnp1));
    }
    let leaked: &'static (Vec<f64>, Vec<f64>) = Box::leak(Box::new((xs, ws)));
    guard.push((n, leaked));
    leaked
}

fn laguerre_value(n: usize, x: f64) -> f64 {
    let mut l0 = 1.0;
    let mut l1 = 1.0 - x;
    if n == 0 {
        return l0;
    }
    for k in 2..=n {
        let kf = k as f64;
        let l2 = ((2.0 * kf - 1.0 - x) * l1 - (kf - 1.0) * l0) / kf;
        l0 = l1;
        l1 = l2;
    }
    l1
}

fn laguerre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let ln = laguerre_value(n, x);
    let lnm1 = laguerre_value(n - 1, x);
    // x L_n'(x) = n (L_n - L_{n-1}).
    let dl = n as f64 * (ln - lnm1) / x;
    (ln, dl)
}
