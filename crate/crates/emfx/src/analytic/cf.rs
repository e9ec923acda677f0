//! Characteristic functions of the aggregate downlink exposure.
//!
//! Exposure is a sum of independently faded site powers, so its
//! characteristic function factorises into per-site terms. Under the Poisson
//! model the product collapses to a closed form built on `hyp2f1_omega`.
//! Under the beta-Ginibre model the k-th candidate site has a Gamma(k, 1)
//! law for its normalised squared distance v = pi lambda r^2 / beta, and the
//! factor product runs over k: indices near the conditioning window are
//! integrated explicitly on a frozen grid, mid-range indices use a moment
//! series in the site power, and the remainder is summed in closed form.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;

use crate::analytic::{ScenarioSpec, TruncationSpec};
use crate::error::{Error, Result};
use crate::spatial::{Model, NetworkParams, Rat};
use crate::specfun::gamma::{ln_gamma, reg_gamma_upper_scan};
use crate::specfun::quad::{adaptive_gk_complex, gauss_legendre};
use crate::specfun::{hyp2f1_omega, CfHandle};

/// Highest moment order carried by the mid-range series and the far tail.
const M_MAX: usize = 30;
/// Gamma-density factors below exp(LN_F_CUT) of unit scale are dropped.
const LN_F_CUT: f64 = -40.0;
/// Explicit-index counts beyond this switch from cached density weights to
/// on-the-fly evaluation so memory stays bounded for very small beta.
const CACHE_K_LIMIT: usize = 600;
/// Absolute target for the log of the far-index product.
const FAR_TOL: f64 = 1e-9;
/// Largest acceptable absolute CF error induced by the far-product bound.
const FAR_ABS_CF: f64 = 1e-8;
/// Serving-distance mass allowed beyond the integration window.
const WINDOW_MASS_TOL: f64 = 1e-6;

fn check_positive_t(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Domain {
            op: "cf_exposure",
            msg: format!("t must be finite and positive, got {t}"),
        });
    }
    Ok(())
}

/// 1 / (1 - j x), the per-link factor of an exponentially faded power.
#[inline]
fn q_of(x: f64) -> Complex64 {
    let d = 1.0 + x * x;
    Complex64::new(1.0 / d, x / d)
}

/// Characteristic function of the exposure seen by a 4G-only user.
///
/// pre: `t` is finite and strictly positive.
pub fn cf_exposure_4g(
    t: f64,
    params: &NetworkParams,
    model: Model,
    trunc: &TruncationSpec,
) -> Result<Complex64> {
    check_positive_t(t)?;
    ExposureCf::assemble(Rat::FourG, model, params, trunc)?.eval(t)
}

/// Characteristic function of the exposure seen by a 5G-only user.
///
/// pre: `t` is finite and strictly positive.
pub fn cf_exposure_5g(
    t: f64,
    params: &NetworkParams,
    model: Model,
    trunc: &TruncationSpec,
) -> Result<Complex64> {
    check_positive_t(t)?;
    ExposureCf::assemble(Rat::FiveG, model, params, trunc)?.eval(t)
}

/// Characteristic function of the exposure seen by a dual-connected user.
///
/// pre: `t` is finite and strictly positive, and the two effective powers are
/// distinct whenever `p_coloc * eta > 0` (the joint per-site factor is
/// resolved by partial fractions in the power).
pub fn cf_exposure_endc(
    t: f64,
    params: &NetworkParams,
    model: Model,
    trunc: &TruncationSpec,
) -> Result<Complex64> {
    check_positive_t(t)?;
    ExposureCf::assemble(Rat::EnDc, model, params, trunc)?.eval(t)
}

/// Typical exposure magnitude: the serving-tier power through the path loss
/// at the median serving distance. Used to seed inversion step sizes.
pub(crate) fn exposure_scale_hint(rat: Rat, params: &NetworkParams) -> f64 {
    let (p_eff, c) = match rat {
        Rat::FiveG => (params.p5_eff, params.c5()),
        Rat::FourG | Rat::EnDc => (params.p4_eff, params.c4()),
    };
    let d2 = params.d_m * params.d_m;
    let y_med = (2.0f64.ln() / c).max(d2);
    p_eff * y_med.powf(-0.5 * params.alpha)
}

/// A ready-to-evaluate exposure CF for one scenario. Building it validates
/// the scenario and precomputes everything reusable across t.
pub(crate) struct ExposureCf {
    rat: Rat,
    params: NetworkParams,
    repr: CfRepr,
}

enum CfRepr {
    Ppp,
    Bgpp {
        engine: BgppCf,
        grid: BgppServingGrid,
    },
}

impl ExposureCf {
    pub(crate) fn assemble(
        rat: Rat,
        model: Model,
        params: &NetworkParams,
        trunc: &TruncationSpec,
    ) -> Result<Self> {
        params.validate()?;
        trunc.validate()?;
        if rat == Rat::EnDc {
            endc_weights(params)?;
        }
        let repr = match model {
            Model::Ppp => CfRepr::Ppp,
            Model::Bgpp => {
                let engine = BgppCf::new(SiteKernel::exposure_kernel(rat), params, trunc)?;
                let grid = engine.serving_grid()?;
                CfRepr::Bgpp { engine, grid }
            }
        };
        Ok(Self {
            rat,
            params: *params,
            repr,
        })
    }

    pub(crate) fn from_scenario(scenario: &ScenarioSpec) -> Result<Self> {
        Self::assemble(
            scenario.rat,
            scenario.model,
            &scenario.params,
            &scenario.truncation,
        )
    }

    /// Evaluate at any finite nonzero t; negative t is the conjugate branch.
    pub(crate) fn eval(&self, t: f64) -> Result<Complex64> {
        if !(t.is_finite() && t != 0.0) {
            return Err(Error::Domain {
                op: "ExposureCf::eval",
                msg: format!("t must be finite and nonzero, got {t}"),
            });
        }
        match &self.repr {
            CfRepr::Ppp => ppp_exposure_cf(self.rat, &self.params, t),
            CfRepr::Bgpp { engine, grid } => engine.exposure_cf(grid, t),
        }
    }

    pub(crate) fn scale_hint(&self) -> f64 {
        exposure_scale_hint(self.rat, &self.params)
    }

    /// Wrap as a `CfHandle`. Internal evaluation errors surface as NaN, which
    /// downstream inversion reports rather than silently absorbing.
    pub(crate) fn into_handle(self) -> CfHandle {
        let scale = self.scale_hint();
        let me = Arc::new(self);
        CfHandle::new(scale, move |t| {
            me.eval(t)
                .unwrap_or(Complex64::new(f64::NAN, f64::NAN))
        })
    }
}

/// Partial-fraction weights that resolve the dual-connected per-site factor
/// q4 (1 - p eta + p eta q5) into w4 q4 + w5 q5. Requires distinct effective
/// powers when the 5G branch is active because q4 q5 = A q4 + B q5 holds with
/// A = P4 / (P4 - P5), B = P5 / (P5 - P4).
fn endc_weights(params: &NetworkParams) -> Result<(f64, f64)> {
    let pe = params.p_coloc * params.eta;
    if pe == 0.0 {
        return Ok((1.0, 0.0));
    }
    let dp = params.p4_eff - params.p5_eff;
    if dp.abs() <= 1e-6 * params.p4_eff.max(params.p5_eff) {
        return Err(Error::Domain {
            op: "endc_weights",
            msg: "effective powers of the two tiers are too close to separate by partial fractions"
                .into(),
        });
    }
    let a = params.p4_eff / dp;
    let b = -params.p5_eff / dp;
    Ok((1.0 - pe + pe * a, pe * b))
}

// ---------------------------------------------------------------------------
// Poisson model: closed forms.
// ---------------------------------------------------------------------------

/// Log of the conditional interference factor: the PGFL exponent
/// pi lambda Int_{y0}^inf (q(y) - 1) dy for sites of effective power `p_eff`
/// beyond squared distance `y0`, with the near-field path-loss plateau below
/// `d2`. Exact via the Gauss hypergeometric kernel.
pub(crate) fn ppp_interference_exponent(
    t: f64,
    p_eff: f64,
    lambda: f64,
    y0: f64,
    alpha: f64,
    d2: f64,
) -> Result<Complex64> {
    let s = 0.5 * alpha;
    let b = 1.0 - 2.0 / alpha;
    let pl = std::f64::consts::PI * lambda;
    let ztp = Complex64::new(0.0, t * p_eff);
    let mut x = Complex64::new(0.0, 0.0);
    if y0 < d2 {
        x += pl * (d2 - y0) * (ztp / (Complex64::new(1.0, 0.0) - ztp));
    }
    let y_lo = y0.max(d2);
    let z = ztp * y_lo.powf(-s);
    let omega = hyp2f1_omega(z, alpha)?;
    x += pl * y_lo * z / (s * b) * omega;
    Ok(x)
}

/// Expectation of `g` over the nearest-site squared distance of a Poisson
/// process of intensity `lambda`. Split at the path-loss plateau edge so the
/// kink never sits inside a quadrature panel; the tail runs in log space so
/// structure at any squared-distance scale is resolved, out to where the
/// density has shed all but exp(-60) of its mass.
fn nearest_site_expectation<F>(lambda: f64, d2: f64, g: F) -> Result<Complex64>
where
    F: Fn(f64) -> Result<Complex64>,
{
    let c = std::f64::consts::PI * lambda;
    let err_cell: RefCell<Option<Error>> = RefCell::new(None);
    let integrand = |y: f64| -> Complex64 {
        match g(y) {
            Ok(v) => c * (-c * y).exp() * v,
            Err(e) => {
                err_cell.borrow_mut().get_or_insert(e);
                Complex64::new(f64::NAN, f64::NAN)
            }
        }
    };
    let (near, _) = adaptive_gk_complex(&integrand, 0.0, d2, 1e-15, 1e-12, 400);
    let y_hi = d2 + 60.0 / c;
    let (far, _) = adaptive_gk_complex(
        &|w: f64| {
            let y = w.exp();
            integrand(y) * y
        },
        d2.ln(),
        y_hi.ln(),
        1e-15,
        1e-12,
        4000,
    );
    match err_cell.into_inner() {
        Some(e) => Err(e),
        None => Ok(near + far),
    }
}

fn ppp_exposure_cf(rat: Rat, params: &NetworkParams, t: f64) -> Result<Complex64> {
    let d2 = params.d_m * params.d_m;
    let s = 0.5 * params.alpha;
    let ell = |y: f64| if y < d2 { 1.0 } else { y.powf(-s) };
    match rat {
        Rat::FourG => {
            let x = ppp_interference_exponent(t, params.p4_eff, params.lambda4, 0.0, params.alpha, d2)?;
            Ok(x.exp())
        }
        Rat::FiveG => nearest_site_expectation(params.lambda5, d2, |y| {
            let x = ppp_interference_exponent(t, params.p5_eff, params.lambda5, y, params.alpha, d2)?;
            Ok(q_of(t * params.p5_eff * ell(y)) * (params.eta * x).exp())
        }),
        Rat::EnDc => {
            let (w4, w5) = endc_weights(params)?;
            let p = params.p_coloc;
            nearest_site_expectation(params.lambda4, d2, |y| {
                let x4 =
                    ppp_interference_exponent(t, params.p4_eff, params.lambda4, y, params.alpha, d2)?;
                let x5 =
                    ppp_interference_exponent(t, params.p5_eff, params.lambda4, y, params.alpha, d2)?;
                let serving = q_of(t * params.p4_eff * ell(y))
                    * ((1.0 - p) + p * q_of(t * params.p5_eff * ell(y)));
                Ok(serving * (w4 * x4 + w5 * x5).exp())
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Beta-Ginibre model: per-index product engine.
// ---------------------------------------------------------------------------

/// Which per-site factor the product carries. Every scenario reduces to an
/// affine combination c0 + c4 q4 + c5 q5 with c0 + c4 + c5 = 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum SiteKernel {
    /// All sites interfere at the 4G power.
    FourG,
    /// Sites interfere at the 5G power with probability eta.
    FiveG,
    /// Joint 4G and colocated-5G factor of a dual-connected link.
    EnDcJoint,
    /// Only the 5G emissions of a dual-connected deployment.
    FiveGWithinEnDc,
}

impl SiteKernel {
    fn exposure_kernel(rat: Rat) -> Self {
        match rat {
            Rat::FourG => SiteKernel::FourG,
            Rat::FiveG => SiteKernel::FiveG,
            Rat::EnDc => SiteKernel::EnDcJoint,
        }
    }
}

enum ServingMix {
    FourG,
    FiveG,
    EnDc { p: f64 },
}

/// Exposure CF engine for the beta-Ginibre model. One instance fixes the
/// kernel, the process, and the truncation policy; evaluation reuses the
/// tables across t.
pub(crate) struct BgppCf {
    beta: f64,
    s_exp: f64,
    /// Plateau edge in normalised squared distance, c d^2 / beta.
    v_d: f64,
    c0: f64,
    c4: f64,
    c5: f64,
    /// x = t * pt_i * v^{-s} beyond the plateau, x = t * pg_i inside it.
    pt4: f64,
    pt5: f64,
    pg4: f64,
    pg5: f64,
    use4: bool,
    use5: bool,
    ptmax: f64,
    serving: ServingMix,
    k_window_cap: usize,
    s_max: usize,
    k_cap: usize,
    /// ln Gamma(k) for integer k up to k_cap + 1.
    lgam: Vec<f64>,
    /// Moment ratios: entry [k][0] is Gamma(k-s)/Gamma(k); entry [k][m-1] for
    /// m >= 2 is the ratio of consecutive moments Gamma(k-ms)/Gamma(k-(m-1)s).
    rmk: Vec<f64>,
}

/// Frozen tables for one conditioning point u: upper-tail Gamma values, the
/// quadrature grid of the explicit region, and (when cached) the density
/// weights w * f_k(v) per index.
pub(crate) struct NodeTables {
    u: f64,
    w: f64,
    k_build: usize,
    q_up: Vec<f64>,
    v: Vec<f64>,
    lnv: Vec<f64>,
    wq: Vec<f64>,
    xf4: Vec<f64>,
    xf5: Vec<f64>,
    krange: Vec<(u32, u32)>,
    fw: Vec<f64>,
    fw_start: Vec<u32>,
    cached: bool,
    /// t-free bound on this node's contribution to the exposure integral.
    mass_bound: f64,
}

pub(crate) struct BgppServingGrid {
    pub(crate) nodes: Vec<NodeTables>,
    pub(crate) k_build: usize,
}

fn u_window(u: f64) -> usize {
    (u + 7.0 * u.sqrt() + 12.0).ceil() as usize
}

/// Largest u whose explicit window u + 7 sqrt(u) + 12 fits under `cap`.
fn u_from_window_cap(cap: usize) -> f64 {
    if cap <= 13 {
        return 0.0;
    }
    let c = cap as f64 - 12.0;
    let r = 0.5 * (-7.0 + (49.0 + 4.0 * c).sqrt());
    r * r
}

impl BgppCf {
    pub(crate) fn new(
        kernel: SiteKernel,
        params: &NetworkParams,
        trunc: &TruncationSpec,
    ) -> Result<Self> {
        params.validate()?;
        trunc.validate()?;
        let pe = params.p_coloc * params.eta;
        let (lambda, beta, c0, c4, c5) = match kernel {
            SiteKernel::FourG => (params.lambda4, params.beta4, 0.0, 1.0, 0.0),
            SiteKernel::FiveG => (params.lambda5, params.beta5, 1.0 - params.eta, 0.0, params.eta),
            SiteKernel::EnDcJoint => {
                let (w4, w5) = endc_weights(params)?;
                (params.lambda4, params.beta4, 0.0, w4, w5)
            }
            SiteKernel::FiveGWithinEnDc => (params.lambda4, params.beta4, 1.0 - pe, 0.0, pe),
        };
        let serving = match kernel {
            SiteKernel::FourG => ServingMix::FourG,
            SiteKernel::FiveG | SiteKernel::FiveGWithinEnDc => ServingMix::FiveG,
            SiteKernel::EnDcJoint => ServingMix::EnDc { p: params.p_coloc },
        };
        let s = 0.5 * params.alpha;
        let c = std::f64::consts::PI * lambda;
        let scale = (c / beta).powf(s);
        let use4 = c4 != 0.0;
        let use5 = c5 != 0.0;
        let pt4 = if use4 { params.p4_eff * scale } else { 0.0 };
        let pt5 = if use5 { params.p5_eff * scale } else { 0.0 };
        let ptmax = pt4.max(pt5);
        let k_cap = (2 * trunc.k_max_products + 200).max(20_000).min(40_000);
        let mut lgam = Vec::with_capacity(k_cap + 2);
        for k in 0..=(k_cap + 1) {
            lgam.push(if k == 0 { 0.0 } else { ln_gamma(k as f64) });
        }
        let mut rmk = vec![0.0; (k_cap + 1) * M_MAX];
        for k in 2..=k_cap {
            let kf = k as f64;
            let mut prev_ln = 0.0;
            for m in 1..=M_MAX {
                let arg = kf - m as f64 * s;
                if arg < 1.5 {
                    break;
                }
                let ln_t = ln_gamma(arg) - lgam[k];
                rmk[k * M_MAX + (m - 1)] = (ln_t - prev_ln).exp();
                prev_ln = ln_t;
            }
        }
        Ok(Self {
            beta,
            s_exp: s,
            v_d: c * params.d_m * params.d_m / beta,
            c0,
            c4,
            c5,
            pt4,
            pt5,
            pg4: if use4 { params.p4_eff } else { 0.0 },
            pg5: if use5 { params.p5_eff } else { 0.0 },
            use4,
            use5,
            ptmax,
            serving,
            k_window_cap: trunc.k_max_products,
            s_max: trunc.s_max,
            k_cap,
            lgam,
            rmk,
        })
    }

    /// Upper limit of the serving-distance integration, in normalised
    /// squared-distance units. P(U > u) <= exp(-beta u), so the cutoff
    /// leaves under exp(-20) of serving mass.
    pub(crate) fn serving_u_hi(&self) -> f64 {
        (20.0 / self.beta + 8.0).min(u_from_window_cap(self.k_window_cap))
    }

    /// Quadrature grid over the serving distance plus the per-node tables.
    /// Fails when the window cap truncates more serving mass than allowed.
    pub(crate) fn serving_grid(&self) -> Result<BgppServingGrid> {
        let u_hi = self.serving_u_hi();
        let k_build = u_window(u_hi).max(60);
        if u_hi > 0.0 {
            let scan = reg_gamma_upper_scan(k_build.min(self.k_cap), u_hi);
            let ln_tail: f64 = scan
                .iter()
                .map(|&q| (1.0 - self.beta * (1.0 - q)).max(1e-300).ln())
                .sum();
            if ln_tail > WINDOW_MASS_TOL.ln() {
                return Err(Error::TruncationInsufficient {
                    op: "bgpp_serving_window",
                    msg: format!(
                        "window keeps only {:.3e} of the serving-distance mass; raise k_max_products",
                        1.0 - ln_tail.exp()
                    ),
                });
            }
        } else {
            return Err(Error::TruncationInsufficient {
                op: "bgpp_serving_window",
                msg: "k_max_products leaves no room for the serving-distance window".into(),
            });
        }
        const W_BOUNDS: [f64; 17] = [
            0.0, 0.4, 0.9, 1.5, 2.2, 3.0, 4.0, 5.2, 6.6, 8.2, 10.0, 12.2, 14.8, 17.8, 21.2, 25.0,
            29.0,
        ];
        let w_hi = self.beta * u_hi;
        let mut bounds: Vec<f64> = W_BOUNDS.iter().copied().filter(|&w| w < w_hi).collect();
        bounds.push(w_hi);
        // The serving factor switches from plateau to power law at v_d; a
        // panel straddling that kink loses the near-field mass.
        let w_d = self.beta * self.v_d;
        if w_d > 0.0 && w_d < w_hi && !bounds.iter().any(|&b| (b - w_d).abs() < 1e-12) {
            bounds.push(w_d);
            bounds.sort_by(f64::total_cmp);
        }
        let (xs, ws) = gauss_legendre(8);
        let mut nodes = Vec::new();
        for pair in bounds.windows(2) {
            let (a, b) = (pair[0] / self.beta, pair[1] / self.beta);
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            for (&x, &w) in xs.iter().zip(ws) {
                nodes.push(self.build_node(mid + half * x, half * w, k_build));
            }
        }
        Ok(BgppServingGrid { nodes, k_build })
    }

    /// Node at an arbitrary conditioning point, outside the serving
    /// quadrature. The explicit window is sized to the point itself.
    pub(crate) fn standalone_node(&self, u: f64) -> NodeTables {
        self.build_node(u, 0.0, u_window(u).max(60).min(self.k_cap))
    }

    /// Tables for one conditioning point. `w` is the outer quadrature weight
    /// (zero when the node is used standalone).
    pub(crate) fn build_node(&self, u: f64, w: f64, k_build: usize) -> NodeTables {
        let scan = reg_gamma_upper_scan(k_build, u);
        let mut q_up = Vec::with_capacity(k_build + 1);
        q_up.push(1.0);
        q_up.extend_from_slice(&scan);

        let kb = k_build as f64;
        let v_hi = kb + 9.0 * kb.sqrt() + 16.0;
        let mut bps = vec![u.max(1e-12)];
        let mut v = u.max(1e-12);
        while v < v_hi {
            let mut h = (0.35 * v).max(0.12).min(1.5 * v.sqrt());
            if v < self.v_d && v + h > self.v_d {
                h = self.v_d - v;
            }
            v += h;
            bps.push(v.min(v_hi));
        }
        let (xs, ws) = gauss_legendre(8);
        let n_nodes = (bps.len() - 1) * xs.len();
        let mut vv = Vec::with_capacity(n_nodes);
        let mut wq = Vec::with_capacity(n_nodes);
        for pair in bps.windows(2) {
            let mid = 0.5 * (pair[0] + pair[1]);
            let half = 0.5 * (pair[1] - pair[0]);
            for (&x, &gw) in xs.iter().zip(ws) {
                vv.push(mid + half * x);
                wq.push(half * gw);
            }
        }
        let lnv: Vec<f64> = vv.iter().map(|&v| v.ln()).collect();
        let xf4: Vec<f64> = vv.iter().map(|&v| self.x_factor4(v)).collect();
        let xf5: Vec<f64> = vv.iter().map(|&v| self.x_factor5(v)).collect();

        let cached = k_build <= CACHE_K_LIMIT;
        let mut krange = vec![(0u32, 0u32); k_build + 1];
        let mut fw = Vec::new();
        let mut fw_start = vec![0u32; k_build + 2];
        for k in 1..=k_build {
            let kf = k as f64;
            let half = 9.0 * kf.sqrt() + 14.0;
            let lo = (kf - half).max(u);
            let hi = kf + half;
            let mut i0 = vv.partition_point(|&x| x < lo);
            let mut i1 = vv.partition_point(|&x| x < hi);
            let lgk = self.lgam[k];
            let lf = |i: usize| (kf - 1.0) * lnv[i] - vv[i] - lgk;
            while i0 < i1 && lf(i0) < LN_F_CUT {
                i0 += 1;
            }
            while i1 > i0 && lf(i1 - 1) < LN_F_CUT {
                i1 -= 1;
            }
            krange[k] = (i0 as u32, i1 as u32);
            if cached {
                for i in i0..i1 {
                    let l = lf(i);
                    fw.push(if l > LN_F_CUT { wq[i] * l.exp() } else { 0.0 });
                }
            }
            fw_start[k + 1] = fw.len() as u32;
        }

        // |contribution| <= beta w (prod_k a_k) sum_s f_s / a_s / (1 - beta),
        // every factor independent of t. The 1 / (1 - beta) stands in for
        // 1 / |D_s|, valid when the kernel weights stay inside [0, 1]; the
        // skip threshold leaves three orders of margin over the CF budget.
        let mut ln_a_prod = 0.0;
        for k in 1..=k_build {
            ln_a_prod += (1.0 - self.beta + self.beta * q_up[k]).max(1e-300).ln();
        }
        let ln_u = u.max(1e-300).ln();
        let mut f_over_a = 0.0;
        for s in 1..=self.s_max.min(k_build) {
            let lf = (s as f64 - 1.0) * ln_u - u - self.lgam[s];
            if lf < -43.0 {
                if (s as f64) > u {
                    break;
                }
                continue;
            }
            f_over_a += lf.exp() / (1.0 - self.beta + self.beta * q_up[s]);
        }
        let mass_bound = self.beta * w.abs() * ln_a_prod.exp() * f_over_a / (1.0 - self.beta);

        NodeTables {
            u,
            w,
            k_build,
            q_up,
            v: vv,
            lnv,
            wq,
            xf4,
            xf5,
            krange,
            fw,
            fw_start,
            cached,
            mass_bound,
        }
    }

    #[inline]
    fn x_factor4(&self, v: f64) -> f64 {
        if !self.use4 {
            0.0
        } else if v < self.v_d {
            self.pg4
        } else {
            self.pt4 * v.powf(-self.s_exp)
        }
    }

    #[inline]
    fn x_factor5(&self, v: f64) -> f64 {
        if !self.use5 {
            0.0
        } else if v < self.v_d {
            self.pg5
        } else {
            self.pt5 * v.powf(-self.s_exp)
        }
    }

    /// Per-site factor c0 + c4 q4 + c5 q5 at one grid node.
    #[inline]
    fn phi_at(&self, t: f64, xf4: f64, xf5: f64) -> Complex64 {
        let mut phi = Complex64::new(self.c0, 0.0);
        if self.use4 {
            phi += self.c4 * q_of(t * xf4);
        }
        if self.use5 {
            phi += self.c5 * q_of(t * xf5);
        }
        phi
    }

    /// Explicit factors D_k = 1 - beta + beta E[phi(v_k) | v_k > u] for
    /// k = 1..=k_build. Indices whose density band lies entirely below the
    /// window keep their t-free value 1 - beta + beta Q(k, u).
    fn explicit_dks(&self, node: &NodeTables, t: f64) -> Vec<Complex64> {
        let n = node.v.len();
        let mut phi = Vec::with_capacity(n);
        for i in 0..n {
            phi.push(self.phi_at(t, node.xf4[i], node.xf5[i]));
        }
        let one_m_beta = 1.0 - self.beta;
        let mut dks = vec![Complex64::new(1.0, 0.0); node.k_build + 1];
        for k in 1..=node.k_build {
            let (i0, i1) = node.krange[k];
            let (i0, i1) = (i0 as usize, i1 as usize);
            let mut acc = Complex64::new(0.0, 0.0);
            if i0 >= i1 {
                dks[k] = Complex64::new(one_m_beta + self.beta * node.q_up[k], 0.0);
                continue;
            }
            if node.cached {
                let base = node.fw_start[k] as usize;
                for (j, i) in (i0..i1).enumerate() {
                    acc += node.fw[base + j] * phi[i];
                }
            } else {
                let kf = k as f64;
                let lgk = self.lgam[k];
                for i in i0..i1 {
                    let lf = (kf - 1.0) * node.lnv[i] - node.v[i] - lgk;
                    if lf > LN_F_CUT {
                        acc += (node.wq[i] * lf.exp()) * phi[i];
                    }
                }
            }
            dks[k] = one_m_beta + self.beta * acc;
        }
        dks
    }

    /// Mean of 1 - phi under Gamma(k, 1) by the moment series. None when the
    /// series cannot certify 1e-12 accuracy at this (t, k).
    fn e_k_series(&self, t: f64, k: usize) -> Option<Complex64> {
        let m_hard = M_MAX.min(((k as f64 - 1.5) / self.s_exp).floor() as usize);
        if m_hard == 0 {
            return None;
        }
        let base = k * M_MAX;
        let jt = Complex64::new(0.0, t);
        let mut y4 = if self.use4 {
            jt * self.pt4 * self.rmk[base]
        } else {
            Complex64::new(0.0, 0.0)
        };
        let mut y5 = if self.use5 {
            jt * self.pt5 * self.rmk[base]
        } else {
            Complex64::new(0.0, 0.0)
        };
        let mut e = Complex64::new(0.0, 0.0);
        let mut prev_mag = f64::INFINITY;
        for m in 1..=m_hard {
            if m > 1 {
                let r = self.rmk[base + m - 1];
                if r == 0.0 {
                    return if prev_mag < 1e-12 { Some(e) } else { None };
                }
                if self.use4 {
                    y4 = y4 * jt * (self.pt4 * r);
                }
                if self.use5 {
                    y5 = y5 * jt * (self.pt5 * r);
                }
            }
            let term = self.c4 * y4 + self.c5 * y5;
            e -= term;
            let mag = term.norm();
            if mag < 1e-17 {
                return Some(e);
            }
            if mag > prev_mag {
                // Asymptotic regime: the best truncation is the smallest term.
                return if prev_mag < 1e-12 { Some(e) } else { None };
            }
            prev_mag = mag;
        }
        if prev_mag < 1e-12 {
            Some(e)
        } else {
            None
        }
    }

    /// Mean of 1 - phi under Gamma(k, 1) by direct quadrature over the
    /// density band. Unconditional (no window), valid for any t.
    fn e_k_direct(&self, t: f64, k: usize) -> Complex64 {
        let kf = k as f64;
        let half = 9.0 * kf.sqrt() + 14.0;
        let lo = (kf - half).max(1e-9);
        let hi = kf + half;
        let (xs, ws) = gauss_legendre(8);
        let lgk = self.lgam[k];
        let mut acc = Complex64::new(0.0, 0.0);
        let mut a = lo;
        while a < hi {
            let mut h = (0.35 * a).max(0.12).min(1.5 * a.sqrt());
            if a < self.v_d && a + h > self.v_d {
                h = self.v_d - a;
            }
            let b = (a + h).min(hi);
            let mid = 0.5 * (a + b);
            let hw = 0.5 * (b - a);
            for (&x, &gw) in xs.iter().zip(ws) {
                let v = mid + hw * x;
                let lf = (kf - 1.0) * v.ln() - v - lgk;
                if lf > LN_F_CUT {
                    let mut one_m_phi = Complex64::new(0.0, 0.0);
                    if self.use4 {
                        one_m_phi += self.c4 * (Complex64::new(1.0, 0.0) - q_of(t * self.x_factor4(v)));
                    }
                    if self.use5 {
                        one_m_phi += self.c5 * (Complex64::new(1.0, 0.0) - q_of(t * self.x_factor5(v)));
                    }
                    acc += (hw * gw * lf.exp()) * one_m_phi;
                }
            }
            a = b;
        }
        acc
    }

    /// Closed-form remainder of the log-product beyond index kb, with an
    /// error estimate. Exact first-order moment sums, leading second-order
    /// correction, cubic-order bound.
    fn far_tail(&self, t: f64, kb: usize) -> (Complex64, f64) {
        let s = self.s_exp;
        let kbf = kb as f64;
        let jt = Complex64::new(0.0, t);
        let mut tail = Complex64::new(0.0, 0.0);
        let mut last_mag = 0.0;
        let mut prev_ln4 = self.lgam[kb];
        let mut prev_ln5 = self.lgam[kb];
        let mut z4 = Complex64::new(1.0, 0.0);
        let mut z5 = Complex64::new(1.0, 0.0);
        let mut prev_term = f64::INFINITY;
        for m in 1..=M_MAX {
            let arg = kbf + 1.0 - m as f64 * s;
            if arg < 1.5 {
                break;
            }
            let ln_g = ln_gamma(arg);
            if self.use4 {
                z4 = z4 * jt * self.pt4 * (ln_g - prev_ln4).exp();
                prev_ln4 = ln_g;
            }
            if self.use5 {
                z5 = z5 * jt * self.pt5 * (ln_g - prev_ln5).exp();
                prev_ln5 = ln_g;
            }
            let term = self.beta * (self.c4 * z4 + self.c5 * z5) / (m as f64 * s - 1.0);
            let mag = term.norm();
            if mag > prev_term {
                last_mag = prev_term.max(mag);
                break;
            }
            tail += term;
            last_mag = mag;
            if mag < 1e-16 {
                last_mag = 0.0;
                break;
            }
            prev_term = mag;
        }
        // Second order in beta: sum over k > kb of (beta e_k)^2 / 2 at leading
        // moment order, via sum k^{-2s} ~ kb^{1-2s}/(2s-1) + kb^{-2s}/2.
        let g1 = jt * (self.c4 * self.pt4 + self.c5 * self.pt5);
        let sum2 = kbf.powf(1.0 - 2.0 * s) / (2.0 * s - 1.0) + 0.5 * kbf.powf(-2.0 * s);
        let j2 = -0.5 * self.beta * self.beta * g1 * g1 * sum2;
        let xb = (t.abs() * self.ptmax * kbf.powf(-s)).min(1.0);
        let b2 = self.beta * self.beta;
        let err = b2 * xb * xb * (4.0 * kbf * xb / (3.0 * s - 1.0) + s + 2.0) + last_mag;
        (tail + j2, err)
    }

    /// Log of the product of D_k over all k > k_from, unconditional on the
    /// window (the density mass of these indices below any admissible u is
    /// negligible by construction of k_from). Returns the best estimate and
    /// its absolute error bound; the caller weighs the bound against the CF
    /// magnitude it multiplies.
    fn far_ln(&self, t: f64, k_from: usize) -> (Complex64, f64) {
        // err ~ beta^2 (s+2) (t ptmax)^2 kb^(-2s) solved for kb at FAR_TOL.
        let s = self.s_exp;
        let tp = t.abs() * self.ptmax;
        let kb0 = (1.15
            * (self.beta * self.beta * (s + 2.0) * tp * tp / FAR_TOL).powf(0.5 / s))
        .ceil() as usize;
        let mut kb = kb0.max(800).max(k_from).min(self.k_cap);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut done = k_from;
        loop {
            for k in done + 1..=kb {
                let e_k = match self.e_k_series(t, k) {
                    Some(e) => e,
                    None => self.e_k_direct(t, k),
                };
                let w = self.beta * e_k;
                let ln_term = if w.norm() < 1e-4 {
                    -(w + w * w * (0.5 + w / 3.0))
                } else {
                    (Complex64::new(1.0, 0.0) - w).ln()
                };
                acc += ln_term;
            }
            done = kb;
            let (tail, err) = self.far_tail(t, kb);
            if err <= FAR_TOL || kb == self.k_cap {
                return (acc + tail, err);
            }
            kb = (2 * kb).min(self.k_cap);
        }
    }

    /// Rejects a CF value whose far-product error bound is material at the
    /// value's own magnitude.
    fn check_far_budget(op: &'static str, phi: Complex64, ferr: f64) -> Result<Complex64> {
        let abs_err = phi.norm() * ferr;
        if ferr > FAR_TOL && abs_err > FAR_ABS_CF {
            return Err(Error::AccuracyNotReached {
                op,
                achieved: abs_err,
                wanted: FAR_ABS_CF,
            });
        }
        Ok(phi)
    }

    /// Weighted sums over the serving index: sum f_s(u) / D_s and, when
    /// `also_retention` is set, sum f_s(u) / a_s with a_s = D_s at t = 0.
    fn serving_sums(
        &self,
        node: &NodeTables,
        dks: &[Complex64],
        also_retention: bool,
    ) -> (Complex64, f64, bool) {
        let s_hi = self.s_max.min(node.k_build);
        let ln_u = node.u.max(1e-300).ln();
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0;
        let mut tiny = false;
        for s in 1..=s_hi {
            let lf = (s as f64 - 1.0) * ln_u - node.u - self.lgam[s];
            if lf < -43.0 {
                if (s as f64) > node.u {
                    break;
                }
                continue;
            }
            let f = lf.exp();
            let d = dks[s];
            if d.norm_sqr() < 1e-240 {
                tiny = true;
                break;
            }
            num += f / d;
            if also_retention {
                let a = 1.0 - self.beta + self.beta * node.q_up[s];
                den += f / a;
            }
        }
        (num, den, tiny)
    }

    /// Leave-one-out fallback for the rare case of a vanishing D_s: computes
    /// sum f_s(u) prod_{k != s} D_k directly with prefix and suffix products.
    fn serving_sum_loo(&self, node: &NodeTables, dks: &[Complex64]) -> Complex64 {
        let kb = node.k_build;
        let mut prefix = vec![Complex64::new(1.0, 0.0); kb + 2];
        for k in 1..=kb {
            prefix[k + 1] = prefix[k] * dks[k];
        }
        let mut suffix = vec![Complex64::new(1.0, 0.0); kb + 2];
        for k in (1..=kb).rev() {
            suffix[k] = suffix[k + 1] * dks[k];
        }
        let s_hi = self.s_max.min(kb);
        let ln_u = node.u.max(1e-300).ln();
        let mut out = Complex64::new(0.0, 0.0);
        for s in 1..=s_hi {
            let lf = (s as f64 - 1.0) * ln_u - node.u - self.lgam[s];
            if lf < -43.0 {
                if (s as f64) > node.u {
                    break;
                }
                continue;
            }
            out += lf.exp() * prefix[s] * suffix[s + 1];
        }
        out
    }

    fn serving_factor(&self, t: f64, u: f64) -> Complex64 {
        match self.serving {
            ServingMix::FourG => q_of(t * self.x_factor4(u)),
            ServingMix::FiveG => q_of(t * self.x_factor5(u)),
            ServingMix::EnDc { p } => {
                let x4 = if u < self.v_d {
                    self.pg4
                } else {
                    self.pt4 * u.powf(-self.s_exp)
                };
                // The 4G anchor weight in the joint kernel can differ from 1,
                // so the serving 4G factor is rebuilt from the raw power.
                q_of(t * x4) * ((1.0 - p) + p * q_of(t * self.x_factor5(u)))
            }
        }
    }

    /// Full exposure CF: beta sum_s int f_s(u) phi_serving prod_{k != s} D_k du.
    pub(crate) fn exposure_cf(&self, grid: &BgppServingGrid, t: f64) -> Result<Complex64> {
        if !(t.is_finite() && t != 0.0) {
            return Err(Error::Domain {
                op: "BgppCf::exposure_cf",
                msg: format!("t must be finite and nonzero, got {t}"),
            });
        }
        let (far_log, ferr) = self.far_ln(t, grid.k_build);
        let far = far_log.exp();
        let mut sum = Complex64::new(0.0, 0.0);
        for node in &grid.nodes {
            if node.mass_bound < 1e-11 {
                continue;
            }
            let dks = self.explicit_dks(node, t);
            let mut tprod = Complex64::new(1.0, 0.0);
            for k in 1..=node.k_build {
                tprod *= dks[k];
            }
            if tprod.re.is_nan() || tprod.im.is_nan() {
                return Err(Error::Domain {
                    op: "BgppCf::exposure_cf",
                    msg: "explicit factor product is NaN".into(),
                });
            }
            let (num, _, tiny) = self.serving_sums(node, &dks, false);
            let contribution = if tiny {
                self.serving_sum_loo(node, &dks)
            } else if tprod.norm_sqr() > 1e-560 {
                tprod * num
            } else {
                continue;
            };
            sum += node.w * self.serving_factor(t, node.u) * contribution;
        }
        Self::check_far_budget("BgppCf::exposure_cf", self.beta * far * sum, ferr)
    }

    /// CF of the interference alone, conditioned on the serving site sitting
    /// at normalised squared distance u. Equals 1 at t -> 0 by construction.
    pub(crate) fn conditional_interference_cf(&self, node: &NodeTables, t: f64) -> Result<Complex64> {
        if !(t.is_finite() && t != 0.0) {
            return Err(Error::Domain {
                op: "BgppCf::conditional_interference_cf",
                msg: format!("t must be finite and nonzero, got {t}"),
            });
        }
        let (far_log, ferr) = self.far_ln(t, node.k_build);
        let far = far_log.exp();
        let dks = self.explicit_dks(node, t);
        let mut ratio = Complex64::new(1.0, 0.0);
        for k in 1..=node.k_build {
            let a = 1.0 - self.beta + self.beta * node.q_up[k];
            ratio *= dks[k] / a;
        }
        let (num, den, tiny) = self.serving_sums(node, &dks, true);
        if tiny {
            // Fall back to the leave-one-out numerator over the retention
            // denominator instead of the factored ratio.
            let mut a_prod = 1.0;
            for k in 1..=node.k_build {
                a_prod *= 1.0 - self.beta + self.beta * node.q_up[k];
            }
            let num_loo = self.serving_sum_loo(node, &dks);
            return Self::check_far_budget(
                "BgppCf::conditional_interference_cf",
                far * num_loo / (a_prod * den),
                ferr,
            );
        }
        Self::check_far_budget(
            "BgppCf::conditional_interference_cf",
            far * ratio * num / den,
            ferr,
        )
    }
}
