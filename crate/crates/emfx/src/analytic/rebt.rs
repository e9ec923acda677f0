//! Distributions of the exposure-to-throughput ratio and the conditional
//! laws they are assembled from.
//!
//! The single-tier curve nests three stages: a quadrature over the serving
//! distance, an exponential-weight quadrature over the serving fade, and a
//! lookup of the conditional interference CDF at the balance root found by
//! `solve_g_root`. The dual-connectivity curve replaces the outer stages
//! with conditional Monte Carlo: serving geometry, fades and the 4G
//! interference are realized by simulating the field anchored at the
//! serving site, while the 5G interference stays analytic through the same
//! kind of table lookup.

use std::collections::HashMap;
use std::f64::consts::{LN_2, PI};
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};

use crate::analytic::cf::{exposure_scale_hint, ppp_interference_exponent, BgppCf, SiteKernel};
use crate::analytic::{DistributionCurve, Provenance, ScenarioSpec, TruncationSpec};
use crate::error::{Error, Result};
use crate::propagation::path_loss;
use crate::spatial::{
    gamma_upper_quantile, sample_ppp_interferer_sq_dists, BgppServing, Model, NetworkParams, Rat,
    Window,
};
use crate::specfun::gamma::{ln_gamma_pdf, reg_gamma_upper_scan};
use crate::specfun::quad::{adaptive_gk, gauss_laguerre, gauss_legendre};
use crate::specfun::{CfHandle, CfTable};

/// Radius of the interference field realized around the serving site by the
/// conditional Monte Carlo integrator. Matches the default simulation
/// window so both estimators truncate the far field identically.
const ENDC_FIELD_RADIUS_M: f64 = 4500.0;

/// Candidate index covering positions up to `v`: candidates beyond this
/// index land past `v` except with negligible probability.
fn candidate_cover(v: f64) -> usize {
    (v + 7.0 * v.max(0.0).sqrt() + 12.0).ceil().max(8.0) as usize
}

// ---------------------------------------------------------------------------
// Balance root
// ---------------------------------------------------------------------------

/// g(i) = extra + s + i - yw log2(1 + s/i): received power plus interference
/// against the rate the link would deliver at interference level i.
/// Strictly increasing in i, from -inf at 0+ to +inf.
fn g_value(extra: f64, s: f64, yw: f64, i: f64) -> f64 {
    extra + s + i - yw * (s / i).ln_1p() / LN_2
}

/// Unique positive root of `g_value(extra, s, yw, .)`. Returns 0 when the
/// root underflows f64, which happens when the log term must balance a
/// large offset at a small rate-bandwidth product.
fn g_root(extra: f64, s: f64, yw: f64) -> f64 {
    // Where the log term dominates, i ~ s * 2^{-(extra + s)/yw}.
    let ln_est = s.ln() - (extra + s) * LN_2 / yw;
    if ln_est < -744.0 {
        return 0.0;
    }
    let est = ln_est.min(709.0).exp().max(1e-300);
    let mut lo = est;
    let mut steps = 0;
    while g_value(extra, s, yw, lo) >= 0.0 {
        lo /= 16.0;
        steps += 1;
        if lo < 1e-320 || steps > 600 {
            return 0.0;
        }
    }
    let mut hi = est.max(lo * 16.0);
    steps = 0;
    while g_value(extra, s, yw, hi) < 0.0 {
        hi *= 16.0;
        steps += 1;
        if !hi.is_finite() || steps > 600 {
            return f64::MAX;
        }
    }
    let mut x = if est > lo && est < hi { est } else { 0.5 * (lo + hi) };
    for _ in 0..500 {
        let lterm = yw * (s / x).ln_1p() / LN_2;
        let g = extra + s + x - lterm;
        // Stop at the cancellation floor of the terms actually summed.
        let mag = extra.abs() + s + x + lterm.abs();
        if g.abs() <= 4.0 * f64::EPSILON * mag || hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        if g > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dg = 1.0 + yw * s / (LN_2 * x * (x + s));
        let mut next = x - g / dg;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        x = next;
    }
    x
}

/// Interference level at which a link with conditional signal power `s` and
/// bandwidth `w` delivers exactly the rate that pins the
/// exposure-to-throughput ratio at `y`: the unique positive root of
/// s + I - y w log2(1 + s/I) in I.
pub fn solve_g_root(s: f64, y: f64, w: f64) -> Result<f64> {
    let yw = y * w;
    if !(s > 0.0 && s.is_finite() && y > 0.0 && w > 0.0 && yw.is_finite()) {
        return Err(Error::Domain {
            op: "solve_g_root",
            msg: format!("needs finite positive s, y, w; got s={s}, y={y}, w={w}"),
        });
    }
    Ok(g_root(0.0, s, yw))
}

// ---------------------------------------------------------------------------
// Conditional law of the nearest co-located site
// ---------------------------------------------------------------------------

/// Law of the nearest co-located site beyond a non-co-located serving site,
/// in the serving variable native to each model: radius in meters for the
/// PPP variant, normalized squared distance for the beta-GPP variant.
pub enum CondServingLaw {
    Ppp(CondServingPpp),
    Bgpp(CondServingBgpp),
}

/// Co-located sites of a PPP deployment are an independent thinning, so
/// beyond the serving radius their nearest point has a closed-form law.
pub struct CondServingPpp {
    /// pi * p * lambda4, the intensity constant of the thinned process.
    pub rate: f64,
    pub r4: f64,
}

impl CondServingPpp {
    pub fn pdf(&self, r5: f64) -> f64 {
        if r5 <= self.r4 || !r5.is_finite() {
            return 0.0;
        }
        2.0 * self.rate * r5 * (-self.rate * (r5 * r5 - self.r4 * self.r4)).exp()
    }

    pub fn cdf(&self, r5: f64) -> f64 {
        if r5 <= self.r4 {
            return 0.0;
        }
        -(-self.rate * (r5 * r5 - self.r4 * self.r4)).exp_m1()
    }

    pub fn median(&self) -> f64 {
        (self.r4 * self.r4 + 2f64.ln() / self.rate).sqrt()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let e: f64 = rng.sample(Exp1);
        (self.r4 * self.r4 + e / self.rate).sqrt()
    }
}

/// Beta-GPP variant. Candidates are coupled by the conditioning that none
/// of them is retained below the serving point, so the law mixes over the
/// serving index and multiplies per-candidate probabilities of holding no
/// earlier co-located point.
pub struct CondServingBgpp {
    beta: f64,
    p: f64,
    u: f64,
    k_max: usize,
    v_hi: f64,
    /// Q_k(u) per candidate.
    qu: Vec<f64>,
    /// a_k(u) = 1 - beta + beta Q_k(u) per candidate.
    au: Vec<f64>,
    /// Serving-index posterior as (index, weight), weights summing to 1.
    s_weights: Vec<(usize, f64)>,
    mass: f64,
}

impl CondServingBgpp {
    fn new(params: &NetworkParams, trunc: &TruncationSpec, u: f64) -> Self {
        let beta = params.beta4;
        let p = params.p_coloc;
        let v_hi = u + 36.0 / (beta * p);
        let k_max = trunc.k_max_products.max(candidate_cover(v_hi)).min(20_000);
        let qu = reg_gamma_upper_scan(k_max, u);
        let au: Vec<f64> = qu.iter().map(|&q| 1.0 - beta + beta * q).collect();
        let mut s_weights = Vec::new();
        if u > 0.0 {
            for (km1, &a) in au.iter().enumerate() {
                let lf = ln_gamma_pdf((km1 + 1) as u32, u);
                if lf > -50.0 {
                    s_weights.push((km1 + 1, lf.exp() / a.max(1e-300)));
                }
            }
        }
        if s_weights.is_empty() {
            s_weights.push((1, 1.0));
        }
        let total: f64 = s_weights.iter().map(|w| w.1).sum();
        for w in &mut s_weights {
            w.1 /= total;
        }
        let mut law =
            CondServingBgpp { beta, p, u, k_max, v_hi, qu, au, s_weights, mass: 0.0 };
        law.mass = law.limit_mass();
        law
    }

    /// ln(A_k(u, v) / a_k(u)) per candidate, with A built from Q_k(v).
    fn ln_ratios(&self, scan_v: &[f64]) -> Vec<f64> {
        self.au
            .iter()
            .zip(self.qu.iter())
            .zip(scan_v.iter())
            .map(|((&a, &q_u), &q_v)| {
                let av = 1.0 - self.beta + self.beta * ((1.0 - self.p) * q_u + self.p * q_v);
                (av.max(1e-300) / a.max(1e-300)).ln()
            })
            .collect()
    }

    fn mix_cdf(&self, ln_ratios: &[f64]) -> f64 {
        let ln_all: f64 = ln_ratios.iter().sum();
        self.s_weights
            .iter()
            .map(|&(s, w)| w * (1.0 - (ln_all - ln_ratios[s - 1]).exp()))
            .sum()
    }

    /// Total mass of the law: the chance that a co-located candidate exists
    /// beyond u at all. Uses Q_k(v) -> 0 pointwise as v -> inf.
    fn limit_mass(&self) -> f64 {
        let zeros = vec![0.0; self.k_max];
        self.mix_cdf(&self.ln_ratios(&zeros))
    }

    pub fn cdf(&self, v: f64) -> f64 {
        if v <= self.u {
            return 0.0;
        }
        if !v.is_finite() {
            return self.mass;
        }
        self.mix_cdf(&self.ln_ratios(&reg_gamma_upper_scan(self.k_max, v)))
    }

    pub fn pdf(&self, v: f64) -> f64 {
        if v <= self.u || !v.is_finite() {
            return 0.0;
        }
        let scan_v = reg_gamma_upper_scan(self.k_max, v);
        let lr = self.ln_ratios(&scan_v);
        let ln_all: f64 = lr.iter().sum();
        let bp = self.beta * self.p;
        let mut dens = vec![0.0; self.k_max];
        let mut dens_all = 0.0;
        for n in 1..=self.k_max {
            let lf = ln_gamma_pdf(n as u32, v);
            if lf > -60.0 {
                let av = 1.0
                    - self.beta
                    + self.beta * ((1.0 - self.p) * self.qu[n - 1] + self.p * scan_v[n - 1]);
                let d = bp * lf.exp() / av.max(1e-300);
                dens[n - 1] = d;
                dens_all += d;
            }
        }
        self.s_weights
            .iter()
            .map(|&(s, w)| w * (dens_all - dens[s - 1]) * (ln_all - lr[s - 1]).exp())
            .sum()
    }

    pub fn median(&self) -> f64 {
        let target = 0.5 * self.mass;
        let (mut a, mut b) = (self.u, self.v_hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if self.cdf(m) < target {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    /// Draws from the raw law; None when the realized candidate set holds
    /// no co-located point beyond u.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Option<f64> {
        let mut cum: f64 = rng.gen();
        let mut serving = self.s_weights.last().expect("weights nonempty").0;
        for &(s, w) in &self.s_weights {
            cum -= w;
            if cum <= 0.0 {
                serving = s;
                break;
            }
        }
        bgpp_nearest_conditioned_coloc(&self.qu, serving, self.beta, self.p, self.u, rng)
    }
}

impl CondServingLaw {
    pub fn pdf(&self, theta5: f64) -> f64 {
        match self {
            CondServingLaw::Ppp(l) => l.pdf(theta5),
            CondServingLaw::Bgpp(l) => l.pdf(theta5),
        }
    }

    pub fn cdf(&self, theta5: f64) -> f64 {
        match self {
            CondServingLaw::Ppp(l) => l.cdf(theta5),
            CondServingLaw::Bgpp(l) => l.cdf(theta5),
        }
    }

    /// Mass the raw density integrates to; 1 exactly for the PPP variant,
    /// slightly below 1 for a truncated candidate set.
    pub fn raw_mass(&self) -> f64 {
        match self {
            CondServingLaw::Ppp(_) => 1.0,
            CondServingLaw::Bgpp(l) => l.mass,
        }
    }

    pub fn normalized_pdf(&self, theta5: f64) -> f64 {
        self.pdf(theta5) / self.raw_mass()
    }

    /// Median of the normalized law.
    pub fn median(&self) -> f64 {
        match self {
            CondServingLaw::Ppp(l) => l.median(),
            CondServingLaw::Bgpp(l) => l.median(),
        }
    }

    /// Draws from the raw law; None only for a truncated candidate set with
    /// no co-located point left.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Option<f64> {
        match self {
            CondServingLaw::Ppp(l) => Some(l.sample(rng)),
            CondServingLaw::Bgpp(l) => l.sample(rng),
        }
    }

    /// Interval carrying all but a negligible sliver of the mass.
    pub fn support(&self) -> (f64, f64) {
        match self {
            CondServingLaw::Ppp(l) => {
                (l.r4, (l.r4 * l.r4 + 40.0 / l.rate).sqrt())
            }
            CondServingLaw::Bgpp(l) => (l.u, l.v_hi),
        }
    }
}

/// Builds the law of the nearest co-located site beyond the serving
/// variable `theta4` (meters of radius for a PPP, normalized squared
/// distance for a beta-GPP).
pub fn cond_serving_law(
    model: Model,
    theta4: f64,
    params: &NetworkParams,
    trunc: &TruncationSpec,
) -> Result<CondServingLaw> {
    params.validate()?;
    trunc.validate()?;
    if !(theta4 >= 0.0 && theta4.is_finite()) {
        return Err(Error::Domain {
            op: "cond_serving_law",
            msg: format!("serving variable must be finite and nonnegative, got {theta4}"),
        });
    }
    if !(params.p_coloc > 0.0) {
        return Err(Error::Domain {
            op: "cond_serving_law",
            msg: "no co-located tier exists when p_coloc = 0".into(),
        });
    }
    match model {
        Model::Ppp => Ok(CondServingLaw::Ppp(CondServingPpp {
            rate: PI * params.p_coloc * params.lambda4,
            r4: theta4,
        })),
        Model::Bgpp => {
            let law = CondServingBgpp::new(params, trunc, theta4);
            // A healthy truncation leaves essentially unit mass; a visible
            // deficit means the candidate set was cut inside the window.
            if (law.mass - 1.0).abs() > 1e-3 {
                return Err(Error::TruncationInsufficient {
                    op: "cond_serving_law",
                    msg: format!("conditional law mass {} deviates from 1", law.mass),
                });
            }
            Ok(CondServingLaw::Bgpp(law))
        }
    }
}

// ---------------------------------------------------------------------------
// Conditional CDF of the co-located-tier interference
// ---------------------------------------------------------------------------

/// CDF tables of the co-located-tier interference conditioned on the
/// serving variable, on a log grid of conditioning points. Lookups blend
/// the two bracketing tables linearly in log-theta.
struct CondInterfFamily {
    thetas: Vec<f64>,
    tables: Vec<CfTable>,
    /// Point mass at zero; set when no interferer can align at all.
    degenerate: bool,
}

impl CondInterfFamily {
    fn cdf_at(&self, x: f64, theta: f64) -> f64 {
        if self.degenerate {
            return if x >= 0.0 { 1.0 } else { 0.0 };
        }
        if x <= 0.0 {
            return 0.0;
        }
        let t = theta.clamp(self.thetas[0], *self.thetas.last().expect("grid nonempty"));
        let hi = self
            .thetas
            .partition_point(|&g| g < t)
            .clamp(1, self.thetas.len() - 1);
        let lo = hi - 1;
        let (tl, th) = (self.thetas[lo], self.thetas[hi]);
        let w = ((t / tl).ln() / (th / tl).ln()).clamp(0.0, 1.0);
        let fl = self.tables[lo].cdf(x).clamp(0.0, 1.0);
        let fh = self.tables[hi].cdf(x).clamp(0.0, 1.0);
        (1.0 - w) * fl + w * fh
    }
}

/// One conditional interference table for a PPP deployment, with the
/// conditioning point given as a squared distance in meters.
fn ppp_i5_table(pars: &NetworkParams, theta: f64) -> Result<CfTable> {
    let pe = pars.p_coloc * pars.eta;
    let c = pars.c4();
    let s = 0.5 * pars.alpha;
    let d2 = pars.d_m * pars.d_m;
    let p5 = pars.p5_eff;
    let (alpha, lambda) = (pars.alpha, pars.lambda4);
    let mean = (pe * c * p5 * ((d2 - theta).max(0.0) + theta.max(d2).powf(1.0 - s) / (s - 1.0)))
        .max(1e-300);
    let handle = CfHandle::new(mean, move |t| {
        match ppp_interference_exponent(t, p5, lambda, theta, alpha, d2) {
            Ok(x) => (pe * x).exp(),
            Err(_) => Complex64::new(f64::NAN, f64::NAN),
        }
    });
    CfTable::build(&handle)
}

/// Same for a beta-GPP deployment, conditioned at the normalized squared
/// distance `u`.
fn bgpp_i5_table(engine: &Arc<BgppCf>, pars: &NetworkParams, u: f64) -> Result<CfTable> {
    let pe = pars.p_coloc * pars.eta;
    let beta = pars.beta4;
    let c = pars.c4();
    let s = 0.5 * pars.alpha;
    let v_d = c * pars.d_m * pars.d_m / beta;
    let tail = (c / beta).powf(s) * u.max(v_d).powf(1.0 - s) / (s - 1.0);
    let mean = (beta * pe * pars.p5_eff * ((v_d - u).max(0.0) + tail)).max(1e-300);
    let node = Arc::new(engine.standalone_node(u));
    let eng = Arc::clone(engine);
    let handle = CfHandle::new(mean, move |t| {
        eng.conditional_interference_cf(&node, t)
            .unwrap_or(Complex64::new(f64::NAN, f64::NAN))
    });
    CfTable::build(&handle)
}

fn theta_grid(lo: f64, hi: f64, n: usize, insert: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect();
    if insert > lo && insert < hi {
        g.push(insert);
    }
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a / *b - 1.0).abs() < 1e-12);
    g
}

fn build_i5_family(scenario: &ScenarioSpec) -> Result<CondInterfFamily> {
    let pars = &scenario.params;
    let pe = pars.p_coloc * pars.eta;
    if pe < 1e-12 {
        return Ok(CondInterfFamily { thetas: Vec::new(), tables: Vec::new(), degenerate: true });
    }
    let d2 = pars.d_m * pars.d_m;
    let (thetas, tables) = match scenario.model {
        Model::Ppp => {
            let c = pars.c4();
            let grid = theta_grid(1e-3 / c, (20.0 + 30.0 / pars.p_coloc) / c, 40, d2);
            let tables = grid
                .iter()
                .map(|&th| ppp_i5_table(pars, th))
                .collect::<Result<Vec<_>>>()?;
            (grid, tables)
        }
        Model::Bgpp => {
            let engine =
                Arc::new(BgppCf::new(SiteKernel::FiveGWithinEnDc, pars, &scenario.truncation)?);
            let beta = pars.beta4;
            let v_d = pars.c4() * d2 / beta;
            let hi = 20.0 / beta + 30.0 / (beta * pars.p_coloc) + 16.0;
            let grid = theta_grid(1e-3, hi, 40, v_d);
            let tables = grid
                .iter()
                .map(|&u| bgpp_i5_table(&engine, pars, u))
                .collect::<Result<Vec<_>>>()?;
            (grid, tables)
        }
    };
    Ok(CondInterfFamily { thetas, tables, degenerate: false })
}

/// Cache key covering everything the conditional tables depend on.
#[derive(PartialEq, Eq, Hash, Clone)]
struct TableKey(Vec<u64>);

fn table_key(scenario: &ScenarioSpec, tag: u64) -> TableKey {
    let p = &scenario.params;
    let mut bits: Vec<u64> = [
        p.lambda4, p.lambda5, p.beta4, p.beta5, p.p4_eff, p.p5_eff, p.w4, p.w5, p.d_m, p.alpha,
        p.eta, p.p_coloc,
    ]
    .iter()
    .map(|v| v.to_bits())
    .collect();
    bits.push(tag);
    bits.push(match scenario.model {
        Model::Ppp => 0,
        Model::Bgpp => 1,
    });
    bits.push(scenario.truncation.k_max_products as u64);
    bits.push(scenario.truncation.s_max as u64);
    TableKey(bits)
}

/// The family is a pure function of the deployment geometry, so identical
/// scenarios share one build across calls.
fn i5_family(scenario: &ScenarioSpec) -> Result<Arc<CondInterfFamily>> {
    static CACHE: Mutex<Option<HashMap<TableKey, Arc<CondInterfFamily>>>> = Mutex::new(None);
    let key = table_key(scenario, 0);
    {
        let guard = CACHE.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(fam) = guard.as_ref().and_then(|m| m.get(&key)) {
            return Ok(Arc::clone(fam));
        }
    }
    let built = Arc::new(build_i5_family(scenario)?);
    let mut guard = CACHE.lock().unwrap_or_else(|e| e.into_inner());
    guard.get_or_insert_with(HashMap::new).insert(key, Arc::clone(&built));
    Ok(built)
}

/// Whether the interference CDF is taken at the serving site itself or
/// averaged over the law of the nearest co-located site beyond it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoMode {
    Colocated,
    NonColocated,
}

/// CDF of the co-located-tier (5G) interference at level `x` watts, given
/// the anchor-tier serving variable `theta`: squared meters for the PPP
/// model, normalized squared distance for the beta-GPP model.
pub fn cdf_interference_5g(
    x: f64,
    theta: f64,
    mode: CoMode,
    scenario: &ScenarioSpec,
) -> Result<f64> {
    scenario.validate()?;
    let pars = &scenario.params;
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::Domain {
            op: "cdf_interference_5g",
            msg: format!("serving variable must be finite and nonnegative, got {theta}"),
        });
    }
    let pe = pars.p_coloc * pars.eta;
    if pe < 1e-12 {
        // No interferer both co-locates and aligns: point mass at zero.
        return Ok(if x >= 0.0 { 1.0 } else { 0.0 });
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    match mode {
        CoMode::Colocated => {
            let table = match scenario.model {
                Model::Ppp => ppp_i5_table(pars, theta.max(1e-9))?,
                Model::Bgpp => {
                    let engine = Arc::new(BgppCf::new(
                        SiteKernel::FiveGWithinEnDc,
                        pars,
                        &scenario.truncation,
                    )?);
                    bgpp_i5_table(&engine, pars, theta.max(1e-9))?
                }
            };
            Ok(table.cdf(x).clamp(0.0, 1.0))
        }
        CoMode::NonColocated => {
            let family = i5_family(scenario)?;
            let law = match scenario.model {
                // The family is indexed by squared distance while the PPP
                // law runs over the radius.
                Model::Ppp => cond_serving_law(Model::Ppp, theta.sqrt(), pars, &scenario.truncation)?,
                Model::Bgpp => cond_serving_law(Model::Bgpp, theta, pars, &scenario.truncation)?,
            };
            let (a, b) = law.support();
            let f = |t5: f64| {
                let fam_theta = match scenario.model {
                    Model::Ppp => t5 * t5,
                    Model::Bgpp => t5,
                };
                law.pdf(t5) * family.cdf_at(x, fam_theta)
            };
            let (val, _) = adaptive_gk(&f, a, b, 1e-9, 1e-7, 300);
            Ok((val / law.raw_mass()).clamp(0.0, 1.0))
        }
    }
}

// ---------------------------------------------------------------------------
// Single-tier curve
// ---------------------------------------------------------------------------

struct ServingNode {
    theta: f64,
    weight: f64,
    table: CfTable,
}

/// Frozen quadrature state for one single-tier scenario.
struct SingleKit {
    nodes: Vec<ServingNode>,
    p_eff: f64,
    w_hz: f64,
    alpha: f64,
    d_m: f64,
    /// Conversion from the serving variable to squared meters.
    to_phys: f64,
    norm: f64,
    table_err: f64,
    tail_mass: f64,
}

/// Panel cuts of the serving-distance quadrature, in the scale-free
/// variable w (the exponent of the serving survival function). One cut
/// lands exactly on the path-loss plateau edge: the integrand kinks there,
/// and a panel straddling the kink loses the plateau mass.
fn serving_panel_cuts(w_hi: f64, w_kink: f64) -> Vec<f64> {
    const BOUNDS: [f64; 12] =
        [0.0, 0.4, 0.9, 1.6, 2.5, 3.6, 5.0, 6.8, 9.0, 11.8, 15.2, 20.0];
    let mut cuts: Vec<f64> = BOUNDS.iter().copied().filter(|&w| w < w_hi).collect();
    cuts.push(w_hi);
    if w_kink > 0.0 && w_kink < w_hi && cuts.iter().all(|&c| (c - w_kink).abs() > 1e-9) {
        cuts.push(w_kink);
    }
    cuts.sort_by(f64::total_cmp);
    cuts
}

fn build_single_kit(scenario: &ScenarioSpec) -> Result<SingleKit> {
    let pars = &scenario.params;
    let (p_eff, w_hz, lambda, beta) = match scenario.rat {
        Rat::FourG => (pars.p4_eff, pars.w4, pars.lambda4, pars.beta4),
        Rat::FiveG => (pars.p5_eff, pars.w5, pars.lambda5, pars.beta5),
        Rat::EnDc => unreachable!("gated by rebt_cdf_single"),
    };
    // Alignment thins 5G interferers; every non-serving 4G site interferes.
    let pe = match scenario.rat {
        Rat::FiveG => pars.eta,
        _ => 1.0,
    };
    let c = PI * lambda;
    let d2 = pars.d_m * pars.d_m;
    let s = 0.5 * pars.alpha;
    let (glx, glw) = gauss_legendre(4);
    let mut nodes = Vec::new();
    let mut table_err = 0.0f64;
    match scenario.model {
        Model::Ppp => {
            let cuts = serving_panel_cuts(20.0, c * d2);
            for pair in cuts.windows(2) {
                let (a, b) = (pair[0] / c, pair[1] / c);
                let mid = 0.5 * (a + b);
                let half = 0.5 * (b - a);
                for (&xj, &wj) in glx.iter().zip(glw.iter()) {
                    let theta = mid + half * xj;
                    let weight = wj * half * c * (-c * theta).exp();
                    let mean = (pe
                        * p_eff
                        * c
                        * ((d2 - theta).max(0.0) + theta.max(d2).powf(1.0 - s) / (s - 1.0)))
                    .max(1e-300);
                    let (l, al, dd) = (lambda, pars.alpha, d2);
                    let handle = CfHandle::new(mean, move |t| {
                        match ppp_interference_exponent(t, p_eff, l, theta, al, dd) {
                            Ok(x) => (pe * x).exp(),
                            Err(_) => Complex64::new(f64::NAN, f64::NAN),
                        }
                    });
                    let table = CfTable::build(&handle)?;
                    table_err = table_err.max(table.truncation_residual);
                    nodes.push(ServingNode { theta, weight, table });
                }
            }
        }
        Model::Bgpp => {
            let kernel = match scenario.rat {
                Rat::FourG => SiteKernel::FourG,
                _ => SiteKernel::FiveG,
            };
            let engine = Arc::new(BgppCf::new(kernel, pars, &scenario.truncation)?);
            let u_hi = engine.serving_u_hi();
            let serving = BgppServing { beta, k_max: candidate_cover(u_hi).max(60) };
            let v_d = c * d2 / beta;
            let cuts = serving_panel_cuts(beta * u_hi, beta * v_d);
            for pair in cuts.windows(2) {
                let (a, b) = (pair[0] / beta, pair[1] / beta);
                let mid = 0.5 * (a + b);
                let half = 0.5 * (b - a);
                for (&xj, &wj) in glx.iter().zip(glw.iter()) {
                    let u = mid + half * xj;
                    let weight = wj * half * serving.pdf(u);
                    let tail = (c / beta).powf(s) * u.max(v_d).powf(1.0 - s) / (s - 1.0);
                    let mean = (beta * pe * p_eff * ((v_d - u).max(0.0) + tail)).max(1e-300);
                    let node = Arc::new(engine.standalone_node(u));
                    let eng = Arc::clone(&engine);
                    let handle = CfHandle::new(mean, move |t| {
                        eng.conditional_interference_cf(&node, t)
                            .unwrap_or(Complex64::new(f64::NAN, f64::NAN))
                    });
                    let table = CfTable::build(&handle)?;
                    table_err = table_err.max(table.truncation_residual);
                    nodes.push(ServingNode { theta: u, weight, table });
                }
            }
        }
    }
    let norm: f64 = nodes.iter().map(|n| n.weight).sum();
    if !(0.99..=1.0001).contains(&norm) {
        return Err(Error::TruncationInsufficient {
            op: "rebt_cdf_single",
            msg: format!("serving quadrature mass {norm} is too far from 1"),
        });
    }
    let to_phys = match scenario.model {
        Model::Ppp => 1.0,
        Model::Bgpp => beta / c,
    };
    Ok(SingleKit {
        nodes,
        p_eff,
        w_hz,
        alpha: pars.alpha,
        d_m: pars.d_m,
        to_phys,
        norm,
        table_err,
        tail_mass: (1.0 - norm).abs(),
    })
}

/// Cached variant of the kit build; the tables depend only on the scenario
/// geometry and truncation.
fn single_kit(scenario: &ScenarioSpec) -> Result<Arc<SingleKit>> {
    static CACHE: Mutex<Option<HashMap<TableKey, Arc<SingleKit>>>> = Mutex::new(None);
    let tag = match scenario.rat {
        Rat::FourG => 1,
        Rat::FiveG => 2,
        Rat::EnDc => 3,
    };
    let key = table_key(scenario, tag);
    {
        let guard = CACHE.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(kit) = guard.as_ref().and_then(|m| m.get(&key)) {
            return Ok(Arc::clone(kit));
        }
    }
    let built = Arc::new(build_single_kit(scenario)?);
    let mut guard = CACHE.lock().unwrap_or_else(|e| e.into_inner());
    guard.get_or_insert_with(HashMap::new).insert(key, Arc::clone(&built));
    Ok(built)
}

impl SingleKit {
    fn cdf_at(&self, y: f64) -> f64 {
        if !(y > 0.0) {
            return 0.0;
        }
        let yw = y * self.w_hz;
        let (hx, hw) = gauss_laguerre(32);
        let mut acc = 0.0;
        for node in &self.nodes {
            let sp = self.p_eff * path_loss(node.theta * self.to_phys, self.alpha, self.d_m);
            let mut fmin = f64::INFINITY;
            let mut fmax = 0.0f64;
            let mut inner = 0.0;
            for (&h, &wq) in hx.iter().zip(hw.iter()) {
                let root = g_root(0.0, sp * h, yw);
                let f = if root > 0.0 { node.table.cdf(root).clamp(0.0, 1.0) } else { 0.0 };
                fmin = fmin.min(f);
                fmax = fmax.max(f);
                inner += wq * f;
            }
            if fmax > 1e-10 && fmin < 1e-3 * fmax {
                // The fixed rule straddles the fade transition; redo the
                // integral adaptively with the weight written out.
                let f = |h: f64| {
                    if h <= 0.0 {
                        return 0.0;
                    }
                    let root = g_root(0.0, sp * h, yw);
                    let v = if root > 0.0 { node.table.cdf(root).clamp(0.0, 1.0) } else { 0.0 };
                    (-h).exp() * v
                };
                inner = adaptive_gk(&f, 0.0, 45.0, 1e-11, 1e-8, 240).0;
            }
            acc += node.weight * inner;
        }
        (acc / self.norm).clamp(0.0, 1.0)
    }
}

/// Analytic curve plus a conservative per-point numerical error bound.
pub struct RebtCurve {
    pub curve: DistributionCurve,
    pub point_err: Vec<f64>,
}

/// CDF of the exposure-to-throughput ratio for a single-tier scenario.
pub fn rebt_cdf_single(y_grid: &[f64], scenario: &ScenarioSpec) -> Result<RebtCurve> {
    scenario.validate()?;
    if matches!(scenario.rat, Rat::EnDc) {
        return Err(Error::Domain {
            op: "rebt_cdf_single",
            msg: "dual connectivity runs through rebt_cdf_endc".into(),
        });
    }
    if y_grid.is_empty() || y_grid.iter().any(|y| !y.is_finite()) {
        return Err(Error::Domain {
            op: "rebt_cdf_single",
            msg: "y grid must be nonempty and finite".into(),
        });
    }
    let kit = single_kit(scenario)?;
    let raw: Vec<f64> = y_grid.iter().map(|&y| kit.cdf_at(y)).collect();
    let curve = DistributionCurve::cdf(y_grid.to_vec(), raw.clone(), Provenance::Analytic)?;
    let point_err = raw
        .iter()
        .zip(curve.values.iter())
        .map(|(r, v)| (r - v).abs() + kit.table_err + kit.tail_mass)
        .collect();
    Ok(RebtCurve { curve, point_err })
}

// ---------------------------------------------------------------------------
// Dual-connectivity curve
// ---------------------------------------------------------------------------

/// Posterior draw of one candidate of the field conditioned on holding no
/// retained point below u: either silent, or radiating at a position beyond
/// u. Exact for any beta in (0, 1].
fn draw_conditioned_candidate<R: Rng>(
    k: usize,
    q_at_u: f64,
    beta: f64,
    u: f64,
    rng: &mut R,
) -> Option<f64> {
    let a = 1.0 - beta + beta * q_at_u;
    if q_at_u < 0.2 {
        // Thin upper tail: decide by the exact radiating probability, then
        // invert the tail of the position law.
        if rng.gen::<f64>() * a < beta * q_at_u {
            let target = (q_at_u * rng.gen::<f64>()).max(1e-300);
            return Some(gamma_upper_quantile(k, target, u));
        }
        return None;
    }
    // Bulk: rejection on (retained, position) pairs keeps the joint law.
    loop {
        if !rng.gen_bool(beta) {
            return None;
        }
        let v = Gamma::new(k as f64, 1.0).expect("shape >= 1").sample(rng);
        if v > u {
            return Some(v);
        }
    }
}

/// Serving draw: the smallest retained candidate position and its index.
fn bgpp_draw_anchor<R: Rng>(beta: f64, rng: &mut R) -> (f64, usize) {
    const K_ANCHOR: usize = 140;
    loop {
        let mut best = f64::INFINITY;
        let mut idx = 0usize;
        for k in 1..=K_ANCHOR {
            if idx != 0 && (k as f64 - 1.0) > best + 10.0 * best.sqrt() + 25.0 {
                break;
            }
            if !rng.gen_bool(beta) {
                continue;
            }
            let v = Gamma::new(k as f64, 1.0).expect("shape >= 1").sample(rng);
            if v < best {
                best = v;
                idx = k;
            }
        }
        if idx != 0 {
            return (best, idx);
        }
    }
}

/// Interference of the anchored 4G field: every non-serving retained
/// candidate radiates with its own fade.
fn bgpp_conditional_i4<R: Rng>(
    qu: &[f64],
    serving: usize,
    beta: f64,
    u: f64,
    pars: &NetworkParams,
    to_phys: f64,
    rng: &mut R,
) -> f64 {
    let mut i4 = 0.0;
    for (km1, &q) in qu.iter().enumerate() {
        let k = km1 + 1;
        if k == serving {
            continue;
        }
        if let Some(v) = draw_conditioned_candidate(k, q, beta, u, rng) {
            let h: f64 = rng.sample(Exp1);
            i4 += pars.p4_eff * path_loss(v * to_phys, pars.alpha, pars.d_m) * h;
        }
    }
    i4
}

/// Nearest co-located point among the non-serving candidates of the
/// anchored field; None when the truncated set holds none.
fn bgpp_nearest_conditioned_coloc<R: Rng>(
    qu: &[f64],
    serving: usize,
    beta: f64,
    p: f64,
    u: f64,
    rng: &mut R,
) -> Option<f64> {
    let mut best = f64::INFINITY;
    for (km1, &q) in qu.iter().enumerate() {
        let k = km1 + 1;
        if k == serving {
            continue;
        }
        if best.is_finite() && (km1 as f64) > best + 10.0 * best.sqrt() + 25.0 {
            break;
        }
        if let Some(v) = draw_conditioned_candidate(k, q, beta, u, rng) {
            if v < best && rng.gen_bool(p) {
                best = v;
            }
        }
    }
    best.is_finite().then_some(best)
}

/// Curve from the conditional Monte Carlo integrator, with the per-point
/// standard error of the replicate mean.
pub struct RebtEndcCurve {
    pub curve: DistributionCurve,
    pub std_err: Vec<f64>,
}

/// CDF of the exposure-to-throughput ratio under dual connectivity.
///
/// Each replicate realizes the serving geometry, the fades and the 4G
/// interference of the anchored field, then scores every grid point with
/// the analytic conditional CDF of the 5G interference at the joint
/// balance root. `se_tol`, when given, caps the acceptable standard error
/// of any curve point.
pub fn rebt_cdf_endc(
    y_grid: &[f64],
    scenario: &ScenarioSpec,
    se_tol: Option<f64>,
) -> Result<RebtEndcCurve> {
    scenario.validate()?;
    if !matches!(scenario.rat, Rat::EnDc) {
        return Err(Error::Domain {
            op: "rebt_cdf_endc",
            msg: "needs a dual-connectivity scenario".into(),
        });
    }
    let pars = scenario.params.clone();
    if !(pars.p_coloc > 0.0) {
        return Err(Error::Domain {
            op: "rebt_cdf_endc",
            msg: "dual connectivity needs p_coloc > 0; no secondary cell exists otherwise".into(),
        });
    }
    if y_grid.is_empty()
        || y_grid.iter().any(|y| !y.is_finite())
        || y_grid.windows(2).any(|p| p[0] >= p[1])
    {
        return Err(Error::Domain {
            op: "rebt_cdf_endc",
            msg: "y grid must be nonempty, finite and ascending".into(),
        });
    }
    let family = i5_family(scenario)?;
    let trunc = &scenario.truncation;
    let m_total = trunc.mc_integration_n.max(1);
    let n = y_grid.len();
    let mut sum = vec![0.0; n];
    let mut sumsq = vec![0.0; n];
    let c4 = pars.c4();
    let beta = pars.beta4;
    let p = pars.p_coloc;
    let to_phys = match scenario.model {
        Model::Ppp => 1.0,
        Model::Bgpp => beta / c4,
    };
    let k_field = trunc
        .k_max_products
        .max(candidate_cover(c4 * ENDC_FIELD_RADIUS_M * ENDC_FIELD_RADIUS_M / beta))
        .min(20_000);
    let window = Window::disk(ENDC_FIELD_RADIUS_M);
    for m in 0..m_total {
        let mut rng = ChaCha8Rng::seed_from_u64(trunc.mc_seed);
        rng.set_stream(m as u64);
        let (theta4, i4, theta5) = match scenario.model {
            Model::Bgpp => {
                let (u, serving) = bgpp_draw_anchor(beta, &mut rng);
                let qu = reg_gamma_upper_scan(k_field, u);
                let i4 = bgpp_conditional_i4(&qu, serving, beta, u, &pars, to_phys, &mut rng);
                let t5 = if p < 1.0 {
                    bgpp_nearest_conditioned_coloc(&qu, serving, beta, p, u, &mut rng)
                } else {
                    None
                };
                (u, i4, t5)
            }
            Model::Ppp => {
                let e: f64 = rng.sample(Exp1);
                let u = e / c4;
                let mut i4 = 0.0;
                for yq in sample_ppp_interferer_sq_dists(pars.lambda4, u, &window, &mut rng)? {
                    let h: f64 = rng.sample(Exp1);
                    i4 += pars.p4_eff * path_loss(yq, pars.alpha, pars.d_m) * h;
                }
                let t5 = if p < 1.0 {
                    let e5: f64 = rng.sample(Exp1);
                    Some(u + e5 / (p * c4))
                } else {
                    None
                };
                (u, i4, t5)
            }
        };
        let h4: f64 = rng.sample(Exp1);
        let h5: f64 = rng.sample(Exp1);
        let pl4 = path_loss(theta4 * to_phys, pars.alpha, pars.d_m);
        let s4 = pars.p4_eff * pl4 * h4;
        let s5_co = pars.p5_eff * pl4 * h5;
        let non_co =
            theta5.map(|t5| (pars.p5_eff * path_loss(t5 * to_phys, pars.alpha, pars.d_m) * h5, t5));
        let l4 = if i4 > 0.0 { (s4 / i4).ln_1p() / LN_2 } else { 0.0 };
        let mut done = false;
        for (iy, &y) in y_grid.iter().enumerate() {
            let z = if done {
                1.0
            } else if y <= 0.0 {
                0.0
            } else if !(i4 > 0.0) {
                // An empty interference field gives the 4G leg unbounded
                // rate, so the ratio sits at zero.
                1.0
            } else {
                let a4 = s4 + i4 - y * pars.w4 * l4;
                let f_co = family.cdf_at(g_root(a4, s5_co, y * pars.w5), theta4);
                let f_no = if p >= 1.0 {
                    0.0
                } else if let Some((s5n, t5)) = non_co {
                    family.cdf_at(g_root(a4, s5n, y * pars.w5), t5)
                } else {
                    // No co-located site in the truncated field: the 5G leg
                    // is absent and the 4G balance alone decides.
                    if a4 <= 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                };
                let z = p * f_co + (1.0 - p) * f_no;
                if z >= 1.0 - 1e-12 {
                    done = true;
                }
                z
            };
            sum[iy] += z;
            sumsq[iy] += z * z;
        }
    }
    let mf = m_total as f64;
    let mut values = Vec::with_capacity(n);
    let mut std_err = Vec::with_capacity(n);
    for iy in 0..n {
        let mean = sum[iy] / mf;
        let var = if m_total > 1 {
            ((sumsq[iy] - mf * mean * mean) / (mf - 1.0)).max(0.0)
        } else {
            0.0
        };
        values.push(mean);
        std_err.push((var / mf).sqrt());
    }
    if let Some(tol) = se_tol {
        let worst = std_err.iter().copied().fold(0.0, f64::max);
        if worst > tol {
            return Err(Error::AccuracyNotReached {
                op: "rebt_cdf_endc",
                achieved: worst,
                wanted: tol,
            });
        }
    }
    let curve = DistributionCurve::cdf(y_grid.to_vec(), values, Provenance::Analytic)?;
    Ok(RebtEndcCurve { curve, std_err })
}

/// Log-spaced grid sized to the scenario: centered where the typical
/// exposure meets the typical rate, wide enough to pin both tails.
pub fn default_rebt_grid(scenario: &ScenarioSpec, n: usize) -> Result<Vec<f64>> {
    scenario.validate()?;
    if n < 2 {
        return Err(Error::Domain {
            op: "default_rebt_grid",
            msg: format!("grid needs at least 2 points, got {n}"),
        });
    }
    let pars = &scenario.params;
    let (w_active, p_tot) = match scenario.rat {
        Rat::FourG => (pars.w4, pars.p4_eff),
        Rat::FiveG => (pars.w5, pars.p5_eff),
        Rat::EnDc => (pars.w4 + pars.w5, pars.p4_eff + pars.p5_eff),
    };
    let y_sc = exposure_scale_hint(scenario.rat, pars) / w_active;
    let lo = 1e-4 * y_sc;
    // Users inside the near-field cutoff see full-power exposure against a
    // logarithmically compressed rate; their ratios cluster many decades
    // above the typical scale, so the top must reach past p_tot / w.
    let hi = (1e5 * y_sc).max(1e2 * p_tot / w_active);
    Ok((0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect())
}
