//! Base-station patterns on a disk: Poisson and beta-Ginibre samplers, mark
//! attachment (retention, co-location, beam alignment), and the laws of the
//! serving (nearest retained) point seen from the window center.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::error::{Error, Result};
use crate::specfun::gamma::{ln_gamma_pdf, reg_gamma_upper_scan};
use crate::specfun::quad::adaptive_gk;

/// Radio access technology of a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rat {
    FourG,
    FiveG,
    EnDc,
}

/// Spatial model of the base-station locations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Model {
    Ppp,
    Bgpp,
}

/// Network-wide scalars in linear units: watts, hertz, meters, points/m^2.
#[derive(Clone, Copy, Debug)]
pub struct NetworkParams {
    pub lambda4: f64,
    pub lambda5: f64,
    pub beta4: f64,
    pub beta5: f64,
    /// Effective (EIRP) transmit powers in watts; antenna gains are already
    /// folded in.
    pub p4_eff: f64,
    pub p5_eff: f64,
    /// Bandwidths in Hz.
    pub w4: f64,
    pub w5: f64,
    /// Guard radius of the bounded path-loss law, meters.
    pub d_m: f64,
    pub alpha: f64,
    /// Probability that an interfering 5G beam points at the user.
    pub eta: f64,
    /// Probability that a 4G site also hosts a 5G unit.
    pub p_coloc: f64,
}

impl Default for NetworkParams {
    /// Parameter set used throughout the validation suite: a dense urban
    /// deployment with 45 dBm 4G and 51 dBm 5G effective powers.
    fn default() -> Self {
        NetworkParams {
            lambda4: 7.5294e-6,
            lambda5: 5.1244e-6,
            beta4: 0.75,
            beta5: 0.83,
            p4_eff: 31.622776601683793,
            p5_eff: 125.89254117941675,
            w4: 20.0e6,
            w5: 90.0e6,
            d_m: 40.0,
            alpha: 4.0,
            eta: 0.0469,
            p_coloc: 0.7,
        }
    }
}

impl NetworkParams {
    /// Scale constant c = pi * lambda of the 4G process.
    pub fn c4(&self) -> f64 {
        PI * self.lambda4
    }

    /// Scale constant c = pi * lambda of the 5G process.
    pub fn c5(&self) -> f64 {
        PI * self.lambda5
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
            ("p4_eff", self.p4_eff),
            ("p5_eff", self.p5_eff),
            ("w4", self.w4),
            ("w5", self.w5),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Domain {
                    op: "NetworkParams::validate",
                    msg: format!("{name} must be > 0, got {v}"),
                });
            }
        }
        for (name, b) in [("beta4", self.beta4), ("beta5", self.beta5)] {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::Domain {
                    op: "NetworkParams::validate",
                    msg: format!("{name} must lie in (0, 1], got {b}"),
                });
            }
        }
        if !(self.alpha > 2.0) {
            return Err(Error::Domain {
                op: "NetworkParams::validate",
                msg: format!("alpha must be > 2, got {}", self.alpha),
            });
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Domain {
                op: "NetworkParams::validate",
                msg: format!("eta must lie in (0, 1], got {}", self.eta),
            });
        }
        if !(0.0..=1.0).contains(&self.p_coloc) {
            return Err(Error::Domain {
                op: "NetworkParams::validate",
                msg: format!("p_coloc must lie in [0, 1], got {}", self.p_coloc),
            });
        }
        if !(self.d_m >= 0.0) {
            return Err(Error::Domain {
                op: "NetworkParams::validate",
                msg: format!("d_m must be >= 0, got {}", self.d_m),
            });
        }
        Ok(())
    }
}

/// Observation disk. The measurement point (typical user) sits at the
/// center.
#[derive(Clone, Copy, Debug)]
pub struct Window {
    pub center: (f64, f64),
    pub radius: f64,
}

impl Window {
    pub fn disk(radius: f64) -> Self {
        Window { center: (0.0, 0.0), radius }
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        let dx = p.0 - self.center.0;
        let dy = p.1 - self.center.1;
        dx * dx + dy * dy < self.radius * self.radius
    }
}

/// A realized pattern, sorted by squared distance to the window center.
/// `colocated` and `aligned` stay empty until `attach_marks` fills them.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkedPattern {
    pub points: Vec<(f64, f64)>,
    /// Squared distance of each point to the window center, ascending.
    pub sq_dist: Vec<f64>,
    /// Retention flags of the beta-thinning; all true for a PPP.
    pub kept: Vec<bool>,
    pub colocated: Vec<bool>,
    pub aligned: Vec<bool>,
    /// Index of the nearest kept point, if any.
    pub serving_index: Option<usize>,
}

impl MarkedPattern {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest kept point satisfying an extra predicate on its index.
    pub fn nearest_kept_where<F: Fn(usize) -> bool>(&self, pred: F) -> Option<usize> {
        (0..self.len()).find(|&i| self.kept[i] && pred(i))
    }

    fn from_parts(mut points: Vec<(f64, f64)>, mut sq_dist: Vec<f64>, mut kept: Vec<bool>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| sq_dist[a].total_cmp(&sq_dist[b]));
        points = order.iter().map(|&i| points[i]).collect();
        kept = order.iter().map(|&i| kept[i]).collect();
        sq_dist = order.iter().map(|&i| sq_dist[i]).collect();
        let serving_index = kept.iter().position(|&k| k);
        MarkedPattern {
            points,
            sq_dist,
            kept,
            colocated: Vec::new(),
            aligned: Vec::new(),
            serving_index,
        }
    }
}

/// Homogeneous Poisson pattern on the window: Poisson count of mean
/// lambda * pi * R^2, uniform positions, everything retained.
pub fn sample_ppp<R: Rng>(lambda: f64, window: &Window, rng: &mut R) -> Result<MarkedPattern> {
    if !(lambda > 0.0) {
        return Err(Error::Domain {
            op: "sample_ppp",
            msg: format!("lambda must be > 0, got {lambda}"),
        });
    }
    let mean = lambda * PI * window.radius * window.radius;
    let n = Poisson::new(mean)
        .map_err(|e| Error::Domain { op: "sample_ppp", msg: e.to_string() })?
        .sample(rng) as usize;
    let mut points = Vec::with_capacity(n);
    let mut sq_dist = Vec::with_capacity(n);
    for _ in 0..n {
        let r = window.radius * rng.gen::<f64>().sqrt();
        let phi = 2.0 * PI * rng.gen::<f64>();
        points.push((
            window.center.0 + r * phi.cos(),
            window.center.1 + r * phi.sin(),
        ));
        sq_dist.push(r * r);
    }
    let kept = vec![true; n];
    Ok(MarkedPattern::from_parts(points, sq_dist, kept))
}

/// Truncation index for the candidate sequence: Gamma(k, beta/c) mass beyond
/// R^2 is negligible past this k.
pub fn bgpp_k_max(beta: f64, c: f64, radius: f64) -> usize {
    let rho = c * radius * radius / beta;
    (rho + 10.0 * rho.sqrt()).ceil() as usize + 20
}

/// The k-indexed candidate draws of a beta-Ginibre pattern: squared distance
/// Q_k ~ Gamma(k, beta/c) and its retention coin, k = 1..=k_max.
pub fn bgpp_candidates<R: Rng>(
    beta: f64,
    c: f64,
    k_max: usize,
    rng: &mut R,
) -> Result<Vec<(f64, bool)>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Domain {
            op: "bgpp_candidates",
            msg: format!("beta must lie in (0, 1], got {beta}"),
        });
    }
    let scale = beta / c;
    let mut out = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let q = Gamma::new(k as f64, scale)
            .map_err(|e| Error::Domain { op: "bgpp_candidates", msg: e.to_string() })?
            .sample(rng);
        let kept = rng.gen_bool(beta);
        out.push((q, kept));
    }
    Ok(out)
}

/// Beta-Ginibre pattern on the window: candidate k sits at squared distance
/// Gamma(k, beta/c) with a uniform angle and survives thinning with
/// probability beta. Candidates outside the window are discarded; retention
/// of the rest is recorded in `kept`.
pub fn sample_bgpp<R: Rng>(
    beta: f64,
    lambda: f64,
    window: &Window,
    rng: &mut R,
) -> Result<MarkedPattern> {
    if !(lambda > 0.0) {
        return Err(Error::Domain {
            op: "sample_bgpp",
            msg: format!("lambda must be > 0, got {lambda}"),
        });
    }
    let c = PI * lambda;
    let k_max = bgpp_k_max(beta, c, window.radius);
    let candidates = bgpp_candidates(beta, c, k_max, rng)?;
    let r2_window = window.radius * window.radius;
    let mut points = Vec::new();
    let mut sq_dist = Vec::new();
    let mut kept = Vec::new();
    for (q, retained) in candidates {
        let phi = 2.0 * PI * rng.gen::<f64>();
        if q < r2_window {
            let r = q.sqrt();
            points.push((
                window.center.0 + r * phi.cos(),
                window.center.1 + r * phi.sin(),
            ));
            sq_dist.push(q);
            kept.push(retained);
        }
    }
    Ok(MarkedPattern::from_parts(points, sq_dist, kept))
}

/// Draws the co-location and beam-alignment marks. The serving point's beam
/// always points at the user; other alignments are Bernoulli(eta) and
/// co-location is Bernoulli(p) everywhere.
pub fn attach_marks<R: Rng>(mut pattern: MarkedPattern, p: f64, eta: f64, rng: &mut R) -> MarkedPattern {
    let n = pattern.len();
    let mut colocated = Vec::with_capacity(n);
    let mut aligned = Vec::with_capacity(n);
    for _ in 0..n {
        colocated.push(rng.gen_bool(p));
        aligned.push(rng.gen_bool(eta));
    }
    if let Some(s) = pattern.serving_index {
        aligned[s] = true;
    }
    pattern.colocated = colocated;
    pattern.aligned = aligned;
    pattern
}

/// Serving-distance density of a PPP: 2 pi lambda r exp(-pi lambda r^2),
/// r in meters.
pub fn ppp_serving_pdf(lambda: f64, r: f64) -> f64 {
    if r < 0.0 {
        return 0.0;
    }
    let c = PI * lambda;
    2.0 * c * r * (-c * r * r).exp()
}

/// Law of the nearest retained point of a beta-Ginibre process over the
/// normalized squared distance u = (c/beta) r^2. The density is
///
///   Upsilon(u) = beta * sum_s f_s(u) prod_{k != s} a_k(u),
///   a_k(u) = 1 - beta + beta * Q(k, u),
///
/// with f_s the Gamma(s, 1) density and Q the regularized upper gamma
/// ratio. Products and sums run to k_max.
#[derive(Clone, Debug)]
pub struct BgppServing {
    pub beta: f64,
    pub k_max: usize,
}

impl BgppServing {
    pub fn new(beta: f64, c: f64, radius: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Domain {
                op: "BgppServing::new",
                msg: format!("beta must lie in (0, 1], got {beta}"),
            });
        }
        Ok(BgppServing { beta, k_max: bgpp_k_max(beta, c, radius) })
    }

    /// Per-index no-closer-retained-point factors a_k(u), k = 1..=k_max.
    pub fn retention_factors(&self, u: f64) -> Vec<f64> {
        reg_gamma_upper_scan(self.k_max, u)
            .into_iter()
            .map(|q| 1.0 - self.beta + self.beta * q)
            .collect()
    }

    pub fn pdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let a = self.retention_factors(u);
        // log a_k is safe: a_k >= 1 - beta, and for beta = 1 a vanishing a_k
        // kills exactly the terms whose f_s is negligible anyway.
        let mut log_prod = 0.0;
        for &ak in &a {
            if ak <= 0.0 {
                log_prod = f64::NEG_INFINITY;
                break;
            }
            log_prod += ak.ln();
        }
        let mut total = 0.0;
        for s in 1..=self.k_max {
            let lf = ln_gamma_pdf(s as u32, u);
            if lf < -760.0 {
                if (s as f64) > u {
                    break;
                }
                continue;
            }
            let ak = a[s - 1];
            if ak <= 0.0 {
                // Recompute the product without index s directly.
                let mut lp = 0.0;
                let mut dead = false;
                for (k, &av) in a.iter().enumerate() {
                    if k + 1 == s {
                        continue;
                    }
                    if av <= 0.0 {
                        dead = true;
                        break;
                    }
                    lp += av.ln();
                }
                if !dead {
                    total += (self.beta.ln() + lf + lp).exp();
                }
            } else {
                total += (self.beta.ln() + lf + log_prod - ak.ln()).exp();
            }
        }
        total
    }

    /// Upper end of the effective support: the no-point probability decays
    /// like exp(-beta u).
    pub fn support_hi(&self) -> f64 {
        (36.0 / self.beta + 20.0).min(self.k_max as f64)
    }

    /// Integrates the density and checks it carries unit mass; errors if the
    /// deficit exceeds 1e-3.
    pub fn check_mass(&self) -> Result<f64> {
        let f = |u: f64| self.pdf(u);
        let (mass, _) = adaptive_gk(&f, 0.0, self.support_hi(), 1e-9, 1e-8, 2000);
        if (mass - 1.0).abs() > 1e-3 {
            return Err(Error::TruncationInsufficient {
                op: "BgppServing::check_mass",
                msg: format!("serving law mass {mass} deviates from 1 beyond 1e-3"),
            });
        }
        Ok(mass)
    }

    /// CDF of the normalized serving law by quadrature of `pdf`.
    pub fn cdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let f = |v: f64| self.pdf(v);
        let (mass, _) = adaptive_gk(&f, 0.0, u.min(self.support_hi()), 1e-10, 1e-9, 2000);
        mass.clamp(0.0, 1.0)
    }
}

/// Squared distances (m^2) of PPP interferers lying beyond a serving point
/// at squared distance `r_sq_min`, out to the window edge.
pub fn sample_ppp_interferer_sq_dists<R: Rng>(
    lambda: f64,
    r_sq_min: f64,
    window: &Window,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let r2_hi = window.radius * window.radius;
    if r_sq_min >= r2_hi {
        return Ok(Vec::new());
    }
    let mean = lambda * PI * (r2_hi - r_sq_min);
    let n = Poisson::new(mean)
        .map_err(|e| Error::Domain { op: "sample_ppp_interferer_sq_dists", msg: e.to_string() })?
        .sample(rng) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r_sq_min + (r2_hi - r_sq_min) * rng.gen::<f64>());
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Radiating beta-Ginibre interferers conditioned on the serving point
/// sitting at normalized squared distance u with candidate index s, as
/// (index, v) pairs. Index k != s radiates with probability
/// beta * Q(k, u) / a_k(u), at a position drawn from Gamma(k, 1) truncated
/// to (u, inf) by bisection on the upper-tail ratio.
pub fn sample_bgpp_conditional_v<R: Rng>(
    beta: f64,
    k_max: usize,
    s: usize,
    u: f64,
    rng: &mut R,
) -> Vec<(usize, f64)> {
    let q_at_u = reg_gamma_upper_scan(k_max, u);
    let mut out = Vec::new();
    for k in 1..=k_max {
        if k == s {
            continue;
        }
        let q = q_at_u[k - 1];
        let ak = 1.0 - beta + beta * q;
        if ak <= 0.0 {
            continue;
        }
        if rng.gen::<f64>() < beta * q / ak {
            let target = q * rng.gen::<f64>();
            out.push((k, gamma_upper_quantile(k, target.max(1e-300), u)));
        }
    }
    out
}

/// Solves Q(k, v) = target for v >= lo by bracketed bisection; Q is strictly
/// decreasing where it matters.
pub(crate) fn gamma_upper_quantile(k: usize, target: f64, lo: f64) -> f64 {
    let q = |v: f64| {
        *reg_gamma_upper_scan(k, v).last().expect("k >= 1")
    };
    let mut a = lo;
    let mut b = (lo + k as f64 + 10.0 * (k as f64).sqrt() + 10.0).max(lo * 2.0 + 10.0);
    while q(b) > target {
        a = b;
        b *= 2.0;
        if b > 1e12 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if q(mid) > target {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn ppp_count_matches_intensity() {
        let window = Window::disk(4500.0);
        for (lambda, seed) in [(7.5294e-6, 11u64), (5.1244e-6, 12u64)] {
            let mean_want = lambda * PI * 4500.0 * 4500.0;
            let mut r = rng(seed);
            let reps = 400;
            let mut total = 0usize;
            for _ in 0..reps {
                total += sample_ppp(lambda, &window, &mut r).unwrap().len();
            }
            let mean = total as f64 / reps as f64;
            let ci = 4.0 * (mean_want / reps as f64).sqrt();
            assert!(
                (mean - mean_want).abs() < ci,
                "lambda {lambda}: mean {mean} vs {mean_want} (ci {ci})"
            );
        }
    }

    #[test]
    fn ppp_positions_uniform_in_squared_distance() {
        // Uniformity on the disk makes r^2/R^2 uniform on (0, 1).
        let window = Window::disk(4500.0);
        let mut r = rng(3);
        let mut xs = Vec::new();
        for _ in 0..100 {
            let p = sample_ppp(7.5294e-6, &window, &mut r).unwrap();
            xs.extend(p.sq_dist.iter().map(|q| q / (4500.0 * 4500.0)));
        }
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let mut ks = 0.0f64;
        for (i, x) in xs.iter().enumerate() {
            ks = ks.max((x - i as f64 / n).abs()).max((x - (i + 1) as f64 / n).abs());
        }
        assert!(ks < 1.63 / n.sqrt() * 1.5, "ks {ks} on {n} points");
    }

    #[test]
    fn patterns_sorted_with_serving_at_first_kept() {
        let window = Window::disk(2000.0);
        let mut r = rng(4);
        for _ in 0..50 {
            let p = sample_bgpp(0.75, 7.5294e-6, &window, &mut r).unwrap();
            for w in p.sq_dist.windows(2) {
                assert!(w[0] <= w[1]);
            }
            let first_kept = p.kept.iter().position(|&k| k);
            assert_eq!(p.serving_index, first_kept);
            assert_eq!(p.points.len(), p.sq_dist.len());
            assert_eq!(p.points.len(), p.kept.len());
        }
    }

    #[test]
    fn bgpp_retained_count_matches_intensity() {
        let window = Window::disk(4500.0);
        let lambda = 5.1244e-6;
        let want = lambda * PI * 4500.0 * 4500.0;
        let mut r = rng(5);
        let reps = 10_000;
        let mut total = 0usize;
        for _ in 0..reps {
            let p = sample_bgpp(0.83, lambda, &window, &mut r).unwrap();
            total += p.kept.iter().filter(|&&k| k).count();
        }
        let mean = total as f64 / reps as f64;
        // Sub-Poisson counts: the Poisson CI is conservative.
        let ci = 3.0 * (want / reps as f64).sqrt();
        assert!((mean - want).abs() < ci, "mean {mean} vs {want} (ci {ci})");
    }

    #[test]
    fn bgpp_count_variance_shrinks_with_beta() {
        // Thinning variance: Var = beta * sum_k P_k - beta^2 * sum_k P_k^2,
        // which is (1 - beta) * lambda * pi * R^2 up to an edge term. At
        // beta -> 0 this approaches the PPP variance.
        let window = Window::disk(2500.0);
        let lambda = 7.5294e-6;
        let ppp_var = lambda * PI * 2500.0 * 2500.0;
        let reps = 6000;
        let sample_var = |beta: f64, seed: u64| {
            let mut r = rng(seed);
            let counts: Vec<f64> = (0..reps)
                .map(|_| {
                    sample_bgpp(beta, lambda, &window, &mut r)
                        .unwrap()
                        .kept
                        .iter()
                        .filter(|&&k| k)
                        .count() as f64
                })
                .collect();
            let mean = counts.iter().sum::<f64>() / reps as f64;
            counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (reps - 1) as f64
        };
        let v_low = sample_var(0.05, 21);
        let v_high = sample_var(1.0, 22);
        assert!(
            (v_low / ppp_var - 0.95).abs() < 0.06,
            "beta 0.05 variance ratio {}",
            v_low / ppp_var
        );
        assert!(v_high / ppp_var < 0.3, "beta 1 variance ratio {}", v_high / ppp_var);
    }

    #[test]
    fn bgpp_candidate_sq_dists_follow_gamma_law() {
        // Normalized v_k = (c/beta) Q_k must be Gamma(k, 1).
        let c = PI * 5.1244e-6;
        let beta = 0.83;
        let reps = 4000;
        let k_probe = [1usize, 2, 3, 5, 10, 20];
        let mut r = rng(6);
        let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(reps); k_probe.len()];
        for _ in 0..reps {
            let cand = bgpp_candidates(beta, c, 20, &mut r).unwrap();
            for (j, &k) in k_probe.iter().enumerate() {
                draws[j].push(cand[k - 1].0 * c / beta);
            }
        }
        for (j, &k) in k_probe.iter().enumerate() {
            draws[j].sort_by(f64::total_cmp);
            let n = reps as f64;
            let mut ks = 0.0f64;
            for (i, v) in draws[j].iter().enumerate() {
                let cdf = 1.0 - *reg_gamma_upper_scan(k, *v).last().unwrap();
                ks = ks.max((cdf - i as f64 / n).abs()).max((cdf - (i + 1) as f64 / n).abs());
            }
            // 1% critical value 1.63/sqrt(n).
            assert!(ks < 1.63 / n.sqrt(), "k = {k}: ks = {ks}");
        }
    }

    #[test]
    fn thinned_ppp_counts_are_poisson() {
        // Bernoulli(q)-thinning a PPP(lambda) gives PPP(q lambda); chi-square
        // against the Poisson pmf at the 1% level.
        let window = Window::disk(1000.0);
        let lambda = 2.5e-6;
        let q = 0.6;
        let mean = q * lambda * PI * 1e6;
        let reps = 4000;
        let mut r = rng(7);
        let mut counts = vec![0usize; 64];
        for _ in 0..reps {
            let p = sample_ppp(lambda, &window, &mut r).unwrap();
            let thinned = (0..p.len()).filter(|_| r.gen_bool(q)).count();
            counts[thinned.min(63)] += 1;
        }
        // Bin tails so every expected count is at least 5.
        let pmf = |k: usize| {
            let lk = k as f64 * mean.ln() - mean - crate::specfun::gamma::ln_factorial(k);
            lk.exp()
        };
        let mut chi2 = 0.0;
        let mut df: i64 = -1;
        let mut acc_obs = 0.0;
        let mut acc_exp = 0.0;
        for k in 0..64 {
            acc_obs += counts[k] as f64;
            let e = if k < 63 {
                pmf(k) * reps as f64
            } else {
                (1.0 - (0..63).map(pmf).sum::<f64>()) * reps as f64
            };
            acc_exp += e;
            if acc_exp >= 5.0 || k == 63 {
                chi2 += (acc_obs - acc_exp) * (acc_obs - acc_exp) / acc_exp.max(1e-12);
                df += 1;
                acc_obs = 0.0;
                acc_exp = 0.0;
            }
        }
        // Critical value for df ~ 15 at 1% is 30.58; allow up to df 20 (37.57).
        assert!(df >= 8, "degenerate binning, df = {df}");
        assert!(chi2 < 37.57, "chi2 = {chi2} with df = {df}");
    }

    #[test]
    fn marks_have_stated_frequencies() {
        let window = Window::disk(20_000.0);
        let mut r = rng(8);
        let mut coloc = 0usize;
        let mut aligned = 0usize;
        let mut total = 0usize;
        for _ in 0..40 {
            let p = sample_ppp(7.5294e-6, &window, &mut r).unwrap();
            let p = attach_marks(p, 0.7, 0.0469, &mut r);
            if let Some(s) = p.serving_index {
                assert!(p.aligned[s], "serving beam must point at the user");
            }
            total += p.len();
            coloc += p.colocated.iter().filter(|&&b| b).count();
            // Exclude the forced serving alignment from the frequency count.
            aligned += (0..p.len())
                .filter(|&i| Some(i) != p.serving_index && p.aligned[i])
                .count();
        }
        assert!(total > 100_000, "want ~1.9e5 points, got {total}");
        let fc = coloc as f64 / total as f64;
        let fa = aligned as f64 / (total - 40) as f64;
        assert!((fc - 0.7).abs() < 0.005, "colocated fraction {fc}");
        assert!((fa - 0.0469).abs() < 0.003, "aligned fraction {fa}");
    }

    #[test]
    fn all_colocated_when_p_is_one() {
        let mut r = rng(9);
        let p = sample_ppp(7.5294e-6, &Window::disk(3000.0), &mut r).unwrap();
        let p = attach_marks(p, 1.0, 0.0469, &mut r);
        assert!(p.colocated.iter().all(|&b| b));
    }

    #[test]
    fn ppp_serving_density_normalizes_with_known_median() {
        let lambda = 7.5294e-6;
        let f = |r: f64| ppp_serving_pdf(lambda, r);
        let (mass, _) = adaptive_gk(&f, 0.0, 3000.0, 1e-12, 1e-11, 2000);
        assert!((mass - 1.0).abs() < 1e-9, "mass {mass}");
        let median = (std::f64::consts::LN_2 / (PI * lambda)).sqrt();
        assert!((median - 171.1818).abs() < 1e-3, "median formula moved: {median}");
        let (half, _) = adaptive_gk(&f, 0.0, median, 1e-12, 1e-11, 2000);
        assert!((half - 0.5).abs() < 1e-9, "mass below median {half}");
    }

    #[test]
    fn bgpp_serving_law_normalizes() {
        let params = NetworkParams::default();
        let law = BgppServing::new(0.83, params.c5(), 4500.0).unwrap();
        let mass = law.check_mass().unwrap();
        assert!((mass - 1.0).abs() < 1e-4, "mass {mass}");
    }

    #[test]
    fn bgpp_serving_law_matches_sampler() {
        // ECDF of the normalized serving squared distance against the
        // quadrature CDF of Upsilon.
        let lambda = 5.1244e-6;
        let beta = 0.83;
        let c = PI * lambda;
        let window = Window::disk(4500.0);
        let law = BgppServing::new(beta, c, 4500.0).unwrap();
        let mut r = rng(10);
        let mut us = Vec::with_capacity(20_000);
        for _ in 0..20_000 {
            let p = sample_bgpp(beta, lambda, &window, &mut r).unwrap();
            let s = p.serving_index.expect("window large enough to hold a point");
            us.push(p.sq_dist[s] * c / beta);
        }
        us.sort_by(f64::total_cmp);
        let n = us.len() as f64;
        let mut ks = 0.0f64;
        for (i, &u) in us.iter().enumerate().step_by(200) {
            let cdf = law.cdf(u);
            ks = ks.max((cdf - i as f64 / n).abs()).max((cdf - (i + 1) as f64 / n).abs());
        }
        assert!(ks < 0.02, "ks {ks}");
    }

    #[test]
    fn conditional_interferers_match_restricted_gamma_laws() {
        // Given serving at (u, s), index k != s radiates with probability
        // beta Q(k,u)/a_k(u) at Gamma(k,1) positions truncated to v > u.
        let beta = 0.75;
        let u = 2.0;
        let s = 2usize;
        let k_max = 40usize;
        let mut r = rng(11);
        let reps = 30_000;
        let mut hits = vec![0usize; k_max + 1];
        let mut draws_k3: Vec<f64> = Vec::new();
        for _ in 0..reps {
            for (k, v) in sample_bgpp_conditional_v(beta, k_max, s, u, &mut r) {
                assert!(v > u, "conditional draw {v} not beyond u = {u}");
                assert_ne!(k, s, "serving index must not radiate");
                hits[k] += 1;
                if k == 3 {
                    draws_k3.push(v);
                }
            }
        }
        let q_at_u = reg_gamma_upper_scan(k_max, u);
        for k in [1usize, 3, 4, 10] {
            let q = q_at_u[k - 1];
            let want = beta * q / (1.0 - beta + beta * q);
            let got = hits[k] as f64 / reps as f64;
            let ci = 4.0 * (want * (1.0 - want) / reps as f64).sqrt();
            assert!((got - want).abs() < ci, "k {k}: rate {got} vs {want} (ci {ci})");
        }
        // KS of the k = 3 positions against Gamma(3,1) truncated to (u, inf).
        draws_k3.sort_by(f64::total_cmp);
        let n = draws_k3.len() as f64;
        let q3u = q_at_u[2];
        let mut ks = 0.0f64;
        for (i, &v) in draws_k3.iter().enumerate() {
            let q3v = *reg_gamma_upper_scan(3, v).last().unwrap();
            let cdf = (q3u - q3v) / q3u;
            ks = ks.max((cdf - i as f64 / n).abs()).max((cdf - (i + 1) as f64 / n).abs());
        }
        assert!(ks < 1.63 / n.sqrt(), "truncated-law ks {ks} on {n} draws");
    }

    #[test]
    fn samplers_are_deterministic_in_the_seed() {
        let window = Window::disk(4500.0);
        let a = sample_bgpp(0.75, 7.5294e-6, &window, &mut rng(42)).unwrap();
        let b = sample_bgpp(0.75, 7.5294e-6, &window, &mut rng(42)).unwrap();
        assert_eq!(a, b);
        let a = attach_marks(a, 0.7, 0.0469, &mut rng(43));
        let b = attach_marks(b, 0.7, 0.0469, &mut rng(43));
        assert_eq!(a, b);
    }

    #[test]
    fn gamma_upper_quantile_inverts_the_tail() {
        for (k, u) in [(1usize, 0.5), (3, 2.0), (10, 8.0)] {
            let q_u = *reg_gamma_upper_scan(k, u).last().unwrap();
            for frac in [0.9, 0.5, 0.1] {
                let v = gamma_upper_quantile(k, q_u * frac, u);
                let q_v = *reg_gamma_upper_scan(k, v).last().unwrap();
                assert!(
                    (q_v - q_u * frac).abs() < 1e-9,
                    "k {k} u {u} frac {frac}: Q {q_v} want {}",
                    q_u * frac
                );
            }
        }
    }
}
