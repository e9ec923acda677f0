//! Single-realization link physics: bounded path loss, Rayleigh fading,
//! signal/interference accumulation, exposure, throughput, and the
//! energy-per-bit ratio.

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::spatial::{MarkedPattern, NetworkParams, Rat};

/// Bounded path loss on squared distance: 1 inside the guard disk, r^-alpha
/// beyond it. The jump at r = D is part of the model.
pub fn path_loss(r_sq: f64, alpha: f64, d: f64) -> f64 {
    if r_sq < d * d {
        1.0
    } else {
        r_sq.powf(-0.5 * alpha)
    }
}

/// Continuous alternative min(1, r^-alpha). Not used by the validation
/// suite; the analytic results assume the guarded form.
pub fn path_loss_smooth(r_sq: f64, alpha: f64) -> f64 {
    r_sq.powf(-0.5 * alpha).min(1.0)
}

/// Unit-mean Rayleigh power fading.
pub(crate) fn draw_fading<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(Exp1)
}

/// Per-realization record. Powers in watts; throughput in bit/s; rebt in
/// W/(bit/s). Fields of inactive tiers stay zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RealizationSample {
    pub s4: f64,
    pub i4: f64,
    pub s5: f64,
    pub i5: f64,
    pub exposure: f64,
    pub throughput: f64,
    pub rebt: f64,
}

/// Accumulates signal and interference for one realization.
///
/// Draw order is fixed so that coupled runs sharing a pattern and a seed
/// agree bitwise on common terms: first one fading draw per kept 4G site in
/// distance order, then one per kept co-located site (EN-DC) or kept 5G
/// site (standalone 5G). The serving beam is always aligned; interfering
/// 5G beams count only when their alignment mark is set.
pub fn realize_exposure<R: Rng>(
    rat: Rat,
    four_g: Option<&MarkedPattern>,
    five_g: Option<&MarkedPattern>,
    params: &NetworkParams,
    rng: &mut R,
) -> Result<RealizationSample> {
    let mut out = RealizationSample::default();
    let alpha = params.alpha;
    let d = params.d_m;

    if matches!(rat, Rat::FourG | Rat::EnDc) {
        let p4 = four_g.ok_or(Error::Domain {
            op: "realize_exposure",
            msg: "scenario needs a 4G pattern".into(),
        })?;
        let serving = p4.serving_index.ok_or(Error::Domain {
            op: "realize_exposure",
            msg: "no kept 4G point in the window".into(),
        })?;
        for i in 0..p4.len() {
            if !p4.kept[i] {
                continue;
            }
            let h = draw_fading(rng);
            let pw = params.p4_eff * h * path_loss(p4.sq_dist[i], alpha, d);
            if i == serving {
                out.s4 = pw;
            } else {
                out.i4 += pw;
            }
        }
        if rat == Rat::EnDc {
            if p4.colocated.len() != p4.len() || p4.aligned.len() != p4.len() {
                return Err(Error::Domain {
                    op: "realize_exposure",
                    msg: "EN-DC needs co-location and alignment marks".into(),
                });
            }
            let serving5 = p4.nearest_kept_where(|i| p4.colocated[i]);
            for i in 0..p4.len() {
                if !(p4.kept[i] && p4.colocated[i]) {
                    continue;
                }
                let h = draw_fading(rng);
                let pw = params.p5_eff * h * path_loss(p4.sq_dist[i], alpha, d);
                if Some(i) == serving5 {
                    out.s5 = pw;
                } else if p4.aligned[i] {
                    out.i5 += pw;
                }
            }
        }
    }

    if rat == Rat::FiveG {
        let p5 = five_g.ok_or(Error::Domain {
            op: "realize_exposure",
            msg: "scenario needs a 5G pattern".into(),
        })?;
        let serving = p5.serving_index.ok_or(Error::Domain {
            op: "realize_exposure",
            msg: "no kept 5G point in the window".into(),
        })?;
        if p5.aligned.len() != p5.len() {
            return Err(Error::Domain {
                op: "realize_exposure",
                msg: "5G needs alignment marks".into(),
            });
        }
        for i in 0..p5.len() {
            if !p5.kept[i] {
                continue;
            }
            let h = draw_fading(rng);
            let pw = params.p5_eff * h * path_loss(p5.sq_dist[i], alpha, d);
            if i == serving {
                out.s5 = pw;
            } else if p5.aligned[i] {
                out.i5 += pw;
            }
        }
    }

    out.exposure = out.s4 + out.i4 + out.s5 + out.i5;
    Ok(out)
}

/// Completes a realization with Shannon throughput and the exposure-per-bit
/// ratio. Tiers with no signal contribute no rate; a tier with signal but
/// zero interference drives its rate (and the whole throughput) to
/// infinity, which maps to rebt 0.
pub fn realize_rebt(mut sample: RealizationSample, rat: Rat, params: &NetworkParams) -> RealizationSample {
    let mut rate = 0.0f64;
    if matches!(rat, Rat::FourG | Rat::EnDc) && sample.s4 > 0.0 {
        rate += params.w4 * (1.0 + sample.s4 / sample.i4).log2();
    }
    if matches!(rat, Rat::FiveG | Rat::EnDc) && sample.s5 > 0.0 {
        rate += params.w5 * (1.0 + sample.s5 / sample.i5).log2();
    }
    sample.throughput = rate;
    sample.rebt = if rate > 0.0 { sample.exposure / rate } else { f64::INFINITY };
    sample
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{attach_marks, sample_ppp, Window};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn single_point_pattern(r: f64) -> MarkedPattern {
        MarkedPattern {
            points: vec![(r, 0.0)],
            sq_dist: vec![r * r],
            kept: vec![true],
            colocated: vec![true],
            aligned: vec![true],
            serving_index: Some(0),
        }
    }

    #[test]
    fn path_loss_pinned_values() {
        assert_eq!(path_loss(10.0 * 10.0, 4.0, 40.0), 1.0);
        assert_eq!(path_loss(40.0 * 40.0, 4.0, 40.0), 3.90625e-7);
        assert_eq!(path_loss(80.0 * 80.0, 4.0, 40.0), 2.44140625e-8);
    }

    #[test]
    fn path_loss_monotone_and_bounded() {
        let mut prev = f64::INFINITY;
        for i in 0..400 {
            let r = 0.5 + i as f64 * 2.0;
            let g = path_loss(r * r, 4.0, 40.0);
            assert!(g > 0.0 && g <= 1.0, "r {r}: {g}");
            assert!(g <= prev + 1e-15, "increase at r {r}");
            prev = g;
        }
        // The smooth variant agrees outside the guard zone once r >= 1.
        assert_eq!(path_loss_smooth(50.0 * 50.0, 4.0), 50.0f64.powf(-4.0));
        assert_eq!(path_loss_smooth(0.25, 4.0), 1.0);
    }

    #[test]
    fn fading_has_unit_mean() {
        let mut r = rng(1);
        let n = 1_000_000;
        let mean = (0..n).map(|_| draw_fading(&mut r)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn single_site_inside_guard_is_pure_fading() {
        let mut params = NetworkParams::default();
        params.p4_eff = 1.0;
        let pat = single_point_pattern(10.0);
        let s = realize_exposure(Rat::FourG, Some(&pat), None, &params, &mut rng(2)).unwrap();
        let h = draw_fading(&mut rng(2));
        assert_eq!(s.s4, h);
        assert_eq!(s.i4, 0.0);
        assert_eq!(s.exposure, h);
    }

    #[test]
    fn unaligned_interferers_leave_no_5g_interference() {
        let mut r = rng(3);
        for _ in 0..100 {
            let p = sample_ppp(5.1244e-6, &Window::disk(3000.0), &mut r).unwrap();
            if p.is_empty() {
                continue;
            }
            let mut p = attach_marks(p, 0.7, 1e-12, &mut r);
            for i in 0..p.len() {
                if Some(i) != p.serving_index {
                    p.aligned[i] = false;
                }
            }
            let s = realize_exposure(Rat::FiveG, None, Some(&p), &NetworkParams::default(), &mut r)
                .unwrap();
            assert_eq!(s.i5, 0.0);
            assert!(s.s5 > 0.0);
        }
    }

    #[test]
    fn endc_adds_nonnegative_5g_terms_bitwise() {
        let params = NetworkParams::default();
        let window = Window::disk(4500.0);
        let mut pat_rng = rng(4);
        for rep in 0..2000u64 {
            let p = sample_ppp(params.lambda4, &window, &mut pat_rng).unwrap();
            if p.is_empty() {
                continue;
            }
            let p = attach_marks(p, params.p_coloc, params.eta, &mut pat_rng);
            let four = realize_exposure(Rat::FourG, Some(&p), None, &params, &mut rng(100 + rep))
                .unwrap();
            let endc = realize_exposure(Rat::EnDc, Some(&p), None, &params, &mut rng(100 + rep))
                .unwrap();
            assert_eq!(four.s4.to_bits(), endc.s4.to_bits(), "rep {rep}");
            assert_eq!(four.i4.to_bits(), endc.i4.to_bits(), "rep {rep}");
            assert!(endc.s5 >= 0.0 && endc.i5 >= 0.0);
            assert!(endc.exposure >= four.exposure, "rep {rep}");
            assert_eq!(endc.exposure, four.exposure + endc.s5 + endc.i5, "rep {rep}");
        }
    }

    #[test]
    fn throughput_pinned_values() {
        let params = NetworkParams::default();
        let s = RealizationSample {
            s4: 1.0,
            i4: 1.0,
            exposure: 2.0,
            ..Default::default()
        };
        let s = realize_rebt(s, Rat::FourG, &params);
        assert_eq!(s.throughput, 2.0e7);
        assert_eq!(s.rebt, 1.0e-7);

        let both = RealizationSample {
            s4: 3.0,
            i4: 3.0,
            s5: 0.5,
            i5: 0.5,
            exposure: 7.0,
            ..Default::default()
        };
        let both = realize_rebt(both, Rat::EnDc, &params);
        assert_eq!(both.throughput, 1.1e8);

        let ratio = RealizationSample {
            s4: 5e-7,
            i4: 5e-7,
            exposure: 1e-6,
            ..Default::default()
        };
        let mut params5 = params;
        params5.w4 = 1e8;
        let ratio = realize_rebt(ratio, Rat::FourG, &params5);
        assert_eq!(ratio.rebt, 1e-14);
    }

    #[test]
    fn missing_5g_leg_contributes_nothing() {
        let params = NetworkParams::default();
        let mut pat = single_point_pattern(100.0);
        pat.colocated = vec![false];
        let s = realize_exposure(Rat::EnDc, Some(&pat), None, &params, &mut rng(5)).unwrap();
        assert_eq!(s.s5, 0.0);
        assert_eq!(s.i5, 0.0);
        let s = realize_rebt(s, Rat::EnDc, &params);
        assert!(s.throughput.is_infinite(), "lone site has no 4G interference");
        assert_eq!(s.rebt, 0.0);
    }

    #[test]
    fn empty_patterns_are_rejected() {
        let params = NetworkParams::default();
        let empty = MarkedPattern {
            points: vec![],
            sq_dist: vec![],
            kept: vec![],
            colocated: vec![],
            aligned: vec![],
            serving_index: None,
        };
        assert!(realize_exposure(Rat::FourG, Some(&empty), None, &params, &mut rng(6)).is_err());
        assert!(realize_exposure(Rat::FiveG, None, Some(&empty), &params, &mut rng(6)).is_err());
        assert!(realize_exposure(Rat::FourG, None, None, &params, &mut rng(6)).is_err());
    }
}
