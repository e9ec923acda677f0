//! Simulation harness: repeated pattern/mark/fading realizations reduced to
//! empirical exposure and rebt distributions, plus the ECDF and
//! Kolmogorov-Smirnov utilities the validation layer compares curves with.
//!
//! Realization i draws from substream i of a counter-based generator, so
//! runs are reproducible bit for bit at any thread count, and two runs that
//! share a master seed consume identical pattern, mark, and fading draws in
//! identical order. That makes scenario pairs differing only in parameters
//! (4G vs EN-DC, single vs doubled power) pathwise comparable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analytic::{CurveKind, DistributionCurve, Provenance, ScenarioSpec};
use crate::error::{Error, Result};
use crate::propagation::{realize_exposure, realize_rebt, RealizationSample};
use crate::spatial::{attach_marks, sample_bgpp, sample_ppp, MarkedPattern, Model, Rat, Window};

/// One simulation campaign: scenario, realization count, seed, and window.
#[derive(Clone, Debug)]
pub struct McRunSpec {
    pub scenario: ScenarioSpec,
    pub n_realizations: usize,
    pub master_seed: u64,
    pub window: Window,
}

impl McRunSpec {
    pub fn new(scenario: ScenarioSpec, n_realizations: usize, master_seed: u64) -> Self {
        Self { scenario, n_realizations, master_seed, window: Window::disk(4500.0) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_realizations == 0 {
            return Err(Error::Domain {
                op: "McRunSpec::validate",
                msg: "n_realizations must be >= 1".into(),
            });
        }
        if !(self.window.radius > 0.0) {
            return Err(Error::Domain {
                op: "McRunSpec::validate",
                msg: format!("window radius must be > 0, got {}", self.window.radius),
            });
        }
        self.scenario.validate()
    }
}

/// Samples in realization order plus their ECDF and the run's bookkeeping.
/// For rebt runs `samples` holds only the finite values; exposure runs never
/// drop realizations.
#[derive(Clone, Debug)]
pub struct McRunResult {
    pub samples: Vec<f64>,
    pub curve: DistributionCurve,
    /// Pattern draws discarded for containing no retained point.
    pub redrawn_patterns: usize,
    /// EN-DC realizations whose window held no co-located site; their 5G
    /// terms are zero.
    pub no_coloc_count: usize,
    /// Realizations with zero throughput, excluded from rebt samples.
    pub infinite_count: usize,
    pub infinite_fraction: f64,
}

/// Empirical exposure distribution of `spec.n_realizations` independent
/// realizations.
pub fn run_exposure_mc(spec: &McRunSpec) -> Result<McRunResult> {
    run_mc(spec, false)
}

/// Empirical rebt distribution; realizations whose throughput vanished are
/// counted and left out of the samples.
pub fn run_rebt_mc(spec: &McRunSpec) -> Result<McRunResult> {
    run_mc(spec, true)
}

fn run_mc(spec: &McRunSpec, want_rebt: bool) -> Result<McRunResult> {
    spec.validate()?;
    let raw: Result<Vec<(RealizationSample, usize, bool)>> = (0..spec.n_realizations)
        .into_par_iter()
        .map(|i| one_realization(spec, i as u64, want_rebt))
        .collect();
    let raw = raw?;

    let redrawn_patterns = raw.iter().map(|r| r.1).sum();
    let no_coloc_count = raw.iter().filter(|r| r.2).count();
    let mut infinite_count = 0usize;
    let mut samples = Vec::with_capacity(raw.len());
    for (s, _, _) in &raw {
        let v = if want_rebt { s.rebt } else { s.exposure };
        if v.is_finite() {
            samples.push(v);
        } else {
            infinite_count += 1;
        }
    }
    if samples.is_empty() {
        return Err(Error::Domain {
            op: "run_mc",
            msg: "every realization had infinite rebt".into(),
        });
    }
    let curve = natural_ecdf(&samples)?;
    Ok(McRunResult {
        samples,
        curve,
        redrawn_patterns,
        no_coloc_count,
        infinite_count,
        infinite_fraction: infinite_count as f64 / spec.n_realizations as f64,
    })
}

/// One realization on substream `idx`: pattern (redrawn while it has no
/// retained point), marks, fading, reduction. Marks are attached for every
/// scenario, co-location included, so runs differing only in `rat` stay on
/// identical draw sequences.
fn one_realization(
    spec: &McRunSpec,
    idx: u64,
    want_rebt: bool,
) -> Result<(RealizationSample, usize, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.master_seed);
    rng.set_stream(idx);
    let p = &spec.scenario.params;
    let (lambda, beta) = match spec.scenario.rat {
        Rat::FourG | Rat::EnDc => (p.lambda4, p.beta4),
        Rat::FiveG => (p.lambda5, p.beta5),
    };

    let mut redraws = 0usize;
    let pattern = loop {
        let candidate = match spec.scenario.model {
            Model::Ppp => sample_ppp(lambda, &spec.window, &mut rng)?,
            Model::Bgpp => sample_bgpp(beta, lambda, &spec.window, &mut rng)?,
        };
        if candidate.serving_index.is_some() {
            break candidate;
        }
        redraws += 1;
        if redraws > 10_000 {
            return Err(Error::Domain {
                op: "one_realization",
                msg: "window too small: no retained point in 10000 pattern draws".into(),
            });
        }
    };
    let pattern = attach_marks(pattern, p.p_coloc, p.eta, &mut rng);
    let no_coloc = spec.scenario.rat == Rat::EnDc
        && pattern.nearest_kept_where(|i| pattern.colocated[i]).is_none();

    let (four_g, five_g): (Option<&MarkedPattern>, Option<&MarkedPattern>) =
        match spec.scenario.rat {
            Rat::FourG | Rat::EnDc => (Some(&pattern), None),
            Rat::FiveG => (None, Some(&pattern)),
        };
    let mut sample = realize_exposure(spec.scenario.rat, four_g, five_g, p, &mut rng)?;
    if want_rebt {
        sample = realize_rebt(sample, spec.scenario.rat, p);
    }
    Ok((sample, redraws, no_coloc))
}

/// ECDF of the samples on their own sorted support: at each distinct sample
/// the fraction of samples not exceeding it.
pub fn natural_ecdf(samples: &[f64]) -> Result<DistributionCurve> {
    if samples.is_empty() {
        return Err(Error::Domain { op: "natural_ecdf", msg: "no samples".into() });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut grid = Vec::with_capacity(sorted.len());
    let mut values = Vec::with_capacity(sorted.len());
    for (i, &x) in sorted.iter().enumerate() {
        let v = (i + 1) as f64 / n;
        if grid.last() == Some(&x) {
            *values.last_mut().unwrap() = v;
        } else {
            grid.push(x);
            values.push(v);
        }
    }
    DistributionCurve::cdf(grid, values, Provenance::MonteCarlo)
}

/// ECDF of the samples evaluated on a caller-provided grid.
pub fn ecdf(samples: &[f64], grid: &[f64]) -> Result<DistributionCurve> {
    if samples.is_empty() {
        return Err(Error::Domain { op: "ecdf", msg: "no samples".into() });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let values = grid
        .iter()
        .map(|&g| sorted.partition_point(|&s| s <= g) as f64 / n)
        .collect();
    DistributionCurve::cdf(grid.to_vec(), values, Provenance::MonteCarlo)
}

/// Sup-norm distance between two CDF curves, each read as a right-continuous
/// step function. Both step functions are constant between points of the
/// merged grid, so the supremum is attained there.
pub fn ks_distance(a: &DistributionCurve, b: &DistributionCurve) -> Result<f64> {
    if a.kind != CurveKind::Cdf || b.kind != CurveKind::Cdf {
        return Err(Error::Domain {
            op: "ks_distance",
            msg: format!("needs two cdf curves, got {:?} and {:?}", a.kind, b.kind),
        });
    }
    let mut d = 0.0f64;
    for &x in a.grid.iter().chain(b.grid.iter()) {
        d = d.max((a.value_at(x) - b.value_at(x)).abs());
    }
    Ok(d)
}
