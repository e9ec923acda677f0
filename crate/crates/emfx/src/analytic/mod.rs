//! Closed-form and semi-analytic distribution machinery: characteristic
//! functions of the exposure under each deployment scenario, their inversion
//! into CDF/PDF curves, and the throughput-normalized exposure CDFs built on
//! conditional serving-distance laws and the g-root solver.

pub mod cf;
pub mod exposure;
pub mod rebt;

use crate::error::{Error, Result};
use crate::spatial::{Model, NetworkParams, Rat};
use crate::specfun::QuadratureSpec;

/// Everything needed to evaluate one scenario: which technology mix, which
/// spatial model, the physical parameters, and the numerical budgets.
#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub rat: Rat,
    pub model: Model,
    pub params: NetworkParams,
    pub truncation: TruncationSpec,
}

impl ScenarioSpec {
    pub fn new(rat: Rat, model: Model, params: NetworkParams) -> Self {
        let truncation = TruncationSpec::defaults_for(rat, &params);
        Self { rat, model, params, truncation }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.truncation.validate()
    }
}

/// Cutoffs for the infinite products and sums of the beta-Ginibre formulas,
/// plus the inversion quadrature knobs and the sample budget of the
/// conditional Monte Carlo integrator.
#[derive(Clone, Debug)]
pub struct TruncationSpec {
    /// Hard cap on the per-index factors treated explicitly. Far factors
    /// are folded in through a moment expansion, so this bounds only the
    /// region where the serving-distance conditioning is felt.
    pub k_max_products: usize,
    /// Cap on the serving-index sum.
    pub s_max: usize,
    pub quad: QuadratureSpec,
    /// Sample budget of the conditional Monte Carlo integration.
    pub mc_integration_n: usize,
    /// Substream seed of that integration.
    pub mc_seed: u64,
}

impl TruncationSpec {
    /// Index cutoffs sized to the process: the serving index and the
    /// conditioning window live below ~100/beta for any window of interest.
    pub fn defaults_for(rat: Rat, params: &NetworkParams) -> Self {
        let beta = match rat {
            Rat::FiveG => params.beta5,
            Rat::FourG | Rat::EnDc => params.beta4,
        };
        let k = (100.0 / beta).ceil() as usize;
        TruncationSpec {
            k_max_products: k,
            s_max: k,
            quad: QuadratureSpec::default(),
            mc_integration_n: 20_000,
            mc_seed: 0x00e1_f0cb,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max_products == 0 || self.s_max == 0 || self.mc_integration_n == 0 {
            return Err(Error::Domain {
                op: "TruncationSpec::validate",
                msg: "k_max_products, s_max and mc_integration_n must be >= 1".into(),
            });
        }
        self.quad.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveKind {
    Cdf,
    Pdf,
    Jfunction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    MonteCarlo,
    Empirical,
}

/// A function sampled on a sorted grid. CDF-kind curves are monotone and in
/// [0, 1] after construction; `correction` records how much isotonic
/// smoothing moved the raw values (L1, zero for clean input).
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: CurveKind,
    pub provenance: Provenance,
    pub correction: f64,
}

impl DistributionCurve {
    /// Builds a CDF curve, enforcing monotonicity by isotonic regression and
    /// clipping into [0, 1]. Raw values more than 1e-3 outside [0, 1] are
    /// rejected as evidence of a broken inversion rather than noise.
    pub fn cdf(grid: Vec<f64>, raw: Vec<f64>, provenance: Provenance) -> Result<Self> {
        check_grid(&grid, raw.len())?;
        for (i, v) in raw.iter().enumerate() {
            if !v.is_finite() || *v < -1e-3 || *v > 1.0 + 1e-3 {
                return Err(Error::Domain {
                    op: "DistributionCurve::cdf",
                    msg: format!("value {v} at grid point {} is not a probability", grid[i]),
                });
            }
        }
        let fitted = isotonic(&raw);
        let correction: f64 = fitted.iter().zip(&raw).map(|(a, b)| (a - b).abs()).sum();
        let values = fitted.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self { grid, values, kind: CurveKind::Cdf, provenance, correction })
    }

    /// Builds a PDF curve; negative noise is clipped to zero.
    pub fn pdf(grid: Vec<f64>, raw: Vec<f64>, provenance: Provenance) -> Result<Self> {
        check_grid(&grid, raw.len())?;
        let mut correction = 0.0;
        let values = raw
            .into_iter()
            .map(|v| {
                if v < 0.0 {
                    correction += -v;
                }
                v.max(0.0)
            })
            .collect();
        Ok(Self { grid, values, kind: CurveKind::Pdf, provenance, correction })
    }

    /// Builds a J-function curve (no shape constraints).
    pub fn jfunction(grid: Vec<f64>, values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        check_grid(&grid, values.len())?;
        Ok(Self { grid, values, kind: CurveKind::Jfunction, provenance, correction: 0.0 })
    }

    /// Right-continuous step evaluation: the value at the largest grid point
    /// <= x, the left limit below the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        match self.grid.partition_point(|g| *g <= x) {
            0 => match self.kind {
                CurveKind::Cdf => 0.0,
                _ => self.values[0],
            },
            i => self.values[i - 1],
        }
    }

    /// Smallest grid point where the CDF reaches q, by linear interpolation
    /// between bracketing grid points.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if self.kind != CurveKind::Cdf {
            return Err(Error::Domain {
                op: "DistributionCurve::quantile",
                msg: "quantiles are defined for cdf curves only".into(),
            });
        }
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Domain {
                op: "DistributionCurve::quantile",
                msg: format!("q must lie in [0, 1], got {q}"),
            });
        }
        let i = self.values.partition_point(|v| *v < q);
        if i == 0 {
            return Ok(self.grid[0]);
        }
        if i == self.values.len() {
            return Err(Error::Domain {
                op: "DistributionCurve::quantile",
                msg: format!("curve tops out at {} < q = {q}", self.values.last().unwrap()),
            });
        }
        let (x0, x1) = (self.grid[i - 1], self.grid[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        if v1 <= v0 {
            return Ok(x1);
        }
        Ok(x0 + (x1 - x0) * (q - v0) / (v1 - v0))
    }

    pub fn median(&self) -> Result<f64> {
        self.quantile(0.5)
    }
}

fn check_grid(grid: &[f64], n_values: usize) -> Result<()> {
    if grid.is_empty() || grid.len() != n_values {
        return Err(Error::Domain {
            op: "DistributionCurve",
            msg: format!("grid length {} does not match {} values", grid.len(), n_values),
        });
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::Domain {
            op: "DistributionCurve",
            msg: "grid must be finite and strictly increasing".into(),
        });
    }
    Ok(())
}

/// Pool-adjacent-violators fit: the closest nondecreasing sequence in least
/// squares. Already-monotone input comes back unchanged.
fn isotonic(raw: &[f64]) -> Vec<f64> {
    // (mean, count) blocks; merging keeps the running mean exact.
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(raw.len());
    for &v in raw {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            blocks.pop();
            let n = n1 + n2;
            blocks.push(((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n));
        }
    }
    let mut out = Vec::with_capacity(raw.len());
    for (m, n) in blocks {
        out.extend(std::iter::repeat(m).take(n));
    }
    out
}
