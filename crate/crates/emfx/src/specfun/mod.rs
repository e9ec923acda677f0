//! Numerical kernels shared by the analytic distribution machinery: gamma
//! family evaluations, the Gauss hypergeometric factor used by closed-form
//! interference functionals, quadrature rules, and two independent
//! characteristic-function inversion engines (per-point Gil-Pelaez and a
//! Filon-type table builder for batch evaluation).

pub mod cftable;
pub mod gamma;
pub mod gilpelaez;
pub mod hyp2f1;
pub mod quad;

use std::sync::Arc;

use num_complex::Complex64;

pub use cftable::CfTable;
pub use gilpelaez::{gil_pelaez_cdf, gil_pelaez_pdf};
pub use hyp2f1::hyp2f1_omega;

/// How fast |Phi(t)| falls off at large t. `Exponential` lets the inversion
/// engines accept tail termination slightly earlier; the other two are
/// treated identically and exist so callers can record what they know.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayClass {
    Exponential,
    Algebraic,
    Unknown,
}

/// Knobs for the half-line inversion integrals. Defaults reproduce the
/// reference tuning; loosening `rel_tol` trades accuracy for fewer panels.
#[derive(Clone, Copy, Debug)]
pub struct QuadratureSpec {
    /// Head cutoff as a fraction of the natural frequency 1/scale_hint: the
    /// integral over (0, t_start/scale) is taken as one midpoint rectangle.
    pub t_start: f64,
    /// Hard upper truncation of the t-integral; None lets the engine run
    /// until the integrand has demonstrably died.
    pub t_max_hint: Option<f64>,
    /// Panel sums below abs_tol*(1 + |integral|) count as dead tail.
    pub abs_tol: f64,
    /// Relative tolerance for accepting an extrapolated tail limit.
    pub rel_tol: f64,
    /// Cap on oscillatory marching panels before giving up.
    pub max_panels: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            t_start: 1e-13,
            t_max_hint: None,
            abs_tol: 1e-15,
            rel_tol: 1e-12,
            max_panels: 40_000,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> crate::error::Result<()> {
        if !(self.t_start > 0.0 && self.t_start.is_finite()) {
            return Err(crate::error::Error::Domain {
                op: "QuadratureSpec",
                msg: format!("t_start must be positive, got {}", self.t_start),
            });
        }
        if self.abs_tol <= 0.0 || self.rel_tol <= 0.0 || self.max_panels == 0 {
            return Err(crate::error::Error::Domain {
                op: "QuadratureSpec",
                msg: "tolerances must be positive and max_panels >= 1".into(),
            });
        }
        Ok(())
    }
}

/// A characteristic function Phi(t) = E[exp(j t X)] of a nonnegative random
/// variable, packaged with the scale information inversion engines need.
#[derive(Clone)]
pub struct CfHandle {
    eval: Arc<dyn Fn(f64) -> Complex64 + Send + Sync>,
    /// Typical magnitude of X. Sets the smallest useful frequency
    /// (t ~ 1/scale starts resolving the distribution) and the head cutoff.
    pub scale_hint: f64,
    pub decay_class: DecayClass,
}

impl CfHandle {
    pub fn new<F>(scale_hint: f64, eval: F) -> Self
    where
        F: Fn(f64) -> Complex64 + Send + Sync + 'static,
    {
        assert!(
            scale_hint.is_finite() && scale_hint > 0.0,
            "scale_hint must be a positive magnitude, got {scale_hint}"
        );
        Self { eval: Arc::new(eval), scale_hint, decay_class: DecayClass::Unknown }
    }

    pub fn with_decay(mut self, decay_class: DecayClass) -> Self {
        self.decay_class = decay_class;
        self
    }

    #[inline]
    pub fn eval(&self, t: f64) -> Complex64 {
        (self.eval)(t)
    }
}
