//! One-dimensional diffusion models `dX = μ(X)dt + σ(X)dW` and their scale
//! and speed densities.

use std::f64::consts::LN_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::quadrature::{
    adaptive, integrate, integrate_finite, integrate_from_neg_infinity, integrate_to_boundary,
    integrate_to_infinity, QuadratureConfig,
};

/// Left end of the state interval. The right end is always `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LowerBoundary {
    NegInfinity,
    Zero,
}

impl LowerBoundary {
    pub fn value(self) -> f64 {
        match self {
            LowerBoundary::NegInfinity => f64::NEG_INFINITY,
            LowerBoundary::Zero => 0.0,
        }
    }
}

const SCALE_TABLE_CELLS: usize = 2048;

/// `ln S'` tabulated on the working interval of a generic model.
#[derive(Debug)]
struct ScaleTable {
    lo: f64,
    step: f64,
    ln_s: Vec<f64>,
}

#[derive(Debug)]
pub struct GenericModel {
    drift: Expr,
    volatility: Expr,
    lower: LowerBoundary,
    working: (f64, f64),
    anchor: f64,
    table: ScaleTable,
}

impl GenericModel {
    fn slope(&self, x: f64) -> f64 {
        let s = self.volatility.eval(x);
        -2.0 * self.drift.eval(x) / (s * s)
    }

    fn ln_scale(&self, x: f64) -> f64 {
        let t = &self.table;
        let hi = t.lo + t.step * SCALE_TABLE_CELLS as f64;
        if x < t.lo || x > hi {
            let (edge, v) = if x < t.lo {
                (t.lo, t.ln_s[0])
            } else {
                (hi, t.ln_s[SCALE_TABLE_CELLS])
            };
            let cfg = QuadratureConfig::precise();
            return match adaptive(&|z| self.slope(z), edge, x, &cfg) {
                Ok(e) => v + e.value,
                Err(_) => f64::NAN,
            };
        }
        // cubic Hermite interpolation with exact nodal slopes
        let pos = ((x - t.lo) / t.step).min(SCALE_TABLE_CELLS as f64 - 1e-9);
        let i = pos.floor() as usize;
        let u = pos - i as f64;
        let x0 = t.lo + t.step * i as f64;
        let (y0, y1) = (t.ln_s[i], t.ln_s[i + 1]);
        let (d0, d1) = (self.slope(x0) * t.step, self.slope(x0 + t.step) * t.step);
        let u2 = u * u;
        let u3 = u2 * u;
        (2.0 * u3 - 3.0 * u2 + 1.0) * y0
            + (u3 - 2.0 * u2 + u) * d0
            + (-2.0 * u3 + 3.0 * u2) * y1
            + (u3 - u2) * d1
    }

    pub fn working_interval(&self) -> (f64, f64) {
        self.working
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn drift_source(&self) -> &str {
        self.drift.source()
    }

    pub fn volatility_source(&self) -> &str {
        self.volatility.source()
    }
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    /// `dX = μ dt + dW` on ℝ.
    DriftedBm { mu: f64 },
    /// `dX = -κ X dt + dW` on ℝ.
    OrnsteinUhlenbeck { kappa: f64 },
    /// User-supplied coefficient expressions.
    Generic(Arc<GenericModel>),
}

/// A time-homogeneous one-dimensional diffusion with natural boundaries.
///
/// Scale-density anchors: drifted BM uses `S'(x) = e^{-2μx}`, OU uses
/// `S'(x) = e^{κx²}`, and generic models integrate from the midpoint of the
/// working interval. Every downstream threshold depends only on ratios in
/// which this anchor cancels.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    kind: ModelKind,
}

impl DiffusionModel {
    pub fn drifted_bm(mu: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::invalid("BM drift must be finite"));
        }
        Ok(Self {
            kind: ModelKind::DriftedBm { mu },
        })
    }

    pub fn ornstein_uhlenbeck(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::invalid("OU mean-reversion rate κ must be positive"));
        }
        Ok(Self {
            kind: ModelKind::OrnsteinUhlenbeck { kappa },
        })
    }

    /// Builds a model from expression strings for `μ(x)` and `σ(x)`.
    pub fn generic(
        drift: &str,
        volatility: &str,
        lower: LowerBoundary,
        working: (f64, f64),
    ) -> Result<Self> {
        let drift = Expr::parse(drift)?;
        let volatility = Expr::parse(volatility)?;
        let (lo, hi) = working;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::invalid(format!("bad working interval [{lo}, {hi}]")));
        }
        if lower == LowerBoundary::Zero && lo <= 0.0 {
            return Err(Error::invalid(
                "working interval must lie inside (0, ∞) for a model on the positive half-line",
            ));
        }
        let step = (hi - lo) / SCALE_TABLE_CELLS as f64;
        for i in 0..=SCALE_TABLE_CELLS {
            let x = lo + step * i as f64;
            let s = volatility.eval(x);
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("σ({x}) = {s} is not positive")));
            }
            if !drift.eval(x).is_finite() {
                return Err(Error::invalid(format!("μ({x}) is not finite")));
            }
        }
        let anchor = 0.5 * (lo + hi);
        let mut model = GenericModel {
            drift,
            volatility,
            lower,
            working,
            anchor,
            table: ScaleTable {
                lo,
                step,
                ln_s: Vec::new(),
            },
        };
        // cumulative ∫ slope from lo, then shift so ln S'(anchor) = 0
        let cfg = QuadratureConfig::precise();
        let mut ln_s = Vec::with_capacity(SCALE_TABLE_CELLS + 1);
        ln_s.push(0.0);
        let mut acc = 0.0;
        for i in 0..SCALE_TABLE_CELLS {
            let a = lo + step * i as f64;
            acc += adaptive(&|z| model.slope(z), a, a + step, &cfg)?.value;
            ln_s.push(acc);
        }
        let shift = ln_s[SCALE_TABLE_CELLS / 2];
        for v in &mut ln_s {
            *v -= shift;
        }
        model.table.ln_s = ln_s;
        Ok(Self {
            kind: ModelKind::Generic(Arc::new(model)),
        })
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn name(&self) -> String {
        match &self.kind {
            ModelKind::DriftedBm { mu } => format!("drifted-bm(mu={mu})"),
            ModelKind::OrnsteinUhlenbeck { kappa } => format!("ou(kappa={kappa})"),
            ModelKind::Generic(g) => format!(
                "generic(mu={:?}, sigma={:?})",
                g.drift.source(),
                g.volatility.source()
            ),
        }
    }

    pub fn drift(&self, x: f64) -> f64 {
        match &self.kind {
            ModelKind::DriftedBm { mu } => *mu,
            ModelKind::OrnsteinUhlenbeck { kappa } => -kappa * x,
            ModelKind::Generic(g) => g.drift.eval(x),
        }
    }

    pub fn volatility(&self, x: f64) -> f64 {
        match &self.kind {
            ModelKind::DriftedBm { .. } | ModelKind::OrnsteinUhlenbeck { .. } => 1.0,
            ModelKind::Generic(g) => g.volatility.eval(x),
        }
    }

    pub fn lower(&self) -> f64 {
        match &self.kind {
            ModelKind::Generic(g) => g.lower.value(),
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn upper(&self) -> f64 {
        f64::INFINITY
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower() && x < self.upper()
    }

    /// Typical length over which the dynamics change; sets search widths.
    pub fn length_scale(&self) -> f64 {
        match &self.kind {
            ModelKind::DriftedBm { .. } => 1.0,
            ModelKind::OrnsteinUhlenbeck { kappa } => 1.0 / (2.0 * kappa).sqrt(),
            ModelKind::Generic(g) => (g.working.1 - g.working.0) / 20.0,
        }
    }

    /// Interval over which grid scans (audits, identity checks) run.
    pub fn working_interval(&self, x0: f64) -> (f64, f64) {
        match &self.kind {
            ModelKind::Generic(g) => g.working,
            _ => {
                let h = 10.0 * self.length_scale();
                (x0 - h, x0 + h)
            }
        }
    }

    fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "x = {x} outside the state interval ({}, {})",
                self.lower(),
                self.upper()
            )))
        }
    }

    /// `ln S'(x)`; no domain check.
    pub fn ln_scale_density(&self, x: f64) -> f64 {
        match &self.kind {
            ModelKind::DriftedBm { mu } => -2.0 * mu * x,
            ModelKind::OrnsteinUhlenbeck { kappa } => kappa * x * x,
            ModelKind::Generic(g) => g.ln_scale(x),
        }
    }

    pub fn scale_density(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(self.ln_scale_density(x).exp())
    }

    /// `ln m'(x) = ln 2 - 2 ln σ(x) - ln S'(x)`; no domain check.
    pub fn ln_speed_density(&self, x: f64) -> f64 {
        let s = self.volatility(x);
        LN_2 - 2.0 * s.ln() - self.ln_scale_density(x)
    }

    pub fn speed_density(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(self.ln_speed_density(x).exp())
    }

    /// `∫_l^x f`, where `l` is the lower boundary of the state interval.
    pub fn integrate_lower<F: Fn(f64) -> f64 + ?Sized>(
        &self,
        f: &F,
        x: f64,
        breaks: &[f64],
        cfg: &QuadratureConfig,
    ) -> Result<f64> {
        let l = self.lower();
        if l.is_finite() {
            integrate_to_boundary(f, x, l, breaks, cfg).map(|v| -v)
        } else {
            integrate_from_neg_infinity(f, x, breaks, cfg)
        }
    }

    /// `∫_x^u f`, where `u = +∞`.
    pub fn integrate_upper<F: Fn(f64) -> f64 + ?Sized>(
        &self,
        f: &F,
        x: f64,
        breaks: &[f64],
        cfg: &QuadratureConfig,
    ) -> Result<f64> {
        integrate_to_infinity(f, x, breaks, cfg)
    }

    /// `∫_a^b f` where either end may coincide with a boundary of the
    /// state interval.
    pub fn integrate_between<F: Fn(f64) -> f64 + ?Sized>(
        &self,
        f: &F,
        a: f64,
        b: f64,
        breaks: &[f64],
        cfg: &QuadratureConfig,
    ) -> Result<f64> {
        if a > b {
            return self.integrate_between(f, b, a, breaks, cfg).map(|v| -v);
        }
        let l = self.lower();
        let a_is_boundary = a <= l;
        let b_is_boundary = b >= self.upper();
        match (a_is_boundary, b_is_boundary) {
            (false, false) => integrate_finite(f, a, b, breaks, cfg),
            (true, false) => self.integrate_lower(f, b, breaks, cfg),
            (false, true) => self.integrate_upper(f, a, breaks, cfg),
            (true, true) => {
                let mid = if l.is_finite() { l + 1.0 } else { 0.0 };
                Ok(self.integrate_lower(f, mid, breaks, cfg)?
                    + self.integrate_upper(f, mid, breaks, cfg)?)
            }
        }
    }

    /// Speed measure `m(a, b) = ∫_a^b m'`. Limits may sit on the boundaries
    /// (pass `f64::NEG_INFINITY`/`0.0` for `l`, `f64::INFINITY` for `u`).
    pub fn speed_measure(&self, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<f64> {
        if a > b {
            return Err(Error::Domain(format!("speed_measure needs a ≤ b, got {a} > {b}")));
        }
        let l = self.lower();
        if a < l || b > self.upper() {
            return Err(Error::Domain(format!(
                "[{a}, {b}] is not inside the closure of the state interval"
            )));
        }
        let dens = |z: f64| self.ln_speed_density(z).exp();
        if a.is_finite() && b.is_finite() && a > l {
            return integrate(&dens, a, b, &[], cfg);
        }
        self.integrate_between(&dens, a, b, &[], cfg)
    }
}
