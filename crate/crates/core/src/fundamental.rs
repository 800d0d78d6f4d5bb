//! Fundamental solutions `ψ_s` (increasing) and `φ_s` (decreasing) of
//! `(𝒜 - s) f = 0`, stored in logarithmic form.
//!
//! Everything downstream works with `ln f`, `f'/f` and `f''/f`: the
//! fundamental solutions of an OU process at rate 1000 span thousands of
//! orders of magnitude, and only ratios of them ever enter a formula.
//!
//! The OU pair is tabulated once per rate on a fine grid (quintic Hermite
//! in `ln ψ` and `ψ'/ψ`, both fed by exact parabolic-cylinder values and the
//! Riccati equation), because each direct evaluation is itself a
//! quadrature. Points off the grid fall back to the direct formula.

use std::sync::Arc;

use serde::Serialize;

use crate::diffusion::{DiffusionModel, ModelKind};
use crate::error::{Error, Result};
use crate::special::{ln_pcf_unchecked, pcf_log_derivative_unchecked};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairSource {
    ClosedForm,
    NumericOde,
}

/// Value of a fundamental solution at a point, in log form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    /// `ln f(x)`
    pub ln_value: f64,
    /// `f'(x) / f(x)`
    pub log_d1: f64,
    /// `f''(x) / f(x)`
    pub log_d2: f64,
}

impl Branch {
    pub fn value(&self) -> f64 {
        self.ln_value.exp()
    }

    pub fn d1(&self) -> f64 {
        self.value() * self.log_d1
    }

    pub fn d2(&self) -> f64 {
        self.value() * self.log_d2
    }
}

const RICCATI_STEPS: usize = 8000;
/// OU table: half-width and node spacing in units of `1/sqrt(2κ)`.
const OU_TABLE_HALF_WIDTH: f64 = 24.0;
const OU_TABLE_NODES_PER_UNIT: f64 = 32.0;

/// Equally spaced table of `ln f`, `q = f'/f`, `q'` and optionally `q''`.
#[derive(Debug)]
struct LogTable {
    lo: f64,
    step: f64,
    ln: Vec<f64>,
    q: Vec<f64>,
    dq: Vec<f64>,
    ddq: Option<Vec<f64>>,
}

impl LogTable {
    fn hi(&self) -> f64 {
        self.lo + self.step * (self.ln.len() - 1) as f64
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.ln.len() - 1;
        let pos = ((x - self.lo) / self.step).clamp(0.0, n as f64);
        let i = (pos.floor() as usize).min(n - 1);
        (i, pos - i as f64)
    }

    /// `(ln f, f'/f)` inside the table.
    fn eval(&self, x: f64) -> (f64, f64) {
        let (i, u) = self.locate(x);
        let h = self.step;
        let b = quintic_basis(u);
        let ln = b[0] * self.ln[i]
            + h * b[1] * self.q[i]
            + h * h * b[2] * self.dq[i]
            + b[5] * self.ln[i + 1]
            + h * b[4] * self.q[i + 1]
            + h * h * b[3] * self.dq[i + 1];
        let q = match &self.ddq {
            Some(ddq) => {
                b[0] * self.q[i]
                    + h * b[1] * self.dq[i]
                    + h * h * b[2] * ddq[i]
                    + b[5] * self.q[i + 1]
                    + h * b[4] * self.dq[i + 1]
                    + h * h * b[3] * ddq[i + 1]
            }
            None => {
                let (h00, h10, h01, h11) = cubic_basis(u);
                h00 * self.q[i] + h10 * h * self.dq[i] + h01 * self.q[i + 1] + h11 * h * self.dq[i + 1]
            }
        };
        (ln, q)
    }

    /// As `eval`, extending `ln f` linearly past the ends.
    fn eval_extrapolated(&self, x: f64) -> (f64, f64) {
        let n = self.ln.len() - 1;
        if x < self.lo {
            (self.ln[0] + self.q[0] * (x - self.lo), self.q[0])
        } else if x > self.hi() {
            (self.ln[n] + self.q[n] * (x - self.hi()), self.q[n])
        } else {
            self.eval(x)
        }
    }
}

/// Quintic Hermite basis on `[0, 1]`, ordered
/// `[H0 (f0), H1 (f0'), H2 (f0''), H3 (f1''), H4 (f1'), H5 (f1)]`.
fn quintic_basis(u: f64) -> [f64; 6] {
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u3 * u;
    let u5 = u4 * u;
    [
        1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5,
        u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5,
        0.5 * u2 - 1.5 * u3 + 1.5 * u4 - 0.5 * u5,
        0.5 * u3 - u4 + 0.5 * u5,
        -4.0 * u3 + 7.0 * u4 - 3.0 * u5,
        10.0 * u3 - 15.0 * u4 + 6.0 * u5,
    ]
}

fn cubic_basis(u: f64) -> (f64, f64, f64, f64) {
    let u2 = u * u;
    let u3 = u2 * u;
    (
        2.0 * u3 - 3.0 * u2 + 1.0,
        u3 - 2.0 * u2 + u,
        -2.0 * u3 + 3.0 * u2,
        u3 - u2,
    )
}

#[derive(Debug, Clone)]
enum Repr {
    Bm {
        up: f64,
        down: f64,
    },
    /// `table` holds `ψ`; `φ(x) = ψ(-x)` by symmetry.
    Ou {
        kappa: f64,
        nu: f64,
        root: f64,
        table: Arc<LogTable>,
    },
    Numeric {
        psi: Arc<LogTable>,
        phi: Arc<LogTable>,
        mid: f64,
    },
}

#[derive(Debug, Clone)]
pub struct FundamentalPair {
    rate: f64,
    model: DiffusionModel,
    repr: Repr,
    ln_c_psi: f64,
    ln_c_phi: f64,
    ln_wronskian: f64,
}

/// Closed forms for the builtin models; Riccati shooting for generic ones.
pub fn fundamental_pair(model: &DiffusionModel, s: f64) -> Result<FundamentalPair> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid(format!("rate s must be positive, got {s}")));
    }
    let repr = match model.kind() {
        ModelKind::DriftedBm { mu } => {
            let k = (mu * mu + 2.0 * s).sqrt();
            Repr::Bm {
                up: k - mu,
                down: k + mu,
            }
        }
        ModelKind::OrnsteinUhlenbeck { kappa } => ou_repr(*kappa, s)?,
        ModelKind::Generic(g) => numeric_repr(model, s, g.working_interval())?,
    };
    FundamentalPair::assemble(model, s, repr)
}

fn ou_direct(kappa: f64, nu: f64, root: f64, x: f64) -> (f64, f64) {
    (
        0.5 * kappa * x * x + ln_pcf_unchecked(nu, -x * root),
        kappa * x - root * pcf_log_derivative_unchecked(nu, -x * root),
    )
}

fn ou_repr(kappa: f64, s: f64) -> Result<Repr> {
    let nu = -s / kappa;
    let root = (2.0 * kappa).sqrt();
    let unit = 1.0 / root;
    let half = OU_TABLE_HALF_WIDTH * unit;
    let n = (2.0 * OU_TABLE_HALF_WIDTH * OU_TABLE_NODES_PER_UNIT) as usize;
    let step = 2.0 * half / n as f64;
    let mut ln = Vec::with_capacity(n + 1);
    let mut q = Vec::with_capacity(n + 1);
    let mut dq = Vec::with_capacity(n + 1);
    let mut ddq = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let x = -half + step * i as f64;
        let (l, d) = ou_direct(kappa, nu, root, x);
        if !(l.is_finite() && d.is_finite()) {
            return Err(Error::numerical(format!(
                "parabolic cylinder evaluation failed at x={x:.4} for rate {s}"
            )));
        }
        // Riccati with μ = -κx, σ = 1: q' = 2s + 2κxq - q²
        let d1 = 2.0 * s + 2.0 * kappa * x * d - d * d;
        let d2 = 2.0 * kappa * d + 2.0 * kappa * x * d1 - 2.0 * d * d1;
        ln.push(l);
        q.push(d);
        dq.push(d1);
        ddq.push(d2);
    }
    Ok(Repr::Ou {
        kappa,
        nu,
        root,
        table: Arc::new(LogTable {
            lo: -half,
            step,
            ln,
            q,
            dq,
            ddq: Some(ddq),
        }),
    })
}

impl FundamentalPair {
    /// Numeric construction for any model on the given working interval.
    /// Used to cross-check the closed forms.
    pub fn numeric(model: &DiffusionModel, s: f64, interval: (f64, f64)) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!("rate s must be positive, got {s}")));
        }
        let repr = numeric_repr(model, s, interval)?;
        Self::assemble(model, s, repr)
    }

    fn assemble(model: &DiffusionModel, s: f64, repr: Repr) -> Result<Self> {
        let mut pair = Self {
            rate: s,
            model: model.clone(),
            repr,
            ln_c_psi: 0.0,
            ln_c_phi: 0.0,
            ln_wronskian: 0.0,
        };
        let x_ref = match &pair.repr {
            Repr::Numeric { mid, .. } => *mid,
            _ => 0.0,
        };
        let w = pair.ln_wronskian_at(x_ref);
        if !w.is_finite() {
            return Err(Error::numerical(format!(
                "Wronskian evaluation failed at x={x_ref} for rate {s}"
            )));
        }
        pair.ln_wronskian = w;
        Ok(pair)
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn model(&self) -> &DiffusionModel {
        &self.model
    }

    pub fn source(&self) -> PairSource {
        match self.repr {
            Repr::Numeric { .. } => PairSource::NumericOde,
            _ => PairSource::ClosedForm,
        }
    }

    /// Same pair with `ψ ← c_psi·ψ`, `φ ← c_phi·φ`.
    pub fn rescaled(&self, c_psi: f64, c_phi: f64) -> Self {
        let mut out = self.clone();
        out.ln_c_psi += c_psi.ln();
        out.ln_c_phi += c_phi.ln();
        out.ln_wronskian += c_psi.ln() + c_phi.ln();
        out
    }

    fn second_from_first(&self, x: f64, d1: f64) -> f64 {
        let s = self.model.volatility(x);
        2.0 * (self.rate - self.model.drift(x) * d1) / (s * s)
    }

    /// `(ln ψ, ψ'/ψ)` without the rescaling constant.
    fn psi_raw(&self, x: f64) -> (f64, f64) {
        match &self.repr {
            Repr::Bm { up, .. } => (up * x, *up),
            Repr::Ou {
                kappa,
                nu,
                root,
                table,
            } => {
                if x >= table.lo && x <= table.hi() {
                    table.eval(x)
                } else {
                    ou_direct(*kappa, *nu, *root, x)
                }
            }
            Repr::Numeric { psi, .. } => psi.eval_extrapolated(x),
        }
    }

    fn phi_raw(&self, x: f64) -> (f64, f64) {
        match &self.repr {
            Repr::Bm { down, .. } => (-down * x, -down),
            Repr::Ou { .. } => {
                let (l, d) = self.psi_raw(-x);
                (l, -d)
            }
            Repr::Numeric { phi, .. } => phi.eval_extrapolated(x),
        }
    }

    /// `ln ψ_s(x)`
    pub fn ln_psi(&self, x: f64) -> f64 {
        self.ln_c_psi + self.psi_raw(x).0
    }

    /// `ln φ_s(x)`
    pub fn ln_phi(&self, x: f64) -> f64 {
        self.ln_c_phi + self.phi_raw(x).0
    }

    /// `ψ_s'(x) / ψ_s(x)`
    pub fn psi_log_derivative(&self, x: f64) -> f64 {
        self.psi_raw(x).1
    }

    /// `φ_s'(x) / φ_s(x)`
    pub fn phi_log_derivative(&self, x: f64) -> f64 {
        self.phi_raw(x).1
    }

    pub fn psi_branch(&self, x: f64) -> Branch {
        let (l, d1) = self.psi_raw(x);
        Branch {
            ln_value: self.ln_c_psi + l,
            log_d1: d1,
            log_d2: self.second_from_first(x, d1),
        }
    }

    pub fn phi_branch(&self, x: f64) -> Branch {
        let (l, d1) = self.phi_raw(x);
        Branch {
            ln_value: self.ln_c_phi + l,
            log_d1: d1,
            log_d2: self.second_from_first(x, d1),
        }
    }

    pub fn psi(&self, x: f64) -> f64 {
        self.ln_psi(x).exp()
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.ln_phi(x).exp()
    }

    pub fn psi_prime(&self, x: f64) -> f64 {
        self.psi_branch(x).d1()
    }

    pub fn phi_prime(&self, x: f64) -> f64 {
        self.phi_branch(x).d1()
    }

    pub fn psi_second(&self, x: f64) -> f64 {
        self.psi_branch(x).d2()
    }

    pub fn phi_second(&self, x: f64) -> f64 {
        self.phi_branch(x).d2()
    }

    /// `ln B_s` fixed at construction.
    pub fn ln_wronskian(&self) -> f64 {
        self.ln_wronskian
    }

    /// The Wronskian `B_s = (ψ'φ - φ'ψ)/S'`.
    pub fn wronskian(&self) -> f64 {
        self.ln_wronskian.exp()
    }

    /// `ln B_s` re-evaluated at `x`; constant in `x` up to numerical error.
    pub fn ln_wronskian_at(&self, x: f64) -> f64 {
        let (lp, dp) = self.psi_raw(x);
        let (lf, df) = self.phi_raw(x);
        self.ln_c_psi + self.ln_c_phi + lp + lf - self.model.ln_scale_density(x) + (dp - df).ln()
    }

    pub fn wronskian_at(&self, x: f64) -> f64 {
        self.ln_wronskian_at(x).exp()
    }

    /// `ψ(x)φ(x)/B = S'(x) / (ψ'/ψ - φ'/φ)`, the diagonal of the Green
    /// kernel. Independent of the normalization of either solution.
    pub fn green_diagonal(&self, x: f64) -> f64 {
        let gap = self.psi_log_derivative(x) - self.phi_log_derivative(x);
        self.model.ln_scale_density(x).exp() / gap
    }
}

/// Shoots the Riccati equation `q' = 2(s - μq)/σ² - q²` for `q = f'/f`:
/// forward from the left edge for `ψ` and backward from the right edge for
/// `φ`, both directions being the stable ones. Starting values are the roots
/// of the frozen-coefficient quadratic.
fn numeric_repr(model: &DiffusionModel, s: f64, interval: (f64, f64)) -> Result<Repr> {
    let (lo, hi) = interval;
    if !(lo < hi) || !model.contains(lo) || !model.contains(hi) {
        return Err(Error::invalid(format!(
            "working interval [{lo}, {hi}] must lie inside the state interval"
        )));
    }
    let n = RICCATI_STEPS;
    let h = (hi - lo) / n as f64;
    let rhs = |x: f64, q: f64| {
        let sig = model.volatility(x);
        2.0 * (s - model.drift(x) * q) / (sig * sig) - q * q
    };
    let frozen_root = |x: f64, sign: f64| {
        let mu = model.drift(x);
        let sig2 = model.volatility(x).powi(2);
        (-mu + sign * (mu * mu + 2.0 * s * sig2).sqrt()) / sig2
    };
    // RK4 on the augmented system (q, ln f) with (ln f)' = q
    let integrate = |x0: f64, q0: f64, dir: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut qs = vec![q0];
        let mut ls = vec![0.0];
        let (mut x, mut q, mut l) = (x0, q0, 0.0);
        let dh = dir * h;
        for _ in 0..n {
            let k1 = rhs(x, q);
            let q2 = q + 0.5 * dh * k1;
            let k2 = rhs(x + 0.5 * dh, q2);
            let q3 = q + 0.5 * dh * k2;
            let k3 = rhs(x + 0.5 * dh, q3);
            let q4 = q + dh * k3;
            let k4 = rhs(x + dh, q4);
            l += dh / 6.0 * (q + 2.0 * q2 + 2.0 * q3 + q4);
            q += dh / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            x += dh;
            if !q.is_finite() {
                return Err(Error::numerical(format!(
                    "Riccati integration blew up at x={x:.4} (rate {s})"
                )));
            }
            qs.push(q);
            ls.push(l);
        }
        Ok((qs, ls))
    };
    let (q_psi, ln_psi) = integrate(lo, frozen_root(lo, 1.0), 1.0)?;
    let (mut q_phi, mut ln_phi) = integrate(hi, frozen_root(hi, -1.0), -1.0)?;
    q_phi.reverse();
    ln_phi.reverse();
    if let Some(i) = q_psi.iter().position(|&q| q <= 0.0) {
        return Err(Error::numerical(format!(
            "increasing solution lost monotonicity at x={:.4}",
            lo + h * i as f64
        )));
    }
    if let Some(i) = q_phi.iter().position(|&q| q >= 0.0) {
        return Err(Error::numerical(format!(
            "decreasing solution lost monotonicity at x={:.4}",
            lo + h * i as f64
        )));
    }
    // normalize both to 1 at the midpoint
    let mid = n / 2;
    let table = |q: Vec<f64>, ln: Vec<f64>| {
        let c = ln[mid];
        let dq = q
            .iter()
            .enumerate()
            .map(|(i, &qi)| rhs(lo + h * i as f64, qi))
            .collect();
        Arc::new(LogTable {
            lo,
            step: h,
            ln: ln.iter().map(|v| v - c).collect(),
            q,
            dq,
            ddq: None,
        })
    };
    Ok(Repr::Numeric {
        psi: table(q_psi, ln_psi),
        phi: table(q_phi, ln_phi),
        mid: lo + h * mid as f64,
    })
}
