//! Resolvents through the Green kernel, the functionals `K`, `L`, `H`, and
//! the identity checks that tie them together.
//!
//! Kernel integrals are kept in the normalized form
//!
//! ```text
//! Iψ(x) = S'(x) ∫_l^x ψ(y)/ψ(x) f(y) m'(y) dy
//! Iφ(x) = S'(x) ∫_x^u φ(y)/φ(x) f(y) m'(y) dy
//! ```
//!
//! whose integrands are bounded by the local Green kernel, so nothing
//! overflows however large `ψ`, `φ` or `S'` get. In these terms
//!
//! ```text
//! R f    = (Iψ + Iφ) / (ℓψ - ℓφ)
//! (R f)' = (ℓφ Iψ + ℓψ Iφ) / (ℓψ - ℓφ)
//! S' K / ψ = s Iψ - ℓψ f
//! S' L / φ = s Iφ + ℓφ f
//! ```
//!
//! with `ℓψ = ψ'/ψ`, `ℓφ = φ'/φ`. The "hat" functions below return
//! `S'K/ψ` and `S'L/φ`, which have the same sign as `K` and `L`.

use serde::Serialize;

use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::fundamental::FundamentalPair;
use crate::problem::ProblemSpec;
use crate::quadrature::QuadratureConfig;

/// A function together with the points where it is not smooth.
#[derive(Clone, Copy)]
pub struct Source<'a> {
    pub f: &'a dyn Fn(f64) -> f64,
    pub kinks: &'a [f64],
}

impl<'a> Source<'a> {
    pub fn new(f: &'a dyn Fn(f64) -> f64, kinks: &'a [f64]) -> Self {
        Self { f, kinks }
    }

    pub fn smooth(f: &'a dyn Fn(f64) -> f64) -> Self {
        Self { f, kinks: &[] }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    /// `s∫ψ f m' - ψ' f / S'` and its mirror.
    Integral,
    /// Through the first two derivatives of the resolvent.
    Derivative,
    /// `s∫ψ (f(y) - f(x)) m'`, valid under natural boundaries.
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Lower,
    Upper,
}

/// Resolvent value and first two derivatives at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

fn check_point(model: &DiffusionModel, x: f64) -> Result<()> {
    if model.contains(x) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "x = {x} is outside the state interval ({}, {})",
            model.lower(),
            model.upper()
        )))
    }
}

/// `S'(x) ∫_l^x ψ(y)/ψ(x) f(y) m'(y) dy`
pub fn lower_kernel_integral(pair: &FundamentalPair, src: Source, x: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let model = pair.model();
    check_point(model, x)?;
    let shift = model.ln_scale_density(x) - pair.ln_psi(x);
    let w = |y: f64| {
        let v = src.eval(y);
        if v == 0.0 {
            0.0
        } else {
            v * (pair.ln_psi(y) + model.ln_speed_density(y) + shift).exp()
        }
    };
    model.integrate_lower(&w, x, src.kinks, &kernel_cfg(pair, x, cfg))
}

/// `S'(x) ∫_x^u φ(y)/φ(x) f(y) m'(y) dy`
pub fn upper_kernel_integral(pair: &FundamentalPair, src: Source, x: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let model = pair.model();
    check_point(model, x)?;
    let shift = model.ln_scale_density(x) - pair.ln_phi(x);
    let w = |y: f64| {
        let v = src.eval(y);
        if v == 0.0 {
            0.0
        } else {
            v * (pair.ln_phi(y) + model.ln_speed_density(y) + shift).exp()
        }
    };
    model.integrate_upper(&w, x, src.kinks, &kernel_cfg(pair, x, cfg))
}

/// First tail panel no wider than the local decay length of the kernel.
fn kernel_cfg(pair: &FundamentalPair, x: f64, cfg: &QuadratureConfig) -> QuadratureConfig {
    let rate = pair.psi_log_derivative(x) - pair.phi_log_derivative(x);
    let mut c = *cfg;
    if rate.is_finite() && rate > 0.0 {
        c.panel_width = cfg.panel_width.min(4.0 / rate).max(1e-6);
    }
    c
}

/// `(R_s f)(x)` and its first two derivatives.
pub fn resolvent_jet(pair: &FundamentalPair, src: Source, x: f64, cfg: &QuadratureConfig) -> Result<Jet> {
    let ip = lower_kernel_integral(pair, src, x, cfg)?;
    let iq = upper_kernel_integral(pair, src, x, cfg)?;
    let lp = pair.psi_log_derivative(x);
    let lf = pair.phi_log_derivative(x);
    let gap = lp - lf;
    let value = (ip + iq) / gap;
    let d1 = (lf * ip + lp * iq) / gap;
    let model = pair.model();
    let sig = model.volatility(x);
    let d2 = 2.0 * (pair.rate() * value - model.drift(x) * d1 - src.eval(x)) / (sig * sig);
    Ok(Jet { value, d1, d2 })
}

/// `(R_s f)(x)` (`deriv = 0`) or its first/second derivative.
pub fn resolvent(pair: &FundamentalPair, src: Source, x: f64, deriv: u8, cfg: &QuadratureConfig) -> Result<f64> {
    match deriv {
        0 => {
            let ip = lower_kernel_integral(pair, src, x, cfg)?;
            let iq = upper_kernel_integral(pair, src, x, cfg)?;
            Ok((ip + iq) / (pair.psi_log_derivative(x) - pair.phi_log_derivative(x)))
        }
        1 => Ok(resolvent_jet(pair, src, x, cfg)?.d1),
        2 => Ok(resolvent_jet(pair, src, x, cfg)?.d2),
        _ => Err(Error::invalid(format!("resolvent derivative order must be 0, 1 or 2, got {deriv}"))),
    }
}

fn centered(pair: &FundamentalPair, src: Source, x: f64, side: Side, cfg: &QuadratureConfig) -> Result<f64> {
    let fx = src.eval(x);
    let diff = |y: f64| src.eval(y) - fx;
    let d = Source::new(&diff, src.kinks);
    match side {
        Side::Lower => lower_kernel_integral(pair, d, x, cfg),
        Side::Upper => upper_kernel_integral(pair, d, x, cfg),
    }
}

/// `S'(x) K_f^s(x) / ψ_s(x)`.
pub fn k_normalized(
    pair: &FundamentalPair,
    src: Source,
    x: f64,
    repr: Representation,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let s = pair.rate();
    match repr {
        Representation::Integral => {
            Ok(s * lower_kernel_integral(pair, src, x, cfg)? - pair.psi_log_derivative(x) * src.eval(x))
        }
        Representation::Centered => Ok(s * centered(pair, src, x, Side::Lower, cfg)?),
        Representation::Derivative => {
            let jet = resolvent_jet(pair, src, x, cfg)?;
            let b = pair.psi_branch(x);
            let sig2 = pair.model().volatility(x).powi(2);
            Ok(0.5 * sig2 * (b.log_d1 * jet.d2 - b.log_d2 * jet.d1))
        }
    }
}

/// `S'(x) L_f^s(x) / φ_s(x)`.
pub fn l_normalized(
    pair: &FundamentalPair,
    src: Source,
    x: f64,
    repr: Representation,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let s = pair.rate();
    match repr {
        Representation::Integral => {
            Ok(s * upper_kernel_integral(pair, src, x, cfg)? + pair.phi_log_derivative(x) * src.eval(x))
        }
        Representation::Centered => Ok(s * centered(pair, src, x, Side::Upper, cfg)?),
        Representation::Derivative => {
            let jet = resolvent_jet(pair, src, x, cfg)?;
            let b = pair.phi_branch(x);
            let sig2 = pair.model().volatility(x).powi(2);
            Ok(0.5 * sig2 * (b.log_d2 * jet.d1 - b.log_d1 * jet.d2))
        }
    }
}

/// `K_f^s(x)` in the pair's own normalization. May overflow where `ψ/S'`
/// does; prefer [`k_normalized`].
pub fn functional_k(
    pair: &FundamentalPair,
    src: Source,
    x: f64,
    repr: Representation,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let hat = k_normalized(pair, src, x, repr, cfg)?;
    Ok(hat * (pair.ln_psi(x) - pair.model().ln_scale_density(x)).exp())
}

/// `L_f^s(x)` in the pair's own normalization.
pub fn functional_l(
    pair: &FundamentalPair,
    src: Source,
    x: f64,
    repr: Representation,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let hat = l_normalized(pair, src, x, repr, cfg)?;
    Ok(hat * (pair.ln_phi(x) - pair.model().ln_scale_density(x)).exp())
}

/// `H_low(x) = ∫_l^x (π_μ(z) - π_μ(x)) m'(z) dz` or the upper analogue
/// `∫_x^u`. The subtracted value is taken at the evaluation point.
pub fn functional_h(
    model: &DiffusionModel,
    spec: &ProblemSpec,
    x: f64,
    side: Side,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    check_point(model, x)?;
    let px = spec.pi_mu(model, x);
    let f = |z: f64| (spec.pi_mu(model, z) - px) * model.ln_speed_density(z).exp();
    let kinks = spec.cost.kinks();
    match side {
        Side::Lower => model.integrate_lower(&f, x, kinks, cfg),
        Side::Upper => model.integrate_upper(&f, x, kinks, cfg),
    }
}

/// `H` with the subtraction taken at the lower boundary instead,
/// `∫_l^x (π_μ(z) - π_μ(l)) m'(z) dz`. Only defined when `l` is finite.
pub fn functional_h_lower_anchored(
    model: &DiffusionModel,
    spec: &ProblemSpec,
    x: f64,
    cfg: &QuadratureConfig,
) -> Option<f64> {
    let l = model.lower();
    if !l.is_finite() || !model.contains(x) {
        return None;
    }
    let pl = spec.pi_mu(model, l);
    let f = |z: f64| (spec.pi_mu(model, z) - pl) * model.ln_speed_density(z).exp();
    model.integrate_lower(&f, x, spec.cost.kinks(), cfg).ok()
}

/// `∫_l^x π_μ m' / m(l, x)`: the average of `π_μ` under the speed measure
/// restricted to `(l, x)`.
pub fn speed_average_below(model: &DiffusionModel, spec: &ProblemSpec, x: f64, cfg: &QuadratureConfig) -> Result<f64> {
    check_point(model, x)?;
    let num = |z: f64| spec.pi_mu(model, z) * model.ln_speed_density(z).exp();
    let n = model.integrate_lower(&num, x, spec.cost.kinks(), cfg)?;
    let m = model.speed_measure(model.lower(), x, cfg)?;
    Ok(n / m)
}

/// The yield functions of one problem at discount `r`, with `g` backed by
/// the resolvent.
pub struct YieldFunctions<'a> {
    pub model: &'a DiffusionModel,
    pub spec: &'a ProblemSpec,
    pair_r: &'a FundamentalPair,
    pub cfg: QuadratureConfig,
}

impl<'a> YieldFunctions<'a> {
    pub fn new(model: &'a DiffusionModel, spec: &'a ProblemSpec, pair_r: &'a FundamentalPair, cfg: QuadratureConfig) -> Self {
        Self {
            model,
            spec,
            pair_r,
            cfg,
        }
    }

    pub fn theta(&self, x: f64) -> f64 {
        self.spec.theta(self.model, x)
    }

    pub fn pi_mu(&self, x: f64) -> f64 {
        self.spec.pi_mu(self.model, x)
    }

    pub fn pi_gamma(&self, x: f64) -> f64 {
        self.spec.pi_gamma(x)
    }

    /// `g(x) = γx - (R_r π)(x)`
    pub fn g(&self, x: f64) -> Result<f64> {
        let pi = |y: f64| self.spec.cost.eval(y);
        let rp = resolvent(self.pair_r, Source::new(&pi, self.spec.cost.kinks()), x, 0, &self.cfg)?;
        Ok(self.spec.gamma * x - rp)
    }
}

/// Maximum residuals of the three auxiliary-function identities, each
/// divided by the size of the terms it balances.
#[derive(Debug, Clone, Serialize)]
pub struct AuxiliaryIdentityReport {
    /// `(𝒜 - r) g = θ_r`, `g''` by a five-point stencil.
    pub generator: f64,
    /// `R_{r+λ} π_γ - λ R_{r+λ} g = R_r π`
    pub resolvent_shift: f64,
    /// `λ R_{r+λ} g - R_{r+λ} θ_r = g`
    pub feller_link: f64,
    pub points_used: usize,
    pub points_skipped: usize,
}

fn five_point(f: &dyn Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<(f64, f64, f64)> {
    let f0 = f(x)?;
    let fp1 = f(x + h)?;
    let fm1 = f(x - h)?;
    let fp2 = f(x + 2.0 * h)?;
    let fm2 = f(x - 2.0 * h)?;
    let d1 = (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * h);
    let d2 = (-fm2 + 16.0 * fm1 - 30.0 * f0 + 16.0 * fp1 - fp2) / (12.0 * h * h);
    Ok((f0, d1, d2))
}

fn near_kink(x: f64, kinks: &[f64], radius: f64) -> bool {
    kinks.iter().any(|k| (x - k).abs() <= radius)
}

/// Residuals of the auxiliary-function identities on a grid. Points within
/// the finite-difference footprint of a cost kink are skipped.
pub fn auxiliary_identity_residuals(
    model: &DiffusionModel,
    spec: &ProblemSpec,
    grid: &[f64],
    cfg: &QuadratureConfig,
) -> Result<AuxiliaryIdentityReport> {
    let r = spec.discount;
    let lam = spec.poisson_rate;
    let pair_r = crate::fundamental::fundamental_pair(model, r)?;
    let pair_rl = crate::fundamental::fundamental_pair(model, r + lam)?;
    let y = YieldFunctions::new(model, spec, &pair_r, *cfg);
    let kinks = spec.cost.kinks();
    let h = 1e-2 * model.length_scale();
    let pi = |z: f64| spec.cost.eval(z);
    let theta = |z: f64| spec.theta(model, z);
    let pig = |z: f64| spec.pi_gamma(z);
    let g_plain = |z: f64| y.g(z).unwrap_or(f64::NAN);
    let mut rep = AuxiliaryIdentityReport {
        generator: 0.0,
        resolvent_shift: 0.0,
        feller_link: 0.0,
        points_used: 0,
        points_skipped: 0,
    };
    for &x in grid {
        if near_kink(x, kinks, 4.0 * h) {
            rep.points_skipped += 1;
            continue;
        }
        rep.points_used += 1;
        let (g0, g1, g2) = five_point(&|z| y.g(z), x, h)?;
        let sig2 = model.volatility(x).powi(2);
        let th = theta(x);
        let terms = [model.drift(x) * g1, 0.5 * sig2 * g2, r * g0, th];
        let lhs = terms[0] + terms[1] - terms[2];
        let scale: f64 = terms.iter().map(|t| t.abs()).sum();
        rep.generator = rep.generator.max((lhs - th).abs() / scale.max(f64::MIN_POSITIVE));

        let r_pig = resolvent(&pair_rl, Source::new(&pig, kinks), x, 0, cfg)?;
        let r_g = resolvent(&pair_rl, Source::new(&g_plain, kinks), x, 0, cfg)?;
        let r_pi = resolvent(&pair_r, Source::new(&pi, kinks), x, 0, cfg)?;
        let r_theta = resolvent(&pair_rl, Source::new(&theta, kinks), x, 0, cfg)?;
        let a = r_pig - lam * r_g - r_pi;
        let sa = r_pig.abs() + (lam * r_g).abs() + r_pi.abs();
        rep.resolvent_shift = rep.resolvent_shift.max(a.abs() / sa.max(1.0));
        let b = lam * r_g - r_theta - g0;
        let sb = (lam * r_g).abs() + r_theta.abs() + g0.abs();
        rep.feller_link = rep.feller_link.max(b.abs() / sb.max(1.0));
    }
    Ok(rep)
}

/// `|(R_q R_r f)(x) - (R_r f(x) - R_q f(x))/(q - r)|` divided by
/// `max(1, |right-hand side|)`.
pub fn resolvent_equation_residual(
    model: &DiffusionModel,
    src: Source,
    q: f64,
    r: f64,
    x: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if q == r {
        return Err(Error::invalid("resolvent equation needs two distinct rates"));
    }
    let pq = crate::fundamental::fundamental_pair(model, q)?;
    let pr = crate::fundamental::fundamental_pair(model, r)?;
    let inner = |y: f64| resolvent(&pr, src, y, 0, cfg).unwrap_or(f64::NAN);
    let lhs = resolvent(&pq, Source::new(&inner, src.kinks), x, 0, cfg)?;
    let rhs = (resolvent(&pr, src, x, 0, cfg)? - resolvent(&pq, src, x, 0, cfg)?) / (q - r);
    if !lhs.is_finite() {
        return Err(Error::numerical("nested resolvent evaluation failed"));
    }
    Ok((lhs - rhs).abs() / rhs.abs().max(1.0))
}

/// `|(𝒜 - s)(R_s f)(x) + f(x)| / (1 + |f(x)|)` with `R_s f` differentiated
/// by a five-point stencil.
pub fn harmonicity_residual(pair: &FundamentalPair, src: Source, x: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let model = pair.model();
    let h = 1e-2 * model.length_scale();
    let (v, d1, d2) = five_point(&|z| resolvent(pair, src, z, 0, cfg), x, h)?;
    let sig2 = model.volatility(x).powi(2);
    let gen = model.drift(x) * d1 + 0.5 * sig2 * d2 - pair.rate() * v;
    let fx = src.eval(x);
    Ok((gen + fx).abs() / (1.0 + fx.abs()))
}

/// Natural-boundary identities `φ'/S' = -s∫_x^u φ m'` and
/// `ψ'/S' = s∫_l^x ψ m'`, as relative residuals `(lower, upper)`.
pub fn natural_boundary_residuals(pair: &FundamentalPair, x: f64, cfg: &QuadratureConfig) -> Result<(f64, f64)> {
    let one = |_: f64| 1.0;
    let s = pair.rate();
    let ip = lower_kernel_integral(pair, Source::smooth(&one), x, cfg)?;
    let iq = upper_kernel_integral(pair, Source::smooth(&one), x, cfg)?;
    let lp = pair.psi_log_derivative(x);
    let lf = pair.phi_log_derivative(x);
    Ok(((lp - s * ip).abs() / lp.abs(), (lf + s * iq).abs() / lf.abs()))
}

/// Relative disagreement between the integral and derivative forms of `K`
/// and `L` (normalized as in [`k_normalized`]), `(K, L)`.
pub fn representation_agreement(
    pair: &FundamentalPair,
    src: Source,
    x: f64,
    cfg: &QuadratureConfig,
) -> Result<(f64, f64)> {
    let ki = k_normalized(pair, src, x, Representation::Integral, cfg)?;
    let kd = k_normalized(pair, src, x, Representation::Derivative, cfg)?;
    let li = l_normalized(pair, src, x, Representation::Integral, cfg)?;
    let ld = l_normalized(pair, src, x, Representation::Derivative, cfg)?;
    Ok(((ki - kd).abs() / (1.0 + ki.abs()), (li - ld).abs() / (1.0 + li.abs())))
}
