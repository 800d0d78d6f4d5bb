//! Adaptive Gauss–Kronrod quadrature with tail panels for semi-infinite
//! ranges.
//!
//! Finite ranges are handled by a globally adaptive G10/K21 scheme that
//! bisects the subinterval with the largest error estimate. Semi-infinite
//! ranges are covered by a sequence of panels whose widths double as they move
//! away from the finite endpoint; integration stops once three consecutive
//! panels each contribute less than `abs_tol` times the accumulated absolute
//! mass. Ranges that end at a finite boundary point are approached with
//! panels that halve in width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Tail};

/// Tolerances and limits for every integral evaluated in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Cap on bisections inside a single finite panel.
    pub max_subdivisions: usize,
    /// Width of the first tail panel.
    pub panel_width: f64,
    /// Cap on the number of tail panels before a range is declared divergent.
    pub max_panels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 200,
            panel_width: 1.0,
            max_panels: 80,
        }
    }
}

impl QuadratureConfig {
    /// Tight tolerances for identity checks and reference solves.
    pub fn precise() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-13,
            max_subdivisions: 400,
            ..Self::default()
        }
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::invalid("quadrature tolerances must be positive"));
        }
        if !(self.panel_width > 0.0) || self.max_panels < 4 || self.max_subdivisions == 0 {
            return Err(Error::invalid("quadrature panel settings out of range"));
        }
        Ok(())
    }
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_958_109_831,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

/// One application of the 21-point Kronrod rule with its embedded 10-point
/// Gauss rule. Returns `(estimate, error)`; the error is scaled the way
/// QUADPACK's `qk21` does it.
pub fn gauss_kronrod21<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = WGK[10] * fc;
    let mut resg = 0.0;
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let reskh = 0.5 * resk;
    let mut resasc = WGK[10] * (fc - reskh).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - reskh).abs() + (fv2[j] - reskh).abs());
    }
    let result = resk * half;
    let resabs = resabs * half.abs();
    let resasc = resasc * half.abs();
    let mut err = ((resk - resg) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (result, err)
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// Value and error estimate of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Globally adaptive integration over a finite interval without
/// breakpoints.
pub fn adaptive<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    a: f64,
    b: f64,
    cfg: &QuadratureConfig,
) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
        });
    }
    let (v, e) = gauss_kronrod21(f, a, b);
    let mut segs = vec![Segment {
        a,
        b,
        value: v,
        error: e,
    }];
    let mut total = v;
    let mut total_err = e;
    for _ in 0..cfg.max_subdivisions {
        if !total.is_finite() {
            break;
        }
        if total_err <= cfg.abs_tol.max(cfg.rel_tol * total.abs()) {
            break;
        }
        let (idx, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("non-empty segment list");
        let s = segs.swap_remove(idx);
        let mid = 0.5 * (s.a + s.b);
        if mid <= s.a || mid >= s.b {
            // interval exhausted at machine resolution
            segs.push(s);
            break;
        }
        let (v1, e1) = gauss_kronrod21(f, s.a, mid);
        let (v2, e2) = gauss_kronrod21(f, mid, s.b);
        segs.push(Segment {
            a: s.a,
            b: mid,
            value: v1,
            error: e1,
        });
        segs.push(Segment {
            a: mid,
            b: s.b,
            value: v2,
            error: e2,
        });
        // re-sum rather than update incrementally so rounding does not drift
        total = segs.iter().map(|s| s.value).sum();
        total_err = segs.iter().map(|s| s.error).sum();
    }
    if !total.is_finite() {
        return Err(Error::numerical(format!(
            "non-finite integrand on [{a}, {b}]"
        )));
    }
    Ok(Estimate {
        value: total,
        error: total_err,
    })
}

/// Finite-interval integral split at every breakpoint strictly inside
/// `(a, b)`.
pub fn integrate_finite<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    a: f64,
    b: f64,
    breaks: &[f64],
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if a > b {
        return integrate_finite(f, b, a, breaks, cfg).map(|v| -v);
    }
    let mut pts = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&p| p > a && p < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    pts.extend(inner);
    pts.push(b);
    let mut total = 0.0;
    for w in pts.windows(2) {
        total += adaptive(f, w[0], w[1], cfg)?.value;
    }
    Ok(total)
}

struct TailRule {
    small_run: usize,
    mass: f64,
    total: f64,
    panels: usize,
}

impl TailRule {
    const MIN_PANELS: usize = 4;
    const RUN: usize = 3;

    fn new() -> Self {
        Self {
            small_run: 0,
            mass: 0.0,
            total: 0.0,
            panels: 0,
        }
    }

    /// Records a panel and reports whether the tail may be cut here.
    fn push(&mut self, v: f64, cfg: &QuadratureConfig) -> bool {
        self.panels += 1;
        self.total += v;
        self.mass += v.abs();
        if v.abs() <= cfg.abs_tol * self.mass {
            self.small_run += 1;
        } else {
            self.small_run = 0;
        }
        self.panels >= Self::MIN_PANELS && self.small_run >= Self::RUN
    }
}

fn tail_panels<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    start: f64,
    dir: f64,
    breaks: &[f64],
    cfg: &QuadratureConfig,
    tail: Tail,
) -> Result<f64> {
    let mut rule = TailRule::new();
    let mut lo = start;
    let mut width = cfg.panel_width;
    for _ in 0..cfg.max_panels {
        let hi = lo + dir * width;
        let v = integrate_finite(f, lo, hi, breaks, cfg).map_err(|e| match e {
            Error::Numerical(detail) => Error::Divergence { tail, detail },
            other => other,
        })?;
        let v = dir * v;
        if !v.is_finite() || !rule.total.is_finite() {
            return Err(Error::Divergence {
                tail,
                detail: format!("non-finite panel contribution near {hi:.4e}"),
            });
        }
        if rule.push(v, cfg) {
            return Ok(rule.total);
        }
        lo = hi;
        width *= 2.0;
    }
    Err(Error::Divergence {
        tail,
        detail: format!(
            "tail contributions did not decay after {} panels (last edge {lo:.4e}, running total {:.6e})",
            cfg.max_panels, rule.total
        ),
    })
}

/// `∫_a^∞ f`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    a: f64,
    breaks: &[f64],
    cfg: &QuadratureConfig,
) -> Result<f64> {
    tail_panels(f, a, 1.0, breaks, cfg, Tail::Upper)
}

/// `∫_{-∞}^b f`.
pub fn integrate_from_neg_infinity<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    b: f64,
    breaks: &[f64],
    cfg: &QuadratureConfig,
) -> Result<f64> {
    tail_panels(f, b, -1.0, breaks, cfg, Tail::Lower)
}

/// Integral from `x` to a finite boundary point `end` (either side), using
/// panels whose widths halve toward `end`. Suitable for integrands that are
/// singular but integrable at the boundary.
pub fn integrate_to_boundary<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    x: f64,
    end: f64,
    breaks: &[f64],
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let tail = if end < x { Tail::Lower } else { Tail::Upper };
    let sign = if end < x { -1.0 } else { 1.0 };
    let mut rule = TailRule::new();
    let mut near = x;
    let mut dist = (end - x).abs();
    for _ in 0..(cfg.max_panels * 3) {
        dist *= 0.5;
        let next = end - sign * dist;
        let v = sign * integrate_finite(f, near.min(next), near.max(next), breaks, cfg)?;
        if !v.is_finite() {
            return Err(Error::Divergence {
                tail,
                detail: format!("non-finite contribution approaching boundary {end}"),
            });
        }
        if rule.push(v, cfg) {
            return Ok(rule.total);
        }
        near = next;
        if dist == 0.0 || next == end {
            return Ok(rule.total);
        }
    }
    Err(Error::Divergence {
        tail,
        detail: format!("contributions did not decay approaching boundary {end}"),
    })
}

/// General dispatcher: either limit may be infinite.
pub fn integrate<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    a: f64,
    b: f64,
    breaks: &[f64],
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if a.is_nan() || b.is_nan() {
        return Err(Error::Domain("NaN integration limit".into()));
    }
    if a > b {
        return integrate(f, b, a, breaks, cfg).map(|v| -v);
    }
    match (a.is_finite(), b.is_finite()) {
        (true, true) => integrate_finite(f, a, b, breaks, cfg),
        (true, false) => integrate_to_infinity(f, a, breaks, cfg),
        (false, true) => integrate_from_neg_infinity(f, b, breaks, cfg),
        (false, false) => {
            let split = breaks.first().copied().unwrap_or(0.0);
            Ok(integrate_from_neg_infinity(f, split, breaks, cfg)?
                + integrate_to_infinity(f, split, breaks, cfg)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_is_exact_for_high_degree_polynomials() {
        // K21 integrates degree 31 exactly; probe degree 30 on [-1, 2].
        let f = |x: f64| x.powi(30) - 3.0 * x.powi(7) + 1.0;
        let exact = (2f64.powi(31) + 1.0) / 31.0 - 3.0 * (2f64.powi(8) - 1.0) / 8.0 + 3.0;
        let (v, _) = gauss_kronrod21(&f, -1.0, 2.0);
        assert!((v - exact).abs() / exact.abs() < 1e-13, "{v} vs {exact}");
    }

    #[test]
    fn gauss_weights_sum_to_two() {
        let g: f64 = 2.0 * WG.iter().sum::<f64>();
        let k: f64 = 2.0 * WGK[..10].iter().sum::<f64>() + WGK[10];
        assert!((g - 2.0).abs() < 1e-14);
        assert!((k - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gaussian_over_real_line() {
        let cfg = QuadratureConfig::precise();
        let v = integrate(&|x: f64| (-x * x).exp(), f64::NEG_INFINITY, f64::INFINITY, &[], &cfg)
            .unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn slowly_decaying_exponential_tail() {
        let cfg = QuadratureConfig::precise();
        let rate = 0.0095;
        let v = integrate_to_infinity(&|y: f64| y * y * (-rate * y).exp(), 0.0, &[], &cfg).unwrap();
        let exact = 2.0 / rate.powi(3);
        assert!((v - exact).abs() / exact < 1e-12, "{v} vs {exact}");
    }

    #[test]
    fn kink_breakpoints() {
        let cfg = QuadratureConfig::precise();
        let v = integrate_finite(&|x: f64| (x - 0.3).abs(), -1.0, 1.0, &[0.3], &cfg).unwrap();
        let exact = 0.5 * 1.3 * 1.3 + 0.5 * 0.7 * 0.7;
        assert!((v - exact).abs() < 1e-15);
    }

    #[test]
    fn boundary_singularity() {
        let cfg = QuadratureConfig::precise();
        // ∫_1^0 x^{-1/2} = -2
        let v = integrate_to_boundary(&|x: f64| x.powf(-0.5), 1.0, 0.0, &[], &cfg).unwrap();
        assert!((v + 2.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn divergent_tail_is_reported() {
        let cfg = QuadratureConfig::default();
        let err = integrate_to_infinity(&|x: f64| 1.0 / (1.0 + x), 0.0, &[], &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { tail: Tail::Upper, .. }));
        let err = integrate_from_neg_infinity(&|x: f64| (-0.2 * x).exp(), 0.0, &[], &cfg)
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { tail: Tail::Lower, .. }));
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let cfg = QuadratureConfig::default();
        let f = |x: f64| x.exp();
        let a = integrate(&f, 0.0, 1.0, &[], &cfg).unwrap();
        let b = integrate(&f, 1.0, 0.0, &[], &cfg).unwrap();
        assert!((a + b).abs() < 1e-15);
    }
}
