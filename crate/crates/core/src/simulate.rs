//! Monte Carlo estimates of the four objectives under barrier and
//! Poisson-threshold policies.
//!
//! Time stepping uses the exact Gaussian transition for drifted Brownian
//! motion and the Ornstein–Uhlenbeck process, and Euler–Maruyama for
//! generic models. Reflection at a barrier samples the maximum of the
//! Brownian bridge between grid points, which makes the reflected step exact
//! for drifted Brownian motion; [`Discretization::Euler`] switches to the
//! plain Euler step with projection onto the barrier. Poisson arrival times
//! are drawn exactly and the grid is split at each arrival.
//!
//! Every path owns an RNG seeded from `splitmix64(seed ^ splitmix64(i))`,
//! and path results are reduced in index order, so estimates do not depend
//! on the thread count.

use std::fmt::Write as _;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::RunningCost;
use crate::diffusion::{DiffusionModel, ModelKind};
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;

const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Policy {
    Uncontrolled,
    Reflect { barrier: f64 },
    PoissonImpulse { threshold: f64, lambda: f64 },
}

impl Policy {
    fn level(&self) -> f64 {
        match *self {
            Policy::Uncontrolled => f64::INFINITY,
            Policy::Reflect { barrier } => barrier,
            Policy::PoissonImpulse { threshold, .. } => threshold,
        }
    }

    fn with_level(&self, level: f64) -> Policy {
        match *self {
            Policy::Uncontrolled => Policy::Uncontrolled,
            Policy::Reflect { .. } => Policy::Reflect { barrier: level },
            Policy::PoissonImpulse { lambda, .. } => Policy::PoissonImpulse { threshold: level, lambda },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discretization {
    /// Exact transitions where available, bridge-maximum reflection.
    #[default]
    Refined,
    /// Euler–Maruyama everywhere, reflection by projection.
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub policy: Policy,
    /// `0` selects time averaging.
    pub discount: f64,
    pub x0: f64,
    /// Fraction of the horizon discarded before time averaging.
    pub burn_in: f64,
    pub discretization: Discretization,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            horizon: 2000.0,
            n_paths: 10_000,
            seed: 0x5eed,
            policy: Policy::Uncontrolled,
            discount: 0.0,
            x0: 0.0,
            burn_in: 0.1,
            discretization: Discretization::Refined,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 100.0 * self.dt) || !self.horizon.is_finite() {
            return Err(Error::invalid(format!(
                "horizon {} must be finite and at least 100 dt",
                self.horizon
            )));
        }
        if self.n_paths < 2 {
            return Err(Error::Precondition(format!("need at least 2 paths, got {}", self.n_paths)));
        }
        if !(self.discount >= 0.0 && self.discount.is_finite()) {
            return Err(Error::invalid("discount must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::invalid("burn_in must lie in [0, 1)"));
        }
        if let Policy::PoissonImpulse { lambda, .. } = self.policy {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::invalid(format!("Poisson intensity must be positive, got {lambda}")));
            }
        }
        if let Policy::Reflect { barrier } | Policy::PoissonImpulse { threshold: barrier, .. } = self.policy {
            if barrier.is_nan() {
                return Err(Error::invalid("policy level is NaN"));
            }
        }
        Ok(())
    }

    pub fn is_ergodic(&self) -> bool {
        self.discount == 0.0
    }

    fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Per-path totals. Discounted runs hold present values; ergodic runs hold
/// undiscounted totals over the averaging window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PathOutcome {
    pub running: f64,
    /// `γ` times the total push.
    pub control: f64,
    /// Discounted continuation value at the horizon, when supplied.
    pub terminal: f64,
    pub interventions: u64,
    pub total_push: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathStatistics {
    pub policy: Policy,
    pub discount: f64,
    /// Length of the window the ergodic totals cover.
    pub averaging_time: f64,
    pub outcomes: Vec<PathOutcome>,
}

impl PathStatistics {
    /// Mean interventions per unit of simulated time.
    pub fn intervention_rate(&self, horizon: f64) -> f64 {
        let n: u64 = self.outcomes.iter().map(|o| o.interventions).sum();
        n as f64 / (self.outcomes.len() as f64 * horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub running: f64,
    pub control: f64,
    pub terminal: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub policy: Policy,
    pub ergodic: bool,
    /// Means of the parts; they add up to `mean`.
    pub breakdown: CostBreakdown,
}

impl CostEstimate {
    /// `|mean - target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target).abs() / self.std_error
        }
    }
}

/// Sample mean and standard error across replicates, in path order.
pub fn estimate_cost(paths: &PathStatistics) -> Result<CostEstimate> {
    let n = paths.outcomes.len();
    if n < 2 {
        return Err(Error::Precondition(format!("need at least 2 paths, got {n}")));
    }
    let scale = if paths.discount == 0.0 { 1.0 / paths.averaging_time } else { 1.0 };
    let (mut sr, mut sc, mut st) = (0.0, 0.0, 0.0);
    for o in &paths.outcomes {
        sr += o.running * scale;
        sc += o.control * scale;
        st += o.terminal * scale;
    }
    let nf = n as f64;
    let breakdown = CostBreakdown {
        running: sr / nf,
        control: sc / nf,
        terminal: st / nf,
    };
    let mean = breakdown.running + breakdown.control + breakdown.terminal;
    // Welford, so that identical replicates give exactly zero spread
    let (mut m, mut m2) = (0.0f64, 0.0f64);
    for (k, o) in paths.outcomes.iter().enumerate() {
        let v = (o.running + o.control + o.terminal) * scale;
        let d = v - m;
        m += d / (k + 1) as f64;
        m2 += d * (v - m);
    }
    let ss = m2.max(0.0);
    Ok(CostEstimate {
        mean,
        std_error: (ss / (nf - 1.0) / nf).sqrt(),
        n_paths: n,
        policy: paths.policy,
        ergodic: paths.discount == 0.0,
        breakdown,
    })
}

/// SplitMix64 finalizer, used to derive per-path seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn path_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ splitmix64(index as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Step,
    Reflect,
    PoissonPush,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Step => "step",
            EventKind::Reflect => "reflect",
            EventKind::PoissonPush => "poisson-push",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    /// State after the event.
    pub x: f64,
    pub event: EventKind,
    pub push_size: f64,
}

pub const EVENT_CSV_HEADER: &str = "t,x,event,push_size";

pub fn events_to_csv(events: &[Event]) -> String {
    let mut out = String::from(EVENT_CSV_HEADER);
    out.push('\n');
    for e in events {
        let _ = writeln!(out, "{},{},{},{}", e.t, e.x, e.event.as_str(), e.push_size);
    }
    out
}

/// One-step transition of the uncontrolled diffusion.
#[derive(Debug, Clone)]
enum Stepper {
    Bm { mu: f64 },
    Ou { kappa: f64 },
    Euler { model: DiffusionModel },
}

/// Coefficients of `x ↦ a x + b + c z` for one step length.
#[derive(Debug, Clone, Copy)]
struct Affine {
    a: f64,
    b: f64,
    c: f64,
    /// Variance proxy `σ² h` for the bridge maximum.
    v: f64,
    /// Fraction of a push inside the step that survives to its end: mean
    /// reversion undoes part of it, `e^{-κh/2}` for a push at mid-step.
    carry: f64,
}

impl Stepper {
    fn new(model: &DiffusionModel, disc: Discretization) -> Self {
        match (model.kind(), disc) {
            (ModelKind::DriftedBm { mu }, Discretization::Refined) => Stepper::Bm { mu: *mu },
            (ModelKind::OrnsteinUhlenbeck { kappa }, Discretization::Refined) => Stepper::Ou { kappa: *kappa },
            _ => Stepper::Euler { model: model.clone() },
        }
    }

    fn affine(&self, h: f64) -> Option<Affine> {
        match *self {
            Stepper::Bm { mu } => Some(Affine {
                a: 1.0,
                b: mu * h,
                c: h.sqrt(),
                v: h,
                carry: 1.0,
            }),
            Stepper::Ou { kappa } => {
                let a = (-kappa * h).exp();
                Some(Affine {
                    a,
                    b: 0.0,
                    c: ((1.0 - a * a) / (2.0 * kappa)).sqrt(),
                    v: h,
                    carry: (-0.5 * kappa * h).exp(),
                })
            }
            Stepper::Euler { .. } => None,
        }
    }

    /// End point, bridge variance and push carry of a step of length `h`
    /// from `x`.
    #[inline]
    fn step(&self, aff: Option<&Affine>, x: f64, h: f64, z: f64) -> (f64, f64, f64) {
        match aff {
            Some(p) => (p.a * x + p.b + p.c * z, p.v, p.carry),
            None => {
                let Stepper::Euler { model } = self else { unreachable!() };
                let s = model.volatility(x);
                (x + model.drift(x) * h + s * h.sqrt() * z, s * s * h, 1.0)
            }
        }
    }
}

struct Engine<'a> {
    stepper: Stepper,
    cost: &'a RunningCost,
    gamma: f64,
    cfg: &'a SimConfig,
    levels: &'a [f64],
    full: Option<Affine>,
    disc_step: f64,
    lower: f64,
    reflect: bool,
    lambda: f64,
    /// First grid step whose costs enter the totals.
    counted_from: usize,
}

struct State {
    x: f64,
    out: PathOutcome,
    /// Exponentials for the bridge maximum, drawn only when a crossing is
    /// plausible. Every level starts from the same seed.
    erng: SmallRng,
}

/// A step whose bridge cannot reach the barrier except with probability
/// below `e^{-40}` is accepted without drawing the exponential.
const BRIDGE_SCREEN: f64 = 40.0;

/// Discounted paths stop once `e^{-rt}` falls below this; the remainder
/// cannot move a double-precision total.
const DISCOUNT_FLOOR: f64 = 1e-18;

impl<'a> Engine<'a> {
    fn new(model: &DiffusionModel, spec: &'a ProblemSpec, levels: &'a [f64], cfg: &'a SimConfig) -> Self {
        let stepper = Stepper::new(model, cfg.discretization);
        Self {
            full: stepper.affine(cfg.dt),
            stepper,
            cost: &spec.cost,
            gamma: spec.gamma,
            cfg,
            levels,
            disc_step: (-cfg.discount * cfg.dt).exp(),
            lower: model.lower(),
            reflect: matches!(cfg.policy, Policy::Reflect { .. }),
            lambda: match cfg.policy {
                Policy::PoissonImpulse { lambda, .. } => lambda,
                _ => 0.0,
            },
            counted_from: if cfg.is_ergodic() {
                (cfg.burn_in * cfg.steps() as f64).round() as usize
            } else {
                0
            },
        }
    }

    /// Push needed to keep the step `a → c` below `b`. With `e ~ Exp(1)` the
    /// bridge maximum is `(a + c + sqrt((c - a)² + 2ve))/2`.
    #[inline(always)]
    fn bridge_push(euler: bool, a: f64, c: f64, v: f64, b: f64, erng: &mut SmallRng) -> f64 {
        if euler {
            return (c - b).max(0.0);
        }
        let q = 2.0 * (b - a) * (b - c);
        if c < b && q >= BRIDGE_SCREEN * v {
            return 0.0;
        }
        let e: f64 = erng.sample(Exp1);
        if c < b && q >= v * e {
            return 0.0;
        }
        let m = 0.5 * (a + c + ((c - a) * (c - a) + 2.0 * v * e).sqrt());
        (m - b).max(0.0)
    }

    /// One (sub)step of length `h` for a single level; returns the new
    /// state and its cost. `disc` holds the discount factors at both ends.
    #[allow(clippy::too_many_arguments)]
    #[inline(always)]
    fn step_level(
        &self,
        level: f64,
        s: &mut State,
        fx: f64,
        aff: Option<&Affine>,
        h: f64,
        z: f64,
        disc: (f64, f64),
        counted: bool,
        t_to: f64,
        log: &mut Option<&mut Vec<Event>>,
    ) -> Result<f64> {
        let (mut c, v, carry) = self.stepper.step(aff, s.x, h, z);
        if self.reflect {
            let euler = self.cfg.discretization == Discretization::Euler;
            let push = Self::bridge_push(euler, s.x, c, v, level, &mut s.erng);
            if push > 0.0 {
                c = (c - carry * push).min(level);
                if counted {
                    s.out.control += self.gamma * disc.1 * push;
                }
                s.out.total_push += push;
                s.out.interventions += 1;
                if let Some(l) = log.as_deref_mut() {
                    l.push(Event {
                        t: t_to,
                        x: c,
                        event: EventKind::Reflect,
                        push_size: push,
                    });
                }
            }
        }
        if !(c.abs() <= OVERFLOW_GUARD) || c <= self.lower {
            return Err(Error::Instability { time: t_to, value: c.abs() });
        }
        let fc = self.cost.eval(c);
        if counted {
            s.out.running += 0.5 * h * (disc.0 * fx + disc.1 * fc);
        }
        s.x = c;
        Ok(fc)
    }

    /// Draws the randomness of grid steps `first..first + len`: Poisson
    /// arrivals first, then one normal per sub-step.
    fn fill_block(&self, rng: &mut SmallRng, blk: &mut Block, first: usize, len: usize, next_arrival: &mut f64) {
        let cfg = self.cfg;
        let dt = cfg.dt;
        let ergodic = cfg.is_ergodic();
        blk.first = first;
        blk.len = len;
        blk.subs.clear();
        blk.split.clear();
        let t_stop = (first + len) as f64 * dt;
        let mut k_last = usize::MAX;
        while *next_arrival < t_stop {
            let ta = *next_arrival;
            let k = ((ta / dt).floor() as usize).clamp(first, first + len - 1);
            if k != k_last {
                // close the previous split step
                if k_last != usize::MAX {
                    self.push_sub(blk, (k_last + 1) as f64 * dt, false);
                }
                blk.split.push((k - first, blk.subs.len()));
                blk.sub_start = k as f64 * dt;
                k_last = k;
            }
            self.push_sub(blk, ta, true);
            *next_arrival += rng.sample::<f64, _>(Exp1) / self.lambda;
        }
        if k_last != usize::MAX {
            self.push_sub(blk, (k_last + 1) as f64 * dt, false);
        }
        let n_noise = len + blk.subs.len() - blk.split.len();
        blk.z.clear();
        blk.z.extend((0..n_noise).map(|_| rng.sample::<f64, _>(StandardNormal)));
        blk.disc.clear();
        if ergodic {
            blk.disc.resize(len + 1, 1.0);
        } else {
            let mut d = blk.disc0;
            blk.disc.push(d);
            for _ in 0..len {
                d *= self.disc_step;
                blk.disc.push(d);
            }
        }
        if self.lambda > 0.0 {
            if let Some(full) = self.full {
                self.flatten(blk, &full);
            }
        }
    }

    fn push_sub(&self, blk: &mut Block, t_to: f64, arrival: bool) {
        let h = (t_to - blk.sub_start).max(0.0);
        let disc = if self.cfg.is_ergodic() {
            1.0
        } else {
            (-self.cfg.discount * t_to).exp()
        };
        blk.subs.push(Sub {
            h,
            t_to,
            disc,
            aff: self.stepper.affine(h),
            arrival,
        });
        blk.sub_start = t_to;
    }

    /// Lays the block out as one list of affine sub-steps shared by all
    /// levels, so Poisson policies run without branching on splits.
    fn flatten(&self, blk: &mut Block, full: &Affine) {
        let dt = self.cfg.dt;
        blk.items.clear();
        let mut split = blk.split.iter().peekable();
        for j in 0..blk.len {
            let k = blk.first + j;
            let counted = k >= self.counted_from;
            let (d0, d1) = (blk.disc[j], blk.disc[j + 1]);
            if let Some(&(_, sub0)) = split.next_if(|(sj, _)| *sj == j) {
                let end = split.peek().map_or(blk.subs.len(), |&&(_, n)| n);
                let mut dp = d0;
                for sub in &blk.subs[sub0..end] {
                    let aff = sub.aff.expect("affine stepper");
                    let dn = if sub.arrival { sub.disc } else { d1 };
                    blk.items.push(Item {
                        a: aff.a,
                        b: aff.b,
                        c: aff.c,
                        half_h: 0.5 * sub.h,
                        d0: dp,
                        d1: dn,
                        counted,
                        arrival: sub.arrival,
                    });
                    dp = dn;
                }
            } else {
                blk.items.push(Item {
                    a: full.a,
                    b: full.b,
                    c: full.c,
                    half_h: 0.5 * dt,
                    d0,
                    d1,
                    counted,
                    arrival: false,
                });
            }
        }
    }

    /// Advances one level through a block.
    fn run_level(
        &self,
        i: usize,
        s: &mut State,
        fx: &mut f64,
        blk: &Block,
        log: &mut Option<&mut Vec<Event>>,
    ) -> Result<()> {
        let level = self.levels[i];
        if log.is_none() {
            if let Some(p) = self.full.as_ref() {
                if self.lambda > 0.0 {
                    return self.poisson_run(level, s, fx, blk);
                }
                let args = (p, level, blk.first, &blk.z[..], &blk.disc[..]);
                return match (self.reflect, self.cfg.is_ergodic()) {
                    (true, true) => self.fast_run::<true, true>(s, fx, args),
                    (true, false) => self.fast_run::<true, false>(s, fx, args),
                    (false, true) => self.fast_run::<false, true>(s, fx, args),
                    (false, false) => self.fast_run::<false, false>(s, fx, args),
                };
            }
        }
        let dt = self.cfg.dt;
        let full = self.full.as_ref();
        let mut zi = 0usize;
        let mut split = blk.split.iter().peekable();
        for j in 0..blk.len {
            let k = blk.first + j;
            let counted = k >= self.counted_from;
            let t1 = (k + 1) as f64 * dt;
            if let Some(&(_, sub0)) = split.next_if(|(sj, _)| *sj == j) {
                let end = split.peek().map_or(blk.subs.len(), |&&(_, n)| n);
                let mut d0 = blk.disc[j];
                for sub in &blk.subs[sub0..end] {
                    let z = blk.z[zi];
                    zi += 1;
                    let d1 = if sub.arrival { sub.disc } else { blk.disc[j + 1] };
                    *fx = self.step_level(level, s, *fx, sub.aff.as_ref(), sub.h, z, (d0, d1), counted, sub.t_to, log)?;
                    d0 = d1;
                    if sub.arrival && s.x > level {
                        let push = s.x - level;
                        s.x = level;
                        *fx = self.cost.eval(level);
                        if counted {
                            s.out.control += self.gamma * d1 * push;
                        }
                        s.out.total_push += push;
                        s.out.interventions += 1;
                        if let Some(l) = log.as_deref_mut() {
                            l.push(Event {
                                t: sub.t_to,
                                x: level,
                                event: EventKind::PoissonPush,
                                push_size: push,
                            });
                        }
                    }
                }
            } else {
                let z = blk.z[zi];
                zi += 1;
                *fx = self.step_level(level, s, *fx, full, dt, z, (blk.disc[j], blk.disc[j + 1]), counted, t1, log)?;
            }
            if let Some(l) = log.as_deref_mut() {
                l.push(Event {
                    t: t1,
                    x: s.x,
                    event: EventKind::Step,
                    push_size: 0.0,
                });
            }
        }
        Ok(())
    }

    /// Steps `k..k + z.len()` of one level with a fixed transition.
    #[allow(clippy::type_complexity)]
    #[inline(never)]
    fn fast_run<const REFLECT: bool, const ERGODIC: bool>(
        &self,
        s: &mut State,
        fx: &mut f64,
        (p, level, k, zs, disc): (&Affine, f64, usize, &[f64], &[f64]),
    ) -> Result<()> {
        let half = 0.5 * self.cfg.dt;
        let euler = self.cfg.discretization == Discretization::Euler;
        let (mut x, mut f) = (s.x, *fx);
        let mut out = s.out;
        for (j, &z) in zs.iter().enumerate() {
            let counted = k + j >= self.counted_from;
            let mut c = p.a * x + p.b + p.c * z;
            if REFLECT && !(c < level && 2.0 * (level - x) * (level - c) >= BRIDGE_SCREEN * p.v) {
                let push = Self::bridge_push(euler, x, c, p.v, level, &mut s.erng);
                if push > 0.0 {
                    c = (c - p.carry * push).min(level);
                    if counted {
                        out.control += self.gamma * if ERGODIC { push } else { disc[j + 1] * push };
                    }
                    out.total_push += push;
                    out.interventions += 1;
                }
            }
            if !(c.abs() <= OVERFLOW_GUARD) || c <= self.lower {
                s.out = out;
                return Err(Error::Instability {
                    time: (k + j + 1) as f64 * self.cfg.dt,
                    value: c.abs(),
                });
            }
            let fc = self.cost.eval(c);
            if counted {
                out.running += if ERGODIC {
                    half * (f + fc)
                } else {
                    half * (disc[j] * f + disc[j + 1] * fc)
                };
            }
            x = c;
            f = fc;
        }
        s.x = x;
        s.out = out;
        *fx = f;
        Ok(())
    }

    /// One level of a Poisson policy through a flattened block.
    #[inline(never)]
    fn poisson_run(&self, level: f64, s: &mut State, fx: &mut f64, blk: &Block) -> Result<()> {
        let (mut x, mut f) = (s.x, *fx);
        let mut out = s.out;
        let f_level = self.cost.eval(level);
        for (it, &z) in blk.items.iter().zip(&blk.z) {
            let mut c = it.a * x + it.b + it.c * z;
            if !(c.abs() <= OVERFLOW_GUARD) || c <= self.lower {
                s.out = out;
                return Err(Error::Instability {
                    time: blk.first as f64 * self.cfg.dt,
                    value: c.abs(),
                });
            }
            let mut fc = self.cost.eval(c);
            if it.counted {
                out.running += it.half_h * (it.d0 * f + it.d1 * fc);
            }
            if it.arrival && c > level {
                let push = c - level;
                c = level;
                fc = f_level;
                if it.counted {
                    out.control += self.gamma * it.d1 * push;
                }
                out.total_push += push;
                out.interventions += 1;
            }
            x = c;
            f = fc;
        }
        s.x = x;
        s.out = out;
        *fx = f;
        Ok(())
    }

    /// Simulates one path for every level with shared random numbers.
    fn run(
        &self,
        seed: u64,
        terminal: Option<&(dyn Fn(usize, f64) -> f64 + Sync)>,
        mut log: Option<&mut Vec<Event>>,
    ) -> Result<Vec<PathOutcome>> {
        let cfg = self.cfg;
        let ergodic = cfg.is_ergodic();
        let n = cfg.steps();
        let mut rng = SmallRng::seed_from_u64(seed);
        let rng = &mut rng;
        let bridge_seed = splitmix64(seed ^ 0xb21d_6e5e_ed00_0001);
        let mut states: Vec<State> = self
            .levels
            .iter()
            .map(|_| State {
                x: cfg.x0,
                out: PathOutcome::default(),
                erng: SmallRng::seed_from_u64(bridge_seed),
            })
            .collect();

        // an initial jump down to the barrier is charged at t = 0
        if self.reflect {
            for (s, &b) in states.iter_mut().zip(self.levels) {
                if s.x > b {
                    let push = s.x - b;
                    s.x = b;
                    if self.counted_from == 0 {
                        s.out.control += self.gamma * push;
                    }
                    s.out.total_push += push;
                    s.out.interventions += 1;
                    if let Some(l) = log.as_deref_mut() {
                        l.push(Event {
                            t: 0.0,
                            x: b,
                            event: EventKind::Reflect,
                            push_size: push,
                        });
                    }
                }
            }
        }

        let mut next_arrival = if self.lambda > 0.0 {
            rng.sample::<f64, _>(Exp1) / self.lambda
        } else {
            f64::INFINITY
        };
        let mut fx: Vec<f64> = states.iter().map(|s| self.cost.eval(s.x)).collect();
        let mut blk = Block {
            disc0: 1.0,
            ..Block::default()
        };
        let mut first = 0usize;
        while first < n {
            let len = BLOCK.min(n - first);
            self.fill_block(rng, &mut blk, first, len, &mut next_arrival);
            for (i, (s, f)) in states.iter_mut().zip(fx.iter_mut()).enumerate() {
                self.run_level(i, s, f, &blk, &mut log)?;
            }
            first += len;
            blk.disc0 = blk.disc[len];
            if !ergodic && blk.disc0 < DISCOUNT_FLOOR {
                break;
            }
        }
        if let Some(term) = terminal {
            if !ergodic {
                for (i, s) in states.iter_mut().enumerate() {
                    s.out.terminal = blk.disc0 * term(i, s.x);
                }
            }
        }
        Ok(states.into_iter().map(|s| s.out).collect())
    }
}

/// Grid steps simulated per block of pre-drawn randomness.
const BLOCK: usize = 256;

#[derive(Debug, Clone, Copy)]
struct Sub {
    h: f64,
    t_to: f64,
    /// Discount factor at `t_to` (used at arrivals).
    disc: f64,
    aff: Option<Affine>,
    arrival: bool,
}

#[derive(Debug, Default)]
struct Block {
    first: usize,
    len: usize,
    z: Vec<f64>,
    /// Discount factors at the grid points of the block.
    disc: Vec<f64>,
    disc0: f64,
    /// `(step within block, index of its first sub-step)` for steps split
    /// by arrivals.
    split: Vec<(usize, usize)>,
    subs: Vec<Sub>,
    sub_start: f64,
    items: Vec<Item>,
}

/// One sub-step of a flattened block.
#[derive(Debug, Clone, Copy)]
struct Item {
    a: f64,
    b: f64,
    c: f64,
    half_h: f64,
    d0: f64,
    d1: f64,
    counted: bool,
    arrival: bool,
}

fn check_levels(model: &DiffusionModel, cfg: &SimConfig, levels: &[f64]) -> Result<()> {
    cfg.validate()?;
    if !model.contains(cfg.x0) {
        return Err(Error::Domain(format!("x0 = {} is outside the state interval", cfg.x0)));
    }
    if levels.is_empty() {
        return Err(Error::invalid("no policy levels given"));
    }
    if levels.iter().any(|l| l.is_nan()) {
        return Err(Error::invalid("policy level is NaN"));
    }
    Ok(())
}

/// Simulates the policy family `cfg.policy` at each of `levels` with common
/// random numbers: level `i` of path `p` sees the same Wiener increments and
/// Poisson clock for every `i`. The result for one level does not depend on
/// which other levels are simulated alongside it.
///
/// `terminal(i, x)` is the undiscounted continuation value at the horizon
/// for level `i`; it is ignored in ergodic mode.
pub fn simulate_family(
    model: &DiffusionModel,
    spec: &ProblemSpec,
    levels: &[f64],
    cfg: &SimConfig,
    terminal: Option<&(dyn Fn(usize, f64) -> f64 + Sync)>,
) -> Result<Vec<PathStatistics>> {
    check_levels(model, cfg, levels)?;
    let engine = Engine::new(model, spec, levels, cfg);
    let per_path = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            engine.run(path_seed(cfg.seed, p), terminal, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let averaging_time = cfg.steps() as f64 * cfg.dt * (1.0 - if cfg.is_ergodic() { cfg.burn_in } else { 0.0 });
    Ok(levels
        .iter()
        .enumerate()
        .map(|(i, &lvl)| PathStatistics {
            policy: cfg.policy.with_level(lvl),
            discount: cfg.discount,
            averaging_time,
            outcomes: per_path.iter().map(|v| v[i]).collect(),
        })
        .collect())
}

fn single(model: &DiffusionModel, spec: &ProblemSpec, cfg: &SimConfig, level: f64) -> Result<PathStatistics> {
    Ok(simulate_family(model, spec, &[level], cfg, None)?.remove(0))
}

/// Reflection at `barrier` (local-time pushes). Cost and `γ` come from
/// `spec`; `cfg.policy` is replaced by the barrier policy.
pub fn simulate_reflected(model: &DiffusionModel, spec: &ProblemSpec, barrier: f64, cfg: &SimConfig) -> Result<PathStatistics> {
    let cfg = SimConfig {
        policy: Policy::Reflect { barrier },
        ..*cfg
    };
    single(model, spec, &cfg, barrier)
}

/// Push to `threshold` at the arrivals of a Poisson clock with intensity
/// `lambda`.
pub fn simulate_constrained(
    model: &DiffusionModel,
    spec: &ProblemSpec,
    threshold: f64,
    lambda: f64,
    cfg: &SimConfig,
) -> Result<PathStatistics> {
    let cfg = SimConfig {
        policy: Policy::PoissonImpulse { threshold, lambda },
        ..*cfg
    };
    single(model, spec, &cfg, threshold)
}

/// Event log of path `index` under `cfg.policy`.
pub fn event_log(model: &DiffusionModel, spec: &ProblemSpec, cfg: &SimConfig, index: usize) -> Result<Vec<Event>> {
    let level = cfg.policy.level();
    check_levels(model, cfg, &[level])?;
    let levels = [level];
    let engine = Engine::new(model, spec, &levels, cfg);
    let mut log = Vec::with_capacity(cfg.steps() + 16);
    engine.run(path_seed(cfg.seed, index), None, Some(&mut log))?;
    Ok(log)
}

/// Reflected-policy estimates at `cfg.dt` and `cfg.dt / 2` on the same
/// Brownian paths: each coarse increment is assembled from the two fine
/// ones, so the difference between the two estimates isolates the time
/// discretization error. Returns `(coarse, fine)`.
pub fn simulate_refinement_pair(
    model: &DiffusionModel,
    spec: &ProblemSpec,
    barrier: f64,
    cfg: &SimConfig,
) -> Result<(PathStatistics, PathStatistics)> {
    let coarse_cfg = SimConfig {
        policy: Policy::Reflect { barrier },
        ..*cfg
    };
    let fine_cfg = SimConfig {
        dt: 0.5 * cfg.dt,
        ..coarse_cfg
    };
    let levels = [barrier];
    check_levels(model, &coarse_cfg, &levels)?;
    let coarse = Engine::new(model, spec, &levels, &coarse_cfg);
    let fine = Engine::new(model, spec, &levels, &fine_cfg);
    // weights mapping the two fine normals onto the coarse one
    let (wa, wb) = match (fine.full, coarse.full) {
        (Some(f), Some(c)) => (f.a * f.c / c.c, f.c / c.c),
        _ => (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    };
    let pairs = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| run_coupled(&coarse, &fine, (wa, wb), path_seed(cfg.seed, p)))
        .collect::<Result<Vec<_>>>()?;
    let stats = |c: &SimConfig, outcomes: Vec<PathOutcome>| PathStatistics {
        policy: c.policy,
        discount: c.discount,
        averaging_time: c.steps() as f64 * c.dt * (1.0 - if c.is_ergodic() { c.burn_in } else { 0.0 }),
        outcomes,
    };
    let (oc, of): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok((stats(&coarse_cfg, oc), stats(&fine_cfg, of)))
}

fn run_coupled(coarse: &Engine, fine: &Engine, (wa, wb): (f64, f64), seed: u64) -> Result<(PathOutcome, PathOutcome)> {
    let cfg = coarse.cfg;
    let level = coarse.levels[0];
    let mut rng = SmallRng::seed_from_u64(seed);
    let bridge_seed = splitmix64(seed ^ 0xb21d_6e5e_ed00_0001);
    let init = || {
        let mut s = State {
            x: cfg.x0,
            out: PathOutcome::default(),
            erng: SmallRng::seed_from_u64(bridge_seed),
        };
        if s.x > level {
            let push = s.x - level;
            s.x = level;
            if coarse.counted_from == 0 {
                s.out.control += coarse.gamma * push;
            }
            s.out.total_push += push;
            s.out.interventions += 1;
        }
        s
    };
    let (mut sc, mut sf) = (init(), init());
    let (mut fc, mut ff) = (coarse.cost.eval(sc.x), fine.cost.eval(sf.x));
    let h = cfg.dt;
    let disc = |t: f64| if cfg.is_ergodic() { 1.0 } else { (-cfg.discount * t).exp() };
    let mut none = None;
    for k in 0..cfg.steps() {
        let t0 = k as f64 * h;
        let (z1, z2): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let (d0, dm, d1) = (disc(t0), disc(t0 + 0.5 * h), disc(t0 + h));
        let counted_c = k >= coarse.counted_from;
        let counted_f = 2 * k >= fine.counted_from;
        let counted_f2 = 2 * k + 1 >= fine.counted_from;
        ff = fine.step_level(level, &mut sf, ff, fine.full.as_ref(), 0.5 * h, z1, (d0, dm), counted_f, t0 + 0.5 * h, &mut none)?;
        ff = fine.step_level(level, &mut sf, ff, fine.full.as_ref(), 0.5 * h, z2, (dm, d1), counted_f2, t0 + h, &mut none)?;
        fc = coarse.step_level(level, &mut sc, fc, coarse.full.as_ref(), h, wa * z1 + wb * z2, (d0, d1), counted_c, t0 + h, &mut none)?;
        if !cfg.is_ergodic() && d1 < DISCOUNT_FLOOR {
            break;
        }
    }
    Ok((sc.out, sf.out))
}
