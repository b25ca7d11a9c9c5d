//! Exact enumeration over the assignment support.
//!
//! Moments are accumulated per fixed-size rank chunk and merged in chunk
//! order, so a parallel run and a serial run perform the same arithmetic in
//! the same order and return identical reports, in either backend.

use num_bigint::BigInt;
use num_rational::BigRational;

use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::design::{Design, Layout};
use crate::error::{Error, Result};
use crate::estimator::{conservative_gap, design_estimand, design_variance, point_estimate_with, ObservedData};
use crate::population::{FinitePopulation, FromOutcome, PopulationSummary};
use crate::scalar::{format_exact, mean, Scalar};

const CHUNK: u64 = 1024;

fn reduce_ranges<A, F, M>(total: u64, parallel: bool, run: F, merge: M) -> Option<A>
where
    A: Send,
    F: Fn(u64, u64) -> A + Sync + Send,
    M: Fn(A, A) -> A,
{
    let chunks = total.div_ceil(CHUNK);
    let span = |c: u64| (c * CHUNK, ((c + 1) * CHUNK).min(total));
    let parts: Vec<A> = if parallel {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let (a, b) = span(c);
                run(a, b)
            })
            .collect()
    } else {
        (0..chunks)
            .map(|c| {
                let (a, b) = span(c);
                run(a, b)
            })
            .collect()
    };
    parts.into_iter().reduce(merge)
}

fn add_opt<T: Scalar>(acc: Option<T>, x: Option<T>) -> Option<T> {
    match (acc, x) {
        (Some(a), Some(b)) => Some(a + &b),
        _ => None,
    }
}

struct Moments<T> {
    count: u64,
    tau: T,
    tau_sq: T,
    s1sq: Option<T>,
    s0sq: Option<T>,
    vhat: Option<T>,
}

impl<T: Scalar> Moments<T> {
    fn empty() -> Self {
        Moments {
            count: 0,
            tau: T::zero(),
            tau_sq: T::zero(),
            s1sq: Some(T::zero()),
            s0sq: Some(T::zero()),
            vhat: Some(T::zero()),
        }
    }

    fn merge(self, other: Self) -> Self {
        Moments {
            count: self.count + other.count,
            tau: self.tau + &other.tau,
            tau_sq: self.tau_sq + &other.tau_sq,
            s1sq: add_opt(self.s1sq, other.s1sq),
            s0sq: add_opt(self.s0sq, other.s0sq),
            vhat: add_opt(self.vhat, other.vhat),
        }
    }
}

/// One identity: `left` must equal `right` (exactly, or within
/// [`crate::scalar::FLOAT_REL_TOL`] in the float backend).
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCheck<T> {
    pub name: &'static str,
    pub left: T,
    pub right: T,
    pub holds: bool,
}

impl<T: Scalar> IdentityCheck<T> {
    fn new(name: &'static str, left: T, right: T) -> Self {
        let holds = left.agrees_with(&right);
        IdentityCheck { name, left, right, holds }
    }
}

/// Conditional moments of the design's estimator over its whole support.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumerationReport<T> {
    pub design: Design,
    pub support_size: u64,
    pub support_formula: String,
    pub mean_tau_hat: T,
    /// Streaming `E(τ̂²) − E(τ̂)²`.
    pub var_tau_hat: T,
    /// `Σ p(z)(τ̂(z) − mean)²` from a second pass.
    pub var_tau_hat_two_pass: T,
    /// `tau_S`, or the average cluster-level effect for cluster designs.
    pub estimand: T,
    pub mean_s1sq: Option<T>,
    pub mean_s0sq: Option<T>,
    /// Population (cluster-mean) `S1²`, `S0²` the arm variances target.
    pub s1sq: Option<T>,
    pub s0sq: Option<T>,
    pub mean_vhat_neyman: Option<T>,
    pub neyman_formula_value: T,
    pub f_s: T,
    /// Closed-form `E(vhat | S) − Var(τ̂ | S)`; `S_τ²/n` for complete designs.
    pub expected_gap: Option<T>,
    pub checks: Vec<IdentityCheck<T>>,
}

impl<T: Scalar> EnumerationReport<T> {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.holds).map(|c| c.name).collect()
    }

    pub fn to_json(&self) -> Value {
        let opt = |x: &Option<T>| x.as_ref().map_or(Value::Null, Scalar::to_json);
        let checks: Vec<Value> = self
            .checks
            .iter()
            .map(|c| {
                json!({
                    "name": c.name,
                    "left": c.left.to_json(),
                    "right": c.right.to_json(),
                    "holds": c.holds,
                })
            })
            .collect();
        json!({
            "design": self.design,
            "exact": T::EXACT,
            "support_size": self.support_size,
            "support_formula": self.support_formula,
            "mean_tau_hat": self.mean_tau_hat.to_json(),
            "var_tau_hat": self.var_tau_hat.to_json(),
            "var_tau_hat_two_pass": self.var_tau_hat_two_pass.to_json(),
            "estimand": self.estimand.to_json(),
            "mean_s1sq": opt(&self.mean_s1sq),
            "mean_s0sq": opt(&self.mean_s0sq),
            "S1sq": opt(&self.s1sq),
            "S0sq": opt(&self.s0sq),
            "mean_vhat_neyman": opt(&self.mean_vhat_neyman),
            "neyman_formula_value": self.neyman_formula_value.to_json(),
            "f_S": self.f_s.to_json(),
            "expected_gap": opt(&self.expected_gap),
            "checks": checks,
            "pass": self.all_hold(),
        })
    }
}

/// Enumerates the support of `layout` with potential outcomes `y1`, `y0`.
/// `parallel` splits the rank range across the current rayon pool.
pub fn enumerate_moments_as<T: Scalar>(
    layout: &Layout,
    y1: &[T],
    y0: &[T],
    cap: u64,
    parallel: bool,
) -> Result<EnumerationReport<T>> {
    if y1.len() != layout.n() || y0.len() != layout.n() {
        return Err(Error::LengthMismatch { left: y1.len(), right: layout.n() });
    }
    let total = layout.checked_support(cap)?;
    let observed = |z: &[bool], i: usize| if z[i] { &y1[i] } else { &y0[i] };

    let sums = reduce_ranges(
        total,
        parallel,
        |start, end| {
            let mut acc = Moments::<T>::empty();
            layout.for_each_in_range(start, end, |z| {
                let est = point_estimate_with(layout, z, |i| observed(z, i));
                acc.count += 1;
                acc.tau_sq = acc.tau_sq.clone() + &est.tau_hat.square();
                acc.tau = acc.tau.clone() + &est.tau_hat;
                acc.s1sq = add_opt(acc.s1sq.take(), est.s1sq);
                acc.s0sq = add_opt(acc.s0sq.take(), est.s0sq);
                acc.vhat = add_opt(acc.vhat.take(), est.vhat);
            });
            acc
        },
        Moments::merge,
    )
    .expect("support is never empty");
    debug_assert_eq!(sums.count, total);

    let count = T::from_count(total as usize);
    let mean_tau_hat = sums.tau / &count;
    let var_tau_hat = sums.tau_sq / &count - mean_tau_hat.square();
    let centered = reduce_ranges(
        total,
        parallel,
        |start, end| {
            let mut acc = T::zero();
            layout.for_each_in_range(start, end, |z| {
                let est = point_estimate_with(layout, z, |i| observed(z, i));
                acc = acc.clone() + &(est.tau_hat - &mean_tau_hat).square();
            });
            acc
        },
        |a, b| a + &b,
    )
    .expect("support is never empty");
    let var_tau_hat_two_pass = centered / &count;

    let per = |x: Option<T>| x.map(|s| s / &count);
    Ok(finish(
        layout,
        y1,
        y0,
        Raw {
            total,
            mean_tau_hat,
            var_tau_hat,
            var_tau_hat_two_pass,
            mean_s1sq: per(sums.s1sq),
            mean_s0sq: per(sums.s0sq),
            mean_vhat_neyman: per(sums.vhat),
        },
    ))
}

/// Support-level moments before the closed-form comparators are attached.
struct Raw<T> {
    total: u64,
    mean_tau_hat: T,
    var_tau_hat: T,
    var_tau_hat_two_pass: T,
    mean_s1sq: Option<T>,
    mean_s0sq: Option<T>,
    mean_vhat_neyman: Option<T>,
}

fn finish<T: Scalar>(layout: &Layout, y1: &[T], y0: &[T], raw: Raw<T>) -> EnumerationReport<T> {
    let Raw {
        total,
        mean_tau_hat,
        var_tau_hat,
        var_tau_hat_two_pass,
        mean_s1sq,
        mean_s0sq,
        mean_vhat_neyman,
    } = raw;
    let (s1sq, s0sq) = match layout.design() {
        Design::Complete { .. } | Design::Cluster { .. } => {
            let block = &layout.blocks()[0];
            let (a, b) = crate::estimator::cluster_outcomes(block, y1, y0);
            let summary = PopulationSummary::of(&a, &b);
            (Some(summary.s1sq), Some(summary.s0sq))
        }
        _ => (None, None),
    };
    let estimand = design_estimand(layout, y1, y0);
    let neyman_formula_value = design_variance(layout, y1, y0);
    let f_s = neyman_formula_value.clone() - &var_tau_hat;
    let expected_gap = conservative_gap(layout, y1, y0);

    let mut checks = vec![
        IdentityCheck::new("f_S = 0", f_s.clone(), T::zero()),
        IdentityCheck::new("mean_tau_hat = estimand", mean_tau_hat.clone(), estimand.clone()),
        IdentityCheck::new(
            "one-pass var = two-pass var",
            var_tau_hat.clone(),
            var_tau_hat_two_pass.clone(),
        ),
    ];
    if let (Some(m), Some(s)) = (&mean_s1sq, &s1sq) {
        checks.push(IdentityCheck::new("mean_s1sq = S1sq", m.clone(), s.clone()));
    }
    if let (Some(m), Some(s)) = (&mean_s0sq, &s0sq) {
        checks.push(IdentityCheck::new("mean_s0sq = S0sq", m.clone(), s.clone()));
    }
    if let (Some(v), Some(gap)) = (&mean_vhat_neyman, &expected_gap) {
        checks.push(IdentityCheck::new(
            "mean_vhat_neyman − var_tau_hat = gap",
            v.clone() - &var_tau_hat,
            gap.clone(),
        ));
    }

    EnumerationReport {
        design: layout.design().clone(),
        support_size: total,
        support_formula: layout.support_formula(),
        mean_tau_hat,
        var_tau_hat,
        var_tau_hat_two_pass,
        estimand,
        mean_s1sq,
        mean_s0sq,
        s1sq,
        s0sq,
        mean_vhat_neyman,
        neyman_formula_value,
        f_s,
        expected_gap,
        checks,
    }
}

/// Outcomes rescaled to integers by a common denominator `scale`.
struct Scaled {
    scale: BigInt,
    y1: Vec<i128>,
    y0: Vec<i128>,
}

impl Scaled {
    /// Magnitude bound keeping every per-chunk sum of squares inside `i128`.
    const LIMIT: i128 = 1 << 40;

    fn of(y1: &[BigRational], y0: &[BigRational]) -> Option<Self> {
        if y1.len() > 1024 {
            return None;
        }
        let scale = y1
            .iter()
            .chain(y0)
            .fold(BigInt::from(1), |acc, y| num_integer::Integer::lcm(&acc, y.denom()));
        let lift = |ys: &[BigRational]| -> Option<Vec<i128>> {
            ys.iter()
                .map(|y| {
                    let v = num_traits::ToPrimitive::to_i128(&(y.numer() * (&scale / y.denom())))?;
                    (v.abs() < Self::LIMIT).then_some(v)
                })
                .collect()
        };
        Some(Scaled { y1: lift(y1)?, y0: lift(y0)?, scale: scale.clone() })
    }
}

#[derive(Default)]
struct IntSums {
    t: BigInt,
    t_sq: BigInt,
    q1: BigInt,
    q0: BigInt,
    s1_sq: BigInt,
    s0_sq: BigInt,
}

impl IntSums {
    fn merge(mut self, other: Self) -> Self {
        self.t += other.t;
        self.t_sq += other.t_sq;
        self.q1 += other.q1;
        self.q0 += other.q0;
        self.s1_sq += other.s1_sq;
        self.s0_sq += other.s0_sq;
        self
    }
}

/// Per-assignment arm sums `(S1, Q1, S0, Q0)` of the scaled outcomes.
fn arm_sums(z: &[bool], y: &Scaled) -> (i128, i128, i128, i128) {
    let (mut s1, mut q1, mut s0, mut q0) = (0i128, 0i128, 0i128, 0i128);
    for (i, &treated) in z.iter().enumerate() {
        if treated {
            s1 += y.y1[i];
            q1 += y.y1[i] * y.y1[i];
        } else {
            s0 += y.y0[i];
            q0 += y.y0[i] * y.y0[i];
        }
    }
    (s1, q1, s0, q0)
}

/// Complete-design enumeration on integer-scaled outcomes. With
/// `t = n0·S1 − n1·S0`, `τ̂ = t / (D·n1·n0)` and
/// `s1² = (Q1 − S1²/n1) / ((n1 − 1)·D²)`, so every support sum is an integer
/// and the rationals are formed once at the end.
fn enumerate_complete_scaled(
    layout: &Layout,
    y1: &[BigRational],
    y0: &[BigRational],
    scaled: &Scaled,
    total: u64,
    parallel: bool,
) -> EnumerationReport<BigRational> {
    let n = layout.n();
    let n1 = layout.blocks()[0].treated;
    let n0 = n - n1;
    let (m1, m0) = (n1 as i128, n0 as i128);
    let sums = reduce_ranges(
        total,
        parallel,
        |start, end| {
            let (mut t, mut t_sq) = (BigInt::from(0), BigInt::from(0));
            let (mut q1, mut q0, mut s1_sq, mut s0_sq) = (0i128, 0i128, 0i128, 0i128);
            layout.for_each_in_range(start, end, |z| {
                let (s1, sq1, s0, sq0) = arm_sums(z, scaled);
                let ti = BigInt::from(m0 * s1 - m1 * s0);
                t_sq += &ti * &ti;
                t += ti;
                q1 += sq1;
                q0 += sq0;
                s1_sq += s1 * s1;
                s0_sq += s0 * s0;
            });
            IntSums {
                t,
                t_sq,
                q1: q1.into(),
                q0: q0.into(),
                s1_sq: s1_sq.into(),
                s0_sq: s0_sq.into(),
            }
        },
        IntSums::merge,
    )
    .expect("support is never empty");

    let big_n = BigInt::from(total);
    let centered = reduce_ranges(
        total,
        parallel,
        |start, end| {
            let mut acc = BigInt::from(0);
            layout.for_each_in_range(start, end, |z| {
                let (s1, _, s0, _) = arm_sums(z, scaled);
                let d = &big_n * BigInt::from(m0 * s1 - m1 * s0) - &sums.t;
                acc += &d * &d;
            });
            acc
        },
        |a, b| a + b,
    )
    .expect("support is never empty");

    let rat = |num: BigInt, den: BigInt| BigRational::new(num, den);
    let int = |x: usize| BigInt::from(x);
    let d2 = &scaled.scale * &scaled.scale;
    let unit = &scaled.scale * int(n1 * n0);
    let unit_sq = &unit * &unit;
    let mean_tau_hat = rat(sums.t.clone(), &big_n * &unit);
    let var_tau_hat = rat(&sums.t_sq * &big_n - &sums.t * &sums.t, &big_n * &big_n * &unit_sq);
    let var_tau_hat_two_pass = rat(centered, &big_n * &big_n * &big_n * &unit_sq);
    let arm_mean = |q: &BigInt, s_sq: &BigInt, k: usize| {
        (k >= 2).then(|| rat(q * int(k) - s_sq, int(k) * int(k - 1) * &big_n * &d2))
    };
    let mean_s1sq = arm_mean(&sums.q1, &sums.s1_sq, n1);
    let mean_s0sq = arm_mean(&sums.q0, &sums.s0_sq, n0);
    let mean_vhat_neyman = match (&mean_s1sq, &mean_s0sq) {
        (Some(a), Some(b)) => Some(a / rat(int(n1), int(1)) + b / rat(int(n0), int(1))),
        _ => None,
    };
    finish(
        layout,
        y1,
        y0,
        Raw {
            total,
            mean_tau_hat,
            var_tau_hat,
            var_tau_hat_two_pass,
            mean_s1sq,
            mean_s0sq,
            mean_vhat_neyman,
        },
    )
}

/// Exact enumeration. Complete designs whose outcomes rescale to small
/// integers take an integer-accumulator path; everything else runs the
/// generic rational reduction.
pub fn enumerate_moments_exact(
    layout: &Layout,
    y1: &[BigRational],
    y0: &[BigRational],
    cap: u64,
    parallel: bool,
) -> Result<EnumerationReport<BigRational>> {
    if y1.len() != layout.n() || y0.len() != layout.n() {
        return Err(Error::LengthMismatch { left: y1.len(), right: layout.n() });
    }
    if let Design::Complete { .. } = layout.design() {
        if let Some(scaled) = Scaled::of(y1, y0) {
            let total = layout.checked_support(cap)?;
            return Ok(enumerate_complete_scaled(layout, y1, y0, &scaled, total, parallel));
        }
    }
    enumerate_moments_as(layout, y1, y0, cap, parallel)
}

/// An enumeration in the backend the population supports.
#[derive(Clone, Debug, PartialEq)]
pub enum Enumerated {
    Exact(EnumerationReport<BigRational>),
    Approx(EnumerationReport<f64>),
}

impl Enumerated {
    pub fn all_hold(&self) -> bool {
        match self {
            Enumerated::Exact(r) => r.all_hold(),
            Enumerated::Approx(r) => r.all_hold(),
        }
    }

    pub fn failures(&self) -> Vec<&'static str> {
        match self {
            Enumerated::Exact(r) => r.failures(),
            Enumerated::Approx(r) => r.failures(),
        }
    }

    pub fn support_size(&self) -> u64 {
        match self {
            Enumerated::Exact(r) => r.support_size,
            Enumerated::Approx(r) => r.support_size,
        }
    }

    pub fn var_tau_hat(&self) -> f64 {
        match self {
            Enumerated::Exact(r) => r.var_tau_hat.to_f64(),
            Enumerated::Approx(r) => r.var_tau_hat,
        }
    }

    pub fn exact(&self) -> Option<&EnumerationReport<BigRational>> {
        match self {
            Enumerated::Exact(r) => Some(r),
            Enumerated::Approx(_) => None,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Enumerated::Exact(r) => r.to_json(),
            Enumerated::Approx(r) => r.to_json(),
        }
    }
}

/// Exact conditional moments of the design's estimator given `pop`:
/// rational arithmetic when every outcome is decimal-rational, else `f64`.
pub fn enumerate_moments(pop: &FinitePopulation, design: &Design, cap: u64) -> Result<Enumerated> {
    let layout = Layout::for_population(design, pop)?;
    match pop.outcomes::<BigRational>() {
        Some(o) => enumerate_moments_exact(&layout, &o.y1, &o.y0, cap, true).map(Enumerated::Exact),
        None => {
            let o = pop.float_outcomes();
            enumerate_moments_as(&layout, &o.y1, &o.y0, cap, true).map(Enumerated::Approx)
        }
    }
}

/// Centered potential outcomes `U_i = y1_i − ȳ1`, `W_i = y0_i − ȳ0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualVectors<T> {
    pub u: Vec<T>,
    pub w: Vec<T>,
}

impl<T: Scalar> ResidualVectors<T> {
    pub fn of(y1: &[T], y0: &[T]) -> Self {
        let center = |ys: &[T]| {
            let m = mean(ys);
            ys.iter().map(|y| y.clone() - &m).collect()
        };
        ResidualVectors { u: center(y1), w: center(y0) }
    }

    /// `(ΣU, ΣW)`; both vanish for residuals built by [`ResidualVectors::of`].
    pub fn sums(&self) -> (T, T) {
        let total = |xs: &[T]| xs.iter().fold(T::zero(), |acc, x| acc + x);
        (total(&self.u), total(&self.w))
    }
}

/// Checks `τ̂ − τ_S = ΣZ_iU_i/n1 − Σ(1−Z_i)W_i/n0` on every assignment of a
/// complete design, using the supplied residuals.
pub fn verify_residual_identity_with<T: Scalar>(
    layout: &Layout,
    y1: &[T],
    y0: &[T],
    residuals: &ResidualVectors<T>,
    cap: u64,
) -> Result<bool> {
    let n1 = match layout.design() {
        Design::Complete { n1 } => *n1,
        other => {
            return Err(Error::InvalidDesign(format!(
                "the residual identity is stated for complete designs, got {other}"
            )))
        }
    };
    let n = layout.n();
    if residuals.u.len() != n || residuals.w.len() != n {
        return Err(Error::LengthMismatch { left: residuals.u.len(), right: n });
    }
    let total = layout.checked_support(cap)?;
    let tau_s = mean(y1) - mean(y0);
    let (c1, c0) = (T::from_count(n1), T::from_count(n - n1));
    let holds = reduce_ranges(
        total,
        true,
        |start, end| {
            let mut ok = true;
            layout.for_each_in_range(start, end, |z| {
                let mut sum1 = T::zero();
                let mut sum0 = T::zero();
                let mut sum_u = T::zero();
                let mut sum_w = T::zero();
                for i in 0..n {
                    if z[i] {
                        sum1 = sum1.clone() + &y1[i];
                        sum_u = sum_u.clone() + &residuals.u[i];
                    } else {
                        sum0 = sum0.clone() + &y0[i];
                        sum_w = sum_w.clone() + &residuals.w[i];
                    }
                }
                let lhs = sum1 / &c1 - sum0 / &c0 - &tau_s;
                let rhs = sum_u / &c1 - sum_w / &c0;
                ok &= lhs.agrees_with(&rhs);
            });
            ok
        },
        |a, b| a && b,
    );
    Ok(holds.unwrap_or(true))
}

pub fn verify_residual_identity(pop: &FinitePopulation, design: &Design, cap: u64) -> Result<bool> {
    let layout = Layout::for_population(design, pop)?;
    match pop.outcomes::<BigRational>() {
        Some(o) => {
            let r = ResidualVectors::of(&o.y1, &o.y0);
            verify_residual_identity_with(&layout, &o.y1, &o.y0, &r, cap)
        }
        None => {
            let o = pop.float_outcomes();
            let r = ResidualVectors::of(&o.y1, &o.y0);
            verify_residual_identity_with(&layout, &o.y1, &o.y0, &r, cap)
        }
    }
}

/// Test statistics for the randomization test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrtStatistic {
    /// `|τ̂|` for the design's point estimator.
    #[default]
    AbsDiffMeans,
}

impl FrtStatistic {
    fn eval<T: Scalar>(self, layout: &Layout, z: &[bool], yobs: &[T]) -> T {
        match self {
            FrtStatistic::AbsDiffMeans => {
                let tau = point_estimate_with(layout, z, |i| &yobs[i]).tau_hat;
                if tau < T::zero() {
                    -tau
                } else {
                    tau
                }
            }
        }
    }
}

/// `stat ≥ observed`, with float ties absorbed by the backend tolerance.
fn at_least<T: Scalar>(stat: &T, observed: &T) -> bool {
    stat >= observed || stat.agrees_with(observed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrtExact {
    pub statistic: FrtStatistic,
    pub observed: f64,
    pub extreme: u64,
    pub support_size: u64,
    pub p_value: BigRational,
}

impl FrtExact {
    pub fn p_f64(&self) -> f64 {
        self.p_value.to_f64()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "method": "exact",
            "statistic": self.statistic,
            "observed": self.observed,
            "extreme": self.extreme,
            "support_size": self.support_size,
            "p_value": format_exact(&self.p_value),
            "p_value_approx": self.p_f64(),
        })
    }
}

fn imputed<T: FromOutcome>(data: &ObservedData) -> Option<Vec<T>> {
    data.yobs_as::<T>()
}

fn frt_exact_as<T: Scalar>(
    data: &ObservedData,
    yobs: &[T],
    statistic: FrtStatistic,
    cap: u64,
) -> Result<FrtExact> {
    let layout = data.layout();
    let total = layout.checked_support(cap)?;
    let observed = statistic.eval(layout, data.z().as_slice(), yobs);
    let extreme = reduce_ranges(
        total,
        true,
        |start, end| {
            let mut count = 0u64;
            layout.for_each_in_range(start, end, |z| {
                if at_least(&statistic.eval(layout, z, yobs), &observed) {
                    count += 1;
                }
            });
            count
        },
        |a, b| a + b,
    )
    .unwrap_or(0);
    Ok(FrtExact {
        statistic,
        observed: observed.to_f64(),
        extreme,
        support_size: total,
        p_value: BigRational::new(BigInt::from(extreme), BigInt::from(total)),
    })
}

/// Exact randomization p-value under the sharp null `Y(1) = Y(0) = Y^obs`.
pub fn frt_exact(data: &ObservedData, statistic: FrtStatistic, cap: u64) -> Result<FrtExact> {
    match imputed::<BigRational>(data) {
        Some(y) => frt_exact_as(data, &y, statistic, cap),
        None => frt_exact_as(data, &imputed::<f64>(data).unwrap_or_default(), statistic, cap),
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct FrtMonteCarlo {
    pub statistic: FrtStatistic,
    pub observed: f64,
    pub draws: u64,
    pub extreme: u64,
    /// `(1 + extreme) / (1 + draws)`.
    pub p_value: f64,
    /// Binomial standard error `sqrt(p(1 − p)/draws)`.
    pub se: f64,
}

impl FrtMonteCarlo {
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("method".into(), json!("monte-carlo"));
        if let Value::Object(fields) = json!(self) {
            map.extend(fields);
        }
        Value::Object(map)
    }
}

fn frt_monte_carlo_as<T: Scalar, R: Rng + ?Sized>(
    data: &ObservedData,
    yobs: &[T],
    statistic: FrtStatistic,
    draws: u64,
    rng: &mut R,
) -> FrtMonteCarlo {
    let layout = data.layout();
    let observed = statistic.eval(layout, data.z().as_slice(), yobs);
    let mut extreme = 0u64;
    for _ in 0..draws {
        let z = layout.sample(rng);
        if at_least(&statistic.eval(layout, z.as_slice(), yobs), &observed) {
            extreme += 1;
        }
    }
    let p = (1 + extreme) as f64 / (1 + draws) as f64;
    FrtMonteCarlo {
        statistic,
        observed: observed.to_f64(),
        draws,
        extreme,
        p_value: p,
        se: (p * (1.0 - p) / draws as f64).sqrt(),
    }
}

/// Monte Carlo randomization p-value from `draws ≥ 100` sampled assignments.
pub fn frt_monte_carlo<R: Rng + ?Sized>(
    data: &ObservedData,
    statistic: FrtStatistic,
    draws: u64,
    rng: &mut R,
) -> Result<FrtMonteCarlo> {
    if draws < 100 {
        return Err(Error::Config(format!("frt_monte_carlo needs draws ≥ 100, got {draws}")));
    }
    Ok(match imputed::<BigRational>(data) {
        Some(y) => frt_monte_carlo_as(data, &y, statistic, draws, rng),
        None => frt_monte_carlo_as(
            data,
            &imputed::<f64>(data).unwrap_or_default(),
            statistic,
            draws,
            rng,
        ),
    })
}
