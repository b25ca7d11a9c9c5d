//! The observed-data layer: difference-in-means, arm variances, Neyman-style
//! variance estimators and normal-approximation intervals.
//!
//! Point estimation follows the design:
//!
//! * complete: treated mean minus control mean;
//! * stratified: stratum differences weighted by `n_h/n`, variance estimate
//!   `Σ (n_h/n)²·(s1h²/n1h + s0h²/n0h)`;
//! * matched pairs: mean of the K within-pair differences, variance estimate
//!   `Σ(d_k − d̄)² / (K(K−1))`. The within-pair effect variation is not
//!   identifiable, so this estimator is conservative by the spread of the
//!   pair-level effects;
//! * cluster: difference in means of cluster-mean outcomes over whole
//!   clusters. With unequal cluster sizes the estimand is the average of
//!   cluster-level effects, not the unit-level `tau_S`.

use num_rational::BigRational;
use serde::Serialize;
use serde_json::{json, Value};

use crate::design::{Assignment, Block, Design, Layout};
use crate::error::{Error, Result};
use crate::model::SuperPopulationModel;
use crate::normal::two_sided_critical;
use crate::population::{collect_scalars, FinitePopulation, FromOutcome, Outcome, PopulationSummary};
use crate::scalar::{mean, sample_variance, Scalar};

/// Post-randomization view of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedData {
    z: Assignment,
    yobs: Vec<Outcome>,
    layout: Layout,
}

impl ObservedData {
    /// Validates that `z` lies in the support of `layout`.
    pub fn new(layout: Layout, z: Assignment, yobs: Vec<Outcome>) -> Result<Self> {
        if yobs.len() != z.len() {
            return Err(Error::LengthMismatch { left: yobs.len(), right: z.len() });
        }
        if let Some(reason) = layout.incompatibility(&z) {
            return Err(Error::IncompatibleAssignment(reason));
        }
        if let Some(i) = yobs.iter().position(|y| !y.to_f64().is_finite()) {
            return Err(Error::InvalidUnit {
                unit: (i + 1).to_string(),
                reason: "observed outcome is not finite".into(),
            });
        }
        Ok(ObservedData { z, yobs, layout })
    }

    pub fn z(&self) -> &Assignment {
        &self.z
    }

    pub fn yobs(&self) -> &[Outcome] {
        &self.yobs
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn design(&self) -> &Design {
        self.layout.design()
    }

    pub fn is_exact(&self) -> bool {
        self.yobs.iter().all(|y| y.exact().is_some())
    }

    pub fn yobs_as<T: FromOutcome>(&self) -> Option<Vec<T>> {
        collect_scalars(&self.yobs)
    }
}

/// Reveals `y1` for treated units and `y0` for controls.
pub fn observe(pop: &FinitePopulation, design: &Design, z: &Assignment) -> Result<ObservedData> {
    if z.len() != pop.len() {
        return Err(Error::LengthMismatch { left: z.len(), right: pop.len() });
    }
    let layout = Layout::for_population(design, pop)?;
    let yobs = pop
        .units()
        .iter()
        .zip(z.as_slice())
        .map(|(u, &t)| if t { u.y1.clone() } else { u.y0.clone() })
        .collect();
    ObservedData::new(layout, z.clone(), yobs)
}

/// Design-aware point estimate in one numeric backend.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEstimate<T> {
    pub ybar1_obs: T,
    pub ybar0_obs: T,
    pub tau_hat: T,
    /// Arm variances, defined for complete designs (cluster designs: of
    /// cluster means) when the arm has at least two members.
    pub s1sq: Option<T>,
    pub s0sq: Option<T>,
    /// The design's conservative plug-in variance estimate.
    pub vhat: Option<T>,
}

struct TwoArm<T> {
    mean1: T,
    mean0: T,
    s1sq: Option<T>,
    s0sq: Option<T>,
}

impl<T: Scalar> TwoArm<T> {
    fn of(treated: &[T], control: &[T]) -> Self {
        let var = |xs: &[T]| (xs.len() >= 2).then(|| sample_variance(xs));
        TwoArm {
            mean1: mean(treated),
            mean0: mean(control),
            s1sq: var(treated),
            s0sq: var(control),
        }
    }

    fn vhat(&self, n1: usize, n0: usize) -> Option<T> {
        match (&self.s1sq, &self.s0sq) {
            (Some(a), Some(b)) => Some(a.clone() / T::from_count(n1) + b.clone() / T::from_count(n0)),
            _ => None,
        }
    }
}

fn group_mean<'a, T: Scalar + 'a>(group: &[usize], value: &impl Fn(usize) -> &'a T) -> T {
    let mut total = T::zero();
    for &i in group {
        total = total + value(i);
    }
    total / T::from_count(group.len())
}

/// Splits a block's group-level outcomes into treated and control arms.
fn split_block<'a, T: Scalar + 'a>(
    block: &Block,
    z: &[bool],
    value: &impl Fn(usize) -> &'a T,
) -> (Vec<T>, Vec<T>) {
    let mut treated = Vec::with_capacity(block.treated);
    let mut control = Vec::with_capacity(block.groups.len() - block.treated);
    for group in &block.groups {
        let y = if group.len() == 1 {
            value(group[0]).clone()
        } else {
            group_mean(group, value)
        };
        if z[group[0]] {
            treated.push(y);
        } else {
            control.push(y);
        }
    }
    (treated, control)
}

/// Point estimate for assignment `z`, reading unit `i`'s observed outcome
/// through `value(i)`. `z` must lie in the layout's support.
pub fn point_estimate_with<'a, T: Scalar + 'a>(
    layout: &Layout,
    z: &[bool],
    value: impl Fn(usize) -> &'a T,
) -> PointEstimate<T> {
    let n = T::from_count(layout.n());
    match layout.design() {
        Design::Complete { .. } | Design::Cluster { .. } => {
            let block = &layout.blocks()[0];
            let (treated, control) = split_block(block, z, &value);
            let arms = TwoArm::of(&treated, &control);
            let vhat = arms.vhat(treated.len(), control.len());
            PointEstimate {
                tau_hat: arms.mean1.clone() - &arms.mean0,
                ybar1_obs: arms.mean1,
                ybar0_obs: arms.mean0,
                s1sq: arms.s1sq,
                s0sq: arms.s0sq,
                vhat,
            }
        }
        Design::Stratified { .. } => {
            let mut ybar1 = T::zero();
            let mut ybar0 = T::zero();
            let mut vhat = Some(T::zero());
            for block in layout.blocks() {
                let (treated, control) = split_block(block, z, &value);
                let arms = TwoArm::of(&treated, &control);
                let w = T::from_count(block.unit_count()) / &n;
                ybar1 = ybar1 + &(w.clone() * &arms.mean1);
                ybar0 = ybar0 + &(w.clone() * &arms.mean0);
                vhat = match (vhat, arms.vhat(treated.len(), control.len())) {
                    (Some(acc), Some(v)) => Some(acc + &(w.square() * &v)),
                    _ => None,
                };
            }
            PointEstimate {
                tau_hat: ybar1.clone() - &ybar0,
                ybar1_obs: ybar1,
                ybar0_obs: ybar0,
                s1sq: None,
                s0sq: None,
                vhat,
            }
        }
        Design::MatchedPairs => {
            let mut treated = Vec::with_capacity(layout.blocks().len());
            let mut control = Vec::with_capacity(layout.blocks().len());
            for block in layout.blocks() {
                let (t, c) = split_block(block, z, &value);
                treated.extend(t);
                control.extend(c);
            }
            let diffs: Vec<T> = treated.iter().zip(&control).map(|(a, b)| a.clone() - b).collect();
            let k = diffs.len();
            let vhat = (k >= 2).then(|| sample_variance(&diffs) / T::from_count(k));
            let ybar1 = mean(&treated);
            let ybar0 = mean(&control);
            PointEstimate {
                tau_hat: ybar1.clone() - &ybar0,
                ybar1_obs: ybar1,
                ybar0_obs: ybar0,
                s1sq: None,
                s0sq: None,
                vhat,
            }
        }
    }
}

pub fn point_estimate<T: Scalar>(layout: &Layout, z: &[bool], yobs: &[T]) -> PointEstimate<T> {
    point_estimate_with(layout, z, |i| &yobs[i])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn around(center: f64, variance: f64, alpha: f64) -> Self {
        let half = two_sided_critical(alpha) * variance.sqrt();
        Interval { lo: center - half, hi: center + half }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum VarianceEstimate {
    Available {
        neyman: f64,
        sharp: f64,
        ci: Interval,
        ci_sharp: Interval,
    },
    /// An arm (or stratum arm) with a single member leaves s² undefined.
    Unavailable { reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    pub ybar1_obs: f64,
    pub ybar0_obs: f64,
    pub tau_hat: f64,
    pub s1sq: Option<f64>,
    pub s0sq: Option<f64>,
    pub variance: VarianceEstimate,
    pub alpha: f64,
}

impl EstimateReport {
    pub const FIELDS: [&'static str; 8] =
        ["tau_hat", "s1sq", "s0sq", "vhat_neyman", "vhat_sharp", "ci_lo", "ci_hi", "alpha"];

    pub fn vhat_neyman(&self) -> Option<f64> {
        match self.variance {
            VarianceEstimate::Available { neyman, .. } => Some(neyman),
            VarianceEstimate::Unavailable { .. } => None,
        }
    }

    pub fn vhat_sharp(&self) -> Option<f64> {
        match self.variance {
            VarianceEstimate::Available { sharp, .. } => Some(sharp),
            VarianceEstimate::Unavailable { .. } => None,
        }
    }

    pub fn ci(&self) -> Option<Interval> {
        match self.variance {
            VarianceEstimate::Available { ci, .. } => Some(ci),
            VarianceEstimate::Unavailable { .. } => None,
        }
    }

    pub fn ci_sharp(&self) -> Option<Interval> {
        match self.variance {
            VarianceEstimate::Available { ci_sharp, .. } => Some(ci_sharp),
            VarianceEstimate::Unavailable { .. } => None,
        }
    }

    /// Values in [`Self::FIELDS`] order; `None` where undefined.
    pub fn record(&self) -> [Option<f64>; 8] {
        let ci = self.ci();
        [
            Some(self.tau_hat),
            self.s1sq,
            self.s0sq,
            self.vhat_neyman(),
            self.vhat_sharp(),
            ci.map(|c| c.lo),
            ci.map(|c| c.hi),
            Some(self.alpha),
        ]
    }

    pub fn to_json(&self) -> Value {
        let mut map = serde_json::Map::new();
        for (name, value) in Self::FIELDS.iter().zip(self.record()) {
            map.insert((*name).into(), json!(value));
        }
        Value::Object(map)
    }

    pub fn csv_header() -> String {
        Self::FIELDS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.record()
            .iter()
            .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Sharp-bound adjustment of a two-arm variance estimate: subtract the
/// comonotone-coupling bound on the effect variance estimated from the arm
/// marginals. Clamped at zero.
fn sharp_adjusted(vhat: f64, treated: &[f64], control: &[f64], n: usize) -> f64 {
    let bound = coupling_variance(treated, control) * n as f64 / (n as f64 - 1.0);
    (vhat - bound / n as f64).max(0.0)
}

fn sharp_vhat(layout: &Layout, z: &[bool], yobs: &[f64], neyman: f64) -> f64 {
    let value = |i: usize| &yobs[i];
    match layout.design() {
        Design::Complete { .. } | Design::Cluster { .. } => {
            let block = &layout.blocks()[0];
            let (t, c) = split_block(block, z, &value);
            sharp_adjusted(neyman, &t, &c, block.groups.len())
        }
        Design::Stratified { .. } => {
            let n = layout.n() as f64;
            layout
                .blocks()
                .iter()
                .map(|block| {
                    let (t, c) = split_block(block, z, &value);
                    let arms = TwoArm::of(&t, &c);
                    let v = arms.vhat(t.len(), c.len()).unwrap_or(0.0);
                    let w = block.unit_count() as f64 / n;
                    w * w * sharp_adjusted(v, &t, &c, block.unit_count())
                })
                .sum()
        }
        // One observation per arm per pair carries no marginal information.
        Design::MatchedPairs => neyman,
    }
}

/// Difference-in-means report with Neyman plug-in variance and intervals
/// `tau_hat ± z_{1−alpha/2}·sqrt(vhat)`.
pub fn estimate(data: &ObservedData, alpha: f64) -> Result<EstimateReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Estimation(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let yobs: Vec<f64> = data.yobs.iter().map(Outcome::to_f64).collect();
    let z = data.z.as_slice();
    let layout = &data.layout;
    let point = point_estimate(layout, z, &yobs);
    let variance = match point.vhat {
        Some(neyman) => {
            let sharp = sharp_vhat(layout, z, &yobs, neyman).min(neyman);
            VarianceEstimate::Available {
                neyman,
                sharp,
                ci: Interval::around(point.tau_hat, neyman, alpha),
                ci_sharp: Interval::around(point.tau_hat, sharp, alpha),
            }
        }
        None => VarianceEstimate::Unavailable {
            reason: "an arm has fewer than two members, so its sample variance is undefined".into(),
        },
    };
    Ok(EstimateReport {
        ybar1_obs: point.ybar1_obs,
        ybar0_obs: point.ybar0_obs,
        tau_hat: point.tau_hat,
        s1sq: point.s1sq,
        s0sq: point.s0sq,
        variance,
        alpha,
    })
}

/// `S1²/n1 + S0²/n0 − S_τ²/n`.
pub fn neyman_formula<T: Scalar>(summary: &PopulationSummary<T>, n1: usize) -> T {
    let n0 = summary.n - n1;
    summary.s1sq.clone() / T::from_count(n1) + summary.s0sq.clone() / T::from_count(n0)
        - summary.stausq.clone() / T::from_count(summary.n)
}

/// Exact randomization variance of the difference in means under complete
/// randomization.
pub fn neyman_true_variance<T: Scalar>(summary: &PopulationSummary<T>, design: &Design) -> Result<T> {
    match design {
        Design::Complete { n1 } if *n1 >= 1 && *n1 < summary.n => Ok(neyman_formula(summary, *n1)),
        Design::Complete { n1 } => Err(Error::InvalidDesign(format!(
            "complete design needs 1 ≤ n1 ≤ n−1, got n1={n1}, n={}",
            summary.n
        ))),
        other => Err(Error::InvalidDesign(format!(
            "neyman_true_variance covers complete designs only, got {other}; use variance_by_design"
        ))),
    }
}

/// `V1/n1 + V0/n0`: the variance of the difference in means over both the
/// sampling of units and the assignment.
pub fn superpop_variance(model: &SuperPopulationModel, n1: usize, n0: usize) -> Result<f64> {
    if n1 == 0 || n0 == 0 {
        return Err(Error::Estimation("superpop_variance needs n1, n0 ≥ 1".into()));
    }
    let m = model.moments();
    Ok(m.v1 / n1 as f64 + m.v0 / n0 as f64)
}

/// Cluster-mean potential outcomes, one pair per cluster in layout order.
pub fn cluster_outcomes<T: Scalar>(block: &Block, y1: &[T], y0: &[T]) -> (Vec<T>, Vec<T>) {
    block
        .groups
        .iter()
        .map(|g| (group_mean(g, &|i| &y1[i]), group_mean(g, &|i| &y0[i])))
        .unzip()
}

fn block_summary<T: Scalar>(block: &Block, y1: &[T], y0: &[T]) -> PopulationSummary<T> {
    let (a, b) = cluster_outcomes(block, y1, y0);
    PopulationSummary::of(&a, &b)
}

/// Exact randomization variance of the design's point estimator, in closed form.
pub fn design_variance<T: Scalar>(layout: &Layout, y1: &[T], y0: &[T]) -> T {
    let n = T::from_count(layout.n());
    match layout.design() {
        Design::Complete { .. } | Design::Cluster { .. } => {
            let block = &layout.blocks()[0];
            neyman_formula(&block_summary(block, y1, y0), block.treated)
        }
        Design::Stratified { .. } | Design::MatchedPairs => {
            let mut total = T::zero();
            for block in layout.blocks() {
                let w = T::from_count(block.unit_count()) / &n;
                total = total + &(w.square() * &neyman_formula(&block_summary(block, y1, y0), block.treated));
            }
            total
        }
    }
}

/// The estimand the design's point estimator is unbiased for: `tau_S`, or
/// the average cluster-level effect under cluster randomization.
pub fn design_estimand<T: Scalar>(layout: &Layout, y1: &[T], y0: &[T]) -> T {
    match layout.design() {
        Design::Cluster { .. } => block_summary(&layout.blocks()[0], y1, y0).tau_s,
        _ => mean(y1) - mean(y0),
    }
}

/// `E(vhat | S) − Var(tau_hat | S)` in closed form, when the plug-in
/// estimator is defined on every assignment.
pub fn conservative_gap<T: Scalar>(layout: &Layout, y1: &[T], y0: &[T]) -> Option<T> {
    let n = T::from_count(layout.n());
    let arms_ok = |b: &Block| b.treated >= 2 && b.groups.len() - b.treated >= 2;
    match layout.design() {
        Design::Complete { .. } | Design::Cluster { .. } => {
            let block = &layout.blocks()[0];
            arms_ok(block).then(|| {
                block_summary(block, y1, y0).stausq / T::from_count(block.groups.len())
            })
        }
        Design::Stratified { .. } => {
            if !layout.blocks().iter().all(arms_ok) {
                return None;
            }
            let mut total = T::zero();
            for block in layout.blocks() {
                let nh = T::from_count(block.unit_count());
                let w = nh.clone() / &n;
                total = total + &(w.square() * &(block_summary(block, y1, y0).stausq / nh));
            }
            Some(total)
        }
        Design::MatchedPairs => {
            let k = layout.blocks().len();
            (k >= 2).then(|| {
                let effects: Vec<T> = layout
                    .blocks()
                    .iter()
                    .map(|b| block_summary(b, y1, y0).tau_s)
                    .collect();
                sample_variance(&effects) / T::from_count(k)
            })
        }
    }
}

/// Exact randomization variance of the design's estimator for `pop`.
///
/// Stratified: `Σ_h (n_h/n)²·V_h` with `V_h` the complete-randomization
/// variance within stratum h; matched pairs are the `n_h = 2` case; cluster:
/// the complete-randomization variance of cluster means over `(m, m1)`.
pub fn variance_by_design<T: FromOutcome>(pop: &FinitePopulation, design: &Design) -> Result<T> {
    let layout = Layout::for_population(design, pop)?;
    let outcomes = pop.outcomes::<T>().ok_or_else(|| {
        Error::Estimation("population has non-rational outcomes; use the f64 backend".into())
    })?;
    Ok(design_variance(&layout, &outcomes.y1, &outcomes.y0))
}

fn sorted<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("outcomes are comparable"));
    v
}

/// Smallest possible `S_τ²` (divisor n−1) over all pairings of the two
/// marginals, attained by pairing both in sorted order.
pub fn sharp_stau2_lower_bound<T: Scalar>(y1: &[T], y0: &[T]) -> Result<T> {
    if y1.len() != y0.len() {
        return Err(Error::LengthMismatch { left: y1.len(), right: y0.len() });
    }
    if y1.len() < 2 {
        return Err(Error::TooFewUnits(y1.len()));
    }
    let a = sorted(y1);
    let b = sorted(y0);
    let diffs: Vec<T> = a.iter().zip(&b).map(|(x, y)| x.clone() - y).collect();
    Ok(sample_variance(&diffs))
}

/// Variance (divisor-free) of `Q_a(U) − Q_b(U)` for `U` uniform on (0, 1),
/// where `Q` are the empirical quantile functions: the comonotone coupling
/// of two empirical marginals of possibly different sizes.
pub fn coupling_variance<T: Scalar>(a: &[T], b: &[T]) -> T {
    let a = sorted(a);
    let b = sorted(b);
    let (p, q) = (a.len(), b.len());
    // Work on the grid of multiples of 1/(p·q): element i of `a` spans q
    // cells, element j of `b` spans p cells.
    let total = T::from_count(p * q);
    let (mut i, mut j) = (0, 0);
    let (mut left_a, mut left_b) = (q, p);
    let mut first = T::zero();
    let mut second = T::zero();
    while i < p && j < q {
        let cells = left_a.min(left_b);
        let d = a[i].clone() - &b[j];
        let m = T::from_count(cells);
        first = first + &(m.clone() * &d);
        second = second + &(m * &d.square());
        left_a -= cells;
        left_b -= cells;
        if left_a == 0 {
            i += 1;
            left_a = q;
        }
        if left_b == 0 {
            j += 1;
            left_b = p;
        }
    }
    let mean_d = first / &total;
    second / &total - mean_d.square()
}

/// Exact variant of [`sharp_stau2_lower_bound`] for decimal inputs.
pub fn sharp_bound_exact(y1: &[BigRational], y0: &[BigRational]) -> Result<BigRational> {
    sharp_stau2_lower_bound(y1, y0)
}
