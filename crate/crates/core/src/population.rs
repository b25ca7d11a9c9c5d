//! Finite populations of potential outcomes and their summary functionals.

use num_rational::BigRational;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::scalar::{mean, sample_covariance, sample_variance, Scalar};

/// One potential outcome. Decimal input stays exact; simulated draws are
/// stored as doubles.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Exact(BigRational),
    Float(f64),
}

impl Outcome {
    pub fn to_f64(&self) -> f64 {
        match self {
            Outcome::Exact(q) => Scalar::to_f64(q),
            Outcome::Float(x) => *x,
        }
    }

    pub fn exact(&self) -> Option<&BigRational> {
        match self {
            Outcome::Exact(q) => Some(q),
            Outcome::Float(_) => None,
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Outcome::Exact(_) => true,
            Outcome::Float(x) => x.is_finite(),
        }
    }
}

impl From<f64> for Outcome {
    fn from(x: f64) -> Self {
        Outcome::Float(x)
    }
}

impl From<BigRational> for Outcome {
    fn from(q: BigRational) -> Self {
        Outcome::Exact(q)
    }
}

impl From<i64> for Outcome {
    fn from(v: i64) -> Self {
        Outcome::Exact(BigRational::from_integer(v.into()))
    }
}

/// Scalars that can be read off an [`Outcome`]. Rationals only accept exact
/// outcomes; doubles accept everything.
pub trait FromOutcome: Scalar {
    fn from_outcome(outcome: &Outcome) -> Option<Self>;
}

impl FromOutcome for f64 {
    fn from_outcome(outcome: &Outcome) -> Option<Self> {
        Some(outcome.to_f64())
    }
}

impl FromOutcome for BigRational {
    fn from_outcome(outcome: &Outcome) -> Option<Self> {
        outcome.exact().cloned()
    }
}

pub(crate) fn collect_scalars<T: FromOutcome>(values: &[Outcome]) -> Option<Vec<T>> {
    values.iter().map(T::from_outcome).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub id: String,
    pub y1: Outcome,
    pub y0: Outcome,
    pub stratum: Option<String>,
    pub cluster: Option<String>,
}

impl Unit {
    pub fn new(id: impl Into<String>, y1: impl Into<Outcome>, y0: impl Into<Outcome>) -> Self {
        Unit {
            id: id.into(),
            y1: y1.into(),
            y0: y0.into(),
            stratum: None,
            cluster: None,
        }
    }

    pub fn with_stratum(mut self, label: impl Into<String>) -> Self {
        self.stratum = Some(label.into());
        self
    }

    pub fn with_cluster(mut self, label: impl Into<String>) -> Self {
        self.cluster = Some(label.into());
        self
    }
}

/// Potential outcomes of a population in one numeric backend.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialOutcomes<T> {
    pub y1: Vec<T>,
    pub y0: Vec<T>,
}

/// The fixed experimental sample: `n ≥ 2` units, each carrying both
/// potential outcomes. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct FinitePopulation {
    units: Vec<Unit>,
}

impl FinitePopulation {
    pub fn new(units: Vec<Unit>) -> Result<Self> {
        if units.len() < 2 {
            return Err(Error::TooFewUnits(units.len()));
        }
        for unit in &units {
            for (name, value) in [("y1", &unit.y1), ("y0", &unit.y0)] {
                if !value.is_finite() {
                    return Err(Error::InvalidUnit {
                        unit: unit.id.clone(),
                        reason: format!("{name} is not a finite number"),
                    });
                }
            }
            for (name, label) in [("stratum", &unit.stratum), ("cluster", &unit.cluster)] {
                if matches!(label, Some(l) if l.is_empty()) {
                    return Err(Error::InvalidUnit {
                        unit: unit.id.clone(),
                        reason: format!("empty {name} label"),
                    });
                }
            }
        }
        let strata = units.iter().filter(|u| u.stratum.is_some()).count();
        if strata != 0 && strata != units.len() {
            return Err(Error::PartialLabels { label: "stratum" });
        }
        let clusters = units.iter().filter(|u| u.cluster.is_some()).count();
        if clusters != 0 && clusters != units.len() {
            return Err(Error::PartialLabels { label: "cluster" });
        }
        Ok(FinitePopulation { units })
    }

    /// Builds an unlabeled population from paired outcome vectors.
    pub fn from_pairs<A: Into<Outcome>, B: Into<Outcome>>(
        y1: impl IntoIterator<Item = A>,
        y0: impl IntoIterator<Item = B>,
    ) -> Result<Self> {
        let y1: Vec<Outcome> = y1.into_iter().map(Into::into).collect();
        let y0: Vec<Outcome> = y0.into_iter().map(Into::into).collect();
        if y1.len() != y0.len() {
            return Err(Error::LengthMismatch {
                left: y1.len(),
                right: y0.len(),
            });
        }
        let units = y1
            .into_iter()
            .zip(y0)
            .enumerate()
            .map(|(i, (a, b))| Unit::new((i + 1).to_string(), a, b))
            .collect();
        Self::new(units)
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn is_exact(&self) -> bool {
        self.units
            .iter()
            .all(|u| u.y1.exact().is_some() && u.y0.exact().is_some())
    }

    pub fn strata(&self) -> Option<Vec<String>> {
        self.units.iter().map(|u| u.stratum.clone()).collect()
    }

    pub fn clusters(&self) -> Option<Vec<String>> {
        self.units.iter().map(|u| u.cluster.clone()).collect()
    }

    /// Outcomes in backend `T`; `None` when `T` is exact and some outcome is not.
    pub fn outcomes<T: FromOutcome>(&self) -> Option<PotentialOutcomes<T>> {
        let y1 = self.units.iter().map(|u| T::from_outcome(&u.y1)).collect::<Option<_>>()?;
        let y0 = self.units.iter().map(|u| T::from_outcome(&u.y0)).collect::<Option<_>>()?;
        Some(PotentialOutcomes { y1, y0 })
    }

    pub fn float_outcomes(&self) -> PotentialOutcomes<f64> {
        self.outcomes().expect("every outcome converts to f64")
    }

    /// Same units, reordered: `order[k]` is the source index of the k-th unit.
    /// Unit-level effects `y1 − y0`, differenced exactly when both outcomes
    /// are rational and rounded once.
    pub fn unit_effects_f64(&self) -> Vec<f64> {
        self.units
            .iter()
            .map(|u| match (&u.y1, &u.y0) {
                (Outcome::Exact(a), Outcome::Exact(b)) => Scalar::to_f64(&(a - b)),
                (a, b) => a.to_f64() - b.to_f64(),
            })
            .collect()
    }

    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::LengthMismatch {
                left: order.len(),
                right: self.len(),
            });
        }
        Self::new(order.iter().map(|&i| self.units[i].clone()).collect())
    }
}

/// Finite-population means and (n−1)-divisor variances of a population.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationSummary<T> {
    pub n: usize,
    pub ybar1: T,
    pub ybar0: T,
    pub tau_s: T,
    pub s1sq: T,
    pub s0sq: T,
    pub stausq: T,
    pub s10: T,
}

impl<T: Scalar> PopulationSummary<T> {
    /// Caller guarantees equal lengths of at least two.
    pub fn of(y1: &[T], y0: &[T]) -> Self {
        debug_assert_eq!(y1.len(), y0.len());
        debug_assert!(y1.len() >= 2);
        let effects: Vec<T> = y1.iter().zip(y0).map(|(a, b)| a.clone() - b).collect();
        let ybar1 = mean(y1);
        let ybar0 = mean(y0);
        PopulationSummary {
            n: y1.len(),
            tau_s: ybar1.clone() - &ybar0,
            ybar1,
            ybar0,
            s1sq: sample_variance(y1),
            s0sq: sample_variance(y0),
            stausq: sample_variance(&effects),
            s10: sample_covariance(y1, y0),
        }
    }

    pub fn to_f64(&self) -> PopulationSummary<f64> {
        PopulationSummary {
            n: self.n,
            ybar1: self.ybar1.to_f64(),
            ybar0: self.ybar0.to_f64(),
            tau_s: self.tau_s.to_f64(),
            s1sq: self.s1sq.to_f64(),
            s0sq: self.s0sq.to_f64(),
            stausq: self.stausq.to_f64(),
            s10: self.s10.to_f64(),
        }
    }

    pub fn fields(&self) -> [(&'static str, &T); 7] {
        [
            ("ybar1", &self.ybar1),
            ("ybar0", &self.ybar0),
            ("tau_S", &self.tau_s),
            ("S1sq", &self.s1sq),
            ("S0sq", &self.s0sq),
            ("Stausq", &self.stausq),
            ("S10", &self.s10),
        ]
    }

    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("n".into(), json!(self.n));
        for (name, value) in self.fields() {
            map.insert(name.into(), value.to_json());
        }
        Value::Object(map)
    }
}

/// Summary of a population: always in double precision, and additionally
/// exact when every outcome is rational.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub approx: PopulationSummary<f64>,
    pub exact: Option<PopulationSummary<BigRational>>,
}

impl Summary {
    pub fn to_json(&self) -> Value {
        match &self.exact {
            Some(exact) => exact.to_json(),
            None => self.approx.to_json(),
        }
    }
}

pub fn summarize(pop: &FinitePopulation) -> Summary {
    let exact = pop
        .outcomes::<BigRational>()
        .map(|o| PopulationSummary::of(&o.y1, &o.y0));
    let approx = match &exact {
        Some(e) => e.to_f64(),
        None => {
            let o = pop.float_outcomes();
            PopulationSummary::of(&o.y1, &o.y0)
        }
    };
    Summary { approx, exact }
}
