//! Assignment mechanisms: complete, stratified, matched-pair and cluster
//! randomization.
//!
//! Every design resolves against a population into a [`Layout`]: a list of
//! blocks, each of which is a complete randomization of `treated` out of its
//! groups. A group is a set of units that always share one assignment (a
//! single unit, or a whole cluster). The support is the cartesian product of
//! the blocks' combination sets, ordered lexicographically with the first
//! block most significant, so the k-th assignment can be computed from `k`
//! directly.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::FinitePopulation;

pub const DEFAULT_CAP: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Design {
    Complete { n1: usize },
    /// Treated count per stratum label.
    Stratified { treated: BTreeMap<String, usize> },
    /// Strata of exactly two units, one treated in each.
    MatchedPairs,
    /// Complete randomization of `m1` whole clusters.
    Cluster { m1: usize },
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Design::Complete { n1 } => write!(f, "complete(n1={n1})"),
            Design::Stratified { treated } => {
                write!(f, "stratified(")?;
                for (i, (label, t)) in treated.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{label}={t}")?;
                }
                write!(f, ")")
            }
            Design::MatchedPairs => write!(f, "matched-pairs"),
            Design::Cluster { m1 } => write!(f, "cluster(m1={m1})"),
        }
    }
}

/// A realized binary treatment vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assignment(Vec<bool>);

impl Assignment {
    pub fn new(z: Vec<bool>) -> Self {
        Assignment(z)
    }

    pub fn from_indicators(z: &[u8]) -> Result<Self> {
        z.iter()
            .map(|&v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::IncompatibleAssignment(format!(
                    "assignment entries must be 0 or 1, got {other}"
                ))),
            })
            .collect::<Result<_>>()
            .map(Assignment)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn treated_count(&self) -> usize {
        self.0.iter().filter(|&&t| t).count()
    }

    pub fn indicators(&self) -> Vec<u8> {
        self.0.iter().map(|&t| t as u8).collect()
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &t in &self.0 {
            f.write_str(if t { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub label: Option<String>,
    /// Unit indices of each group, in population order.
    pub groups: Vec<Vec<usize>>,
    pub treated: usize,
}

impl Block {
    pub fn unit_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    fn combinations(&self) -> u128 {
        binomial(self.groups.len() as u64, self.treated as u64)
    }
}

/// A design resolved against a concrete set of units.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    design: Design,
    n: usize,
    blocks: Vec<Block>,
}

fn group_by_label(labels: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        map.entry(label.as_str()).or_default().push(i);
    }
    map
}

impl Layout {
    pub fn for_population(design: &Design, pop: &FinitePopulation) -> Result<Self> {
        Self::resolve(design, pop.len(), pop.strata().as_deref(), pop.clusters().as_deref())
    }

    pub fn resolve(
        design: &Design,
        n: usize,
        strata: Option<&[String]>,
        clusters: Option<&[String]>,
    ) -> Result<Self> {
        for labels in [strata, clusters].into_iter().flatten() {
            if labels.len() != n {
                return Err(Error::LengthMismatch { left: labels.len(), right: n });
            }
        }
        let blocks = match design {
            Design::Complete { n1 } => {
                if *n1 < 1 || *n1 + 1 > n {
                    return Err(Error::InvalidDesign(format!("complete design needs 1 ≤ n1 ≤ n−1, got n1={n1}, n={n}")));
                }
                vec![Block {
                    label: None,
                    groups: (0..n).map(|i| vec![i]).collect(),
                    treated: *n1,
                }]
            }
            Design::Stratified { treated } => {
                let Some(strata) = strata else {
                    return Err(Error::InvalidDesign("stratified design requires a stratum column".into()));
                };
                let groups = group_by_label(strata);
                let present: Vec<&str> = groups.keys().copied().collect();
                let declared: Vec<&str> = treated.keys().map(String::as_str).collect();
                if present != declared {
                    return Err(Error::InvalidDesign(format!(
                        "treated counts given for strata {declared:?} but population has {present:?}"
                    )));
                }
                groups
                    .into_iter()
                    .map(|(label, members)| {
                        let t = treated[label];
                        if t < 1 || t + 1 > members.len() {
                            return Err(Error::InvalidDesign(format!(
                                "stratum {label:?} has {} units; need 1 ≤ n1_h ≤ n_h−1, got {t}",
                                members.len()
                            )));
                        }
                        Ok(Block {
                            label: Some(label.to_string()),
                            groups: members.into_iter().map(|i| vec![i]).collect(),
                            treated: t,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            Design::MatchedPairs => {
                let Some(strata) = strata else {
                    return Err(Error::InvalidDesign("matched-pairs design requires a stratum column naming the pairs".into()));
                };
                group_by_label(strata)
                    .into_iter()
                    .map(|(label, members)| {
                        if members.len() != 2 {
                            return Err(Error::InvalidDesign(format!(
                                "pair {label:?} has {} units; every pair needs exactly 2",
                                members.len()
                            )));
                        }
                        Ok(Block {
                            label: Some(label.to_string()),
                            groups: members.into_iter().map(|i| vec![i]).collect(),
                            treated: 1,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            Design::Cluster { m1 } => {
                let Some(clusters) = clusters else {
                    return Err(Error::InvalidDesign("cluster design requires a cluster column".into()));
                };
                let groups: Vec<Vec<usize>> = group_by_label(clusters).into_values().collect();
                let m = groups.len();
                if *m1 < 1 || *m1 + 1 > m {
                    return Err(Error::InvalidDesign(format!("cluster design needs 1 ≤ m1 ≤ m−1, got m1={m1}, m={m}")));
                }
                vec![Block { label: None, groups, treated: *m1 }]
            }
        };
        Ok(Layout { design: design.clone(), n, blocks })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Exact support size.
    pub fn support_size(&self) -> BigUint {
        self.blocks
            .iter()
            .map(|b| BigUint::from(b.combinations()))
            .product()
    }

    /// Support size as a formula, e.g. `C(30,15)` or `C(3,1)·C(4,2)`.
    pub fn support_formula(&self) -> String {
        if matches!(self.design, Design::MatchedPairs) {
            return format!("2^{}", self.blocks.len());
        }
        self.blocks
            .iter()
            .map(|b| format!("C({},{})", b.groups.len(), b.treated))
            .collect::<Vec<_>>()
            .join("·")
    }

    /// The support size, or a refusal naming it when it exceeds `cap`.
    pub fn checked_support(&self, cap: u64) -> Result<u64> {
        let size = self.support_size();
        match size.to_u64() {
            Some(s) if s <= cap => Ok(s),
            _ => Err(Error::SupportTooLarge {
                support: format!("{size} ({})", self.support_formula()),
                cap,
            }),
        }
    }

    /// Why `z` lies outside the support, if it does.
    pub fn incompatibility(&self, z: &Assignment) -> Option<String> {
        if z.len() != self.n {
            return Some(format!("assignment has length {}, population has {} units", z.len(), self.n));
        }
        let z = z.as_slice();
        for block in &self.blocks {
            let mut treated = 0;
            for group in &block.groups {
                let first = z[group[0]];
                if group.iter().any(|&i| z[i] != first) {
                    return Some("units of one cluster received different assignments".into());
                }
                treated += first as usize;
            }
            if treated != block.treated {
                let place = match &block.label {
                    Some(label) => format!("stratum {label:?}"),
                    None => "the design".to_string(),
                };
                return Some(format!(
                    "{place} requires {} treated, assignment treats {treated}",
                    block.treated
                ));
            }
        }
        None
    }

    pub fn pmf(&self, z: &Assignment) -> BigRational {
        if self.incompatibility(z).is_some() {
            return BigRational::zero();
        }
        BigRational::new(1u32.into(), self.support_size().into())
    }

    /// Draws uniformly from the support: an independent uniform subset of
    /// groups in every block.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Assignment {
        let mut z = vec![false; self.n];
        for block in &self.blocks {
            for g in index::sample(rng, block.groups.len(), block.treated) {
                for &i in &block.groups[g] {
                    z[i] = true;
                }
            }
        }
        Assignment(z)
    }

    pub(crate) fn cursor_at(&self, rank: u64) -> Cursor<'_> {
        let mut combos: Vec<Vec<usize>> = Vec::with_capacity(self.blocks.len());
        let mut rest = rank as u128;
        let radices: Vec<u128> = self.blocks.iter().map(Block::combinations).collect();
        let mut digits = vec![0u128; self.blocks.len()];
        for (digit, &radix) in digits.iter_mut().zip(&radices).rev() {
            *digit = rest % radix;
            rest /= radix;
        }
        for (block, &digit) in self.blocks.iter().zip(&digits) {
            combos.push(unrank_combination(block.groups.len(), block.treated, digit));
        }
        Cursor { layout: self, combos }
    }

    /// The `rank`-th assignment in support order.
    pub fn assignment_at(&self, rank: u64) -> Assignment {
        let mut z = vec![false; self.n];
        self.cursor_at(rank).write(&mut z);
        Assignment(z)
    }

    /// Calls `visit` on every assignment with rank in `start..end`, reusing
    /// one buffer.
    pub fn for_each_in_range(&self, start: u64, end: u64, mut visit: impl FnMut(&[bool])) {
        if start >= end {
            return;
        }
        let mut cursor = self.cursor_at(start);
        let mut z = vec![false; self.n];
        for rank in start..end {
            cursor.write(&mut z);
            visit(&z);
            if rank + 1 < end {
                cursor.advance();
            }
        }
    }
}

/// Position within the support: the current combination of every block.
pub(crate) struct Cursor<'a> {
    layout: &'a Layout,
    combos: Vec<Vec<usize>>,
}

impl Cursor<'_> {
    fn write(&self, z: &mut [bool]) {
        z.fill(false);
        for (block, combo) in self.layout.blocks.iter().zip(&self.combos) {
            for &g in combo {
                for &i in &block.groups[g] {
                    z[i] = true;
                }
            }
        }
    }

    /// Steps to the next assignment; false after the last one (wrapping).
    fn advance(&mut self) -> bool {
        for (block, combo) in self.layout.blocks.iter().zip(self.combos.iter_mut()).rev() {
            if next_combination(combo, block.groups.len()) {
                return true;
            }
            for (k, slot) in combo.iter_mut().enumerate() {
                *slot = k;
            }
        }
        false
    }
}

/// Exact `C(n, k)`; saturates at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc·(n−i) is divisible by (i+1) because acc = C(n, i).
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Lexicographic successor of a sorted k-subset of `0..n`.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for i in (0..k).rev() {
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// The `rank`-th k-subset of `0..n` in lexicographic order.
fn unrank_combination(n: usize, k: usize, mut rank: u128) -> Vec<usize> {
    let mut combo = Vec::with_capacity(k);
    let mut candidate = 0usize;
    for pos in 0..k {
        loop {
            let remaining = (k - pos - 1) as u64;
            let with_candidate = binomial((n - candidate - 1) as u64, remaining);
            if rank < with_candidate {
                combo.push(candidate);
                candidate += 1;
                break;
            }
            rank -= with_candidate;
            candidate += 1;
        }
    }
    combo
}

/// Streams every assignment in the support, lexicographically.
#[derive(Debug)]
pub struct AssignmentIter {
    layout: Layout,
    next_rank: u64,
    size: u64,
}

impl Iterator for AssignmentIter {
    type Item = Assignment;

    fn next(&mut self) -> Option<Assignment> {
        if self.next_rank >= self.size {
            return None;
        }
        let z = self.layout.assignment_at(self.next_rank);
        self.next_rank += 1;
        Some(z)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.size - self.next_rank) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for AssignmentIter {}

pub fn assignment_pmf(design: &Design, pop: &FinitePopulation, z: &Assignment) -> Result<BigRational> {
    Ok(Layout::for_population(design, pop)?.pmf(z))
}

pub fn enumerate_assignments(design: &Design, pop: &FinitePopulation, cap: u64) -> Result<AssignmentIter> {
    let layout = Layout::for_population(design, pop)?;
    let size = layout.checked_support(cap)?;
    Ok(AssignmentIter { layout, next_rank: 0, size })
}

pub fn sample_assignment<R: Rng + ?Sized>(
    design: &Design,
    pop: &FinitePopulation,
    rng: &mut R,
) -> Result<Assignment> {
    Ok(Layout::for_population(design, pop)?.sample(rng))
}
