//! Monte Carlo studies over super-population draws.
//!
//! Replication `r` draws its population and its assignment from a ChaCha20
//! stream seeded with `master_seed` and positioned on stream `r`, so every
//! replication is a fixed function of `(master_seed, r)`. Replications are
//! computed in any order on any number of workers, collected by index, and
//! reduced serially; reports are bit-identical across thread counts.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::design::{Design, Layout, DEFAULT_CAP};
use crate::error::{Error, Result};
use crate::estimator::{estimate, ObservedData};
use crate::model::{draw_population, ModelMoments, SuperPopulationModel};
use crate::oracle::enumerate_moments_as;
use crate::population::{Outcome, PopulationSummary};
use crate::scalar::{mean, sample_variance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyMode {
    Decomposition,
    Coverage,
    Unbiasedness,
}

impl fmt::Display for StudyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudyMode::Decomposition => "decomposition",
            StudyMode::Coverage => "coverage",
            StudyMode::Unbiasedness => "unbiasedness",
        })
    }
}

/// The quantity intervals are scored against in coverage studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "tau")]
    Tau,
    #[serde(rename = "tau_S")]
    TauS,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub model: SuperPopulationModel,
    pub n: usize,
    pub n1: usize,
    pub mode: StudyMode,
    pub replications: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub target: Target,
    /// Tolerance bands are `band` Monte Carlo standard errors wide.
    pub band: f64,
    pub cap: u64,
    /// Worker count; `None` uses the ambient rayon pool. Not part of the
    /// report, which does not depend on it.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl StudyConfig {
    pub fn new(model: SuperPopulationModel, n: usize, n1: usize, master_seed: u64) -> Self {
        StudyConfig {
            model,
            n,
            n1,
            mode: StudyMode::Decomposition,
            replications: 1000,
            alpha: 0.05,
            master_seed,
            target: Target::Tau,
            band: 3.0,
            cap: DEFAULT_CAP,
            threads: None,
        }
    }

    pub fn with_mode(mut self, mode: StudyMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_replications(mut self, replications: usize) -> Self {
        self.replications = replications;
        self
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = target;
        self
    }

    pub fn with_threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.model.validate()?;
        if self.replications < 100 {
            return bad(format!("replications must be ≥ 100, got {}", self.replications));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.band.is_finite() && self.band > 0.0) {
            return bad(format!("band must be a positive number, got {}", self.band));
        }
        if self.threads == Some(0) {
            return bad("threads must be ≥ 1".into());
        }
        let layout = self.layout()?;
        if self.mode == StudyMode::Coverage && (self.n1 < 2 || self.n - self.n1 < 2) {
            return bad(format!(
                "coverage needs at least two units per arm, got n1={}, n0={}",
                self.n1,
                self.n - self.n1
            ));
        }
        if self.mode == StudyMode::Decomposition {
            if let Err(Error::SupportTooLarge { support, cap }) = layout.checked_support(self.cap) {
                return bad(format!(
                    "decomposition enumerates every assignment of each drawn population, and the \
                     support {support} exceeds the cap {cap}; use a smaller n or raise the cap"
                ));
            }
        }
        Ok(())
    }

    fn layout(&self) -> Result<Layout> {
        Layout::resolve(&Design::Complete { n1: self.n1 }, self.n, None, None)
    }
}

/// Everything computed for one replication.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub tau_s: f64,
    pub s1sq_pop: f64,
    pub s0sq_pop: f64,
    pub stausq_pop: f64,
    pub tau_hat: f64,
    pub s1sq: Option<f64>,
    pub s0sq: Option<f64>,
    pub vhat_neyman: Option<f64>,
    pub vhat_sharp: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub covered: Option<bool>,
    pub covered_sharp: Option<bool>,
    pub width: Option<f64>,
    /// Enumerated `Var(τ̂ | S)`, decomposition mode only.
    pub cond_var: Option<f64>,
    /// Whether every enumerated identity held, decomposition mode only.
    pub identities_hold: Option<bool>,
}

impl ReplicationRecord {
    pub const FIELDS: [&'static str; 17] = [
        "replication",
        "tau_S",
        "S1sq",
        "S0sq",
        "Stausq",
        "tau_hat",
        "s1sq",
        "s0sq",
        "vhat_neyman",
        "vhat_sharp",
        "ci_lo",
        "ci_hi",
        "covered",
        "covered_sharp",
        "width",
        "cond_var",
        "identities_hold",
    ];

    fn csv_row(&self) -> Vec<String> {
        let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let b = |x: Option<bool>| x.map(|v| (v as u8).to_string()).unwrap_or_default();
        vec![
            self.replication.to_string(),
            self.tau_s.to_string(),
            self.s1sq_pop.to_string(),
            self.s0sq_pop.to_string(),
            self.stausq_pop.to_string(),
            self.tau_hat.to_string(),
            f(self.s1sq),
            f(self.s0sq),
            f(self.vhat_neyman),
            f(self.vhat_sharp),
            f(self.ci_lo),
            f(self.ci_hi),
            b(self.covered),
            b(self.covered_sharp),
            f(self.width),
            f(self.cond_var),
            b(self.identities_hold),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// `|estimate − target| ≤ band·se`.
    TwoSided,
    /// `estimate ≥ target − band·se`.
    AtLeast,
    /// `estimate ≤ target` with no tolerance.
    NotAbove,
}

/// Smallest standard error used in a band. A statistic that is constant
/// across replications has zero sample spread; its band is then a
/// round-off allowance rather than an empty interval.
pub const SE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyCheck {
    pub name: String,
    pub estimate: f64,
    pub target: f64,
    pub se: f64,
    pub band: f64,
    pub rule: Rule,
    pub pass: bool,
}

impl StudyCheck {
    fn new(name: &str, estimate: f64, target: f64, se: f64, band: f64, rule: Rule) -> Self {
        let se = se.max(SE_FLOOR * target.abs().max(1.0));
        let pass = match rule {
            Rule::TwoSided => (estimate - target).abs() <= band * se,
            Rule::AtLeast => estimate >= target - band * se,
            Rule::NotAbove => estimate <= target,
        };
        StudyCheck { name: name.to_string(), estimate, target, se, band, rule, pass }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub moments: ModelMoments,
    /// Mode-specific terms.
    pub terms: Value,
    pub checks: Vec<StudyCheck>,
    pub pass: bool,
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
}

impl StudyReport {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn check(&self, name: &str) -> Option<&StudyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn write_records_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(ReplicationRecord::FIELDS)?;
        for record in &self.records {
            writer.write_record(record.csv_row())?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn replication_rng(master_seed: u64, r: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(r as u64);
    rng
}

fn replicate(cfg: &StudyConfig, layout: &Layout, r: usize) -> Result<ReplicationRecord> {
    let mut rng = replication_rng(cfg.master_seed, r);
    let pop = draw_population(&cfg.model, cfg.n, &mut rng)?;
    let z = layout.sample(&mut rng);

    let outcomes = pop.float_outcomes();
    let effects = pop.unit_effects_f64();
    let summary = PopulationSummary::of(&outcomes.y1, &outcomes.y0);
    let tau_s = mean(&effects);
    let yobs: Vec<Outcome> = pop
        .units()
        .iter()
        .zip(z.as_slice())
        .map(|(u, &t)| if t { u.y1.clone() } else { u.y0.clone() })
        .collect();
    let report = estimate(&ObservedData::new(layout.clone(), z, yobs)?, cfg.alpha)?;
    let target = match cfg.target {
        Target::Tau => cfg.model.moments().tau,
        Target::TauS => tau_s,
    };
    let ci = report.ci();
    let ci_sharp = report.ci_sharp();

    let (cond_var, identities_hold) = if cfg.mode == StudyMode::Decomposition {
        let e = enumerate_moments_as(layout, &outcomes.y1, &outcomes.y0, cfg.cap, false)?;
        (Some(e.var_tau_hat), Some(e.all_hold()))
    } else {
        (None, None)
    };

    Ok(ReplicationRecord {
        replication: r,
        tau_s,
        s1sq_pop: summary.s1sq,
        s0sq_pop: summary.s0sq,
        stausq_pop: sample_variance(&effects),
        tau_hat: report.tau_hat,
        s1sq: report.s1sq,
        s0sq: report.s0sq,
        vhat_neyman: report.vhat_neyman(),
        vhat_sharp: report.vhat_sharp(),
        ci_lo: ci.map(|c| c.lo),
        ci_hi: ci.map(|c| c.hi),
        covered: ci.map(|c| c.contains(target)),
        covered_sharp: ci_sharp.map(|c| c.contains(target)),
        width: ci.map(|c| c.width()),
        cond_var,
        identities_hold,
    })
}

struct Sample {
    mean: f64,
    /// Standard error of the mean.
    se: f64,
}

fn describe(xs: &[f64]) -> Sample {
    let r = xs.len() as f64;
    Sample {
        mean: mean(xs),
        se: (sample_variance(xs) / r).sqrt(),
    }
}

/// Sample variance (divisor R−1) with the standard error of its mean-of-
/// squared-deviations form.
fn describe_variance(xs: &[f64]) -> Sample {
    let m = mean(xs);
    let r = xs.len() as f64;
    let scaled: Vec<f64> = xs.iter().map(|x| (x - m).powi(2) * r / (r - 1.0)).collect();
    describe(&scaled)
}

fn collect(records: &[ReplicationRecord], field: impl Fn(&ReplicationRecord) -> f64) -> Vec<f64> {
    records.iter().map(field).collect()
}

fn decomposition(cfg: &StudyConfig, m: &ModelMoments, records: &[ReplicationRecord]) -> (Value, Vec<StudyCheck>) {
    let r = records.len() as f64;
    let n = cfg.n as f64;
    let tau_hat = collect(records, |x| x.tau_hat);
    let cond = collect(records, |x| x.cond_var.unwrap_or(f64::NAN));
    let vtau_n = m.vtau / n;
    let center = mean(&tau_hat);
    let residuals: Vec<f64> = tau_hat
        .iter()
        .zip(&cond)
        .map(|(t, v)| (t - center).powi(2) * r / (r - 1.0) - v - vtau_n)
        .collect();
    let var_hat = describe_variance(&tau_hat);
    let cond_mean = describe(&cond);
    let residual = describe(&residuals);
    let superpop = m.v1 / cfg.n1 as f64 + m.v0 / (cfg.n - cfg.n1) as f64;
    let identity_failures = records.iter().filter(|x| x.identities_hold == Some(false)).count();

    let terms = json!({
        "empirical_var_tau_hat": var_hat.mean,
        "empirical_var_tau_hat_se": var_hat.se,
        "mean_cond_var": cond_mean.mean,
        "mean_cond_var_se": cond_mean.se,
        "vtau_over_n": vtau_n,
        "residual": residual.mean,
        "residual_se": residual.se,
        "superpop_variance": superpop,
        "enumeration_identity_failures": identity_failures,
    });
    let checks = vec![
        StudyCheck::new(
            "Var(tau_hat) − E[Var(tau_hat|S)] − Vtau/n",
            residual.mean,
            0.0,
            residual.se,
            cfg.band,
            Rule::TwoSided,
        ),
        StudyCheck::new(
            "Var(tau_hat) vs V1/n1 + V0/n0",
            var_hat.mean,
            superpop,
            var_hat.se,
            cfg.band,
            Rule::TwoSided,
        ),
        StudyCheck::new(
            "replications with an enumerated identity failure",
            identity_failures as f64,
            0.0,
            0.0,
            cfg.band,
            Rule::NotAbove,
        ),
    ];
    (terms, checks)
}

fn unbiasedness(cfg: &StudyConfig, m: &ModelMoments, records: &[ReplicationRecord]) -> (Value, Vec<StudyCheck>) {
    let n = cfg.n as f64;
    let tau_s = describe(&collect(records, |x| x.tau_s));
    let var_tau_s = describe_variance(&collect(records, |x| x.tau_s));
    let s1 = describe(&collect(records, |x| x.s1sq_pop));
    let s0 = describe(&collect(records, |x| x.s0sq_pop));
    let stau = describe(&collect(records, |x| x.stausq_pop));
    let tau_hat = describe(&collect(records, |x| x.tau_hat));
    let var_tau_hat = describe_variance(&collect(records, |x| x.tau_hat));
    let superpop = m.v1 / cfg.n1 as f64 + m.v0 / (cfg.n - cfg.n1) as f64;

    let rows: [(&str, &Sample, f64); 7] = [
        ("mean tau_S vs tau", &tau_s, m.tau),
        ("Var(tau_S) vs Vtau/n", &var_tau_s, m.vtau / n),
        ("mean S1sq vs V1", &s1, m.v1),
        ("mean S0sq vs V0", &s0, m.v0),
        ("mean Stausq vs Vtau", &stau, m.vtau),
        ("mean tau_hat vs tau", &tau_hat, m.tau),
        ("Var(tau_hat) vs V1/n1 + V0/n0", &var_tau_hat, superpop),
    ];
    let terms = json!({
        "mean_tau_S": tau_s.mean,
        "var_tau_S": var_tau_s.mean,
        "mean_S1sq": s1.mean,
        "mean_S0sq": s0.mean,
        "mean_Stausq": stau.mean,
        "mean_tau_hat": tau_hat.mean,
        "var_tau_hat": var_tau_hat.mean,
    });
    let checks = rows
        .iter()
        .map(|(name, s, target)| StudyCheck::new(name, s.mean, *target, s.se, cfg.band, Rule::TwoSided))
        .collect();
    (terms, checks)
}

fn coverage(cfg: &StudyConfig, m: &ModelMoments, records: &[ReplicationRecord]) -> (Value, Vec<StudyCheck>) {
    let r = records.len() as f64;
    let rate = |f: fn(&ReplicationRecord) -> Option<bool>| {
        records.iter().filter(|x| f(x) == Some(true)).count() as f64 / r
    };
    let neyman = rate(|x| x.covered);
    let sharp = rate(|x| x.covered_sharp);
    let width = mean(&collect(records, |x| x.width.unwrap_or(f64::NAN)));
    let nominal = 1.0 - cfg.alpha;
    let se = (cfg.alpha * (1.0 - cfg.alpha) / r).sqrt();
    // Intervals for tau_S are conservative unless effects are constant.
    let conservative = cfg.target == Target::TauS && m.vtau > 0.0;
    let rule = if conservative { Rule::AtLeast } else { Rule::TwoSided };

    let terms = json!({
        "target": cfg.target,
        "coverage_neyman": neyman,
        "coverage_sharp": sharp,
        "nominal": nominal,
        "mean_width": width,
        "se": se,
    });
    let mut checks = vec![StudyCheck::new("coverage (neyman)", neyman, nominal, se, cfg.band, rule)];
    checks.push(StudyCheck::new(
        "coverage (sharp) ≤ coverage (neyman)",
        sharp,
        neyman,
        0.0,
        cfg.band,
        Rule::NotAbove,
    ));
    if cfg.target == Target::TauS {
        checks.push(StudyCheck::new("coverage (sharp)", sharp, nominal, se, cfg.band, Rule::AtLeast));
    }
    (terms, checks)
}

fn run_records(cfg: &StudyConfig) -> Result<Vec<ReplicationRecord>> {
    let layout = cfg.layout()?;
    crate::with_workers(cfg.threads, || {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| replicate(cfg, &layout, r))
            .collect()
    })?
}

/// Runs the configured study mode.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let records = run_records(cfg)?;
    let moments = cfg.model.moments();
    let (terms, checks) = match cfg.mode {
        StudyMode::Decomposition => decomposition(cfg, &moments, &records),
        StudyMode::Coverage => coverage(cfg, &moments, &records),
        StudyMode::Unbiasedness => unbiasedness(cfg, &moments, &records),
    };
    let pass = checks.iter().all(|c| c.pass);
    Ok(StudyReport {
        config: cfg.clone(),
        moments,
        terms,
        checks,
        pass,
        records,
    })
}

pub fn run_decomposition_study(cfg: &StudyConfig) -> Result<StudyReport> {
    run_study(&cfg.clone().with_mode(StudyMode::Decomposition))
}

pub fn run_unbiasedness_study(cfg: &StudyConfig) -> Result<StudyReport> {
    run_study(&cfg.clone().with_mode(StudyMode::Unbiasedness))
}

pub fn run_coverage_study(cfg: &StudyConfig) -> Result<StudyReport> {
    run_study(&cfg.clone().with_mode(StudyMode::Coverage))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(rho: f64) -> SuperPopulationModel {
        SuperPopulationModel::BivariateGaussian { mean1: 0.0, mean0: 0.0, var1: 1.0, var0: 1.0, rho }
    }

    #[test]
    fn replication_streams_are_distinct_and_stable() {
        use rand::RngCore;
        let a = replication_rng(9, 0).next_u64();
        assert_eq!(a, replication_rng(9, 0).next_u64());
        assert_ne!(a, replication_rng(9, 1).next_u64());
        assert_ne!(a, replication_rng(10, 0).next_u64());
    }

    #[test]
    fn validation_messages() {
        let base = StudyConfig::new(gaussian(0.0), 8, 4, 1);
        assert!(base.clone().with_replications(99).validate().is_err());
        let big = StudyConfig::new(gaussian(0.0), 40, 20, 1);
        let msg = big.validate().unwrap_err().to_string();
        assert!(msg.contains("C(40,20)") && msg.contains("smaller n"), "{msg}");
        let tiny = StudyConfig::new(gaussian(0.0), 3, 1, 1).with_mode(StudyMode::Coverage);
        assert!(tiny.validate().is_err());
    }

    #[test]
    fn small_decomposition_runs_and_is_thread_independent() {
        let cfg = StudyConfig::new(gaussian(0.0), 6, 3, 5).with_replications(400);
        let one = run_study(&cfg.clone().with_threads(Some(1))).unwrap();
        let four = run_study(&cfg.with_threads(Some(4))).unwrap();
        assert_eq!(one.to_json_string(), four.to_json_string());
        assert_eq!(one.terms["enumeration_identity_failures"], 0);
        assert!(one.check("Var(tau_hat) − E[Var(tau_hat|S)] − Vtau/n").unwrap().pass);
    }

    #[test]
    fn constant_effect_has_exactly_degenerate_effect_terms() {
        let model = SuperPopulationModel::ConstantEffect { mean0: 1.0, var0: 2.0, tau: 0.3 };
        let cfg = StudyConfig::new(model, 10, 5, 3)
            .with_mode(StudyMode::Unbiasedness)
            .with_replications(200);
        let report = run_study(&cfg).unwrap();
        assert_eq!(report.terms["mean_Stausq"], 0.0);
        assert_eq!(report.terms["var_tau_S"], 0.0);
        assert!(report.records.iter().all(|r| r.tau_s == 0.3));
    }

    #[test]
    fn csv_records_have_header_and_rows() {
        let cfg = StudyConfig::new(gaussian(0.5), 6, 3, 2)
            .with_mode(StudyMode::Coverage)
            .with_replications(100);
        let report = run_study(&cfg).unwrap();
        let mut buf = Vec::new();
        report.write_records_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 101);
        assert!(text.starts_with("replication,tau_S,"));
    }
}
