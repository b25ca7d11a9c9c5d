//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use designlab::design::{Design, Layout, DEFAULT_CAP};
use designlab::estimator::{neyman_true_variance, sharp_stau2_lower_bound, variance_by_design, ObservedData};
use designlab::model::SuperPopulationModel;
use designlab::oracle::{enumerate_moments, frt_exact, frt_monte_carlo, EnumerationReport, FrtStatistic};
use designlab::population::{summarize, FinitePopulation, Outcome, PopulationSummary, Unit};
use designlab::study::{run_study, StudyConfig, StudyMode, StudyReport, Target};
use itertools::Itertools;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const SEED: u64 = 20_261_016;

fn rng_for(criterion: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    rng.set_stream(criterion);
    rng
}

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// A rational with a denominator drawn from a mix of decimal and
/// non-decimal scales.
fn random_rational(rng: &mut ChaCha20Rng) -> BigRational {
    let den = [1, 3, 4, 10, 100, 1000][rng.random_range(0..6)];
    q(rng.random_range(-500..=500), den)
}

fn population(y1: Vec<BigRational>, y0: Vec<BigRational>) -> FinitePopulation {
    FinitePopulation::from_pairs(y1.into_iter().map(Outcome::Exact), y0.into_iter().map(Outcome::Exact)).unwrap()
}

fn exact_report(pop: &FinitePopulation, design: &Design) -> EnumerationReport<BigRational> {
    enumerate_moments(pop, design, DEFAULT_CAP).unwrap().exact().expect("rational population").clone()
}

fn exact_summary(pop: &FinitePopulation) -> PopulationSummary<BigRational> {
    summarize(pop).exact.expect("rational population")
}

struct Outcome_ {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome_ {
    Outcome_ { pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

struct Corpus {
    pops: Vec<(FinitePopulation, usize)>,
    reports: Vec<EnumerationReport<BigRational>>,
    elapsed: Duration,
}

fn corpus() -> Corpus {
    let mut rng = rng_for(1);
    let pops: Vec<(FinitePopulation, usize)> = (0..200)
        .map(|k| {
            let n = rng.random_range(4..=12);
            let n1 = rng.random_range(2..=n - 2);
            let y1: Vec<BigRational> = (0..n).map(|_| random_rational(&mut rng)).collect();
            let y0: Vec<BigRational> = match k % 4 {
                // Adversarial corners: constant effect, anti-correlated,
                // heavy-tailed discrete.
                0 => y1.iter().map(|y| y + q(7, 10)).collect(),
                1 => y1.iter().map(|y| -y.clone()).collect(),
                2 => (0..n).map(|_| q([0, 0, 0, 1, 1000][rng.random_range(0..5)], 1)).collect(),
                _ => (0..n).map(|_| random_rational(&mut rng)).collect(),
            };
            (population(y1, y0), n1)
        })
        .collect();
    let start = Instant::now();
    let reports = pops
        .iter()
        .map(|(pop, n1)| exact_report(pop, &Design::Complete { n1: *n1 }))
        .collect();
    Corpus { pops, reports, elapsed: start.elapsed() }
}

fn criterion_1(c: &Corpus) -> Outcome_ {
    let zero = c.reports.iter().filter(|r| r.f_s.is_zero() && r.neyman_formula_value == r.var_tau_hat).count();
    let fast = c.elapsed < Duration::from_secs(30);
    outcome(
        zero == c.reports.len() && fast,
        format!("{zero}/{} populations with f_S = 0 exactly; enumeration {} (< 30 s)", c.reports.len(), secs(c.elapsed)),
    )
}

fn criterion_2() -> Outcome_ {
    let pop = population((1..=4).map(|k| q(k, 1)).collect(), vec![q(0, 1); 4]);
    let design = Design::Complete { n1: 2 };
    let r = exact_report(&pop, &design);
    let formula = neyman_true_variance(&exact_summary(&pop), &design).unwrap();
    let pass = r.var_tau_hat == q(5, 12) && formula == q(5, 12) && r.support_size == 6;
    outcome(pass, format!("enumerated Var = {}, Neyman formula = {}", r.var_tau_hat, formula))
}

fn criterion_3(c: &Corpus) -> Outcome_ {
    let mut good = 0;
    for ((pop, _), r) in c.pops.iter().zip(&c.reports) {
        let s = exact_summary(pop);
        let n = q(pop.len() as i64, 1);
        let ok = r.mean_tau_hat == s.tau_s
            && r.mean_s1sq.as_ref() == Some(&s.s1sq)
            && r.mean_s0sq.as_ref() == Some(&s.s0sq)
            && r.mean_vhat_neyman.as_ref().map(|v| v - &r.var_tau_hat) == Some(&s.stausq / &n);
        good += ok as usize;
    }
    outcome(
        good == c.pops.len(),
        format!("{good}/{} populations: E[tau_hat], E[s1sq], E[s0sq] and E[vhat] − Var = Stausq/n exact", c.pops.len()),
    )
}

fn gaussian(rho: f64) -> SuperPopulationModel {
    SuperPopulationModel::BivariateGaussian { mean1: 0.0, mean0: 0.0, var1: 1.0, var0: 1.0, rho }
}

fn two_point() -> SuperPopulationModel {
    SuperPopulationModel::TwoPoint {
        values1: [0.0, 1.0],
        values0: [0.0, 2.0],
        probs: [[0.3, 0.2], [0.1, 0.4]],
    }
}

struct StudyRun {
    label: String,
    report: StudyReport,
    elapsed: Duration,
    identical_across_workers: bool,
}

/// Runs at 1 worker (timed; used for the criterion) and at 8 workers (for
/// the determinism comparison).
fn study(label: &str, cfg: StudyConfig) -> StudyRun {
    let start = Instant::now();
    let report = run_study(&cfg.clone().with_threads(Some(1))).unwrap();
    let elapsed = start.elapsed();
    let wide = run_study(&cfg.with_threads(Some(8))).unwrap();
    let csv = |r: &StudyReport| {
        let mut buf = Vec::new();
        r.write_records_csv(&mut buf).unwrap();
        buf
    };
    let identical_across_workers = report.to_json_string() == wide.to_json_string() && csv(&report) == csv(&wide);
    StudyRun { label: label.to_string(), report, elapsed, identical_across_workers }
}

fn decomposition_settings() -> Vec<(String, SuperPopulationModel)> {
    let mut settings: Vec<(String, SuperPopulationModel)> = [-0.5, 0.0, 1.0]
        .into_iter()
        .map(|rho| (format!("gaussian rho={rho}"), gaussian(rho)))
        .collect();
    settings.push(("two-point".into(), two_point()));
    settings
}

fn criterion_4(runs: &[StudyRun]) -> Outcome_ {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs {
        let c = run.report.check("Var(tau_hat) − E[Var(tau_hat|S)] − Vtau/n").unwrap();
        let ok = (c.estimate - c.target).abs() <= 3.0 * c.se && run.elapsed < Duration::from_secs(120);
        pass &= ok;
        parts.push(format!("{}: residual {:+.5} (3 SE {:.5}, {})", run.label, c.estimate, 3.0 * c.se, secs(run.elapsed)));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_5(runs: &[StudyRun]) -> Outcome_ {
    let names = [
        "Var(tau_S) vs Vtau/n",
        "mean S1sq vs V1",
        "mean S0sq vs V0",
        "mean Stausq vs Vtau",
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs {
        let mut worst: f64 = 0.0;
        for name in names {
            let c = run.report.check(name).unwrap();
            let z = (c.estimate - c.target).abs() / c.se;
            pass &= z <= 3.0;
            worst = worst.max(z);
        }
        parts.push(format!("{}: max |z| {:.2}", run.label, worst));
    }
    outcome(pass, parts.join("; "))
}

fn coverage_of(run: &StudyRun) -> f64 {
    run.report.terms["coverage_neyman"].as_f64().unwrap()
}

fn criterion_6(runs: &[StudyRun]) -> Outcome_ {
    let [tau, tau_s, constant] = runs else { panic!("three coverage runs") };
    let in_band = |x: f64| (0.94..=0.96).contains(&x);
    let timely = runs.iter().all(|r| r.elapsed < Duration::from_secs(120));
    let pass = in_band(coverage_of(tau)) && coverage_of(tau_s) >= 0.945 && in_band(coverage_of(constant)) && timely;
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap();
    outcome(
        pass,
        format!(
            "tau {:.4} in [0.94, 0.96]; tau_S (rho=0) {:.4} ≥ 0.945; tau_S (constant effect) {:.4} in [0.94, 0.96]; slowest {}",
            coverage_of(tau),
            coverage_of(tau_s),
            coverage_of(constant),
            secs(slowest)
        ),
    )
}

/// `n(n−1)·S²` of integer data, computed directly.
fn scaled_variance(d: &[i64]) -> i128 {
    let n = d.len() as i128;
    let sum: i128 = d.iter().map(|&x| x as i128).sum();
    let sq: i128 = d.iter().map(|&x| (x as i128) * (x as i128)).sum();
    n * sq - sum * sum
}

fn criterion_7() -> Outcome_ {
    let mut rng = rng_for(7);
    let mut exact_min = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=7);
        let a: Vec<i64> = (0..n).map(|_| rng.random_range(-300..=300)).collect();
        let b: Vec<i64> = (0..n).map(|_| rng.random_range(-300..=300)).collect();
        let brute = (0..n)
            .permutations(n)
            .map(|perm| {
                let d: Vec<i64> = (0..n).map(|i| a[i] - b[perm[i]]).collect();
                scaled_variance(&d)
            })
            .min()
            .unwrap();
        let scale = |xs: &[i64]| xs.iter().map(|&x| q(x, 100)).collect::<Vec<_>>();
        let bound = sharp_stau2_lower_bound(&scale(&a), &scale(&b)).unwrap();
        let expected = BigRational::new(BigInt::from(brute), BigInt::from(n * (n - 1) * 10_000));
        exact_min += (bound == expected) as usize;
    }
    let mut below = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=12);
        let y1: Vec<BigRational> = (0..n).map(|_| random_rational(&mut rng)).collect();
        let mut y0: Vec<BigRational> = (0..n).map(|_| random_rational(&mut rng)).collect();
        y0.shuffle(&mut rng);
        let bound = sharp_stau2_lower_bound(&y1, &y0).unwrap();
        let stausq = exact_summary(&population(y1, y0)).stausq;
        below += (bound <= stausq) as usize;
    }
    outcome(
        exact_min == 100 && below == 100,
        format!("{exact_min}/100 equal the n! brute-force minimum; {below}/100 joint populations have bound ≤ Stausq"),
    )
}

fn labeled(y1: &[BigRational], y0: &[BigRational], label: impl Fn(usize) -> Unit) -> FinitePopulation {
    let units = (0..y1.len())
        .map(|i| {
            let mut u = label(i);
            u.y1 = Outcome::Exact(y1[i].clone());
            u.y0 = Outcome::Exact(y0[i].clone());
            u
        })
        .collect();
    FinitePopulation::new(units).unwrap()
}

fn criterion_8() -> Outcome_ {
    let mut rng = rng_for(8);
    let mut stratified = 0;
    for _ in 0..50 {
        let strata = rng.random_range(2..=3);
        let sizes: Vec<usize> = (0..strata).map(|_| rng.random_range(2..=6)).collect();
        let labels: Vec<String> = sizes.iter().enumerate().flat_map(|(h, &s)| vec![format!("h{h}"); s]).collect();
        let treated = sizes
            .iter()
            .enumerate()
            .map(|(h, &s)| (format!("h{h}"), rng.random_range(1..s)))
            .collect();
        let n = labels.len();
        let y1: Vec<BigRational> = (0..n).map(|_| random_rational(&mut rng)).collect();
        let y0: Vec<BigRational> = (0..n).map(|_| random_rational(&mut rng)).collect();
        let pop = labeled(&y1, &y0, |i| Unit::new(i.to_string(), 0, 0).with_stratum(labels[i].clone()));
        let design = Design::Stratified { treated };
        let closed: BigRational = variance_by_design(&pop, &design).unwrap();
        stratified += (closed == exact_report(&pop, &design).var_tau_hat) as usize;
    }

    let mut pairs = 0;
    let mut clusters = 0;
    let mut degenerate = 0;
    for _ in 0..50 {
        let k = rng.random_range(2..=6);
        let n = 2 * k;
        let y1: Vec<BigRational> = (0..n).map(|_| random_rational(&mut rng)).collect();
        let y0: Vec<BigRational> = (0..n).map(|_| random_rational(&mut rng)).collect();

        let paired = labeled(&y1, &y0, |i| Unit::new(i.to_string(), 0, 0).with_stratum(format!("p{}", i / 2)));
        let closed: BigRational = variance_by_design(&paired, &Design::MatchedPairs).unwrap();
        pairs += (closed == exact_report(&paired, &Design::MatchedPairs).var_tau_hat) as usize;

        let m = rng.random_range(2..=n.min(6));
        let sizes: Vec<usize> = (0..n).map(|i| i % m).collect();
        let clustered = labeled(&y1, &y0, |i| Unit::new(i.to_string(), 0, 0).with_cluster(format!("c{}", sizes[i])));
        let design = Design::Cluster { m1: rng.random_range(1..m) };
        let closed: BigRational = variance_by_design(&clustered, &design).unwrap();
        clusters += (closed == exact_report(&clustered, &design).var_tau_hat) as usize;

        let n1 = rng.random_range(1..n);
        let plain = population(y1.clone(), y0.clone());
        let complete = neyman_true_variance(&exact_summary(&plain), &Design::Complete { n1 }).unwrap();
        let single = labeled(&y1, &y0, |i| Unit::new(i.to_string(), 0, 0).with_stratum("all"));
        let one_stratum: BigRational =
            variance_by_design(&single, &Design::Stratified { treated: [("all".to_string(), n1)].into() }).unwrap();
        let singletons = labeled(&y1, &y0, |i| Unit::new(i.to_string(), 0, 0).with_cluster(format!("u{i}")));
        let unit_clusters: BigRational = variance_by_design(&singletons, &Design::Cluster { m1: n1 }).unwrap();
        degenerate += (one_stratum == complete && unit_clusters == complete) as usize;
    }
    outcome(
        stratified == 50 && pairs == 50 && clusters == 50 && degenerate == 50,
        format!(
            "stratified {stratified}/50, matched pairs {pairs}/50, cluster {clusters}/50 equal enumeration; \
             degeneracies {degenerate}/50"
        ),
    )
}

fn criterion_9() -> Outcome_ {
    let mut rng = rng_for(9);
    let alphas = [q(1, 100), q(5, 100), q(10, 100)];
    let mut valid = 0;
    let mut mc_close = 0;
    let mut worst_z: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(4..=10);
        let n1 = rng.random_range(1..n);
        let mut grid: Vec<i64> = (-400..=400).collect();
        grid.shuffle(&mut rng);
        let y: Vec<BigRational> = grid[..n].iter().map(|&v| q(v, 10)).collect();
        let pop = population(y.clone(), y.clone());
        let design = Design::Complete { n1 };
        let layout = Layout::for_population(&design, &pop).unwrap();
        let support = layout.support_size().to_u64().unwrap();
        let yobs: Vec<Outcome> = y.iter().cloned().map(Outcome::Exact).collect();
        let observed = |z| ObservedData::new(layout.clone(), z, yobs.clone()).unwrap();

        let p_values: Vec<BigRational> = (0..support)
            .map(|rank| frt_exact(&observed(layout.assignment_at(rank)), FrtStatistic::AbsDiffMeans, DEFAULT_CAP).unwrap().p_value)
            .collect();
        let total = q(support as i64, 1);
        let ok = alphas.iter().all(|alpha| {
            let hits = p_values.iter().filter(|p| *p <= alpha).count() as i64;
            q(hits, 1) / &total <= *alpha
        });
        valid += ok as usize;

        let z = layout.sample(&mut rng);
        let exact = frt_exact(&observed(z.clone()), FrtStatistic::AbsDiffMeans, DEFAULT_CAP).unwrap();
        let mc = frt_monte_carlo(&observed(z), FrtStatistic::AbsDiffMeans, 10_000, &mut rng).unwrap();
        let diff = (mc.p_value - exact.p_f64()).abs();
        let close = diff <= 3.0 * mc.se || (mc.se == 0.0 && diff == 0.0);
        if mc.se > 0.0 {
            worst_z = worst_z.max(diff / mc.se);
        }
        mc_close += close as usize;
    }
    outcome(
        valid == 50 && mc_close == 50,
        format!("P(p ≤ α) ≤ α for α ∈ {{0.01, 0.05, 0.1}} on {valid}/50; Monte Carlo within 3 SE on {mc_close}/50 (max |z| {worst_z:.2})"),
    )
}

fn criterion_10(runs: &[&StudyRun]) -> Outcome_ {
    let same = runs.iter().filter(|r| r.identical_across_workers).count();
    outcome(same == runs.len(), format!("{same}/{} study reports byte-identical at 1 and 8 workers", runs.len()))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome_)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome_| {
        println!("{} C{id:<2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    let c = corpus();
    report(1, "Neyman identity, exact", criterion_1(&c));
    report(2, "worked micro-example", criterion_2());
    report(3, "survey-sampling unbiasedness, exact", criterion_3(&c));

    let base = |model, n, n1| StudyConfig {
        replications: 10_000,
        ..StudyConfig::new(model, n, n1, SEED)
    };
    let decomposition: Vec<StudyRun> = decomposition_settings()
        .into_iter()
        .map(|(label, model)| study(&label, base(model, 8, 4).with_mode(StudyMode::Decomposition)))
        .collect();
    report(4, "variance decomposition", criterion_4(&decomposition));

    let unbiasedness: Vec<StudyRun> = decomposition_settings()
        .into_iter()
        .map(|(label, model)| study(&label, base(model, 8, 4).with_mode(StudyMode::Unbiasedness)))
        .collect();
    report(5, "IID implications", criterion_5(&unbiasedness));

    let constant = SuperPopulationModel::ConstantEffect { mean0: 0.0, var0: 1.0, tau: 1.0 };
    let coverage = vec![
        study("tau", base(gaussian(0.0), 100, 50).with_mode(StudyMode::Coverage)),
        study(
            "tau_S",
            base(gaussian(0.0), 100, 50).with_mode(StudyMode::Coverage).with_target(Target::TauS),
        ),
        study(
            "constant tau_S",
            base(constant, 100, 50).with_mode(StudyMode::Coverage).with_target(Target::TauS),
        ),
    ];
    report(6, "coverage and conservativeness", criterion_6(&coverage));
    report(7, "sharp bound", criterion_7());
    report(8, "stratified/pair/cluster consistency", criterion_8());
    report(9, "randomization test validity", criterion_9());
    let all_runs: Vec<&StudyRun> = decomposition.iter().chain(&unbiasedness).chain(&coverage).collect();
    report(10, "determinism", criterion_10(&all_runs));

    let failed: Vec<u32> = results.iter().filter(|(_, _, o)| !o.pass).map(|(id, _, _)| *id).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
