use std::collections::{BTreeMap, HashSet};

use designlab::design::{assignment_pmf, enumerate_assignments, Design, Layout, DEFAULT_CAP};
use designlab::estimator::{observe, sharp_stau2_lower_bound, variance_by_design};
use designlab::io::{read_population, write_population};
use designlab::oracle::{enumerate_moments, frt_exact, verify_residual_identity, FrtStatistic, ResidualVectors};
use designlab::population::{summarize, FinitePopulation, Outcome, Unit};
use designlab::Assignment;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn rational() -> impl Strategy<Value = BigRational> {
    (-1000i64..=1000, prop::sample::select(vec![1i64, 2, 3, 7, 10, 100])).prop_map(|(n, d)| q(n, d))
}

/// `(y1, y0, n1)` with `2 ≤ n1 ≤ n − 2`.
fn complete_case() -> impl Strategy<Value = (Vec<BigRational>, Vec<BigRational>, usize)> {
    (4usize..=9).prop_flat_map(|n| {
        (
            prop::collection::vec(rational(), n),
            prop::collection::vec(rational(), n),
            2..=n - 2,
        )
    })
}

fn pop(y1: &[BigRational], y0: &[BigRational]) -> FinitePopulation {
    FinitePopulation::from_pairs(
        y1.iter().cloned().map(Outcome::Exact),
        y0.iter().cloned().map(Outcome::Exact),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumeration_identities_hold_exactly((y1, y0, n1) in complete_case()) {
        let p = pop(&y1, &y0);
        let r = enumerate_moments(&p, &Design::Complete { n1 }, DEFAULT_CAP).unwrap();
        let r = r.exact().unwrap();
        prop_assert!(r.f_s.is_zero());
        prop_assert_eq!(&r.var_tau_hat, &r.var_tau_hat_two_pass);
        prop_assert!(r.all_hold(), "{:?}", r.failures());
    }

    #[test]
    fn enumeration_is_permutation_invariant((y1, y0, n1) in complete_case(), seed in any::<u64>()) {
        let p = pop(&y1, &y0);
        let mut order: Vec<usize> = (0..p.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled = p.permuted(&order).unwrap();
        prop_assert_eq!(summarize(&p), summarize(&shuffled));
        let design = Design::Complete { n1 };
        let a = enumerate_moments(&p, &design, DEFAULT_CAP).unwrap();
        let b = enumerate_moments(&shuffled, &design, DEFAULT_CAP).unwrap();
        let (a, b) = (a.exact().unwrap(), b.exact().unwrap());
        prop_assert_eq!(&a.var_tau_hat, &b.var_tau_hat);
        prop_assert_eq!(&a.mean_vhat_neyman, &b.mean_vhat_neyman);
    }

    #[test]
    fn residuals_sum_to_zero_and_identity_holds((y1, y0, n1) in complete_case()) {
        let r = ResidualVectors::of(&y1, &y0);
        prop_assert_eq!(r.sums(), (BigRational::zero(), BigRational::zero()));
        let design = Design::Complete { n1 };
        prop_assert!(verify_residual_identity(&pop(&y1, &y0), &design, DEFAULT_CAP).unwrap());
    }

    #[test]
    fn sharp_bound_below_every_pairing(y1 in prop::collection::vec(rational(), 2..8), shift in 0usize..8) {
        let mut y0: Vec<BigRational> = y1.iter().map(|y| y * q(3, 2) - q(1, 1)).collect();
        let k = shift % y0.len();
        y0.rotate_left(k);
        let bound = sharp_stau2_lower_bound(&y1, &y0).unwrap();
        let s = summarize(&pop(&y1, &y0)).exact.unwrap();
        prop_assert!(bound <= s.stausq);
        prop_assert!(bound >= BigRational::zero());
        // Comonotone pairing attains the bound.
        let mut a = y1.clone();
        let mut b = y0.clone();
        a.sort();
        b.sort();
        prop_assert_eq!(summarize(&pop(&a, &b)).exact.unwrap().stausq, bound);
    }

    #[test]
    fn csv_round_trip_is_exact(y1 in prop::collection::vec(rational(), 2..10), y0 in prop::collection::vec(rational(), 2..10)) {
        let n = y1.len().min(y0.len());
        let p = pop(&y1[..n], &y0[..n]);
        let mut buf = Vec::new();
        write_population(&mut buf, &p).unwrap();
        prop_assert_eq!(read_population(buf.as_slice()).unwrap(), p);
    }
}

fn stratified_pop(sizes: &[usize]) -> FinitePopulation {
    let mut units = Vec::new();
    for (h, &s) in sizes.iter().enumerate() {
        for k in 0..s {
            let id = units.len();
            units.push(Unit::new(id.to_string(), (id * id) as i64 % 7, k as i64).with_stratum(format!("s{h}")));
        }
    }
    FinitePopulation::new(units).unwrap()
}

#[test]
fn stratified_support_is_product_of_strata() {
    let p = stratified_pop(&[3, 4]);
    let treated: BTreeMap<String, usize> = [("s0".into(), 1), ("s1".into(), 2)].into();
    let design = Design::Stratified { treated };
    let all: Vec<Assignment> = enumerate_assignments(&design, &p, DEFAULT_CAP).unwrap().collect();
    assert_eq!(all.len(), 18);

    let complete = |n, n1| -> Vec<Vec<bool>> {
        let p = FinitePopulation::from_pairs(vec![0i64; n], vec![0i64; n]).unwrap();
        enumerate_assignments(&Design::Complete { n1 }, &p, DEFAULT_CAP)
            .unwrap()
            .map(|z| z.as_slice().to_vec())
            .collect()
    };
    let mut product = Vec::new();
    for a in complete(3, 1) {
        for b in complete(4, 2) {
            product.push([a.clone(), b].concat());
        }
    }
    let got: Vec<Vec<bool>> = all.iter().map(|z| z.as_slice().to_vec()).collect();
    assert_eq!(got, product);

    let distinct: HashSet<Vec<bool>> = got.into_iter().collect();
    assert_eq!(distinct.len(), 18);
    let total: BigRational = all.iter().map(|z| assignment_pmf(&design, &p, z).unwrap()).sum();
    assert!(total.is_one());
}

#[test]
fn two_identical_strata_give_quarter_weights() {
    let mut units = Vec::new();
    for h in 0..2 {
        for (k, y) in [1i64, 2, 3, 4].into_iter().enumerate() {
            units.push(Unit::new(format!("{h}-{k}"), y, 0).with_stratum(format!("s{h}")));
        }
    }
    let p = FinitePopulation::new(units).unwrap();
    let design = Design::Stratified { treated: [("s0".into(), 2), ("s1".into(), 2)].into() };
    let v: BigRational = variance_by_design(&p, &design).unwrap();
    assert_eq!(v, q(5, 24));
    let e = enumerate_moments(&p, &design, DEFAULT_CAP).unwrap();
    assert_eq!(e.exact().unwrap().var_tau_hat, q(5, 24));
    assert!(e.all_hold());
}

#[test]
fn pmf_sums_to_one_for_every_design() {
    let mut units = Vec::new();
    for i in 0..6 {
        units.push(
            Unit::new(i.to_string(), i as i64, 0)
                .with_stratum(format!("p{}", i / 2))
                .with_cluster(format!("c{}", i % 3)),
        );
    }
    let p = FinitePopulation::new(units).unwrap();
    for design in [Design::Complete { n1: 3 }, Design::MatchedPairs, Design::Cluster { m1: 1 }] {
        let total: BigRational = enumerate_assignments(&design, &p, DEFAULT_CAP)
            .unwrap()
            .map(|z| assignment_pmf(&design, &p, &z).unwrap())
            .sum();
        assert!(total.is_one(), "{design}");
    }
}

#[test]
fn frt_is_invariant_to_unit_order() {
    let y: Vec<i64> = vec![5, -2, 9, 4, 0, 7, 1];
    let z = [1u8, 0, 1, 0, 0, 1, 0];
    let design = Design::Complete { n1: 3 };
    let p = FinitePopulation::from_pairs(y.clone(), y.clone()).unwrap();
    let data = observe(&p, &design, &Assignment::from_indicators(&z).unwrap()).unwrap();
    let base = frt_exact(&data, FrtStatistic::AbsDiffMeans, DEFAULT_CAP).unwrap();

    let order = [6usize, 2, 0, 5, 1, 4, 3];
    let p2 = p.permuted(&order).unwrap();
    let z2: Vec<u8> = order.iter().map(|&i| z[i]).collect();
    let data2 = observe(&p2, &design, &Assignment::from_indicators(&z2).unwrap()).unwrap();
    let permuted = frt_exact(&data2, FrtStatistic::AbsDiffMeans, DEFAULT_CAP).unwrap();
    assert_eq!(base.p_value, permuted.p_value);
}

#[test]
fn layouts_agree_with_population_labels() {
    let p = stratified_pop(&[2, 2, 2]);
    let layout = Layout::for_population(&Design::MatchedPairs, &p).unwrap();
    assert_eq!(layout.support_formula(), "2^3");
    assert_eq!(layout.checked_support(DEFAULT_CAP).unwrap(), 8);
}
