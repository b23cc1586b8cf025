mod common;

use common::{nds_vs_brute, random_pool, rng, Outcome};
use proptest::prelude::*;
use rand::Rng;
use shapesr::evolution::{crowding_distance, dominates, non_dominated_sort, select_indices, HallOfFame, HofEntry};
use shapesr::exprtree::{Expression, Node};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fast_sort_matches_brute_force(seed in any::<u64>()) {
        if let Outcome::Fail(msg) = nds_vs_brute(seed) {
            return Err(TestCaseError::fail(msg));
        }
    }

    #[test]
    fn fronts_partition_the_pool(seed in any::<u64>()) {
        let objs = random_pool(seed);
        let fronts = non_dominated_sort(&objs);
        let mut all: Vec<usize> = fronts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..objs.len()).collect::<Vec<_>>());
        for w in fronts.windows(2) {
            for &j in &w[1] {
                prop_assert!(w[0].iter().any(|&i| dominates(&objs[i], &objs[j])));
            }
        }
    }

    #[test]
    fn crowding_is_nonnegative_with_infinite_extremes(seed in any::<u64>()) {
        let objs = random_pool(seed);
        for front in non_dominated_sort(&objs) {
            let d = crowding_distance(&objs, &front);
            prop_assert_eq!(d.len(), front.len());
            prop_assert!(d.iter().all(|v| *v >= 0.0));
            prop_assert!(d.iter().any(|v| v.is_infinite()));
        }
    }

    #[test]
    fn selection_without_fitness_slots_respects_rank(seed in any::<u64>(), size in 1usize..40) {
        let objs = random_pool(seed);
        let sel = select_indices(&objs, size, 0.0);
        let want = size.min(objs.len());
        prop_assert_eq!(sel.chosen.len(), want);
        let worst = sel.chosen.iter().map(|&i| sel.rank[i]).max().unwrap();
        for i in 0..objs.len() {
            if !sel.chosen.contains(&i) {
                prop_assert!(sel.rank[i] >= worst);
            }
        }
    }

    #[test]
    fn selection_returns_distinct_indices(seed in any::<u64>(), size in 1usize..40, frac in 0.0f64..1.0) {
        let objs = random_pool(seed);
        let sel = select_indices(&objs, size, frac);
        let mut c = sel.chosen.clone();
        c.sort_unstable();
        c.dedup();
        prop_assert_eq!(c.len(), size.min(objs.len()));
        prop_assert!(c.iter().all(|&i| i < objs.len()));
    }
}

fn entry(i: usize, scores: [f64; 4]) -> HofEntry {
    HofEntry {
        expr: Expression::new(Node::Param(0)),
        params: vec![i as f64],
        canonical: format!("c{}", i % 700),
        scores,
        text: String::new(),
    }
}

fn weakly_dominates(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

#[test]
fn hall_of_fame_stays_mutually_non_dominated() {
    let mut r = rng(11);
    let mut hof = HallOfFame::default();
    for i in 0..1000 {
        let scores: [f64; 4] = std::array::from_fn(|_| match r.random_range(0..30) {
            0 => f64::INFINITY,
            _ => r.random_range(0..12) as f64,
        });
        let e = entry(i, scores);
        let should_block = hof
            .members
            .iter()
            .any(|m| m.canonical == e.canonical || weakly_dominates(&m.scores, &e.scores));
        let before = hof.members.clone();
        let inserted = hof.insert(e.clone());
        assert_eq!(inserted, !should_block, "insert {i}");
        if inserted {
            for m in &before {
                let kept = hof.members.iter().any(|k| k == m);
                assert_eq!(kept, !dominates(&e.scores, &m.scores));
            }
        } else {
            assert_eq!(hof.members, before);
        }
        for (a, x) in hof.members.iter().enumerate() {
            for (b, y) in hof.members.iter().enumerate() {
                if a != b {
                    assert!(!weakly_dominates(&x.scores, &y.scores), "members {a} and {b}");
                    assert_ne!(x.canonical, y.canonical);
                }
            }
        }
    }
    assert!(hof.len() > 1);
}
