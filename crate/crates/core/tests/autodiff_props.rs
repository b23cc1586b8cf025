mod common;

use common::{ad_vs_fd, all_ops_limits, rng, Outcome};
use proptest::prelude::*;
use rand::Rng;
use shapesr::autodiff::{grad_p, hess_p, partial_x_grad_p};
use shapesr::evolution::random_tree;

/// First decided outcome at or after `seed`.
fn decided(seed: u64, check: impl Fn(u64) -> Outcome) -> Outcome {
    (seed..seed + 200)
        .map(check)
        .find(|o| *o != Outcome::Skip)
        .unwrap_or(Outcome::Skip)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>()) {
        let seed = seed >> 8;
        if let Outcome::Fail(msg) = decided(seed, ad_vs_fd) {
            return Err(TestCaseError::fail(msg));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hessian_is_symmetric_and_matches_gradient_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (expr, p) = random_tree(&all_ops_limits(15), 4, &mut r);
        let row = [r.random_range(0.5..2.0), r.random_range(0.5..2.0)];
        let f0 = expr.evaluate(&row, &p);
        prop_assume!(f0.is_finite() && f0.abs() < 1e4);
        let h = hess_p(&expr, &row, &p);
        prop_assume!(h.iter().all(|v| v.is_finite() && v.abs() < 1e6));
        let k = p.len();
        for i in 0..k {
            for j in 0..k {
                prop_assert_eq!(h[(i, j)].to_bits(), h[(j, i)].to_bits());
            }
        }
        for j in 0..k {
            let step = 1e-5 * p[j].abs().max(1.0);
            let at = |d: f64| {
                let mut q = p.clone();
                q[j] += d;
                grad_p(&expr, &row, &q)
            };
            let (up, down) = (at(step), at(-step));
            for i in 0..k {
                let fd = (up[i] - down[i]) / (2.0 * step);
                prop_assume!(fd.is_finite());
                let tol = 1e-4 * h[(i, j)].abs().max(fd.abs()).max(1.0);
                prop_assert!((h[(i, j)] - fd).abs() <= tol, "H[{i},{j}] = {} vs {fd}", h[(i, j)]);
            }
        }
    }

    #[test]
    fn mixed_partials_are_symmetric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (expr, p) = random_tree(&all_ops_limits(15), 4, &mut r);
        let row = [r.random_range(0.5..2.0), r.random_range(0.5..2.0)];
        prop_assume!(expr.evaluate(&row, &p).is_finite());
        let mixed = partial_x_grad_p(&expr, &row, &p, 0);
        prop_assume!(mixed.iter().all(|v| v.is_finite() && v.abs() < 1e6));
        for (i, &m) in mixed.iter().enumerate() {
            let step = 1e-5 * row[0].abs().max(1.0);
            let at = |d: f64| grad_p(&expr, &[row[0] + d, row[1]], &p)[i];
            let fd = (at(step) - at(-step)) / (2.0 * step);
            prop_assume!(fd.is_finite());
            prop_assert!((m - fd).abs() <= 1e-4 * m.abs().max(fd.abs()).max(1.0), "d/dx dp{i}: {m} vs {fd}");
        }
    }
}
