mod common;

use common::{lm_monotone, newton_monotone, run_cases};
use proptest::prelude::*;
use shapesr::datasets::{generate, ProblemSpec, Which};
use shapesr::fitting::{fit_lm, staged_fit, FitConfig, FitProblem, Variant};
use shapesr::constraints::{MagmanSenses, ShapeConstraints};
use shapesr::datasets::ProblemId;

#[test]
fn lm_descends_on_100_random_fits() {
    let (n, fail) = run_cases(100, 5000, lm_monotone);
    assert_eq!(fail, None);
    assert_eq!(n, 100);
}

#[test]
fn newton_descends_on_100_random_constrained_fits() {
    let (n, fail) = run_cases(100, 5000, newton_monotone);
    assert_eq!(fail, None);
    assert_eq!(n, 100);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lm_recovers_magman_from_perturbed_starts(da in -0.3f64..0.3, db in -0.3f64..0.3) {
        let spec = ProblemSpec::magman();
        let data = generate(&spec, Which::Fit, 3).unwrap();
        let p0 = [spec.truth_params[0] * (1.0 + da), spec.truth_params[1] * (1.0 + db)];
        let fit = fit_lm(&FitProblem::new(&spec.truth, &data).with_lambda(0.0), &p0, 30);
        for (got, want) in fit.params.iter().zip(&spec.truth_params) {
            prop_assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn variants_agree_when_unconstrained(da in -0.2f64..0.2) {
        let spec = ProblemSpec::vdw();
        let data = generate(&spec, Which::Fit, 0).unwrap();
        let none = ShapeConstraints::for_problem(ProblemId::Vdw, MagmanSenses::GroundTruth, 0);
        let cfg = FitConfig::default();
        let p0 = [spec.truth_params[0] * (1.0 + da), spec.truth_params[1] * (1.0 - da)];
        let base = staged_fit(Variant::Base, &spec.truth, &p0, &data, &none, 0.0, &cfg);
        let obj = staged_fit(Variant::Obj, &spec.truth, &p0, &data, &none, 0.0, &cfg);
        prop_assert_eq!(&base.params, &obj.params);
        prop_assert!(obj.constr_vios >= 0.0);
    }
}
