use approx::assert_relative_eq;
use proptest::prelude::*;

use attreg_core::calculus::{hessian_at, softmax_covariance};
use attreg_core::experiments::random_instance;
use attreg_core::linalg::sym_eigenvalues;
use attreg_core::model::{loss_total, residual_softmax};
use attreg_core::nce::{mi_lower_bound, nce_loss, BoundKind, NceBatch};
use attreg_core::verify::{generalized_eigen_range, psd_check, sandwich_check};
use attreg_core::{Matrix, ModelState, ProblemInstance, Vector};

fn vec_strategy(len: usize, scale: f64) -> impl Strategy<Value = Vector> {
    proptest::collection::vec(-scale..scale, len).prop_map(Vector::from_vec)
}

fn instance_strategy() -> impl Strategy<Value = (ProblemInstance, Vector)> {
    (1usize..6, 2usize..12).prop_flat_map(|(d, n)| {
        (
            proptest::collection::vec(-2.0..2.0f64, n * d),
            proptest::collection::vec(0.0..1.0f64, n),
            proptest::collection::vec(0.0..1.0f64, n),
            vec_strategy(d, 3.0),
        )
            .prop_map(move |(a, b, w, x)| {
                let inst = ProblemInstance::new(
                    Matrix::from_row_slice(n, d, &a),
                    Vector::from_vec(b),
                    Vector::from_vec(w),
                )
                .unwrap();
                (inst, x)
            })
    })
}

proptest! {
    #[test]
    fn softmax_is_a_distribution((inst, x) in instance_strategy()) {
        let state = ModelState::new(&inst, &x).unwrap();
        let f = state.f();
        prop_assert!(f.iter().all(|&v| v >= 0.0));
        prop_assert!((f.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(f.norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn softmax_shift_invariance((inst, x) in instance_strategy(), c in -50.0..50.0f64) {
        // Adding c·1 to every logit leaves f unchanged; realize it through an
        // extra constant column of A.
        let n = inst.n();
        let d = inst.d();
        let mut a = inst.a().clone().insert_column(d, 1.0);
        a.column_mut(d).fill(1.0);
        let shifted = ProblemInstance::new(a, inst.b().clone(), inst.w().clone()).unwrap();
        let xs = x.clone().insert_row(d, c);
        let f0 = ModelState::new(&inst, &x).unwrap().f().clone();
        let f1 = ModelState::new(&shifted, &xs).unwrap().f().clone();
        prop_assert_eq!(f0.len(), n);
        prop_assert!((f0 - f1).amax() <= 1e-12);
    }

    #[test]
    fn covariance_is_psd((inst, x) in instance_strategy()) {
        let s = softmax_covariance(ModelState::new(&inst, &x).unwrap().f());
        prop_assert!(sym_eigenvalues(&s)[0] >= -1e-12);
        prop_assert!((&s * Vector::from_element(inst.n(), 1.0)).amax() <= 1e-12);
    }

    #[test]
    fn residual_matches_loss((inst, x) in instance_strategy()) {
        let r = residual_softmax(&inst, &x).unwrap();
        let l = loss_total(&inst, &x).unwrap().l_exp;
        prop_assert!((r * r - 2.0 * l).abs() <= 1e-12 * (1.0 + l));
    }

    #[test]
    fn hessian_is_symmetric((inst, x) in instance_strategy()) {
        let h = hessian_at(&inst, &x).unwrap();
        prop_assert!((&h - h.transpose()).amax() <= 1e-12 * (1.0 + h.amax()));
    }

    #[test]
    fn nce_shift_invariance(
        scores in proptest::collection::vec(-20.0..20.0f64, 1..12),
        shift in -100.0..100.0f64,
    ) {
        // Scores s_k = anchor·c_k with W = I; shifting every candidate along the
        // anchor adds the same constant to all scores.
        let k = scores.len();
        let anchor = Vector::from_vec(vec![1.0, 0.0]);
        let cand = |s: f64| Vector::from_vec(vec![s, 0.5]);
        let batch = |off: f64| {
            NceBatch::new(
                anchor.clone(),
                cand(scores[0] + off),
                scores[1..].iter().map(|&s| cand(s + off)).collect(),
                Matrix::identity(2, 2),
            )
            .unwrap()
        };
        let base = nce_loss(&batch(0.0));
        prop_assert!(base <= 0.0);
        prop_assert!((base - nce_loss(&batch(shift))).abs() <= 1e-9);
        let rep = mi_lower_bound(&batch(0.0), BoundKind::Representation).value;
        prop_assert!(rep <= (k as f64).ln() + 1e-12);
    }

    #[test]
    fn sandwich_is_reflexive(seed in 0u64..500) {
        let (inst, x) = random_instance(seed, 12, 5).unwrap();
        let h = hessian_at(&inst, &x).unwrap();
        let m = &h * h.transpose() + Matrix::identity(inst.d(), inst.d());
        prop_assert!(sandwich_check(&m, &m, 1.0, 1.0).unwrap());
        let (lo, hi) = generalized_eigen_range(&(&m * 2.0), &m).unwrap();
        assert_relative_eq!(lo, 2.0, max_relative = 1e-10);
        assert_relative_eq!(hi, 2.0, max_relative = 1e-10);
    }
}

#[test]
fn pure_ridge_meets_its_level() {
    // With only the regularizer active the Hessian is AᵀW²A exactly.
    let a = Matrix::identity(3, 3);
    let w = Vector::from_vec(vec![1.0, 2.0, 3.0]);
    let inst = ProblemInstance::new(a, Vector::from_element(3, 0.0), w)
        .unwrap()
        .with_terms(attreg_core::Terms::REG_ONLY)
        .unwrap();
    let h = hessian_at(&inst, &Vector::zeros(3)).unwrap();
    let report = psd_check(&h, 1.0).unwrap();
    assert!(report.passed);
    assert_relative_eq!(report.eigmin, 1.0, epsilon = 1e-12);
    assert_relative_eq!(report.eigmax, 9.0, epsilon = 1e-12);
    assert!(!psd_check(&h, 1.5).unwrap().passed);
}
