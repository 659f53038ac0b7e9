//! Property tests for the structural invariants: hinge dominates 0-1 loss,
//! projections land in the feasible set, normalization preserves signs, and
//! the soft-weight identities.

use halfspace::hinge::{hinge, normalize, project_two_balls};
use halfspace::outlier::normalize_weights;
use nalgebra::DVector;
use proptest::prelude::*;

fn vector(dim: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-3.0f64..3.0, dim).prop_map(DVector::from_vec)
}

proptest! {
    #[test]
    fn hinge_dominates_zero_one_loss(
        w in vector(4),
        x in vector(4),
        y in prop::bool::ANY,
        tau in 0.01f64..2.0,
    ) {
        let y = if y { 1.0 } else { -1.0 };
        // Whenever the example is misclassified (margin <= 0) the hinge is
        // at least 1, the 0-1 loss.
        if y * w.dot(&x) <= 0.0 {
            prop_assert!(hinge(&w, &x, y, tau) >= 1.0);
        }
    }

    #[test]
    fn projection_is_feasible_and_idempotent(
        z in vector(3),
        u_raw in vector(3),
        r in 0.05f64..2.0,
        shrink in 0.1f64..1.0,
    ) {
        let norm = u_raw.norm();
        prop_assume!(norm > 1e-6);
        let u = u_raw * (shrink / norm);
        let p = project_two_balls(&z, &u, r);
        prop_assert!(p.norm() <= 1.0 + 1e-8, "norm {}", p.norm());
        prop_assert!((&p - &u).norm() <= r + 1e-8, "dist {}", (&p - &u).norm());
        let p2 = project_two_balls(&p, &u, r);
        prop_assert!((&p2 - &p).norm() <= 1e-8);
    }

    #[test]
    fn normalize_preserves_every_classification(
        v in vector(4),
        x in vector(4),
    ) {
        prop_assume!(v.norm() > 1e-6);
        let w = normalize(&v).unwrap();
        prop_assert!((w.norm() - 1.0).abs() < 1e-12);
        prop_assert_eq!(v.dot(&x) >= 0.0, w.dot(&x) >= 0.0);
    }

    #[test]
    fn normalized_weights_are_within_xi_of_uniform(
        q in prop::collection::vec(0.0f64..=1.0, 1..40),
    ) {
        let mass: f64 = q.iter().sum();
        prop_assume!(mass > 1e-9);
        let nw = normalize_weights(&q).unwrap();
        let n = q.len() as f64;
        // Retained-mass identity: TV distance to uniform is at most the
        // removed fraction.
        let xi_implied = 1.0 - mass / n;
        prop_assert!(nw.tv_to_uniform <= xi_implied + 1e-9);
        let total: f64 = nw.p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }
}
