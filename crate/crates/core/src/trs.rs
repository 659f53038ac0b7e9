//! Maximization of a quadratic over a sphere via the secular equation.
//!
//! Solves max x'Ax + 2 b'x subject to ||x|| = radius for symmetric A, the
//! building block behind the separation oracle's trust-region candidates.
//! Stationarity gives (nu I - A) x = b with nu at least the top eigenvalue;
//! the multiplier is located on the secular curve ||x(nu)|| = radius by
//! safeguarded bisection, with the usual hard-case fallback when b is
//! orthogonal to the top eigenspace.

use nalgebra::{DMatrix, DVector};

/// Maximize x'Ax + 2 b'x over ||x|| = radius (A symmetric, radius > 0);
/// returns the maximizer and the attained value.
pub fn max_quadratic_on_sphere(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    radius: f64,
) -> (DVector<f64>, f64) {
    let d = b.len();
    assert!(radius > 0.0);
    assert_eq!(a.nrows(), d);
    assert_eq!(a.ncols(), d);

    let eig = a.clone().symmetric_eigen();
    let lambdas = eig.eigenvalues;
    let vecs = eig.eigenvectors;
    let lambda_max = lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let beta = vecs.transpose() * b;

    let scale = lambdas
        .iter()
        .map(|l| l.abs())
        .fold(b.norm() / radius, f64::max)
        .max(1e-300);
    let eps_gap = 1e-14 * scale.max(1.0);

    let xi_norm_sq = |nu: f64| -> f64 {
        (0..d)
            .map(|i| {
                let denom = nu - lambdas[i];
                let term = beta[i] / denom;
                term * term
            })
            .sum()
    };

    let build_x = |nu: f64| -> DVector<f64> {
        let coeffs = DVector::from_fn(d, |i, _| beta[i] / (nu - lambdas[i]));
        &vecs * coeffs
    };

    let x = if b.norm() <= 1e-300 {
        // Pure eigenproblem: the top eigenvector scaled to the sphere.
        let idx = (0..d)
            .max_by(|&i, &j| lambdas[i].partial_cmp(&lambdas[j]).unwrap())
            .unwrap();
        vecs.column(idx).into_owned() * radius
    } else if xi_norm_sq(lambda_max + eps_gap) >= radius * radius {
        // Regular case: a root of ||x(nu)|| = radius exists right of the top
        // eigenvalue. ||x(nu)|| is strictly decreasing there.
        let mut lo = lambda_max + eps_gap;
        let mut hi = lambda_max + beta.norm() / radius + eps_gap;
        while xi_norm_sq(hi) > radius * radius {
            hi = lambda_max + 2.0 * (hi - lambda_max);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if xi_norm_sq(mid) > radius * radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        build_x(0.5 * (lo + hi))
    } else {
        // Hard case: b (numerically) orthogonal to the top eigenspace. Take
        // the limit solution on the complement and make up the remaining norm
        // along a top eigenvector.
        let top_tol = 1e-10 * scale.max(1.0);
        let mut x = DVector::zeros(d);
        for i in 0..d {
            let gap = lambda_max - lambdas[i];
            if gap > top_tol {
                x += vecs.column(i) * (beta[i] / (lambda_max + eps_gap - lambdas[i]));
            }
        }
        let deficit = radius * radius - x.norm_squared();
        if deficit > 0.0 {
            let idx = (0..d)
                .max_by(|&i, &j| lambdas[i].partial_cmp(&lambdas[j]).unwrap())
                .unwrap();
            x += vecs.column(idx) * deficit.sqrt();
        } else {
            x *= radius / x.norm();
        }
        x
    };

    // Clean up rounding drift and evaluate.
    let x = if x.norm() > 0.0 {
        &x * (radius / x.norm())
    } else {
        x
    };
    let value = (&x.transpose() * a * &x)[(0, 0)] + 2.0 * b.dot(&x);
    (x, value)
}
