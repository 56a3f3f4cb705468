use mvi::auglag::{dual_update, phi_from_values, phi_scalar, phi_total};
use mvi::problem::ProblemInstance;
use mvi::sets::ConvexSet;
use nalgebra::DMatrix;
use proptest::prelude::*;

/// phi written through the clipped square, independently of the branch form.
fn phi_clipped(u: f64, v: f64, rho: f64) -> f64 {
    let s = (v + rho * u).max(0.0);
    (s * s - v * v) / (2.0 * rho)
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Two quadratic constraints in two variables:
/// f_1 = x_1^2 + x_2^2 - 1 - theta, f_2 = x_1 - 2 x_2 + theta.
fn disk_problem() -> ProblemInstance {
    ProblemInstance::builder(
        ConvexSet::boxed(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap(),
        ConvexSet::boxed(vec![0.0], vec![1.0]).unwrap(),
        |x: &[f64], _: &[f64]| x.to_vec(),
        |t: &[f64]| t.to_vec(),
    )
    .constraints(
        2,
        |x: &[f64], t: &[f64]| vec![x[0] * x[0] + x[1] * x[1] - 1.0 - t[0], x[0] - 2.0 * x[1] + t[0]],
        |x: &[f64], _: &[f64]| DMatrix::from_row_slice(2, 2, &[2.0 * x[0], 2.0 * x[1], 1.0, -2.0]),
    )
    .build()
    .unwrap()
}

proptest! {
    #[test]
    fn phi_matches_clipped_square(u in -1e3..1e3f64, v in 0.0..1e3f64, rho in 1e-3..1e2f64) {
        let got = phi_scalar(u, v, rho).unwrap();
        prop_assert!(rel_close(got, phi_clipped(u, v, rho), 1e-12), "{got}");
    }

    #[test]
    fn dual_step_is_rho_times_lambda_gradient(
        f in prop::collection::vec(-50.0..50.0f64, 1..6),
        seed_l in prop::collection::vec(0.0..50.0f64, 6),
        rho in 1e-3..10.0f64,
    ) {
        let lambda = &seed_l[..f.len()];
        let jac = DMatrix::zeros(f.len(), 1);
        let eval = phi_from_values(&f, &jac, lambda, rho).unwrap();
        let next = dual_update(lambda, &f, rho).unwrap();
        for j in 0..f.len() {
            let step = rho * eval.grad_lambda[j];
            if eval.active_set[j] {
                // same floating-point operations as the update itself
                prop_assert_eq!(next[j], (lambda[j] + step).max(0.0));
            } else {
                prop_assert_eq!(next[j], 0.0);
            }
            // the difference only carries the rounding of one subtraction
            let ulp = f64::EPSILON * lambda[j].abs().max(next[j].abs());
            prop_assert!(((next[j] - lambda[j]) - step).abs() <= 2.0 * ulp);
        }
    }

    #[test]
    fn penalty_is_c1_across_the_switch(v in 0.01..10.0f64, rho in 0.1..10.0f64) {
        // rho u + v = 0 at u0 = -v / rho; value and u-derivative agree from both sides
        let u0 = -v / rho;
        let h = 1e-7 * (1.0 + u0.abs());
        let left = phi_scalar(u0 - h, v, rho).unwrap();
        let right = phi_scalar(u0 + h, v, rho).unwrap();
        let at = phi_scalar(u0, v, rho).unwrap();
        prop_assert!((left - at).abs() <= 1e-6 * (1.0 + at.abs()));
        prop_assert!((right - at).abs() <= 1e-6 * (1.0 + at.abs()));
        // d phi / du = [rho u + v]_+, which vanishes at the switch
        let slope_left = (at - left) / h;
        let slope_right = (right - at) / h;
        prop_assert!(slope_left.abs() < 1e-5 && slope_right.abs() < 1e-5);
    }

    #[test]
    fn grad_x_matches_central_differences(
        x0 in -2.5..2.5f64, x1 in -2.5..2.5f64,
        l0 in 0.0..5.0f64, l1 in 0.0..5.0f64,
        theta in 0.0..1.0f64, rho in 0.1..5.0f64,
    ) {
        let p = disk_problem();
        let x = [x0, x1];
        let lambda = [l0, l1];
        let eval = phi_total(&p, &x, &lambda, &[theta], rho).unwrap();
        for i in 0..2 {
            let h = 1e-6;
            let mut up = x;
            let mut dn = x;
            up[i] += h;
            dn[i] -= h;
            let fd = (phi_total(&p, &up, &lambda, &[theta], rho).unwrap().value
                - phi_total(&p, &dn, &lambda, &[theta], rho).unwrap().value)
                / (2.0 * h);
            prop_assert!((fd - eval.grad_x[i]).abs() <= 1e-5 * (1.0 + eval.grad_x[i].abs()),
                "i={i} fd={fd} analytic={}", eval.grad_x[i]);
        }
    }
}

#[test]
fn inactive_component_of_dual_step_is_zero() {
    // rho f + lambda < 0 clips to exactly zero
    assert_eq!(dual_update(&[0.3, 2.0], &[-1.0, 1.0], 0.5).unwrap(), vec![0.0, 2.5]);
}
