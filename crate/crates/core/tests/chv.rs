use kinetrate::chv::*;
use kinetrate::geometry::{dot, norm, sub, Domain};
use kinetrate::phase_grid::{RadialWeight, VelocityMeasure};
use kinetrate::wall_kernels::DiffuseKernel;
use proptest::prelude::*;
use std::f64::consts::PI;

proptest! {
    // On the unit circle both cosines equal |x − y|/2, so J = |x − y|/4.
    #[test]
    fn circle_jacobian_closed_form(a in 0.0..2.0 * PI, b in 0.0..2.0 * PI) {
        prop_assume!((a - b).abs() > 1e-6 && (a - b).abs() < 2.0 * PI - 1e-6);
        let d = Domain::disk();
        let x = d.boundary_chart([a, 0.0]).x;
        let y = d.boundary_chart([b, 0.0]).x;
        let j = jacobian(&d, &x, &y).unwrap();
        let r = norm(&sub(&x, &y));
        prop_assert!((j.value - r / 4.0).abs() <= 1e-14 * r.max(1e-3));
        prop_assert!(j.indicator);
    }

    // On the unit sphere J ≡ 1/4.
    #[test]
    fn sphere_jacobian_constant(t1 in 0.05f64..3.1, p1 in 0.0..2.0 * PI, t2 in 0.05f64..3.1, p2 in 0.0..2.0 * PI) {
        let d = Domain::ball();
        let x = d.boundary_chart([t1, p1]).x;
        let y = d.boundary_chart([t2, p2]).x;
        prop_assume!(norm(&sub(&x, &y)) > 1e-6);
        prop_assert!((jacobian(&d, &x, &y).unwrap().value - 0.25).abs() < 1e-13);
    }

    #[test]
    fn ellipse_jacobian_symmetric_and_bounded(a in 0.0..2.0 * PI, b in 0.0..2.0 * PI) {
        let d = Domain::ellipse(2.0, 1.0).unwrap();
        let x = d.boundary_chart([a, 0.0]).x;
        let y = d.boundary_chart([b, 0.0]).x;
        let r = norm(&sub(&x, &y));
        prop_assume!(r > 1e-6);
        let jxy = jacobian(&d, &x, &y).unwrap().value;
        let jyx = jacobian(&d, &y, &x).unwrap().value;
        prop_assert!(jxy >= 0.0);
        prop_assert!((jxy - jyx).abs() <= 1e-12 * jxy.max(1e-300));
        prop_assert!(jxy <= 1.0 / r * (1.0 + 1e-12));
    }
}

#[test]
fn identity_on_disk_with_unit_integrand() {
    let d = Domain::disk();
    for s in [0.0, 1.0, 2.5, 4.0] {
        let x = d.boundary_chart([s, 0.0]).x;
        let id = chv_identity_residual(&d, &x, |_| 1.0).unwrap();
        assert!((id.lhs - 2.0).abs() < 1e-8 && (id.rhs - 2.0).abs() < 1e-8, "{id:?}");
    }
}

#[test]
fn identity_with_squared_cosine_on_disk() {
    // ∫_{σ·n>0} (σ·n)³ dσ = 4/3 in two dimensions
    let d = Domain::disk();
    let x = d.boundary_chart([0.3, 0.0]).x;
    let n = d.outward_normal(&x).unwrap();
    let id = chv_identity_residual(&d, &x, |s| dot(s, &n).powi(2)).unwrap();
    assert!((id.lhs - 4.0 / 3.0).abs() < 1e-12, "{id:?}");
    assert!(id.residual < 1e-12);
}

#[test]
fn identity_on_ellipse_and_ball() {
    let e = Domain::ellipse(2.0, 1.0).unwrap();
    for s in [0.0, 0.7, std::f64::consts::FRAC_PI_2, 2.2] {
        let x = e.boundary_chart([s, 0.0]).x;
        let id = chv_identity_residual(&e, &x, |v| 1.0 + v[0] * v[1]).unwrap();
        assert!(id.residual < 1e-6, "{id:?}");
    }
    let b = Domain::ball();
    let x = b.boundary_chart([0.9, 0.4]).x;
    let id = chv_identity_residual(&b, &x, |_| 1.0).unwrap();
    assert!((id.lhs - PI).abs() < 1e-10 && id.residual < 1e-10, "{id:?}");
}

#[test]
fn identity_converges_under_panel_refinement() {
    let e = Domain::ellipse(2.0, 1.0).unwrap();
    let x = e.boundary_chart([0.7, 0.0]).x;
    let g = |s: &[f64; 3]| (3.0 * s[0]).cos().powi(2);
    let r1 = chv_identity_residual_with(&e, &x, g, 1).unwrap().residual;
    let r4 = chv_identity_residual_with(&e, &x, g, 4).unwrap().residual;
    assert!(r4 < 1e-12 && r4 <= r1, "{r1:e} {r4:e}");
}

#[test]
fn bound_constant_on_circle_is_one_half() {
    let d = Domain::disk();
    let pairs = sample_pairs(&d, 10_000, 11);
    let c = c2_bound_constant(&d, &pairs).unwrap();
    assert!((c - 0.5).abs() < 1e-6, "{c}");
    let checks = pair_checks(&d, &pairs, 0.5).unwrap();
    assert!(checks.max_asymmetry <= 1e-12);
    assert!(checks.slack_basic <= 0.0 && checks.slack_c2 <= 1e-12);
    assert!(checks.all_indicators);
}

#[test]
fn bound_constant_requires_enough_pairs() {
    let d = Domain::disk();
    assert!(c2_bound_constant(&d, &sample_pairs(&d, 10, 1)).is_err());
}

#[test]
fn shell_integral_matches_circle_closed_form() {
    let d = Domain::disk();
    let y = d.boundary_chart([1.0, 0.0]).x;
    let mut prev = f64::INFINITY;
    for delta in [0.4, 0.2, 0.1, 0.05] {
        let v = delta_shell_integral(&d, &y, delta).unwrap();
        assert!((v - circle_shell_exact(delta)).abs() < 1e-12);
        // quadratic in δ
        assert!(v < prev / 3.5);
        prev = v;
    }
}

#[test]
fn outgoing_flux_forms_agree() {
    let meas = VelocityMeasure::new(RadialWeight::Lebesgue, 0.25).unwrap();
    let d = Domain::disk();
    let e = Domain::ellipse(2.0, 1.0).unwrap();
    assert!(l0_form_agreement(&d, &DiffuseKernel::maxwellian(1.0, meas), 5, 4, 1).unwrap() < 1e-10);
    assert!(l0_form_agreement(&e, &DiffuseKernel::power_law(2.0, meas), 5, 4, 2).unwrap() < 1e-10);
}

#[test]
fn sampled_pairs_are_reproducible() {
    let d = Domain::ellipse(2.0, 1.0).unwrap();
    assert_eq!(sample_pairs(&d, 100, 5), sample_pairs(&d, 100, 5));
    assert_ne!(sample_pairs(&d, 100, 5), sample_pairs(&d, 100, 6));
}
