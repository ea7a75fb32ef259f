use kinetrate::geometry::{dot, norm, Domain};
use kinetrate::phase_grid::*;
use kinetrate::quadrature::GaussRule;
use kinetrate::rng::Stream;
use kinetrate::wall_kernels::*;
use proptest::prelude::*;
use std::f64::consts::PI;

fn measure() -> VelocityMeasure {
    VelocityMeasure::new(RadialWeight::Lebesgue, 0.25).unwrap()
}

fn families() -> Vec<DiffuseKernel> {
    let m = measure();
    vec![
        DiffuseKernel::maxwellian(1.0, m),
        DiffuseKernel::new(KernelFamily::Maxwellian { theta: ThetaField::Bump }, m, 2).unwrap(),
        DiffuseKernel::new(KernelFamily::GeneralizedRadial { theta: ThetaField::Constant(0.7), p: 1.5 }, m, 2).unwrap(),
        DiffuseKernel::power_law(2.0, m),
        DiffuseKernel::new(KernelFamily::SeparableRankOne, m, 2).unwrap(),
    ]
}

#[test]
fn discrete_columns_are_flux_stochastic() {
    let g = PhaseGrid::baseline_disk();
    for k in families() {
        let d = DiscreteKernel::new(&g, &k);
        let worst = d.column_sums(&g).iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-12, "{worst:e}");
    }
}

#[test]
fn analytic_normalization_is_close_to_discrete() {
    let g = PhaseGrid::baseline_disk();
    for k in families() {
        for node in [0, 7, 23] {
            let s = k.check_stochastic_raw(&g, node);
            assert!((s - 1.0).abs() < 2e-2, "{s}");
        }
    }
}

// γ by direct quadrature: hemisphere cosine integral (= 2 in the plane)
// times ∫ G ρ² dρ over the speed range.
#[test]
fn gamma_matches_independent_quadrature() {
    let rule = GaussRule::new(20);
    for k in families() {
        for s in [0.0, 1.3, 4.0] {
            let radial = rule.integrate_composite(0.25, 4.0, 32, |r| k.profile(s, r) * r * r);
            let direct = 2.0 * radial;
            let g = k.gamma_at(s, true);
            assert!((g - direct).abs() <= 1e-10 * g, "{g} {direct}");
        }
    }
}

#[test]
fn untruncated_maxwellian_gamma() {
    // (2π)^{-1} · 2 · ∫_0^∞ ρ² e^{−ρ²/2} dρ = (2π)^{-1} · 2 · √(π/2)
    let k = DiffuseKernel::maxwellian(1.0, measure());
    let exact = 2.0 * (PI / 2.0).sqrt() / (2.0 * PI);
    assert!((k.gamma_at(0.0, false) - exact).abs() < 1e-12);
}

#[test]
fn integrability_index_values() {
    // ∫ ρ^{−k−1} ρ^a ρ^{d} dρ near zero is finite iff k < a + d
    let m = measure();
    assert_eq!(DiffuseKernel::power_law(2.0, m).integrability_index(6).n_h, Some(3));
    assert_eq!(DiffuseKernel::maxwellian(1.0, m).integrability_index(6).n_h, Some(1));
    let gr = DiffuseKernel::new(KernelFamily::GeneralizedRadial { theta: ThetaField::Constant(1.0), p: 3.0 }, m, 2).unwrap();
    assert_eq!(gr.integrability_index(6).n_h, Some(4));
}

#[test]
fn weighted_moment_grows_only_beyond_index() {
    let k = DiffuseKernel::power_law(2.0, measure());
    // finite moments stabilise as the cutoff shrinks, the first infinite one diverges
    let finite = (k.weighted_moment(0.0, 3, 1e-4) - k.weighted_moment(0.0, 3, 1e-6)).abs();
    let log = k.weighted_moment(0.0, 4, 1e-6) - k.weighted_moment(0.0, 4, 1e-4);
    let infinite = k.weighted_moment(0.0, 5, 1e-6) / k.weighted_moment(0.0, 5, 1e-4);
    assert!(finite < 1e-6, "{finite}");
    assert!(log > 1e-3, "{log}");
    assert!(infinite > 10.0, "{infinite}");
}

#[test]
fn halfspace_violations_are_errors() {
    let d = Domain::disk();
    let x = d.boundary_chart([0.0, 0.0]);
    let k = DiffuseKernel::maxwellian(1.0, measure());
    assert!(k.eval_kernel(&x, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
    assert!(k.eval_kernel(&x, &[-1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]).is_err());
    let mut rng = Stream::new(1, 0);
    assert!(k.sample_reemission(&x, &[-1.0, 0.0, 0.0], &mut rng).is_err());
}

#[test]
fn invalid_parameters_rejected() {
    let m = measure();
    assert!(DiffuseKernel::new(KernelFamily::PowerLaw { a: -1.0 }, m, 2).is_err());
    assert!(DiffuseKernel::new(KernelFamily::Maxwellian { theta: ThetaField::Constant(0.0) }, m, 2).is_err());
}

// Sample mean of the reemitted speed against the quadrature mean of the
// flux density G ρ² on (c, 1/c).
#[test]
fn reemission_speed_mean_matches_quadrature() {
    let d = Domain::disk();
    let x = d.boundary_chart([0.5, 0.0]);
    let rule = GaussRule::new(20);
    for k in families() {
        let z = rule.integrate_composite(0.25, 4.0, 32, |r| k.profile(0.5, r) * r * r);
        let mean = rule.integrate_composite(0.25, 4.0, 32, |r| k.profile(0.5, r) * r * r * r) / z;
        let mut rng = Stream::new(42, 0);
        let n = 100_000;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let v = k.sample_reemission(&x, &x.n, &mut rng).unwrap();
            let r = norm(&v);
            s += r;
            s2 += r * r;
        }
        let m = s / n as f64;
        let sd = ((s2 / n as f64 - m * m) / n as f64).sqrt();
        assert!((m - mean).abs() < 5.0 * sd, "{m} {mean} {sd}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_positive_on_halfspaces(s in 0.0..2.0 * PI, a in -1.5f64..1.5, b in -1.5f64..1.5, r in 0.26f64..3.9, rp in 0.26f64..3.9) {
        let d = Domain::disk();
        let x = d.boundary_chart([s, 0.0]);
        let n = x.n;
        let t = [-n[1], n[0], 0.0];
        let v = [r * (-a.cos() * n[0] + a.sin() * t[0]), r * (-a.cos() * n[1] + a.sin() * t[1]), 0.0];
        let vp = [rp * (b.cos() * n[0] + b.sin() * t[0]), rp * (b.cos() * n[1] + b.sin() * t[1]), 0.0];
        for k in families() {
            prop_assert!(k.eval_kernel(&x, &v, &vp).unwrap() > 0.0);
        }
    }

    #[test]
    fn reemitted_velocities_point_inward(seed in 0u64..1000, s in 0.0..2.0 * PI) {
        let d = Domain::disk();
        let x = d.boundary_chart([s, 0.0]);
        let mut rng = Stream::new(seed, 3);
        for k in families() {
            let v = k.sample_reemission(&x, &x.n, &mut rng).unwrap();
            let r = norm(&v);
            prop_assert!(dot(&v, &x.n) < 0.0);
            prop_assert!((0.25..=4.0).contains(&r));
        }
    }
}
