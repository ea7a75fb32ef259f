use kinetrate::geometry::{Direction, Domain};
use kinetrate::linalg::c;
use kinetrate::phase_grid::{GridSpec, PhaseDensity, PhaseGrid, RadialWeight, VelocityMeasure, C64};
use kinetrate::resolvent_steady::*;
use kinetrate::transfer_operator::Model;
use kinetrate::wall_kernels::DiffuseKernel;
use proptest::prelude::*;
use std::sync::OnceLock;

fn model() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(Model::baseline)
}

fn psi() -> &'static PhaseDensity {
    static P: OnceLock<PhaseDensity> = OnceLock::new();
    P.get_or_init(|| invariant_density(model()).unwrap().psi)
}

fn diff(a: &PhaseDensity, b: &PhaseDensity) -> PhaseDensity {
    PhaseDensity { values: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect() }
}

fn smooth(m: &Model, a: f64, b: f64) -> PhaseDensity {
    m.grid.sample(|x, v| 1.0 + a * x[0] + b * v[1] * x[1] + 0.2 * (v[0] * v[0] + v[1] * v[1]).sqrt())
}

fn zero_mean(m: &Model, a: f64, b: f64) -> PhaseDensity {
    m.grid.zero_mean_projected(&smooth(m, a, b), Some(psi())).unwrap()
}

fn maxwellian_oracle(g: &PhaseGrid, theta: f64) -> PhaseDensity {
    let f = g.sample(|_, v| (-(v[0] * v[0] + v[1] * v[1]) / (2.0 * theta)).exp());
    let z = g.mass(&f);
    PhaseDensity { values: f.values.iter().map(|x| x / z).collect() }
}

#[test]
fn free_resolvent_of_constant_has_closed_form() {
    // R(λ, T₀)1 = (1 − e^{−λ t₋})/λ with t₋ the backward exit time
    let m = model();
    let g = &m.grid;
    let one = g.sample(|_, _| 1.0);
    for lam in [c(0.5), C64::new(0.1, 1.0)] {
        let r = resolvent_t0(m, lam, &one).unwrap();
        let mut worst: f64 = 0.0;
        for p in (0..g.n_plus()).step_by(37) {
            let v = g.phase_velocity(p);
            for k in 0..g.nc() {
                let x = g.phase_point(p, k);
                let t = g.domain.exit_time(&x, &v, Direction::Backward).unwrap();
                let exact = (c(1.0) - (-lam * t).exp()) / lam;
                worst = worst.max((r.values[p * g.nc() + k] - exact).norm());
            }
        }
        assert!(worst < 1e-10, "{worst:e}");
    }
}

#[test]
fn invariant_density_is_truncated_maxwellian() {
    let g = &model().grid;
    let ex = maxwellian_oracle(g, 1.0);
    let err = g.norm_x(&diff(psi(), &ex), 0) / g.norm_x(&ex, 0);
    assert!(err < 1e-2, "{err:e}");
    assert!(psi().values.iter().all(|x| x.re > 0.0));
    assert!((g.mass(psi()) - c(1.0)).norm() < 1e-12);
}

#[test]
fn invariant_density_for_cooler_wall() {
    let meas = VelocityMeasure::new(RadialWeight::Lebesgue, 0.25).unwrap();
    let grid = PhaseGrid::new(Domain::disk(), meas, GridSpec::baseline()).unwrap();
    let m = Model::new(grid, DiffuseKernel::maxwellian(0.5, meas));
    let p = invariant_density(&m).unwrap().psi;
    let ex = maxwellian_oracle(&m.grid, 0.5);
    let err = m.grid.norm_x(&diff(&p, &ex), 0) / m.grid.norm_x(&ex, 0);
    assert!(err < 1e-2, "{err:e}");
}

#[test]
fn invariant_density_is_a_fixed_point_of_the_resolvent() {
    // R(λ, T_H)Ψ = Ψ/λ
    let m = model();
    let r = resolvent_th(m, c(1.0), psi()).unwrap();
    assert!(m.grid.norm_x(&diff(&r, psi()), 0) < 1e-10);
}

#[test]
fn resolvent_solves_the_generator_equation() {
    let m = model();
    let f = smooth(m, 0.4, -0.3);
    for lam in [c(0.5), c(2.0), C64::new(0.2, 1.5)] {
        let r = resolvent_th(m, lam, &f).unwrap();
        assert!(generator_residual(m, lam, &f, &r) < 1e-8);
    }
}

#[test]
fn resolvent_rejects_zero() {
    let m = model();
    assert!(resolvent_th(m, c(0.0), &smooth(m, 0.1, 0.1)).is_err());
}

#[test]
fn free_resolvent_derivative_bounds() {
    // ‖d^k/dλ^k R(λ, T₀) f‖_{X₀} ≤ D^{k+1}/(k+1) ‖f‖_{X_{k+1}}
    let m = model();
    let g = &m.grid;
    let d = m.diameter();
    let f = smooth(m, 0.5, 0.5);
    for lam in [c(0.5), C64::new(0.1, 1.0)] {
        for k in 0..3u32 {
            let r = resolvent_t0_derivative(m, lam, &f, k).unwrap();
            let bound = d.powi(k as i32 + 1) / (k as f64 + 1.0) * g.norm_x(&f, k + 1);
            assert!(g.norm_x(&r, 0) <= bound, "k={k} {} > {bound}", g.norm_x(&r, 0));
        }
    }
}

#[test]
fn boundary_function_ladder_converges() {
    let m = model();
    let f = zero_mean(m, 0.4, -0.3);
    for eta in [0.0, 1.0] {
        let b = boundary_function(m, &f, eta).unwrap();
        assert!(b.shrink_factors().iter().all(|s| *s >= 1.8), "{:?}", b.shrink_factors());
        let last = *b.increments.last().unwrap();
        let gap = m.grid.norm_x(&diff(&b.value, &b.ladder_last), 0);
        assert!(gap <= 2.0 * last, "{gap} {last}");
    }
}

#[test]
fn nonzero_mean_exhibits_a_pole() {
    let m = model();
    let f = smooth(m, 0.4, -0.3);
    let rho = m.grid.mass(&f).re;
    let ladder = pole_residue_ladder(m, &f).unwrap();
    let (_, last) = *ladder.last().unwrap();
    assert!((last / rho - 1.0).abs() < 0.05, "{ladder:?}");
    assert!(boundary_function(m, &f, 0.0).is_err());
}

#[test]
fn boundary_derivative_matches_difference_quotient() {
    let m = model();
    let f = zero_mean(m, 0.3, 0.2);
    let eta = 1.0;
    let h = 1e-3;
    let d = iterated_boundary_function(m, &f, eta, 2).unwrap().derivative;
    let rp = boundary_function_value(m, &f, eta + h).unwrap();
    let rm = boundary_function_value(m, &f, eta - h).unwrap();
    let fd = PhaseDensity { values: rp.values.iter().zip(&rm.values).map(|(a, b)| (a - b) / (2.0 * h)).collect() };
    let err = m.grid.norm_x(&diff(&d, &fd), 0) / m.grid.norm_x(&d, 0);
    assert!(err < 1e-4, "{err:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mass_law(lam in 0.2f64..3.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let m = model();
        let f = smooth(m, a, b);
        let rho = m.grid.mass(&f);
        let r = resolvent_th(m, c(lam), &f).unwrap();
        prop_assert!((m.grid.mass(&r) - rho / lam).norm() <= 1e-8 * rho.norm() / lam);
    }

    #[test]
    fn zero_mean_is_preserved(lam in 0.2f64..3.0, eta in -2.0f64..2.0, a in -1.0f64..1.0) {
        let m = model();
        let f = zero_mean(m, a, 0.3);
        let r = resolvent_th(m, C64::new(lam, eta), &f).unwrap();
        prop_assert!(m.grid.mass(&r).norm() <= 1e-10 * m.grid.norm_x(&f, 0));
    }

    #[test]
    fn resolvent_is_positive(lam in 0.2f64..3.0) {
        let m = model();
        let f = m.grid.sample(|x, _| (-(x[0] - 0.5).powi(2) * 4.0).exp());
        let r = resolvent_th(m, c(lam), &f).unwrap();
        prop_assert!(r.values.iter().all(|x| x.re > 0.0));
    }
}
