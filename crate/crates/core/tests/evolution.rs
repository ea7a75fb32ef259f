use kinetrate::evolution::*;
use kinetrate::linalg::c;
use kinetrate::phase_grid::PhaseDensity;
use kinetrate::resolvent_steady::{invariant_density, resolvent_th};
use kinetrate::rng::Stream;
use kinetrate::transfer_operator::Model;
use kinetrate::Error;
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

fn bump(m: &Model) -> PhaseDensity {
    m.grid.sample(|x, v| (-4.0 * ((x[0] - 0.3).powi(2) + x[1] * x[1])).exp() * (-0.5 * (v[0] * v[0] + v[1] * v[1])).exp())
}

fn diff(a: &PhaseDensity, b: &PhaseDensity) -> PhaseDensity {
    PhaseDensity { values: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect() }
}

#[test]
fn marcher_conserves_mass() {
    let m = model();
    let mut st = RenewalState::new(m, &bump(m), None).unwrap();
    let m0 = st.mass();
    assert!((m0 - m.grid.mass(&bump(m)).re).abs() < 1e-12 * m0);
    let horizon = 10.0 * m.diameter();
    let mut worst: f64 = 0.0;
    for i in 1..=20 {
        let t = horizon * i as f64 / 20.0;
        st.advance_to(t);
        worst = worst.max((st.mass() - m0).abs() / m0 / st.time());
    }
    assert!(worst <= 1e-8, "{worst:e}");
}

#[test]
fn invariant_density_is_stationary() {
    let m = model();
    let mut st = RenewalState::new(m, psi(), None).unwrap();
    st.advance_to(5.0 * m.diameter());
    let d = distance_to_equilibrium(&m.grid, &st.density(), 1.0, psi());
    assert!(d <= 1e-10, "{d:e}");
}

#[test]
fn oversized_step_is_rejected() {
    let m = model();
    let dt = 2.0 * default_dt(&m.grid);
    assert!(matches!(RenewalState::new(m, &bump(m), Some(dt)), Err(Error::Stability(_))));
}

#[test]
fn smaller_step_agrees() {
    let m = model();
    let f = bump(m);
    let dt = default_dt(&m.grid);
    let a = renewal_march(m, &f, &[3.0], Some(dt)).unwrap().pop().unwrap();
    let b = renewal_march(m, &f, &[3.0], Some(dt / 2.0)).unwrap().pop().unwrap();
    let rel = m.grid.norm_x(&diff(&a, &b), 0) / m.grid.norm_x(&a, 0);
    assert!(rel < 1e-2, "{rel:e}");
}

#[test]
fn laplace_transform_matches_resolvent() {
    let m = model();
    let f = bump(m);
    let horizon = 20.0 * m.diameter();
    let l = laplace_transform(m, &f, 1.0, horizon, None).unwrap();
    let r = resolvent_th(m, c(1.0), &f).unwrap();
    let rel = m.grid.norm_x(&diff(&l, &r), 0) / m.grid.norm_x(&r, 0);
    assert!(rel <= 2e-3 + (-horizon).exp(), "{rel:e}");
}

#[test]
fn time_integral_of_mass_is_exact() {
    let m = model();
    let mut st = RenewalState::new(m, &bump(m), None).unwrap();
    st.advance_to(7.0);
    let rel = st.time_integral_mass() / (st.time() * st.mass()) - 1.0;
    assert!(rel.abs() < 1e-12, "{rel:e}");
}

#[test]
fn distance_decreases_toward_equilibrium() {
    let m = model();
    let f = m.grid.zero_mean_projected(&bump(m), Some(psi())).unwrap();
    let times = [0.0, 5.0, 10.0, 20.0];
    let curve = decay_curve(m, psi(), &f, &times, None).unwrap();
    assert!(curve.distances.windows(2).all(|w| w[1] < w[0]));
    assert!(curve.distances[3] < 1e-2 * curve.distances[0]);
    assert!(curve.masses.iter().all(|x| x.abs() < 1e-12));
}

// Synthetic fixture: 5 t^{−1/2} (1 + 0.01 ξ) with uniform noise ξ ∈ [−1, 1].
#[test]
fn fit_recovers_synthetic_exponent() {
    let times = geometric_times(10.0, 100.0, 1.1);
    let mut rng = Stream::new(2024, 0);
    let d: Vec<f64> = times.iter().map(|t| 5.0 * t.powf(-0.5) * (1.0 + 0.01 * (2.0 * rng.uniform() - 1.0))).collect();
    let fit = fit_decay_exponent(&times, &d, (10.0, 100.0), 0.0).unwrap();
    assert!((fit.alpha - 0.5).abs() < 0.02, "{fit:?}");
    assert!(fit.sigma > 0.0 && fit.sigma < 0.02);
}

#[test]
fn fit_ignores_points_below_floor() {
    let times = geometric_times(1.0, 100.0, 1.2);
    let d: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
    assert!(matches!(fit_decay_exponent(&times, &d, (10.0, 100.0), 1e-10), Err(Error::Fit(_))));
}

#[test]
fn monte_carlo_is_deterministic_and_thread_independent() {
    let m = model();
    let f = bump(m);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let mut ens = ParticleEnsemble::sample(&m.grid, &f, 5_000, 9).unwrap();
            mc_evolve(m, &mut ens, 3.0).unwrap();
            ens
        })
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.pos, b.pos);
    assert_eq!(a.vel, b.vel);
    assert_eq!(a.weight, b.weight);
    let c = {
        let mut ens = ParticleEnsemble::sample(&m.grid, &f, 5_000, 10).unwrap();
        mc_evolve(m, &mut ens, 3.0).unwrap();
        ens
    };
    assert_ne!(a.pos, c.pos);
}

#[test]
fn monte_carlo_agrees_with_marcher() {
    let m = model();
    let f = bump(m);
    let cells = CellPartition { sectors: 8, rings: 4 };
    let mut ens = ParticleEnsemble::sample(&m.grid, &f, 40_000, 7).unwrap();
    let w0 = ens.total_weight();
    let n0 = ens.len();
    mc_evolve(m, &mut ens, 10.0).unwrap();
    assert_eq!(ens.len(), n0);
    assert_eq!(ens.total_weight(), w0);
    let (h, var) = ens.histogram(&m.grid, &cells);
    let mut st = RenewalState::new(m, &f, None).unwrap();
    st.advance_to(10.0);
    let cm = st.cell_masses(&cells, 256);
    let zmax = h.iter().zip(&cm).zip(&var).map(|((a, b), v)| (a - b).abs() / v.sqrt()).fold(0.0, f64::max);
    assert!(zmax < 4.5, "{zmax}");
}

#[test]
fn rate_data_are_zero_mean() {
    let m = model();
    for k in 0..3 {
        let f = rates_initial_datum(m, psi(), k, |x| 1.0 + x[0]).unwrap();
        assert!(m.grid.mass(&f).norm() < 1e-12 * m.grid.norm_x(&f, 0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    // Cell masses stay positive; node values only up to the polynomial
    // interpolation error of the initial bump along each chord.
    #[test]
    fn nonnegative_data_stay_nonnegative(a in -0.5f64..0.5, b in -0.5f64..0.5, t in 0.5f64..6.0) {
        let m = model();
        let f = m.grid.sample(|x, _| (-6.0 * ((x[0] - a).powi(2) + (x[1] - b).powi(2))).exp());
        let mut st = RenewalState::new(m, &f, None).unwrap();
        st.advance_to(t);
        let cells = st.cell_masses(&CellPartition { sectors: 8, rings: 4 }, 64);
        prop_assert!(cells.iter().all(|x| *x > 0.0));
        let out = st.density();
        let peak = out.values.iter().map(|x| x.re).fold(0.0, f64::max);
        prop_assert!(out.values.iter().all(|x| x.re >= -1e-3 * peak));
    }

    #[test]
    fn evolution_is_linear(a in -2.0f64..2.0, t in 0.5f64..4.0) {
        let m = model();
        let f = bump(m);
        let g = psi().clone();
        let comb = PhaseDensity { values: f.values.iter().zip(&g.values).map(|(x, y)| x + y * a).collect() };
        let uf = renewal_march(m, &f, &[t], None).unwrap().pop().unwrap();
        let ug = renewal_march(m, &g, &[t], None).unwrap().pop().unwrap();
        let uc = renewal_march(m, &comb, &[t], None).unwrap().pop().unwrap();
        let lin = PhaseDensity { values: uf.values.iter().zip(&ug.values).map(|(x, y)| x + y * a).collect() };
        prop_assert!(m.grid.norm_x(&diff(&uc, &lin), 0) <= 1e-12 * m.grid.norm_x(&uc, 0).max(1.0));
    }
}
