//! Time evolution U_H(t): a boundary-flux renewal marcher on the chord grid,
//! an event-driven Monte Carlo particle simulator, distance curves, decay
//! exponent fits and Cesàro means.
//!
//! The marcher keeps the emitted node flux F_k as cell averages over the
//! steps [nΔt, (n+1)Δt]. The arrival flux on pair p over a step is the exact
//! window average of the footprint emission Σ_k e_pk F_k delayed by τ_p plus
//! the free-flight layer of f₀, integrated exactly from its Legendre
//! antiderivative. The discrete mass is then conserved to rounding.

use crate::error::{Error, Result};
use crate::geometry::{axpy, Vec3};
use crate::linalg::c;
use crate::phase_grid::{PhaseDensity, PhaseGrid, C64};
use crate::quadrature::{legendre_series, GaussRule};
use crate::resolvent_steady::resolvent_th;
use crate::rng::Stream;
use crate::transfer_operator::Model;
use rayon::prelude::*;

/// Ratio between consecutive sample times of a decay curve.
pub const LADDER_RATIO: f64 = 1.25;

/// Fit points closer than this factor to the floor are dropped.
pub const FLOOR_FACTOR: f64 = 3.0;

/// Minimum number of points in a fit window.
pub const MIN_FIT_POINTS: usize = 8;

/// Smallest chord time over non-grazing Γ₊ pairs.
pub fn min_chord_time(grid: &PhaseGrid) -> f64 {
    grid.plus.iter().filter(|pp| !pp.grazing).map(|pp| pp.tau).fold(f64::INFINITY, f64::min)
}

/// Default step: a quarter of the shortest non-grazing chord time.
pub fn default_dt(grid: &PhaseGrid) -> f64 {
    0.25 * min_chord_time(grid)
}

/// State of the renewal marcher.
#[derive(Debug, Clone)]
pub struct RenewalState<'m> {
    model: &'m Model,
    pub dt: f64,
    /// chord times used by the marcher, max(τ_p, Δt)
    tau: Vec<f64>,
    /// delay τ_p/Δt split as D + r
    delay: Vec<(usize, f64)>,
    f0: Vec<f64>,
    /// antiderivative coefficients of f₀ along each chord in ξ
    anti: Vec<Vec<f64>>,
    /// emitted node flux per completed step, row-major (step, node)
    flux: Vec<f64>,
    /// ∫₀^{jΔt} F_k, row-major (j, node), j = 0..=steps
    cum: Vec<f64>,
    steps: usize,
}

impl<'m> RenewalState<'m> {
    /// Starts the marcher from the real part of `f0`; `dt = None` picks
    /// [`default_dt`].
    pub fn new(model: &'m Model, f0: &PhaseDensity, dt: Option<f64>) -> Result<Self> {
        let grid = &model.grid;
        let limit = default_dt(grid);
        let dt = dt.unwrap_or(limit);
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
            return Err(Error::Stability(format!(
                "time step {dt:e} exceeds a quarter of the shortest chord time ({limit:e})"
            )));
        }
        let nc = grid.nc();
        if f0.values.len() != grid.n_phase() {
            return Err(Error::domain("initial density does not match the phase grid"));
        }
        let f0: Vec<f64> = f0.values.iter().map(|z| z.re).collect();
        let tau: Vec<f64> = grid.plus.iter().map(|pp| pp.tau.max(dt)).collect();
        let delay = tau
            .iter()
            .map(|&t| {
                let x = t / dt;
                let d = x.floor();
                (d as usize, x - d)
            })
            .collect();
        let anti = (0..grid.n_plus()).map(|p| grid.chord_anti.coefficients(&f0[p * nc..(p + 1) * nc])).collect();
        let nb = model.nb();
        Ok(RenewalState { model, dt, tau, delay, f0, anti, flux: Vec::new(), cum: vec![0.0; nb], steps: 0 })
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn nb(&self) -> usize {
        self.model.nb()
    }

    fn cell_flux(&self, j: isize, k: usize) -> f64 {
        if j < 0 || j as usize >= self.steps {
            0.0
        } else {
            self.flux[j as usize * self.nb() + k]
        }
    }

    /// ∫_a^b f₀ along chord p in backward time (clipped to the chord).
    fn free_integral(&self, p: usize, a: f64, b: f64) -> f64 {
        let tau = self.tau[p];
        let a = a.clamp(0.0, tau);
        let b = b.clamp(0.0, tau);
        if b <= a {
            return 0.0;
        }
        let xa = 2.0 * a / tau - 1.0;
        let xb = 2.0 * b / tau - 1.0;
        0.5 * tau * (legendre_series(&self.anti[p], xb) - legendre_series(&self.anti[p], xa))
    }

    /// f₀ on chord p at backward time s.
    fn free_value(&self, p: usize, s: f64) -> f64 {
        let nc = self.model.grid.nc();
        let xi = (2.0 * s / self.tau[p] - 1.0).clamp(-1.0, 1.0);
        let basis = self.model.grid.chord_bary.basis(xi);
        basis.iter().zip(&self.f0[p * nc..(p + 1) * nc]).map(|(a, b)| a * b).sum()
    }

    /// ∫₀^x F_k for x ∈ [0, time()].
    fn node_integral(&self, k: usize, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let nb = self.nb();
        let j = ((x / self.dt).floor() as usize).min(self.steps);
        let base = self.cum[j * nb + k];
        if j == self.steps {
            base
        } else {
            base + self.flux[j * nb + k] * (x - j as f64 * self.dt)
        }
    }

    /// Emitted flux at the footpoint of pair p at time t′, linear between
    /// step midpoints.
    fn emission_value(&self, p: usize, t: f64) -> f64 {
        if t < 0.0 || self.steps == 0 {
            return 0.0;
        }
        let u = t / self.dt - 0.5;
        let (j0, w1) = if u <= 0.0 {
            (0isize, 0.0)
        } else if u >= (self.steps - 1) as f64 {
            ((self.steps - 1) as isize, 0.0)
        } else {
            let f = u.floor();
            (f as isize, u - f)
        };
        self.model.emit[p]
            .iter()
            .map(|&(k, e)| e * ((1.0 - w1) * self.cell_flux(j0, k) + w1 * self.cell_flux(j0 + 1, k)))
            .sum()
    }

    /// Arrival flux on every Γ₊ pair averaged over the next step.
    fn arrivals(&self) -> Vec<f64> {
        let n = self.steps as isize;
        let t0 = self.time();
        let t1 = t0 + self.dt;
        (0..self.model.grid.n_plus())
            .into_par_iter()
            .with_min_len(256)
            .map(|p| {
                let (d, r) = self.delay[p];
                let j = n - d as isize;
                let emitted: f64 = self.model.emit[p]
                    .iter()
                    .map(|&(k, e)| e * (r * self.cell_flux(j - 1, k) + (1.0 - r) * self.cell_flux(j, k)))
                    .sum();
                let free = if t0 < self.tau[p] { self.free_integral(p, t0, t1) / self.dt } else { 0.0 };
                emitted + free
            })
            .collect()
    }

    /// Advances one step.
    pub fn step(&mut self) {
        let phi = self.arrivals();
        let grid = &self.model.grid;
        let nb = self.nb();
        let row: Vec<f64> = (0..nb)
            .map(|k| {
                let s: f64 = grid.plus_by_node[k].clone().map(|p| grid.plus[p].mu * phi[p]).sum();
                s / grid.nodes[k].weight
            })
            .collect();
        let base = self.steps * nb;
        for k in 0..nb {
            let next = self.cum[base + k] + self.dt * row[k];
            self.cum.push(next);
        }
        self.flux.extend_from_slice(&row);
        self.steps += 1;
    }

    /// Steps until time() ≥ t (to within rounding).
    pub fn advance_to(&mut self, t: f64) {
        while self.time() < t - 1e-9 * self.dt {
            self.step();
        }
    }

    /// Total mass from the exact chord integrals of the marcher's representation.
    pub fn mass(&self) -> f64 {
        let t = self.time();
        let grid = &self.model.grid;
        (0..grid.n_plus())
            .map(|p| {
                let tau = self.tau[p];
                let free = self.free_integral(p, t, tau);
                let flight: f64 = self.model.emit[p]
                    .iter()
                    .map(|&(k, e)| e * (self.node_integral(k, t) - self.node_integral(k, t - tau)))
                    .sum();
                grid.plus[p].mu * (free + flight)
            })
            .sum()
    }

    /// Density on chord p at backward time s from the exit point.
    pub fn chord_value(&self, p: usize, s: f64) -> f64 {
        let t = self.time();
        let tau = self.tau[p];
        if s + t < tau {
            self.free_value(p, s + t)
        } else {
            self.emission_value(p, t - (tau - s))
        }
    }

    fn node_time(&self, p: usize, m: usize) -> f64 {
        0.5 * self.tau[p] * (1.0 + self.model.grid.chord.nodes[m])
    }

    /// U_H(t) f₀ at the phase nodes.
    pub fn density(&self) -> PhaseDensity {
        let grid = &self.model.grid;
        let nc = grid.nc();
        let values: Vec<Vec<C64>> = (0..grid.n_plus())
            .into_par_iter()
            .with_min_len(64)
            .map(|p| (0..nc).map(|m| c(self.chord_value(p, self.node_time(p, m)))).collect())
            .collect();
        PhaseDensity { values: values.concat() }
    }

    /// ∫₀^T e^{−λt} U_H(t) f₀ dt at the phase nodes, T = time(); λ = 0 gives
    /// the plain time integral.
    pub fn time_integral(&self, lambda: f64) -> PhaseDensity {
        let grid = &self.model.grid;
        let nc = grid.nc();
        let nb = self.nb();
        let big_t = self.time();
        let dt = self.dt;
        // ∫ over a cell starting at a of e^{−λt}
        let cell_weight = |a: f64, len: f64| -> f64 {
            if lambda == 0.0 {
                len
            } else {
                (-lambda * a).exp() * (-(-lambda * len).exp_m1()) / lambda
            }
        };
        let mut cum = vec![0.0; (self.steps + 1) * nb];
        for j in 0..self.steps {
            let w = cell_weight(j as f64 * dt, dt);
            for k in 0..nb {
                cum[(j + 1) * nb + k] = cum[j * nb + k] + w * self.flux[j * nb + k];
            }
        }
        let weighted = |k: usize, x: f64| -> f64 {
            if x <= 0.0 {
                return 0.0;
            }
            let j = ((x / dt).floor() as usize).min(self.steps);
            let base = cum[j * nb + k];
            if j == self.steps {
                base
            } else {
                base + self.flux[j * nb + k] * cell_weight(j as f64 * dt, x - j as f64 * dt)
            }
        };
        let rule = GaussRule::new(2 * nc);
        let values: Vec<Vec<C64>> = (0..grid.n_plus())
            .into_par_iter()
            .with_min_len(64)
            .map(|p| {
                let tau = self.tau[p];
                (0..nc)
                    .map(|m| {
                        let s = self.node_time(p, m);
                        let a = tau - s;
                        let free = if lambda == 0.0 {
                            self.free_integral(p, s, s + big_t.min(a))
                        } else {
                            rule.integrate(0.0, big_t.min(a), |t| (-lambda * t).exp() * self.free_value(p, s + t))
                        };
                        let emitted = if big_t > a {
                            let x = big_t - a;
                            let damp = (-lambda * a).exp();
                            damp * self.model.emit[p].iter().map(|&(k, e)| e * weighted(k, x)).sum::<f64>()
                        } else {
                            0.0
                        };
                        c(free + emitted)
                    })
                    .collect()
            })
            .collect();
        PhaseDensity { values: values.concat() }
    }

    /// Mass of ∫₀^T U_H(t) f₀ dt from the chord representation, trapezoidal
    /// in time over the step ends where the marcher's mass is defined.
    pub fn time_integral_mass(&self) -> f64 {
        let grid = &self.model.grid;
        let nb = self.nb();
        let n_end = self.steps;
        // prefix[j] = Σ_{i<j} cum[i], per node
        let mut prefix = vec![0.0; (n_end + 2) * nb];
        for j in 0..=n_end {
            for k in 0..nb {
                prefix[(j + 1) * nb + k] = prefix[j * nb + k] + self.cum[j * nb + k];
            }
        }
        // trapezoid over n = 0..=N of ∫₀^{(n − shift)Δt} F_k
        let shifted = |k: usize, shift: usize| -> f64 {
            if shift > n_end {
                return 0.0;
            }
            let last = n_end - shift;
            let head = if shift == 0 { self.cum[k] } else { 0.0 };
            self.dt * (prefix[(last + 1) * nb + k] - 0.5 * head - 0.5 * self.cum[last * nb + k])
        };
        (0..grid.n_plus())
            .map(|p| {
                let tau = self.tau[p];
                let mut free = 0.0;
                let mut prev = self.free_integral(p, 0.0, tau);
                let mut n = 0;
                while n < n_end && prev != 0.0 {
                    let next = self.free_integral(p, (n + 1) as f64 * self.dt, tau);
                    free += 0.5 * self.dt * (prev + next);
                    prev = next;
                    n += 1;
                }
                let (d, r) = self.delay[p];
                let flight: f64 = self.model.emit[p]
                    .iter()
                    .map(|&(k, e)| e * (shifted(k, 0) - r * shifted(k, d + 1) - (1.0 - r) * shifted(k, d)))
                    .sum();
                grid.plus[p].mu * (free + flight)
            })
            .sum()
    }
}

/// Marches f₀ and returns U_H(t) f₀ at each requested time (ascending).
pub fn renewal_march(model: &Model, f0: &PhaseDensity, times: &[f64], dt: Option<f64>) -> Result<Vec<PhaseDensity>> {
    check_increasing(times)?;
    let mut st = RenewalState::new(model, f0, dt)?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        st.advance_to(t);
        out.push(st.density());
    }
    Ok(out)
}

fn check_increasing(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("sample times must be nonnegative and strictly increasing"));
    }
    Ok(())
}

/// d = ‖f − ϱ Ψ‖_{X₀} for a mass-one Ψ.
pub fn distance_to_equilibrium(grid: &PhaseGrid, f: &PhaseDensity, rho: f64, psi: &PhaseDensity) -> f64 {
    let diff = PhaseDensity { values: f.values.iter().zip(&psi.values).map(|(a, b)| a - b * rho).collect() };
    grid.norm_x(&diff, 0)
}

/// Geometric ladder t0, t0 r, t0 r², … up to and including t1.
pub fn geometric_times(t0: f64, t1: f64, ratio: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = t0;
    while t < t1 * (1.0 - 1e-12) {
        out.push(t);
        t *= ratio;
    }
    out.push(t1);
    out
}

#[derive(Debug, Clone)]
pub struct DecayFit {
    pub alpha: f64,
    /// standard error of the slope
    pub sigma: f64,
    /// root-mean-square residual of log d
    pub residual: f64,
    pub n_points: usize,
    pub window: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct DecayCurve {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub masses: Vec<f64>,
    /// distance level attributable to discretization
    pub floor: f64,
    pub fit: Option<DecayFit>,
}

/// Samples d(t) = ‖U_H(t) f₀ − ϱΨ‖ on `times` and estimates the floor from
/// the drift of Ψ under the same marcher.
pub fn decay_curve(model: &Model, psi: &PhaseDensity, f0: &PhaseDensity, times: &[f64], dt: Option<f64>) -> Result<DecayCurve> {
    check_increasing(times)?;
    let grid = &model.grid;
    let rho = grid.mass(f0).re;
    let mut st = RenewalState::new(model, f0, dt)?;
    let mut distances = Vec::with_capacity(times.len());
    let mut masses = Vec::with_capacity(times.len());
    for &t in times {
        st.advance_to(t);
        distances.push(distance_to_equilibrium(grid, &st.density(), rho, psi));
        masses.push(st.mass());
    }
    let t_end = *times.last().unwrap_or(&0.0);
    let mut sp = RenewalState::new(model, psi, Some(st.dt))?;
    sp.advance_to(t_end);
    let drift = distance_to_equilibrium(grid, &sp.density(), 1.0, psi);
    let scale = grid.norm_x(f0, 0);
    let floor = (drift + 1e-14) * scale;
    Ok(DecayCurve { times: times.to_vec(), distances, masses, floor, fit: None })
}

/// Least-squares slope of log d against log t on the window, excluding
/// points within [`FLOOR_FACTOR`] of the floor; α = −slope.
pub fn fit_decay_exponent(times: &[f64], distances: &[f64], window: (f64, f64), floor: f64) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(distances)
        .filter(|(t, d)| **t >= window.0 && **t <= window.1 && **d > FLOOR_FACTOR * floor && **d > 0.0)
        .map(|(t, d)| (t.ln(), d.ln()))
        .collect();
    let n = pts.len();
    if n < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "{n} usable points in window [{}, {}] (need {MIN_FIT_POINTS} above the floor)",
            window.0, window.1
        )));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let sigma = (ssr / (nf - 2.0) / sxx).sqrt();
    Ok(DecayFit { alpha: -slope, sigma, residual: (ssr / nf).sqrt(), n_points: n, window })
}

impl DecayCurve {
    pub fn fit(&mut self, window: (f64, f64)) -> Result<&DecayFit> {
        let fit = fit_decay_exponent(&self.times, &self.distances, window, self.floor)?;
        self.fit = Some(fit);
        Ok(self.fit.as_ref().unwrap())
    }
}

/// (1/T) ∫₀ᵀ U_H(s) f₀ ds.
pub fn cesaro_average(model: &Model, f0: &PhaseDensity, big_t: f64, dt: Option<f64>) -> Result<PhaseDensity> {
    if !(big_t > 0.0) {
        return Err(Error::domain("averaging horizon must be positive"));
    }
    let mut st = RenewalState::new(model, f0, dt)?;
    st.advance_to(big_t);
    let mut avg = st.time_integral(0.0);
    let inv = 1.0 / st.time();
    for v in &mut avg.values {
        *v *= inv;
    }
    Ok(avg)
}

/// ∫₀ᵀ e^{−λt} U_H(t) f₀ dt.
pub fn laplace_transform(model: &Model, f0: &PhaseDensity, lambda: f64, big_t: f64, dt: Option<f64>) -> Result<PhaseDensity> {
    if !(lambda > 0.0) {
        return Err(Error::domain("Laplace variable must be positive"));
    }
    let mut st = RenewalState::new(model, f0, dt)?;
    st.advance_to(big_t);
    Ok(st.time_integral(lambda))
}

/// Smooth velocity profile vanishing like (|v| − c)^{k+3/2} at the lower cutoff.
pub fn speed_profile(rho: f64, c_low: f64, k: u32) -> f64 {
    if rho <= c_low {
        0.0
    } else {
        (rho - c_low).powf(k as f64 + 1.5) * (-0.5 * rho * rho).exp()
    }
}

/// Initial datum for rate experiments: g(x) χ_k(|v|), projected to zero
/// mean and smoothed once by λR(λ, T_H) with λ = 10.
pub fn rates_initial_datum(model: &Model, psi: &PhaseDensity, k: u32, g: impl Fn(&Vec3) -> f64) -> Result<PhaseDensity> {
    let grid = &model.grid;
    let c_low = grid.measure.c;
    let f = grid.sample(|x, v| {
        let rho = (v[0] * v[0] + v[1] * v[1]).sqrt();
        g(x) * speed_profile(rho, c_low, k)
    });
    let f = grid.zero_mean_projected(&f, Some(psi))?;
    let lambda = 10.0;
    let mut r = resolvent_th(model, c(lambda), &f)?;
    for v in &mut r.values {
        *v = c(v.re * lambda);
    }
    grid.zero_mean_projected(&r, Some(psi))
}

/// Partition of a planar domain into rings (equal area in the scaled
/// coordinate) and angular sectors.
#[derive(Debug, Clone, Copy)]
pub struct CellPartition {
    pub sectors: usize,
    pub rings: usize,
}

impl CellPartition {
    pub fn len(&self) -> usize {
        self.sectors * self.rings
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_of(&self, grid: &PhaseGrid, x: &Vec3) -> usize {
        let semi = grid.domain.semi_axes();
        let u = x[0] / semi[0];
        let w = x[1] / semi[1];
        let r2 = (u * u + w * w).min(1.0 - 1e-15);
        let ring = ((r2 * self.rings as f64) as usize).min(self.rings - 1);
        let ang = w.atan2(u).rem_euclid(2.0 * std::f64::consts::PI);
        let sector = ((ang / (2.0 * std::f64::consts::PI) * self.sectors as f64) as usize).min(self.sectors - 1);
        ring * self.sectors + sector
    }
}

impl RenewalState<'_> {
    /// Mass of the current density in every cell, from `samples` midpoint
    /// evaluations per chord.
    pub fn cell_masses(&self, cells: &CellPartition, samples: usize) -> Vec<f64> {
        let grid = &self.model.grid;
        let parts: Vec<Vec<f64>> = (0..grid.n_plus())
            .into_par_iter()
            .with_min_len(64)
            .map(|p| {
                let pp = &grid.plus[p];
                let tau = self.tau[p];
                let h = tau / samples as f64;
                let mut acc = vec![0.0; cells.len()];
                for i in 0..samples {
                    let s = (i as f64 + 0.5) * h;
                    let x = axpy(&grid.nodes[pp.node].x, -s * pp.speed, &pp.dir);
                    acc[cells.cell_of(grid, &x)] += pp.mu * h * self.chord_value(p, s);
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; cells.len()];
        for a in parts {
            for (o, v) in out.iter_mut().zip(a) {
                *o += v;
            }
        }
        out
    }
}

/// Particles with signed weights and one random stream each.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub pos: Vec<Vec3>,
    pub vel: Vec<Vec3>,
    pub weight: Vec<f64>,
    pub streams: Vec<Stream>,
    pub time: f64,
}

impl ParticleEnsemble {
    /// Draws `n` particles from the phase-node representation of f: node
    /// (p, m) is picked with probability ∝ |f| × node weight; weights carry
    /// the sign and total |f| mass.
    pub fn sample(grid: &PhaseGrid, f: &PhaseDensity, n: usize, seed: u64) -> Result<Self> {
        let nc = grid.nc();
        let mut cdf = Vec::with_capacity(grid.n_phase());
        let mut total = 0.0;
        for p in 0..grid.n_plus() {
            for m in 0..nc {
                total += grid.phase_weight(p, m) * f.values[p * nc + m].re.abs();
                cdf.push(total);
            }
        }
        if !(total > 0.0) || n == 0 {
            return Err(Error::domain("cannot sample particles from a zero density"));
        }
        let w = total / n as f64;
        let items: Vec<(Vec3, Vec3, f64, Stream)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = Stream::new(seed, i as u64);
                let u = rng.uniform() * total;
                let idx = cdf.partition_point(|&x| x <= u).min(cdf.len() - 1);
                let (p, m) = (idx / nc, idx % nc);
                let sign = if f.values[idx].re < 0.0 { -1.0 } else { 1.0 };
                (grid.phase_point(p, m), grid.phase_velocity(p), sign * w, rng)
            })
            .collect();
        let mut ens = ParticleEnsemble { pos: vec![], vel: vec![], weight: vec![], streams: vec![], time: 0.0 };
        for (x, v, w, s) in items {
            ens.pos.push(x);
            ens.vel.push(v);
            ens.weight.push(w);
            ens.streams.push(s);
        }
        Ok(ens)
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weight.iter().sum()
    }

    /// Weighted counts per cell and the per-cell variance estimate of the sum.
    pub fn histogram(&self, grid: &PhaseGrid, cells: &CellPartition) -> (Vec<f64>, Vec<f64>) {
        let n = self.len() as f64;
        let mut sum = vec![0.0; cells.len()];
        let mut sq = vec![0.0; cells.len()];
        for (x, w) in self.pos.iter().zip(&self.weight) {
            let i = cells.cell_of(grid, x);
            sum[i] += w;
            sq[i] += w * w;
        }
        let var = sum.iter().zip(&sq).map(|(s, q)| (q - s * s / n).max(0.0)).collect();
        (sum, var)
    }
}

/// Advances every particle to time `t_end` by exact free flight and
/// diffuse re-emission at each wall hit.
pub fn mc_evolve(model: &Model, ens: &mut ParticleEnsemble, t_end: f64) -> Result<()> {
    if t_end < ens.time {
        return Err(Error::domain("cannot evolve backwards in time"));
    }
    let domain = &model.grid.domain;
    let kernel = &model.kernel;
    let t0 = ens.time;
    ens.pos
        .par_iter_mut()
        .zip(ens.vel.par_iter_mut())
        .zip(ens.streams.par_iter_mut())
        .try_for_each(|((x, v), rng)| -> Result<()> {
            let mut t = t0;
            loop {
                let te = domain.forward_root(x, v);
                if t + te >= t_end {
                    *x = axpy(x, t_end - t, v);
                    return Ok(());
                }
                t += te;
                let y = domain.snap(&axpy(x, te, v));
                let bp = domain.boundary_chart([domain.chart_param(&y), 0.0]);
                *v = kernel.sample_reemission(&bp, v, rng)?;
                *x = bp.x;
            }
        })?;
    ens.time = t_end;
    Ok(())
}
