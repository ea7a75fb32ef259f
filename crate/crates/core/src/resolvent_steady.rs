//! Lifting, trace and resolvent operators on the chord grid, the invariant
//! density, and boundary functions on the imaginary axis.
//!
//! On the chord of Γ₊ pair p a phase node m sits at backward time
//! s_m = τ_p(1 + ξ_m)/2 from the exit point; ξ = 1 is the footpoint on Γ₋.

use crate::error::{Error, Result};
use crate::linalg::c;
use crate::phase_grid::{FluxFoot, FluxPlus, PhaseDensity, PhaseGrid, C64};
use crate::quadrature::GaussRule;
use crate::transfer_operator::{
    leading_eigenpair, nu_prime_zero, projection_derivative_zero, resolvent_one_apply, spectral_projection, Model,
    SolveMethod,
};
use rayon::prelude::*;

/// ε values of the ladder approaching the imaginary axis.
pub const EPS_LADDER: [f64; 4] = [0.04, 0.02, 0.01, 0.005];

/// The Gauss rule is doubled on chords where |Im λ| τ exceeds this.
pub const OSCILLATION_LIMIT: f64 = 8.0;

/// Relative mass below which a density counts as zero-mean.
pub const ZERO_MEAN_TOL: f64 = 1e-9;

struct SubNode {
    weight: f64,
    /// ξ′ − ξ_m (tail rule) or ξ′ + 1 (full rule)
    offset: f64,
    basis: Vec<f64>,
}

/// Quadrature on sub-intervals of the reference chord.
struct ChordRule {
    /// rules on [ξ_m, 1] for every chord node m
    tail: Vec<Vec<SubNode>>,
    /// rule on [−1, 1]
    full: Vec<SubNode>,
}

impl ChordRule {
    fn new(grid: &PhaseGrid, q: usize) -> Self {
        let rule = GaussRule::new(q);
        let bary = &grid.chord_bary;
        let tail = grid
            .chord
            .nodes
            .iter()
            .map(|&xm| {
                let (nodes, weights) = rule.on_interval(xm, 1.0);
                nodes
                    .iter()
                    .zip(&weights)
                    .map(|(&x, &w)| SubNode { weight: w, offset: x - xm, basis: bary.basis(x) })
                    .collect()
            })
            .collect();
        let full = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&x, &w)| SubNode { weight: w, offset: x + 1.0, basis: bary.basis(x) })
            .collect();
        ChordRule { tail, full }
    }
}

struct ChordRules {
    base: ChordRule,
    doubled: ChordRule,
}

impl ChordRules {
    fn new(grid: &PhaseGrid) -> Self {
        let q = grid.nc();
        ChordRules { base: ChordRule::new(grid, q), doubled: ChordRule::new(grid, 2 * q) }
    }

    fn pick(&self, lambda: C64, tau: f64) -> &ChordRule {
        if lambda.im.abs() * tau > OSCILLATION_LIMIT {
            &self.doubled
        } else {
            &self.base
        }
    }
}

fn dot_basis(basis: &[f64], vals: &[C64]) -> C64 {
    basis.iter().zip(vals).map(|(b, v)| v * *b).sum()
}

fn check_half_plane(lambda: C64) -> Result<()> {
    if lambda.re < 0.0 {
        return Err(Error::domain(format!("Re λ must be ≥ 0, got {lambda}")));
    }
    Ok(())
}

fn check_x1(grid: &PhaseGrid, f: &PhaseDensity, lambda: C64) -> Result<()> {
    if lambda.re == 0.0 && !grid.norm_x(f, 1).is_finite() {
        return Err(Error::Precondition("on the imaginary axis f must lie in X₁".into()));
    }
    Ok(())
}

/// Ξ_λ u for a Γ₋ density given at the chord footpoints.
pub fn lift_xi(model: &Model, lambda: C64, u: &FluxFoot) -> Result<PhaseDensity> {
    check_half_plane(lambda)?;
    let grid = &model.grid;
    let nc = grid.nc();
    let mut values = Vec::with_capacity(grid.n_phase());
    for (p, pp) in grid.plus.iter().enumerate() {
        for m in 0..nc {
            let back = 0.5 * pp.tau * (1.0 - grid.chord.nodes[m]);
            values.push(u.values[p] * (-lambda * back).exp());
        }
    }
    Ok(PhaseDensity { values })
}

/// d^k/dλ^k G_λ f = ∫₀^{τ₋} (−s)^k f(x − s v) e^{−λ s} ds.
pub fn trace_g_derivative(model: &Model, lambda: C64, f: &PhaseDensity, k: u32) -> Result<FluxPlus> {
    check_half_plane(lambda)?;
    check_x1(&model.grid, f, lambda)?;
    let grid = &model.grid;
    let nc = grid.nc();
    let rules = ChordRules::new(grid);
    let values = grid
        .plus
        .par_iter()
        .enumerate()
        .map(|(p, pp)| {
            let rule = rules.pick(lambda, pp.tau);
            let vals = &f.values[p * nc..(p + 1) * nc];
            let h = 0.5 * pp.tau;
            rule.full
                .iter()
                .map(|sn| {
                    let s = h * sn.offset;
                    dot_basis(&sn.basis, vals) * (-lambda * s).exp() * (sn.weight * h * (-s).powi(k as i32))
                })
                .sum()
        })
        .collect();
    Ok(FluxPlus { values })
}

/// G_λ f(x, v) = ∫₀^{τ₋} f(x − s v) e^{−λ s} ds on Γ₊.
pub fn trace_g(model: &Model, lambda: C64, f: &PhaseDensity) -> Result<FluxPlus> {
    trace_g_derivative(model, lambda, f, 0)
}

/// d^k/dλ^k R_λ f = ∫₀^{t₋} (−s)^k f(x − s v) e^{−λ s} ds.
pub fn resolvent_t0_derivative(model: &Model, lambda: C64, f: &PhaseDensity, k: u32) -> Result<PhaseDensity> {
    check_half_plane(lambda)?;
    check_x1(&model.grid, f, lambda)?;
    let grid = &model.grid;
    let nc = grid.nc();
    let rules = ChordRules::new(grid);
    let chunks: Vec<Vec<C64>> = grid
        .plus
        .par_iter()
        .enumerate()
        .map(|(p, pp)| {
            let rule = rules.pick(lambda, pp.tau);
            let vals = &f.values[p * nc..(p + 1) * nc];
            let h = 0.5 * pp.tau;
            (0..nc)
                .map(|m| {
                    rule.tail[m]
                        .iter()
                        .map(|sn| {
                            let s = h * sn.offset;
                            dot_basis(&sn.basis, vals) * (-lambda * s).exp() * (sn.weight * h * (-s).powi(k as i32))
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(PhaseDensity { values: chunks.concat() })
}

/// R_λ f = R(λ, T₀) f, the free-streaming resolvent with absorbing walls.
pub fn resolvent_t0(model: &Model, lambda: C64, f: &PhaseDensity) -> Result<PhaseDensity> {
    resolvent_t0_derivative(model, lambda, f, 0)
}

fn extrapolate(model: &Model, g: &PhaseDensity, xi: f64) -> Vec<C64> {
    let grid = &model.grid;
    let nc = grid.nc();
    let basis = grid.chord_bary.basis(xi);
    (0..grid.n_plus()).map(|p| dot_basis(&basis, &g.values[p * nc..(p + 1) * nc])).collect()
}

/// Trace on Γ₋ (chord footpoints) of a phase density.
pub fn trace_minus(model: &Model, g: &PhaseDensity) -> FluxFoot {
    FluxFoot { values: extrapolate(model, g, 1.0) }
}

/// Trace on Γ₊ of a phase density.
pub fn trace_plus(model: &Model, g: &PhaseDensity) -> FluxPlus {
    FluxPlus { values: extrapolate(model, g, -1.0) }
}

/// Hx at the chord footpoints for an outgoing flux x.
pub fn emission(model: &Model, x: &[C64]) -> FluxFoot {
    let ones = vec![c(1.0); model.grid.n_plus()];
    FluxFoot { values: model.emit_damped(&ones, &model.node_flux(x)) }
}

#[derive(Debug, Clone)]
pub struct InvariantDensity {
    pub psi: PhaseDensity,
    /// the outgoing flux φ̄ with M₀Hφ̄ = φ̄ and ∫ φ̄ dμ₊ = 1
    pub phi_bar: Vec<C64>,
}

/// Ψ_H = Ξ₀Hφ̄, normalized to unit X₀ norm.
pub fn invariant_density(model: &Model) -> Result<InvariantDensity> {
    let sp = leading_eigenpair(model, c(0.0))?;
    let u = emission(model, &sp.phi);
    let mut psi = lift_xi(model, c(0.0), &u)?;
    let n = model.grid.norm_x(&psi, 0);
    for v in &mut psi.values {
        *v = c(v.re / n);
    }
    Ok(InvariantDensity { psi, phi_bar: sp.phi })
}

/// R(λ, T_H) f = R_λ f + Ξ_λ H R(1, M_λH) G_λ f for λ ≠ 0.
pub fn resolvent_th(model: &Model, lambda: C64, f: &PhaseDensity) -> Result<PhaseDensity> {
    if lambda == c(0.0) {
        return Err(Error::Singular("λ = 0 is an eigenvalue of T_H; use the boundary function".into()));
    }
    let g = trace_g(model, lambda, f)?;
    let x = resolvent_one_apply(model, lambda, &g.values, SolveMethod::Direct)?;
    let lifted = lift_xi(model, lambda, &emission(model, &x))?;
    let r0 = resolvent_t0(model, lambda, f)?;
    Ok(add(&r0, &lifted))
}

fn add(a: &PhaseDensity, b: &PhaseDensity) -> PhaseDensity {
    PhaseDensity { values: a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect() }
}

fn sub(a: &PhaseDensity, b: &PhaseDensity) -> PhaseDensity {
    PhaseDensity { values: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect() }
}

/// Residual of (λ − T_H) g = f along characteristics, relative to ‖f‖_{X₀}.
///
/// Interior: λg − ∂_s g − f at the chord nodes (spectral differentiation).
/// Boundary: g at the footpoints minus H applied to the exit trace of g.
pub fn generator_residual(model: &Model, lambda: C64, f: &PhaseDensity, g: &PhaseDensity) -> f64 {
    let grid = &model.grid;
    let nc = grid.nc();
    let d = grid.chord_bary.derivative_matrix();
    let mut res = grid.zeros_phase();
    for (p, pp) in grid.plus.iter().enumerate() {
        let vals = &g.values[p * nc..(p + 1) * nc];
        for m in 0..nc {
            let ds: C64 = d[m].iter().zip(vals).map(|(a, b)| b * *a).sum::<C64>() * (2.0 / pp.tau);
            res.values[p * nc + m] = lambda * vals[m] - ds - f.values[p * nc + m];
        }
    }
    let interior = grid.norm_x(&res, 0);
    let foot = trace_minus(model, g);
    let exit = trace_plus(model, g);
    let emitted = emission(model, &exit.values);
    let diff: Vec<C64> = foot.values.iter().zip(&emitted.values).map(|(a, b)| a - b).collect();
    let boundary = model.l1(&diff);
    let scale = grid.norm_x(f, 0).max(f64::MIN_POSITIVE);
    interior / scale + boundary / model.l1(&foot.values).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMethod {
    /// η ≠ 0: the resolvent formula directly at λ = iη
    Direct,
    /// η = 0: the zero-mean spectral formula
    Spectral,
    /// first-order Richardson extrapolation of the ε-ladder
    Extrapolated,
}

#[derive(Debug, Clone)]
pub struct BoundaryFunctionResult {
    pub eta: f64,
    pub value: PhaseDensity,
    pub method: BoundaryMethod,
    pub ladder_eps: Vec<f64>,
    /// ‖R(ε + iη, T_H) f‖_{X₀} along the ladder
    pub ladder_norms: Vec<f64>,
    /// ‖R(ε_{j+1}) f − R(ε_j) f‖_{X₀}
    pub increments: Vec<f64>,
    /// value at the smallest ε
    pub ladder_last: PhaseDensity,
    /// 2 R(ε_last) − R(ε_prev)
    pub extrapolated: PhaseDensity,
}

impl BoundaryFunctionResult {
    /// Ratios of consecutive Cauchy increments.
    pub fn shrink_factors(&self) -> Vec<f64> {
        self.increments.windows(2).map(|w| w[0] / w[1]).collect()
    }
}

fn ladder(model: &Model, f: &PhaseDensity, eta: f64) -> Result<Vec<PhaseDensity>> {
    EPS_LADDER
        .par_iter()
        .map(|&eps| resolvent_th(model, C64::new(eps, eta), f))
        .collect()
}

/// ε ‖R(ε, T_H) f‖_{X₀} along the ladder (tends to |ϱ_f| ‖Ψ_H‖).
pub fn pole_residue_ladder(model: &Model, f: &PhaseDensity) -> Result<Vec<(f64, f64)>> {
    let vals = ladder(model, f, 0.0)?;
    Ok(EPS_LADDER.iter().zip(&vals).map(|(&e, v)| (e, e * model.grid.norm_x(v, 0))).collect())
}

fn is_zero_mean(grid: &PhaseGrid, f: &PhaseDensity) -> bool {
    grid.mass(f).norm() <= ZERO_MEAN_TOL * grid.norm_x(f, 0)
}

/// The boundary function value without ladder diagnostics.
pub fn boundary_function_value(model: &Model, f: &PhaseDensity, eta: f64) -> Result<PhaseDensity> {
    let grid = &model.grid;
    check_x1(grid, f, C64::new(0.0, eta))?;
    if eta != 0.0 {
        return resolvent_th(model, C64::new(0.0, eta), f);
    }
    if !is_zero_mean(grid, f) {
        return Err(divergence(model, f));
    }
    spectral_zero(model, f)
}

fn divergence(model: &Model, f: &PhaseDensity) -> Error {
    match pole_residue_ladder(model, f) {
        Ok(ladder) => Error::Divergence {
            message: format!("η = 0 with ϱ_f = {} ≠ 0: R(ε, T_H) f grows like ϱ_f/ε", model.grid.mass(f)),
            scaled: ladder.into_iter().map(|(_, s)| s).collect(),
        },
        Err(e) => e,
    }
}

/// R₀f + Ξ₀H[R(1, M₀H(I − P(0)))G₀f − (P′(0)G₀f + P(0)G₀′f)/ν′(0)].
fn spectral_zero(model: &Model, f: &PhaseDensity) -> Result<PhaseDensity> {
    let zero = c(0.0);
    let g0 = trace_g(model, zero, f)?;
    let g0p = trace_g_derivative(model, zero, f, 1)?;
    let sp = leading_eigenpair(model, zero)?;
    let nu_p = nu_prime_zero(model, &sp.phi);
    let proj = spectral_projection(model, zero)?;
    let dproj = projection_derivative_zero(model)?;
    // remove the rounding-level flux mass before the deflated solve
    let m = model.flux_mass(&g0.values);
    let g0c: Vec<C64> = g0.values.iter().zip(&sp.phi).map(|(a, b)| a - m * b).collect();
    let deflated = resolvent_one_apply(model, zero, &g0c, SolveMethod::Direct)?;
    let a = dproj.apply(&g0.values);
    let b = proj.apply(model, &g0p.values);
    let x: Vec<C64> = deflated.iter().zip(a.iter().zip(&b)).map(|(d, (a, b))| d - (a + b) / nu_p).collect();
    let lifted = lift_xi(model, zero, &emission(model, &x))?;
    Ok(add(&resolvent_t0(model, zero, f)?, &lifted))
}

/// R_f(η) with ε-ladder diagnostics.
pub fn boundary_function(model: &Model, f: &PhaseDensity, eta: f64) -> Result<BoundaryFunctionResult> {
    let grid = &model.grid;
    check_x1(grid, f, C64::new(0.0, eta))?;
    if eta == 0.0 && !is_zero_mean(grid, f) {
        return Err(divergence(model, f));
    }
    let vals = ladder(model, f, eta)?;
    let ladder_norms = vals.iter().map(|v| grid.norm_x(v, 0)).collect();
    let increments = vals.windows(2).map(|w| grid.norm_x(&sub(&w[1], &w[0]), 0)).collect();
    let n = vals.len();
    let extrapolated = PhaseDensity {
        values: vals[n - 1].values.iter().zip(&vals[n - 2].values).map(|(a, b)| 2.0 * a - b).collect(),
    };
    let value = boundary_function_value(model, f, eta)?;
    Ok(BoundaryFunctionResult {
        eta,
        value,
        method: if eta == 0.0 { BoundaryMethod::Spectral } else { BoundaryMethod::Direct },
        ladder_eps: EPS_LADDER.to_vec(),
        ladder_norms,
        increments,
        ladder_last: vals[n - 1].clone(),
        extrapolated,
    })
}

#[derive(Debug, Clone)]
pub struct IteratedBoundary {
    /// Υ_j(η) f
    pub upsilon: PhaseDensity,
    /// d^{j−1}/dη^{j−1} R_f(η) = (−i)^{j−1} (j−1)! Υ_j(η) f
    pub derivative: PhaseDensity,
}

/// Υ_j(η) f, the limit of R(ε + iη, T_H)^j f, computed as Υ_{i+1} f = Υ_i(R_f(η)).
pub fn iterated_boundary_function(model: &Model, f: &PhaseDensity, eta: f64, j: u32) -> Result<IteratedBoundary> {
    if j == 0 {
        return Err(Error::Precondition("j must be ≥ 1".into()));
    }
    let mut g = f.clone();
    for _ in 0..j {
        if eta == 0.0 {
            // each iterate is zero-mean up to quadrature; restore it exactly
            g = remove_mean_along(model, &g)?;
        }
        g = boundary_function_value(model, &g, eta)?;
    }
    let mut factor = c(1.0);
    for i in 1..j {
        factor *= C64::new(0.0, -(i as f64));
    }
    let derivative = PhaseDensity { values: g.values.iter().map(|x| x * factor).collect() };
    Ok(IteratedBoundary { upsilon: g, derivative })
}

fn remove_mean_along(model: &Model, g: &PhaseDensity) -> Result<PhaseDensity> {
    let grid = &model.grid;
    let m = grid.mass(g);
    if m.norm() <= ZERO_MEAN_TOL * grid.norm_x(g, 0) {
        return Ok(g.clone());
    }
    if m.norm() > 1e-6 * grid.norm_x(g, 0) {
        return Err(Error::Precondition(format!("η = 0 iterate has mass {m}; expected zero mean")));
    }
    let inv = invariant_density(model)?;
    grid.zero_mean_projected(g, Some(&inv.psi))
}

/// ‖Υ_j(η) f‖_{X₀} over a list of frequencies.
pub fn boundary_scan(model: &Model, f: &PhaseDensity, etas: &[f64], j: u32) -> Result<Vec<(f64, f64)>> {
    etas.par_iter()
        .map(|&eta| {
            let r = iterated_boundary_function(model, f, eta, j)?;
            Ok((eta, model.grid.norm_x(&r.upsilon, 0)))
        })
        .collect()
}
