//! Diffuse wall kernels h(x, v, v′) = G(x, |v|) / γ(x), independent of the
//! incoming velocity v′, their discrete renormalized form on a phase grid,
//! re-emission sampling and the integrability index N_H.

use crate::error::{Error, Result};
use crate::geometry::{dot, BoundaryPoint, Vec3};
use crate::phase_grid::{FluxFoot, FluxMinus, FluxPlus, PhaseGrid, VelocityMeasure, C64};
use crate::quadrature::GaussRule;
use crate::rng::Stream;
use statrs::function::gamma::{gamma, gamma_lr};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaField {
    Constant(f64),
    /// θ(s) = 1 + ½ sin s
    Bump,
    /// θ = 1 on s ∈ [0, π), 0.5 on [π, 2π)
    Step,
}

impl ThetaField {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            ThetaField::Constant(t) => *t,
            ThetaField::Bump => 1.0 + 0.5 * s.sin(),
            ThetaField::Step => {
                if s.rem_euclid(2.0 * PI) < PI {
                    1.0
                } else {
                    0.5
                }
            }
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            ThetaField::Constant(t) => *t,
            _ => 0.5,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ThetaField::Constant(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    /// G = M_θ(x)(v) = (2πθ)^{-d/2} exp(−|v|²/2θ)
    Maxwellian { theta: ThetaField },
    /// G = |v|^p exp(−|v|²/2θ(x))
    GeneralizedRadial { theta: ThetaField, p: f64 },
    /// G = |v|^a
    PowerLaw { a: f64 },
    /// G = exp(−|v|)
    SeparableRankOne,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffuseKernel {
    pub family: KernelFamily,
    pub measure: VelocityMeasure,
    pub dim: usize,
}

/// ∫_{hemisphere} |σ·n| dσ with the unnormalized sphere measure.
pub fn hemisphere_cosine(d: usize) -> f64 {
    if d == 2 {
        2.0
    } else {
        PI
    }
}

/// ∫_lo^hi ρ^n exp(−ρ²/2θ) dρ (hi may be infinite).
fn gaussian_moment(n: f64, theta: f64, lo: f64, hi: f64) -> f64 {
    let s = 0.5 * (n + 1.0);
    let ulo = lo * lo / (2.0 * theta);
    let phi = if hi.is_finite() { gamma_lr(s, hi * hi / (2.0 * theta)) } else { 1.0 };
    let plo = if ulo > 0.0 { gamma_lr(s, ulo) } else { 0.0 };
    0.5 * (2.0 * theta).powf(s) * gamma(s) * (phi - plo)
}

/// Quantile of the Gamma(shape, 1) law truncated to [lo, hi].
fn truncated_gamma_quantile(shape: f64, lo: f64, hi: f64, u: f64) -> f64 {
    let plo = gamma_lr(shape, lo);
    let phi = gamma_lr(shape, hi);
    let target = plo + u * (phi - plo);
    let lg = statrs::function::gamma::ln_gamma(shape);
    let (mut a, mut b) = (lo, hi);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..100 {
        let f = gamma_lr(shape, x) - target;
        if f > 0.0 {
            b = x;
        } else {
            a = x;
        }
        let dens = ((shape - 1.0) * x.ln() - x - lg).exp();
        let mut next = if dens > 0.0 { x - f / dens } else { 0.5 * (a + b) };
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        if (next - x).abs() <= 1e-14 * x.max(1e-300) || (b - a) <= 1e-15 * b {
            return next;
        }
        x = next;
    }
    x
}

impl DiffuseKernel {
    pub fn new(family: KernelFamily, measure: VelocityMeasure, dim: usize) -> Result<Self> {
        match family {
            KernelFamily::Maxwellian { theta } | KernelFamily::GeneralizedRadial { theta, .. } => {
                if !(theta.min() > 0.0) {
                    return Err(Error::config("kernel.theta", "temperature must be positive"));
                }
            }
            KernelFamily::PowerLaw { a } => {
                if !(a >= 0.0) {
                    return Err(Error::config("kernel.exponent_a", "exponent must be >= 0"));
                }
            }
            KernelFamily::SeparableRankOne => {}
        }
        if dim != 2 && dim != 3 {
            return Err(Error::domain("dimension must be 2 or 3"));
        }
        Ok(DiffuseKernel { family, measure, dim })
    }

    pub fn maxwellian(theta: f64, measure: VelocityMeasure) -> Self {
        DiffuseKernel::new(KernelFamily::Maxwellian { theta: ThetaField::Constant(theta) }, measure, 2)
            .expect("valid kernel")
    }

    pub fn power_law(a: f64, measure: VelocityMeasure) -> Self {
        DiffuseKernel::new(KernelFamily::PowerLaw { a }, measure, 2).expect("valid kernel")
    }

    fn theta_at(&self, s: f64) -> f64 {
        match self.family {
            KernelFamily::Maxwellian { theta } | KernelFamily::GeneralizedRadial { theta, .. } => theta.eval(s),
            _ => 1.0,
        }
    }

    /// Whether G depends on the boundary point.
    pub fn x_dependent(&self) -> bool {
        match self.family {
            KernelFamily::Maxwellian { theta } | KernelFamily::GeneralizedRadial { theta, .. } => !theta.is_constant(),
            _ => false,
        }
    }

    /// Unnormalized radial profile G(x, ρ); `s` is the boundary chart parameter.
    pub fn profile(&self, s: f64, rho: f64) -> f64 {
        let d = self.dim as f64;
        match self.family {
            KernelFamily::Maxwellian { theta } => {
                let t = theta.eval(s);
                (2.0 * PI * t).powf(-0.5 * d) * (-rho * rho / (2.0 * t)).exp()
            }
            KernelFamily::GeneralizedRadial { theta, p } => {
                let t = theta.eval(s);
                rho.powf(p) * (-rho * rho / (2.0 * t)).exp()
            }
            KernelFamily::PowerLaw { a } => rho.powf(a),
            KernelFamily::SeparableRankOne => (-rho).exp(),
        }
    }

    /// Exponent e such that G ~ ρ^e as ρ → 0.
    pub fn small_speed_exponent(&self) -> f64 {
        match self.family {
            KernelFamily::Maxwellian { .. } | KernelFamily::SeparableRankOne => 0.0,
            KernelFamily::GeneralizedRadial { p, .. } => p,
            KernelFamily::PowerLaw { a } => a,
        }
    }

    /// γ(x) = ∫_{Γ₋(x)} G |v·n| m(dv) over V = {c < |v| < 1/c}; with
    /// `truncated = false` the speed range is (0, ∞).
    pub fn gamma_at(&self, s: f64, truncated: bool) -> f64 {
        let (lo, hi) = if truncated { self.measure.speed_range() } else { (0.0, f64::INFINITY) };
        let d = self.dim as f64;
        let b = self.measure.weight.exponent();
        let ang = hemisphere_cosine(self.dim);
        let n = d + b;
        match self.family {
            KernelFamily::Maxwellian { .. } => {
                let t = self.theta_at(s);
                (2.0 * PI * t).powf(-0.5 * d) * ang * gaussian_moment(n, t, lo, hi)
            }
            KernelFamily::GeneralizedRadial { p, .. } => ang * gaussian_moment(n + p, self.theta_at(s), lo, hi),
            KernelFamily::PowerLaw { a } => {
                let e = n + a + 1.0;
                if hi.is_infinite() {
                    f64::INFINITY
                } else {
                    ang * (hi.powf(e) - lo.powf(e)) / e
                }
            }
            KernelFamily::SeparableRankOne => {
                let sh = n + 1.0;
                let phi = if hi.is_finite() { gamma_lr(sh, hi) } else { 1.0 };
                let plo = if lo > 0.0 { gamma_lr(sh, lo) } else { 0.0 };
                ang * gamma(sh) * (phi - plo)
            }
        }
    }

    fn check_halfspaces(&self, x: &BoundaryPoint, v: &Vec3, vp: &Vec3) -> Result<()> {
        if !(dot(v, &x.n) < 0.0) {
            return Err(Error::domain("outgoing-to-gas velocity v must satisfy v·n(x) < 0"));
        }
        if !(dot(vp, &x.n) > 0.0) {
            return Err(Error::domain("incoming-from-gas velocity v' must satisfy v'·n(x) > 0"));
        }
        Ok(())
    }

    /// h(x, v, v′) with the analytic normalization on the truncated measure.
    pub fn eval_kernel(&self, x: &BoundaryPoint, v: &Vec3, vp: &Vec3) -> Result<f64> {
        self.check_halfspaces(x, v, vp)?;
        let rho = dot(v, v).sqrt();
        let s = x.param[0];
        Ok(self.profile(s, rho) / self.gamma_at(s, true))
    }

    /// Quadrature of ∫_{v·n<0} h |v·n| m(dv) at boundary node `node` on the
    /// grid's velocity nodes, using the analytic normalization.
    pub fn check_stochastic_raw(&self, grid: &PhaseGrid, node: usize) -> f64 {
        let s = grid.nodes[node].s;
        let g = self.gamma_at(s, true);
        grid.minus_by_node[node]
            .clone()
            .map(|mi| {
                let mp = &grid.minus[mi];
                let w = grid.vel[mp.vel].weight;
                self.profile(s, mp.speed) / g * mp.speed * mp.cos * w
            })
            .sum()
    }

    /// Draws v with v·n(x) < 0 from h(x, v, v′)|v·n| m(dv).
    pub fn sample_reemission(&self, x: &BoundaryPoint, vp: &Vec3, rng: &mut Stream) -> Result<Vec3> {
        if !(dot(vp, &x.n) > 0.0) {
            return Err(Error::domain("v' must satisfy v'·n(x) > 0"));
        }
        let rho = self.sample_speed(x.param[0], rng.uniform());
        let n = x.n;
        if self.dim == 2 {
            let sin_a = 2.0 * rng.uniform() - 1.0;
            let cos_a = (1.0 - sin_a * sin_a).max(0.0).sqrt();
            let t = [-n[1], n[0], 0.0];
            Ok([
                -rho * (cos_a * n[0] + sin_a * t[0]),
                -rho * (cos_a * n[1] + sin_a * t[1]),
                0.0,
            ])
        } else {
            // cosine-weighted hemisphere
            let u = rng.uniform();
            let phi = 2.0 * PI * rng.uniform();
            let cos_a = u.sqrt();
            let sin_a = (1.0 - u).max(0.0).sqrt();
            let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let t1 = normalize(&cross(&n, &helper));
            let t2 = cross(&n, &t1);
            let mut v = [0.0; 3];
            for i in 0..3 {
                v[i] = -rho * (cos_a * n[i] + sin_a * (phi.cos() * t1[i] + phi.sin() * t2[i]));
            }
            Ok(v)
        }
    }

    /// Speed quantile of the radial flux density ∝ G ϖ ρ^d on (c, 1/c).
    pub fn sample_speed(&self, s: f64, u: f64) -> f64 {
        let (lo, hi) = self.measure.speed_range();
        let d = self.dim as f64;
        let b = self.measure.weight.exponent();
        match self.family {
            KernelFamily::Maxwellian { .. } | KernelFamily::GeneralizedRadial { .. } => {
                let p = if let KernelFamily::GeneralizedRadial { p, .. } = self.family { p } else { 0.0 };
                let t = self.theta_at(s);
                let shape = 0.5 * (d + b + p + 1.0);
                let w = truncated_gamma_quantile(shape, lo * lo / (2.0 * t), hi * hi / (2.0 * t), u);
                (2.0 * t * w).sqrt()
            }
            KernelFamily::PowerLaw { a } => {
                let e = a + b + d + 1.0;
                (lo.powf(e) + u * (hi.powf(e) - lo.powf(e))).powf(1.0 / e)
            }
            KernelFamily::SeparableRankOne => truncated_gamma_quantile(d + b + 1.0, lo, hi, u),
        }
    }

    /// N_H and the per-k table of sup_x ∫ max(1, |v|^{-k-1}) h |v·n| m(dv).
    pub fn integrability_index(&self, k_max: u32) -> IntegrabilityReport {
        let threshold = self.dim as f64 + self.measure.weight.exponent() + self.small_speed_exponent();
        let mut table = Vec::new();
        for k in 0..=k_max {
            let finite = (k as f64) < threshold;
            let value = (0..16)
                .map(|i| self.weighted_moment(i as f64 * PI / 8.0, k, self.measure.c))
                .fold(0.0, f64::max);
            table.push(IntegrabilityRow { k, finite, truncated_value: value });
        }
        let n_h = table.iter().filter(|r| r.finite).map(|r| r.k).max();
        IntegrabilityReport { n_h, table }
    }

    /// ∫ max(1, |v|^{-k-1}) h |v·n| m(dv) at chart parameter s, with the
    /// speed range (c_low, 1/c) and the profile normalized on V.
    pub fn weighted_moment(&self, s: f64, k: u32, c_low: f64) -> f64 {
        let (_, hi) = self.measure.speed_range();
        let d = self.dim as f64;
        let g = self.gamma_at(s, true);
        let rule = GaussRule::new(20);
        let dens = |rho: f64| self.profile(s, rho) * self.measure.weight.eval(rho) * rho.powf(d);
        // log-spaced panels resolve the power singularity toward c_low
        let l0 = c_low.ln();
        let low = if c_low < 1.0 {
            rule.integrate_composite(l0, 0.0, 40, |l| {
                let r = l.exp();
                r.powi(-(k as i32) - 1) * dens(r) * r
            })
        } else {
            0.0
        };
        let high = rule.integrate_composite(c_low.max(1.0), hi, 20, dens);
        hemisphere_cosine(self.dim) * (low + high) / g
    }
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: &Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrabilityRow {
    pub k: u32,
    pub finite: bool,
    pub truncated_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrabilityReport {
    /// `None` when no k qualifies.
    pub n_h: Option<u32>,
    pub table: Vec<IntegrabilityRow>,
}

/// The kernel on a phase grid after discrete renormalization.
///
/// `a[k][q]` is the emission profile at node k and speed index q, scaled so
/// that every column of the node-local operator has unit flux mass.
/// `foot[k]` rescales emissions from node k so that transporting them to
/// the Γ₊ grid through interpolated footpoints also preserves flux mass.
#[derive(Debug, Clone)]
pub struct DiscreteKernel {
    pub a: Vec<Vec<f64>>,
    pub foot: Vec<f64>,
    /// Σ_{Γ₋(k)} G |v·n| W before renormalization
    pub raw_gamma: Vec<f64>,
}

impl DiscreteKernel {
    pub fn new(grid: &PhaseGrid, kernel: &DiffuseKernel) -> Self {
        let nb = grid.n_nodes();
        let nq = grid.spec.speeds;
        let speeds = &grid.speed_rule.0;
        let mut a = Vec::with_capacity(nb);
        let mut raw_gamma = Vec::with_capacity(nb);
        for k in 0..nb {
            let s = grid.nodes[k].s;
            let prof: Vec<f64> = (0..nq).map(|q| kernel.profile(s, speeds[q])).collect();
            let g: f64 = grid.minus_by_node[k]
                .clone()
                .map(|mi| {
                    let mp = &grid.minus[mi];
                    prof[grid.vel[mp.vel].q] * mp.speed * mp.cos * grid.vel[mp.vel].weight
                })
                .sum();
            raw_gamma.push(g);
            a.push(prof.iter().map(|p| p / g).collect::<Vec<f64>>());
        }
        let mut reach = vec![0.0; nb];
        for pp in &grid.plus {
            let q = grid.vel[pp.vel].q;
            for &(k, w) in &pp.interp {
                reach[k] += pp.mu * w * a[k][q];
            }
        }
        let foot = (0..nb).map(|k| grid.nodes[k].weight / reach[k]).collect();
        DiscreteKernel { a, foot, raw_gamma }
    }

    /// Outgoing flux per unit surface at each node: F_k = Σ_{Γ₊(k)} |v·n| W φ.
    pub fn node_flux(&self, grid: &PhaseGrid, phi: &FluxPlus) -> Vec<C64> {
        grid.plus_by_node
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let inv = 1.0 / grid.nodes[k].weight;
                r.clone().map(|p| phi.values[p] * grid.plus[p].mu).sum::<C64>() * inv
            })
            .collect()
    }

    /// Hφ on the node-based Γ₋ grid.
    pub fn apply_h(&self, grid: &PhaseGrid, phi: &FluxPlus) -> FluxMinus {
        let f = self.node_flux(grid, phi);
        let values = grid
            .minus
            .iter()
            .map(|mp| f[mp.node] * self.a[mp.node][grid.vel[mp.vel].q])
            .collect();
        FluxMinus { values }
    }

    /// Hφ evaluated at the chord footpoints of the Γ₊ grid.
    pub fn apply_h_foot(&self, grid: &PhaseGrid, phi: &FluxPlus) -> FluxFoot {
        let f = self.node_flux(grid, phi);
        self.emit_foot(grid, &f)
    }

    /// Footpoint values of the emission generated by node fluxes `f`.
    pub fn emit_foot(&self, grid: &PhaseGrid, f: &[C64]) -> FluxFoot {
        let values = grid
            .plus
            .iter()
            .map(|pp| {
                let q = grid.vel[pp.vel].q;
                pp.interp.iter().map(|&(k, w)| f[k] * (w * self.foot[k] * self.a[k][q])).sum()
            })
            .collect();
        FluxFoot { values }
    }

    /// Flux mass of every column of the node-local operator (should be 1).
    pub fn column_sums(&self, grid: &PhaseGrid) -> Vec<f64> {
        (0..grid.n_nodes())
            .map(|k| {
                grid.minus_by_node[k]
                    .clone()
                    .map(|mi| {
                        let mp = &grid.minus[mi];
                        mp.mu * self.a[k][grid.vel[mp.vel].q]
                    })
                    .sum::<f64>()
                    / grid.nodes[k].weight
            })
            .collect()
    }
}
