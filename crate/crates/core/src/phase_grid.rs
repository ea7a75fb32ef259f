//! Discretization of phase space for planar domains.
//!
//! Velocities: Gauss–Legendre in speed on (c, 1/c) times a periodic
//! trapezoid in angle. Boundary: uniform nodes in the chart parameter.
//! Γ₊ unknowns are (boundary node, velocity node) pairs with v·n > 0.
//! Interior densities live on the backward chords of those pairs: each
//! chord x − s v, s ∈ [0, τ₋], carries Gauss nodes, and the strip around it
//! has flux weight |v·n| π(dx) m(dv). Volume integrals are therefore the
//! boundary-side integrals ∫_{Γ₊} dμ₊ ∫₀^{τ₋} f(x − s v, v) ds, which makes
//! the discrete Green identities exact.

use crate::error::{Error, Result};
use crate::geometry::{axpy, dot, Domain, Shape, Vec3};
use crate::quadrature::{Barycentric, GaussRule, LegendreAntiderivative};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::ops::Range;

pub type C64 = Complex64;

/// Relative angular shift applied to velocity nodes that are exactly tangent.
pub const GRAZING_SHIFT: f64 = 1e-6;

/// Velocity angles sit at (j + ANGLE_OFFSET)Δθ. The offset keeps chord
/// footpoints on rotation-invariant grids off the boundary nodes; with
/// footpoints exactly on nodes the disk transfer matrix splits into
/// decoupled residue classes.
pub const ANGLE_OFFSET: f64 = 0.625;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadialWeight {
    Lebesgue,
    Power(f64),
}

impl RadialWeight {
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if t == "lebesgue" {
            return Ok(RadialWeight::Lebesgue);
        }
        if let Some(rest) = t.strip_prefix("power:") {
            let a: f64 = rest
                .parse()
                .map_err(|_| Error::config("measure.weight", format!("bad exponent in `{s}`")))?;
            if !a.is_finite() || a <= -2.0 {
                return Err(Error::config("measure.weight", "power exponent must be finite and > -2"));
            }
            return Ok(RadialWeight::Power(a));
        }
        Err(Error::config("measure.weight", format!("expected `lebesgue` or `power:<a>`, got `{s}`")))
    }

    pub fn label(&self) -> String {
        match self {
            RadialWeight::Lebesgue => "lebesgue".into(),
            RadialWeight::Power(a) => format!("power:{a}"),
        }
    }

    pub fn exponent(&self) -> f64 {
        match self {
            RadialWeight::Lebesgue => 0.0,
            RadialWeight::Power(a) => *a,
        }
    }

    pub fn eval(&self, rho: f64) -> f64 {
        match self {
            RadialWeight::Lebesgue => 1.0,
            RadialWeight::Power(a) => rho.powf(*a),
        }
    }
}

/// m(dv) = ϖ(|v|) dv restricted to c < |v| < 1/c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityMeasure {
    pub weight: RadialWeight,
    pub c: f64,
}

impl VelocityMeasure {
    pub fn new(weight: RadialWeight, c: f64) -> Result<Self> {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::config("measure.c", format!("c must lie in (0, 1), got {c}")));
        }
        Ok(VelocityMeasure { weight, c })
    }

    pub fn speed_range(&self) -> (f64, f64) {
        (self.c, 1.0 / self.c)
    }

    /// ∫_c^{1/c} ρ^p ϖ(ρ) dρ.
    pub fn radial_moment(&self, p: f64) -> f64 {
        let e = p + self.weight.exponent();
        let (lo, hi) = self.speed_range();
        if (e + 1.0).abs() < 1e-14 {
            (hi / lo).ln()
        } else {
            (hi.powf(e + 1.0) - lo.powf(e + 1.0)) / (e + 1.0)
        }
    }

    /// Total mass m(V) in dimension d.
    pub fn total_mass(&self, d: usize) -> f64 {
        let sphere = if d == 2 { 2.0 * PI } else { 4.0 * PI };
        sphere * self.radial_moment(d as f64 - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub boundary_nodes: usize,
    pub speeds: usize,
    pub angles: usize,
    pub chord_nodes: usize,
}

impl GridSpec {
    pub fn baseline() -> Self {
        GridSpec { boundary_nodes: 48, speeds: 6, angles: 16, chord_nodes: 16 }
    }

    /// Every resolution multiplied by `factor` (chord nodes unchanged).
    pub fn refined(&self, factor: usize) -> Self {
        GridSpec {
            boundary_nodes: self.boundary_nodes * factor,
            speeds: self.speeds * factor,
            angles: self.angles * factor,
            chord_nodes: self.chord_nodes,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VelocityNode {
    pub q: usize,
    pub j: usize,
    pub speed: f64,
    pub angle: f64,
    /// unit direction
    pub dir: Vec3,
    /// quadrature weight of m(dv): w_q ϖ(ρ_q) ρ_q Δθ
    pub weight: f64,
}

impl VelocityNode {
    pub fn velocity(&self) -> Vec3 {
        [self.speed * self.dir[0], self.speed * self.dir[1], 0.0]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundaryNode {
    pub s: f64,
    pub x: Vec3,
    pub n: Vec3,
    /// surface quadrature weight π_i
    pub weight: f64,
}

/// A Γ₊ grid pair and its backward chord.
#[derive(Debug, Clone)]
pub struct PlusPair {
    pub node: usize,
    pub vel: usize,
    pub speed: f64,
    /// unit direction (shifted for tangent nodes)
    pub dir: Vec3,
    /// v̂ · n(x) > 0
    pub cos: f64,
    /// backward travel time τ₋ (time units)
    pub tau: f64,
    /// boundary footpoint x − τ₋ v and its chart parameter
    pub foot: Vec3,
    pub foot_s: f64,
    /// footprint of the velocity cell on the boundary: node weights summing
    /// to one, from the footpoints of the directions in the angular cell
    /// (flux-weighted) with linear interpolation in the boundary chart
    pub interp: Vec<(usize, f64)>,
    /// flux weight π_i |v·n| W_v
    pub mu: f64,
    pub grazing: bool,
}

/// A Γ₋ grid pair at a boundary node.
#[derive(Debug, Clone, Copy)]
pub struct MinusPair {
    pub node: usize,
    pub vel: usize,
    pub speed: f64,
    pub dir: Vec3,
    /// |v̂ · n(x)|
    pub cos: f64,
    pub mu: f64,
}

/// Density on the interior chord grid; value index `p * chord_nodes + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDensity {
    pub values: Vec<C64>,
}

/// Density on the Γ₊ grid (index = plus pair).
#[derive(Debug, Clone, PartialEq)]
pub struct FluxPlus {
    pub values: Vec<C64>,
}

/// Density on the node-based Γ₋ grid (index = minus pair).
#[derive(Debug, Clone, PartialEq)]
pub struct FluxMinus {
    pub values: Vec<C64>,
}

/// Γ₋ density pulled back along chords: value at (x − τ₋ v, v) stored at the
/// Γ₊ pair (x, v). Integrates against dμ₊ by the flux identity.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxFoot {
    pub values: Vec<C64>,
}

#[derive(Debug, Clone)]
pub struct PhaseGrid {
    pub domain: Domain,
    pub measure: VelocityMeasure,
    pub spec: GridSpec,
    pub vel: Vec<VelocityNode>,
    pub nodes: Vec<BoundaryNode>,
    pub plus: Vec<PlusPair>,
    pub minus: Vec<MinusPair>,
    pub plus_by_node: Vec<Range<usize>>,
    pub minus_by_node: Vec<Range<usize>>,
    pub chord: GaussRule,
    pub chord_bary: Barycentric,
    pub chord_anti: LegendreAntiderivative,
    /// radial Gauss nodes/weights (before ϖ and ρ factors)
    pub speed_rule: (Vec<f64>, Vec<f64>),
    pub dtheta: f64,
}

/// Sub-directions per angular cell used to spread footpoints.
const FOOTPRINT_SUBDIVISION: usize = 32;

/// Boundary footprint of the directions θ ∈ [θ_c − Δθ/2, θ_c + Δθ/2] leaving
/// the domain at x, weighted by |v̂·n|.
fn footprint(domain: &Domain, x: &Vec3, n: &Vec3, center: f64, dtheta: f64, ds: f64, nb: usize) -> Vec<(usize, f64)> {
    let mut acc: Vec<(usize, f64)> = Vec::new();
    let mut total = 0.0;
    let add = |k: usize, w: f64, acc: &mut Vec<(usize, f64)>| {
        if let Some(e) = acc.iter_mut().find(|e| e.0 == k) {
            e.1 += w;
        } else {
            acc.push((k, w));
        }
    };
    for m in 0..FOOTPRINT_SUBDIVISION {
        let a = center + ((m as f64 + 0.5) / FOOTPRINT_SUBDIVISION as f64 - 0.5) * dtheta;
        let d = [a.cos(), a.sin(), 0.0];
        let sigma = dot(&d, n);
        if sigma <= 0.0 {
            continue;
        }
        let t = domain.forward_root(x, &[-d[0], -d[1], 0.0]);
        let y = domain.snap(&axpy(x, -t, &d));
        let u = domain.chart_param(&y) / ds;
        let k0f = u.floor();
        let w1 = u - k0f;
        let k0 = (k0f as usize) % nb;
        add(k0, sigma * (1.0 - w1), &mut acc);
        add((k0 + 1) % nb, sigma * w1, &mut acc);
        total += sigma;
    }
    if total == 0.0 {
        // fully grazing cell: fall back to the node itself
        let k = (domain.chart_param(x) / ds).round() as usize % nb;
        return vec![(k, 1.0)];
    }
    acc.retain(|e| e.1 > 0.0);
    for e in &mut acc {
        e.1 /= total;
    }
    acc
}

impl PhaseGrid {
    pub fn new(domain: Domain, measure: VelocityMeasure, spec: GridSpec) -> Result<Self> {
        if domain.dim() != 2 {
            return Err(Error::domain("phase-space discretization is implemented for planar domains only"));
        }
        if spec.boundary_nodes < 8 || spec.speeds < 2 || spec.angles < 4 || spec.chord_nodes < 2 {
            return Err(Error::config("grid", format!("grid too coarse: {spec:?}")));
        }
        let (lo, hi) = measure.speed_range();
        let (speeds, sw) = GaussRule::new(spec.speeds).on_interval(lo, hi);
        let dtheta = 2.0 * PI / spec.angles as f64;
        let mut vel = Vec::with_capacity(spec.speeds * spec.angles);
        for q in 0..spec.speeds {
            for j in 0..spec.angles {
                let angle = (j as f64 + ANGLE_OFFSET) * dtheta;
                let rho = speeds[q];
                vel.push(VelocityNode {
                    q,
                    j,
                    speed: rho,
                    angle,
                    dir: [angle.cos(), angle.sin(), 0.0],
                    weight: sw[q] * measure.weight.eval(rho) * rho * dtheta,
                });
            }
        }

        let nb = spec.boundary_nodes;
        let ds = 2.0 * PI / nb as f64;
        let nodes: Vec<BoundaryNode> = (0..nb)
            .map(|i| {
                let s = i as f64 * ds;
                let bp = domain.boundary_chart([s, 0.0]);
                BoundaryNode { s, x: bp.x, n: bp.n, weight: domain.surface_weight([s, 0.0]) * ds }
            })
            .collect();

        let mut plus = Vec::new();
        let mut minus = Vec::new();
        let mut plus_by_node = Vec::with_capacity(nb);
        let mut minus_by_node = Vec::with_capacity(nb);
        for (i, bn) in nodes.iter().enumerate() {
            let p0 = plus.len();
            let m0 = minus.len();
            for (vi, vn) in vel.iter().enumerate() {
                let mut dir = vn.dir;
                let mut sigma = dot(&dir, &bn.n);
                let mut grazing = false;
                if sigma.abs() < 1e-12 {
                    let a = vn.angle + GRAZING_SHIFT * dtheta;
                    dir = [a.cos(), a.sin(), 0.0];
                    sigma = dot(&dir, &bn.n);
                    grazing = true;
                }
                if sigma > 0.0 {
                    let v = [vn.speed * dir[0], vn.speed * dir[1], 0.0];
                    let mv = [-v[0], -v[1], 0.0];
                    let tau = domain.forward_root(&bn.x, &mv);
                    let foot = domain.snap(&axpy(&bn.x, -tau, &v));
                    let foot_s = domain.chart_param(&foot);
                    let interp = footprint(&domain, &bn.x, &bn.n, vn.angle, dtheta, ds, nb);
                    plus.push(PlusPair {
                        node: i,
                        vel: vi,
                        speed: vn.speed,
                        dir,
                        cos: sigma,
                        tau,
                        foot,
                        foot_s,
                        interp,
                        mu: bn.weight * vn.speed * sigma * vn.weight,
                        grazing,
                    });
                } else {
                    minus.push(MinusPair {
                        node: i,
                        vel: vi,
                        speed: vn.speed,
                        dir,
                        cos: -sigma,
                        mu: bn.weight * vn.speed * (-sigma) * vn.weight,
                    });
                }
            }
            plus_by_node.push(p0..plus.len());
            minus_by_node.push(m0..minus.len());
        }

        let chord = GaussRule::new(spec.chord_nodes);
        let chord_bary = Barycentric::new(&chord.nodes);
        let chord_anti = LegendreAntiderivative::new(&chord);
        Ok(PhaseGrid {
            domain,
            measure,
            spec,
            vel,
            nodes,
            plus,
            minus,
            plus_by_node,
            minus_by_node,
            chord,
            chord_bary,
            chord_anti,
            speed_rule: (speeds, sw),
            dtheta,
        })
    }

    pub fn baseline_disk() -> Self {
        let m = VelocityMeasure::new(RadialWeight::Lebesgue, 0.25).expect("valid");
        PhaseGrid::new(Domain::disk(), m, GridSpec::baseline()).expect("valid grid")
    }

    pub fn n_plus(&self) -> usize {
        self.plus.len()
    }

    pub fn n_minus(&self) -> usize {
        self.minus.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nc(&self) -> usize {
        self.chord.len()
    }

    pub fn n_phase(&self) -> usize {
        self.plus.len() * self.nc()
    }

    /// Chord time of node m on pair p.
    pub fn chord_time(&self, p: usize, m: usize) -> f64 {
        0.5 * self.plus[p].tau * (1.0 + self.chord.nodes[m])
    }

    /// Integration weight of phase node (p, m).
    pub fn phase_weight(&self, p: usize, m: usize) -> f64 {
        let pp = &self.plus[p];
        pp.mu * 0.5 * pp.tau * self.chord.weights[m]
    }

    /// Spatial position of phase node (p, m).
    pub fn phase_point(&self, p: usize, m: usize) -> Vec3 {
        let pp = &self.plus[p];
        let s = self.chord_time(p, m) * pp.speed;
        axpy(&self.nodes[pp.node].x, -s, &pp.dir)
    }

    pub fn phase_velocity(&self, p: usize) -> Vec3 {
        let pp = &self.plus[p];
        [pp.speed * pp.dir[0], pp.speed * pp.dir[1], 0.0]
    }

    /// Samples a function of (x, v) on the phase grid.
    pub fn sample<F: Fn(&Vec3, &Vec3) -> f64>(&self, f: F) -> PhaseDensity {
        let nc = self.nc();
        let mut values = Vec::with_capacity(self.n_phase());
        for p in 0..self.n_plus() {
            let v = self.phase_velocity(p);
            for m in 0..nc {
                values.push(C64::new(f(&self.phase_point(p, m), &v), 0.0));
            }
        }
        PhaseDensity { values }
    }

    pub fn zeros_phase(&self) -> PhaseDensity {
        PhaseDensity { values: vec![C64::new(0.0, 0.0); self.n_phase()] }
    }

    pub fn velocity_weight(speed: f64, k: u32) -> f64 {
        if k == 0 {
            1.0
        } else {
            1f64.max(speed.powi(-(k as i32)))
        }
    }

    /// ‖f‖_{X_k} = ∫ |f| max(1, |v|^{-k}) dx m(dv).
    pub fn norm_x(&self, f: &PhaseDensity, k: u32) -> f64 {
        let nc = self.nc();
        let mut total = 0.0;
        for p in 0..self.n_plus() {
            let wv = Self::velocity_weight(self.plus[p].speed, k);
            let mut s = 0.0;
            for m in 0..nc {
                s += self.phase_weight(p, m) * f.values[p * nc + m].norm();
            }
            total += wv * s;
        }
        total
    }

    /// ‖u‖_{Y_k^+}.
    pub fn norm_y_plus(&self, u: &FluxPlus, k: u32) -> f64 {
        self.plus
            .iter()
            .zip(&u.values)
            .map(|(pp, x)| pp.mu * Self::velocity_weight(pp.speed, k) * x.norm())
            .sum()
    }

    /// ‖u‖_{Y_k^-} on the node-based Γ₋ grid.
    pub fn norm_y_minus(&self, u: &FluxMinus, k: u32) -> f64 {
        self.minus
            .iter()
            .zip(&u.values)
            .map(|(mp, x)| mp.mu * Self::velocity_weight(mp.speed, k) * x.norm())
            .sum()
    }

    /// ‖u‖_{Y_k^-} for a pulled-back Γ₋ density.
    pub fn norm_y_foot(&self, u: &FluxFoot, k: u32) -> f64 {
        self.plus
            .iter()
            .zip(&u.values)
            .map(|(pp, x)| pp.mu * Self::velocity_weight(pp.speed, k) * x.norm())
            .sum()
    }

    pub fn flux_mass_plus(&self, u: &FluxPlus) -> C64 {
        self.plus.iter().zip(&u.values).map(|(pp, x)| x * pp.mu).sum()
    }

    pub fn flux_mass_minus(&self, u: &FluxMinus) -> C64 {
        self.minus.iter().zip(&u.values).map(|(mp, x)| x * mp.mu).sum()
    }

    pub fn flux_mass_foot(&self, u: &FluxFoot) -> C64 {
        self.plus.iter().zip(&u.values).map(|(pp, x)| x * pp.mu).sum()
    }

    /// ϱ_f = ∫ f dx m(dv).
    pub fn mass(&self, f: &PhaseDensity) -> C64 {
        let nc = self.nc();
        let mut total = C64::new(0.0, 0.0);
        for p in 0..self.n_plus() {
            let mut s = C64::new(0.0, 0.0);
            for m in 0..nc {
                s += f.values[p * nc + m] * self.phase_weight(p, m);
            }
            total += s;
        }
        total
    }

    /// f − ϱ_f Ψ for a mass-one Ψ; fails if Ψ has not been computed.
    pub fn zero_mean_projected(&self, f: &PhaseDensity, psi: Option<&PhaseDensity>) -> Result<PhaseDensity> {
        let psi = psi.ok_or_else(|| Error::State("invariant density has not been computed".into()))?;
        let rho = self.mass(f);
        let rho_psi = self.mass(psi);
        let c = rho / rho_psi;
        Ok(PhaseDensity { values: f.values.iter().zip(&psi.values).map(|(a, b)| a - c * b).collect() })
    }

    /// Volume-side and boundary-side integrals of a function h(x, v) ≥ 0.
    ///
    /// Volume side: mapped polar Gauss×trapezoid quadrature of Ω times the
    /// velocity grid. Boundary side: the chord quadrature of the phase grid.
    pub fn integrate_formula_check<F: Fn(&Vec3, &Vec3) -> f64>(&self, h: F) -> (f64, f64) {
        let (a, b) = match self.domain.shape {
            Shape::Ellipse { a, b } => (a, b),
            _ => (1.0, 1.0),
        };
        let radial = GaussRule::new(24);
        let panels = 4;
        let nth = 4 * self.spec.boundary_nodes;
        let dth = 2.0 * PI / nth as f64;
        let mut vol = 0.0;
        for vn in &self.vel {
            let v = vn.velocity();
            let mut sv = 0.0;
            for k in 0..nth {
                let th = (k as f64 + 0.5) * dth;
                let (c, s) = (th.cos(), th.sin());
                sv += radial.integrate_composite(0.0, 1.0, panels, |r| {
                    let x = [a * r * c, b * r * s, 0.0];
                    h(&x, &v) * a * b * r
                }) * dth;
            }
            vol += vn.weight * sv;
        }
        let f = self.sample(|x, v| h(x, v));
        let bnd = self.mass(&f).re;
        (vol, bnd)
    }

    /// Interpolated value of chord data of pair p at chord time t ∈ [0, τ].
    pub fn chord_eval(&self, p: usize, vals: &[f64], t: f64) -> f64 {
        let tau = self.plus[p].tau;
        let xi = if tau > 0.0 { 2.0 * t / tau - 1.0 } else { 0.0 };
        let basis = self.chord_bary.basis(xi.clamp(-1.0, 1.0));
        basis.iter().zip(vals).map(|(a, b)| a * b).sum()
    }
}
