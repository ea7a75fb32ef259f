//! The boundary transfer operator M_λH on the Γ₊ grid.
//!
//! Because the wall kernel does not depend on the incoming velocity, M_λH
//! factors as A_λ B with
//!   (Bφ)_k     = π_k⁻¹ Σ_{p ∈ Γ₊(k)} μ_p φ_p            (node flux)
//!   (A_λF)_p   = e^{−λτ_p} Σ_k e_{pk} F_k               (re-emission, transport)
//! where e_{pk} holds the footpoint interpolation weights times the
//! renormalized emission profile. The nonzero spectrum of M_λH is that of
//! the node-level matrix L(λ) = B A_λ, and resolvents follow from
//! (z − AB)⁻¹ = z⁻¹(I + A(z − L)⁻¹B).

use crate::error::{Error, Result};
use crate::linalg::{c, eigenvalues, eigvecs_near, CMat, CVec, Lu};
use crate::phase_grid::{FluxPlus, PhaseGrid, C64};
use crate::wall_kernels::{DiffuseKernel, DiscreteKernel};
use rayon::prelude::*;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralParams {
    /// contour radius around 1
    pub r0: f64,
    pub contour_nodes: usize,
    /// admissible |λ| for the leading eigenpair
    pub delta0: f64,
    /// power in the high-frequency bound
    pub ell: usize,
    /// above this many unknowns only iterative estimates are used
    pub dense_threshold: usize,
}

impl Default for SpectralParams {
    fn default() -> Self {
        SpectralParams { r0: 0.25, contour_nodes: 32, delta0: 0.2, ell: 2, dense_threshold: 5000 }
    }
}

/// Grid, kernel and the emission weights shared by every operator.
#[derive(Debug, Clone)]
pub struct Model {
    pub grid: PhaseGrid,
    pub kernel: DiffuseKernel,
    pub disc: DiscreteKernel,
    pub params: SpectralParams,
    /// e_{pk}: footprint nodes and weights per Γ₊ pair
    pub emit: Vec<Vec<(usize, f64)>>,
}

impl Model {
    pub fn new(grid: PhaseGrid, kernel: DiffuseKernel) -> Self {
        let disc = DiscreteKernel::new(&grid, &kernel);
        let emit = grid
            .plus
            .iter()
            .map(|pp| {
                let q = grid.vel[pp.vel].q;
                pp.interp.iter().map(|&(k, w)| (k, w * disc.foot[k] * disc.a[k][q])).collect()
            })
            .collect();
        Model { grid, kernel, disc, params: SpectralParams::default(), emit }
    }

    pub fn baseline() -> Self {
        let grid = PhaseGrid::baseline_disk();
        let kernel = DiffuseKernel::maxwellian(1.0, grid.measure);
        Model::new(grid, kernel)
    }

    /// Same operator with every travel time replaced by `t0` (test device).
    pub fn with_uniform_tau(&self, t0: f64) -> Self {
        let mut m = self.clone();
        for pp in &mut m.grid.plus {
            pp.tau = t0;
        }
        m
    }

    pub fn nb(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn diameter(&self) -> f64 {
        self.grid.domain.diameter()
    }

    pub fn damping(&self, lambda: C64) -> Vec<C64> {
        self.grid.plus.iter().map(|pp| (-lambda * pp.tau).exp()).collect()
    }

    /// Transport factors e^{−λτ} averaged over each Γ₊ velocity cell
    /// (speed cell × angular cell), weighted by the emitted flux density
    /// G ϖ ρ^d |v̂·n|. Resolves the oscillation of e^{−iητ} inside a cell,
    /// which nodal evaluation aliases once η times the spread of τ across
    /// a cell exceeds π.
    pub fn cell_damping(&self, lambda: C64, sub_speed: usize, sub_angle: usize) -> Vec<C64> {
        let grid = &self.grid;
        let (lo, _) = grid.measure.speed_range();
        let sw = &grid.speed_rule.1;
        let mut edges = vec![lo];
        for w in sw {
            let last = *edges.last().unwrap();
            edges.push(last + w);
        }
        let d = grid.domain.dim() as f64;
        grid.plus
            .par_iter()
            .map(|pp| {
                let vn = &grid.vel[pp.vel];
                let bn = &grid.nodes[pp.node];
                let (a0, a1) = (edges[vn.q], edges[vn.q + 1]);
                let mut num = c(0.0);
                let mut den = 0.0;
                for ja in 0..sub_angle {
                    let ang = vn.angle + ((ja as f64 + 0.5) / sub_angle as f64 - 0.5) * grid.dtheta;
                    let dir = [ang.cos(), ang.sin(), 0.0];
                    let sigma = crate::geometry::dot(&dir, &bn.n);
                    if sigma <= 0.0 {
                        continue;
                    }
                    let chord = grid.domain.forward_root(&bn.x, &[-dir[0], -dir[1], 0.0]);
                    for js in 0..sub_speed {
                        let rho = a0 + (js as f64 + 0.5) / sub_speed as f64 * (a1 - a0);
                        let w = sigma * self.kernel.profile(bn.s, rho) * grid.measure.weight.eval(rho) * rho.powf(d);
                        num += (-lambda * (chord / rho)).exp() * w;
                        den += w;
                    }
                }
                if den > 0.0 {
                    num / den
                } else {
                    (-lambda * pp.tau).exp()
                }
            })
            .collect()
    }

    /// B φ.
    pub fn node_flux(&self, phi: &[C64]) -> CVec {
        let f = self.disc.node_flux(&self.grid, &FluxPlus { values: phi.to_vec() });
        CVec::from_vec(f)
    }

    /// A_λ F given the damping factors.
    pub fn emit_damped(&self, damp: &[C64], f: &CVec) -> Vec<C64> {
        self.emit
            .iter()
            .zip(damp)
            .map(|(e, d)| d * e.iter().map(|&(k, w)| f[k] * w).sum::<C64>())
            .collect()
    }

    /// ∫ |φ| dμ₊.
    pub fn l1(&self, phi: &[C64]) -> f64 {
        self.grid.plus.iter().zip(phi).map(|(pp, x)| pp.mu * x.norm()).sum()
    }

    /// ∫ φ dμ₊.
    pub fn flux_mass(&self, phi: &[C64]) -> C64 {
        self.grid.plus.iter().zip(phi).map(|(pp, x)| x * pp.mu).sum()
    }

    /// ∫ τ₋ φ dμ₊.
    pub fn tau_moment(&self, phi: &[C64]) -> C64 {
        self.grid.plus.iter().zip(phi).map(|(pp, x)| x * (pp.mu * pp.tau)).sum()
    }

    /// Discrete ‖H‖ from L¹₊ into Y₁⁻ (measured on footpoint values).
    pub fn h_norm_y1(&self) -> f64 {
        let mut col = vec![0.0; self.nb()];
        for (pp, e) in self.grid.plus.iter().zip(&self.emit) {
            let w = pp.mu * PhaseGrid::velocity_weight(pp.speed, 1);
            for &(k, x) in e {
                col[k] += w * x;
            }
        }
        (0..self.nb()).map(|k| col[k] / self.grid.nodes[k].weight).fold(0.0, f64::max)
    }
}

const CELL_SUB_SPEED: usize = 32;
const CELL_SUB_ANGLE: usize = 16;

/// M_λH in factored form, with its node-level matrix L(λ).
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    pub lambda: C64,
    pub damp: Vec<C64>,
    pub l: CMat,
}

impl TransferMatrix {
    pub fn assemble(model: &Model, lambda: C64) -> Result<Self> {
        if lambda.re < 0.0 {
            return Err(Error::domain(format!("Re λ must be ≥ 0, got {lambda}")));
        }
        Ok(Self::from_damping(model, lambda, model.damping(lambda)))
    }

    /// M_λH with velocity-cell averaged transport factors.
    pub fn assemble_cell_averaged(model: &Model, lambda: C64) -> Result<Self> {
        if lambda.re < 0.0 {
            return Err(Error::domain(format!("Re λ must be ≥ 0, got {lambda}")));
        }
        Ok(Self::from_damping(model, lambda, model.cell_damping(lambda, CELL_SUB_SPEED, CELL_SUB_ANGLE)))
    }

    fn from_damping(model: &Model, lambda: C64, damp: Vec<C64>) -> Self {
        let nb = model.nb();
        let grid = &model.grid;
        let cols: Vec<Vec<C64>> = (0..nb)
            .into_par_iter()
            .map(|i| {
                let mut row = vec![C64::new(0.0, 0.0); nb];
                let inv = 1.0 / grid.nodes[i].weight;
                for p in grid.plus_by_node[i].clone() {
                    let s = damp[p] * (grid.plus[p].mu * inv);
                    for &(k, w) in &model.emit[p] {
                        row[k] += s * w;
                    }
                }
                row
            })
            .collect();
        let l = CMat::from_fn(nb, nb, |i, k| cols[i][k]);
        TransferMatrix { lambda, damp, l }
    }

    /// M_λH φ.
    pub fn apply(&self, model: &Model, phi: &[C64]) -> Vec<C64> {
        model.emit_damped(&self.damp, &model.node_flux(phi))
    }

    /// Dense n₊ × n₊ matrix (small grids only).
    pub fn dense_full(&self, model: &Model) -> Result<CMat> {
        let n = model.grid.n_plus();
        if n > model.params.dense_threshold {
            return Err(Error::Precondition(format!("{n} unknowns exceed the dense threshold")));
        }
        let grid = &model.grid;
        let mut m = CMat::zeros(n, n);
        for (col, pc) in grid.plus.iter().enumerate() {
            let k = pc.node;
            let b = pc.mu / grid.nodes[k].weight;
            for (row, e) in model.emit.iter().enumerate() {
                for &(kk, w) in e {
                    if kk == k {
                        m[(row, col)] += self.damp[row] * w * b;
                    }
                }
            }
        }
        Ok(m)
    }

    /// Operator norm on L¹(μ₊): max_k ‖A e_k‖ / π_k.
    pub fn norm(&self, model: &Model) -> f64 {
        self.column_norms(model, &CMat::identity(model.nb(), model.nb()))
    }

    /// Operator norm of (M_λH)² = A L B.
    pub fn norm_squared_op(&self, model: &Model) -> f64 {
        self.column_norms(model, &self.l)
    }

    /// max_k ‖A X e_k‖_μ / π_k for a node-level matrix X.
    fn column_norms(&self, model: &Model, x: &CMat) -> f64 {
        let nb = model.nb();
        (0..nb)
            .into_par_iter()
            .map(|k| {
                let col = x.column(k).into_owned();
                model.l1(&model.emit_damped(&self.damp, &col)) / model.grid.nodes[k].weight
            })
            .reduce(|| 0.0, f64::max)
    }

    /// ‖L(λ)‖ on the boundary nodes with the weighted ℓ¹ norm Σ π_i |x_i|.
    pub fn norm_l(&self, model: &Model) -> f64 {
        let nb = model.nb();
        (0..nb)
            .map(|k| (0..nb).map(|i| model.grid.nodes[i].weight * self.l[(i, k)].norm()).sum::<f64>() / model.grid.nodes[k].weight)
            .fold(0.0, f64::max)
    }

    pub fn eigenvalues(&self) -> Result<Vec<C64>> {
        eigenvalues(&self.l)
    }
}

/// ‖M_{λ₁}H − M_{λ₂}H‖ on L¹(μ₊).
pub fn op_norm_diff(model: &Model, l1: C64, l2: C64) -> f64 {
    let d1 = model.damping(l1);
    let d2 = model.damping(l2);
    let diff: Vec<C64> = d1.iter().zip(&d2).map(|(a, b)| a - b).collect();
    let mut col = vec![0.0; model.nb()];
    for ((pp, e), d) in model.grid.plus.iter().zip(&model.emit).zip(&diff) {
        for &(k, w) in e {
            col[k] += pp.mu * d.norm() * w;
        }
    }
    (0..model.nb()).map(|k| col[k] / model.grid.nodes[k].weight).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusMethod {
    Dense,
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusReport {
    pub value: f64,
    pub residual: f64,
    pub method: RadiusMethod,
}

/// r_σ(M_λH), computed from L(λ).
pub fn spectral_radius(model: &Model, t: &TransferMatrix) -> Result<RadiusReport> {
    if t.l.nrows() <= model.params.dense_threshold {
        let ev = t.eigenvalues()?;
        let top = ev.iter().copied().fold(c(0.0), |a, b| if b.norm() > a.norm() { b } else { a });
        let residual = match eigvecs_near(&t.l, top) {
            Ok((nu, x, _)) => (&t.l * &x - &x * nu).norm() / x.norm(),
            Err(_) => 0.0,
        };
        Ok(RadiusReport { value: top.norm(), residual, method: RadiusMethod::Dense })
    } else {
        let l = &t.l;
        power_radius(|x| l * x, l.nrows(), 1e-10, 20_000)
    }
}

/// Iterated-power estimate of the spectral radius of a linear map.
///
/// Uses ‖Tⁿx‖^{1/n}-type growth ratios on a normalized iterate, accelerated
/// by the Rayleigh quotient when the dominant eigenvalue is isolated.
pub fn power_radius<F: Fn(&CVec) -> CVec>(apply: F, n: usize, tol: f64, max_iter: usize) -> Result<RadiusReport> {
    let mut x = CVec::from_fn(n, |i, _| start_entry(i));
    let nx = x.norm();
    x /= c(nx);
    let mut prev = f64::NAN;
    let mut best = f64::NAN;
    for it in 0..max_iter {
        let y = apply(&x);
        let ny = y.norm();
        if ny == 0.0 {
            return Ok(RadiusReport { value: 0.0, residual: 0.0, method: RadiusMethod::Power });
        }
        let rq = x.dotc(&y);
        let residual = (&y - &x * rq).norm();
        // two-step ratio removes oscillation between conjugate pairs
        let z = apply(&y);
        let est = (z.norm() / x.norm()).sqrt();
        best = est;
        if residual <= tol * ny || (it > 10 && (est - prev).abs() <= tol * est) {
            return Ok(RadiusReport { value: est.max(rq.norm()), residual, method: RadiusMethod::Power });
        }
        prev = est;
        let nz = z.norm();
        x = z / c(nz);
    }
    Err(Error::NoConvergence { iterations: max_iter, best })
}

fn start_entry(i: usize) -> C64 {
    // deterministic, strictly positive start vector
    c(1.0 + 0.5 * ((i as f64) * 0.618_033_988_75).fract())
}

#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub lambda: C64,
    pub r: f64,
    pub nu: C64,
    /// right eigenvector, ∫ φ dμ₊ = 1
    pub phi: Vec<C64>,
    /// left eigenfunction, ∫ φ φ̄* dμ₊ = 1
    pub phi_star: Vec<C64>,
    pub r0: f64,
    pub residual: f64,
}

fn check_contour(ev: &[C64], r0: f64) -> Result<usize> {
    let mut inside = 0;
    for z in ev {
        let d = (z - c(1.0)).norm();
        if (d - r0).abs() < 0.02 * r0 {
            return Err(Error::Contour(format!("eigenvalue {z} lies on |z − 1| = {r0}")));
        }
        if d < r0 {
            inside += 1;
        }
    }
    if inside != 1 {
        return Err(Error::Separation(format!("{inside} eigenvalues inside |z − 1| < {r0}")));
    }
    Ok(inside)
}

/// ν(λ) and its eigenvectors for |λ| ≤ δ₀.
pub fn leading_eigenpair(model: &Model, lambda: C64) -> Result<SpectralReport> {
    if lambda.norm() > model.params.delta0 {
        return Err(Error::Precondition(format!("|λ| = {} exceeds δ₀ = {}", lambda.norm(), model.params.delta0)));
    }
    let t = TransferMatrix::assemble(model, lambda)?;
    let ev = t.eigenvalues()?;
    let r0 = model.params.r0;
    check_contour(&ev, r0)?;
    let mu = *ev.iter().find(|z| (*z - c(1.0)).norm() < r0).expect("checked");
    let r = ev.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let (nu, g, gl) = eigvecs_near(&t.l, mu)?;

    let mut phi = model.emit_damped(&t.damp, &g);
    let m = model.flux_mass(&phi);
    for x in &mut phi {
        *x /= m;
    }
    // left functional ψ ↦ Σ_k g̃_k (Bψ)_k, written as ∫ ψ φ̄* dμ₊
    let mut phi_star: Vec<C64> = model
        .grid
        .plus
        .iter()
        .map(|pp| (gl[pp.node] / model.grid.nodes[pp.node].weight).conj())
        .collect();
    let pair: C64 = model.grid.plus.iter().zip(&phi).zip(&phi_star).map(|((pp, a), b)| a * b.conj() * pp.mu).sum();
    for x in &mut phi_star {
        *x /= pair.conj();
    }
    let tphi = t.apply(model, &phi);
    let diff: Vec<C64> = tphi.iter().zip(&phi).map(|(a, b)| a - nu * b).collect();
    let residual = model.l1(&diff) / model.l1(&phi);
    let (phi, nu) = if lambda == c(0.0) {
        // the Perron vector is real; remove rounding-level imaginary parts
        (phi.iter().map(|x| c(x.re)).collect(), nu)
    } else {
        (phi, nu)
    };
    Ok(SpectralReport { lambda, r, nu, phi, phi_star, r0, residual })
}

/// Nodes and factorizations of the contour |z − 1| = r₀ for L(λ).
struct Contour {
    z: Vec<C64>,
    /// quadrature factor r₀ e^{iθ_j} / N (the dz/(2πi) weight)
    w: Vec<C64>,
    lus: Vec<Lu>,
}

impl Contour {
    fn new(model: &Model, t: &TransferMatrix) -> Result<Self> {
        let ev = t.eigenvalues()?;
        check_contour(&ev, model.params.r0)?;
        let n = model.params.contour_nodes;
        let r0 = model.params.r0;
        let nb = model.nb();
        let mut z = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for j in 0..n {
            let th = 2.0 * PI * (j as f64 + 0.5) / n as f64;
            let e = C64::from_polar(r0, th);
            z.push(c(1.0) + e);
            w.push(e / n as f64);
        }
        let lus = z
            .par_iter()
            .map(|zj| Lu::new(CMat::identity(nb, nb) * *zj - &t.l))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Contour(format!("resolvent solve on the contour failed: {e}")))?;
        Ok(Contour { z, w, lus })
    }

    /// (z_j − M_λH)⁻¹ ψ.
    fn resolve(&self, model: &Model, t: &TransferMatrix, j: usize, psi: &[C64]) -> Vec<C64> {
        let y = self.lus[j].solve(&model.node_flux(psi));
        let ay = model.emit_damped(&t.damp, &y);
        let zi = c(1.0) / self.z[j];
        psi.iter().zip(&ay).map(|(a, b)| (a + b) * zi).collect()
    }
}

/// The spectral projection P(λ) = A K B, with K = (1/2πi)∮ z⁻¹(z − L)⁻¹ dz.
#[derive(Debug, Clone)]
pub struct Projection {
    pub t: TransferMatrix,
    pub k: CMat,
}

impl Projection {
    pub fn apply(&self, model: &Model, psi: &[C64]) -> Vec<C64> {
        let f = model.node_flux(psi);
        model.emit_damped(&self.t.damp, &(&self.k * f))
    }

    /// Singular values of the node-level factor (the nonzero ones of P up to scaling).
    pub fn node_singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.k.clone().singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s
    }
}

pub fn spectral_projection(model: &Model, lambda: C64) -> Result<Projection> {
    let t = TransferMatrix::assemble(model, lambda)?;
    let contour = Contour::new(model, &t)?;
    let nb = model.nb();
    let mut k = CMat::zeros(nb, nb);
    for j in 0..contour.z.len() {
        let inv = contour.lus[j].solve_matrix(&CMat::identity(nb, nb));
        k += inv * (contour.w[j] / contour.z[j]);
    }
    Ok(Projection { t, k })
}

/// P′(0) = −(1/2πi)∮ R(z, M₀H) τ₋ M₀H R(z, M₀H) dz, applied by quadrature.
pub struct ProjectionDerivative<'m> {
    model: &'m Model,
    t: TransferMatrix,
    contour: Contour,
}

impl<'m> ProjectionDerivative<'m> {
    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        let model = self.model;
        let tau: Vec<f64> = model.grid.plus.iter().map(|pp| pp.tau).collect();
        let parts: Vec<Vec<C64>> = (0..self.contour.z.len())
            .into_par_iter()
            .map(|j| {
                let y = self.contour.resolve(model, &self.t, j, psi);
                let ty = self.t.apply(model, &y);
                let y2: Vec<C64> = ty.iter().zip(&tau).map(|(a, t)| a * *t).collect();
                let y3 = self.contour.resolve(model, &self.t, j, &y2);
                y3.iter().map(|x| -x * self.contour.w[j]).collect()
            })
            .collect();
        let mut out = vec![c(0.0); psi.len()];
        for p in parts {
            for (o, x) in out.iter_mut().zip(p) {
                *o += x;
            }
        }
        out
    }
}

pub fn projection_derivative_zero(model: &Model) -> Result<ProjectionDerivative<'_>> {
    let t = TransferMatrix::assemble(model, c(0.0))?;
    let contour = Contour::new(model, &t)?;
    Ok(ProjectionDerivative { model, t, contour })
}

/// ν′(0) = −∫ τ₋ φ₀ dμ₊ for the normalized Perron vector φ₀.
pub fn nu_prime_zero(model: &Model, phi0: &[C64]) -> f64 {
    -model.tau_moment(phi0).re
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveMethod {
    Direct,
    Neumann,
}

/// Solves (I − M_λH)x = ψ.
///
/// For λ = 0 the right side must have zero flux mass, and the deflated
/// system (I − M₀H(I − P(0)))x = ψ is solved instead.
pub fn resolvent_one_apply(model: &Model, lambda: C64, psi: &[C64], method: SolveMethod) -> Result<Vec<C64>> {
    let t = TransferMatrix::assemble(model, lambda)?;
    let scale = model.l1(psi);
    if scale == 0.0 {
        return Ok(vec![c(0.0); psi.len()]);
    }
    let x = if lambda == c(0.0) {
        let mass = model.flux_mass(psi).norm();
        if mass > 1e-10 * scale {
            return Err(Error::Singular(format!("λ = 0 with ∫ψ dμ₊ = {mass:e} ≠ 0")));
        }
        deflated_solve(model, &t, psi)?
    } else {
        match method {
            SolveMethod::Direct => woodbury_solve(model, &t, psi)?,
            SolveMethod::Neumann => neumann_solve(model, &t, psi, 1e-13, 100_000)?,
        }
    };
    Ok(x)
}

/// x = ψ + A(I − L)⁻¹Bψ.
pub fn woodbury_solve(model: &Model, t: &TransferMatrix, psi: &[C64]) -> Result<Vec<C64>> {
    let nb = model.nb();
    let lu = Lu::new(CMat::identity(nb, nb) - &t.l)?;
    let y = lu.solve(&model.node_flux(psi));
    let ay = model.emit_damped(&t.damp, &y);
    Ok(psi.iter().zip(&ay).map(|(a, b)| a + b).collect())
}

/// (I − A C B)⁻¹ψ with C = I − L K, i.e. M₀H(I − P(0)) = A C B.
fn deflated_solve(model: &Model, t: &TransferMatrix, psi: &[C64]) -> Result<Vec<C64>> {
    let nb = model.nb();
    let proj = spectral_projection(model, c(0.0))?;
    let cm = CMat::identity(nb, nb) - &t.l * &proj.k;
    let lu = Lu::new(CMat::identity(nb, nb) - &cm * &t.l)?;
    let y = lu.solve(&(&cm * model.node_flux(psi)));
    let ay = model.emit_damped(&t.damp, &y);
    Ok(psi.iter().zip(&ay).map(|(a, b)| a + b).collect())
}

/// Neumann series Σ (M_λH)ⁿψ, stopped when the tail bound
/// ‖Tⁿψ‖·Σ_{j<ℓ}‖T^j‖/(1 − ‖T^ℓ‖) falls below `tol`·‖ψ‖.
pub fn neumann_solve(model: &Model, t: &TransferMatrix, psi: &[C64], tol: f64, max_iter: usize) -> Result<Vec<C64>> {
    let n1 = t.norm(model);
    let n2 = t.norm_squared_op(model);
    if n2 >= 1.0 {
        return Err(Error::Divergence {
            message: format!("‖(M_λH)²‖ = {n2} ≥ 1; Neumann series not controlled"),
            scaled: vec![n2],
        });
    }
    let factor = (1.0 + n1) / (1.0 - n2);
    let scale = model.l1(psi);
    let mut x = psi.to_vec();
    let mut term = psi.to_vec();
    for _ in 0..max_iter {
        term = t.apply(model, &term);
        for (a, b) in x.iter_mut().zip(&term) {
            *a += b;
        }
        let tn = model.l1(&term);
        if tn * factor <= tol * scale {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, best: model.l1(&term) / scale })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRow {
    pub eta: f64,
    /// ‖(M_{iη}H)²‖ with cell-averaged transport factors
    pub norm_m2: f64,
    /// ‖L(iη)‖ with cell-averaged transport factors
    pub norm_l: f64,
    /// ‖(M_{iη}H)²‖ with nodal transport factors
    pub norm_m2_nodal: f64,
}

/// ‖(M_{iη}H)²‖ and ‖L(iη)‖ over a list of frequencies.
pub fn high_frequency_decay(model: &Model, etas: &[f64]) -> Result<Vec<DecayRow>> {
    etas.par_iter()
        .map(|&eta| {
            let lambda = C64::new(0.0, eta);
            let t = TransferMatrix::assemble_cell_averaged(model, lambda)?;
            let nodal = TransferMatrix::assemble(model, lambda)?;
            Ok(DecayRow {
                eta,
                norm_m2: t.norm_squared_op(model),
                norm_l: t.norm_l(model),
                norm_m2_nodal: nodal.norm_squared_op(model),
            })
        })
        .collect()
}

/// Dense-matrix projection (1/2πi)∮(z − M)⁻¹dz over |z − 1| = r₀.
pub fn dense_projection(m: &CMat, r0: f64, nodes: usize) -> Result<CMat> {
    let n = m.nrows();
    let mut p = CMat::zeros(n, n);
    for j in 0..nodes {
        let th = 2.0 * PI * (j as f64 + 0.5) / nodes as f64;
        let e = C64::from_polar(r0, th);
        let lu = Lu::new(CMat::identity(n, n) * (c(1.0) + e) - m)?;
        p += lu.solve_matrix(&CMat::identity(n, n)) * (e / nodes as f64);
    }
    Ok(p)
}

/// Dense-matrix −(1/2πi)∮ R(z) D M R(z) dz for a diagonal D.
pub fn dense_projection_derivative(m: &CMat, d: &[f64], r0: f64, nodes: usize) -> Result<CMat> {
    let n = m.nrows();
    let dm = CMat::from_fn(n, n, |i, j| m[(i, j)] * d[i]);
    let mut p = CMat::zeros(n, n);
    for j in 0..nodes {
        let th = 2.0 * PI * (j as f64 + 0.5) / nodes as f64;
        let e = C64::from_polar(r0, th);
        let lu = Lu::new(CMat::identity(n, n) * (c(1.0) + e) - m)?;
        let r = lu.solve_matrix(&CMat::identity(n, n));
        p -= &r * &dm * &r * (e / nodes as f64);
    }
    Ok(p)
}

impl Lu {
    pub fn solve_matrix(&self, b: &CMat) -> CMat {
        let mut out = b.clone();
        for j in 0..b.ncols() {
            let col = self.solve(&b.column(j).into_owned());
            out.set_column(j, &col);
        }
        out
    }
}
