//! Boundary-to-boundary Jacobian J(x, y), the hemisphere/boundary change of
//! variables, the C² chord bound and small-shell integrals of J.

use crate::error::{Error, Result};
use crate::geometry::{axpy, dot, norm, scale, sub, Domain, Shape, Vec3, SURFACE_TOL};
use crate::quadrature::GaussRule;
use crate::rng::Stream;
use crate::wall_kernels::{hemisphere_cosine, DiffuseKernel};
use std::f64::consts::PI;

/// Gauss points per panel in the change-of-variables quadratures.
const PANEL_ORDER: usize = 20;

/// Default number of panels per half-boundary.
pub const DEFAULT_PANELS: usize = 16;

#[derive(Debug, Clone, Copy)]
pub struct JacobianSample {
    pub x: Vec3,
    pub y: Vec3,
    pub value: f64,
    /// whether (x − y)·n(y) < 0
    pub indicator: bool,
}

fn check_on_boundary(domain: &Domain, x: &Vec3) -> Result<()> {
    if domain.signed_distance(x).abs() > SURFACE_TOL {
        return Err(Error::domain(format!("point {:?} is not on the boundary", &x[..domain.dim()])));
    }
    Ok(())
}

/// J(x, y) = 𝟙{(x−y)·n(y) < 0} |(x−y)·n(x)| |(x−y)·n(y)| / |x−y|^{d+1}.
pub fn jacobian(domain: &Domain, x: &Vec3, y: &Vec3) -> Result<JacobianSample> {
    check_on_boundary(domain, x)?;
    check_on_boundary(domain, y)?;
    let d = sub(x, y);
    let r = norm(&d);
    if r == 0.0 {
        return Err(Error::domain("J(x, y) is singular at x = y"));
    }
    let nx = domain.outward_normal(x)?;
    let ny = domain.outward_normal(y)?;
    Ok(jacobian_with_normals(domain.dim(), x, y, &nx, &ny))
}

/// J from explicit normals; the indicator is evaluated, not assumed.
pub fn jacobian_with_normals(dim: usize, x: &Vec3, y: &Vec3, nx: &Vec3, ny: &Vec3) -> JacobianSample {
    let d = sub(x, y);
    let r = norm(&d);
    let a = dot(&d, nx);
    let b = dot(&d, ny);
    let indicator = b < 0.0;
    let value = if indicator { a.abs() * b.abs() / r.powi(dim as i32 + 1) } else { 0.0 };
    JacobianSample { x: *x, y: *y, value, indicator }
}

/// Orthonormal tangent frame at a sphere point with normal n.
fn tangent_frame(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let t1 = {
        let c = [n[1] * helper[2] - n[2] * helper[1], n[2] * helper[0] - n[0] * helper[2], n[0] * helper[1] - n[1] * helper[0]];
        scale(&c, 1.0 / norm(&c))
    };
    let t2 = [n[1] * t1[2] - n[2] * t1[1], n[2] * t1[0] - n[0] * t1[2], n[0] * t1[1] - n[1] * t1[0]];
    (t1, t2)
}

/// ∫_{σ·n(x) > 0} g(σ) |σ·n(x)| dσ by composite Gauss quadrature.
pub fn hemisphere_integral<G: Fn(&Vec3) -> f64>(domain: &Domain, x: &Vec3, g: G, panels: usize) -> Result<f64> {
    check_on_boundary(domain, x)?;
    let n = domain.outward_normal(x)?;
    let rule = GaussRule::new(PANEL_ORDER);
    if domain.dim() == 2 {
        let t = [-n[1], n[0], 0.0];
        Ok(rule.integrate_composite(-0.5 * PI, 0.5 * PI, 2 * panels, |th| {
            let s = [th.cos() * n[0] + th.sin() * t[0], th.cos() * n[1] + th.sin() * t[1], 0.0];
            g(&s) * th.cos()
        }))
    } else {
        let (e1, e2) = tangent_frame(&n);
        Ok(rule.integrate_composite(0.0, 0.5 * PI, panels, |th| {
            let (c, s) = (th.cos(), th.sin());
            rule.integrate_composite(0.0, 2.0 * PI, 2 * panels, |ph| {
                let mut sig = [0.0; 3];
                for i in 0..3 {
                    sig[i] = c * n[i] + s * (ph.cos() * e1[i] + ph.sin() * e2[i]);
                }
                g(&sig) * c * s
            })
        }))
    }
}

/// ∫_{∂Ω} H(y) J(x, y) π(dy), graded (exponent 2) toward y = x.
pub fn boundary_integral<H: Fn(&Vec3) -> f64>(domain: &Domain, x: &Vec3, h: H, panels: usize) -> Result<f64> {
    check_on_boundary(domain, x)?;
    let rule = GaussRule::new(PANEL_ORDER);
    let xs = domain.snap(x);
    let nx = domain.outward_normal(&xs)?;
    match domain.shape {
        Shape::Disk | Shape::Ellipse { .. } => {
            let s0 = domain.chart_param(&xs);
            let eval = |phi: f64| -> f64 {
                let bp = domain.boundary_chart([s0 + phi, 0.0]);
                let w = domain.surface_weight([s0 + phi, 0.0]);
                let j = jacobian_with_normals(2, &xs, &bp.x, &nx, &bp.n).value;
                h(&bp.x) * j * w
            };
            // φ = π u² on (0, π], φ = 2π − π u² on [π, 2π)
            let left = rule.integrate_composite(0.0, 1.0, panels, |u| eval(PI * u * u) * 2.0 * PI * u);
            let right = rule.integrate_composite(0.0, 1.0, panels, |u| eval(2.0 * PI - PI * u * u) * 2.0 * PI * u);
            Ok(left + right)
        }
        Shape::Ball => {
            let (e1, e2) = tangent_frame(&nx);
            Ok(rule.integrate_composite(0.0, 1.0, panels, |u| {
                let th = PI * u * u;
                let (c, s) = (th.cos(), th.sin());
                rule.integrate_composite(0.0, 2.0 * PI, 2 * panels, |ph| {
                    let mut y = [0.0; 3];
                    for i in 0..3 {
                        y[i] = c * xs[i] + s * (ph.cos() * e1[i] + ph.sin() * e2[i]);
                    }
                    let j = jacobian_with_normals(3, &xs, &y, &nx, &y).value;
                    h(&y) * j * s
                }) * 2.0 * PI * u
            }))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Both sides of ∫_{S₊(x)} g(σ)|σ·n(x)| dσ = ∫_{∂Ω} g((x−y)/|x−y|) J(x, y) π(dy).
pub fn chv_identity_residual<G: Fn(&Vec3) -> f64>(domain: &Domain, x: &Vec3, g: G) -> Result<IdentityCheck> {
    chv_identity_residual_with(domain, x, g, DEFAULT_PANELS)
}

pub fn chv_identity_residual_with<G: Fn(&Vec3) -> f64>(domain: &Domain, x: &Vec3, g: G, panels: usize) -> Result<IdentityCheck> {
    let lhs = hemisphere_integral(domain, x, &g, panels)?;
    let xs = domain.snap(x);
    let rhs = boundary_integral(
        domain,
        x,
        |y| {
            let d = sub(&xs, y);
            g(&scale(&d, 1.0 / norm(&d)))
        },
        panels,
    )?;
    Ok(IdentityCheck { lhs, rhs, residual: (lhs - rhs).abs() })
}

/// Random boundary points: uniform chart parameters.
fn random_boundary_point(domain: &Domain, rng: &mut Stream) -> (Vec3, Vec3, f64) {
    match domain.shape {
        Shape::Ball => {
            let z = 2.0 * rng.uniform() - 1.0;
            let ph = 2.0 * PI * rng.uniform();
            let bp = domain.boundary_chart([z.acos(), ph]);
            (bp.x, bp.n, bp.param[0])
        }
        _ => {
            let s = 2.0 * PI * rng.uniform();
            let bp = domain.boundary_chart([s, 0.0]);
            (bp.x, bp.n, s)
        }
    }
}

/// Pairs (x, y): half with y uniform, half with y at a log-uniform chart
/// offset in (1e-3, 1) from x so that the near-diagonal regime is sampled.
pub fn sample_pairs(domain: &Domain, count: usize, seed: u64) -> Vec<(Vec3, Vec3)> {
    (0..count)
        .map(|i| {
            let mut rng = Stream::new(seed, i as u64);
            let (x, _, s) = random_boundary_point(domain, &mut rng);
            let y = if i % 2 == 0 {
                random_boundary_point(domain, &mut rng).0
            } else {
                let off = (1e-3f64).powf(rng.uniform()) * if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                match domain.shape {
                    Shape::Ball => {
                        let ph = 2.0 * PI * rng.uniform();
                        let (e1, e2) = tangent_frame(&x);
                        let (c, sn) = (off.cos(), off.sin());
                        let mut y = [0.0; 3];
                        for k in 0..3 {
                            y[k] = c * x[k] + sn * (ph.cos() * e1[k] + ph.sin() * e2[k]);
                        }
                        y
                    }
                    _ => domain.boundary_chart([s + off, 0.0]).x,
                }
            };
            (x, y)
        })
        .filter(|(x, y)| norm(&sub(x, y)) > 0.0)
        .collect()
}

/// sup |(x−y)·n(x)| / |x−y|² over the pairs (both orientations).
pub fn c2_bound_constant(domain: &Domain, pairs: &[(Vec3, Vec3)]) -> Result<f64> {
    if pairs.len() < 1000 {
        return Err(Error::Precondition("at least 10³ boundary pairs are required".into()));
    }
    let mut best: f64 = 0.0;
    for (x, y) in pairs {
        let d = sub(x, y);
        let r2 = dot(&d, &d);
        let nx = domain.outward_normal(x)?;
        let ny = domain.outward_normal(y)?;
        best = best.max(dot(&d, &nx).abs() / r2).max(dot(&d, &ny).abs() / r2);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy)]
pub struct PairChecks {
    pub max_asymmetry: f64,
    /// max of J − |x−y|^{1−d} (≤ 0 when the bound holds)
    pub slack_basic: f64,
    /// max of J − C²|x−y|^{3−d}, relative to the bound
    pub slack_c2: f64,
    pub all_indicators: bool,
}

/// Symmetry and the two upper bounds of J over a pair sample.
pub fn pair_checks(domain: &Domain, pairs: &[(Vec3, Vec3)], c_omega: f64) -> Result<PairChecks> {
    let d = domain.dim() as i32;
    let mut out = PairChecks { max_asymmetry: 0.0, slack_basic: f64::NEG_INFINITY, slack_c2: f64::NEG_INFINITY, all_indicators: true };
    for (x, y) in pairs {
        let a = jacobian(domain, x, y)?;
        let b = jacobian(domain, y, x)?;
        let r = norm(&sub(x, y));
        out.max_asymmetry = out.max_asymmetry.max((a.value - b.value).abs());
        out.slack_basic = out.slack_basic.max(a.value - r.powi(1 - d));
        let bound = c_omega * c_omega * r.powi(3 - d);
        out.slack_c2 = out.slack_c2.max((a.value - bound) / bound);
        out.all_indicators &= a.indicator && b.indicator;
    }
    Ok(out)
}

/// ∫_{|x−y| ≤ δ} J(x, y) π(dx).
pub fn delta_shell_integral(domain: &Domain, y: &Vec3, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::domain("shell radius must be positive"));
    }
    check_on_boundary(domain, y)?;
    let ys = domain.snap(y);
    let ny = domain.outward_normal(&ys)?;
    let rule = GaussRule::new(PANEL_ORDER);
    match domain.shape {
        Shape::Ball => {
            // J ≡ 1/4 on the unit sphere; integrate over the cap anyway
            let th_max = if delta >= 2.0 { PI } else { 2.0 * (0.5 * delta).asin() };
            let (e1, e2) = tangent_frame(&ny);
            Ok(rule.integrate_composite(0.0, th_max, 4, |th| {
                let (c, s) = (th.cos(), th.sin());
                rule.integrate(0.0, 2.0 * PI, |ph| {
                    let mut x = [0.0; 3];
                    for i in 0..3 {
                        x[i] = c * ys[i] + s * (ph.cos() * e1[i] + ph.sin() * e2[i]);
                    }
                    if th == 0.0 {
                        return 0.0;
                    }
                    jacobian_with_normals(3, &x, &ys, &x, &ny).value * s
                })
            }))
        }
        _ => {
            let s0 = domain.chart_param(&ys);
            let dist = |phi: f64| norm(&sub(&domain.boundary_chart([s0 + phi, 0.0]).x, &ys));
            // chart offsets where |x − y| reaches δ on each side
            let edge = |sign: f64| -> f64 {
                let far = PI;
                if dist(sign * far) <= delta {
                    return far;
                }
                let (mut lo, mut hi) = (0.0, far);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if dist(sign * mid) <= delta {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            let eval = |phi: f64| -> f64 {
                if phi == 0.0 {
                    return 0.0;
                }
                let bp = domain.boundary_chart([s0 + phi, 0.0]);
                jacobian_with_normals(2, &bp.x, &ys, &bp.n, &ny).value * domain.surface_weight([s0 + phi, 0.0])
            };
            let right = edge(1.0);
            let left = edge(-1.0);
            Ok(rule.integrate_composite(0.0, right, 4, eval) + rule.integrate_composite(-left, 0.0, 4, eval))
        }
    }
}

/// Closed form of the shell integral on the unit circle: 2(1 − cos(φ_δ/2)),
/// φ_δ = 2 arcsin(δ/2).
pub fn circle_shell_exact(delta: f64) -> f64 {
    if delta >= 2.0 {
        return 2.0;
    }
    let phi = 2.0 * (0.5 * delta).asin();
    2.0 * (1.0 - (0.5 * phi).cos())
}

/// (L₀F)(x) from the velocity-space definition: incoming directions at x,
/// footpoint emission F(y) times the normalized kernel, radial integral by
/// Gauss quadrature on (c, 1/c).
pub fn l0_velocity_form<F: Fn(&Vec3) -> f64>(domain: &Domain, kernel: &DiffuseKernel, x: &Vec3, flux: F) -> Result<f64> {
    let (lo, hi) = kernel.measure.speed_range();
    let d = domain.dim() as i32;
    let radial_rule = GaussRule::new(64);
    let xs = domain.snap(x);
    let g = |sigma: &Vec3| -> f64 {
        let t = domain.forward_root(&xs, &scale(sigma, -1.0));
        let y = domain.snap(&axpy(&xs, -t, sigma));
        let s = match domain.shape {
            Shape::Ball => y[2].clamp(-1.0, 1.0).acos(),
            _ => domain.chart_param(&y),
        };
        let gam = kernel.gamma_at(s, true);
        let radial = radial_rule.integrate_composite(lo, hi, 4, |rho| {
            kernel.profile(s, rho) * rho.powi(d) * kernel.measure.weight.eval(rho)
        });
        flux(&y) * radial / gam
    };
    hemisphere_integral(domain, &xs, g, DEFAULT_PANELS)
}

/// (L₀F)(x) from the boundary-integral form (1/|S₊|_cos) ∫ F(y) J(x, y) π(dy),
/// valid for kernels whose normalized radial profile integrates to one.
pub fn l0_boundary_form<F: Fn(&Vec3) -> f64>(domain: &Domain, x: &Vec3, flux: F) -> Result<f64> {
    Ok(boundary_integral(domain, x, flux, DEFAULT_PANELS)? / hemisphere_cosine(domain.dim()))
}

/// Largest relative difference of the two L₀ forms over `n_fluxes` random
/// trigonometric fluxes at `n_points` boundary points.
pub fn l0_form_agreement(domain: &Domain, kernel: &DiffuseKernel, n_fluxes: usize, n_points: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for f in 0..n_fluxes {
        let mut rng = Stream::new(seed, f as u64);
        let coef: Vec<(f64, f64)> = (0..4).map(|_| (rng.uniform() - 0.5, rng.uniform() - 0.5)).collect();
        let flux = |y: &Vec3| -> f64 {
            let s = y[1].atan2(y[0]);
            let z = y[2];
            1.0 + coef
                .iter()
                .enumerate()
                .map(|(j, (a, b))| {
                    let m = (j + 1) as f64;
                    0.5 * (a * (m * s).cos() + b * (m * s).sin()) + 0.2 * a * z.powi(j as i32 + 1)
                })
                .sum::<f64>()
        };
        for i in 0..n_points {
            let (x, _, _) = random_boundary_point(domain, &mut Stream::new(seed ^ 0x9e37, (f * n_points + i) as u64));
            let a = l0_velocity_form(domain, kernel, &x, flux)?;
            let b = l0_boundary_form(domain, &x, flux)?;
            worst = worst.max((a - b).abs() / b.abs().max(1e-300));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn antipodal_circle_value() {
        let d = Domain::disk();
        let j = jacobian(&d, &[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]).unwrap();
        assert!((j.value - 0.5).abs() < 1e-15);
        assert!(j.indicator);
    }

    #[test]
    fn coincident_points_rejected() {
        let d = Domain::disk();
        assert!(jacobian(&d, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn indicator_can_be_off() {
        // y's normal pointing toward x (as on a non-convex boundary)
        let j = jacobian_with_normals(2, &[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
        assert!(!j.indicator);
        assert_eq!(j.value, 0.0);
    }

    #[test]
    fn circle_shell_closed_form_limits() {
        assert!((circle_shell_exact(2.0) - 2.0).abs() < 1e-15);
        assert!(circle_shell_exact(1e-3) < 1e-6);
    }
}
