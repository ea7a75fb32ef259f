//! Conic domains (disk, ellipse, ball): implicit surface, normals, exit
//! times by closed-form quadratic roots, boundary charts and diameter.
//!
//! Points and velocities are `[f64; 3]`; planar shapes ignore the third
//! component.

use crate::error::{Error, Result};
use crate::quadrature::GaussRule;
use std::f64::consts::PI;

pub type Vec3 = [f64; 3];

/// Absolute tolerance for "on the boundary"; points this close are snapped.
pub const SURFACE_TOL: f64 = 1e-9;

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn axpy(x: &Vec3, t: f64, v: &Vec3) -> Vec3 {
    [x[0] + t * v[0], x[1] + t * v[1], x[2] + t * v[2]]
}

pub fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Disk,
    Ellipse { a: f64, b: f64 },
    Ball,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundaryPoint {
    /// Chart parameters: `[s, 0]` for planar shapes, `[polar, azimuth]` for the ball.
    pub param: [f64; 2],
    pub x: Vec3,
    pub n: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub shape: Shape,
    semi: Vec3,
}

impl Domain {
    pub fn disk() -> Self {
        Domain { shape: Shape::Disk, semi: [1.0, 1.0, 1.0] }
    }

    pub fn ellipse(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::domain(format!("ellipse semi-axes must be positive, got ({a}, {b})")));
        }
        Ok(Domain { shape: Shape::Ellipse { a, b }, semi: [a, b, 1.0] })
    }

    pub fn ball() -> Self {
        Domain { shape: Shape::Ball, semi: [1.0, 1.0, 1.0] }
    }

    pub fn dim(&self) -> usize {
        match self.shape {
            Shape::Ball => 3,
            _ => 2,
        }
    }

    pub fn semi_axes(&self) -> &[f64] {
        &self.semi[..self.dim()]
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.semi_axes().iter().cloned().fold(0.0, f64::max)
    }

    /// Lebesgue measure of the domain.
    pub fn volume(&self) -> f64 {
        match self.shape {
            Shape::Disk => PI,
            Shape::Ellipse { a, b } => PI * a * b,
            Shape::Ball => 4.0 * PI / 3.0,
        }
    }

    /// Implicit function q(x) = Σ (x_i / a_i)² − 1.
    pub fn implicit(&self, x: &Vec3) -> f64 {
        (0..self.dim()).map(|i| (x[i] / self.semi[i]).powi(2)).sum::<f64>() - 1.0
    }

    fn gradient(&self, x: &Vec3) -> Vec3 {
        let mut g = [0.0; 3];
        for i in 0..self.dim() {
            g[i] = 2.0 * x[i] / (self.semi[i] * self.semi[i]);
        }
        g
    }

    /// First-order signed distance to the boundary (positive outside).
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        let q = self.implicit(x);
        let g = norm(&self.gradient(x));
        if g == 0.0 {
            // center of the domain
            -self.semi_axes().iter().cloned().fold(f64::INFINITY, f64::min)
        } else {
            q / g
        }
    }

    /// Radial projection onto the boundary (exact for centered quadrics).
    pub fn snap(&self, x: &Vec3) -> Vec3 {
        let q = self.implicit(x);
        let s = 1.0 / (q + 1.0).sqrt();
        let mut y = scale(x, s);
        if self.dim() == 2 {
            y[2] = 0.0;
        }
        y
    }

    fn check_velocity(&self, v: &Vec3) -> Result<()> {
        let n2: f64 = (0..self.dim()).map(|i| v[i] * v[i]).sum();
        if !(n2 > 0.0) || !n2.is_finite() {
            return Err(Error::domain("velocity must be nonzero and finite"));
        }
        Ok(())
    }

    fn check_closure(&self, x: &Vec3) -> Result<()> {
        let d = self.signed_distance(x);
        if d > SURFACE_TOL {
            return Err(Error::domain(format!("point {:?} lies outside the closed domain (distance {d:e})", &x[..self.dim()])));
        }
        Ok(())
    }

    /// Exit time along x + t v (forward) or x − t v (backward).
    ///
    /// For boundary points this is τ_±, which is zero on the side where the
    /// ray leaves immediately.
    pub fn exit_time(&self, x: &Vec3, v: &Vec3, direction: Direction) -> Result<f64> {
        self.check_velocity(v)?;
        self.check_closure(x)?;
        let w = match direction {
            Direction::Forward => *v,
            Direction::Backward => scale(v, -1.0),
        };
        let mut x = *x;
        if self.signed_distance(&x).abs() <= SURFACE_TOL {
            x = self.snap(&x);
        }
        Ok(self.forward_root(&x, &w))
    }

    /// Largest root of q(x + t w) = 0, clamped at zero; assumes x ∈ Ω̄.
    pub fn forward_root(&self, x: &Vec3, w: &Vec3) -> f64 {
        let mut a = 0.0;
        let mut b = 0.0;
        for i in 0..self.dim() {
            let s2 = self.semi[i] * self.semi[i];
            a += w[i] * w[i] / s2;
            b += x[i] * w[i] / s2;
        }
        let c = self.implicit(x).min(0.0);
        let disc = (b * b - a * c).max(0.0);
        let sq = disc.sqrt();
        if b < 0.0 {
            (sq - b) / a
        } else if b + sq == 0.0 {
            0.0
        } else {
            (-c / (b + sq)).max(0.0)
        }
    }

    pub fn outward_normal(&self, x: &Vec3) -> Result<Vec3> {
        if self.signed_distance(x).abs() > SURFACE_TOL {
            return Err(Error::domain(format!("point {:?} is not on the boundary", &x[..self.dim()])));
        }
        let y = self.snap(x);
        Ok(self.normal_unchecked(&y))
    }

    pub(crate) fn normal_unchecked(&self, x: &Vec3) -> Vec3 {
        let g = self.gradient(x);
        scale(&g, 1.0 / norm(&g))
    }

    /// Boundary point at chart parameter(s); periodic parameters are wrapped.
    pub fn boundary_chart(&self, param: [f64; 2]) -> BoundaryPoint {
        match self.shape {
            Shape::Disk | Shape::Ellipse { .. } => {
                let s = param[0].rem_euclid(2.0 * PI);
                let x = [self.semi[0] * s.cos(), self.semi[1] * s.sin(), 0.0];
                BoundaryPoint { param: [s, 0.0], x, n: self.normal_unchecked(&x) }
            }
            Shape::Ball => {
                let th = param[0];
                let ph = param[1].rem_euclid(2.0 * PI);
                let x = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
                BoundaryPoint { param: [th, ph], x, n: x }
            }
        }
    }

    /// Density of the surface measure with respect to the chart parameters.
    pub fn surface_weight(&self, param: [f64; 2]) -> f64 {
        match self.shape {
            Shape::Disk | Shape::Ellipse { .. } => {
                let s = param[0];
                (self.semi[0].powi(2) * s.sin().powi(2) + self.semi[1].powi(2) * s.cos().powi(2)).sqrt()
            }
            Shape::Ball => param[0].sin().abs(),
        }
    }

    /// Inverse chart for planar shapes: the parameter of a boundary point.
    pub fn chart_param(&self, x: &Vec3) -> f64 {
        (x[1] / self.semi[1]).atan2(x[0] / self.semi[0]).rem_euclid(2.0 * PI)
    }

    /// Quadrature of the boundary surface measure: `n` nodes for planar
    /// shapes (periodic trapezoid), `n/2 × n` nodes on the sphere
    /// (Gauss in cos θ times trapezoid in azimuth).
    pub fn boundary_quadrature(&self, n: usize) -> Vec<(BoundaryPoint, f64)> {
        match self.shape {
            Shape::Disk | Shape::Ellipse { .. } => {
                let h = 2.0 * PI / n as f64;
                (0..n)
                    .map(|i| {
                        let s = i as f64 * h;
                        (self.boundary_chart([s, 0.0]), self.surface_weight([s, 0.0]) * h)
                    })
                    .collect()
            }
            Shape::Ball => {
                let rule = GaussRule::new((n / 2).max(1));
                let h = 2.0 * PI / n as f64;
                let mut out = Vec::new();
                for (u, w) in rule.nodes.iter().zip(&rule.weights) {
                    let th = u.acos();
                    for j in 0..n {
                        let ph = j as f64 * h;
                        out.push((self.boundary_chart([th, ph]), w * h));
                    }
                }
                out
            }
        }
    }

    pub fn surface_measure(&self, n: usize) -> f64 {
        self.boundary_quadrature(n).iter().map(|(_, w)| w).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_exit_examples() {
        let d = Domain::disk();
        let t = d.exit_time(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], Direction::Backward).unwrap();
        assert!((t - 1.0).abs() < 1e-15);
        let t = d.exit_time(&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0], Direction::Forward).unwrap();
        assert!((t - 2.0).abs() < 1e-15);
        let w = [-(0.5f64).sqrt(), (0.5f64).sqrt(), 0.0];
        let t = d.exit_time(&[1.0, 0.0, 0.0], &w, Direction::Forward).unwrap();
        assert!((t - 2f64.sqrt()).abs() < 1e-14);
        // leaving immediately
        let t = d.exit_time(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], Direction::Forward).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn errors() {
        let d = Domain::disk();
        assert!(d.exit_time(&[0.0; 3], &[0.0; 3], Direction::Forward).is_err());
        assert!(d.exit_time(&[1.1, 0.0, 0.0], &[1.0, 0.0, 0.0], Direction::Forward).is_err());
        assert!(d.outward_normal(&[0.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn normals() {
        let d = Domain::disk();
        assert_eq!(d.outward_normal(&[1.0, 0.0, 0.0]).unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(d.outward_normal(&[0.0, -1.0, 0.0]).unwrap(), [0.0, -1.0, 0.0]);
        let e = Domain::ellipse(2.0, 1.0).unwrap();
        assert_eq!(e.outward_normal(&[2.0, 0.0, 0.0]).unwrap(), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn diameters() {
        assert_eq!(Domain::disk().diameter(), 2.0);
        assert_eq!(Domain::ellipse(2.0, 1.0).unwrap().diameter(), 4.0);
        assert_eq!(Domain::ball().diameter(), 2.0);
    }
}
