//! Gauss–Legendre rules and barycentric/Legendre helpers for polynomial
//! data on Gauss nodes.

use gauss_quad::GaussLegendre;

/// Gauss–Legendre nodes and weights on [-1, 1], sorted by node.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss rule needs at least one node");
        let rule = GaussLegendre::new(n.try_into().expect("n >= 1"));
        let mut pairs: Vec<(f64, f64)> = rule.iter().map(|(x, w)| (*x, *w)).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        GaussRule {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to (a, b).
    pub fn on_interval(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let h = 0.5 * (b - a);
        let m = 0.5 * (a + b);
        (
            self.nodes.iter().map(|x| m + h * x).collect(),
            self.weights.iter().map(|w| h * w).collect(),
        )
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let h = 0.5 * (b - a);
        let m = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(m + h * x)).sum::<f64>() * h
    }

    /// Composite rule over `panels` equal panels of (a, b).
    pub fn integrate_composite<F: Fn(f64) -> f64>(&self, a: f64, b: f64, panels: usize, f: F) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let lo = a + k as f64 * h;
                self.integrate(lo, lo + h, &f)
            })
            .sum()
    }
}

/// Lagrange interpolation through a fixed node set (barycentric form).
#[derive(Debug, Clone)]
pub struct Barycentric {
    nodes: Vec<f64>,
    bw: Vec<f64>,
}

impl Barycentric {
    pub fn new(nodes: &[f64]) -> Self {
        let n = nodes.len();
        let mut bw = vec![1.0; n];
        for j in 0..n {
            for k in 0..n {
                if k != j {
                    bw[j] /= nodes[j] - nodes[k];
                }
            }
        }
        Barycentric { nodes: nodes.to_vec(), bw }
    }

    /// Values of every Lagrange basis polynomial at `x`.
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let n = self.nodes.len();
        let mut out = vec![0.0; n];
        for j in 0..n {
            if x == self.nodes[j] {
                out[j] = 1.0;
                return out;
            }
        }
        let mut denom = 0.0;
        for j in 0..n {
            let t = self.bw[j] / (x - self.nodes[j]);
            out[j] = t;
            denom += t;
        }
        for o in out.iter_mut() {
            *o /= denom;
        }
        out
    }

    /// Differentiation matrix at the nodes: (D u)_i = p′(x_i) for the interpolant p.
    pub fn derivative_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.nodes.len();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if i != j {
                    d[i][j] = self.bw[j] / self.bw[i] / (self.nodes[i] - self.nodes[j]);
                    diag -= d[i][j];
                }
            }
            d[i][i] = diag;
        }
        d
    }
}

/// Legendre polynomials P_0..P_{n-1} at x.
pub fn legendre_values(n: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n.max(2)];
    p[0] = 1.0;
    p[1] = x;
    for k in 1..n.saturating_sub(1) {
        let kf = k as f64;
        p[k + 1] = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
    }
    p.truncate(n);
    p
}

/// Maps nodal values on an n-point Gauss rule to the coefficients of the
/// antiderivative `A(x) = ∫_{-1}^{x} p(t) dt` in the Legendre basis P_0..P_n.
#[derive(Debug, Clone)]
pub struct LegendreAntiderivative {
    /// rows: antiderivative coefficient index (0..=n), cols: nodal index
    matrix: Vec<Vec<f64>>,
}

impl LegendreAntiderivative {
    pub fn new(rule: &GaussRule) -> Self {
        let n = rule.len();
        // nodal -> Legendre coefficients of the interpolant
        let pv: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| legendre_values(n, x)).collect();
        let mut to_coef = vec![vec![0.0; n]; n];
        for k in 0..n {
            for m in 0..n {
                to_coef[k][m] = (2.0 * k as f64 + 1.0) / 2.0 * rule.weights[m] * pv[m][k];
            }
        }
        // ∫_{-1}^x P_k = (P_{k+1} - P_{k-1}) / (2k+1) for k >= 1, ∫ P_0 = P_1 + P_0
        let mut matrix = vec![vec![0.0; n]; n + 1];
        for m in 0..n {
            let c0 = to_coef[0][m];
            matrix[0][m] += c0;
            matrix[1][m] += c0;
            for k in 1..n {
                let c = to_coef[k][m] / (2.0 * k as f64 + 1.0);
                matrix[k + 1][m] += c;
                matrix[k - 1][m] -= c;
            }
        }
        LegendreAntiderivative { matrix }
    }

    pub fn coefficients(&self, values: &[f64]) -> Vec<f64> {
        self.matrix.iter().map(|row| row.iter().zip(values).map(|(a, b)| a * b).sum()).collect()
    }
}

/// Evaluates a Legendre series at x by Clenshaw recurrence.
pub fn legendre_series(coef: &[f64], x: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for k in (0..coef.len()).rev() {
        let kf = k as f64;
        let alpha = (2.0 * kf + 1.0) / (kf + 1.0) * x;
        let beta = (kf + 1.0) / (kf + 2.0);
        let b0 = coef[k] + alpha * b1 - beta * b2;
        b2 = b1;
        b1 = b0;
    }
    b1
}
