//! Small quadrature toolkit shared by the operator modules.
//!
//! Gauss–Legendre panels for smooth integrands, and double-exponential
//! (tanh-sinh / exp-sinh) rules for integrands with algebraic or logarithmic
//! endpoint singularities. The double-exponential rules also report how much
//! of the sum sits in the outermost nodes, which is how non-integrable
//! endpoint behavior is detected.

use std::f64::consts::{FRAC_PI_2, PI};

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "Gauss–Legendre order must be positive");
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order.div_ceil(2) {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(order, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(order, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A fixed Gauss–Legendre rule that can be mapped onto arbitrary panels.
#[derive(Debug, Clone)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(order: usize) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Integrates `f` over a single panel [a, b].
    pub fn panel<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Composite rule on `panels` equal panels of [a, b].
    pub fn composite<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|i| {
                let lo = a + i as f64 * h;
                self.panel(lo, lo + h, &mut f)
            })
            .sum()
    }

    /// Mapped nodes and weights for [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, w * half))
    }
}

/// Outcome of a double-exponential quadrature.
#[derive(Debug, Clone, Copy)]
pub struct DeEstimate {
    pub value: f64,
    /// Largest |f·w| among the two outermost nodes, relative to |value|.
    pub edge_fraction: f64,
    /// False if any sampled value was non-finite.
    pub finite: bool,
}

impl DeEstimate {
    /// True when the estimate is finite and the endpoint contributions have
    /// decayed, i.e. the integral converges at the probed endpoints.
    pub fn converged(&self) -> bool {
        self.finite && self.value.is_finite() && self.edge_fraction < 1e-6
    }
}

const TANH_SINH_UMAX: f64 = 6.0;

/// Tanh-sinh quadrature on [a, b] with `2 * half_nodes + 1` nodes.
///
/// Endpoint abscissae are formed from their distance to the endpoint, so
/// integrands like `t^-0.9` on [0, b] are sampled at tiny positive `t`
/// rather than rounded onto the singularity.
pub fn tanh_sinh<F: FnMut(f64) -> f64>(a: f64, b: f64, half_nodes: usize, mut f: F) -> DeEstimate {
    let len = b - a;
    let h = TANH_SINH_UMAX / half_nodes as f64;
    let mut sum = 0.0;
    let mut edge = 0.0f64;
    let mut finite = true;
    let mut term = |u: f64, k: usize| -> f64 {
        let v = FRAC_PI_2 * u.sinh();
        let e = (-2.0 * v.abs()).exp();
        // distance from the nearer endpoint: len / (1 + exp(2|v|))
        let dist = len * e / (1.0 + e);
        if dist <= 0.0 {
            return 0.0;
        }
        let x = if u >= 0.0 { b - dist } else { a + dist };
        let sech2 = 4.0 * e / ((1.0 + e) * (1.0 + e));
        let w = 0.5 * len * FRAC_PI_2 * u.cosh() * sech2;
        let fx = f(x);
        let t = fx * w;
        if !t.is_finite() {
            finite = false;
            return 0.0;
        }
        if k == half_nodes {
            edge = edge.max(t.abs());
        }
        t
    };
    sum += term(0.0, 0);
    for k in 1..=half_nodes {
        let u = k as f64 * h;
        sum += term(u, k) + term(-u, k);
    }
    let value = sum * h;
    let edge_fraction = if value != 0.0 { edge * h / value.abs() } else if edge == 0.0 { 0.0 } else { f64::INFINITY };
    DeEstimate { value, edge_fraction, finite }
}

/// Exp-sinh quadrature on [a, ∞). Suited to integrands with an integrable
/// singularity at `a` and exponential or fast algebraic decay.
pub fn exp_sinh<F: FnMut(f64) -> f64>(a: f64, step: f64, mut f: F) -> DeEstimate {
    const U_LO: f64 = -5.5;
    const U_HI: f64 = 4.0;
    let k_lo = (U_LO / step).floor() as i64;
    let k_hi = (U_HI / step).ceil() as i64;
    let mut sum = 0.0;
    let mut edge = 0.0f64;
    let mut finite = true;
    for k in k_lo..=k_hi {
        let u = k as f64 * step;
        let e = (FRAC_PI_2 * u.sinh()).exp();
        let x = a + e;
        let w = FRAC_PI_2 * u.cosh() * e;
        let t = f(x) * w;
        if !t.is_finite() {
            if e.is_finite() && x > a {
                finite = false;
            }
            continue;
        }
        if k == k_lo || k == k_hi {
            edge = edge.max(t.abs());
        }
        sum += t;
    }
    let value = sum * step;
    let edge_fraction = if value != 0.0 { edge * step / value.abs() } else { 0.0 };
    DeEstimate { value, edge_fraction, finite }
}

/// Natural cubic spline through uniformly spaced samples.
#[derive(Debug, Clone)]
pub struct UniformCubicSpline {
    x0: f64,
    h: f64,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl UniformCubicSpline {
    pub fn new(x0: f64, h: f64, values: Vec<f64>) -> Self {
        let n = values.len();
        assert!(n >= 3, "spline needs at least three samples");
        // Solve the tridiagonal system for interior second derivatives.
        let m = n - 2;
        let mut diag = vec![4.0; m];
        let mut rhs: Vec<f64> = (1..n - 1)
            .map(|i| 6.0 * (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (h * h))
            .collect();
        for i in 1..m {
            let w = 1.0 / diag[i - 1];
            diag[i] -= w;
            rhs[i] -= w * rhs[i - 1];
        }
        let mut inner = vec![0.0; m];
        for i in (0..m).rev() {
            let upper = if i + 1 < m { inner[i + 1] } else { 0.0 };
            inner[i] = (rhs[i] - upper) / diag[i];
        }
        let mut second = vec![0.0; n];
        second[1..n - 1].copy_from_slice(&inner);
        Self { x0, h, values, second }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x0, self.x0 + self.h * (self.values.len() - 1) as f64)
    }

    pub fn edge_values(&self) -> (f64, f64) {
        (self.values[0], *self.values.last().expect("non-empty"))
    }

    /// Spline value; zero outside the sampled interval.
    pub fn eval(&self, x: f64) -> f64 {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&x) {
            return 0.0;
        }
        let pos = (x - self.x0) / self.h;
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let b = pos - i as f64;
        let a = 1.0 - b;
        let h2 = self.h * self.h / 6.0;
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h2
    }
}
