//! Weighted harmonic extensions to the upper half space.
//!
//! The boundary operator is recovered as the weighted normal derivative of
//! the solution of `∂_t(a ∂_t v) + a (v_rr + (k/r) v_r) = 0`, `k = 2l+n−1`,
//! after reduction to a single spherical-harmonic branch.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::bernstein::{asymptotic_exponent_fit, WeightProfile};
use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, tanh_sinh, GaussRule};
use crate::specfun::{bessel_k_scaled, gamma, reduced_radial_profile, SphericalHarmonic};

/// `d_s = 2^{1−2s} Γ(1−s)/Γ(s) = −lim t^{1−2s} φ'(t)`.
pub fn neumann_constant(s: f64) -> f64 {
    (1.0 - 2.0 * s).exp2() * gamma(1.0 - s) / gamma(s)
}

fn check_order(s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("s must lie in (0, 1), got {s}")))
    }
}

fn profile_scale(s: f64) -> f64 {
    (1.0 - s).exp2() / gamma(s)
}

/// `2^{1−s}/Γ(s) · t^s K_s(t)`.
fn phi_closed(s: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    profile_scale(s) * (s * t.ln() - t).exp() * bessel_k_scaled(s, t)
}

/// `−2^{1−s}/Γ(s) · t^s K_{1−s}(t)`; the value at `t = 0` is the one-sided limit.
fn dphi_closed(s: f64, t: f64) -> f64 {
    if t == 0.0 {
        return match s.partial_cmp(&0.5) {
            Some(std::cmp::Ordering::Less) => f64::NEG_INFINITY,
            Some(std::cmp::Ordering::Equal) => -1.0,
            _ => 0.0,
        };
    }
    -profile_scale(s) * (s * t.ln() - t).exp() * bessel_k_scaled(1.0 - s, t)
}

/// Relative residual of `φ'' + ((1−2s)/t) φ' − φ` at `t > 0`, with `φ''`
/// taken by an eighth-order difference of `φ'`.
pub fn profile_ode_residual(s: f64, t: f64) -> f64 {
    const W: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
    let h = 0.05 * t.min(1.0);
    let d = |x: f64| dphi_closed(s, x);
    let ddphi = (1..=4).map(|k| W[k - 1] * (d(t + k as f64 * h) - d(t - k as f64 * h))).sum::<f64>() / h;
    let phi = phi_closed(s, t);
    let drift = (1.0 - 2.0 * s) / t * d(t);
    (ddphi + drift - phi).abs() / (ddphi.abs() + drift.abs() + phi.abs())
}

/// Samples of the vertical profile `φ` with `φ(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePhi {
    label: String,
    order: Option<f64>,
    grid: Vec<f64>,
    values: Vec<f64>,
    derivatives: Vec<f64>,
}

impl ProfilePhi {
    pub(crate) fn new(label: String, grid: Vec<f64>, values: Vec<f64>, derivatives: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() || grid.len() != derivatives.len() {
            return Err(Error::Shape("profile samples must share one grid of at least two points".into()));
        }
        if grid[0] != 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("profile grid must start at 0 and increase".into()));
        }
        if (values[0] - 1.0).abs() > 1e-12 || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("profile values".into()));
        }
        Ok(Self { label, order: None, grid, values, derivatives })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Order `s` for profiles of the weight `t^{1−2s}`.
    pub fn order(&self) -> Option<f64> {
        self.order
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `φ'` at the grid points; the entry at 0 is the one-sided limit and may
    /// be `−∞`.
    pub fn derivatives(&self) -> &[f64] {
        &self.derivatives
    }

    fn locate(&self, t: f64) -> usize {
        self.grid.partition_point(|&g| g <= t).clamp(1, self.grid.len() - 1) - 1
    }

    /// `φ(t)`: closed form when available, cubic Hermite interpolation
    /// otherwise (constant beyond the last sample).
    pub fn eval(&self, t: f64) -> f64 {
        if let Some(s) = self.order {
            return phi_closed(s, t);
        }
        if t >= *self.grid.last().expect("non-empty") {
            return *self.values.last().expect("non-empty");
        }
        let i = self.locate(t);
        let (t0, t1) = (self.grid[i], self.grid[i + 1]);
        let h = t1 - t0;
        let x = (t - t0) / h;
        let (h00, h10, h01, h11) =
            (2.0 * x.powi(3) - 3.0 * x * x + 1.0, x.powi(3) - 2.0 * x * x + x, -2.0 * x.powi(3) + 3.0 * x * x, x.powi(3) - x * x);
        let (d0, d1) = (self.derivatives[i], self.derivatives[i + 1]);
        if !d0.is_finite() {
            return self.values[i] + x * (self.values[i + 1] - self.values[i]);
        }
        h00 * self.values[i] + h10 * h * d0 + h01 * self.values[i + 1] + h11 * h * d1
    }

    pub fn derivative(&self, t: f64) -> f64 {
        if let Some(s) = self.order {
            return dphi_closed(s, t);
        }
        if t >= *self.grid.last().expect("non-empty") {
            return *self.derivatives.last().expect("non-empty");
        }
        let i = self.locate(t);
        let x = (t - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        self.derivatives[i] + x * (self.derivatives[i + 1] - self.derivatives[i])
    }
}

/// Vertical mesh `t_j = T (j/M)^γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerticalMesh {
    pub t_max: f64,
    pub cells: usize,
    pub grading: f64,
}

impl VerticalMesh {
    /// `T = 20`, `M = 400`, `γ = max(2, 2/(2−2s))`.
    pub fn graded(s: f64) -> Self {
        Self { t_max: 20.0, cells: 400, grading: 2f64.max(2.0 / (2.0 - 2.0 * s)) }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let m = self.cells as f64;
        (0..=self.cells).map(|j| self.t_max * (j as f64 / m).powf(self.grading)).collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) || self.cells < 16 || !(self.grading >= 1.0) {
            return Err(Error::UnderResolved(format!("vertical mesh {self:?}")));
        }
        Ok(())
    }
}

/// The bounded profile for the weight `t^{1−2s}`, checked against its ODE
/// on the mesh nodes in `[1e−3, 20]`.
pub fn solve_profile_phi(s: f64, mesh: &VerticalMesh) -> Result<ProfilePhi> {
    check_order(s)?;
    mesh.validate()?;
    let grid = mesh.nodes();
    let checked: Vec<f64> = grid.iter().copied().filter(|t| (1e-3..=20.0).contains(t)).collect();
    if checked.len() < 16 {
        return Err(Error::UnderResolved(format!("only {} mesh nodes in [1e-3, 20]", checked.len())));
    }
    let worst = checked.iter().map(|&t| profile_ode_residual(s, t)).fold(0.0, f64::max);
    if !(worst <= 1e-6) {
        return Err(Error::UnderResolved(format!("profile ODE residual {worst:e}")));
    }
    let values: Vec<f64> = grid.iter().map(|&t| phi_closed(s, t)).collect();
    let derivatives: Vec<f64> = grid.iter().map(|&t| dphi_closed(s, t)).collect();
    if values.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-14)) || values.iter().any(|v| !(0.0..=1.0 + 1e-14).contains(v)) {
        return Err(Error::Growth("profile is not the bounded solution".into()));
    }
    let mut phi = ProfilePhi::new(format!("s={s}"), grid, values, derivatives)?;
    phi.order = Some(s);
    Ok(phi)
}

/// `lim_{t→0} t^{1−2s} φ'(t)` by Richardson extrapolation over the three
/// smallest positive nodes.
pub fn neumann_trace(phi: &ProfilePhi, s: f64) -> Result<f64> {
    check_order(s)?;
    let pts: Vec<(f64, f64)> = phi
        .grid()
        .iter()
        .zip(phi.derivatives())
        .skip(1)
        .take(4)
        .map(|(&t, &d)| (t, t.powf(1.0 - 2.0 * s) * d))
        .collect();
    if pts.len() < 4 || pts.iter().any(|p| !p.1.is_finite()) {
        return Err(Error::NonConvergent("profile has too few finite samples near 0".into()));
    }
    let p1 = 2.0 - 2.0 * s;
    let p2 = if (2.0 - p1).abs() < 0.25 { p1 + 2.0 } else { 2.0 };
    let extrapolate = |w: &[(f64, f64)]| -> f64 {
        let m = nalgebra::Matrix3::from_fn(|i, j| match j {
            0 => 1.0,
            1 => w[i].0.powf(p1),
            _ => w[i].0.powf(p2),
        });
        let b = nalgebra::Vector3::new(w[0].1, w[1].1, w[2].1);
        m.lu().solve(&b).map_or(f64::NAN, |x| x[0])
    };
    let value = extrapolate(&pts[..3]);
    let check = extrapolate(&pts[1..4]);
    if !value.is_finite() || (value - check).abs() > 1e-3 * value.abs() {
        return Err(Error::NonConvergent(format!("extrapolated {value} vs {check}")));
    }
    if !(value < 0.0) {
        return Err(Error::NonConvergent(format!("trace {value} is not negative")));
    }
    Ok(value)
}

/// Horizontal axis of the extension domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseAxis {
    /// `[0, r_max]` with regularity at 0.
    Radial { r_max: f64, cells: usize },
    /// `[−half_length, half_length]`.
    Line { half_length: f64, cells: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub base: BaseAxis,
    pub vertical: VerticalMesh,
}

impl Geometry {
    pub fn radial(r_max: f64, cells: usize, vertical: VerticalMesh) -> Self {
        Self { base: BaseAxis::Radial { r_max, cells }, vertical }
    }

    pub fn line(half_length: f64, cells: usize, vertical: VerticalMesh) -> Self {
        Self { base: BaseAxis::Line { half_length, cells }, vertical }
    }

    /// `R_max = 40` with spacing 0.05 and the graded vertical mesh for `s`.
    pub fn default_radial(s: f64) -> Self {
        Self::radial(40.0, 800, VerticalMesh::graded(s))
    }
}

/// Finite-volume data of the horizontal axis.
#[derive(Debug, Clone)]
struct Axis {
    nodes: Vec<f64>,
    volume: Vec<f64>,
    /// Conductance between nodes `i` and `i + 1`.
    flux: Vec<f64>,
    unknowns: std::ops::Range<usize>,
}

impl Axis {
    fn new(base: &BaseAxis, k: f64) -> Result<Self> {
        let (lo, hi, cells, radial) = match *base {
            BaseAxis::Radial { r_max, cells } => (0.0, r_max, cells, true),
            BaseAxis::Line { half_length, cells } => (-half_length, half_length, cells, false),
        };
        let h = (hi - lo) / cells as f64;
        if cells < 8 || !(h > 0.0 && h <= 0.25) {
            return Err(Error::UnderResolved(format!("horizontal spacing {h} with {cells} cells")));
        }
        let nodes: Vec<f64> = (0..=cells).map(|i| lo + i as f64 * h).collect();
        let moment = |a: f64, b: f64| if radial { (b.powf(k + 1.0) - a.powf(k + 1.0)) / (k + 1.0) } else { b - a };
        let volume = nodes.iter().map(|&x| moment((x - 0.5 * h).max(lo), (x + 0.5 * h).min(hi))).collect();
        let flux = nodes.windows(2).map(|w| if radial { (0.5 * (w[0] + w[1])).powf(k) / h } else { 1.0 / h }).collect();
        let unknowns = if radial { 0..cells } else { 1..cells };
        Ok(Self { nodes, volume, flux, unknowns })
    }

    /// `Σ_j S_ij v_j` with `S` the symmetric stiffness, at node `i`.
    fn stiffness_row(&self, v: &[f64], i: usize) -> f64 {
        let mut acc = 0.0;
        if i > 0 {
            acc += self.flux[i - 1] * (v[i] - v[i - 1]);
        }
        if i + 1 < self.nodes.len() {
            acc += self.flux[i] * (v[i] - v[i + 1]);
        }
        acc
    }
}

/// Finite-volume data of the vertical axis.
#[derive(Debug, Clone)]
struct Vertical {
    nodes: Vec<f64>,
    mass: Vec<f64>,
    /// `1/∫_{t_j}^{t_{j+1}} a^{−1}`.
    cond: Vec<f64>,
    top_weight: f64,
    order: Option<f64>,
}

impl Vertical {
    fn new(mesh: &VerticalMesh, w: &WeightProfile) -> Result<Self> {
        mesh.validate()?;
        let nodes = mesh.nodes();
        let m = nodes.len() - 1;
        let mid = |j: usize| 0.5 * (nodes[j] + nodes[j + 1]);
        let mass = (0..=m)
            .map(|j| {
                let lo = if j == 0 { 0.0 } else { mid(j - 1) };
                let hi = if j == m { nodes[m] } else { mid(j) };
                w.integral(lo, hi)
            })
            .collect::<Result<Vec<_>>>()?;
        let cond = nodes
            .windows(2)
            .map(|p| w.inverse_integral(p[0], p[1]).map(|x| 1.0 / x))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Singular(format!("weight not invertible near the boundary: {e}")))?;
        let order = w.power_exponent().map(|alpha| 0.5 * (1.0 - alpha)).filter(|s| *s > 0.0 && *s < 1.0);
        Ok(Self { top_weight: w.eval(mesh.t_max), nodes, mass, cond, order })
    }

    /// Robin coefficient `a(T)·κ(μ)` at the top, `κ = −φ'/φ` of the scaled
    /// profile; zero (Neumann) for weights without a closed-form profile.
    fn top(&self, mu: f64) -> f64 {
        match self.order {
            Some(s) if mu > 0.0 => {
                let z = mu.sqrt() * self.nodes.last().expect("non-empty");
                self.top_weight * mu.sqrt() * bessel_k_scaled(1.0 - s, z) / bessel_k_scaled(s, z)
            }
            _ => 0.0,
        }
    }

    /// Solves `(T + μ M) w = f` on the unknowns `j = 1..=M`.
    fn solve(&self, mu: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let m = self.nodes.len() - 1;
        let diag = |j: usize| self.cond[j - 1] + if j < m { self.cond[j] } else { self.top(mu) } + mu * self.mass[j];
        let mut c = vec![0.0; m + 1];
        let mut d = vec![0.0; m + 1];
        for j in 1..=m {
            let off = if j > 1 { -self.cond[j - 1] } else { 0.0 };
            let pivot = diag(j) - off * c[j - 1];
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::Singular(format!("vertical pivot {pivot} at row {j}")));
            }
            c[j] = if j < m { -self.cond[j] / pivot } else { 0.0 };
            d[j] = (rhs[j] - off * d[j - 1]) / pivot;
        }
        let mut w = vec![0.0; m + 1];
        w[m] = d[m];
        for j in (1..m).rev() {
            w[j] = d[j] - c[j] * w[j + 1];
        }
        Ok(w)
    }

    /// Discrete profile for the unit eigenvalue with `φ(0) = 1`.
    fn unit_profile(&self) -> Result<Vec<f64>> {
        let mut rhs = vec![0.0; self.nodes.len()];
        rhs[1] = self.cond[0];
        let mut w = self.solve(1.0, &rhs)?;
        w[0] = 1.0;
        Ok(w)
    }

    fn row(&self, v: &[f64], j: usize) -> f64 {
        self.cond[j - 1] * (v[j] - v[j - 1]) + self.cond[j] * (v[j] - v[j + 1])
    }
}

type RadialTrace = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

#[derive(Clone)]
struct SeparatedField {
    trace: RadialTrace,
    phi: ProfilePhi,
    i_phi: f64,
    i_dphi: f64,
    tail: f64,
    r_max: f64,
}

#[derive(Debug, Clone)]
struct GridField {
    geometry: Geometry,
    base: Axis,
    vertical: Vertical,
    /// Row-major, row `j` holds the horizontal slice at `t_j`.
    values: Vec<f64>,
}

#[derive(Clone)]
enum Repr {
    Grid(Box<GridField>),
    Separated(Box<SeparatedField>),
}

/// A solution of the reduced weighted extension problem.
#[derive(Clone)]
pub struct ExtensionField {
    weight: WeightProfile,
    degree: usize,
    dim: usize,
    repr: Repr,
}

impl fmt::Debug for ExtensionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.repr {
            Repr::Grid(g) => format!("grid {:?}", g.geometry),
            Repr::Separated(s) => format!("separated to r = {}", s.r_max),
        };
        f.debug_struct("ExtensionField")
            .field("weight", &self.weight.label())
            .field("degree", &self.degree)
            .field("dim", &self.dim)
            .field("kind", &kind)
            .finish()
    }
}

/// Weighted vertical integrals of one column of the field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Column {
    pub value: f64,
    pub radial_slope: f64,
    /// `∫ a v_r² dt`
    pub kinetic_r: f64,
    /// `∫ a v_t² dt`
    pub kinetic_t: f64,
    /// Bound on the truncated part of both integrals beyond the mesh top.
    pub tail_bound: f64,
}

impl ExtensionField {
    /// `v(r) φ(t)` for a reduced trace with `L_k v = −v`. `trace` returns
    /// `(v, v_r)`.
    pub fn separated<F>(trace: F, phi: ProfilePhi, degree: usize, dim: usize, r_max: f64) -> Result<Self>
    where
        F: Fn(f64) -> (f64, f64) + Send + Sync + 'static,
    {
        let s = phi.order().ok_or_else(|| Error::Domain("separated fields need a closed-form profile".into()))?;
        if !(r_max > 0.0) {
            return Err(Error::Domain(format!("r_max must be positive, got {r_max}")));
        }
        let weight = WeightProfile::fractional(s)?;
        const TOP: f64 = 60.0;
        let integrate = |f: &dyn Fn(f64) -> f64| -> Result<f64> {
            let parts = [tanh_sinh(0.0, 1.0, 96, f), tanh_sinh(1.0, 8.0, 96, f), tanh_sinh(8.0, TOP, 96, f)];
            if parts.iter().all(|p| p.converged()) {
                Ok(parts.iter().map(|p| p.value).sum())
            } else {
                Err(Error::Quadrature("profile energy integral".into()))
            }
        };
        let a = |t: f64| t.powf(1.0 - 2.0 * s);
        let i_phi = integrate(&|t| a(t) * phi_closed(s, t).powi(2))?;
        let i_dphi = integrate(&|t| a(t) * dphi_closed(s, t).powi(2))?;
        // |φ'| <= C/t beyond the top
        let c = TOP * dphi_closed(s, TOP).abs().max(phi_closed(s, TOP));
        let tail = c * c * TOP.powf(-2.0 * s) / (2.0 * s);
        Ok(Self {
            weight,
            degree,
            dim,
            repr: Repr::Separated(Box::new(SeparatedField { trace: Arc::new(trace), phi, i_phi, i_dphi, tail, r_max })),
        })
    }

    /// Separated field of the reduced classical solution of degree `l` in
    /// dimension `n`: `v_l = r^{−ν} J_ν(r)`, `ν = n/2 + l − 1`.
    pub fn classical(dim: usize, degree: usize, s: f64, r_max: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::UnsupportedDimension(dim));
        }
        let phi = solve_profile_phi(s, &VerticalMesh::graded(s))?;
        Self::separated(
            move |r| (reduced_radial_profile(dim, degree, r), -r * reduced_radial_profile(dim, degree + 1, r)),
            phi,
            degree,
            dim,
            r_max,
        )
    }

    pub fn weight(&self) -> &WeightProfile {
        &self.weight
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `k = 2l + n − 1`.
    pub fn curvature(&self) -> f64 {
        (2 * self.degree + self.dim) as f64 - 1.0
    }

    pub fn is_grid(&self) -> bool {
        matches!(self.repr, Repr::Grid(_))
    }

    /// Largest radius (or half length) represented.
    pub fn extent(&self) -> f64 {
        match &self.repr {
            Repr::Grid(g) => *g.base.nodes.last().expect("non-empty"),
            Repr::Separated(s) => s.r_max,
        }
    }

    fn grid(&self) -> Result<&GridField> {
        match &self.repr {
            Repr::Grid(g) => Ok(g),
            Repr::Separated(_) => Err(Error::Domain("operation needs a discrete field".into())),
        }
    }

    pub fn horizontal_nodes(&self) -> Result<&[f64]> {
        Ok(&self.grid()?.base.nodes)
    }

    pub fn vertical_nodes(&self) -> Result<&[f64]> {
        Ok(&self.grid()?.vertical.nodes)
    }

    /// Row-major samples, one row per vertical node.
    pub fn samples(&self) -> Result<&[f64]> {
        Ok(&self.grid()?.values)
    }

    /// `v(x, t)`; bilinear between nodes for discrete fields.
    pub fn value(&self, x: f64, t: f64) -> Result<f64> {
        match &self.repr {
            Repr::Separated(s) => Ok((s.trace)(x).0 * s.phi.eval(t)),
            Repr::Grid(g) => {
                let (xs, ts) = (&g.base.nodes, &g.vertical.nodes);
                let inside = |v: f64, n: &[f64]| v >= n[0] && v <= n[n.len() - 1];
                if !inside(x, xs) || !inside(t, ts) {
                    return Err(Error::OffGrid(format!("({x}, {t})")));
                }
                let bracket = |v: f64, n: &[f64]| {
                    let i = n.partition_point(|&p| p <= v).clamp(1, n.len() - 1) - 1;
                    (i, (v - n[i]) / (n[i + 1] - n[i]))
                };
                let (i, fx) = bracket(x, xs);
                let (j, ft) = bracket(t, ts);
                let nx = xs.len();
                let at = |a: usize, b: usize| g.values[b * nx + a];
                Ok((1.0 - ft) * ((1.0 - fx) * at(i, j) + fx * at(i + 1, j)) + ft * ((1.0 - fx) * at(i, j + 1) + fx * at(i + 1, j + 1)))
            }
        }
    }

    pub fn trace(&self, x: f64) -> Result<f64> {
        self.value(x, 0.0)
    }

    /// Vertical weighted integrals at radius `r`.
    pub fn column(&self, r: f64) -> Result<Column> {
        match &self.repr {
            Repr::Separated(s) => {
                if !(0.0..=s.r_max).contains(&r) {
                    return Err(Error::OffGrid(format!("r = {r}")));
                }
                let (v, vr) = (s.trace)(r);
                Ok(Column {
                    value: v,
                    radial_slope: vr,
                    kinetic_r: vr * vr * s.i_phi,
                    kinetic_t: v * v * s.i_dphi,
                    tail_bound: (v * v + vr * vr) * s.tail,
                })
            }
            Repr::Grid(g) => {
                let xs = &g.base.nodes;
                if !(r >= xs[0] && r <= xs[xs.len() - 1]) {
                    return Err(Error::OffGrid(format!("r = {r}")));
                }
                let i = xs.partition_point(|&p| p <= r).clamp(1, xs.len() - 1) - 1;
                let f = (r - xs[i]) / (xs[i + 1] - xs[i]);
                let (a, b) = (g.node_column(i, &self.weight), g.node_column(i + 1, &self.weight));
                let mix = |p: f64, q: f64| (1.0 - f) * p + f * q;
                Ok(Column {
                    value: mix(a.value, b.value),
                    radial_slope: mix(a.radial_slope, b.radial_slope),
                    kinetic_r: mix(a.kinetic_r, b.kinetic_r),
                    kinetic_t: mix(a.kinetic_t, b.kinetic_t),
                    tail_bound: a.tail_bound.max(b.tail_bound),
                })
            }
        }
    }

    /// `−a v_t` at `t = 0` for every horizontal node.
    pub fn neumann_row(&self) -> Result<Vec<f64>> {
        let g = self.grid()?;
        let nx = g.base.nodes.len();
        let trace = &g.values[..nx];
        Ok((0..nx)
            .map(|i| {
                let lap = -g.base.stiffness_row(trace, i) / g.base.volume[i];
                -(g.vertical.cond[0] * (g.values[nx + i] - trace[i]) + g.vertical.mass[0] * lap)
            })
            .collect())
    }

    /// Relative defect of `−a v_t(·, 0) = c·trace` over nodes with
    /// `|x| <= interior`. With `c = None` the constant is fitted by least
    /// squares. Returns `(c, defect)`.
    pub fn eigenrelation_defect(&self, c: Option<f64>, interior: f64) -> Result<(f64, f64)> {
        let g = self.grid()?;
        let row = self.neumann_row()?;
        let nx = g.base.nodes.len();
        let idx: Vec<usize> = (0..nx).filter(|&i| g.base.nodes[i].abs() <= interior).collect();
        let trace = &g.values[..nx];
        let scale = idx.iter().map(|&i| trace[i].abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            return Err(Error::ZeroField);
        }
        let c = c.unwrap_or_else(|| {
            let num: f64 = idx.iter().map(|&i| row[i] * trace[i]).sum();
            let den: f64 = idx.iter().map(|&i| trace[i] * trace[i]).sum();
            num / den
        });
        let worst = idx.iter().map(|&i| (row[i] - c * trace[i]).abs()).fold(0.0, f64::max);
        Ok((c, worst / (c.abs() * scale)))
    }

    /// Largest relative residual of the discrete weighted divergence over the
    /// interior rows.
    pub fn divergence_residual(&self) -> Result<f64> {
        let g = self.grid()?;
        let nx = g.base.nodes.len();
        let m = g.vertical.nodes.len() - 1;
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        let mut column = vec![0.0; m + 1];
        for i in g.base.unknowns.clone() {
            for (j, c) in column.iter_mut().enumerate() {
                *c = g.values[j * nx + i];
            }
            for j in 1..m {
                let row = &g.values[j * nx..(j + 1) * nx];
                let r = g.base.volume[i] * g.vertical.row(&column, j) + g.vertical.mass[j] * g.base.stiffness_row(row, i);
                let size = g.base.volume[i] * (g.vertical.cond[j - 1] + g.vertical.cond[j])
                    + g.vertical.mass[j] * (g.base.flux.get(i.wrapping_sub(1)).copied().unwrap_or(0.0) + g.base.flux[i]);
                worst = worst.max(r.abs());
                scale = scale.max(size);
            }
        }
        let vmax = g.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(if vmax == 0.0 { 0.0 } else { worst / (scale * vmax) })
    }

    /// Largest `|self − other|` over the nodes of this discrete field.
    pub fn max_deviation(&self, other: &ExtensionField) -> Result<f64> {
        let g = self.grid()?;
        let nx = g.base.nodes.len();
        let mut worst = 0.0f64;
        for (j, &t) in g.vertical.nodes.iter().enumerate() {
            for (i, &x) in g.base.nodes.iter().enumerate() {
                worst = worst.max((g.values[j * nx + i] - other.value(x, t)?).abs());
            }
        }
        Ok(worst)
    }
}

impl GridField {
    fn node_column(&self, i: usize, w: &WeightProfile) -> Column {
        let nx = self.base.nodes.len();
        let m = self.vertical.nodes.len() - 1;
        let xs = &self.base.nodes;
        let at = |a: usize, j: usize| self.values[j * nx + a];
        let slope = |j: usize| -> f64 {
            if i == 0 && xs[0] == 0.0 {
                0.0
            } else if i == 0 {
                (at(1, j) - at(0, j)) / (xs[1] - xs[0])
            } else if i + 1 == nx {
                (at(i, j) - at(i - 1, j)) / (xs[i] - xs[i - 1])
            } else {
                (at(i + 1, j) - at(i - 1, j)) / (xs[i + 1] - xs[i - 1])
            }
        };
        let kinetic_r: f64 = (0..=m).map(|j| self.vertical.mass[j] * slope(j).powi(2)).sum();
        let kinetic_t: f64 = (0..m).map(|j| self.vertical.cond[j] * (at(i, j + 1) - at(i, j)).powi(2)).sum();
        let t = &self.vertical.nodes;
        let top = t[m];
        let dt = (at(i, m) - at(i, m - 1)) / (t[m] - t[m - 1]);
        let c = top * dt.abs().max(slope(m).abs());
        let alpha = w.alpha_hint().unwrap_or(0.0).min(0.99);
        let tail_bound = c * c * w.eval(top) / top / (1.0 - alpha);
        Column { value: at(i, 0), radial_slope: slope(0), kinetic_r, kinetic_t, tail_bound }
    }
}

/// Solves the reduced extension problem with Dirichlet data `trace` at
/// `t = 0`.
///
/// The horizontal operator is diagonalized once (symmetric eigenproblem);
/// each horizontal mode then leaves a tridiagonal system in `t`. At the far
/// horizontal boundary the field takes the value `trace(R)·χ(t)`, with `χ`
/// the discrete vertical profile for the unit eigenvalue.
pub fn solve_weighted_extension<F>(trace: F, weight: &WeightProfile, geometry: &Geometry, degree: usize, dim: usize) -> Result<ExtensionField>
where
    F: Fn(f64) -> f64,
{
    let k = match geometry.base {
        BaseAxis::Radial { .. } => {
            if dim < 1 {
                return Err(Error::UnsupportedDimension(dim));
            }
            (2 * degree + dim) as f64 - 1.0
        }
        BaseAxis::Line { .. } => 0.0,
    };
    let base = Axis::new(&geometry.base, k)?;
    let vertical = Vertical::new(&geometry.vertical, weight)?;
    let nx = base.nodes.len();
    let m = vertical.nodes.len() - 1;
    let t0: Vec<f64> = base.nodes.iter().map(|&x| trace(x)).collect();
    if t0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trace".into()));
    }
    let chi = vertical.unit_profile()?;

    let mut values = vec![0.0; (m + 1) * nx];
    values[..nx].copy_from_slice(&t0);
    let boundary: Vec<usize> = (0..nx).filter(|i| !base.unknowns.contains(i)).collect();
    for &i in &boundary {
        for j in 1..=m {
            values[j * nx + i] = t0[i] * chi[j];
        }
    }

    let unknowns: Vec<usize> = base.unknowns.clone().collect();
    let nu = unknowns.len();
    let scale: Vec<f64> = unknowns.iter().map(|&i| base.volume[i].sqrt().recip()).collect();
    let mut stiff = DMatrix::<f64>::zeros(nu, nu);
    for (p, &i) in unknowns.iter().enumerate() {
        let mut e = vec![0.0; nx];
        e[i] = 1.0;
        stiff[(p, p)] = base.stiffness_row(&e, i) * scale[p] * scale[p];
        if p + 1 < nu {
            let off = -base.flux[i] * scale[p] * scale[p + 1];
            stiff[(p, p + 1)] = off;
            stiff[(p + 1, p)] = off;
        }
    }
    let eig = SymmetricEigen::new(stiff);
    let mut modes = eig.eigenvectors;
    for (p, s) in scale.iter().enumerate() {
        modes.row_mut(p).scale_mut(*s);
    }

    // rhs from the boundary values, columns j = 1..=m
    let mut rhs = DMatrix::<f64>::zeros(nu, m);
    for (p, &i) in unknowns.iter().enumerate() {
        rhs[(p, 0)] += base.volume[i] * vertical.cond[0] * t0[i];
        for &b in &boundary {
            let coupling = if b + 1 == i { base.flux[b] } else if i + 1 == b { base.flux[i] } else { 0.0 };
            if coupling != 0.0 {
                for j in 1..=m {
                    rhs[(p, j - 1)] += vertical.mass[j] * coupling * values[j * nx + b];
                }
            }
        }
    }
    let projected = modes.transpose() * rhs;
    let rows: Vec<Vec<f64>> = (0..nu)
        .into_par_iter()
        .map(|b| {
            let mut f = vec![0.0; m + 1];
            for j in 1..=m {
                f[j] = projected[(b, j - 1)];
            }
            vertical.solve(eig.eigenvalues[b], &f)
        })
        .collect::<Result<_>>()?;
    let w = DMatrix::from_fn(nu, m, |b, j| rows[b][j + 1]);
    let interior = modes * w;
    for (p, &i) in unknowns.iter().enumerate() {
        for j in 1..=m {
            values[j * nx + i] = interior[(p, j - 1)];
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("extension solve".into()));
    }
    Ok(ExtensionField {
        weight: weight.clone(),
        degree,
        dim,
        repr: Repr::Grid(Box::new(GridField { geometry: *geometry, base, vertical, values })),
    })
}

/// Quadrature grid on `S^{n−1}` exact for products of harmonics up to `l_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereGrid {
    dim: usize,
    l_max: usize,
    angles: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl SphereGrid {
    pub fn new(dim: usize, l_max: usize) -> Result<Self> {
        let (angles, weights) = match dim {
            2 => {
                let m = 4 * l_max + 4;
                let h = 2.0 * PI / m as f64;
                ((0..m).map(|k| vec![k as f64 * h]).collect(), vec![h; m])
            }
            3 => {
                let (x, wx) = gauss_legendre(2 * l_max + 2);
                let q = 4 * l_max + 4;
                let h = 2.0 * PI / q as f64;
                let mut a = Vec::with_capacity(x.len() * q);
                let mut w = Vec::with_capacity(x.len() * q);
                for (xi, wi) in x.iter().zip(&wx) {
                    for k in 0..q {
                        a.push(vec![xi.acos(), k as f64 * h]);
                        w.push(wi * h);
                    }
                }
                (a, w)
            }
            other => return Err(Error::UnsupportedDimension(other)),
        };
        Ok(Self { dim, l_max, angles, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[Vec<f64>] {
        &self.angles
    }

    /// Cartesian point at radius `r` for node `k`.
    pub fn point(&self, k: usize, r: f64) -> Vec<f64> {
        let a = &self.angles[k];
        match self.dim {
            2 => vec![r * a[0].cos(), r * a[0].sin()],
            _ => vec![r * a[0].sin() * a[1].cos(), r * a[0].sin() * a[1].sin(), r * a[0].cos()],
        }
    }

    /// Every real harmonic of degree `<= l_max`.
    pub fn harmonics(&self) -> Vec<SphericalHarmonic> {
        let mut out = Vec::new();
        for l in 0..=self.l_max {
            let li = l as i64;
            let indices: Vec<i64> = match self.dim {
                2 if l == 0 => vec![0],
                2 => vec![li, -li],
                _ => (-li..=li).collect(),
            };
            out.extend(indices.into_iter().map(|m| SphericalHarmonic::new(self.dim, l, m).expect("valid index")));
        }
        out
    }
}

/// Coefficients `u_{l,m}(r)` of a sphere-sampled field.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicCoefficients {
    pub radii: Vec<f64>,
    pub terms: Vec<(SphericalHarmonic, Vec<f64>)>,
}

impl HarmonicCoefficients {
    pub fn branch(&self, degree: usize, index: i64) -> Option<&[f64]> {
        self.terms.iter().find(|(h, _)| h.degree() == degree && h.index() == index).map(|(_, c)| c.as_slice())
    }
}

/// Projects `samples[radius][node]` onto the unit-norm harmonics up to
/// `l_max`. Fails with an aliasing error when the resynthesized field misses
/// the samples by more than `1e−10` relative.
pub fn harmonic_decompose(grid: &SphereGrid, radii: &[f64], samples: &[Vec<f64>]) -> Result<HarmonicCoefficients> {
    if samples.len() != radii.len() || samples.iter().any(|s| s.len() != grid.len()) {
        return Err(Error::Shape("one row of sphere samples per radius".into()));
    }
    let basis: Vec<(SphericalHarmonic, Vec<f64>)> = grid
        .harmonics()
        .into_iter()
        .map(|h| {
            let vals = grid.angles.iter().map(|a| h.eval(a)).collect::<Result<Vec<_>>>()?;
            Ok((h, vals))
        })
        .collect::<Result<_>>()?;
    let terms: Vec<(SphericalHarmonic, Vec<f64>)> = basis
        .iter()
        .map(|(h, y)| {
            let c = samples.iter().map(|row| row.iter().zip(y).zip(&grid.weights).map(|((u, y), w)| u * y * w).sum()).collect();
            (*h, c)
        })
        .collect();
    let coeffs = HarmonicCoefficients { radii: radii.to_vec(), terms };
    let synth = synthesize_with(&coeffs, &basis, grid.len());
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for (row, back) in samples.iter().zip(&synth) {
        for (u, v) in row.iter().zip(back) {
            worst = worst.max((u - v).abs());
            scale = scale.max(u.abs());
        }
    }
    if scale > 0.0 && worst > 1e-10 * scale {
        return Err(Error::Aliasing { l_max: grid.l_max, defect: worst / scale });
    }
    Ok(coeffs)
}

fn synthesize_with(coeffs: &HarmonicCoefficients, basis: &[(SphericalHarmonic, Vec<f64>)], nodes: usize) -> Vec<Vec<f64>> {
    (0..coeffs.radii.len())
        .map(|r| {
            let mut row = vec![0.0; nodes];
            for ((_, c), (_, y)) in coeffs.terms.iter().zip(basis) {
                for (out, yk) in row.iter_mut().zip(y) {
                    *out += c[r] * yk;
                }
            }
            row
        })
        .collect()
}

/// Samples `Σ u_{l,m}(r) Y_{l,m}` on the grid.
pub fn harmonic_synthesize(coeffs: &HarmonicCoefficients, grid: &SphereGrid) -> Result<Vec<Vec<f64>>> {
    let basis = coeffs
        .terms
        .iter()
        .map(|(h, _)| Ok((*h, grid.angles.iter().map(|a| h.eval(a)).collect::<Result<Vec<_>>>()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(synthesize_with(coeffs, &basis, grid.len()))
}

/// `v_l = r^{−l} u_l`, with the value at `r = 0` filled by an even
/// quadratic through the two smallest positive radii.
pub fn reduced_shift(radii: &[f64], u: &[f64], degree: usize) -> Result<Vec<f64>> {
    if radii.len() != u.len() || radii.windows(2).any(|w| !(w[1] > w[0])) || radii.first().is_some_and(|r| *r < 0.0) {
        return Err(Error::Shape("radii must be nonnegative and increasing, one per sample".into()));
    }
    if degree == 0 {
        return Ok(u.to_vec());
    }
    let positive: Vec<usize> = (0..radii.len()).filter(|&i| radii[i] > 0.0).collect();
    if positive.len() < 3 {
        return Err(Error::UnderResolved("need three positive radii".into()));
    }
    let l = degree as i32;
    let q: Vec<f64> = radii.iter().zip(u).map(|(r, v)| if *r > 0.0 { v / r.powi(l) } else { f64::NAN }).collect();
    let near: Vec<f64> = positive[..3].iter().map(|&i| q[i].abs()).collect();
    if near[0] > 1.5 * near[1] + 1e-300 || near[1] > 1.5 * near[2] + 1e-300 {
        return Err(Error::Growth(format!("r^-{degree} u grows toward 0: {near:?}")));
    }
    let (i1, i2) = (positive[0], positive[1]);
    let (r1, r2) = (radii[i1] * radii[i1], radii[i2] * radii[i2]);
    let at_zero = (q[i1] * r2 - q[i2] * r1) / (r2 - r1);
    Ok(radii.iter().zip(q).map(|(r, v)| if *r == 0.0 { at_zero } else { v }).collect())
}

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Radial potential `V(r)` with its derivative.
#[derive(Clone)]
pub struct Potential {
    value: Scalar,
    derivative: Scalar,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential").field("v(0)", &(self.value)(0.0)).finish_non_exhaustive()
    }
}

impl Potential {
    pub fn constant(c: f64) -> Self {
        Self { value: Arc::new(move |_| c), derivative: Arc::new(|_| 0.0) }
    }

    pub fn new<V, D>(value: V, derivative: D) -> Self
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self { value: Arc::new(value), derivative: Arc::new(derivative) }
    }

    pub fn value(&self, r: f64) -> f64 {
        (self.value)(r)
    }

    pub fn derivative(&self, r: f64) -> f64 {
        (self.derivative)(r)
    }
}

/// `H(r) = ½(kinetic_r − kinetic_t − potential)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    pub r: f64,
    pub h: f64,
    pub kinetic_r: f64,
    pub kinetic_t: f64,
    /// `d_s V(r) u(r)²`.
    pub potential: f64,
    pub tail_bound: f64,
}

fn field_order(field: &ExtensionField, s: f64) -> Result<()> {
    check_order(s)?;
    match field.weight.power_exponent() {
        Some(alpha) if (alpha - (1.0 - 2.0 * s)).abs() < 1e-12 => {}
        _ => return Err(Error::Domain(format!("field weight {} is not t^(1-2s) for s = {s}", field.weight.label()))),
    }
    if let Repr::Grid(g) = &field.repr {
        if g.geometry.vertical.grading < 2.0 / (2.0 - 2.0 * s) - 1e-12 {
            return Err(Error::UnderResolved("vertical grading does not resolve the weight near 0".into()));
        }
    }
    Ok(())
}

/// Energy of the reduced field at radius `r`, with `V` scaled by `d_s`.
pub fn energy_h(field: &ExtensionField, v: &Potential, s: f64, r: f64) -> Result<EnergySample> {
    field_order(field, s)?;
    let c = field.column(r)?;
    let potential = neumann_constant(s) * v.value(r) * c.value * c.value;
    Ok(EnergySample {
        r,
        h: 0.5 * (c.kinetic_r - c.kinetic_t - potential),
        kinetic_r: c.kinetic_r,
        kinetic_t: c.kinetic_t,
        potential,
        tail_bound: 0.5 * c.tail_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub r: f64,
    pub h: f64,
    /// Finite-difference slope; `None` at the first and last radius.
    pub dh_dr: Option<f64>,
    /// `−(k/r)∫a v_r² − ½ d_s V' v²`.
    pub closed_form: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityScan {
    pub rows: Vec<ScanRow>,
    /// `5e−3 · max|H|`.
    pub tolerance: f64,
    pub monotone: bool,
    /// Largest gap between the two slopes relative to the largest closed-form
    /// slope.
    pub max_mismatch: f64,
    /// Mismatch above 10 %.
    pub noisy: bool,
}

pub fn energy_monotonicity_scan(field: &ExtensionField, v: &Potential, s: f64, radii: &[f64]) -> Result<MonotonicityScan> {
    if radii.len() < 3 || radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("need at least three increasing radii".into()));
    }
    let k = field.curvature();
    let d = neumann_constant(s);
    let samples = radii
        .par_iter()
        .map(|&r| {
            let e = energy_h(field, v, s, r)?;
            let c = field.column(r)?;
            let bulk = if r > 0.0 { k / r * c.kinetic_r } else { 0.0 };
            Ok((e.h, -bulk - 0.5 * d * v.derivative(r) * c.value * c.value))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = radii.len();
    let rows: Vec<ScanRow> = (0..n)
        .map(|i| {
            let dh_dr = (i > 0 && i + 1 < n).then(|| {
                let (h0, h1) = (radii[i] - radii[i - 1], radii[i + 1] - radii[i]);
                let (f0, f1, f2) = (samples[i - 1].0, samples[i].0, samples[i + 1].0);
                (-h1 / (h0 * (h0 + h1))) * f0 + ((h1 - h0) / (h0 * h1)) * f1 + (h0 / (h1 * (h0 + h1))) * f2
            });
            ScanRow { r: radii[i], h: samples[i].0, dh_dr, closed_form: samples[i].1 }
        })
        .collect();
    let hmax = rows.iter().fold(0.0f64, |m, r| m.max(r.h.abs()));
    let tolerance = 5e-3 * hmax;
    let monotone = rows.iter().filter_map(|r| r.dh_dr).all(|d| d <= tolerance);
    let cmax = rows.iter().fold(0.0f64, |m, r| m.max(r.closed_form.abs()));
    let max_mismatch = rows
        .iter()
        .filter_map(|r| r.dh_dr.map(|d| (d - r.closed_form).abs()))
        .fold(0.0, f64::max)
        / cmax.max(f64::MIN_POSITIVE);
    Ok(MonotonicityScan { rows, tolerance, monotone, max_mismatch, noisy: max_mismatch > 0.1 })
}

/// Terms of the weighted energy identity for a reduced field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceReport {
    /// `½∫a (v_r(R, t)² + v_t(0, t)²) dt`
    pub boundary: f64,
    /// `∫∫ (k/r) a v_r² dr dt`
    pub bulk: f64,
    /// `c v(0)²/2` with `c = lim a v_t / v`.
    pub trace_term: f64,
    pub sum: f64,
    pub largest: f64,
    pub relative: f64,
    pub balanced: bool,
}

/// Assembles the energy identity on `[0, R]`, `R` the field's extent.
pub fn weighted_energy_balance(field: &ExtensionField, weight: &WeightProfile, degree: usize, dim: usize, c: f64) -> Result<BalanceReport> {
    if degree != field.degree || dim != field.dim {
        return Err(Error::Domain(format!("field is the (l = {}, n = {}) branch", field.degree, field.dim)));
    }
    if weight.power_exponent() != field.weight.power_exponent() || weight.label() != field.weight.label() {
        return Err(Error::Domain("weight differs from the field's weight".into()));
    }
    if weight.power_exponent().is_none() && !asymptotic_exponent_fit(weight, 1.0, 1e4)?.gate {
        return Err(Error::UnderResolved("weight is not asymptotically a power law; tail terms unresolved".into()));
    }
    let r_max = field.extent();
    let k = field.curvature();
    let origin = field.column(0.0)?;
    let far = field.column(r_max)?;
    let boundary = 0.5 * (far.kinetic_r + origin.kinetic_t);
    let density = |r: f64| -> Result<f64> { Ok(if r > 0.0 { k / r * field.column(r)?.kinetic_r } else { 0.0 }) };
    let bulk = match &field.repr {
        Repr::Separated(_) => {
            let rule = GaussRule::new(8);
            let panels = (r_max / 0.5).ceil() as usize;
            let h = r_max / panels as f64;
            (0..panels)
                .into_par_iter()
                .map(|p| {
                    let (a, b) = (p as f64 * h, (p + 1) as f64 * h);
                    rule.mapped(a, b).map(|(x, w)| density(x).map(|d| w * d)).sum::<Result<f64>>()
                })
                .sum::<Result<f64>>()?
        }
        Repr::Grid(g) => {
            let xs = &g.base.nodes;
            let mut acc = 0.0;
            for p in xs.windows(2) {
                acc += 0.5 * (p[1] - p[0]) * (density(p[0])? + density(p[1])?);
            }
            acc
        }
    };
    let trace_term = 0.5 * c * origin.value * origin.value;
    let sum = boundary + bulk + trace_term;
    let largest = boundary.abs().max(bulk.abs()).max(trace_term.abs());
    let relative = if largest == 0.0 { 0.0 } else { sum.abs() / largest };
    Ok(BalanceReport { boundary, bulk, trace_term, sum, largest, relative, balanced: relative <= 5e-2 })
}

/// Relative gap between the full-branch residual at `(r, t)` and `r^l` times
/// the reduced residual, both from fourth-order differences of the same
/// field. The `μ_l/r²` term cancels against the extra drift only through
/// `μ_l = l(l−1) + l(n−1)`.
pub fn mu_split_defect(field: &ExtensionField, r: f64, t: f64) -> Result<f64> {
    if field.is_grid() {
        return Err(Error::Domain("pointwise residuals need a smooth field".into()));
    }
    if !(r > 0.01 && t > 0.0) {
        return Err(Error::Domain(format!("point ({r}, {t}) too close to the boundary")));
    }
    let l = field.degree as i32;
    let n = field.dim as f64;
    let k = field.curvature();
    let mu = f64::from(l) * (f64::from(l) + n - 2.0);
    let drift = field.weight.derivative(t) / field.weight.eval(t);
    let v = |x: f64, y: f64| field.value(x, y).expect("inside the separated field");
    let u = |x: f64, y: f64| x.powi(l) * v(x, y);
    let hr = 1e-3 * r.min(1.0);
    let ht = 1e-3 * t.min(1.0);
    let d1 = |f: &dyn Fn(f64) -> f64, x: f64, h: f64| (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h);
    let d2 = |f: &dyn Fn(f64) -> f64, x: f64, h: f64| {
        (-f(x - 2.0 * h) + 16.0 * f(x - h) - 30.0 * f(x) + 16.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h * h)
    };
    let (vr, vrr) = (d1(&|x| v(x, t), r, hr), d2(&|x| v(x, t), r, hr));
    let (vt, vtt) = (d1(&|y| v(r, y), t, ht), d2(&|y| v(r, y), t, ht));
    let reduced = vrr + k / r * vr + drift * vt + vtt;
    let (ur, urr) = (d1(&|x| u(x, t), r, hr), d2(&|x| u(x, t), r, hr));
    let (ut, utt) = (d1(&|y| u(r, y), t, ht), d2(&|y| u(r, y), t, ht));
    let uval = u(r, t);
    let terms = [urr, (n - 1.0) / r * ur, -mu / (r * r) * uval, drift * ut, utt];
    let full: f64 = terms.iter().sum();
    let scale: f64 = terms.iter().map(|x| x.abs()).sum();
    Ok((full - r.powi(l) * reduced).abs() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::radial_profile;
    use proptest::prelude::*;

    /// Dormand–Prince 5(4) with absolute/relative tolerance `tol` for
    /// `y'' = y − ((1−2s)/t) y'`.
    fn reference_profile(s: f64, t0: f64, samples: &[f64], tol: f64) -> Vec<f64> {
        let f = |t: f64, y: [f64; 2]| [y[1], y[0] - (1.0 - 2.0 * s) / t * y[1]];
        const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
        const A: [[f64; 6]; 7] = [
            [0.0; 6],
            [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
        const E: [f64; 7] =
            [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];
        let mut t = t0;
        let mut y = [phi_closed(s, t0), dphi_closed(s, t0)];
        let mut h = 1e-3 * t0;
        let mut out = Vec::new();
        let mut next = 0;
        while next < samples.len() {
            let target = samples[next];
            let step = h.min(target - t);
            let mut k = [[0.0; 2]; 7];
            for i in 0..7 {
                let mut yi = y;
                for (j, kj) in k.iter().enumerate().take(i) {
                    yi[0] += step * A[i][j] * kj[0];
                    yi[1] += step * A[i][j] * kj[1];
                }
                k[i] = f(t + C[i] * step, yi);
            }
            let mut yn = y;
            let mut err = 0.0f64;
            for c in 0..2 {
                yn[c] += step * (0..7).map(|i| B[i] * k[i][c]).sum::<f64>();
                let e = step * (0..7).map(|i| E[i] * k[i][c]).sum::<f64>();
                err = err.max(e.abs() / (tol + tol * yn[c].abs()));
            }
            if err <= 1.0 {
                t += step;
                y = yn;
                if (t - target).abs() < 1e-15 * target {
                    out.push(y[0]);
                    next += 1;
                }
            }
            h = step * (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
        }
        out
    }

    #[test]
    fn half_order_profile_is_exponential() {
        let phi = solve_profile_phi(0.5, &VerticalMesh::graded(0.5)).unwrap();
        for (t, v) in phi.grid().iter().zip(phi.values()) {
            assert!((v - (-t).exp()).abs() <= 1e-14, "t = {t}");
        }
        let worst = phi.grid()[1..].iter().map(|&t| profile_ode_residual(0.5, t)).fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{worst:e}");
    }

    #[test]
    fn profile_starts_at_one_and_decreases() {
        for s in [0.1, 0.25, 0.75, 0.9] {
            let phi = solve_profile_phi(s, &VerticalMesh::graded(s)).unwrap();
            assert_eq!(phi.values()[0], 1.0);
            assert!(phi.values().windows(2).all(|w| w[1] <= w[0] + 1e-14));
            // φ(t) = 1 − O(t^{2s})
            assert!((phi.eval(1e-30) - 1.0).abs() < 1e-4);
        }
        assert!(solve_profile_phi(1.0, &VerticalMesh::graded(0.5)).is_err());
        let coarse = VerticalMesh { t_max: 0.01, cells: 16, grading: 2.0 };
        assert!(matches!(solve_profile_phi(0.5, &coarse), Err(Error::UnderResolved(_))));
    }

    #[test]
    fn three_quarter_profile_matches_reference_integration() {
        let s = 0.75;
        let samples: Vec<f64> = (1..=100).map(|i| 0.1 * i as f64).collect();
        // the companion solution grows like e^t, so oracle errors are
        // amplified ~4e5 by t = 10; 1e-14 keeps them below the contract
        let reference = reference_profile(s, 1e-4, &samples, 1e-14);
        let worst = samples.iter().zip(&reference).map(|(t, r)| (phi_closed(s, *t) - r).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-8, "{worst:e}");
    }

    #[test]
    fn neumann_trace_values() {
        let phi = solve_profile_phi(0.5, &VerticalMesh::graded(0.5)).unwrap();
        assert!((neumann_trace(&phi, 0.5).unwrap() + 1.0).abs() <= 1e-8);
        for s in [0.25, 0.75] {
            let coarse = neumann_trace(&solve_profile_phi(s, &VerticalMesh::graded(s)).unwrap(), s).unwrap();
            let fine_mesh = VerticalMesh { cells: 800, ..VerticalMesh::graded(s) };
            let fine = neumann_trace(&solve_profile_phi(s, &fine_mesh).unwrap(), s).unwrap();
            assert!(coarse < 0.0 && (coarse - fine).abs() <= 1e-5, "s = {s}: {coarse} vs {fine}");
            // leading small-t behavior of t^s K_s
            assert!((coarse + neumann_constant(s)).abs() <= 1e-5, "s = {s}: {coarse}");
        }
    }

    #[test]
    fn profile_energy_identity() {
        // ∫aφ² + ∫aφ'² = −[aφφ']_0^∞ = d_s
        for s in [0.3, 0.5, 0.7] {
            let f = ExtensionField::classical(2, 0, s, 10.0).unwrap();
            let Repr::Separated(sep) = &f.repr else { unreachable!() };
            assert!((sep.i_phi + sep.i_dphi - neumann_constant(s)).abs() < 1e-10, "s = {s}");
        }
    }

    fn classical_geometry() -> Geometry {
        Geometry::default_radial(0.5)
    }

    #[test]
    fn separated_solve_agreement() {
        for (n, l) in [(2, 0), (2, 1), (3, 0)] {
            let exact = ExtensionField::classical(n, l, 0.5, 40.0).unwrap();
            let solved = solve_weighted_extension(
                |r| reduced_radial_profile(n, l, r),
                &WeightProfile::fractional(0.5).unwrap(),
                &classical_geometry(),
                l,
                n,
            )
            .unwrap();
            let dev = solved.max_deviation(&exact).unwrap();
            assert!(dev <= 1e-4, "n = {n}, l = {l}: {dev:e}");
            assert!(solved.divergence_residual().unwrap() <= 1e-8);
        }
    }

    #[test]
    fn zero_trace_gives_zero_field() {
        let f = solve_weighted_extension(|_| 0.0, &WeightProfile::power(0.3), &classical_geometry(), 0, 2).unwrap();
        assert!(f.samples().unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn neumann_eigenrelation() {
        for n in [2, 3] {
            for l in 0..=2 {
                let f = solve_weighted_extension(
                    |r| reduced_radial_profile(n, l, r),
                    &WeightProfile::fractional(0.5).unwrap(),
                    &classical_geometry(),
                    l,
                    n,
                )
                .unwrap();
                let (_, defect) = f.eigenrelation_defect(Some(neumann_constant(0.5)), 20.0).unwrap();
                assert!(defect <= 2e-3, "n = {n}, l = {l}: {defect:e}");
            }
        }
    }

    #[test]
    fn power_weight_eigenrelation_is_proportional() {
        let s = 0.35;
        let geometry = Geometry::default_radial(s);
        let f = solve_weighted_extension(|r| reduced_radial_profile(2, 0, r), &WeightProfile::power(0.3), &geometry, 0, 2).unwrap();
        let (c, defect) = f.eigenrelation_defect(None, 20.0).unwrap();
        assert!(defect <= 2e-3, "{defect:e}");
        assert!((c - neumann_constant(s)).abs() <= 2e-3 * c, "{c}");
    }

    #[test]
    fn line_geometry_solve() {
        let g = Geometry::line(8.0 * PI, 1000, VerticalMesh::graded(0.5));
        let f = solve_weighted_extension(f64::cos, &WeightProfile::fractional(0.5).unwrap(), &g, 0, 1).unwrap();
        for &(x, t) in &[(0.0, 0.5), (1.0, 1.0), (-2.0, 3.0)] {
            assert!((f.value(x, t).unwrap() - x.cos() * (-t).exp()).abs() <= 1e-4);
        }
        assert!(matches!(f.value(100.0, 0.0), Err(Error::OffGrid(_))));
    }

    #[test]
    fn under_resolved_geometry() {
        let g = Geometry::radial(40.0, 10, VerticalMesh::graded(0.5));
        let w = WeightProfile::fractional(0.5).unwrap();
        assert!(matches!(solve_weighted_extension(|_| 1.0, &w, &g, 0, 2), Err(Error::UnderResolved(_))));
    }

    #[test]
    fn decomposition_examples() {
        let grid = SphereGrid::new(2, 4).unwrap();
        let radii = [0.5, 1.0, 2.0];
        let g = |r: f64| r * (-r).exp();
        let y2 = SphericalHarmonic::new(2, 2, 2).unwrap();
        let samples: Vec<Vec<f64>> = radii.iter().map(|&r| grid.angles().iter().map(|a| g(r) * y2.eval(a).unwrap()).collect()).collect();
        let c = harmonic_decompose(&grid, &radii, &samples).unwrap();
        for (h, coeffs) in &c.terms {
            for (k, v) in coeffs.iter().enumerate() {
                let want = if h.degree() == 2 && h.index() == 2 { g(radii[k]) } else { 0.0 };
                assert!((v - want).abs() <= 1e-13);
            }
        }
        let two: Vec<Vec<f64>> = radii
            .iter()
            .map(|&r| grid.angles().iter().map(|a| 2.0 * (3.0 * a[0]).sin() - r * a[0].cos()).collect())
            .collect();
        let c = harmonic_decompose(&grid, &radii, &two).unwrap();
        let sp = PI.sqrt();
        assert!((c.branch(3, -3).unwrap()[1] - 2.0 * sp).abs() < 1e-13);
        assert!((c.branch(1, 1).unwrap()[2] + 2.0 * sp).abs() < 1e-13);
        let back = harmonic_synthesize(&c, &grid).unwrap();
        for (a, b) in back.iter().flatten().zip(two.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12);
        }
        let high: Vec<Vec<f64>> = radii.iter().map(|_| grid.angles().iter().map(|a| (7.0 * a[0]).cos()).collect()).collect();
        assert!(matches!(harmonic_decompose(&grid, &radii, &high), Err(Error::Aliasing { l_max: 4, .. })));
    }

    #[test]
    fn decomposition_of_classical_solution() {
        let grid = SphereGrid::new(2, 5).unwrap();
        let sol = crate::specfun::ClassicalSolution::separated(2, 3, 3).unwrap();
        let r = 2.5;
        let samples = vec![(0..grid.len()).map(|k| sol.eval(&grid.point(k, r)).unwrap()).collect::<Vec<_>>()];
        let c = harmonic_decompose(&grid, &[r], &samples).unwrap();
        for (h, v) in &c.terms {
            if h.degree() == 3 && h.index() == 3 {
                // unnormalized cos 3θ = √π · unit harmonic
                assert!((v[0] - PI.sqrt() * radial_profile(2, 3, r)).abs() <= 1e-12);
            } else {
                assert!(v[0].abs() <= 1e-12, "{h:?}");
            }
        }
    }

    #[test]
    fn sphere_round_trip_three_dimensions() {
        let grid = SphereGrid::new(3, 3).unwrap();
        let hs = grid.harmonics();
        assert_eq!(hs.len(), 16);
        let samples = vec![grid
            .angles()
            .iter()
            .map(|a| hs.iter().enumerate().map(|(i, h)| (i as f64 + 1.0) * h.eval(a).unwrap()).sum())
            .collect::<Vec<f64>>()];
        let c = harmonic_decompose(&grid, &[1.0], &samples).unwrap();
        for (i, (_, v)) in c.terms.iter().enumerate() {
            assert!((v[0] - (i as f64 + 1.0)).abs() <= 1e-11);
        }
        let back = harmonic_synthesize(&c, &grid).unwrap();
        let worst = back[0].iter().zip(&samples[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-10);
    }

    #[test]
    fn reduced_shift_examples() {
        let radii: Vec<f64> = (0..50).map(|i| 0.02 * i as f64).collect();
        let u: Vec<f64> = radii.iter().map(|r| r.sin()).collect();
        assert_eq!(reduced_shift(&radii, &u, 0).unwrap(), u);
        let cubes: Vec<f64> = radii.iter().map(|r| r.powi(3)).collect();
        assert!(reduced_shift(&radii, &cubes, 3).unwrap().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let j1: Vec<f64> = radii.iter().map(|&r| radial_profile(2, 1, r)).collect();
        let v = reduced_shift(&radii, &j1, 1).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-6);
        assert!(matches!(reduced_shift(&radii, &u, 2), Err(Error::Growth(_))));
    }

    #[test]
    fn energy_of_classical_field() {
        let f = ExtensionField::classical(2, 0, 0.5, 400.0).unwrap();
        let v = Potential::constant(-1.0);
        // (J0² + J1²)/4 for s = 1/2
        for r in [0.0, 1.0, 7.3, 100.0] {
            let e = energy_h(&f, &v, 0.5, r).unwrap();
            let j0 = reduced_radial_profile(2, 0, r);
            let j1 = r * reduced_radial_profile(2, 1, r);
            assert!((e.h - 0.25 * (j0 * j0 + j1 * j1)).abs() <= 1e-10, "r = {r}");
            assert!(e.tail_bound < 1e-20);
        }
        assert!(energy_h(&f, &v, 0.5, 400.0).unwrap().h <= 1e-3);
        assert!(energy_h(&f, &v, 0.3, 1.0).is_err());
    }

    #[test]
    fn energy_vanishes_with_the_trace_at_origin() {
        let phi = solve_profile_phi(0.5, &VerticalMesh::graded(0.5)).unwrap();
        let f = ExtensionField::separated(|r| (r * r * (-r * r).exp(), (2.0 * r - 2.0 * r.powi(3)) * (-r * r).exp()), phi, 1, 2, 10.0)
            .unwrap();
        assert!(energy_h(&f, &Potential::constant(-1.0), 0.5, 0.0).unwrap().h <= 1e-6);
    }

    #[test]
    fn monotonicity_scans() {
        let radii: Vec<f64> = (0..=400).map(|i| 0.1 * i as f64).collect();
        for l in [0, 1] {
            let f = ExtensionField::classical(2, l, 0.5, 40.0).unwrap();
            let scan = energy_monotonicity_scan(&f, &Potential::constant(-1.0), 0.5, &radii).unwrap();
            assert!(scan.monotone, "l = {l}");
            assert!(!scan.noisy, "l = {l}: {}", scan.max_mismatch);
        }
        let phi = solve_profile_phi(0.5, &VerticalMesh::graded(0.5)).unwrap();
        let flat = ExtensionField::separated(|_| (1.0, 0.0), phi.clone(), 0, 2, 40.0).unwrap();
        let scan = energy_monotonicity_scan(&flat, &Potential::constant(-1.0), 0.5, &radii).unwrap();
        assert!(scan.rows.iter().filter_map(|r| r.dh_dr).all(|d| d.abs() <= 1e-8));
        // growing potential: closed form is the direct −½V'u² assembly
        let f = ExtensionField::classical(2, 0, 0.5, 40.0).unwrap();
        let scan = energy_monotonicity_scan(&f, &Potential::new(|r| r * r, |r| 2.0 * r), 0.5, &radii).unwrap();
        for row in &scan.rows {
            let u = reduced_radial_profile(2, 0, row.r);
            let vr = row.r * reduced_radial_profile(2, 1, row.r);
            let direct = if row.r > 0.0 { -vr * vr * 0.5 / row.r } else { 0.0 } - row.r * u * u;
            assert!((row.closed_form - direct).abs() <= 1e-10);
            if u.abs() > 1e-3 && row.r > 0.0 {
                assert!(row.closed_form < 0.0);
            }
        }
    }

    #[test]
    fn balance_examples() {
        for s in [0.3, 0.5, 0.7] {
            for l in [0, 1] {
                let f = ExtensionField::classical(2, l, s, 2000.0).unwrap();
                let r = weighted_energy_balance(&f, f.weight(), l, 2, -neumann_constant(s)).unwrap();
                assert!(r.balanced, "s = {s}, l = {l}: {r:?}");
                assert!(r.boundary >= 0.0 && r.bulk >= 0.0 && r.trace_term < 0.0);
            }
        }
        let phi = solve_profile_phi(0.5, &VerticalMesh::graded(0.5)).unwrap();
        let zero = ExtensionField::separated(|_| (0.0, 0.0), phi, 0, 2, 10.0).unwrap();
        let r = weighted_energy_balance(&zero, zero.weight(), 0, 2, -1.0).unwrap();
        assert_eq!((r.boundary, r.bulk, r.trace_term, r.sum), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn balance_on_discrete_field() {
        let f = solve_weighted_extension(
            |r| reduced_radial_profile(2, 0, r),
            &WeightProfile::fractional(0.5).unwrap(),
            &classical_geometry(),
            0,
            2,
        )
        .unwrap();
        let r = weighted_energy_balance(&f, f.weight(), 0, 2, -1.0).unwrap();
        assert!(r.balanced, "{r:?}");
    }

    #[test]
    fn mu_split_cancellation() {
        for (n, l) in [(2, 1), (2, 2), (3, 1), (3, 2)] {
            let f = ExtensionField::classical(n, l, 0.5, 40.0).unwrap();
            for &(r, t) in &[(0.7, 0.4), (3.0, 1.5), (9.0, 0.2)] {
                let d = mu_split_defect(&f, r, t).unwrap();
                assert!(d <= 1e-8, "n = {n}, l = {l}, ({r}, {t}): {d:e}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn profile_residual_small(s in 0.05f64..0.95, t in 1e-3f64..20.0) {
            prop_assert!(profile_ode_residual(s, t) <= 1e-6);
        }

        #[test]
        fn hermite_interpolation_reproduces_closed_form(s in 0.3f64..0.9, t in 0.05f64..10.0) {
            let mesh = VerticalMesh { cells: 2000, ..VerticalMesh::graded(s) };
            let phi = solve_profile_phi(s, &mesh).unwrap();
            let sampled = ProfilePhi::new("copy".into(), phi.grid().to_vec(), phi.values().to_vec(), phi.derivatives().to_vec()).unwrap();
            prop_assert!((sampled.eval(t) - phi.eval(t)).abs() <= 1e-8);
        }
    }
}
