//! Complete Bernstein functions of the Laplacian and their extension weights.
//!
//! A complete Bernstein function is written `ψ(λ) = λ·L{f}(λ)` with `f`
//! completely monotone. Catalogue entries carry their density `f`, and the
//! fractional powers also carry the extension weight `a(t) = t^{1−2s}`.
//! Weights are probed for the Muckenhoupt A2 condition on dyadic intervals
//! and for power-law behavior at large `t`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::extension::ProfilePhi;
use crate::quad::{exp_sinh, tanh_sinh, GaussRule};
use crate::spectral::{eigen_residual, GridFunction, MultiplierSpec};
use crate::specfun::gamma;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Exponential integral `E₁(x) = ∫_x^∞ e^{−t}/t dt` for `x > 0`.
pub fn exp_integral_e1(x: f64) -> f64 {
    assert!(x > 0.0, "E1 needs a positive argument");
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..60 {
            let kf = k as f64;
            term *= -x / kf;
            let add = term / kf;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        -EULER_GAMMA - x.ln() - sum
    } else {
        // modified Lentz on the continued fraction e^{-x}/(x+1- 1/(x+3- 4/(x+5- ...)))
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..200 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// `2 Σ_{k≥0} exp(−(k+½)²π² t)`, the density of `√λ·tanh√λ`.
fn theta_density(t: f64) -> f64 {
    if t >= 0.5 {
        (0..20)
            .map(|k| {
                let a = (k as f64 + 0.5) * PI;
                2.0 * (-a * a * t).exp()
            })
            .sum()
    } else {
        // Poisson-summed form, fast for small t
        let tail: f64 = (1..20).map(|m| 2.0 * if m % 2 == 0 { 1.0 } else { -1.0 } * (-((m * m) as f64) / t).exp()).sum();
        (1.0 + tail) / (PI * t).sqrt()
    }
}

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Extension weight `a(t) > 0` on `(0, ∞)`.
#[derive(Clone)]
pub struct WeightProfile {
    label: String,
    a: Scalar,
    da: Scalar,
    power: Option<f64>,
    alpha_hint: Option<f64>,
}

impl fmt::Debug for WeightProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightProfile")
            .field("label", &self.label)
            .field("power", &self.power)
            .field("alpha_hint", &self.alpha_hint)
            .finish_non_exhaustive()
    }
}

impl WeightProfile {
    /// `a(t) = t^α`.
    pub fn power(alpha: f64) -> Self {
        Self {
            label: format!("t^{alpha}"),
            a: Arc::new(move |t: f64| t.powf(alpha)),
            da: Arc::new(move |t: f64| alpha * t.powf(alpha - 1.0)),
            power: Some(alpha),
            alpha_hint: Some(alpha),
        }
    }

    /// The fractional-Laplacian weight `t^{1−2s}`.
    pub fn fractional(s: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Domain(format!("s must lie in (0, 1), got {s}")));
        }
        Ok(Self::power(1.0 - 2.0 * s))
    }

    pub fn custom<A, D>(label: &str, a: A, da: D) -> Self
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self { label: label.to_string(), a: Arc::new(a), da: Arc::new(da), power: None, alpha_hint: None }
    }

    pub fn with_alpha_hint(mut self, alpha: f64) -> Self {
        self.alpha_hint = Some(alpha);
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Exponent when the weight is an exact power law.
    pub fn power_exponent(&self) -> Option<f64> {
        self.power
    }

    pub fn alpha_hint(&self) -> Option<f64> {
        self.alpha_hint
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.a)(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        (self.da)(t)
    }

    /// `∫_lo^hi a(t)^b dt`, in closed form for power laws.
    pub fn power_integral(&self, lo: f64, hi: f64, b: f64) -> Result<f64> {
        if !(0.0 <= lo && lo < hi && hi.is_finite()) {
            return Err(Error::Domain(format!("bad interval [{lo}, {hi}]")));
        }
        if let Some(alpha) = self.power {
            let e = alpha * b + 1.0;
            if e.abs() < 1e-14 {
                return if lo == 0.0 { Err(Error::Divergence { lo, hi }) } else { Ok((hi / lo).ln()) };
            }
            if e < 0.0 && lo == 0.0 {
                return Err(Error::Divergence { lo, hi });
            }
            return Ok((hi.powf(e) - lo.powf(e)) / e);
        }
        let est = tanh_sinh(lo, hi, 48, |t| self.eval(t).powf(b));
        if est.converged() {
            Ok(est.value)
        } else {
            Err(Error::Divergence { lo, hi })
        }
    }

    /// `∫_lo^hi a(t) dt`.
    pub fn integral(&self, lo: f64, hi: f64) -> Result<f64> {
        self.power_integral(lo, hi, 1.0)
    }

    /// `∫_lo^hi a(t)^{-1} dt`.
    pub fn inverse_integral(&self, lo: f64, hi: f64) -> Result<f64> {
        self.power_integral(lo, hi, -1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    /// `λ^s`
    Power,
    /// `λ/(1+λ)`
    Rational,
    /// `log(1+λ)`
    Log1p,
    /// `√λ·tanh√λ`
    SqrtTanh,
}

/// A complete Bernstein function with its Laplace density.
#[derive(Clone)]
pub struct BernsteinFunction {
    label: String,
    formula: Formula,
    psi: Scalar,
    density: Option<Scalar>,
    psi_at_one: f64,
    weight: Option<WeightProfile>,
}

impl fmt::Debug for BernsteinFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BernsteinFunction")
            .field("label", &self.label)
            .field("formula", &self.formula)
            .field("psi_at_one", &self.psi_at_one)
            .field("weight", &self.weight)
            .finish_non_exhaustive()
    }
}

impl BernsteinFunction {
    /// `ψ(λ) = λ^s`, density `t^{−s}/Γ(1−s)`, weight `t^{1−2s}`.
    pub fn power(s: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Domain(format!("s must lie in (0, 1), got {s}")));
        }
        let g = gamma(1.0 - s);
        Ok(Self {
            label: format!("lambda^{s}"),
            formula: Formula::Power,
            psi: Arc::new(move |l: f64| l.powf(s)),
            density: Some(Arc::new(move |t: f64| t.powf(-s) / g)),
            psi_at_one: 1.0,
            weight: Some(WeightProfile::fractional(s)?),
        })
    }

    /// `ψ(λ) = λ/(1+λ)`, density `e^{−t}`.
    pub fn rational() -> Self {
        Self {
            label: "lambda/(1+lambda)".into(),
            formula: Formula::Rational,
            psi: Arc::new(|l: f64| l / (1.0 + l)),
            density: Some(Arc::new(|t: f64| (-t).exp())),
            psi_at_one: 0.5,
            weight: None,
        }
    }

    /// `ψ(λ) = log(1+λ)`, density `E₁(t)`.
    pub fn log1p() -> Self {
        Self {
            label: "log(1+lambda)".into(),
            formula: Formula::Log1p,
            psi: Arc::new(|l: f64| l.ln_1p()),
            density: Some(Arc::new(exp_integral_e1)),
            psi_at_one: 2f64.ln(),
            weight: None,
        }
    }

    /// `ψ(λ) = √λ·tanh√λ`, density `2Σ exp(−(k+½)²π²t)`.
    pub fn sqrt_tanh() -> Self {
        Self {
            label: "sqrt(lambda)tanh(sqrt(lambda))".into(),
            formula: Formula::SqrtTanh,
            psi: Arc::new(|l: f64| {
                let r = l.sqrt();
                r * r.tanh()
            }),
            density: Some(Arc::new(theta_density)),
            psi_at_one: 1f64.tanh(),
            weight: None,
        }
    }

    /// Every catalogue entry, with `λ^s` at the given orders.
    pub fn catalogue(orders: &[f64]) -> Result<Vec<Self>> {
        let mut out = orders.iter().map(|&s| Self::power(s)).collect::<Result<Vec<_>>>()?;
        out.extend([Self::rational(), Self::log1p(), Self::sqrt_tanh()]);
        Ok(out)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn formula(&self) -> Formula {
        self.formula
    }

    pub fn psi(&self, lambda: f64) -> f64 {
        (self.psi)(lambda)
    }

    pub fn psi_at_one(&self) -> f64 {
        self.psi_at_one
    }

    pub fn density(&self, t: f64) -> Option<f64> {
        self.density.as_ref().map(|f| f(t))
    }

    pub fn weight(&self) -> Option<&WeightProfile> {
        self.weight.as_ref()
    }

    pub fn multiplier(&self) -> Result<MultiplierSpec> {
        let psi = self.psi.clone();
        MultiplierSpec::bernstein(&self.label, move |l| psi(l))
    }

    /// `λ·∫_0^∞ e^{−λt} f(t) dt` by exp-sinh quadrature.
    pub fn laplace_representation(&self, lambda: f64) -> Result<f64> {
        let f = self.density.as_ref().ok_or_else(|| Error::Domain(format!("{} has no density", self.label)))?;
        if !(lambda > 0.0) {
            return Err(Error::Domain(format!("Laplace variable must be positive, got {lambda}")));
        }
        let est = exp_sinh(0.0, 1.0 / 32.0, |t| {
            let e = (-lambda * t).exp();
            if e < 1e-300 {
                0.0
            } else {
                e * f(t)
            }
        });
        if !est.finite {
            return Err(Error::Quadrature(format!("Laplace transform of the {} density", self.label)));
        }
        Ok(lambda * est.value)
    }

    /// Largest `|λ·L{f}(λ) − ψ(λ)|` over the given points.
    pub fn representation_defect(&self, lambdas: &[f64]) -> Result<f64> {
        lambdas.iter().try_fold(0.0f64, |m, &l| Ok(m.max((self.laplace_representation(l)? - self.psi(l)).abs())))
    }

    /// (nondecreasing, midpoint-concave) on 100 log-spaced samples of [1e−3, 1e3].
    pub fn shape_checks(&self) -> (bool, bool) {
        let grid: Vec<f64> = (0..100).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 99.0)).collect();
        let vals: Vec<f64> = grid.iter().map(|&l| self.psi(l)).collect();
        let slack = |v: f64| 4.0 * f64::EPSILON * v.abs();
        let monotone = vals.windows(2).all(|w| w[1] >= w[0] - slack(w[1]));
        let concave = grid.windows(2).zip(vals.windows(2)).all(|(g, v)| {
            let mid = self.psi(0.5 * (g[0] + g[1]));
            mid >= 0.5 * (v[0] + v[1]) - slack(mid)
        });
        (monotone, concave)
    }
}

/// `‖ψ(−Δ)u − ψ(1)u‖_∞ / ‖u‖_∞`.
pub fn bernstein_multiplier_residual(u: &GridFunction, psi: &BernsteinFunction) -> Result<f64> {
    eigen_residual(u, &psi.multiplier()?, psi.psi_at_one())
}

#[derive(Debug, Deserialize)]
struct CatalogueFile {
    #[serde(default)]
    entry: Vec<CatalogueEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogueEntry {
    label: Option<String>,
    formula: Formula,
    s: Option<f64>,
}

/// Reads catalogue entries from key/value text:
///
/// ```text
/// [[entry]]
/// label = "half"
/// formula = "power"
/// s = 0.5
/// ```
pub fn load_catalogue(text: &str) -> Result<Vec<BernsteinFunction>> {
    let file: CatalogueFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    file.entry
        .into_iter()
        .map(|e| {
            let mut f = match e.formula {
                Formula::Power => {
                    let s = e.s.ok_or_else(|| Error::Config("power entry needs `s`".into()))?;
                    BernsteinFunction::power(s)?
                }
                Formula::Rational => BernsteinFunction::rational(),
                Formula::Log1p => BernsteinFunction::log1p(),
                Formula::SqrtTanh => BernsteinFunction::sqrt_tanh(),
            };
            if e.formula != Formula::Power && e.s.is_some() {
                return Err(Error::Config(format!("`s` is only meaningful for power entries ({:?})", e.formula)));
            }
            if let Some(label) = e.label {
                f.label = label;
            }
            Ok(f)
        })
        .collect()
}

/// True iff `(−1)^k f^{(k)} >= −tol` for `k = 0..=order`, with derivatives
/// estimated by divided differences over consecutive grid points.
pub fn completely_monotone_check<F: Fn(f64) -> f64>(f: F, order: usize, grid: &[f64]) -> Result<bool> {
    if order > 8 {
        return Err(Error::Domain(format!("order {order} exceeds 8")));
    }
    if grid.len() < order + 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::UnderResolved(format!("{} grid points cannot resolve order {order}", grid.len())));
    }
    let vals: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("completely monotone check sample".into()));
    }
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // divided-difference table, k! f[t_i..t_{i+k}] ≈ f^{(k)}
    let mut table = vals.clone();
    let mut factorial = 1.0;
    for k in 0..=order {
        if k > 0 {
            factorial *= k as f64;
            table = (0..table.len() - 1).map(|i| (table[i + 1] - table[i]) / (grid[i + k] - grid[i])).collect();
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        for (i, d) in table.iter().enumerate() {
            let span = if k == 0 { 1.0 } else { grid[i + k] - grid[i] };
            let tol = 1e-8 * scale * (2.0 / span).powi(k as i32);
            if sign * factorial * d < -tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Outcome of the dyadic A2 probe.
#[derive(Debug, Clone, PartialEq)]
pub struct A2Report {
    /// Largest `(⨍a)(⨍a⁻¹)` over all probed intervals.
    pub constant: f64,
    pub depth: usize,
    pub pass: bool,
    /// Maximum per depth, index = depth.
    pub per_depth: Vec<f64>,
    /// Interval with the largest constant, or the first divergent one.
    pub witness: Option<(f64, f64)>,
    pub divergent: bool,
}

/// Configurable limits for [`a2_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2Params {
    pub depth: usize,
    pub range: f64,
    pub cap: f64,
}

impl Default for A2Params {
    fn default() -> Self {
        Self { depth: 12, range: 1.0, cap: 1e4 }
    }
}

/// `(⨍_I a)(⨍_I a⁻¹)` by 65-node tanh-sinh quadrature on each side; `None`
/// when either integral shows non-integrable endpoint behavior.
fn interval_constant<F: Fn(f64) -> f64>(a: &F, lo: f64, hi: f64) -> Option<f64> {
    let len = hi - lo;
    let ia = tanh_sinh(lo, hi, 32, a);
    let ib = tanh_sinh(lo, hi, 32, |t| 1.0 / a(t));
    (ia.converged() && ib.converged()).then(|| ia.value * ib.value / (len * len))
}

/// Probes the A2 condition on every dyadic subinterval of `[0, range]`.
pub fn a2_check(w: &WeightProfile, params: &A2Params) -> Result<A2Report> {
    if !(params.range > 0.0) || params.depth < 3 {
        return Err(Error::Domain(format!("invalid A2 probe {params:?}")));
    }
    let a = |t: f64| w.eval(t);
    let mut per_depth = Vec::with_capacity(params.depth + 1);
    let mut best = (0.0f64, None);
    for d in 0..=params.depth {
        let count = 1usize << d;
        let h = params.range / count as f64;
        let probes: Vec<(f64, f64, Option<f64>)> = (0..count)
            .into_par_iter()
            .map(|k| {
                let lo = k as f64 * h;
                let hi = lo + h;
                (lo, hi, interval_constant(&a, lo, hi))
            })
            .collect();
        if let Some((lo, hi, _)) = probes.iter().find(|p| p.2.is_none()) {
            per_depth.push(f64::INFINITY);
            return Ok(A2Report {
                constant: f64::INFINITY,
                depth: d,
                pass: false,
                per_depth,
                witness: Some((*lo, *hi)),
                divergent: true,
            });
        }
        let mut level = 0.0f64;
        for (lo, hi, c) in probes {
            let c = c.expect("checked above");
            level = level.max(c);
            if c > best.0 {
                best = (c, Some((lo, hi)));
            }
        }
        per_depth.push(level);
    }
    let n = per_depth.len();
    let grows = per_depth[n - 1] > per_depth[n - 2] * (1.0 + 1e-3) && per_depth[n - 2] > per_depth[n - 3] * (1.0 + 1e-3);
    let pass = best.0 <= params.cap && !grows;
    Ok(A2Report { constant: best.0, depth: params.depth, pass, per_depth, witness: best.1, divergent: false })
}

/// Reverse-Hölder margin: exponents `b < 1 + 1/(16 C)` keep `a^{−b}`
/// integrable for an A2 weight with constant `C`.
pub fn holder_exponent_bound(report: &A2Report) -> f64 {
    1.0 + 1.0 / (16.0 * report.constant)
}

/// `∫_0^R a^{−b}` for each exponent, `None` where quadrature flags divergence.
pub fn holder_probe(w: &WeightProfile, exponents: &[f64], range: f64) -> Vec<(f64, Option<f64>)> {
    exponents
        .iter()
        .map(|&b| {
            let est = tanh_sinh(0.0, range, 48, |t| w.eval(t).powf(-b));
            (b, est.converged().then_some(est.value))
        })
        .collect()
}

/// Even extension `ã(t) = a(|t|)` and its product lift `â(x, t) = ã(t)`.
#[derive(Debug, Clone)]
pub struct EvenExtension {
    weight: WeightProfile,
    one_sided: A2Report,
}

/// Returns the even extension of a weight that passes the A2 probe.
pub fn even_product_extension(w: &WeightProfile, params: &A2Params) -> Result<EvenExtension> {
    let report = a2_check(w, params)?;
    if !report.pass {
        let (lo, hi) = report.witness.unwrap_or((0.0, params.range));
        return Err(Error::Divergence { lo, hi });
    }
    Ok(EvenExtension { weight: w.clone(), one_sided: report })
}

/// Straddling probe `[p, q]`, `p < 0 < q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StraddleProbe {
    pub p: f64,
    pub q: f64,
    pub straddling: f64,
    /// `max(C[0, −p], C[0, q])` for the one-sided weight.
    pub one_sided: f64,
}

impl StraddleProbe {
    pub fn ratio(&self) -> f64 {
        self.straddling / self.one_sided
    }
}

impl EvenExtension {
    pub fn eval(&self, t: f64) -> f64 {
        self.weight.eval(t.abs())
    }

    /// `â(x, t)`; independent of `x`.
    pub fn eval_lifted(&self, point: &[f64]) -> f64 {
        self.eval(*point.last().expect("non-empty point"))
    }

    pub fn one_sided_report(&self) -> &A2Report {
        &self.one_sided
    }

    fn sided_integrals(&self, lo: f64, hi: f64) -> Result<(f64, f64)> {
        let a = |t: f64| self.weight.eval(t);
        let ia = tanh_sinh(lo, hi, 32, a);
        let ib = tanh_sinh(lo, hi, 32, |t| 1.0 / a(t));
        if ia.converged() && ib.converged() {
            Ok((ia.value, ib.value))
        } else {
            Err(Error::Divergence { lo, hi })
        }
    }

    /// A2 constant of `ã` on `[p, q]` with `p < 0 < q`, against the
    /// one-sided constants that bound it.
    pub fn straddle(&self, p: f64, q: f64) -> Result<StraddleProbe> {
        if !(p < 0.0 && q > 0.0) {
            return Err(Error::Domain(format!("[{p}, {q}] does not straddle 0")));
        }
        let (la, lb) = self.sided_integrals(0.0, -p)?;
        let (ra, rb) = self.sided_integrals(0.0, q)?;
        let len = q - p;
        let straddling = (la + ra) * (lb + rb) / (len * len);
        let one_sided = (la * lb / (p * p)).max(ra * rb / (q * q));
        Ok(StraddleProbe { p, q, straddling, one_sided })
    }

    /// A2 constant of `â` on the cube `[−h, h]^n × [t0 − h, t0 + h]`, by
    /// tensor Gauss quadrature over the cube.
    pub fn cube_constant(&self, dim: usize, t0: f64, half_side: f64) -> Result<f64> {
        let rule = GaussRule::new(8);
        let (lo, hi) = (t0 - half_side, t0 + half_side);
        let pieces: Vec<(f64, f64)> = if lo < 0.0 && hi > 0.0 { vec![(lo, 0.0), (0.0, hi)] } else { vec![(lo, hi)] };
        let mut ia = 0.0;
        let mut ib = 0.0;
        for (a, b) in pieces {
            let (x, y) = self.sided_integrals(a.abs().min(b.abs()), a.abs().max(b.abs()))?;
            ia += x;
            ib += y;
        }
        // the x-directions contribute the same factor to both averages
        let side = 2.0 * half_side;
        let xs = rule.composite(-half_side, half_side, 1, |_| 1.0).powi(dim as i32);
        let volume = xs * side;
        Ok((xs * ia) * (xs * ib) / (volume * volume))
    }
}

/// Least-squares fit of `log a = c + α log t` on `[t_lo, t_hi] ⊂ [1, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentFit {
    pub alpha: f64,
    /// RMS deviation of `log a` from the fitted line.
    pub residual: f64,
    /// `|α| < 1` and residual `<= 0.05`.
    pub gate: bool,
}

pub fn asymptotic_exponent_fit(w: &WeightProfile, t_lo: f64, t_hi: f64) -> Result<ExponentFit> {
    if !(t_lo >= 1.0 && t_hi > t_lo && t_hi.is_finite()) {
        return Err(Error::Domain(format!("fit window [{t_lo}, {t_hi}] must lie in [1, ∞)")));
    }
    const SAMPLES: usize = 64;
    let (l0, l1) = (t_lo.ln(), t_hi.ln());
    let pts: Vec<(f64, f64)> = (0..SAMPLES)
        .map(|i| {
            let x = l0 + (l1 - l0) * i as f64 / (SAMPLES - 1) as f64;
            let a = w.eval(x.exp());
            (x, a)
        })
        .collect();
    if pts.iter().any(|(_, a)| !(*a > 0.0) || !a.is_finite()) {
        return Err(Error::Domain("weight must be positive on the fit window".into()));
    }
    let n = SAMPLES as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
    let alpha = sxy / sxx;
    let c = my - alpha * mx;
    let residual = (pts.iter().map(|p| (p.1.ln() - c - alpha * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ExponentFit { alpha, residual, gate: alpha.abs() < 1.0 && residual <= 0.05 })
}

/// Mesh for [`solve_bernstein_profile`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileMesh {
    pub length: f64,
    pub steps: usize,
}

/// Integrates `φ'' = A φ`, `φ(0) = 1`, `φ'(0) = −ψ(1)` in the `s` coordinate.
///
/// Staggered scheme: `φ'` jumps across each cell by `φ_k ∫_cell A`, with the
/// cell integrals computed by tanh-sinh so integrable singularities of `A`
/// are respected. Two meshes are combined by Richardson extrapolation.
pub fn solve_bernstein_profile<F>(density: F, psi_at_one: f64, mesh: &ProfileMesh) -> Result<ProfilePhi>
where
    F: Fn(f64) -> f64 + Sync,
{
    if !(mesh.length > 0.0) || mesh.steps < 4 {
        return Err(Error::Domain(format!("invalid profile mesh {mesh:?}")));
    }
    let coarse = staggered_profile(&density, psi_at_one, mesh.length, mesh.steps)?;
    let fine = staggered_profile(&density, psi_at_one, mesh.length, 2 * mesh.steps)?;
    let values: Vec<f64> = (0..=mesh.steps).map(|k| (4.0 * fine.0[2 * k] - coarse.0[k]) / 3.0).collect();
    let derivatives: Vec<f64> = (0..=mesh.steps).map(|k| (4.0 * fine.1[2 * k] - coarse.1[k]) / 3.0).collect();
    let h = mesh.length / mesh.steps as f64;
    let grid: Vec<f64> = (0..=mesh.steps).map(|k| k as f64 * h).collect();
    ProfilePhi::new(format!("bernstein psi(1)={psi_at_one}"), grid, values, derivatives)
}

fn staggered_profile<F: Fn(f64) -> f64 + Sync>(density: &F, psi_at_one: f64, length: f64, steps: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = length / steps as f64;
    let cell = |lo: f64, hi: f64| -> Result<f64> {
        let est = tanh_sinh(lo, hi, 24, density);
        if !est.converged() && est.value.abs() > 1e-300 {
            return Err(Error::Divergence { lo, hi });
        }
        if est.value < 0.0 {
            return Err(Error::Domain(format!("negative density on [{lo}, {hi}]")));
        }
        Ok(est.value)
    };
    // masses over [s_k − h/2, s_k + h/2]; the first is the half cell at 0
    let masses: Vec<f64> = (0..=steps)
        .into_par_iter()
        .map(|k| {
            let s = k as f64 * h;
            let lo = (s - 0.5 * h).max(0.0);
            let hi = (s + 0.5 * h).min(length);
            if hi > lo {
                cell(lo, hi)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<_>>()?;
    for k in 0..=steps {
        let s = k as f64 * h;
        if density(s.max(1e-300)) < 0.0 {
            return Err(Error::Domain(format!("negative density at {s}")));
        }
    }
    let tol = 1e-6;
    let mut phi = vec![0.0; steps + 1];
    let mut dphi = vec![0.0; steps + 1];
    phi[0] = 1.0;
    dphi[0] = -psi_at_one;
    let mut half = -psi_at_one + masses[0] * phi[0];
    for k in 0..steps {
        phi[k + 1] = phi[k] + h * half;
        let next = half + masses[k + 1] * phi[k + 1];
        // node derivative: half-step slope plus the left half of the jump
        let left = if k + 1 == steps { masses[k + 1] } else { 0.5 * masses[k + 1] };
        dphi[k + 1] = half + left * phi[k + 1] * if k + 1 == steps { 1.0 } else { 1.0 };
        half = next;
        if !(phi[k + 1] > -tol && phi[k + 1] < 1.0 + tol) {
            return Err(Error::BlowUp { at: (k + 1) as f64 * h });
        }
    }
    Ok((phi, dphi))
}
