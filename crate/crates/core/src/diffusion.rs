//! Monte Carlo hitting probabilities for the diffusion generated by
//! `(1/a) div(a ∇·)` on the upper half space.
//!
//! Paths start at `y₀ = (x₀, t₀)` and are stopped on the base `t = 0`.
//! One path is followed through the nested boxes
//! `Ω_k = B_{2^k R}(x₀) × (0, 2^k R)` at once, recording for each level
//! whether it left through the side or top (`Γ₂`) before touching the base
//! (`Γ₁`).

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::bernstein::WeightProfile;
use crate::error::{Error, Result};
use crate::extension::ExtensionField;
use crate::specfun::{bessel_i_series, bessel_k_scaled};

/// Simulation parameters.
#[derive(Debug, Clone)]
pub struct DiffusionConfig {
    pub weight: WeightProfile,
    /// Smallest time step; steps grow with the distance to `Γ₂`.
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub base_radius: f64,
    pub k_max: usize,
    pub x0: Vec<f64>,
    pub t0: f64,
    pub step_budget: u64,
}

impl DiffusionConfig {
    /// `R = 1`, `y₀ = (0, 0.5)` in one horizontal dimension, `dt = R²·1e−5`.
    pub fn new(weight: WeightProfile, paths: usize, seed: u64) -> Self {
        Self { weight, dt: 1e-5, paths, seed, base_radius: 1.0, k_max: 5, x0: vec![0.0], t0: 0.5, step_budget: 10_000_000 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.dt > 1e-2 * self.base_radius * self.base_radius {
            return Err(Error::Domain(format!("dt = {} must be positive and well below R²", self.dt)));
        }
        if self.paths == 0 || self.x0.is_empty() || !(self.t0 > 0.0) || !(self.base_radius > 0.0) {
            return Err(Error::Domain("need paths >= 1, a horizontal start point and t0 > 0".into()));
        }
        Ok(())
    }

    fn half_width(&self, k: usize) -> f64 {
        self.base_radius * (1u64 << k) as f64
    }
}

/// How a path leaves `Ω_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    HitBase,
    HitSide,
    StepBudgetExceeded,
}

/// Vertical stepping rule.
#[derive(Debug, Clone, Copy)]
enum Vertical {
    /// `a = t^{1−2s}`: squared-Bessel step of dimension `2 − 2s`.
    Bessel { s: f64 },
    /// Euler–Maruyama with drift `a'/a`.
    Euler,
}

/// Probability that a Bessel path of index `−s` from `r0` to `r1` over
/// time `h` touched 0: `c K_s(z) / (I_s(z) + c K_s(z))`, `z = r0 r1 / h`,
/// `c = (2/π) sin(sπ)`.
fn bessel_bridge_hit(s: f64, r0: f64, r1: f64, h: f64) -> f64 {
    let z = r0 * r1 / h;
    if z <= 0.0 {
        return 1.0;
    }
    if z > 40.0 {
        return 0.0;
    }
    let c = 2.0 / PI * (s * PI).sin();
    let k = c * bessel_k_scaled(s, z) * (-2.0 * z).exp();
    let i = bessel_i_series(s, z) * (-z).exp();
    k / (i + k)
}

struct Walker<'a> {
    cfg: &'a DiffusionConfig,
    vertical: Vertical,
    rng: ChaCha8Rng,
    x: Vec<f64>,
    t: f64,
}

impl Walker<'_> {
    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Advances one step; returns `true` when the base was touched.
    fn step(&mut self, dt: f64) -> bool {
        let sd = (2.0 * dt).sqrt();
        for i in 0..self.x.len() {
            let z = self.normal();
            self.x[i] += sd * z;
        }
        let t0 = self.t;
        match self.vertical {
            Vertical::Bessel { s } => {
                // T_τ = R_{2τ} with R a Bessel process of dimension 2 − 2s
                let h = 2.0 * dt;
                let lambda = t0 * t0 / h;
                let n = if lambda > 0.0 { Poisson::new(0.5 * lambda).expect("finite rate").sample(&mut self.rng) } else { 0.0 };
                let g: f64 = Gamma::new(1.0 - s + n, 1.0).expect("positive shape").sample(&mut self.rng);
                self.t = (2.0 * h * g).sqrt();
                let u: f64 = self.rng.random();
                u < bessel_bridge_hit(s, t0, self.t, h)
            }
            Vertical::Euler => {
                let w = &self.cfg.weight;
                let drift = w.derivative(t0) / w.eval(t0);
                let z = self.normal();
                self.t = t0 + drift * dt + sd * z;
                if self.t <= 0.0 {
                    return true;
                }
                let u: f64 = self.rng.random();
                u < (-t0 * self.t / dt).exp()
            }
        }
    }

    fn side_gap(&self, k: usize) -> f64 {
        gap_at(self.cfg, &self.x, self.t, k)
    }
}

/// Distance to `Γ₂` of level `k` (negative outside).
fn gap_at(cfg: &DiffusionConfig, x: &[f64], t: f64, k: usize) -> f64 {
    let l = cfg.half_width(k);
    let r = x.iter().zip(&cfg.x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    (l - r).min(l - t)
}

fn vertical_rule(w: &WeightProfile) -> Vertical {
    match w.power_exponent() {
        Some(alpha) if alpha > -1.0 && alpha < 1.0 => Vertical::Bessel { s: 0.5 * (1.0 - alpha) },
        _ => Vertical::Euler,
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Follows one path through levels `k_lo..=k_hi`, returning the exit of
/// each level.
fn trace_levels(cfg: &DiffusionConfig, k_lo: usize, k_hi: usize, path: usize) -> Vec<Outcome> {
    let mut w = Walker { cfg, vertical: vertical_rule(&cfg.weight), rng: path_rng(cfg.seed, path), x: cfg.x0.clone(), t: cfg.t0 };
    let levels = k_hi - k_lo + 1;
    let mut out = Vec::with_capacity(levels);
    let mut k = k_lo;
    // a start outside the lowest boxes counts as an immediate side exit
    while k <= k_hi && w.side_gap(k) <= 0.0 {
        out.push(Outcome::HitSide);
        k += 1;
    }
    let euler = matches!(w.vertical, Vertical::Euler);
    let mut steps = 0u64;
    while k <= k_hi {
        let mut gap = w.side_gap(k);
        if euler {
            gap = gap.min(w.t);
        }
        let dt = cfg.dt.max((0.1 * gap).powi(2));
        let prev = (w.x.clone(), w.t);
        if w.step(dt) {
            out.resize(levels, Outcome::HitBase);
            return out;
        }
        steps += 1;
        while k <= k_hi {
            let g1 = w.side_gap(k);
            let crossed = g1 <= 0.0 || {
                // Brownian-bridge crossing of the nearest side or top face
                let g0 = gap_at(cfg, &prev.0, prev.1, k);
                let u: f64 = w.rng.random();
                u < (-g0.max(0.0) * g1 / dt).exp()
            };
            if !crossed {
                break;
            }
            out.push(Outcome::HitSide);
            k += 1;
        }
        if steps >= cfg.step_budget && k <= k_hi {
            out.resize(levels, Outcome::StepBudgetExceeded);
            return out;
        }
    }
    for pair in out.windows(2) {
        assert!(pair[1] != Outcome::HitSide || pair[0] == Outcome::HitSide, "side exit at level k+1 without one at level k");
    }
    out
}

/// Exit of `Ω_k` for one path, with the path's private random stream.
pub fn simulate_path(cfg: &DiffusionConfig, k: usize, path: usize) -> Result<Outcome> {
    cfg.validate()?;
    Ok(trace_levels(cfg, k, k, path)[0])
}

/// Wilson score interval at 95 %.
pub fn wilson_interval(hits: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = hits as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if hits == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStats {
    pub k: usize,
    pub trials: u64,
    pub hits: u64,
    pub exhausted: u64,
    pub p_hat: f64,
    pub ci: (f64, f64),
}

/// Least-squares line through `ln p̂_k` weighted by the binomial variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// `slope + 1.96·stderr < 0`.
    pub negative: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HittingStats {
    pub levels: Vec<LevelStats>,
    pub fit: Option<DecayFit>,
    /// `p̂_k` nonincreasing up to CI overlap.
    pub nonincreasing: bool,
}

impl HittingStats {
    /// `k,trials,hits,p_hat,ci_lo,ci_hi` rows with a header.
    pub fn csv(&self) -> String {
        let mut out = String::from("k,trials,hits,p_hat,ci_lo,ci_hi\n");
        for l in &self.levels {
            writeln!(out, "{},{},{},{:.17e},{:.17e},{:.17e}", l.k, l.trials, l.hits, l.p_hat, l.ci.0, l.ci.1).expect("string write");
        }
        out
    }
}

fn tally(cfg: &DiffusionConfig, k_lo: usize, k_hi: usize) -> Vec<LevelStats> {
    let records: Vec<Vec<Outcome>> = (0..cfg.paths).into_par_iter().map(|p| trace_levels(cfg, k_lo, k_hi, p)).collect();
    (k_lo..=k_hi)
        .map(|k| {
            let col = records.iter().map(|r| r[k - k_lo]);
            let exhausted = col.clone().filter(|o| *o == Outcome::StepBudgetExceeded).count() as u64;
            let hits = col.filter(|o| *o == Outcome::HitSide).count() as u64;
            let trials = cfg.paths as u64 - exhausted;
            let p_hat = if trials > 0 { hits as f64 / trials as f64 } else { f64::NAN };
            LevelStats { k, trials, hits, exhausted, p_hat, ci: wilson_interval(hits, trials) }
        })
        .collect()
}

fn fit_decay(levels: &[LevelStats]) -> Option<DecayFit> {
    let pts: Vec<(f64, f64, f64)> = levels
        .iter()
        .filter(|l| l.hits > 0 && l.hits < l.trials)
        .map(|l| {
            let var = (1.0 - l.p_hat) / (l.trials as f64 * l.p_hat);
            (l.k as f64, l.p_hat.ln(), 1.0 / var)
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let slope = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let slope_stderr = (1.0 / sxx).sqrt();
    Some(DecayFit { slope, intercept: my - slope * mx, slope_stderr, negative: slope + 1.959_963_984_540_054 * slope_stderr < 0.0 })
}

/// `p̂_k = P(T_{Γ₂,k} < T_{Γ₁,k})` for `k = 1..=k_max` with Wilson intervals
/// and a geometric-decay fit.
pub fn escape_probability_curve(cfg: &DiffusionConfig) -> Result<HittingStats> {
    cfg.validate()?;
    if cfg.paths < 100 {
        return Err(Error::InsufficientPaths(format!("{} paths; at least 100 are needed for intervals", cfg.paths)));
    }
    if cfg.k_max < 2 {
        return Err(Error::Domain("need k_max >= 2 for a decay fit".into()));
    }
    let levels = tally(cfg, 1, cfg.k_max);
    if let Some(l) = levels.iter().find(|l| l.hits == 0 || l.trials == 0) {
        return Err(Error::InsufficientPaths(format!("no escapes observed at k = {}", l.k)));
    }
    let nonincreasing = levels.windows(2).all(|w| w[1].ci.0 <= w[0].ci.1);
    Ok(HittingStats { fit: fit_decay(&levels), nonincreasing, levels })
}

/// Tallies for a single level, e.g. `k = 0`.
pub fn level_statistics(cfg: &DiffusionConfig, k: usize) -> Result<LevelStats> {
    cfg.validate()?;
    Ok(tally(cfg, k, k)[0])
}

/// `P(hit Γ₂ before Γ₁)` for planar Brownian motion in
/// `(−a, a) × (0, b)` started at `(x, t)`, by the rectangle series.
pub fn brownian_escape_oracle(a: f64, b: f64, x: f64, t: f64) -> f64 {
    // w harmonic, w = 1 on the base and 0 elsewhere; the answer is 1 − w
    let mut w = 0.0;
    for m in (1..4000).step_by(2) {
        let q = m as f64 * PI / (2.0 * a);
        let term = 4.0 / (m as f64 * PI) * (q * (x + a)).sin() * ((-q * t).exp() - (-q * (2.0 * b - t)).exp()) / (1.0 - (-2.0 * q * b).exp());
        w += term;
        if term.abs() < 1e-17 && m > 50 {
            break;
        }
    }
    1.0 - w
}

/// Field values at points of the upper half space.
pub trait HalfSpaceField: Sync {
    fn value_at(&self, x: &[f64], t: f64) -> Result<f64>;
}

impl HalfSpaceField for ExtensionField {
    fn value_at(&self, x: &[f64], t: f64) -> Result<f64> {
        let r = if self.dim() == 1 { x[0] } else { x.iter().map(|v| v * v).sum::<f64>().sqrt() };
        self.value(r, t)
    }
}

impl<F: Fn(&[f64], f64) -> f64 + Sync> HalfSpaceField for F {
    fn value_at(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(self(x, t))
    }
}

/// `B_radius(center) × (t_lo, t_hi)`, `t_lo >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub center: Vec<f64>,
    pub radius: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl Region {
    fn gap(&self, x: &[f64], t: f64) -> f64 {
        let r = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        (self.radius - r).min(self.t_hi - t).min(t - self.t_lo)
    }

    /// Nearest boundary point for an exit that overshot.
    fn project(&self, x: &[f64], t: f64) -> (Vec<f64>, f64) {
        let mut x = x.to_vec();
        let r = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if r > self.radius {
            for (xi, ci) in x.iter_mut().zip(&self.center) {
                *xi = ci + (*xi - ci) * self.radius / r;
            }
        }
        (x, t.clamp(self.t_lo, self.t_hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanValueReport {
    pub estimate: f64,
    pub exact: f64,
    pub deviation: f64,
    /// 95 % half width of the Monte Carlo mean.
    pub ci_half_width: f64,
    /// Mean change of the exit value under projection onto the boundary.
    pub discretization: f64,
    /// `deviation <= 3·(ci_half_width + discretization)`.
    pub pass: bool,
}

/// Compares `ů(y)` with the Monte Carlo mean of `ů` at the exit points of
/// `region`.
pub fn mean_value_check<F: HalfSpaceField + ?Sized>(field: &F, cfg: &DiffusionConfig, y: (&[f64], f64), region: &Region) -> Result<MeanValueReport> {
    cfg.validate()?;
    let (x, t) = y;
    if x.len() != region.center.len() || region.gap(x, t) <= 0.0 || region.t_lo < 0.0 {
        return Err(Error::Domain("start point must lie inside the region".into()));
    }
    let exact = field.value_at(x, t)?;
    let rule = vertical_rule(&cfg.weight);
    let samples: Vec<(f64, f64)> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let mut w = Walker { cfg, vertical: rule, rng: path_rng(cfg.seed, p), x: x.to_vec(), t };
            let mut steps = 0u64;
            loop {
                let gap = region.gap(&w.x, w.t);
                let dt = cfg.dt.max((0.1 * gap).powi(2));
                let base = w.step(dt);
                steps += 1;
                if base && region.t_lo == 0.0 {
                    let v = field.value_at(&w.x, 0.0)?;
                    return Ok((v, 0.0));
                }
                if base || region.gap(&w.x, w.t.max(0.0)) <= 0.0 {
                    let t_end = w.t.max(0.0);
                    let (px, pt) = region.project(&w.x, t_end);
                    let v = field.value_at(&px, pt)?;
                    let raw = field.value_at(&w.x, t_end).unwrap_or(v);
                    return Ok((v, (raw - v).abs()));
                }
                if steps >= cfg.step_budget {
                    return Err(Error::StepBudget(cfg.step_budget));
                }
            }
        })
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let estimate = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.0 - estimate).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let ci_half_width = 1.959_963_984_540_054 * (var / n).sqrt();
    let discretization = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let deviation = (estimate - exact).abs();
    Ok(MeanValueReport { estimate, exact, deviation, ci_half_width, discretization, pass: deviation <= 3.0 * (ci_half_width + discretization) })
}
