//! The verification suites. Each suite expands its configuration into
//! independent jobs, runs them on the current rayon pool and assembles the
//! rows in job order.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use nonlocal_core::bernstein::{a2_check, asymptotic_exponent_fit, bernstein_multiplier_residual, even_product_extension, A2Params, WeightProfile};
use nonlocal_core::diffusion::{brownian_escape_oracle, escape_probability_curve, DiffusionConfig};
use nonlocal_core::extension::{
    energy_monotonicity_scan, neumann_constant, solve_profile_phi, solve_weighted_extension, weighted_energy_balance, ExtensionField, Geometry, Potential,
    VerticalMesh,
};
use nonlocal_core::quadrature::{l2s_fraclap, pv_fraclap, semigroup_check, PointwiseFunction, QuadratureParams, SemigroupGrid};
use nonlocal_core::specfun::reduced_radial_profile;
use nonlocal_core::spectral::{fractional_residual, polyharmonic_residual, semigroup_defect, GridFunction};
use nonlocal_core::Error;

use crate::config::{ExperimentConfig, TraceKind};
use crate::report::{float, Row, VerificationReport};
use crate::HarnessError;

/// A report plus plot-ready CSV curves `(file name, contents)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: VerificationReport,
    pub curves: Vec<(String, String)>,
}

impl Outcome {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self { report: VerificationReport::new(&cfg.experiment, &cfg.hash()), curves: Vec::new() }
    }

    pub fn merge(&mut self, other: Outcome) {
        self.report.extend(other.report);
        self.curves.extend(other.curves);
    }
}

type JobResult = Result<Vec<Row>, HarnessError>;
type Job<'a> = Box<dyn Fn() -> JobResult + Send + Sync + 'a>;

fn run_jobs(jobs: Vec<Job<'_>>) -> JobResult {
    let rows: Vec<Vec<Row>> = jobs.par_iter().map(|j| j()).collect::<Result<_, _>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn at(check: &str) -> impl Fn(Error) -> HarnessError + '_ {
    move |source| HarnessError::Check { check: check.to_string(), source }
}

fn slug(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// `−2.25, −1.75, …`: evaluation points away from the grid edges.
fn interior_points(count: usize) -> Vec<f64> {
    (0..count).map(|i| -2.25 + 0.5 * i as f64).collect()
}

fn line_grid(cfg: &ExperimentConfig, f: impl Fn(f64) -> f64) -> Result<GridFunction, Error> {
    let fc = &cfg.fractional;
    GridFunction::from_fn(1, fc.grid_points, fc.half_periods as f64 * PI, |y| f(y[0]))
}

/// `max |L u(x) − λ u(x)| / max|u|` over the points, for a pointwise route.
fn pointwise_residual<F>(u: F, scale: f64, points: &[f64], op: impl Fn(&PointwiseFunction, f64) -> Result<f64, Error>) -> Result<f64, Error>
where
    F: Fn(f64) -> f64 + Send + Sync + Clone + 'static,
{
    let g = u.clone();
    let field = PointwiseFunction::new(1, move |y: &[f64]| g(y[0]))?;
    points.iter().try_fold(0.0f64, |m, &x| Ok(m.max((op(&field, x)? - u(x)).abs() / scale)))
}

fn classical_extension(dim: usize, degree: usize, s: f64) -> Result<ExtensionField, Error> {
    solve_weighted_extension(|r| reduced_radial_profile(dim, degree, r), &WeightProfile::fractional(s)?, &Geometry::default_radial(s), degree, dim)
}

/// Interior radius of the Neumann comparison; the outer half of the default
/// radial domain feels the truncation.
const INTERIOR: f64 = 20.0;

/// Eigenrelations `(−Δ)^s u = u` by every route, separated extensions,
/// semigroup composition, and the `cos 2x` negative controls.
pub fn run_verify_fractional(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let f = &cfg.fractional;
    let tol = &cfg.tolerances;
    let [a, b] = f.coefficients;
    let field = move |x: f64| a * x.cos() + b * x.sin();
    let scale = a.hypot(b);
    let points = interior_points(f.pv_points);
    let params = QuadratureParams::default();
    let coeffs = format!("a={a};b={b}");
    let mut jobs: Vec<Job> = Vec::new();

    for &s in &f.orders {
        let c = coeffs.clone();
        jobs.push(Box::new(move || {
            let coeffs = &c;
            let id = format!("fractional.spectral.s{s}");
            let grid = line_grid(cfg, field).map_err(at(&id))?;
            let r = fractional_residual(&grid, s).map_err(at(&id))?;
            Ok(vec![Row::new(id, "eigen-fractional", "spectral", format!("{coeffs};s={s}"), r, tol.spectral)])
        }));
        if f.quadrature {
            let (c, points) = (coeffs.clone(), points.clone());
            jobs.push(Box::new(move || {
                let coeffs = &c;
                let id = format!("fractional.quadrature.s{s}");
                let r = pointwise_residual(field, scale, &points, |u, x| Ok(pv_fraclap(u, &[x], s, &params)?.value)).map_err(at(&id))?;
                Ok(vec![Row::new(id, "eigen-fractional", "pv-quadrature", format!("{coeffs};s={s};points={}", points.len()), r, tol.quadrature)])
            }));
        }
    }
    for &s in &f.high_orders {
        let c = coeffs.clone();
        jobs.push(Box::new(move || {
            let coeffs = &c;
            let id = format!("higher.spectral.s{s}");
            let grid = line_grid(cfg, field).map_err(at(&id))?;
            let r = fractional_residual(&grid, s).map_err(at(&id))?;
            Ok(vec![Row::new(id, "eigen-higher-order", "spectral", format!("{coeffs};s={s}"), r, tol.spectral)])
        }));
        if f.quadrature {
            let (c, points) = (coeffs.clone(), points.clone());
            jobs.push(Box::new(move || {
                let coeffs = &c;
                let id = format!("higher.quadrature.s{s}");
                let r = pointwise_residual(field, scale, &points, |u, x| Ok(l2s_fraclap(u, &[x], s, &params)?.value)).map_err(at(&id))?;
                Ok(vec![Row::new(id, "eigen-higher-order", "fourth-difference", format!("{coeffs};s={s};points={}", points.len()), r, tol.quadrature)])
            }));
        }
    }
    let s = f.extension_order;
    for &[n, l] in &f.extension_cases {
        jobs.push(Box::new(move || {
            let id = format!("extension.neumann.n{n}.l{l}");
            let ext = classical_extension(n, l, s).map_err(at(&id))?;
            let (_, d) = ext.eigenrelation_defect(Some(neumann_constant(s)), INTERIOR).map_err(at(&id))?;
            Ok(vec![Row::new(id, "eigen-fractional", "extension", format!("n={n};l={l};s={s}"), d, tol.eigenrelation)])
        }));
    }
    for &[n, l] in &f.separated_cases {
        jobs.push(Box::new(move || {
            let id = format!("extension.separated.n{n}.l{l}");
            let ext = classical_extension(n, l, s).map_err(at(&id))?;
            let exact = ExtensionField::classical(n, l, s, 40.0).map_err(at(&id))?;
            let d = ext.max_deviation(&exact).map_err(at(&id))?;
            Ok(vec![Row::new(id, "separated-extension", "extension", format!("n={n};l={l};s={s}"), d, tol.separated)])
        }));
    }
    for &s in &f.semigroup_orders {
        let points = points.clone();
        jobs.push(Box::new(move || {
            let id = format!("semigroup.quadrature.s{s}");
            let gauss = PointwiseFunction::new(1, |y: &[f64]| (-y[0] * y[0]).exp()).map_err(at(&id))?.vanishing();
            let rep = semigroup_check(&gauss, s, &SemigroupGrid::default(), &points, &params).map_err(at(&id))?;
            let sid = format!("semigroup.spectral.s{s}");
            let grid = line_grid(cfg, |x| (-x * x).exp()).map_err(at(&sid))?;
            let d = semigroup_defect(&grid, s).map_err(at(&sid))?;
            Ok(vec![
                Row::new(id, "semigroup", "pv-quadrature", format!("gaussian;s={s}"), rep.max_defect, tol.semigroup_quadrature),
                Row::new(sid, "semigroup", "spectral", format!("gaussian;s={s}"), d, tol.semigroup_spectral),
            ])
        }));
    }
    for &s in &f.control_orders {
        let points = points.clone();
        jobs.push(Box::new(move || control_rows(cfg, s, &points)));
    }
    if jobs.is_empty() {
        eprintln!("warning: no fractional checks requested");
    }
    let mut out = Outcome::new(cfg);
    out.report.rows = run_jobs(jobs)?;
    Ok(out)
}

/// `cos 2x` has eigenvalue `4^s`, so every route must report a residual of
/// at least `control_min`. Rows carry the negated residual.
fn control_rows(cfg: &ExperimentConfig, s: f64, points: &[f64]) -> JobResult {
    let tol = -cfg.tolerances.control_min;
    let cos2 = |x: f64| (2.0 * x).cos();
    let params = QuadratureParams::default();
    let id = format!("control.spectral.s{s}");
    let grid = line_grid(cfg, cos2).map_err(at(&id))?;
    let spectral = fractional_residual(&grid, s).map_err(at(&id))?;
    let mut rows = vec![Row::new(id, "control", "spectral", format!("cos2x;s={s}"), -spectral, tol)];
    if cfg.fractional.quadrature {
        let id = format!("control.quadrature.s{s}");
        let r = pointwise_residual(cos2, 1.0, points, |u, x| Ok(pv_fraclap(u, &[x], s, &params)?.value)).map_err(at(&id))?;
        rows.push(Row::new(id, "control", "pv-quadrature", format!("cos2x;s={s}"), -r, tol));
    }
    let id = format!("control.extension.s{s}");
    let geometry = Geometry::line(8.0 * PI, 1000, VerticalMesh::graded(s));
    let ext = solve_weighted_extension(cos2, &WeightProfile::fractional(s).map_err(at(&id))?, &geometry, 0, 1).map_err(at(&id))?;
    let (_, d) = ext.eigenrelation_defect(Some(neumann_constant(s)), INTERIOR).map_err(at(&id))?;
    rows.push(Row::new(id, "control", "extension", format!("cos2x;s={s}"), -d, tol));
    Ok(rows)
}

/// `(−Δ)^m u = u` on the line, with a `cos 2x` control per power.
pub fn run_verify_poly(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let p = &cfg.poly;
    let tol = &cfg.tolerances;
    let [a, b] = p.coefficients;
    let mut out = Outcome::new(cfg);
    for &m in &p.powers {
        let id = format!("poly.spectral.m{m}");
        let grid = line_grid(cfg, |x| a * x.cos() + b * x.sin()).map_err(at(&id))?;
        let r = polyharmonic_residual(&grid, m).map_err(at(&id))?;
        out.report.rows.push(Row::new(id, "eigen-polyharmonic", "spectral", format!("a={a};b={b};m={m}"), r, tol.polyharmonic));
        let id = format!("control.poly.m{m}");
        let grid = line_grid(cfg, |x| (2.0 * x).cos()).map_err(at(&id))?;
        let r = polyharmonic_residual(&grid, m).map_err(at(&id))?;
        out.report.rows.push(Row::new(id, "control", "spectral", format!("cos2x;m={m}"), -r, -tol.control_min));
    }
    if p.powers.is_empty() {
        eprintln!("warning: no polyharmonic checks requested");
    }
    Ok(out)
}

/// Golden-ratio points in `[−10², −10⁻²] × [10⁻², 10²]`.
fn straddle_probes(count: usize) -> Vec<(f64, f64)> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    (1..=count)
        .map(|i| {
            let u = (i as f64 * g).fract();
            let v = (i as f64 * g * g).fract();
            (-(10f64.powf(-2.0 + 4.0 * u)), 10f64.powf(-2.0 + 4.0 * v))
        })
        .collect()
}

/// Bernstein multipliers on classical solutions, the Laplace
/// representation, and the hypothesis checks on the attached weights.
pub fn run_verify_bernstein(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let bc = &cfg.bernstein;
    let tol = &cfg.tolerances;
    let catalogue = cfg.catalogue()?;
    let [a, b] = cfg.fractional.coefficients;
    let lambdas: Vec<f64> = (0..25).map(|i| 0.1 * 100f64.powf(i as f64 / 24.0)).collect();
    let mut out = Outcome::new(cfg);
    let weights: Vec<WeightProfile> = match bc.weight_exponent {
        Some(alpha) => vec![WeightProfile::power(alpha)],
        None => {
            let mut ws: Vec<WeightProfile> = Vec::new();
            for psi in &catalogue {
                match psi.weight() {
                    Some(w) if !ws.iter().any(|v| v.label() == w.label()) => ws.push(w.clone()),
                    Some(_) => {}
                    None => out.report.notes.push(format!("{}: no weight available; weight checks not run", psi.label())),
                }
            }
            ws
        }
    };
    let a2 = A2Params { depth: bc.a2_depth, range: 1.0, cap: bc.a2_cap };
    let gate_notes = std::sync::Mutex::new(Vec::new());
    let mut jobs: Vec<Job> = Vec::new();
    for psi in &catalogue {
        let lambdas = &lambdas;
        jobs.push(Box::new(move || {
            let label = psi.label();
            let id = format!("bernstein.multiplier.{}", slug(label));
            let grid = line_grid(cfg, |x| a * x.cos() + b * x.sin()).map_err(at(&id))?;
            let r = bernstein_multiplier_residual(&grid, psi).map_err(at(&id))?;
            let rid = format!("bernstein.representation.{}", slug(label));
            let d = psi.representation_defect(lambdas).map_err(at(&rid))?;
            Ok(vec![
                Row::new(id, "bernstein-multiplier", "spectral", format!("psi={label};a={a};b={b}"), r, tol.bernstein),
                Row::new(rid, "bernstein-multiplier", "laplace", format!("psi={label};lambda=0.1..10"), d, tol.representation),
            ])
        }));
    }
    for w in &weights {
        let gate_notes = &gate_notes;
        jobs.push(Box::new(move || {
            let label = w.label();
            let id = format!("weights.a2.{}", slug(label));
            let rep = a2_check(w, &a2).map_err(at(&id))?;
            let mut rows = vec![Row::new(
                id,
                "a2-weights",
                "dyadic",
                format!("weight={label};depth={}", a2.depth),
                if rep.pass { rep.constant } else { f64::INFINITY },
                a2.cap,
            )];
            let id = format!("weights.exponent.{}", slug(label));
            let fit = asymptotic_exponent_fit(w, 1.0, 1e3).map_err(at(&id))?;
            rows.push(Row::new(id, "a2-weights", "log-fit", format!("weight={label};alpha={}", float(fit.alpha)), if fit.gate { fit.alpha.abs() } else { f64::INFINITY }, 1.0));
            if !(rep.pass && fit.gate) {
                gate_notes.lock().expect("notes lock").push(format!("{label}: fails the A2 hypothesis; dependent checks not run"));
                return Ok(rows);
            }
            let id = format!("weights.straddle.{}", slug(label));
            let even = even_product_extension(w, &a2).map_err(at(&id))?;
            let probes = straddle_probes(bc.straddle_probes);
            let worst = probes.iter().try_fold(0.0f64, |m, &(p, q)| Ok(m.max(even.straddle(p, q)?.ratio()))).map_err(at(&id))?;
            rows.push(Row::new(id, "a2-weights", "even-extension", format!("weight={label};probes={}", probes.len()), worst, tol.straddle));
            if let (true, Some(alpha)) = (bc.extension, w.power_exponent()) {
                let id = format!("weights.extension.{}", slug(label));
                let s = 0.5 * (1.0 - alpha);
                let ext = solve_weighted_extension(|r| reduced_radial_profile(2, 0, r), w, &Geometry::default_radial(s), 0, 2).map_err(at(&id))?;
                let (c, d) = ext.eigenrelation_defect(None, INTERIOR).map_err(at(&id))?;
                rows.push(Row::new(id, "bernstein-multiplier", "extension", format!("weight={label};n=2;l=0;c={}", float(c)), d, tol.eigenrelation));
            }
            Ok(rows)
        }));
    }
    out.report.rows = run_jobs(jobs)?;
    out.report.notes.extend(gate_notes.into_inner().expect("notes lock"));
    Ok(out)
}

/// `H(r)` scans with their CSV curves and the three-term weighted balance.
pub fn run_energy_scan(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let e = &cfg.energy;
    let tol = &cfg.tolerances;
    let steps = (e.r_max / e.dr).round() as usize;
    let radii: Vec<f64> = (0..=steps).map(|i| (i as f64 * e.dr).min(e.r_max)).collect();
    let v = Potential::constant(e.potential);
    let scans = e
        .degrees
        .par_iter()
        .map(|&l| {
            let id = format!("energy.slope.l{l}");
            let field = match e.trace {
                TraceKind::Classical => ExtensionField::classical(e.dim, l, e.order, e.r_max),
                TraceKind::Zero => solve_profile_phi(e.order, &VerticalMesh::graded(e.order))
                    .and_then(|phi| ExtensionField::separated(|_| (0.0, 0.0), phi, l, e.dim, e.r_max)),
            }
            .map_err(at(&id))?;
            let scan = energy_monotonicity_scan(&field, &v, e.order, &radii).map_err(at(&id))?;
            Ok((l, scan))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut out = Outcome::new(cfg);
    for (l, scan) in scans {
        let params = format!("n={};l={l};s={};V={}", e.dim, e.order, e.potential);
        let peak = scan.rows.iter().fold(0.0f64, |m, r| m.max(r.h.abs()));
        let rise = scan.rows.iter().filter_map(|r| r.dh_dr).fold(f64::NEG_INFINITY, f64::max);
        let slope = if peak > 0.0 { rise / peak } else { rise.max(0.0) };
        out.report.rows.push(Row::new(format!("energy.slope.l{l}"), "energy-monotone", "analytic", params.clone(), slope, tol.energy_slope));
        let tail = scan.rows.last().map_or(0.0, |r| r.h);
        out.report.rows.push(Row::new(format!("energy.tail.l{l}"), "energy-monotone", "analytic", format!("{params};r={}", e.r_max), tail, tol.energy_tail));
        let mut csv = String::from("r,h,dh_dr\n");
        for r in &scan.rows {
            writeln!(csv, "{},{},{}", float(r.r), float(r.h), r.dh_dr.map(float).unwrap_or_default()).expect("string write");
        }
        out.curves.push((format!("energy_n{}_l{l}.csv", e.dim), csv));
    }
    let cases: Vec<(f64, usize)> = e.balance_orders.iter().flat_map(|&s| e.balance_degrees.iter().map(move |&l| (s, l))).collect();
    let rows = cases
        .par_iter()
        .map(|&(s, l)| {
            let id = format!("energy.balance.s{s}.l{l}");
            let field = ExtensionField::classical(e.dim, l, s, e.balance_radius).map_err(at(&id))?;
            let rep = weighted_energy_balance(&field, field.weight(), l, e.dim, -neumann_constant(s)).map_err(at(&id))?;
            Ok(Row::new(id, "energy-balance", "analytic", format!("n={};l={l};s={s};R={}", e.dim, e.balance_radius), rep.relative, tol.balance))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    out.report.rows.extend(rows);
    Ok(out)
}

/// Escape-probability curves with their decay fits, and the harmonic-measure
/// cross-check for Brownian motion.
pub fn run_diffusion(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let d = &cfg.diffusion;
    let mut out = Outcome::new(cfg);
    for &alpha in &d.exponents {
        let weight = WeightProfile::power(alpha);
        let label = weight.label().to_string();
        let id = format!("diffusion.decay.{}", slug(&label));
        let sim = DiffusionConfig {
            weight,
            dt: d.dt,
            paths: d.paths,
            seed: cfg.seed,
            base_radius: d.base_radius,
            k_max: d.k_max,
            x0: vec![0.0],
            t0: d.t0,
            step_budget: d.step_budget,
        };
        let stats = escape_probability_curve(&sim).map_err(at(&id))?;
        let upper = stats.fit.map_or(f64::INFINITY, |f| f.slope + 1.959_963_984_540_054 * f.slope_stderr);
        let params = format!("weight={label};paths={};k_max={};seed={}", d.paths, d.k_max, cfg.seed);
        out.report.rows.push(Row::new(id, "escape-decay", "monte-carlo", params.clone(), upper, 0.0));
        if alpha == 0.0 {
            let first = &stats.levels[0];
            let half = 2.0 * d.base_radius * (1u64 << (first.k - 1)) as f64;
            let oracle = brownian_escape_oracle(half, half, 0.0, d.t0);
            let miss = (first.ci.0 - oracle).max(oracle - first.ci.1).max(0.0);
            out.report.rows.push(Row::new(
                format!("diffusion.oracle.k{}", first.k),
                "escape-decay",
                "harmonic-measure",
                format!("{params};p_hat={};oracle={}", float(first.p_hat), float(oracle)),
                miss,
                0.0,
            ));
        }
        out.curves.push((format!("diffusion_{}.csv", slug(&label)), stats.csv()));
    }
    if d.exponents.is_empty() {
        eprintln!("warning: no diffusion weights requested");
    }
    Ok(out)
}

/// Every suite, in a fixed order.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let mut out = run_verify_fractional(cfg)?;
    out.merge(run_verify_poly(cfg)?);
    out.merge(run_verify_bernstein(cfg)?);
    out.merge(run_energy_scan(cfg)?);
    out.merge(run_diffusion(cfg)?);
    Ok(out)
}
