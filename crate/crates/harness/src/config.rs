//! Experiment configuration, read from TOML. Every field has a default, so
//! an empty file describes the default suite.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nonlocal_core::bernstein::{load_catalogue, BernsteinFunction};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub fractional: FractionalConfig,
    pub poly: PolyConfig,
    pub energy: EnergyConfig,
    pub diffusion: DiffusionSettings,
    pub tolerances: Tolerances,
    pub bernstein: BernsteinConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "default".into(),
            seed: 20_240_601,
            fractional: FractionalConfig::default(),
            poly: PolyConfig::default(),
            energy: EnergyConfig::default(),
            diffusion: DiffusionSettings::default(),
            tolerances: Tolerances::default(),
            bernstein: BernsteinConfig::default(),
        }
    }
}

/// Test field `a cos x + b sin x` on a periodic grid of `grid_points`
/// nodes over `[−kπ, kπ]`, `k = half_periods`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FractionalConfig {
    pub orders: Vec<f64>,
    /// Orders in `(1, 2]`, checked with the fourth-difference kernel.
    pub high_orders: Vec<f64>,
    pub coefficients: [f64; 2],
    pub grid_points: usize,
    pub half_periods: u32,
    pub pv_points: usize,
    pub quadrature: bool,
    pub extension_order: f64,
    /// `[dim, degree]` pairs for the Neumann eigenrelation.
    pub extension_cases: Vec<[usize; 2]>,
    /// `[dim, degree]` pairs compared against the separated product.
    pub separated_cases: Vec<[usize; 2]>,
    pub semigroup_orders: Vec<f64>,
    /// Orders at which `cos 2x` must fail the eigenrelation.
    pub control_orders: Vec<f64>,
}

impl Default for FractionalConfig {
    fn default() -> Self {
        Self {
            orders: vec![0.25, 0.5, 0.75],
            high_orders: vec![1.5],
            coefficients: [1.0, 0.5],
            grid_points: 1024,
            half_periods: 16,
            pv_points: 10,
            quadrature: true,
            extension_order: 0.5,
            extension_cases: vec![[2, 0], [2, 1], [2, 2], [3, 0], [3, 1], [3, 2]],
            separated_cases: vec![[2, 0], [2, 1], [3, 0]],
            semigroup_orders: vec![1.2, 1.5, 2.0],
            control_orders: vec![0.5, 0.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolyConfig {
    pub powers: Vec<u32>,
    pub coefficients: [f64; 2],
}

impl Default for PolyConfig {
    fn default() -> Self {
        Self { powers: vec![2, 3, 5], coefficients: [1.0, 1.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Classical,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub trace: TraceKind,
    pub dim: usize,
    pub degrees: Vec<usize>,
    pub order: f64,
    /// Constant potential `V`.
    pub potential: f64,
    pub r_max: f64,
    pub dr: f64,
    pub balance_orders: Vec<f64>,
    pub balance_degrees: Vec<usize>,
    pub balance_radius: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            trace: TraceKind::Classical,
            dim: 2,
            degrees: vec![0, 1],
            order: 0.5,
            potential: -1.0,
            r_max: 400.0,
            dr: 0.1,
            balance_orders: vec![0.3, 0.5, 0.7],
            balance_degrees: vec![0, 1],
            balance_radius: 2000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSettings {
    /// Weights `t^α`; `α = 0` is Brownian motion.
    pub exponents: Vec<f64>,
    pub paths: usize,
    pub k_max: usize,
    pub dt: f64,
    pub t0: f64,
    pub base_radius: f64,
    pub step_budget: u64,
}

impl Default for DiffusionSettings {
    fn default() -> Self {
        Self { exponents: vec![0.0, 0.5], paths: 20_000, k_max: 5, dt: 1e-5, t0: 0.5, base_radius: 1.0, step_budget: 10_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogueEntry {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub formula: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
}

impl CatalogueEntry {
    fn new(formula: &str, s: Option<f64>) -> Self {
        Self { label: None, formula: formula.into(), s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BernsteinConfig {
    /// Replaces the catalogue weights by `t^α` for the hypothesis checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_exponent: Option<f64>,
    pub a2_depth: usize,
    pub a2_cap: f64,
    pub straddle_probes: usize,
    pub extension: bool,
    pub entries: Vec<CatalogueEntry>,
}

impl Default for BernsteinConfig {
    fn default() -> Self {
        Self {
            weight_exponent: None,
            a2_depth: 12,
            a2_cap: 1e4,
            straddle_probes: 50,
            extension: true,
            entries: vec![
                CatalogueEntry::new("power", Some(0.5)),
                CatalogueEntry::new("rational", None),
                CatalogueEntry::new("log1p", None),
                CatalogueEntry::new("sqrt_tanh", None),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub spectral: f64,
    pub quadrature: f64,
    pub eigenrelation: f64,
    pub separated: f64,
    pub semigroup_quadrature: f64,
    pub semigroup_spectral: f64,
    pub polyharmonic: f64,
    pub energy_slope: f64,
    pub energy_tail: f64,
    pub balance: f64,
    pub bernstein: f64,
    pub representation: f64,
    pub straddle: f64,
    /// Smallest residual a negative control must show.
    pub control_min: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            spectral: 1e-12,
            quadrature: 5e-3,
            eigenrelation: 2e-3,
            separated: 1e-4,
            semigroup_quadrature: 2e-2,
            semigroup_spectral: 1e-10,
            polyharmonic: 1e-12,
            energy_slope: 5e-3,
            energy_tail: 1e-3,
            balance: 5e-2,
            bernstein: 1e-12,
            representation: 1e-6,
            straddle: 4.0,
            control_min: 0.5,
        }
    }
}

fn config_error(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn catalogue(&self) -> Result<Vec<BernsteinFunction>, HarnessError> {
        #[derive(Serialize)]
        struct File<'a> {
            entry: &'a [CatalogueEntry],
        }
        let text = toml::to_string(&File { entry: &self.bernstein.entries }).map_err(|e| config_error(e.to_string()))?;
        load_catalogue(&text).map_err(|e| config_error(format!("catalogue: {e}")))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let t = &self.tolerances;
        let tols = [
            t.spectral,
            t.quadrature,
            t.eigenrelation,
            t.separated,
            t.semigroup_quadrature,
            t.semigroup_spectral,
            t.polyharmonic,
            t.energy_slope,
            t.energy_tail,
            t.balance,
            t.bernstein,
            t.representation,
            t.straddle,
            t.control_min,
        ];
        if tols.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(config_error("tolerances must be positive and finite"));
        }
        let f = &self.fractional;
        if f.orders.iter().chain(&f.control_orders).any(|s| !(*s > 0.0 && *s < 1.0)) {
            return Err(config_error("fractional orders must lie in (0, 1)"));
        }
        if f.high_orders.iter().chain(&f.semigroup_orders).any(|s| !(*s > 1.0 && *s <= 2.0)) {
            return Err(config_error("high and semigroup orders must lie in (1, 2]"));
        }
        if !(f.extension_order > 0.0 && f.extension_order < 1.0) {
            return Err(config_error("extension order must lie in (0, 1)"));
        }
        if f.extension_cases.iter().chain(&f.separated_cases).any(|c| !(2..=3).contains(&c[0])) {
            return Err(config_error("extension cases need dimension 2 or 3"));
        }
        if f.grid_points < 16 || f.half_periods == 0 || f.coefficients == [0.0, 0.0] {
            return Err(config_error("fractional grid needs >= 16 points, a positive period count and a nonzero field"));
        }
        if self.poly.powers.contains(&0) || self.poly.coefficients == [0.0, 0.0] {
            return Err(config_error("polyharmonic powers must be >= 1 and the field nonzero"));
        }
        let e = &self.energy;
        if !(2..=3).contains(&e.dim) || !(e.r_max > 0.0 && e.dr > 0.0 && e.dr < e.r_max) || !(e.order > 0.0 && e.order < 1.0) {
            return Err(config_error("energy scan needs dim 2 or 3, 0 < dr < r_max and an order in (0, 1)"));
        }
        if e.balance_orders.iter().any(|s| !(*s > 0.0 && *s < 1.0)) || !(e.balance_radius > 0.0) {
            return Err(config_error("balance orders must lie in (0, 1) with a positive radius"));
        }
        let d = &self.diffusion;
        if d.exponents.iter().any(|a| !a.is_finite()) || !(d.dt > 0.0 && d.t0 > 0.0 && d.base_radius > 0.0) || d.k_max < 2 {
            return Err(config_error("diffusion needs finite exponents, positive dt/t0/R and k_max >= 2"));
        }
        let b = &self.bernstein;
        if b.a2_depth < 3 || !(b.a2_cap > 1.0) {
            return Err(config_error("A2 probe needs depth >= 3 and cap > 1"));
        }
        self.catalogue()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_suite() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trip_and_hash() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let other = ExperimentConfig { seed: 1, ..cfg.clone() };
        assert_ne!(other.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("[tolerances]\nspectral = -1.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[fractional]\norders = [1.5]\n").is_err());
        assert!(ExperimentConfig::from_toml("[[bernstein.entries]]\nformula = \"cubic\"\n").is_err());
        assert!(ExperimentConfig::from_toml("unknown = 3\n").is_err());
    }

    #[test]
    fn catalogue_resolves() {
        let labels: Vec<String> = ExperimentConfig::default().catalogue().unwrap().iter().map(|f| f.label().to_string()).collect();
        assert_eq!(labels.len(), 4);
        assert_eq!(labels[0], "lambda^0.5");
    }
}
