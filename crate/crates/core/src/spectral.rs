//! Fourier-multiplier operators on uniform periodic boxes.
//!
//! A [`GridFunction`] samples a field on `[-L, L)^d` with `N` points per
//! axis. Multipliers act on the discrete frequency lattice
//! `ξ ∈ (π/L) ℤ^d`, with the Nyquist index mapped to its nonnegative
//! magnitude, so lattice-aligned modes are eigenfunctions up to roundoff.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Sampled real field on a uniform periodic box in 1–3 dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    dim: usize,
    points: usize,
    half_length: f64,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(dim: usize, points: usize, half_length: f64, values: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if points < 2 || !points.is_power_of_two() {
            return Err(Error::Shape(format!("points per axis must be a power of two, got {points}")));
        }
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(Error::Shape(format!("box half-length must be positive, got {half_length}")));
        }
        let expected = points.pow(dim as u32);
        if values.len() != expected {
            return Err(Error::Shape(format!("expected {expected} samples, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(Self { dim, points, half_length, values })
    }

    /// Samples `f` at the grid nodes `x_j = -L + j·2L/N`.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(dim: usize, points: usize, half_length: f64, f: F) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        let h = 2.0 * half_length / points as f64;
        let total = points.pow(dim as u32);
        let mut coords = vec![0.0; dim];
        let values = (0..total)
            .map(|flat| {
                let mut rem = flat;
                for axis in (0..dim).rev() {
                    coords[axis] = -half_length + (rem % points) as f64 * h;
                    rem /= points;
                }
                f(&coords)
            })
            .collect();
        Self::new(dim, points, half_length, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / self.points as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Coordinate of node `j` along any axis.
    pub fn node(&self, j: usize) -> f64 {
        -self.half_length + j as f64 * self.spacing()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.points != other.points || self.half_length != other.half_length {
            return Err(Error::Shape("grid functions live on different grids".into()));
        }
        Ok(())
    }

    /// `self - other` on the same grid.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self { values, ..self.clone() })
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        self.same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| alpha * a + beta * b).collect();
        Ok(Self { values, ..self.clone() })
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self { values: self.values.iter().map(|v| alpha * v).collect(), ..self.clone() }
    }

    /// Lattice frequency `|ξ|²` for every flat index of the transform.
    fn squared_frequencies(&self) -> Vec<f64> {
        let n = self.points;
        let step = PI / self.half_length;
        let freq: Vec<f64> = (0..n)
            .map(|j| {
                let k = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                (k * step).powi(2)
            })
            .collect();
        let total = n.pow(self.dim as u32);
        (0..total)
            .map(|flat| {
                let mut rem = flat;
                let mut acc = 0.0;
                for _ in 0..self.dim {
                    acc += freq[rem % n];
                    rem /= n;
                }
                acc
            })
            .collect()
    }

    fn forward(&self) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        transform(&mut data, self.dim, self.points, false);
        data
    }
}

/// Fourier coefficients below this fraction of the largest one are
/// treated as transform noise.
const ROUNDOFF_FLOOR: f64 = 1e-13;

/// In-place multidimensional FFT, axis by axis. The inverse is normalized.
fn transform(data: &mut [Complex64], dim: usize, n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let total = data.len();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..dim {
        // stride of this axis in row-major order (last axis fastest)
        let stride = n.pow((dim - 1 - axis) as u32);
        for start in 0..total {
            if (start / stride) % n != 0 {
                continue;
            }
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = data[start + k * stride];
            }
            fft.process(&mut line);
            for (k, value) in line.iter().enumerate() {
                data[start + k * stride] = *value;
            }
        }
    }
    if inverse {
        let scale = 1.0 / total as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }
}

/// Which family a multiplier belongs to.
#[derive(Debug, Clone, PartialEq)]
pub enum MultiplierLabel {
    /// `|ξ|^{2s}`, `s ∈ (0, 2]`.
    Fractional(f64),
    /// `|ξ|^{2m}`, `m >= 1`.
    Polyharmonic(u32),
    /// `ψ(|ξ|²)` for a named Bernstein function.
    Bernstein(String),
}

/// A radial Fourier symbol, given as a function of `|ξ|²`.
#[derive(Clone)]
pub struct MultiplierSpec {
    label: MultiplierLabel,
    symbol: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for MultiplierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultiplierSpec").field("label", &self.label).finish_non_exhaustive()
    }
}

impl MultiplierSpec {
    pub fn fractional(s: f64) -> Result<Self> {
        if !(s > 0.0 && s <= 2.0) {
            return Err(Error::Domain(format!("fractional order must lie in (0, 2], got {s}")));
        }
        Ok(Self { label: MultiplierLabel::Fractional(s), symbol: Arc::new(move |k2: f64| k2.powf(s)) })
    }

    pub fn polyharmonic(m: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain("polyharmonic power must be >= 1".into()));
        }
        Ok(Self { label: MultiplierLabel::Polyharmonic(m), symbol: Arc::new(move |k2: f64| k2.powi(m as i32)) })
    }

    /// `ψ(|ξ|²)`; rejects symbols with `ψ(0) != 0` or negative values at a
    /// few probe points.
    pub fn bernstein<F>(name: &str, psi: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let at_zero = psi(0.0);
        if at_zero.abs() > 1e-14 {
            return Err(Error::Domain(format!("symbol must vanish at 0, got {at_zero}")));
        }
        let probes = [1e-3, 0.1, 1.0, 10.0, 1e3];
        let mut prev = 0.0;
        for p in probes {
            let v = psi(p);
            if !(v.is_finite() && v >= prev) {
                return Err(Error::Domain(format!("symbol must be nonnegative and nondecreasing, fails at {p}")));
            }
            prev = v;
        }
        Ok(Self { label: MultiplierLabel::Bernstein(name.to_string()), symbol: Arc::new(psi) })
    }

    pub fn label(&self) -> &MultiplierLabel {
        &self.label
    }

    /// Symbol value at `|ξ|²`.
    pub fn symbol(&self, k2: f64) -> f64 {
        (self.symbol)(k2)
    }
}

/// Inverse transform of `symbol(|ξ|²) û(ξ)`.
pub fn apply_multiplier(u: &GridFunction, spec: &MultiplierSpec) -> Result<GridFunction> {
    let mut data = u.forward();
    // FFT roundoff would otherwise be amplified by the symbol near Nyquist.
    let floor = ROUNDOFF_FLOOR * data.iter().map(|c| c.norm()).fold(0.0, f64::max);
    for (c, k2) in data.iter_mut().zip(u.squared_frequencies()) {
        if c.norm() <= floor {
            *c = Complex64::new(0.0, 0.0);
        } else {
            *c *= spec.symbol(k2);
        }
    }
    transform(&mut data, u.dim, u.points, true);
    GridFunction::new(u.dim, u.points, u.half_length, data.iter().map(|c| c.re).collect())
}

/// `‖A u − λ u‖_∞ / ‖u‖_∞` for the multiplier `A`.
pub fn eigen_residual(u: &GridFunction, spec: &MultiplierSpec, eigenvalue: f64) -> Result<f64> {
    let norm = u.max_abs();
    if norm == 0.0 {
        return Err(Error::ZeroField);
    }
    let au = apply_multiplier(u, spec)?;
    Ok(au.combine(1.0, u, -eigenvalue)?.max_abs() / norm)
}

/// Relative residual of `(-Δ)^s u = u`.
pub fn fractional_residual(u: &GridFunction, s: f64) -> Result<f64> {
    eigen_residual(u, &MultiplierSpec::fractional(s)?, 1.0)
}

/// Relative residual of `(-Δ)^m u = u`.
pub fn polyharmonic_residual(u: &GridFunction, m: u32) -> Result<f64> {
    eigen_residual(u, &MultiplierSpec::polyharmonic(m)?, 1.0)
}

/// Fraction of spectral energy on lattice frequencies with
/// `||ξ| − 1| <= band_halfwidth`.
pub fn spectrum_localization(u: &GridFunction, band_halfwidth: f64) -> Result<f64> {
    if !(band_halfwidth > 0.0) {
        return Err(Error::Domain(format!("band half-width must be positive, got {band_halfwidth}")));
    }
    let coeffs = u.forward();
    let mut total = 0.0;
    let mut inside = 0.0;
    for (c, k2) in coeffs.iter().zip(u.squared_frequencies()) {
        let e = c.norm_sqr();
        total += e;
        if (k2.sqrt() - 1.0).abs() <= band_halfwidth {
            inside += e;
        }
    }
    if total == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(inside / total)
}

/// `‖|ξ|^s(|ξ|^s û) − |ξ|^{2s} û‖_∞` for `s ∈ (1, 2]`.
pub fn semigroup_defect(u: &GridFunction, s: f64) -> Result<f64> {
    if !(s > 1.0 && s <= 2.0) {
        return Err(Error::Domain(format!("semigroup defect needs s in (1, 2], got {s}")));
    }
    if u.max_abs() == 0.0 {
        return Err(Error::ZeroField);
    }
    let half = MultiplierSpec::fractional(0.5 * s)?;
    let twice = apply_multiplier(&apply_multiplier(u, &half)?, &half)?;
    let direct = apply_multiplier(u, &MultiplierSpec::fractional(s)?)?;
    Ok(twice.sub(&direct)?.max_abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const L: f64 = 16.0 * PI;

    fn line<F: Fn(f64) -> f64>(n: usize, f: F) -> GridFunction {
        GridFunction::from_fn(1, n, L, |x| f(x[0])).unwrap()
    }

    #[test]
    fn cosine_is_an_eigenfunction() {
        let u = line(1 << 12, f64::cos);
        let out = apply_multiplier(&u, &MultiplierSpec::fractional(0.5).unwrap()).unwrap();
        assert!(out.sub(&u).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn constants_are_annihilated() {
        let u = line(256, |_| 3.0);
        let out = apply_multiplier(&u, &MultiplierSpec::fractional(0.7).unwrap()).unwrap();
        assert!(out.max_abs() < 1e-13);
    }

    #[test]
    fn multiplier_value_at_frequency_two() {
        let u = line(1024, |x| (2.0 * x).cos());
        let out = apply_multiplier(&u, &MultiplierSpec::fractional(0.75).unwrap()).unwrap();
        let want = u.scale(2f64.powf(1.5));
        assert!(out.sub(&want).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn fractional_residual_examples() {
        assert!(fractional_residual(&line(1024, f64::cos), 0.3).unwrap() <= 1e-12);
        let mix = line(1024, |x| x.sin() + 0.5 * x.cos());
        assert!(fractional_residual(&mix, 1.5).unwrap() <= 1e-12);
        // residual field is (2^{2s} - 1) cos 2x; at s = 1/2 that is cos 2x
        let r = fractional_residual(&line(1024, |x| (2.0 * x).cos()), 0.5).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!(matches!(fractional_residual(&line(64, |_| 0.0), 0.5), Err(Error::ZeroField)));
    }

    #[test]
    fn polyharmonic_examples() {
        assert!(polyharmonic_residual(&line(1024, f64::cos), 3).unwrap() <= 1e-12);
        assert!((polyharmonic_residual(&line(1024, |_| 2.0), 2).unwrap() - 1.0).abs() < 1e-14);
        assert!(polyharmonic_residual(&line(1024, |x| x.cos() + x.sin()), 5).unwrap() <= 1e-12);
        assert!(MultiplierSpec::polyharmonic(0).is_err());
    }

    #[test]
    fn localization_examples() {
        assert!((spectrum_localization(&line(1024, f64::cos), 0.1).unwrap() - 1.0).abs() < 1e-14);
        assert!(spectrum_localization(&line(1024, |x| (2.0 * x).cos()), 0.1).unwrap() < 1e-20);
        let two = line(1024, |x| x.cos() + 0.1 * (3.0 * x).cos());
        assert!((spectrum_localization(&two, 0.1).unwrap() - 1.0 / 1.01).abs() < 1e-13);
    }

    #[test]
    fn semigroup_examples() {
        assert!(semigroup_defect(&line(1024, f64::cos), 1.5).unwrap() <= 1e-12);
        let bump = line(1024, |x| (-x * x).exp());
        assert!(semigroup_defect(&bump, 2.0).unwrap() <= 1e-10);
        assert!(semigroup_defect(&bump, 0.9).is_err());
    }

    #[test]
    fn two_dimensional_plane_wave() {
        // on the box [-5π, 5π]² the lattice spacing is 1/5, so (0.6, 0.8) is a lattice point
        let u = GridFunction::from_fn(2, 256, 5.0 * PI, |x| (0.6 * x[0] + 0.8 * x[1]).cos()).unwrap();
        assert!(fractional_residual(&u, 0.4).unwrap() < 1e-12);
        let u3 = GridFunction::from_fn(3, 32, PI, |x| x[2].sin()).unwrap();
        assert!(fractional_residual(&u3, 1.3).unwrap() < 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(GridFunction::new(1, 100, 1.0, vec![0.0; 100]).is_err());
        assert!(GridFunction::new(4, 2, 1.0, vec![0.0; 16]).is_err());
        assert!(GridFunction::new(1, 4, 1.0, vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
        let a = line(64, f64::cos);
        let b = GridFunction::from_fn(1, 64, 2.0 * L, |x| x[0]).unwrap();
        assert!(a.sub(&b).is_err());
    }

    /// Seeded band-limited field: a few random lattice modes.
    fn band_limited(seed: u64, n: usize) -> GridFunction {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<(f64, f64, f64)> = (0..6)
            .map(|_| (rng.random_range(1..40) as f64 / 16.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        line(n, |x| modes.iter().map(|(k, a, b)| a * (k * x).cos() + b * (k * x).sin()).sum())
    }

    #[test]
    fn random_band_limited_semigroup() {
        for seed in 0..5 {
            assert!(semigroup_defect(&band_limited(seed, 1024), 1.2).unwrap() <= 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn lattice_modes_are_eigenvectors(k in 0usize..200, s in 0.05f64..2.0) {
            let xi = k as f64 / 16.0;
            let u = line(1024, |x| (xi * x).cos());
            let out = apply_multiplier(&u, &MultiplierSpec::fractional(s).unwrap()).unwrap();
            let want = u.scale((xi * xi).powf(s));
            let scale = want.max_abs().max(1.0);
            prop_assert!(out.sub(&want).unwrap().max_abs() <= 1e-12 * scale);
        }

        #[test]
        fn linearity(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000, s in 0.1f64..2.0) {
            let u = band_limited(seed, 512);
            let v = band_limited(seed + 7919, 512);
            let spec = MultiplierSpec::fractional(s).unwrap();
            let lhs = apply_multiplier(&u.combine(a, &v, b).unwrap(), &spec).unwrap();
            let rhs = apply_multiplier(&u, &spec).unwrap().combine(a, &apply_multiplier(&v, &spec).unwrap(), b).unwrap();
            let scale = lhs.max_abs().max(1.0);
            prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-12 * scale);
        }

        #[test]
        fn symbol_composition(p in 0.05f64..1.0, q in 0.05f64..1.0, seed in 0u64..1000) {
            let u = band_limited(seed, 512);
            let a = apply_multiplier(&apply_multiplier(&u, &MultiplierSpec::fractional(p).unwrap()).unwrap(),
                                     &MultiplierSpec::fractional(q).unwrap()).unwrap();
            let b = apply_multiplier(&u, &MultiplierSpec::fractional(p + q).unwrap()).unwrap();
            prop_assert!(a.sub(&b).unwrap().max_abs() <= 1e-10 * b.max_abs().max(1.0));
        }

        #[test]
        fn dilation_scaling_law(seed in 0u64..1000, lambda in 2usize..4, s in 0.1f64..2.0) {
            // modes up to 40/16 stay below Nyquist after dilation
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let modes: Vec<(f64, f64)> = (0..4).map(|_| (rng.random_range(1..40) as f64 / 16.0, rng.random_range(-1.0..1.0))).collect();
            let f = |x: f64| modes.iter().map(|(k, a)| a * (k * x).cos()).sum::<f64>();
            let lam = lambda as f64;
            let spec = MultiplierSpec::fractional(s).unwrap();
            let dilated = line(1024, |x| f(lam * x));
            let lhs = apply_multiplier(&dilated, &spec).unwrap();
            // ((-Δ)^s f)(y) evaluated at y = λx, via the undilated operator
            let g = |y: f64| modes.iter().map(|(k, a)| a * (k * k).powf(s) * (k * y).cos()).sum::<f64>();
            let rhs = line(1024, |x| lam.powf(2.0 * s) * g(lam * x));
            prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-10 * rhs.max_abs().max(1.0));
        }
    }

    #[test]
    fn numerically_obtained_solution_is_localized() {
        // a near-solution: cos x plus a faint off-band contamination
        let tol_field = line(4096, |x| x.cos() + 1e-9 * (3.0 * x).cos());
        let tol = fractional_residual(&tol_field, 0.5).unwrap();
        let frac = spectrum_localization(&tol_field, 0.1).unwrap();
        assert!(frac > 1.0 - 10.0 * tol);
    }
}
