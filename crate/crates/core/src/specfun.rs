//! Special functions and the classical Helmholtz solution family.
//!
//! Bessel functions of the first kind use the power series up to
//! [`SERIES_CROSSOVER`] and Miller's backward recurrence (normalized by the
//! Neumann series for `(r/2)^ν`) beyond it; the Hankel expansion takes over at
//! very large arguments. Bounded solutions of `-Δu = u` are products of
//! `r^{(2-n)/2} J_{n/2+l-1}(r)` with spherical harmonics of degree `l`.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

pub use statrs::function::gamma::{gamma, ln_gamma};

/// Arguments at or below this use the 60-term power series.
pub const SERIES_CROSSOVER: f64 = 12.0;
const SERIES_TERMS: usize = 60;
const HANKEL_CROSSOVER: f64 = 1000.0;

/// Order of a Bessel function of the first kind.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct BesselOrder(f64);

impl BesselOrder {
    pub fn new(nu: f64) -> Result<Self> {
        if !nu.is_finite() || nu < 0.0 {
            return Err(Error::Domain(format!("Bessel order must be finite and >= 0, got {nu}")));
        }
        Ok(Self(nu))
    }

    pub fn nu(self) -> f64 {
        self.0
    }
}

/// `J_ν(r)` for `r >= 0`.
pub fn bessel_j(order: BesselOrder, r: f64) -> Result<f64> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::Domain(format!("bessel_j needs finite r >= 0, got {r}")));
    }
    Ok(bessel_j_unchecked(order.0, r))
}

pub(crate) fn bessel_j_unchecked(nu: f64, r: f64) -> f64 {
    if r == 0.0 {
        return if nu == 0.0 { 1.0 } else { 0.0 };
    }
    if r <= SERIES_CROSSOVER {
        bessel_j_series(nu, r)
    } else if r <= HANKEL_CROSSOVER {
        bessel_j_miller(nu, r)
    } else {
        bessel_j_hankel(nu, r)
    }
}

/// `J_ν(r) / (r/2)^ν`, finite at `r = 0` where it equals `1/Γ(ν+1)`.
pub(crate) fn bessel_j_scaled(nu: f64, r: f64) -> f64 {
    if r <= SERIES_CROSSOVER {
        let x = 0.25 * r * r;
        let mut term = (-ln_gamma(nu + 1.0)).exp();
        let mut sum = term;
        for k in 1..SERIES_TERMS {
            let k = k as f64;
            term *= -x / (k * (k + nu));
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        bessel_j_unchecked(nu, r) / (0.5 * r).powf(nu)
    }
}

fn bessel_j_series(nu: f64, r: f64) -> f64 {
    let prefactor = (nu * (0.5 * r).ln()).exp();
    prefactor * bessel_j_scaled(nu, r)
}

/// Miller's algorithm: backward recurrence from well above the turning
/// point, normalized with `(r/2)^{ν₀} = Σ_k (ν₀+2k) Γ(ν₀+k)/k! J_{ν₀+2k}(r)`.
fn bessel_j_miller(nu: f64, r: f64) -> f64 {
    let m = nu.floor() as usize;
    let nu0 = nu - m as f64;
    let top = r.max(m as f64) + 20.0 * r.cbrt() + 40.0;
    let mut n = top.ceil() as usize;
    if n % 2 == 1 {
        n += 1;
    }

    // Neumann-series coefficients c_j for j = 0..=n/2.
    let half = n / 2;
    let mut coeff = Vec::with_capacity(half + 1);
    coeff.push(gamma(nu0 + 1.0));
    let mut g = gamma(nu0 + 1.0); // Γ(ν₀+j)/j! at j = 1
    for j in 1..=half {
        if j > 1 {
            let jm = (j - 1) as f64;
            g *= (nu0 + jm) / (jm + 1.0);
        }
        coeff.push((nu0 + 2.0 * j as f64) * g);
    }

    let mut f_next = 0.0; // f_{k+1}
    let mut f_cur = 1e-30; // f_k
    let mut target = if n == m { f_cur } else { 0.0 };
    let mut norm = if n % 2 == 0 { coeff[n / 2] * f_cur } else { 0.0 };
    for k in (1..=n).rev() {
        let f_prev = 2.0 * (nu0 + k as f64) / r * f_cur - f_next;
        f_next = f_cur;
        f_cur = f_prev;
        let idx = k - 1;
        if idx == m {
            target = f_cur;
        }
        if idx % 2 == 0 {
            norm += coeff[idx / 2] * f_cur;
        }
        if f_cur.abs() > 1e250 {
            f_cur *= 1e-250;
            f_next *= 1e-250;
            norm *= 1e-250;
            target *= 1e-250;
        }
    }
    target * (0.5 * r).powf(nu0) / norm
}

/// Hankel large-argument expansion.
fn bessel_j_hankel(nu: f64, r: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let kf = k as f64;
        term *= (mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * r);
        if term.abs() > last {
            break;
        }
        last = term.abs();
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
        if term.abs() < 1e-17 {
            break;
        }
    }
    let chi = r - (0.5 * nu + 0.25) * PI;
    (2.0 / (PI * r)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// Residual of Bessel's equation `J'' + J'/r + (1 - ν²/r²) J` at `r`,
/// using fourth-order centered differences.
pub fn bessel_ode_residual(order: BesselOrder, r: f64) -> Result<f64> {
    if !r.is_finite() || r <= 0.0 {
        return Err(Error::Domain(format!("bessel_ode_residual needs r > 0, got {r}")));
    }
    let nu = order.0;
    let h = 1e-3 * r.min(1.0);
    let j = |x: f64| bessel_j_unchecked(nu, x);
    let (jm2, jm1, j0, jp1, jp2) = (j(r - 2.0 * h), j(r - h), j(r), j(r + h), j(r + 2.0 * h));
    let d1 = (jm2 - 8.0 * jm1 + 8.0 * jp1 - jp2) / (12.0 * h);
    let d2 = (-jm2 + 16.0 * jm1 - 30.0 * j0 + 16.0 * jp1 - jp2) / (12.0 * h * h);
    Ok((d2 + d1 / r + (1.0 - nu * nu / (r * r)) * j0).abs())
}

/// Modified Bessel function of the second kind `K_s(t)`, `s ∈ (0, 1)`.
pub fn modified_bessel_k(s: f64, t: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("modified_bessel_k needs s in (0,1), got {s}")));
    }
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::Domain(format!("modified_bessel_k needs t > 0, got {t}")));
    }
    Ok(bessel_k_scaled(s, t) * (-t).exp())
}

/// `e^t K_ν(t)` from the trapezoidal rule applied to
/// `∫_0^∞ exp(-t (cosh u - 1)) cosh(νu) du`; the integrand is entire and
/// decays doubly exponentially, so the rule converges geometrically.
pub(crate) fn bessel_k_scaled(nu: f64, t: f64) -> f64 {
    const STEP: f64 = 0.05;
    let integrand = |u: f64| (-t * (u.cosh() - 1.0) + nu * u).exp() * 0.5 * (1.0 + (-2.0 * nu * u).exp());
    let mut sum = 0.5 * integrand(0.0);
    let mut k = 1;
    loop {
        let u = k as f64 * STEP;
        let v = integrand(u);
        sum += v;
        if t * (u.cosh() - 1.0) - nu * u > 45.0 || k > 100_000 {
            break;
        }
        k += 1;
    }
    sum * STEP
}

/// Modified Bessel `I_ν(z)` for real `ν > -1` by its (positive-term for
/// `ν > -1`) power series; adequate for moderate `z`.
pub(crate) fn bessel_i_series(nu: f64, z: f64) -> f64 {
    let x = 0.25 * z * z;
    let mut term = (nu * (0.5 * z).ln() - ln_gamma(nu + 1.0)).exp();
    if nu + 1.0 < 0.0 {
        term *= gamma(nu + 1.0).signum();
    }
    let mut sum = term;
    for k in 1..2000 {
        let k = k as f64;
        term *= x / (k * (k + nu));
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Degree/index of a real spherical harmonic on `S^{n-1}`, `n ∈ {2, 3}`.
///
/// For `n = 2`, `index >= 0` selects `cos(lθ)` and `index < 0` selects
/// `sin(lθ)`. For `n = 3`, `index = m` with `|m| <= l` selects the real
/// harmonic built from `P_l^{|m|}(cos θ)` times `cos(mφ)` (`m > 0`) or
/// `sin(|m|φ)` (`m < 0`). All harmonics have unit L² norm on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SphericalHarmonic {
    dim: usize,
    degree: usize,
    index: i64,
}

impl SphericalHarmonic {
    pub fn new(dim: usize, degree: usize, index: i64) -> Result<Self> {
        match dim {
            2 => {
                if degree == 0 && index < 0 {
                    return Err(Error::Domain("degree-0 circular harmonic has no sine branch".into()));
                }
            }
            3 => {
                if index.unsigned_abs() as usize > degree {
                    return Err(Error::Domain(format!("|m| = {} exceeds l = {degree}", index.abs())));
                }
            }
            other => return Err(Error::UnsupportedDimension(other)),
        }
        Ok(Self { dim, degree, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn index(&self) -> i64 {
        self.index
    }

    /// Eigenvalue `l(l + n - 2)` of `-Δ_{S^{n-1}}`.
    pub fn eigenvalue(&self) -> f64 {
        let l = self.degree as f64;
        l * (l + self.dim as f64 - 2.0)
    }

    /// Normalization factor `N` such that the harmonic equals `N` times its
    /// unnormalized trigonometric/Legendre form.
    pub fn norm_factor(&self) -> f64 {
        let l = self.degree;
        match self.dim {
            2 => {
                if l == 0 {
                    1.0 / (2.0 * PI).sqrt()
                } else {
                    1.0 / PI.sqrt()
                }
            }
            _ => {
                let m = self.index.unsigned_abs() as usize;
                let base = (2 * l + 1) as f64 / (4.0 * PI);
                let ratio = (ln_factorial(l - m) - ln_factorial(l + m)).exp();
                let n = (base * ratio).sqrt();
                if m == 0 {
                    n
                } else {
                    SQRT_2 * n
                }
            }
        }
    }

    /// Unnormalized form: `cos(lθ)`/`sin(lθ)` on the circle, or
    /// `P_l^{|m|}(cos θ) · trig(mφ)` on the sphere.
    pub fn shape(&self, angles: &[f64]) -> f64 {
        let l = self.degree as f64;
        match self.dim {
            2 => {
                let theta = angles[0];
                if self.index >= 0 {
                    (l * theta).cos()
                } else {
                    (l * theta).sin()
                }
            }
            _ => {
                let (theta, phi) = (angles[0], angles[1]);
                let m = self.index.unsigned_abs() as usize;
                let p = associated_legendre(self.degree, m, theta.cos());
                let mf = m as f64;
                match self.index.signum() {
                    1 => p * (mf * phi).cos(),
                    -1 => p * (mf * phi).sin(),
                    _ => p,
                }
            }
        }
    }

    /// Evaluates the unit-norm harmonic. `angles = [θ]` for `n = 2`,
    /// `[θ (polar), φ (azimuth)]` for `n = 3`.
    pub fn eval(&self, angles: &[f64]) -> Result<f64> {
        if angles.len() != self.dim - 1 {
            return Err(Error::Shape(format!(
                "expected {} angle(s) for n = {}, got {}",
                self.dim - 1,
                self.dim,
                angles.len()
            )));
        }
        Ok(self.norm_factor() * self.shape(angles))
    }
}

/// Unit-norm spherical harmonic evaluation.
pub fn spherical_harmonic_eval(h: &SphericalHarmonic, angles: &[f64]) -> Result<f64> {
    h.eval(angles)
}

fn ln_factorial(k: usize) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

/// `P_l^m(x)` without the Condon–Shortley phase, by upward recurrence in `l`.
pub fn associated_legendre(l: usize, m: usize, x: f64) -> f64 {
    if m > l {
        return 0.0;
    }
    let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    let mut pmm = 1.0;
    let mut fact = 1.0;
    for _ in 0..m {
        pmm *= fact * somx2;
        fact += 2.0;
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = (x * (2 * ll - 1) as f64 * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

/// A bounded classical solution of `-Δu = u` in `R^n`.
///
/// For `n = 1` this is `A cos x + B sin x`. For `n >= 2` it is
/// `coefficient · r^{(2-n)/2} J_{n/2+l-1}(r) · Y(θ)` where `Y` is the
/// unnormalized shape of the degree-`l` harmonic (so the default
/// coefficient 1 gives `u(0) = 1` for `n = 2, l = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalSolution {
    dim: usize,
    degree: usize,
    index: i64,
    coefficients: (f64, f64),
    coefficient: f64,
}

impl ClassicalSolution {
    /// `A cos x + B sin x` on the line.
    pub fn line(a: f64, b: f64) -> Self {
        Self { dim: 1, degree: 0, index: 0, coefficients: (a, b), coefficient: 1.0 }
    }

    /// Separated solution of degree `l` in dimension `n >= 2`. Dimensions
    /// above 3 only admit the radial (`l = 0`) member.
    pub fn separated(dim: usize, degree: usize, index: i64) -> Result<Self> {
        match dim {
            0 | 1 => return Err(Error::Domain("use ClassicalSolution::line for n = 1".into())),
            2 | 3 => {
                SphericalHarmonic::new(dim, degree, index)?;
            }
            _ => {
                if degree != 0 {
                    return Err(Error::UnsupportedDimension(dim));
                }
            }
        }
        Ok(Self { dim, degree, index, coefficients: (0.0, 0.0), coefficient: 1.0 })
    }

    pub fn with_coefficient(mut self, c: f64) -> Self {
        self.coefficient = c;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn index(&self) -> i64 {
        self.index
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub fn harmonic(&self) -> Option<SphericalHarmonic> {
        SphericalHarmonic::new(self.dim, self.degree, self.index).ok()
    }

    /// Radial factor `r^{(2-n)/2} J_{n/2+l-1}(r)` (without the coefficient).
    pub fn radial(&self, r: f64) -> f64 {
        radial_profile(self.dim, self.degree, r)
    }

    /// Reduced radial factor `r^{-l}` times [`Self::radial`], regular at 0.
    pub fn reduced_radial(&self, r: f64) -> f64 {
        reduced_radial_profile(self.dim, self.degree, r)
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.dim {
            return Err(Error::Shape(format!("point has {} coordinates, solution lives in n = {}", point.len(), self.dim)));
        }
        if self.dim == 1 {
            let (a, b) = self.coefficients;
            return Ok(a * point[0].cos() + b * point[0].sin());
        }
        let r = point.iter().map(|x| x * x).sum::<f64>().sqrt();
        let radial = self.coefficient * self.radial(r);
        let angular = match self.dim {
            2 => {
                let h = SphericalHarmonic { dim: 2, degree: self.degree, index: self.index };
                h.shape(&[point[1].atan2(point[0])])
            }
            3 => {
                let h = SphericalHarmonic { dim: 3, degree: self.degree, index: self.index };
                let theta = if r > 0.0 { (point[2] / r).clamp(-1.0, 1.0).acos() } else { 0.0 };
                h.shape(&[theta, point[1].atan2(point[0])])
            }
            _ => 1.0,
        };
        Ok(radial * angular)
    }
}

/// Evaluates a classical Helmholtz solution at Cartesian coordinates.
pub fn classical_solution_eval(sol: &ClassicalSolution, point: &[f64]) -> Result<f64> {
    sol.eval(point)
}

/// `r^{(2-n)/2} J_{n/2+l-1}(r)`, continuous at `r = 0`.
pub fn radial_profile(dim: usize, degree: usize, r: f64) -> f64 {
    let l = degree as i32;
    if r == 0.0 {
        return if degree == 0 { reduced_radial_profile(dim, 0, 0.0) } else { 0.0 };
    }
    r.powi(l) * reduced_radial_profile(dim, degree, r)
}

/// `r^{-l} r^{(2-n)/2} J_{n/2+l-1}(r) = 2^{-ν} J_ν(r)/(r/2)^ν` with
/// `ν = n/2 + l - 1`.
pub fn reduced_radial_profile(dim: usize, degree: usize, r: f64) -> f64 {
    let nu = 0.5 * dim as f64 + degree as f64 - 1.0;
    (-nu * std::f64::consts::LN_2).exp() * bessel_j_scaled(nu, r)
}

/// Closed form `J_{1/2}(r) = sqrt(2/(π r)) sin r`.
pub fn half_integer_j(r: f64) -> f64 {
    (2.0 / (PI * r)).sqrt() * r.sin()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(nu: f64, r: f64) -> f64 {
        bessel_j(BesselOrder::new(nu).unwrap(), r).unwrap()
    }

    /// Plain power series with many terms, summed in extended steps; an
    /// oracle independent of the crossover logic for moderate r.
    fn series_oracle(nu: f64, r: f64, terms: usize) -> f64 {
        let mut sum = 0.0;
        for k in 0..terms {
            let kf = k as f64;
            let lt = (2.0 * kf + nu) * (0.5 * r).ln() - ln_gamma(kf + 1.0) - ln_gamma(kf + nu + 1.0);
            let t = lt.exp();
            sum += if k % 2 == 0 { t } else { -t };
        }
        sum
    }

    #[test]
    fn values_at_origin() {
        assert_eq!(j(0.0, 0.0), 1.0);
        assert_eq!(j(1.0, 0.0), 0.0);
    }

    #[test]
    fn first_zero_of_j0_by_bisection_of_series_oracle() {
        let (mut lo, mut hi) = (2.0, 3.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if series_oracle(0.0, lo, 200) * series_oracle(0.0, mid, 200) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let r0 = 0.5 * (lo + hi);
        assert!((r0 - 2.404825557695773).abs() < 1e-12);
        assert!(j(0.0, r0).abs() < 1e-10);
    }

    #[test]
    fn domain_errors() {
        assert!(BesselOrder::new(-0.5).is_err());
        assert!(BesselOrder::new(f64::NAN).is_err());
        assert!(bessel_j(BesselOrder::new(1.0).unwrap(), -1.0).is_err());
        assert!(bessel_j(BesselOrder::new(1.0).unwrap(), f64::INFINITY).is_err());
        assert!(bessel_ode_residual(BesselOrder::new(1.0).unwrap(), 0.0).is_err());
        assert!(modified_bessel_k(0.5, 0.0).is_err());
        assert!(modified_bessel_k(1.5, 1.0).is_err());
    }

    #[test]
    fn half_integer_closed_form_across_the_range() {
        let mut r = 0.1;
        while r <= 50.0 {
            assert!((j(0.5, r) - half_integer_j(r)).abs() <= 1e-10, "r = {r}");
            // J_{3/2} = sqrt(2/(πr)) (sin r / r - cos r)
            let j32 = (2.0 / (PI * r)).sqrt() * (r.sin() / r - r.cos());
            assert!((j(1.5, r) - j32).abs() <= 1e-10, "r = {r}");
            r += 0.37;
        }
    }

    /// Bessel's integral `J_n(r) = (1/π) ∫_0^π cos(nτ − r sin τ) dτ`; the
    /// integrand is smooth and periodic, so the trapezoid rule converges
    /// geometrically.
    fn integral_oracle(n: i32, r: f64) -> f64 {
        let m = 4000;
        let h = PI / m as f64;
        let f = |t: f64| (n as f64 * t - r * t.sin()).cos();
        let inner: f64 = (1..m).map(|k| f(k as f64 * h)).sum();
        (inner + 0.5 * (f(0.0) + f(PI))) * h / PI
    }

    #[test]
    fn agrees_with_oracles_around_crossover_and_beyond() {
        for &nu in &[0.0, 0.5, 1.0, 2.5, 3.0, 7.0] {
            for &r in &[1.0, 5.0] {
                let want = series_oracle(nu, r, 300);
                assert!((j(nu, r) - want).abs() < 1e-10, "nu={nu} r={r} {} {}", j(nu, r), want);
            }
        }
        for &n in &[0, 1, 3, 7] {
            for &r in &[11.9, 12.1, 15.0, 19.0, 40.0, 300.0, 900.0] {
                let want = integral_oracle(n, r);
                assert!((j(n as f64, r) - want).abs() < 1e-11, "n={n} r={r} {} {}", j(n as f64, r), want);
            }
        }
        for &r in &[11.9, 12.1, 15.0, 19.0, 40.0, 300.0] {
            let j52 = (2.0 / (PI * r)).sqrt() * ((3.0 / (r * r) - 1.0) * r.sin() - 3.0 * r.cos() / r);
            assert!((j(2.5, r) - j52).abs() < 1e-11, "r={r}");
        }
    }

    #[test]
    fn miller_matches_hankel_at_large_argument() {
        for &nu in &[0.0, 1.0, 2.5] {
            for &r in &[150.0, 200.0, 600.0] {
                let a = bessel_j_miller(nu, r);
                let b = bessel_j_hankel(nu, r);
                assert!((a - b).abs() < 1e-13, "nu={nu} r={r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn ode_residual_examples() {
        for (nu, r) in [(0.0, 1.0), (2.0, 5.0), (0.5, 2.0)] {
            let res = bessel_ode_residual(BesselOrder::new(nu).unwrap(), r).unwrap();
            assert!(res <= 1e-6, "nu={nu} r={r} res={res}");
        }
        assert!((j(0.5, 2.0) - (2.0 / (PI * 2.0)).sqrt() * 2f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn modified_k_closed_form_and_integral_oracle() {
        let k1 = modified_bessel_k(0.5, 1.0).unwrap();
        assert!((k1 - (PI / 2.0).sqrt() * (-1.0f64).exp()).abs() < 1e-10 * k1);
        let k2 = modified_bessel_k(0.5, 2.0).unwrap();
        assert!((k2 - (PI / 4.0).sqrt() * (-2.0f64).exp()).abs() < 1e-10 * k2);

        // Independent route: K_s = π/(2 sin sπ) (I_{-s} - I_s), fine for moderate t.
        for &s in &[0.25, 0.5, 0.75, 0.9] {
            for &t in &[1e-6, 1e-3, 0.1, 1.0, 3.0] {
                let want = PI / (2.0 * (s * PI).sin()) * (bessel_i_series(-s, t) - bessel_i_series(s, t));
                let got = modified_bessel_k(s, t).unwrap();
                assert!((got - want).abs() < 1e-10 * want, "s={s} t={t}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn modified_k_decays_monotonically() {
        let mut prev = f64::INFINITY;
        for i in 1..=200 {
            let k = modified_bessel_k(0.3, i as f64 * 0.25).unwrap();
            assert!(k < prev && k > 0.0);
            prev = k;
        }
    }

    #[test]
    fn classical_solution_examples() {
        let line = ClassicalSolution::line(1.0, 0.0);
        assert_eq!(line.eval(&[0.0]).unwrap(), 1.0);
        let planar = ClassicalSolution::separated(2, 0, 0).unwrap();
        assert!((planar.eval(&[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        let spatial = ClassicalSolution::separated(3, 0, 0).unwrap();
        assert!(spatial.eval(&[PI, 0.0, 0.0]).unwrap().abs() < 1e-10);
        // radial part of n = 3, l = 0 is sqrt(2/π) sin r / r
        let r: f64 = 1.7;
        let want = (2.0 / PI).sqrt() * r.sin() / r;
        assert!((spatial.eval(&[0.0, r, 0.0]).unwrap() - want).abs() < 1e-13);
        assert!(ClassicalSolution::separated(4, 1, 0).is_err());
        assert!(ClassicalSolution::separated(4, 0, 0).is_ok());
    }

    #[test]
    fn classical_solutions_vanish_at_infinity() {
        for (n, l) in [(2, 0), (2, 3), (3, 1)] {
            let sol = ClassicalSolution::separated(n, l, 0).unwrap();
            let mut max_val = 0.0f64;
            let mut scaled_max = 0.0f64;
            for i in 0..=10_000 {
                let r = i as f64 * 0.01;
                let v = sol.radial(r).abs();
                max_val = max_val.max(v);
                scaled_max = scaled_max.max(v * r.powf((n as f64 - 1.0) / 2.0));
            }
            assert!(sol.radial(100.0).abs() < max_val);
            // r^{(n-1)/2}|u| stays below the sqrt(2/π)-type envelope constant
            assert!(scaled_max < 1.0, "n={n} l={l}: {scaled_max}");
        }
    }

    #[test]
    fn spherical_harmonic_examples() {
        let h0 = SphericalHarmonic::new(2, 0, 0).unwrap();
        assert!((h0.eval(&[1.3]).unwrap() - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        let h3 = SphericalHarmonic::new(2, 3, 0).unwrap();
        assert!((h3.eval(&[0.0]).unwrap() - 1.0 / PI.sqrt()).abs() < 1e-15);
        let y20 = SphericalHarmonic::new(3, 2, 0).unwrap();
        // Legendre oracle: P_2(x) = (3x² - 1)/2 at x = cos(π/2) = 0
        let want = (5.0 / (4.0 * PI)).sqrt() * (-0.5);
        assert!((y20.eval(&[PI / 2.0, 0.3]).unwrap() - want).abs() < 1e-15);
        assert!(matches!(SphericalHarmonic::new(4, 1, 0), Err(Error::UnsupportedDimension(4))));
    }

    #[test]
    fn circular_eigenrelation_second_difference() {
        for l in 0..=8 {
            let h = SphericalHarmonic::new(2, l, 0).unwrap();
            let mut errs = Vec::new();
            for &m in &[64usize, 128] {
                let dth = 2.0 * PI / m as f64;
                let mut err = 0.0f64;
                for i in 0..m {
                    let th = i as f64 * dth;
                    let f = |x: f64| h.eval(&[x]).unwrap();
                    let lap = (f(th + dth) - 2.0 * f(th) + f(th - dth)) / (dth * dth);
                    err = err.max((lap + h.eigenvalue() * f(th)).abs());
                }
                errs.push(err);
            }
            // O(h²): halving the step cuts the defect by ~4
            if l > 0 {
                assert!(errs[1] < errs[0] / 3.5, "l={l}: {errs:?}");
            } else {
                assert!(errs[1] < 1e-12);
            }
        }
    }

    #[test]
    fn sphere_harmonics_are_orthonormal() {
        use crate::quad::GaussRule;
        let rule = GaussRule::new(24);
        let nphi = 48;
        let hs: Vec<SphericalHarmonic> = [(0, 0), (1, -1), (1, 0), (2, 1), (3, -2), (3, 3)]
            .iter()
            .map(|&(l, m)| SphericalHarmonic::new(3, l, m).unwrap())
            .collect();
        for a in &hs {
            for b in &hs {
                let mut acc = 0.0;
                for (x, w) in rule.mapped(-1.0, 1.0) {
                    for k in 0..nphi {
                        let phi = 2.0 * PI * k as f64 / nphi as f64;
                        let th = x.acos();
                        acc += w * (2.0 * PI / nphi as f64) * a.eval(&[th, phi]).unwrap() * b.eval(&[th, phi]).unwrap();
                    }
                }
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((acc - want).abs() < 1e-12, "{a:?} {b:?} {acc}");
            }
        }
    }

    #[test]
    fn reduced_profile_limit_at_origin() {
        // n = 2, l = 1: J_1(r)/r -> 1/2
        assert!((reduced_radial_profile(2, 1, 0.0) - 0.5).abs() < 1e-15);
        assert!((reduced_radial_profile(2, 1, 1e-4) - bessel_j_unchecked(1.0, 1e-4) / 1e-4).abs() < 1e-14);
    }
}
