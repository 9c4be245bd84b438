//! The weight `w(x) = |det x|^α` and integrals of it in QR coordinates.
//!
//! Writing a nonsingular `x = QR` with `Q ∈ O(d)` and `R` upper triangular with
//! positive diagonal turns Lebesgue measure into `μ(dQ) Π R_ii^{d−i} dR`, so
//! over a set `U·K` (with `K` a cube of intervals `I_ij`) the weighted integral
//! factorises into one-dimensional power integrals times the Haar mass `μ(U)`.
//! The Haar normalisation is not computed symbolically; it is calibrated by
//! Monte Carlo ([`calibrate_haar_mass`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{det, gram_schmidt_qr, Matrix};
use crate::quadrature;
use crate::sampling::{batch_means, tags, uniform_in_ball, unit_ball_volume, MeanSe, StreamRng};
use crate::stats::{within_sigmas, LabeledEstimate, VerificationReport};

/// Weight exponent `α` for `w(x) = |det x|^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub alpha: f64,
}

impl WeightSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::Domain(format!("alpha must be finite, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    /// Weight of the symmetrising measure `|det x|^{δ−1} dx`.
    pub fn from_delta(delta: f64) -> Result<Self> {
        Self::new(delta - 1.0)
    }

    /// Local integrability holds exactly when `α > −1`.
    pub fn locally_integrable(&self) -> bool {
        self.alpha > -1.0
    }
}

pub fn weight(x: &Matrix, spec: WeightSpec) -> Result<f64> {
    let dx = det(x).abs();
    if spec.alpha < 0.0 && dx == 0.0 {
        return Err(Error::SingularAtNegativeExponent);
    }
    Ok(dx.powf(spec.alpha))
}

/// Bounded open interval `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Domain(format!("interval ({lo}, {hi}) is empty or unbounded")));
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, t: f64) -> bool {
        self.lo < t && t < self.hi
    }

    fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

/// A cube `K = Π_{i≤j} I_ij` in the upper-triangular group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeSpec {
    d: usize,
    /// Row-major upper triangle: `(0,0), (0,1), …, (0,d−1), (1,1), …`.
    intervals: Vec<Interval>,
}

impl CubeSpec {
    pub fn new(d: usize, mut interval: impl FnMut(usize, usize) -> Interval) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("d must be positive".into()));
        }
        let mut intervals = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in i..d {
                let iv = interval(i, j);
                Interval::new(iv.lo, iv.hi)?;
                if i == j && iv.lo < 0.0 {
                    return Err(Error::Domain(format!(
                        "diagonal interval I_{i}{i} = ({}, {}) must lie in (0, ∞)",
                        iv.lo, iv.hi
                    )));
                }
                intervals.push(iv);
            }
        }
        Ok(Self { d, intervals })
    }

    /// The reference cube with every `I_ij = (0, 1)`.
    pub fn unit(d: usize) -> Self {
        Self::new(d, |_, _| Interval { lo: 0.0, hi: 1.0 }).expect("unit cube is valid")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn interval(&self, i: usize, j: usize) -> Interval {
        assert!(i <= j && j < self.d);
        // rows 0..i of the packed upper triangle hold d + (d−1) + … entries
        let offset = i * self.d - i * (i.saturating_sub(1)) / 2;
        self.intervals[offset + (j - i)]
    }

    /// Whether an upper-triangular `r` has every entry `r_ij ∈ I_ij`.
    pub fn contains(&self, r: &Matrix) -> bool {
        let mut idx = 0;
        for i in 0..self.d {
            for j in i..self.d {
                if !self.intervals[idx].contains(r[(i, j)]) {
                    return false;
                }
                idx += 1;
            }
        }
        true
    }

    /// Radius of a ball in `R^d` containing column `j` of every `QR` with `R ∈ K`.
    fn column_radius(&self, j: usize) -> f64 {
        (0..=j).map(|i| self.interval(i, j).max_abs().powi(2)).sum::<f64>().sqrt()
    }
}

/// `∫_a^b t^p dt`, or `None` if it diverges.
pub fn power_integral(p: f64, a: f64, b: f64) -> Option<f64> {
    if a <= 0.0 && p <= -1.0 {
        return None;
    }
    if p == -1.0 {
        return Some((b / a).ln());
    }
    let q = p + 1.0;
    Some((b.powf(q) - a.max(0.0).powf(q)) / q)
}

/// `Π_{i<j}|I_ij| · Π_i ∫_{I_ii} t^{α+d−i} dt` (1-based `i`), which equals
/// `∫_{U·K} w dx / μ(U)`.
pub fn qr_cube_integral(spec: WeightSpec, cube: &CubeSpec) -> Result<f64> {
    let d = cube.dim();
    let mut total = 1.0;
    for i in 0..d {
        for j in i + 1..d {
            total *= cube.interval(i, j).len();
        }
        let iv = cube.interval(i, i);
        let p = spec.alpha + (d - i - 1) as f64;
        total *= power_integral(p, iv.lo, iv.hi).ok_or(Error::DivergentIntegral { exponent: p })?;
    }
    Ok(total)
}

/// Proposal for Monte Carlo over `O(d)·K`: every column `x_j` uniform in the
/// ball of radius `|r_j|_max`. Returns the sample and whether it lies in
/// `O(d)·K`.
struct RegionSampler<'a> {
    cube: &'a CubeSpec,
    radii: Vec<f64>,
    volume: f64,
}

impl<'a> RegionSampler<'a> {
    fn new(cube: &'a CubeSpec) -> Self {
        let d = cube.dim();
        let radii: Vec<f64> = (0..d).map(|j| cube.column_radius(j)).collect();
        let volume = radii.iter().map(|r| unit_ball_volume(d) * r.powi(d as i32)).product();
        Self { cube, radii, volume }
    }

    fn draw(&self, rng: &mut StreamRng) -> (Matrix, bool) {
        let d = self.cube.dim();
        let cols: Vec<Vec<f64>> = self.radii.iter().map(|&r| uniform_in_ball(d, r, rng)).collect();
        let x = Matrix::from_columns(&cols);
        let inside = match gram_schmidt_qr(&x) {
            Ok(qr) => self.cube.contains(&qr.r),
            Err(_) => false,
        };
        (x, inside)
    }
}

/// Monte Carlo estimate of the Haar normalisation `μ(O(d))` with its standard
/// error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HaarMass {
    pub value: f64,
    pub stderr: f64,
}

pub const MIN_CALIBRATION_SAMPLES: usize = 10_000;

/// Estimates `μ(O(d))` as `|O(d)·K₀| / qr_cube_integral(0, K₀)` where `K₀` is
/// the unit cube and the volume comes from Monte Carlo.
pub fn calibrate_haar_mass(d: usize, seed: u64, n_samples: usize) -> Result<HaarMass> {
    if n_samples < MIN_CALIBRATION_SAMPLES {
        return Err(Error::Domain(format!(
            "calibration needs at least {MIN_CALIBRATION_SAMPLES} samples, got {n_samples}"
        )));
    }
    let cube = CubeSpec::unit(d);
    let sampler = RegionSampler::new(&cube);
    let vol = batch_means(seed, tags::HAAR_CALIBRATION, n_samples, 1, |rng, obs| {
        let (_, inside) = sampler.draw(rng);
        obs[0] = if inside { sampler.volume } else { 0.0 };
    })[0];
    let closed = qr_cube_integral(WeightSpec { alpha: 0.0 }, &cube)?;
    Ok(HaarMass { value: vol.mean / closed, stderr: vol.stderr / closed })
}

/// Truncation levels for the divergence probe.
pub const TRUNCATION_LEVELS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// Minimal growth factor per decade of truncation demanded of a divergent
/// integral.
pub const DIVERGENCE_GROWTH: f64 = 2.0;

#[derive(Serialize)]
struct RadonInputs {
    alpha: f64,
    d: usize,
    n_samples: usize,
}

/// Probes local integrability of `|det x|^α` on `O(d)·K₀`.
///
/// For `α > −1` a direct Monte Carlo integral is compared with the calibrated
/// closed form (pass within three combined standard errors). For `α ≤ −1`
/// integrals truncated to `{|det x| > ε}` are estimated for the levels in
/// [`TRUNCATION_LEVELS`]; the probe passes when they increase by more than
/// [`DIVERGENCE_GROWTH`] per decade. The matching closed-form truncated
/// integrals are reported alongside.
pub fn radon_threshold_probe(
    spec: WeightSpec,
    d: usize,
    seed: u64,
    n_samples: usize,
) -> Result<VerificationReport> {
    let inputs = RadonInputs { alpha: spec.alpha, d, n_samples };
    let mut report = VerificationReport::new("radon", &inputs, seed, n_samples as u64);
    let cube = CubeSpec::unit(d);
    let sampler = RegionSampler::new(&cube);
    let mu = calibrate_haar_mass(d, seed, n_samples)?;
    report.push(LabeledEstimate::new("haar_mass", mu.value, mu.stderr));

    if spec.locally_integrable() {
        let direct = batch_means(seed, tags::RADON_DIRECT, n_samples, 1, |rng, obs| {
            let (x, inside) = sampler.draw(rng);
            if inside {
                obs[0] = sampler.volume * det(&x).abs().powf(spec.alpha);
            }
        })[0];
        let closed = qr_cube_integral(spec, &cube)?;
        let predicted = MeanSe { mean: mu.value, stderr: mu.stderr }.scaled(closed);
        report
            .push(LabeledEstimate::exact("closed_form", closed))
            .push(LabeledEstimate::new("direct_integral", direct.mean, direct.stderr))
            .push(LabeledEstimate::new("calibrated_prediction", predicted.mean, predicted.stderr));
        report.bound_or_target = predicted.mean;
        report.tolerance = 3.0;
        report.passed =
            within_sigmas(direct.mean, direct.stderr, predicted.mean, predicted.stderr, 3.0);
    } else {
        let levels = TRUNCATION_LEVELS;
        let masses = batch_means(seed, tags::RADON_TRUNCATED, n_samples, levels.len(), |rng, obs| {
            let (x, inside) = sampler.draw(rng);
            if !inside {
                return;
            }
            let dx = det(&x).abs();
            let w = sampler.volume * dx.powf(spec.alpha);
            for (o, eps) in obs.iter_mut().zip(levels) {
                if dx > eps {
                    *o = w;
                }
            }
        });
        let exponents: Vec<f64> = (0..d).map(|i| spec.alpha + (d - i - 1) as f64).collect();
        let mut passed = true;
        for (k, (eps, m)) in levels.iter().zip(&masses).enumerate() {
            report.push(LabeledEstimate::new(format!("mass[eps={eps:e}]"), m.mean, m.stderr));
            let oracle = mu.value * truncated_unit_cube_integral(&exponents, *eps);
            report.push(LabeledEstimate::new(
                format!("closed_form[eps={eps:e}]"),
                oracle,
                mu.stderr / mu.value * oracle,
            ));
            if k > 0 {
                let prev = masses[k - 1].mean;
                let growth = if prev > 0.0 { m.mean / prev } else { f64::INFINITY };
                report.push(LabeledEstimate::exact(
                    format!("growth[{:e}->{eps:e}]", levels[k - 1]),
                    growth,
                ));
                passed &= growth > DIVERGENCE_GROWTH;
            }
        }
        report.bound_or_target = DIVERGENCE_GROWTH;
        report.tolerance = 0.0;
        report.passed = passed;
    }
    Ok(report)
}

/// `∫_{(0,1)^m} Π t_i^{p_i} 1{Π t_i > ε} dt` by nested Gauss–Legendre in the
/// logarithmic variables `s_i = −ln t_i`, where the constraint becomes
/// `Σ s_i < ln(1/ε)`.
pub fn truncated_unit_cube_integral(exponents: &[f64], eps: f64) -> f64 {
    fn inner(c: &[f64], budget: f64) -> f64 {
        if budget <= 0.0 {
            return 0.0;
        }
        match c {
            [] => 1.0,
            [c0] => {
                if *c0 == 0.0 {
                    budget
                } else {
                    -(-c0 * budget).exp_m1() / c0
                }
            }
            [c0, rest @ ..] => quadrature::integrate(
                |s| (-c0 * s).exp() * inner(rest, budget - s),
                0.0,
                budget,
                // the kernel decays on an O(1) scale in s
                (2.0 * budget).ceil().max(4.0) as usize,
                16,
            ),
        }
    }
    let c: Vec<f64> = exponents.iter().map(|p| p + 1.0).collect();
    inner(&c, (1.0 / eps).ln())
}

/// `(lhs, rhs, C)` for the one-dimensional weight inequality
/// `∫_I t^{α+β} dt ≤ C ∫_I t^β dt · inf_I t^α` with `C = (β+1)/(α+β+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaimBound {
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
}

pub fn claim_1d_bound(alpha: f64, beta: f64, a: f64, b: f64) -> Result<ClaimBound> {
    if !(alpha > -1.0 && alpha <= 0.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (-1, 0]")));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("beta = {beta} must be >= 0")));
    }
    if !(a >= 0.0 && a < b && b.is_finite()) {
        return Err(Error::Domain(format!("need 0 <= a < b, got ({a}, {b})")));
    }
    let q = alpha + beta + 1.0;
    let lhs = (b.powf(q) - a.powf(q)) / q;
    let constant = (beta + 1.0) / q;
    let int_beta = (b.powf(beta + 1.0) - a.powf(beta + 1.0)) / (beta + 1.0);
    // t^α is nonincreasing for α ≤ 0, so the infimum sits at b
    let rhs = constant * int_beta * b.powf(alpha);
    Ok(ClaimBound { lhs, rhs, constant })
}

/// Draws a sample from `rng` uniformly over `O(d)·K` together with its
/// membership flag; exposed for integration tests of the region geometry.
pub fn sample_region(cube: &CubeSpec, rng: &mut StreamRng) -> (Matrix, bool, f64) {
    let s = RegionSampler::new(cube);
    let (x, inside) = s.draw(rng);
    (x, inside, s.volume)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn weight_examples() {
        let w = WeightSpec::new(-0.5).unwrap();
        assert_eq!(weight(&Matrix::identity(3), w).unwrap(), 1.0);
        let w = WeightSpec::new(0.5).unwrap();
        assert_eq!(weight(&Matrix::from_diag(&[4.0, 1.0]), w).unwrap(), 2.0);
        let x = Matrix::from_rows(&[[0.3, -1.2, 0.4], [1.1, 0.5, -0.7], [0.2, 0.9, 1.6]]);
        let dx = det(&x);
        assert_relative_eq!(
            weight(&x, WeightSpec::new(2.0).unwrap()).unwrap(),
            dx * dx,
            max_relative = 1e-12
        );
        let sing = Matrix::from_diag(&[1.0, 0.0]);
        assert_eq!(
            weight(&sing, WeightSpec::new(-0.5).unwrap()),
            Err(Error::SingularAtNegativeExponent)
        );
        assert_eq!(weight(&sing, WeightSpec::new(0.0).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn integrability_flag() {
        assert!(WeightSpec::new(-0.99).unwrap().locally_integrable());
        assert!(!WeightSpec::new(-1.0).unwrap().locally_integrable());
        assert!(WeightSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn cube_indexing() {
        let c = CubeSpec::new(3, |i, j| Interval { lo: (10 * i + j) as f64, hi: 100.0 }).unwrap();
        for i in 0..3 {
            for j in i..3 {
                assert_eq!(c.interval(i, j).lo, (10 * i + j) as f64);
            }
        }
        assert!(CubeSpec::new(2, |i, j| Interval { lo: if i == j { -1.0 } else { 0.0 }, hi: 1.0 })
            .is_err());
        assert!(CubeSpec::new(2, |_, _| Interval { lo: 1.0, hi: 1.0 }).is_err());
    }

    #[test]
    fn cube_integral_examples() {
        let v = qr_cube_integral(WeightSpec { alpha: 0.0 }, &CubeSpec::unit(2)).unwrap();
        assert_relative_eq!(v, 0.5, epsilon = 1e-15);

        let e = qr_cube_integral(WeightSpec { alpha: -1.0 }, &CubeSpec::unit(2));
        assert!(matches!(e, Err(Error::DivergentIntegral { .. })));

        // α=1, I11=I22=(1,2), I12=(0,1): ∫₁²t² dt · ∫₁² t dt = (7/3)(3/2)
        let cube = CubeSpec::new(2, |i, j| {
            if i == j {
                Interval { lo: 1.0, hi: 2.0 }
            } else {
                Interval { lo: 0.0, hi: 1.0 }
            }
        })
        .unwrap();
        let v = qr_cube_integral(WeightSpec { alpha: 1.0 }, &cube).unwrap();
        assert_relative_eq!(v, 3.5, epsilon = 1e-14);

        // α = −1 is fine away from zero: ∫₁² t⁰ · ∫₁² t^{-1} = ln 2
        let v = qr_cube_integral(WeightSpec { alpha: -1.0 }, &cube).unwrap();
        assert_relative_eq!(v, 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn haar_mass_in_one_dimension_is_two() {
        let m = calibrate_haar_mass(1, 5, 10_000).unwrap();
        assert!((m.value - 2.0).abs() <= 3.0 * m.stderr + 1e-12, "{m:?}");
    }

    #[test]
    fn haar_mass_matches_group_volume() {
        // vol O(d) = 2^d π^{d²/2} / Γ_d(d/2) in the metric induced by Lebesgue
        // measure: 4π for d = 2, 16π² for d = 3.
        let m2 = calibrate_haar_mass(2, 9, 200_000).unwrap();
        assert!((m2.value - 4.0 * PI).abs() < 3.0 * m2.stderr, "{m2:?}");
        let m3 = calibrate_haar_mass(3, 9, 400_000).unwrap();
        assert!((m3.value - 16.0 * PI * PI).abs() < 3.0 * m3.stderr, "{m3:?}");
    }

    #[test]
    fn calibration_is_deterministic_and_needs_samples() {
        let a = calibrate_haar_mass(2, 42, 20_000).unwrap();
        let b = calibrate_haar_mass(2, 42, 20_000).unwrap();
        assert_eq!(a, b);
        assert!(calibrate_haar_mass(2, 42, 9_999).is_err());
    }

    #[test]
    fn calibration_error_shrinks_like_root_n() {
        let a = calibrate_haar_mass(2, 17, 100_000).unwrap();
        let b = calibrate_haar_mass(2, 18, 200_000).unwrap();
        let ratio = b.stderr / a.stderr;
        // 1/√2 ≈ 0.707; batch-means errors are themselves noisy at 32 batches
        assert!((0.45..0.95).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn truncated_oracle_log_growth() {
        // exponents (α+1, α) with α = −1: μ-free mass is ln(1/ε) − 1 + ε
        for eps in TRUNCATION_LEVELS {
            let v = truncated_unit_cube_integral(&[0.0, -1.0], eps);
            let exact = (1.0 / eps).ln() - 1.0 + eps;
            assert_relative_eq!(v, exact, max_relative = 1e-10);
        }
        // untruncated limit of a convergent case: ∫ t^{0.5} ∫ t^{-0.5} = (2/3)(2)
        let v = truncated_unit_cube_integral(&[0.5, -0.5], 1e-300);
        assert_relative_eq!(v, 4.0 / 3.0, max_relative = 1e-8);
    }

    #[test]
    fn claim_examples() {
        let c = claim_1d_bound(-0.5, 0.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(c.lhs, 2.0, epsilon = 1e-12);
        assert_relative_eq!(c.rhs, 2.0, epsilon = 1e-12);
        assert_relative_eq!(c.constant, 2.0, epsilon = 1e-12);

        let c = claim_1d_bound(0.0, 2.5, 0.3, 1.7).unwrap();
        assert_eq!(c.constant, 1.0);
        assert_relative_eq!(c.lhs, c.rhs, max_relative = 1e-14);

        // α = −0.9, β = 3, I = (1,2): exact antiderivatives
        let c = claim_1d_bound(-0.9, 3.0, 1.0, 2.0).unwrap();
        let lhs = (2f64.powf(3.1) - 1.0) / 3.1;
        let rhs = (4.0 / 3.1) * (15.0 / 4.0) * 2f64.powf(-0.9);
        assert_relative_eq!(c.lhs, lhs, max_relative = 1e-14);
        assert_relative_eq!(c.rhs, rhs, max_relative = 1e-14);
        assert!(c.lhs <= c.rhs);
    }

    #[test]
    fn claim_domain_errors() {
        assert!(claim_1d_bound(-1.0, 0.0, 0.0, 1.0).is_err());
        assert!(claim_1d_bound(0.1, 0.0, 0.0, 1.0).is_err());
        assert!(claim_1d_bound(-0.5, -0.1, 0.0, 1.0).is_err());
        assert!(claim_1d_bound(-0.5, 0.0, 1.0, 1.0).is_err());
        assert!(claim_1d_bound(-0.5, 0.0, -0.5, 1.0).is_err());
    }
}
