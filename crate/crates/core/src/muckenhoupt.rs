//! Ball normalisation, the Gram–Schmidt perturbation claim and the A₁ ratio
//! of `|det x|^α` on matrix balls.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{adjugate, det, gram_schmidt_qr, Matrix};
use crate::sampling::{
    batch_means, par_batches, stream, tags, uniform_in_ball, uniform_in_matrix_ball, StreamRng,
};
use crate::stats::{LabeledEstimate, VerificationReport};
use crate::weights::WeightSpec;

/// Separation constant `a = 18d` in the ball condition.
pub fn default_separation(d: usize) -> f64 {
    18.0 * d as f64
}

/// Diagonal centre `Σ = diag(σ)` with radius `r`, optionally tagged with the
/// index `n` of the last large singular value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaBall {
    pub sigma: Vec<f64>,
    pub radius: f64,
    pub n: Option<usize>,
}

impl SigmaBall {
    pub fn new(sigma: Vec<f64>, radius: f64, n: Option<usize>) -> Result<Self> {
        check_sigma(&sigma, radius)?;
        let ball = Self { sigma, radius, n };
        if let Some(n) = n {
            if n > ball.dim() {
                return Err(Error::Domain(format!("n = {n} exceeds d = {}", ball.dim())));
            }
        }
        Ok(ball)
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn center(&self) -> Matrix {
        Matrix::from_diag(&self.sigma)
    }

    /// Checks `σ_i > a·r` for `i ≤ n` and `σ_i = 0` for `i > n`.
    pub fn satisfies_separation(&self, a: f64) -> std::result::Result<usize, String> {
        let n = self.n.ok_or_else(|| "index n is absent".to_string())?;
        for (i, &s) in self.sigma.iter().enumerate() {
            if i < n && s <= a * self.radius {
                return Err(format!("sigma_{} = {s} <= {a} * {}", i + 1, self.radius));
            }
            if i >= n && s != 0.0 {
                return Err(format!("sigma_{} = {s} should vanish (n = {n})", i + 1));
            }
        }
        Ok(n)
    }
}

fn check_sigma(sigma: &[f64], r: f64) -> Result<()> {
    if sigma.is_empty() {
        return Err(Error::Domain("sigma is empty".into()));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("radius must be positive, got {r}")));
    }
    if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::Domain("sigma must be finite and nonnegative".into()));
    }
    if sigma.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Domain("sigma must be nonincreasing".into()));
    }
    Ok(())
}

/// Enlarges `B(Σ, r)` to a ball `B(Σ', r')` satisfying the separation
/// condition with `a = 18d`.
pub fn normalize_ball(sigma: &[f64], r: f64) -> Result<SigmaBall> {
    normalize_ball_with(sigma, r, default_separation(sigma.len()))
}

/// [`normalize_ball`] with an explicit separation constant `a`.
pub fn normalize_ball_with(sigma: &[f64], r: f64, a: f64) -> Result<SigmaBall> {
    check_sigma(sigma, r)?;
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Domain(format!("separation constant must be positive, got {a}")));
    }
    let d = sigma.len();
    let threshold = |i: usize| a * (1.0 + a).powi((d - i) as i32) * r;
    // 1-based index of the last σ_i above its threshold
    let n = (1..=d).rev().find(|&i| sigma[i - 1] > threshold(i)).unwrap_or(0);
    let mut trimmed = sigma.to_vec();
    trimmed[n..].iter_mut().for_each(|s| *s = 0.0);
    let radius = r * (1.0 + a).powi((d - n) as i32);
    Ok(SigmaBall { sigma: trimmed, radius, n: Some(n) })
}

/// Constant bounding `‖R − Σ‖/r` and `σ_i|q_i − e_i|/r`.
pub fn c3(d: usize) -> f64 {
    let df = d as f64;
    let rs = df * ((3.0 + 18.0 * df) / 5.0 + 1.5 * (df - 1.0) + df);
    (11.0 * df).max(rs)
}

/// Radius factor with `U·K ⊂ B_*(Σ, C₂ r)`.
pub fn c2(d: usize) -> f64 {
    let df = d as f64;
    ((df * (df + 1.0) / 2.0).sqrt() + df.sqrt()) * c3(d)
}

/// Product of the one-dimensional claim constants `(β+1)/(α+β+1)` with
/// `β = d − i` over the diagonal coordinates.
pub fn c1(d: usize, alpha: f64) -> f64 {
    (1..=d)
        .map(|i| {
            let b = (d - i) as f64;
            (b + 1.0) / (alpha + b + 1.0)
        })
        .product()
}

/// The A₁ constant `C₁ C₂^{d²} (1+18d)^{d³}`.
pub fn c_report(d: usize, alpha: f64) -> f64 {
    let d2 = (d * d) as i32;
    c1(d, alpha) * c2(d).powi(d2) * (1.0 + 18.0 * d as f64).powi(d2 * d as i32)
}

pub const MIN_CLAIM_SAMPLES: usize = 1_000;

#[derive(Serialize)]
struct ClaimInputs<'a> {
    ball: &'a SigmaBall,
    n_samples: usize,
}

/// Samples `x ∈ B_*(Σ, r)`, counts violations of `‖R − Σ‖ < C₃r` and
/// `|q_i − e_i| < C₃r/σ_i` (`i ≤ n`), and separately checks that random
/// elements `QR` of `U·K` stay inside `B(Σ, C₂r)`.
pub fn qr_claim_check(ball: &SigmaBall, seed: u64, n_samples: usize) -> Result<VerificationReport> {
    let d = ball.dim();
    let n = ball
        .satisfies_separation(default_separation(d))
        .map_err(Error::ConditionSigViolated)?;
    if n_samples < MIN_CLAIM_SAMPLES {
        return Err(Error::TooFewSamples { needed: MIN_CLAIM_SAMPLES, got: n_samples });
    }
    let r = ball.radius;
    let center = ball.center();
    let k3 = c3(d);
    let k2 = c2(d);

    let count = |f: &(dyn Fn(&mut StreamRng) -> Counts + Sync), tag| {
        par_batches(seed, tag, n_samples, |rng, m| {
            (0..m).fold(Counts::default(), |acc, _| acc.add(f(rng)))
        })
        .into_iter()
        .fold(Counts::default(), Counts::add)
    };

    let claim = count(
        &|rng| {
            let x = uniform_in_matrix_ball(&center, r, rng);
            let Ok(qr) = gram_schmidt_qr(&x) else {
                return Counts { r_viol: 1, q_viol: 1, ..Counts::default() };
            };
            let r_dev = (&qr.r - &center).norm();
            let mut q_dev = 0.0f64;
            let mut q_bad = false;
            for i in 0..n {
                let mut col = qr.q.column(i);
                col[i] -= 1.0;
                let dev = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                q_dev = q_dev.max(dev * ball.sigma[i] / r);
                q_bad |= dev >= k3 * r / ball.sigma[i];
            }
            Counts {
                r_viol: u64::from(r_dev >= k3 * r),
                q_viol: u64::from(q_bad),
                worst_r: r_dev / r,
                worst_q: q_dev,
                ..Counts::default()
            }
        },
        tags::QR_CLAIM,
    );

    let boundary = count(
        &|rng| {
            let q = sample_u(ball, n, k3, rng);
            let rr = sample_k(&center, k3 * r, rng);
            let dist = (&(&q * &rr) - &center).norm();
            Counts { uk_viol: u64::from(dist >= k2 * r), worst_uk: dist / r, ..Counts::default() }
        },
        tags::QR_BOUNDARY,
    );

    let mut report =
        VerificationReport::new("qr_claim", &ClaimInputs { ball, n_samples }, seed, n_samples as u64);
    report
        .push(LabeledEstimate::exact("c3", k3))
        .push(LabeledEstimate::exact("c2", k2))
        .push(LabeledEstimate::exact("r_violations", claim.r_viol as f64))
        .push(LabeledEstimate::exact("q_violations", claim.q_viol as f64))
        .push(LabeledEstimate::exact("max_r_deviation_over_r", claim.worst_r))
        .push(LabeledEstimate::exact("max_q_deviation_scaled", claim.worst_q))
        .push(LabeledEstimate::exact("uk_violations", boundary.uk_viol as f64))
        .push(LabeledEstimate::exact("max_uk_distance_over_r", boundary.worst_uk));
    report.bound_or_target = 0.0;
    report.tolerance = 0.0;
    report.passed = claim.r_viol + claim.q_viol + boundary.uk_viol == 0;
    Ok(report)
}

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    r_viol: u64,
    q_viol: u64,
    uk_viol: u64,
    worst_r: f64,
    worst_q: f64,
    worst_uk: f64,
}

impl Counts {
    fn add(self, o: Counts) -> Counts {
        Counts {
            r_viol: self.r_viol + o.r_viol,
            q_viol: self.q_viol + o.q_viol,
            uk_viol: self.uk_viol + o.uk_viol,
            worst_r: self.worst_r.max(o.worst_r),
            worst_q: self.worst_q.max(o.worst_q),
            worst_uk: self.worst_uk.max(o.worst_uk),
        }
    }
}

/// Element of `U = {Q ∈ O(d) : |q_i − e_i| < C₃r/σ_i, i ≤ n}`: Gram–Schmidt of
/// columns `e_i + h_i` with `|h_i|` of order the allowed deviation for `i ≤ n`
/// and Gaussian columns otherwise, rejected until it lands in `U`.
fn sample_u(ball: &SigmaBall, n: usize, k3: f64, rng: &mut StreamRng) -> Matrix {
    let d = ball.dim();
    let tol: Vec<f64> = (0..n).map(|i| k3 * ball.radius / ball.sigma[i]).collect();
    loop {
        let cols: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                if j < n {
                    let mut c = uniform_in_ball(d, tol[j], rng);
                    c[j] += 1.0;
                    c
                } else {
                    (0..d).map(|_| crate::sampling::normal(rng)).collect()
                }
            })
            .collect();
        let Ok(qr) = gram_schmidt_qr(&Matrix::from_columns(&cols)) else { continue };
        let inside = (0..n).all(|i| {
            let mut c = qr.q.column(i);
            c[i] -= 1.0;
            c.iter().map(|v| v * v).sum::<f64>().sqrt() < tol[i]
        });
        if inside {
            return qr.q;
        }
    }
}

/// Element of `K = {R ∈ T(d) : max |R_ij − Σ_ij| < h}`, uniform over the cube.
fn sample_k(center: &Matrix, h: f64, rng: &mut StreamRng) -> Matrix {
    let d = center.dim();
    let mut r = Matrix::zeros(d);
    for i in 0..d {
        for j in i..d {
            let lo = if i == j { (center[(i, i)] - h).max(0.0) } else { center[(i, j)] - h };
            let hi = center[(i, j)] + h;
            let mut v = rng.random_range(lo..hi);
            while i == j && v <= 0.0 {
                v = rng.random_range(lo..hi);
            }
            r.as_mut_slice()[i * d + j] = v;
        }
    }
    r
}

/// Open Frobenius ball `B(center, radius)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub center: Matrix,
    pub radius: f64,
}

impl BallSpec {
    pub fn new(center: Matrix, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Domain(format!("radius must be positive, got {radius}")));
        }
        if !center.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Self { center, radius })
    }

    /// A random ball: centre entries standard normal scaled by a log-uniform
    /// factor in `[10^-2, 10]`, radius log-uniform in `[10^-2, 10]`. Balls of
    /// all relative sizes, near and far from the singular set, are covered.
    pub fn random(d: usize, seed: u64, index: u64) -> Self {
        let mut rng = stream(seed, tags::A1_BALLS, index);
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        let radius = 10f64.powf(rng.random_range(-2.0..1.0));
        let center = Matrix::from_fn(d, |_, _| scale * crate::sampling::normal(&mut rng));
        Self { center, radius }
    }

    fn project(&self, x: &Matrix) -> Matrix {
        let diff = x - &self.center;
        let n = diff.norm();
        if n <= self.radius {
            return x.clone();
        }
        let mut out = self.center.clone();
        out.axpy(self.radius / n, &diff);
        out
    }
}

/// Number of starting points of the determinant ascent.
pub const ASCENT_STARTS: usize = 32;
const ASCENT_TOL: f64 = 1e-9;
const ASCENT_MAX_ITERS: usize = 20_000;

/// `sup |det|` over the closed ball, by projected gradient ascent from the
/// centre and `ASCENT_STARTS − 1` random interior points. The result is a
/// lower bound for the true supremum.
pub fn max_abs_det(ball: &BallSpec, rng: &mut StreamRng) -> f64 {
    let mut best = det(&ball.center).abs();
    for s in 0..ASCENT_STARTS {
        let start = if s == 0 {
            ball.center.clone()
        } else {
            uniform_in_matrix_ball(&ball.center, ball.radius, rng)
        };
        best = best.max(ascend(ball, start));
    }
    best
}

fn ascend(ball: &BallSpec, mut x: Matrix) -> f64 {
    let mut f = det(&x).abs();
    let mut step = ball.radius;
    for _ in 0..ASCENT_MAX_ITERS {
        let dx = det(&x);
        let sign = if dx < 0.0 { -1.0 } else { 1.0 };
        let grad = adjugate(&x).transpose().scale(sign);
        // projected gradient mapping with unit step measures stationarity
        let mut probe = x.clone();
        probe.axpy(1.0, &grad);
        if (&ball.project(&probe) - &x).norm() < ASCENT_TOL {
            break;
        }
        let gn = grad.norm();
        if gn == 0.0 {
            break;
        }
        let mut t = step / gn;
        let mut moved = false;
        while t * gn > 1e-16 * (1.0 + x.norm()) {
            let mut y = x.clone();
            y.axpy(t, &grad);
            let y = ball.project(&y);
            let fy = det(&y).abs();
            if fy > f + 1e-4 * grad.dot(&(&y - &x)) {
                x = y;
                f = fy;
                moved = true;
                step = (2.0 * t * gn).min(ball.radius);
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    f
}

/// Upper bound for `sup_{B} |det|`: Hadamard's inequality with the AM–GM step,
/// `|det x| ≤ (‖x‖/√d)^d ≤ ((‖c‖ + r)/√d)^d`.
pub fn hadamard_det_bound(ball: &BallSpec) -> f64 {
    let d = ball.center.dim() as f64;
    ((ball.center.norm() + ball.radius) / d.sqrt()).powf(d)
}

#[derive(Serialize)]
struct A1Inputs<'a> {
    alpha: f64,
    ball: &'a BallSpec,
    n_samples: usize,
}

/// Ratio of the ball average of `|det x|^α` to its infimum, `α ∈ (−1, 0]`.
///
/// The infimum is `(sup_B |det|)^α`. Gradient ascent yields a lower bound on
/// the supremum and thus a ratio that may underestimate the truth; the
/// Hadamard bound gives a ratio that can only overestimate it. Both are
/// compared with [`c_report`].
pub fn muckenhoupt_a1_ratio(
    spec: WeightSpec,
    ball: &BallSpec,
    seed: u64,
    n_samples: usize,
) -> Result<VerificationReport> {
    let alpha = spec.alpha;
    if !(alpha > -1.0 && alpha <= 0.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (-1, 0]")));
    }
    let d = ball.center.dim();
    let avg = batch_means(seed, tags::A1_AVERAGE, n_samples, 1, |rng, obs| {
        let x = uniform_in_matrix_ball(&ball.center, ball.radius, rng);
        obs[0] = det(&x).abs().powf(alpha);
    })[0];
    let sup_ascent = max_abs_det(ball, &mut stream(seed, tags::A1_ASCENT, 0));
    let sup_bound = hadamard_det_bound(ball);
    let inf_ascent = sup_ascent.powf(alpha);
    let inf_bound = sup_bound.powf(alpha);
    let bound = c_report(d, alpha);
    let mut report = VerificationReport::new(
        "muckenhoupt_a1",
        &A1Inputs { alpha, ball, n_samples },
        seed,
        n_samples as u64,
    );
    let ratio = avg.scaled(1.0 / inf_ascent);
    let ratio_upper = avg.scaled(1.0 / inf_bound);
    report
        .push(LabeledEstimate::new("average", avg.mean, avg.stderr))
        .push(LabeledEstimate::exact("sup_abs_det_ascent", sup_ascent))
        .push(LabeledEstimate::exact("sup_abs_det_hadamard", sup_bound))
        .push(LabeledEstimate::new("ratio", ratio.mean, ratio.stderr))
        .push(LabeledEstimate::new("ratio_upper", ratio_upper.mean, ratio_upper.stderr))
        .push(LabeledEstimate::exact("c_report", bound));
    report.bound_or_target = bound;
    report.tolerance = 0.0;
    report.passed = ratio.mean <= bound && ratio_upper.mean <= bound;
    Ok(report)
}
