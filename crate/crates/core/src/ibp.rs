//! Monte Carlo check of `⟨∇f, G⟩ = ⟨f, ∇*G⟩` in `L²(E, m)` with
//! `m(dx) = |det x|^{δ−1} dx` on `E = {det x ≥ 0}` and
//! `∇*G = −(div G + (δ−1) x^{−⊤}•G)`.
//!
//! Samples come from `m` restricted to `SO(d)·K`, a region containing the
//! support of `f`, drawn directly in QR coordinates where `m` becomes
//! `Π R_ii^{δ−1+d−i}` (1-based `i`) times Haar measure. Both sides are estimated on the same
//! samples and compared through their paired difference.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{adjugate, det, inverse_transpose, Matrix};
use crate::sampling::{batch_means, haar_orthogonal, tags, StreamRng};
use crate::stats::{LabeledEstimate, VerificationReport};

/// Smooth bump `f(x) = exp(1 − 1/(1 − s))`, `s = ‖x − c‖²/ρ²`, supported in
/// `B(c, ρ)` with `f(c) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bump {
    pub center_scale: f64,
    pub rho: f64,
}

impl Bump {
    fn center(&self, d: usize) -> Matrix {
        Matrix::identity(d).scale(self.center_scale)
    }

    /// Value and gradient at `x`.
    pub fn eval(&self, x: &Matrix) -> (f64, Matrix) {
        let diff = x - &self.center(x.dim());
        let s = diff.dot(&diff) / (self.rho * self.rho);
        if s >= 1.0 {
            return (0.0, Matrix::zeros(x.dim()));
        }
        let f = (1.0 - 1.0 / (1.0 - s)).exp();
        let df_ds = -f / ((1.0 - s) * (1.0 - s));
        (f, diff.scale(df_ds * 2.0 / (self.rho * self.rho)))
    }

    /// Whether the support meets `∂E`. The distance from `cI` to the singular
    /// matrices is `|c|`.
    pub fn crosses_boundary(&self) -> bool {
        self.rho > self.center_scale.abs()
    }

    fn support_bound(&self, d: usize) -> f64 {
        self.center_scale.abs() * (d as f64).sqrt() + self.rho
    }
}

pub fn test_function(id: &str) -> Result<Bump> {
    match id {
        "bump-boundary" => Ok(Bump { center_scale: 2.0, rho: 2.5 }),
        "bump-interior" => Ok(Bump { center_scale: 2.0, rho: 1.0 }),
        _ => Err(Error::UnknownCatalogId(id.to_string())),
    }
}

/// Vector fields with closed-form divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Field {
    /// `G(x) = x`.
    Scaling,
    /// `G(x) = xB` for a fixed `B`.
    RightLinear,
    /// `G(x) = C` for a fixed `C`.
    Constant,
    /// `G(x) = adj(x)^⊤ = ∇ det x`.
    GradDet,
}

pub fn vector_field(id: &str) -> Result<Field> {
    match id {
        "scaling" => Ok(Field::Scaling),
        "linear" => Ok(Field::RightLinear),
        "constant" => Ok(Field::Constant),
        "grad-det" => Ok(Field::GradDet),
        _ => Err(Error::UnknownCatalogId(id.to_string())),
    }
}

fn fixed_b(d: usize) -> Matrix {
    Matrix::from_fn(d, |i, j| if i == j { 0.5 + 0.25 * i as f64 } else { 0.3 * (i as f64 - j as f64) })
}

fn fixed_c(d: usize) -> Matrix {
    Matrix::from_fn(d, |i, j| 1.0 / (1.0 + i as f64 + 2.0 * j as f64))
}

impl Field {
    /// Fields whose flow preserves the sign of `det`, so no boundary term
    /// appears whatever the weight.
    pub fn is_tangent(self) -> bool {
        matches!(self, Field::Scaling | Field::RightLinear)
    }

    pub fn eval(self, x: &Matrix) -> Matrix {
        let d = x.dim();
        match self {
            Field::Scaling => x.clone(),
            Field::RightLinear => x * &fixed_b(d),
            Field::Constant => fixed_c(d),
            Field::GradDet => adjugate(x).transpose(),
        }
    }

    /// `∇*G(x)` for `m` with parameter `δ`; `x` must be nonsingular.
    pub fn adjoint(self, x: &Matrix, delta: f64) -> f64 {
        let d = x.dim() as f64;
        match self {
            Field::Scaling => -(d * d + (delta - 1.0) * d),
            Field::RightLinear => -(d + delta - 1.0) * fixed_b(x.dim()).trace(),
            // divergence-free; the drift term is (δ−1) x^{−⊤}•C
            Field::Constant => match inverse_transpose(x) {
                Some(xit) => -(delta - 1.0) * xit.dot(&fixed_c(x.dim())),
                None => f64::NAN,
            },
            // Σ ∂cof_ij/∂x_ij = 0 and x^{−⊤}•adj(x)^⊤ = ‖adj x‖²/det x
            Field::GradDet => {
                let adj = adjugate(x);
                -(delta - 1.0) * adj.dot(&adj) / det(x)
            }
        }
    }
}

/// Catalog pairs `(f, G)`: tangent fields with a bump that crosses `∂E`,
/// non-tangent fields with a bump inside `Ω`.
pub const CATALOG: [(&str, &str); 4] = [
    ("bump-boundary", "scaling"),
    ("bump-boundary", "linear"),
    ("bump-interior", "constant"),
    ("bump-interior", "grad-det"),
];

#[derive(Serialize)]
struct IbpInputs<'a> {
    d: usize,
    delta: f64,
    f_id: &'a str,
    g_id: &'a str,
    n_samples: usize,
}

/// Draws from `m` restricted to `SO(d)·K`, `K = {0 < R_ii < L, |R_ij| < L}`.
fn sample_m(d: usize, delta: f64, l: f64, rng: &mut StreamRng) -> Matrix {
    let mut q = haar_orthogonal(d, rng);
    if det(&q) < 0.0 {
        let c: Vec<f64> = q.column(0).iter().map(|v| -v).collect();
        q.set_column(0, &c);
    }
    let mut r = Matrix::zeros(d);
    for i in 0..d {
        // density ∝ t^{δ−1+d−1−i} on (0, L) for 0-based i
        let p = delta - 1.0 + (d - 1 - i) as f64;
        let u: f64 = rng.random();
        r.as_mut_slice()[i * d + i] = l * (1.0 - u).powf(1.0 / (p + 1.0));
        for j in i + 1..d {
            r.as_mut_slice()[i * d + j] = rng.random_range(-l..l);
        }
    }
    &q * &r
}

/// Estimates both sides of the integration-by-parts identity for the catalog
/// entries `f_id`, `g_id` and passes if they agree within three standard
/// errors of the paired difference.
///
/// A non-tangent field with `δ ≤ 1` and a test function whose support meets
/// `∂E` is rejected: the boundary term does not vanish there.
pub fn ibp_check(
    d: usize,
    delta: f64,
    f_id: &str,
    g_id: &str,
    seed: u64,
    n_samples: usize,
) -> Result<VerificationReport> {
    let f = test_function(f_id)?;
    let g = vector_field(g_id)?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    if d == 0 {
        return Err(Error::Domain("d must be positive".into()));
    }
    if !g.is_tangent() && delta <= 1.0 && f.crosses_boundary() {
        return Err(Error::UnsupportedCombination(format!(
            "field {g_id} is not tangent to the boundary and {f_id} reaches it with delta = {delta} <= 1"
        )));
    }
    let l = f.support_bound(d);
    let est = batch_means(seed, tags::IBP, n_samples, 3, |rng, obs| {
        let x = sample_m(d, delta, l, rng);
        let (fv, grad) = f.eval(&x);
        if fv == 0.0 {
            return;
        }
        let lhs = grad.dot(&g.eval(&x));
        let rhs = fv * g.adjoint(&x, delta);
        obs[0] = lhs;
        obs[1] = rhs;
        obs[2] = lhs - rhs;
    });
    let mut report = VerificationReport::new(
        "ibp",
        &IbpInputs { d, delta, f_id, g_id, n_samples },
        seed,
        n_samples as u64,
    );
    let (lhs, rhs, diff) = (est[0], est[1], est[2]);
    report
        .push(LabeledEstimate::new("lhs", lhs.mean, lhs.stderr))
        .push(LabeledEstimate::new("rhs", rhs.mean, rhs.stderr))
        .push(LabeledEstimate::new("difference", diff.mean, diff.stderr));
    report.bound_or_target = 0.0;
    report.tolerance = 3.0;
    report.passed = diff.mean.is_finite() && diff.mean.abs() <= 3.0 * diff.stderr;
    Ok(report)
}
