//! Verdict machinery shared by the verifiers: Kolmogorov–Smirnov tests,
//! log-log slope fits and the [`VerificationReport`] record.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// p-values are floored here so that reports never contain an exact zero.
pub const P_VALUE_FLOOR: f64 = 1e-16;

const KS_MIN_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Jacobi-theta form converges fast for small lambda.
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 1..=100 {
            let j = (2 * k - 1) as f64;
            let term = (-j * j * c).exp();
            s += term;
            if term < 1e-16 * s {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-10 * s.abs().max(1e-300) {
                break;
            }
        }
        2.0 * s
    };
    p.clamp(P_VALUE_FLOOR, 1.0)
}

fn ks_p_value(statistic: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    kolmogorov_sf((sq + 0.12 + 0.11 / sq) * statistic)
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// One-sample KS test of `samples` against a continuous reference CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    let n = samples.len();
    if n < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples { needed: KS_MIN_SAMPLES, got: n });
    }
    let xs = sorted(samples);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    Ok(KsResult { statistic: d, p_value: ks_p_value(d, nf), n })
}

/// Two-sample KS test with the effective sample size `nm/(n+m)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    for s in [a, b] {
        if s.len() < KS_MIN_SAMPLES {
            return Err(Error::TooFewSamples { needed: KS_MIN_SAMPLES, got: s.len() });
        }
    }
    let xa = sorted(a);
    let xb = sorted(b);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let n_eff = na * nb / (na + nb);
    Ok(KsResult { statistic: d, p_value: ks_p_value(d, n_eff), n: xa.len() + xb.len() })
}

/// Slope of `log y` against `log x` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
}

/// Weighted least squares on `(log x, log y)`.
///
/// When every `ys_stderr` entry is positive the weights are the delta-method
/// inverse variances `(y/se)²` and the slope error follows from them. Otherwise
/// the fit is unweighted and the error comes from the residuals.
pub fn loglog_slope(xs: &[f64], ys: &[f64], ys_stderr: &[f64]) -> Result<SlopeFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n || ys_stderr.len() != n {
        return Err(Error::DegenerateInput(format!(
            "need matching arrays of at least 2 points (got {n}, {}, {})",
            ys.len(),
            ys_stderr.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateInput("all values must be positive and finite".into()));
    }
    let u: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let v: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let weighted = ys_stderr.iter().all(|s| *s > 0.0);
    let w: Vec<f64> = if weighted {
        ys.iter().zip(ys_stderr).map(|(y, s)| (y / s).powi(2)).collect()
    } else {
        vec![1.0; n]
    };
    let sw: f64 = w.iter().sum();
    let ubar = w.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / sw;
    let vbar = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / sw;
    let suu: f64 = w.iter().zip(&u).map(|(a, b)| a * (b - ubar).powi(2)).sum();
    if !(suu > 0.0) {
        return Err(Error::DegenerateInput("x values are all equal".into()));
    }
    let suv: f64 = (0..n).map(|i| w[i] * (u[i] - ubar) * (v[i] - vbar)).sum();
    let slope = suv / suu;
    let intercept = vbar - slope * ubar;
    let stderr = if weighted {
        (1.0 / suu).sqrt()
    } else if n > 2 {
        let rss: f64 = (0..n).map(|i| (v[i] - intercept - slope * u[i]).powi(2)).sum();
        (rss / (n as f64 - 2.0) / suu).sqrt()
    } else {
        0.0
    };
    Ok(SlopeFit { slope, stderr, intercept })
}

/// A labelled estimate with its standard error (zero for exact values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEstimate {
    pub label: String,
    pub value: f64,
    pub stderr: f64,
}

impl LabeledEstimate {
    pub fn new(label: impl Into<String>, value: f64, stderr: f64) -> Self {
        Self { label: label.into(), value, stderr }
    }
    pub fn exact(label: impl Into<String>, value: f64) -> Self {
        Self::new(label, value, 0.0)
    }
}

/// Machine-readable outcome of one verifier run.
///
/// Serialised as one JSON object per line. `wall_time` is kept out of the JSON
/// so that reruns with identical inputs are byte-identical; the CLI logs
/// timings separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub verifier_id: String,
    pub inputs_digest: String,
    pub estimates: Vec<LabeledEstimate>,
    pub bound_or_target: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub n_samples: u64,
    pub seed: u64,
    #[serde(skip, default)]
    pub wall_time: f64,
}

impl VerificationReport {
    pub fn new<I: Serialize>(verifier_id: &str, inputs: &I, seed: u64, n_samples: u64) -> Self {
        Self {
            verifier_id: verifier_id.to_string(),
            inputs_digest: inputs_digest(verifier_id, inputs),
            estimates: Vec::new(),
            bound_or_target: 0.0,
            tolerance: 0.0,
            passed: false,
            n_samples,
            seed,
            wall_time: 0.0,
        }
    }

    pub fn push(&mut self, e: LabeledEstimate) -> &mut Self {
        self.estimates.push(e);
        self
    }

    pub fn estimate(&self, label: &str) -> Option<&LabeledEstimate> {
        self.estimates.iter().find(|e| e.label == label)
    }

    pub fn value(&self, label: &str) -> Option<f64> {
        self.estimate(label).map(|e| e.value)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serialisation cannot fail")
    }
}

/// Stable hex digest of a verifier id and its inputs.
pub fn inputs_digest<I: Serialize>(verifier_id: &str, inputs: &I) -> String {
    let json = serde_json::to_string(inputs).expect("inputs serialise");
    let mut h = Sha256::new();
    h.update(verifier_id.as_bytes());
    h.update([0u8]);
    h.update(json.as_bytes());
    hex::encode(&h.finalize()[..16])
}

/// `|a − b| ≤ k · sqrt(se_a² + se_b²)`, with exact equality accepted when both
/// errors vanish.
pub fn within_sigmas(a: f64, se_a: f64, b: f64, se_b: f64, k: f64) -> bool {
    let comb = (se_a * se_a + se_b * se_b).sqrt();
    let diff = (a - b).abs();
    diff <= k * comb || diff <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}
