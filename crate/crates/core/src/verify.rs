//! Report-producing verifiers that sit on top of the module kernels.
//!
//! Each function runs one suite and returns a [`VerificationReport`]; the
//! process-law suites also return CDF overlay tables for plotting. The CLI
//! and the acceptance harness both call these, so there is one
//! implementation of every verdict.

use serde::Serialize;

use crate::capacity::{det_growth_bound, phi_eps_energy};
use crate::error::{Error, Result};
use crate::linalg::{det, gram_schmidt_qr, Matrix};
use crate::process::{
    besq_transition_cdf, sample_time_changed_det, simulate_besm_terminal,
    simulate_wishart_terminal, SimConfig, WishartConfig,
};
use crate::sampling::{gaussian_matrix, par_batches, tags, uniform_in_matrix_ball};
use crate::stats::{ks_one_sample, ks_two_sample, KsResult, LabeledEstimate, VerificationReport};
use crate::weights::claim_1d_bound;

use rand::Rng;

/// Default KS acceptance level for the process-law suites.
pub const KS_P_THRESHOLD: f64 = 0.01;

/// Number of rows in a CDF overlay table.
pub const OVERLAY_POINTS: usize = 101;

/// Empirical CDF next to a reference CDF (or a second empirical CDF) on a
/// common grid of quantiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfOverlay {
    pub name: String,
    /// Rows of `(q, sample CDF, reference CDF)`.
    pub rows: Vec<[f64; 3]>,
}

impl CdfOverlay {
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "q,empirical,reference")?;
        for [q, a, b] in &self.rows {
            writeln!(w, "{q:.16e},{a:.16e},{b:.16e}")?;
        }
        Ok(())
    }
}

fn ecdf(sorted: &[f64], q: f64) -> f64 {
    sorted.partition_point(|&v| v <= q) as f64 / sorted.len() as f64
}

fn overlay_grid(lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    (0..OVERLAY_POINTS).map(move |i| lo + (hi - lo) * i as f64 / (OVERLAY_POINTS - 1) as f64)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

pub fn overlay_one_sample(name: &str, samples: &[f64], cdf: impl Fn(f64) -> f64) -> CdfOverlay {
    let s = sorted(samples.to_vec());
    let (lo, hi) = (s[0].min(0.0), s[s.len() - 1]);
    let rows = overlay_grid(lo, hi).map(|q| [q, ecdf(&s, q), cdf(q)]).collect();
    CdfOverlay { name: name.to_string(), rows }
}

pub fn overlay_two_sample(name: &str, a: &[f64], b: &[f64]) -> CdfOverlay {
    let (a, b) = (sorted(a.to_vec()), sorted(b.to_vec()));
    let lo = a[0].min(b[0]);
    let hi = a[a.len() - 1].max(b[b.len() - 1]);
    let rows = overlay_grid(lo, hi).map(|q| [q, ecdf(&a, q), ecdf(&b, q)]).collect();
    CdfOverlay { name: name.to_string(), rows }
}

fn push_ks(report: &mut VerificationReport, prefix: &str, ks: &KsResult) {
    report.push(LabeledEstimate::exact(format!("{prefix}ks_statistic"), ks.statistic));
    report.push(LabeledEstimate::exact(format!("{prefix}p_value"), ks.p_value));
}

#[derive(Serialize)]
struct QrInputs<'a> {
    dims: &'a [usize],
    n_per_dim: usize,
}

/// Classical Gram–Schmidt on Gaussian matrices: every factorisation must meet
/// the [`crate::linalg::QrFactors`] invariants.
pub fn qr_fidelity_check(dims: &[usize], seed: u64, n_per_dim: usize) -> Result<VerificationReport> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Config("dimensions must be positive".into()));
    }
    let mut report = VerificationReport::new(
        "qr_fidelity",
        &QrInputs { dims, n_per_dim },
        seed,
        (dims.len() * n_per_dim) as u64,
    );
    let mut total = 0usize;
    for &d in dims {
        let per_batch = par_batches(seed, tags::QR_FIDELITY ^ ((d as u64) << 8), n_per_dim, |rng, count| {
            let mut bad = 0usize;
            let mut orth: f64 = 0.0;
            let mut recon: f64 = 0.0;
            for _ in 0..count {
                let x = gaussian_matrix(d, 1.0, rng);
                match gram_schmidt_qr(&x) {
                    Ok(f) => {
                        let qtq = &f.q.transpose() * &f.q;
                        orth = orth.max((&qtq - &Matrix::identity(d)).norm());
                        recon = recon.max((&(&f.q * &f.r) - &x).norm() / (1.0 + x.norm()));
                        bad += usize::from(f.check(&x).is_err());
                    }
                    Err(_) => bad += 1,
                }
            }
            (bad, orth, recon)
        });
        let bad: usize = per_batch.iter().map(|b| b.0).sum();
        let orth = per_batch.iter().map(|b| b.1).fold(0.0, f64::max);
        let recon = per_batch.iter().map(|b| b.2).fold(0.0, f64::max);
        report.push(LabeledEstimate::exact(format!("violations[d={d}]"), bad as f64));
        report.push(LabeledEstimate::exact(format!("max_orthogonality_defect[d={d}]"), orth));
        report.push(LabeledEstimate::exact(format!("max_reconstruction_defect[d={d}]"), recon));
        total += bad;
    }
    report.push(LabeledEstimate::exact("violations", total as f64));
    report.passed = total == 0;
    Ok(report)
}

#[derive(Serialize)]
struct GrowthInputs {
    d: usize,
    k: usize,
    n_samples: usize,
}

/// `|det(x + v)| ≤ c_k(x)‖v‖^{d−k}` for random rank-`k` `x = G₁G₂ᵀ` and `v`
/// uniform in the unit Frobenius ball.
pub fn det_growth_check(d: usize, k: usize, seed: u64, n_samples: usize) -> Result<VerificationReport> {
    if d == 0 || k >= d {
        return Err(Error::Config(format!("need 0 <= k < d, got d = {d}, k = {k}")));
    }
    let tag = tags::DET_GROWTH ^ ((d as u64) << 8) ^ ((k as u64) << 16);
    let per_batch = par_batches(seed, tag, n_samples, |rng, count| {
        let mut bad = 0usize;
        let mut errors = 0usize;
        let mut worst: f64 = 0.0;
        for _ in 0..count {
            let x = random_rank(d, k, rng);
            let v = uniform_in_matrix_ball(&Matrix::zeros(d), 1.0, rng);
            match det_growth_bound(&x, k, &v) {
                Ok(g) => {
                    if !g.holds(x.norm(), d) {
                        bad += 1;
                    }
                    if g.bound > 0.0 {
                        worst = worst.max(g.actual / g.bound);
                    }
                }
                Err(_) => errors += 1,
            }
        }
        (bad, errors, worst)
    });
    let bad: usize = per_batch.iter().map(|b| b.0).sum();
    let errors: usize = per_batch.iter().map(|b| b.1).sum();
    let worst = per_batch.iter().map(|b| b.2).fold(0.0, f64::max);
    let mut report =
        VerificationReport::new("detgrowth", &GrowthInputs { d, k, n_samples }, seed, n_samples as u64);
    report.push(LabeledEstimate::exact("violations", bad as f64));
    report.push(LabeledEstimate::exact("rejected_inputs", errors as f64));
    report.push(LabeledEstimate::exact("max_actual_over_bound", worst));
    report.bound_or_target = 1.0;
    report.passed = bad == 0 && errors == 0;
    Ok(report)
}

fn random_rank(d: usize, k: usize, rng: &mut impl Rng) -> Matrix {
    let mut x = Matrix::zeros(d);
    for _ in 0..k {
        let a: Vec<f64> = (0..d).map(|_| crate::sampling::normal(rng)).collect();
        let b: Vec<f64> = (0..d).map(|_| crate::sampling::normal(rng)).collect();
        for i in 0..d {
            for j in 0..d {
                x[(i, j)] += a[i] * b[j];
            }
        }
    }
    x
}

#[derive(Serialize)]
struct ClaimInputs {
    n_samples: usize,
}

/// The one-dimensional weighted average bound: the equality case
/// `α = −½, β = 0, I = (0, 1)` and random draws of `(α, β, a, b)`.
pub fn claim_1d_check(seed: u64, n_samples: usize) -> Result<VerificationReport> {
    let eq = claim_1d_bound(-0.5, 0.0, 0.0, 1.0)?;
    let per_batch = par_batches(seed, tags::CLAIM_1D, n_samples, |rng, count| {
        let mut bad = 0usize;
        let mut worst: f64 = 0.0;
        for i in 0..count {
            let alpha = -rng.random::<f64>() * 0.999;
            let beta = 5.0 * rng.random::<f64>();
            let a = if i % 4 == 0 { 0.0 } else { 2.0 * rng.random::<f64>() };
            let b = a + 3.0 * (1.0 - rng.random::<f64>());
            match claim_1d_bound(alpha, beta, a, b) {
                Ok(c) => {
                    if c.lhs > c.rhs * (1.0 + 1e-12) {
                        bad += 1;
                    }
                    worst = worst.max(c.lhs / c.rhs);
                }
                Err(_) => bad += 1,
            }
        }
        (bad, worst)
    });
    let bad: usize = per_batch.iter().map(|b| b.0).sum();
    let worst = per_batch.iter().map(|b| b.1).fold(0.0, f64::max);
    let mut report = VerificationReport::new("claim_1d", &ClaimInputs { n_samples }, seed, n_samples as u64);
    report.push(LabeledEstimate::exact("equality_lhs", eq.lhs));
    report.push(LabeledEstimate::exact("equality_rhs", eq.rhs));
    report.push(LabeledEstimate::exact("violations", bad as f64));
    report.push(LabeledEstimate::exact("max_lhs_over_rhs", worst));
    report.bound_or_target = 2.0;
    report.tolerance = 1e-12;
    report.passed = (eq.lhs - 2.0).abs() <= 1e-12 && (eq.rhs - 2.0).abs() <= 1e-12 && bad == 0;
    Ok(report)
}

/// Relative tolerance for the energy closed forms.
pub const PHI_ENERGY_TOLERANCE: f64 = 1e-6;

#[derive(Serialize)]
struct PhiInputs {
    eps: f64,
}

/// Quadrature energies of `φ_ε` against `ε/2` and `3ε²/2`.
pub fn phi_energy_check(eps: f64) -> Result<VerificationReport> {
    let e = phi_eps_energy(eps)?;
    let (g_target, h_target) = (eps / 2.0, 1.5 * eps * eps);
    let mut report = VerificationReport::new("phi_energy", &PhiInputs { eps }, 0, 0);
    report.push(LabeledEstimate::exact("g_energy", e.g_energy));
    report.push(LabeledEstimate::exact("g_energy_closed_form", g_target));
    report.push(LabeledEstimate::exact("h_middle_energy", e.h_middle_energy));
    report.push(LabeledEstimate::exact("h_middle_energy_closed_form", h_target));
    report.push(LabeledEstimate::exact("total", e.total));
    report.bound_or_target = g_target;
    report.tolerance = PHI_ENERGY_TOLERANCE;
    report.passed = ((e.g_energy - g_target) / g_target).abs() <= PHI_ENERGY_TOLERANCE
        && ((e.h_middle_energy - h_target) / h_target).abs() <= PHI_ENERGY_TOLERANCE;
    Ok(report)
}

/// Simulation settings shared by the process-law suites.
#[derive(Debug, Clone, Serialize)]
struct ProcessInputs<'a> {
    cfg: &'a SimConfig,
    extra: f64,
}

fn surviving_terminals(cfg: &SimConfig) -> Result<(Vec<Matrix>, usize)> {
    let out = simulate_besm_terminal(cfg)?;
    let blown = out.iter().filter(|s| s.blowup_flag).count();
    Ok((out.into_iter().filter(|s| !s.blowup_flag).map(|s| s.state).collect(), blown))
}

/// `‖X_T‖²` against the BESQ(`d(d−1+δ)`) law started at `‖x₀‖²`.
pub fn norm_law_check(cfg: &SimConfig) -> Result<(VerificationReport, Vec<CdfOverlay>)> {
    let (terminals, blown) = surviving_terminals(cfg)?;
    let d = cfg.d as f64;
    let dim = d * (d - 1.0 + cfg.delta);
    let x0 = cfg.x0.dot(&cfg.x0);
    let t = cfg.horizon;
    let samples: Vec<f64> = terminals.iter().map(|x| x.dot(x)).collect();
    let cdf = |q: f64| besq_transition_cdf(dim, x0, t, q);
    let ks = ks_one_sample(&sorted(samples.clone()), cdf)?;
    let mut report = VerificationReport::new(
        "norm_law",
        &ProcessInputs { cfg, extra: dim },
        cfg.seed,
        cfg.n_paths as u64,
    );
    push_ks(&mut report, "", &ks);
    report.push(LabeledEstimate::exact("besq_dimension", dim));
    report.push(LabeledEstimate::exact("blowup_paths", blown as f64));
    report.bound_or_target = KS_P_THRESHOLD;
    report.passed = ks.p_value > KS_P_THRESHOLD;
    Ok((report, vec![overlay_one_sample("norm_law", &samples, cdf)]))
}

/// Distributions of `tr` and `det` of `X_TᵀX_T` against a Wishart ensemble
/// with `α = d−1+δ` started at `x₀ᵀx₀`.
pub fn coupling_check(cfg: &SimConfig) -> Result<(VerificationReport, Vec<CdfOverlay>)> {
    let (terminals, blown) = surviving_terminals(cfg)?;
    let alpha = cfg.d as f64 - 1.0 + cfg.delta;
    let wcfg = WishartConfig {
        alpha,
        z0: &cfg.x0.transpose() * &cfg.x0,
        horizon: cfg.horizon,
        dt: cfg.dt,
        seed: cfg.seed,
        n_paths: cfg.n_paths,
    };
    let wishart = simulate_wishart_terminal(&wcfg)?;
    let gram: Vec<Matrix> = terminals.iter().map(|x| &x.transpose() * x).collect();
    let tr_x: Vec<f64> = gram.iter().map(Matrix::trace).collect();
    let det_x: Vec<f64> = gram.iter().map(det).collect();
    let tr_z: Vec<f64> = wishart.iter().map(Matrix::trace).collect();
    let det_z: Vec<f64> = wishart.iter().map(det).collect();
    let ks_tr = ks_two_sample(&tr_x, &tr_z)?;
    let ks_det = ks_two_sample(&det_x, &det_z)?;
    let mut report = VerificationReport::new(
        "coupling",
        &ProcessInputs { cfg, extra: alpha },
        cfg.seed,
        cfg.n_paths as u64,
    );
    push_ks(&mut report, "trace_", &ks_tr);
    push_ks(&mut report, "det_", &ks_det);
    report.push(LabeledEstimate::exact("wishart_alpha", alpha));
    report.push(LabeledEstimate::exact("blowup_paths", blown as f64));
    report.bound_or_target = KS_P_THRESHOLD;
    report.passed = ks_tr.p_value > KS_P_THRESHOLD && ks_det.p_value > KS_P_THRESHOLD;
    let overlays = vec![
        overlay_two_sample("coupling_trace", &tr_x, &tr_z),
        overlay_two_sample("coupling_det", &det_x, &det_z),
    ];
    Ok((report, overlays))
}

/// `ξ_u²` against the BESQ(δ) law at time `u` started at `det(x₀)²`.
///
/// `cfg.horizon` caps the simulated time; paths whose clock `A` has not
/// reached `u` by then are counted and fail the check, since dropping them
/// would bias the sample.
pub fn det_time_change_check(cfg: &SimConfig, u: f64) -> Result<(VerificationReport, Vec<CdfOverlay>)> {
    let tc = sample_time_changed_det(cfg, u)?;
    let x0 = det(&cfg.x0).powi(2);
    let samples: Vec<f64> = tc.values.iter().map(|v| v * v).collect();
    let cdf = |q: f64| besq_transition_cdf(cfg.delta, x0, u, q);
    let ks = ks_one_sample(&sorted(samples.clone()), cdf)?;
    let mut report = VerificationReport::new(
        "det_timechange",
        &ProcessInputs { cfg, extra: u },
        cfg.seed,
        cfg.n_paths as u64,
    );
    push_ks(&mut report, "", &ks);
    report.push(LabeledEstimate::exact("unreached_paths", tc.unreached as f64));
    report.push(LabeledEstimate::exact("blowup_paths", tc.blown_up as f64));
    report.bound_or_target = KS_P_THRESHOLD;
    report.passed = ks.p_value > KS_P_THRESHOLD && tc.unreached == 0 && tc.blown_up == 0;
    Ok((report, vec![overlay_one_sample("det_timechange", &samples, cdf)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_fidelity_small_run_passes() {
        let r = qr_fidelity_check(&[2, 3, 6], 5, 2_000).unwrap();
        assert!(r.passed, "{}", r.to_json_line());
        assert_eq!(r.value("violations"), Some(0.0));
    }

    #[test]
    fn det_growth_small_runs_pass() {
        for (d, k) in [(2, 0), (3, 1), (4, 3)] {
            let r = det_growth_check(d, k, 3, 2_000).unwrap();
            assert!(r.passed, "{}", r.to_json_line());
        }
        assert!(det_growth_check(2, 2, 0, 10).is_err());
    }

    #[test]
    fn claim_equality_case_is_exact() {
        let r = claim_1d_check(1, 5_000).unwrap();
        assert_eq!(r.value("equality_lhs"), Some(2.0));
        assert_eq!(r.value("equality_rhs"), Some(2.0));
        assert!(r.passed);
    }

    #[test]
    fn phi_energy_matches_closed_forms() {
        let r = phi_energy_check(0.25).unwrap();
        assert!(r.passed);
        assert!((r.value("g_energy").unwrap() - 0.125).abs() < 1e-7);
    }

    #[test]
    fn overlay_tables_are_cdfs() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let o = overlay_one_sample("u", &xs, |q| q.clamp(0.0, 1.0));
        assert_eq!(o.rows.len(), OVERLAY_POINTS);
        assert_eq!(o.rows.last().unwrap()[1], 1.0);
        assert!(o.rows.windows(2).all(|w| w[0][1] <= w[1][1]));
        let mut buf = Vec::new();
        o.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("q,empirical,reference\n"));
    }

    #[test]
    fn norm_law_small_ensemble() {
        let cfg = SimConfig::new(Matrix::identity(2), 2.0, 0.5, 1e-2, 3, 400);
        let (r, o) = norm_law_check(&cfg).unwrap();
        assert!(r.value("p_value").unwrap() > 1e-4, "{}", r.to_json_line());
        assert_eq!(o.len(), 1);
    }
}
