use std::path::PathBuf;

use besm_core::capacity::{capacity_scaling_experiment, StratumSpec, DEFAULT_EPS_GRID};
use besm_core::ibp::ibp_check;
use besm_core::muckenhoupt::{default_separation, muckenhoupt_a1_ratio, qr_claim_check, BallSpec, SigmaBall};
use besm_core::process::{girsanov_det_martingale, SimConfig};
use besm_core::stats::VerificationReport;
use besm_core::verify::{
    coupling_check, det_growth_check, det_time_change_check, norm_law_check, phi_energy_check,
    CdfOverlay,
};
use besm_core::weights::{radon_threshold_probe, WeightSpec};
use clap::{Args, Subcommand};

use crate::output::{create, parse_x0, write_capacity_table, write_reports};
use crate::{Failure, Outcome};

#[derive(Args, Debug)]
pub struct Common {
    #[arg(long, env = "BESM_SEED", default_value_t = 0, global = true)]
    pub seed: u64,
    /// Run directory; reports go to `<suite>.jsonl` inside it.
    #[arg(long, default_value = "besm-run", global = true)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ProcessArgs {
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 2.0)]
    pub delta: f64,
    #[arg(long, default_value = "identity")]
    pub x0: String,
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
}

impl ProcessArgs {
    fn config(&self, seed: u64) -> Result<SimConfig, Failure> {
        let x0 = parse_x0(&self.x0, self.d)?;
        let cfg = SimConfig::new(x0, self.delta, self.horizon, self.dt, seed, self.paths);
        cfg.validate()?;
        if self.paths < 50 {
            return Err(Failure::Config(format!("KS tests need at least 50 paths, got {}", self.paths)));
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
pub enum Suite {
    /// Local integrability threshold of |det x|^alpha.
    Radon {
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
    },
    /// A1 ratio of |det x|^alpha on random balls, or on one given ball.
    Muckenhoupt {
        #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 20)]
        balls: usize,
        /// Centre of a single ball (`identity`, `diag:...` or a file); needs --radius.
        #[arg(long, requires = "radius")]
        center: Option<String>,
        #[arg(long, requires = "center")]
        radius: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Gram-Schmidt perturbation claim on a separated ball.
    QrClaim {
        #[arg(long)]
        d: usize,
        /// Number of large singular values.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        /// sigma_i = scale * 18d * r for i <= n.
        #[arg(long, default_value_t = 100.0)]
        sigma_scale: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Weighted integration by parts for one catalog pair.
    Ibp {
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value = "bump-boundary")]
        f: String,
        #[arg(long, default_value = "scaling")]
        g: String,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Determinant growth near the rank-k stratum.
    Detgrowth {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Tube mass scaling around the rank-k stratum.
    Capacity {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        delta: f64,
        /// Decreasing grid in (0, 0.5), at least four points.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Energies of the capacity test functions.
    PhiEnergy {
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
    },
    /// Gram matrix of BESM against the Wishart process.
    Coupling(ProcessArgs),
    /// Squared norm of BESM against its squared Bessel law.
    NormLaw(ProcessArgs),
    /// Time-changed determinant against its squared Bessel law.
    DetTimechange {
        #[command(flatten)]
        process: ProcessArgs,
        #[arg(long, default_value_t = 0.5)]
        u: f64,
    },
    /// Martingale property of the stopped determinant of matrix Brownian motion.
    Girsanov {
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long = "T", default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
    },
}

impl Suite {
    fn name(&self) -> &'static str {
        match self {
            Suite::Radon { .. } => "radon",
            Suite::Muckenhoupt { .. } => "muckenhoupt",
            Suite::QrClaim { .. } => "qr-claim",
            Suite::Ibp { .. } => "ibp",
            Suite::Detgrowth { .. } => "detgrowth",
            Suite::Capacity { .. } => "capacity",
            Suite::PhiEnergy { .. } => "phi-energy",
            Suite::Coupling(_) => "coupling",
            Suite::NormLaw(_) => "norm-law",
            Suite::DetTimechange { .. } => "det-timechange",
            Suite::Girsanov { .. } => "girsanov",
        }
    }
}

fn execute(suite: &Suite, seed: u64) -> Result<(Vec<VerificationReport>, Vec<CdfOverlay>), Failure> {
    let mut overlays = Vec::new();
    let reports = match suite {
        Suite::Radon { alpha, d, samples } => {
            vec![radon_threshold_probe(WeightSpec::new(*alpha)?, *d, seed, *samples)?]
        }
        Suite::Muckenhoupt { alpha, d, balls, center, radius, samples } => {
            let spec = WeightSpec::new(*alpha)?;
            let balls: Vec<BallSpec> = match (center, radius) {
                (Some(c), Some(r)) => vec![BallSpec::new(parse_x0(c, *d)?, *r)?],
                _ => (0..*balls as u64).map(|i| BallSpec::random(*d, seed, i)).collect(),
            };
            if balls.is_empty() {
                return Err(Failure::Config("--balls must be positive".into()));
            }
            balls
                .iter()
                .map(|b| muckenhoupt_a1_ratio(spec, b, seed, *samples))
                .collect::<Result<_, _>>()?
        }
        Suite::QrClaim { d, n, r, sigma_scale, samples } => {
            if *n > *d {
                return Err(Failure::Config(format!("n = {n} exceeds d = {d}")));
            }
            let s = sigma_scale * default_separation(*d) * r;
            let sigma = (0..*d).map(|i| if i < *n { s } else { 0.0 }).collect();
            let ball = SigmaBall::new(sigma, *r, Some(*n))?;
            vec![qr_claim_check(&ball, seed, *samples)?]
        }
        Suite::Ibp { d, delta, f, g, samples } => vec![ibp_check(*d, *delta, f, g, seed, *samples)?],
        Suite::Detgrowth { d, k, samples } => vec![det_growth_check(*d, *k, seed, *samples)?],
        Suite::Capacity { d, k, delta, eps, samples } => {
            let grid = eps.clone().unwrap_or_else(|| DEFAULT_EPS_GRID.to_vec());
            let res = capacity_scaling_experiment(StratumSpec::new(*d, *k)?, *delta, &grid, seed, *samples)?;
            vec![res.to_report(seed, *samples)]
        }
        Suite::PhiEnergy { eps } => eps.iter().map(|&e| phi_energy_check(e)).collect::<Result<_, _>>()?,
        Suite::Coupling(p) => {
            let (r, o) = coupling_check(&p.config(seed)?)?;
            overlays = o;
            vec![r]
        }
        Suite::NormLaw(p) => {
            let (r, o) = norm_law_check(&p.config(seed)?)?;
            overlays = o;
            vec![r]
        }
        Suite::DetTimechange { process, u } => {
            let (r, o) = det_time_change_check(&process.config(seed)?, *u)?;
            overlays = o;
            vec![r]
        }
        Suite::Girsanov { d, horizon, dt, paths } => {
            if *paths < 2 {
                return Err(Failure::Config("need at least 2 paths".into()));
            }
            vec![girsanov_det_martingale(*d, *horizon, *dt, seed, *paths)?]
        }
    };
    Ok((reports, overlays))
}

pub fn run(suite: &Suite, common: &Common) -> Outcome {
    let (reports, overlays) = execute(suite, common.seed)?;
    write_reports(&common.out, &format!("{}.jsonl", suite.name()), &reports)?;
    for o in &overlays {
        let mut w = create(&common.out, &format!("overlay_{}.csv", o.name))?;
        o.write_csv(&mut w)?;
        std::io::Write::flush(&mut w)?;
    }
    write_capacity_table(&common.out, &reports)?;
    for r in &reports {
        println!("{}", r.to_json_line());
    }
    let passed = reports.iter().all(|r| r.passed);
    eprintln!(
        "{}: {} of {} reports passed",
        suite.name(),
        reports.iter().filter(|r| r.passed).count(),
        reports.len()
    );
    Ok(passed)
}
