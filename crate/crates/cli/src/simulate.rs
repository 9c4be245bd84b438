use std::io::Write;
use std::path::PathBuf;

use besm_core::linalg::det;
use besm_core::process::{path_means, simulate_besm, write_paths_csv, Scheme, SimConfig};
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::output::{create, parse_x0};
use crate::Outcome;

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    Euler,
    TamedEuler,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Euler => Scheme::Euler,
            SchemeArg::TamedEuler => Scheme::TamedEuler,
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub d: usize,
    /// Must be at least 2.
    #[arg(long)]
    pub delta: f64,
    /// `identity`, `diag:a,b,...` or a file with d² row-major entries.
    #[arg(long, default_value = "identity")]
    pub x0: String,
    #[arg(long = "T")]
    pub horizon: f64,
    #[arg(long)]
    pub dt: f64,
    #[arg(long)]
    pub paths: usize,
    #[arg(long, env = "BESM_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "besm-run")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "euler")]
    pub scheme: SchemeArg,
}

#[derive(Serialize)]
struct Summary {
    d: usize,
    delta: f64,
    horizon: f64,
    dt: f64,
    scheme: SchemeArg,
    seed: u64,
    n_paths: usize,
    blowup_paths: usize,
    blowup_fraction: f64,
    mean_det_terminal: f64,
    mean_det_terminal_stderr: f64,
    mean_norm2_terminal: f64,
    mean_norm2_terminal_stderr: f64,
}

pub fn run(args: &SimulateArgs) -> Outcome {
    let x0 = parse_x0(&args.x0, args.d)?;
    let mut cfg = SimConfig::new(x0, args.delta, args.horizon, args.dt, args.seed, args.paths);
    cfg.scheme = args.scheme.into();
    cfg.validate()?;
    let paths = simulate_besm(&cfg)?;

    let survivors: Vec<Vec<f64>> = paths
        .iter()
        .filter(|p| !p.blowup_flag)
        .map(|p| {
            let x = p.terminal();
            vec![det(x), x.dot(x)]
        })
        .collect();
    let means = path_means(&survivors, 2);
    let blowup_paths = paths.len() - survivors.len();
    let summary = Summary {
        d: args.d,
        delta: args.delta,
        horizon: args.horizon,
        dt: args.dt,
        scheme: args.scheme,
        seed: args.seed,
        n_paths: args.paths,
        blowup_paths,
        blowup_fraction: blowup_paths as f64 / args.paths as f64,
        mean_det_terminal: means[0].mean,
        mean_det_terminal_stderr: means[0].stderr,
        mean_norm2_terminal: means[1].mean,
        mean_norm2_terminal_stderr: means[1].stderr,
    };

    let mut w = create(&args.out, "paths.csv")?;
    write_paths_csv(&mut w, &paths)?;
    w.flush()?;
    let mut s = create(&args.out, "summary.json")?;
    serde_json::to_writer_pretty(&mut s, &summary).map_err(std::io::Error::from)?;
    writeln!(s)?;
    s.flush()?;
    println!("{}", serde_json::to_string(&summary).map_err(std::io::Error::from)?);
    Ok(true)
}
