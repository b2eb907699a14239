use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ptr_rational::dp::{evaluate_policy, BaselineFn, GridSpec, HorizonSpec, PolicyTable};
use ptr_rational::experiments::{
    cell_centres, check_profit_monotone, check_uncertainty_monotone, cmd_solve, cmd_sweep, cmd_thermal,
    cmd_uncertainty, cmd_verify, parse_pct_list, solve_dp, to_csv, RunConfig, Source,
};
use ptr_rational::{Error, Result};

#[derive(Parser)]
#[command(name = "ptr-rational", version, about = "Rational consumption under a peak time rebate program")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat JSON configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Incentive per kWh of reduction.
    #[arg(long, global = true)]
    p2: Option<f64>,
    /// Uncertainty level(s) in percent of q_bar: `25`, `10,30,50` or `5:95:5`.
    #[arg(long, global = true)]
    pct: Option<String>,
    /// Monte Carlo draws per baseline.
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Decision grid step in kWh.
    #[arg(long, global = true)]
    grid_step: Option<f64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Source::Closed)]
    source: Source,
}

#[derive(Args, Clone, Copy)]
struct Range {
    #[arg(long, default_value_t = 0.0)]
    p2_from: f64,
    #[arg(long, default_value_t = 0.6)]
    p2_to: f64,
    #[arg(long, default_value_t = 121)]
    steps: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Expected decisions and profit for one configuration.
    Solve,
    /// Incentive sweep at one uncertainty level.
    Sweep(Range),
    /// Incentive sweeps for several uncertainty levels (default 10,30,50,90).
    Uncertainty(Range),
    /// Net consumption over incentive cells x uncertainty levels (default 5:95:5).
    Thermal {
        #[arg(long, default_value_t = 0.0)]
        p2_from: f64,
        #[arg(long, default_value_t = 0.6)]
        p2_to: f64,
        /// Number of equal incentive cells; values are cell centres.
        #[arg(long, default_value_t = 60)]
        steps: usize,
    },
    /// Closed form against the Monte Carlo oracle.
    Verify {
        #[arg(long, default_value_t = 50)]
        cases: usize,
    },
    /// Backward induction over several baseline-setting periods.
    Dp {
        #[arg(long, default_value_t = 1)]
        periods: usize,
        /// `last` or `mean`.
        #[arg(long, default_value = "last")]
        baseline: String,
        #[arg(long, default_value_t = 1.0)]
        call_probability: f64,
        #[arg(long, default_value_t = 5)]
        theta_nodes: usize,
        /// Write the solved policy table here.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Evaluate a saved policy table instead of solving.
        #[arg(long)]
        load: Option<PathBuf>,
        /// Monte Carlo rollouts used to evaluate the policy.
        #[arg(long, default_value_t = 0)]
        rollouts: usize,
    },
}

fn io_err(path: &std::path::Path, e: std::io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::from_json(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)?,
        None => RunConfig::default(),
    };
    if let Some(v) = c.p2 {
        cfg.p2 = v;
    }
    if let Some(v) = c.samples {
        cfg.n_samples = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.grid_step {
        cfg.q_grid_step = v;
    }
    if let Some(p) = &c.out {
        cfg.out = Some(p.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pct_list(c: &Common, default: &str) -> Result<Vec<f64>> {
    parse_pct_list(c.pct.as_deref().unwrap_or(default))
}

fn single_pct(c: &Common, cfg: &mut RunConfig) -> Result<()> {
    if let Some(text) = &c.pct {
        match parse_pct_list(text)?[..] {
            [x] => cfg.uncertainty_pct = x,
            _ => return Err(Error::InvalidParams("this command takes a single --pct value".into())),
        }
        cfg.validate()?;
    }
    Ok(())
}

fn emit(cfg: &RunConfig, text: &str) -> Result<()> {
    match &cfg.out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_err(path.as_ref(), e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.common.clone();
    let mut cfg = load_config(&common)?;
    match cli.command {
        Command::Solve => {
            single_pct(&common, &mut cfg)?;
            emit(&cfg, &to_csv(&[cmd_solve(&cfg, common.source)?]))
        }
        Command::Sweep(r) => {
            single_pct(&common, &mut cfg)?;
            let recs = cmd_sweep(&cfg, r.p2_from, r.p2_to, r.steps, common.source)?;
            emit(&cfg, &to_csv(&recs))?;
            check_profit_monotone(&recs)
        }
        Command::Uncertainty(r) => {
            let pcts = pct_list(&common, "10,30,50,90")?;
            let recs = cmd_uncertainty(&cfg, &pcts, r.p2_from, r.p2_to, r.steps, common.source)?;
            emit(&cfg, &to_csv(&recs))?;
            check_profit_monotone(&recs)?;
            check_uncertainty_monotone(&recs)
        }
        Command::Thermal { p2_from, p2_to, steps } => {
            let pcts = pct_list(&common, "5:95:5")?;
            let p2s = cell_centres(p2_from, p2_to, steps)?;
            emit(&cfg, &to_csv(&cmd_thermal(&cfg, &p2s, &pcts, common.source)?))
        }
        Command::Verify { cases } => {
            single_pct(&common, &mut cfg)?;
            let report = cmd_verify(&cfg, cases, cfg.seed)?;
            emit(&cfg, &report.render())?;
            if report.passed() {
                Ok(())
            } else {
                Err(Error::Verification(format!("max baseline deviation {}", report.max_deviation())))
            }
        }
        Command::Dp { periods, baseline, call_probability, theta_nodes, table, load, rollouts } => {
            single_pct(&common, &mut cfg)?;
            let hs = HorizonSpec { n_periods: periods, baseline_fn: baseline.parse::<BaselineFn>()?, call_probability };
            let (pp, cp, um) = cfg.params()?;
            let pt = match load {
                Some(path) => PolicyTable::from_text(&std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?)?,
                None => {
                    let gs = GridSpec { q_step: cfg.q_grid_step, theta_nodes, ..GridSpec::default() };
                    let (pt, rec) = solve_dp(&cfg, &hs, &gs)?;
                    emit(&cfg, &to_csv(&[rec]))?;
                    pt
                }
            };
            if let Some(path) = table {
                std::fs::write(&path, pt.to_text()).map_err(|e| io_err(&path, e))?;
            }
            if rollouts > 0 {
                let ev = evaluate_policy(&pt, &hs, &pp, &cp, &um, rollouts, cfg.seed)?;
                eprintln!(
                    "policy value {} ± {} over {} rollouts ({} nearest-state lookups)",
                    ev.mean, ev.stderr, ev.n_rollouts, ev.nearest_lookups
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
