//! `mgm-sim`: Monte Carlo runs of the multigroup multicast precoders, CSV out.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use multigroup_multicast::harness::{
    compare_ordering, emit_csv, fmt_float, report_flops, run_scenario, run_sweep, write_flops, write_records,
    Algorithm, AlgorithmSummary, Csi, Mode, Scenario, ScenarioResult, DEFAULT_ETA, DEFAULT_POWER_W,
};
use multigroup_multicast::heuristic::OrderingPolicy;

const DEFAULT_SEED: u64 = 0;

#[derive(Parser)]
#[command(name = "mgm-sim", version, about = "Multigroup multicast precoding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimum power subject to per-UE SINR targets.
    Qos(RunArgs),
    /// Max-min fair SINR under a total power budget.
    Mmf(RunArgs),
    /// Heuristic QoS power under each ordering policy on shared channels.
    CompareOrdering(RunArgs),
    /// Closed-form operation counts per antenna count.
    Flops(FlopArgs),
    /// Repeat a qos or mmf run over several antenna counts.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON scenario; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_antennas: Option<usize>,
    /// Number of multicast groups.
    #[arg(long)]
    groups: Option<usize>,
    /// UEs per group.
    #[arg(long)]
    group_size: Option<usize>,
    /// Linear SINR target for every UE.
    #[arg(long)]
    eta: Option<f64>,
    /// Total transmit power budget in watts (mmf only).
    #[arg(long)]
    power: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated: sca, heuristic[:policy], heuristic+sca.
    #[arg(long, value_delimiter = ',')]
    algo: Vec<String>,
    /// Ordering used by a bare `heuristic`; for compare-ordering, the policies to compare.
    #[arg(long, value_delimiter = ',')]
    policy: Vec<String>,
    /// perfect, mmse, or mmse:<pilot power W>[:<pilot length>].
    #[arg(long)]
    csi: Option<String>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall time per algorithm call.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct FlopArgs {
    /// Comma-separated antenna counts.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256")]
    n_values: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    groups: usize,
    #[arg(long, default_value_t = 10)]
    group_size: usize,
    /// Iteration count assumed for the SCA estimate.
    #[arg(long, default_value_t = 20)]
    sca_iterations: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// qos or mmf.
    #[arg(long, default_value = "qos")]
    mode: String,
    /// Comma-separated antenna counts.
    #[arg(long, value_delimiter = ',', required = true)]
    n_values: Vec<usize>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, PartialEq)]
enum ModeKind {
    Qos,
    Mmf,
}

/// The scenario plus the seed to run it with.
fn build_scenario(args: &RunArgs, kind: ModeKind) -> Result<(Scenario, u64)> {
    let (base, file_seed) = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let has_config = value.get("config").is_some();
            let s: Scenario = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
            let seed = has_config.then_some(s.config.master_seed);
            (Some(s), seed)
        }
        None => (None, None),
    };
    let mut s = base.unwrap_or_else(|| Scenario {
        config: Default::default(),
        mode: Mode::Qos { eta: DEFAULT_ETA },
        csi: Csi::Perfect,
        algorithms: vec![Algorithm::Heuristic(OrderingPolicy::WorstFirstRatio), Algorithm::Sca],
        trials: 100,
        timing: false,
    });

    if let Some(n) = args.n_antennas {
        s.config.n_antennas = n;
    }
    if args.groups.is_some() || args.group_size.is_some() {
        let g = args.groups.unwrap_or(s.config.group_sizes.len());
        let k = match args.group_size {
            Some(k) => k,
            None => match s.config.group_sizes.first() {
                Some(&k) if s.config.group_sizes.iter().all(|&x| x == k) => k,
                _ => bail!("--groups needs --group-size when the configured groups differ in size"),
            },
        };
        s.config.group_sizes = vec![k; g];
    }

    let (old_eta, old_power) = match s.mode {
        Mode::Qos { eta } => (eta, None),
        Mode::Mmf { eta, power_w } => (eta, Some(power_w)),
    };
    let eta = args.eta.unwrap_or(old_eta);
    s.mode = match kind {
        ModeKind::Qos => {
            if args.power.is_some() {
                bail!("--power only applies to mmf runs");
            }
            Mode::Qos { eta }
        }
        ModeKind::Mmf => Mode::Mmf {
            eta,
            power_w: args.power.or(old_power).unwrap_or(DEFAULT_POWER_W),
        },
    };

    if let Some(t) = args.trials {
        s.trials = t;
    }
    if let Some(csi) = &args.csi {
        s.csi = csi.parse()?;
    }
    if args.timing {
        s.timing = true;
    }

    let policy = match args.policy.as_slice() {
        [] => None,
        [p] => Some(p.parse::<OrderingPolicy>()?),
        _ => bail!("--policy takes a single ordering here"),
    };
    if !args.algo.is_empty() {
        s.algorithms = args
            .algo
            .iter()
            .map(|a| match (a.as_str(), policy) {
                ("heuristic", Some(p)) => Ok(Algorithm::Heuristic(p)),
                _ => a.parse().map_err(anyhow::Error::from),
            })
            .collect::<Result<_>>()?;
    } else if let Some(p) = policy {
        for a in &mut s.algorithms {
            if let Algorithm::Heuristic(_) = a {
                *a = Algorithm::Heuristic(p);
            }
        }
    }

    let seed = match args.seed.or(file_seed) {
        Some(seed) => seed,
        None => {
            eprintln!("warning: no --seed given, using {DEFAULT_SEED}; pass --seed for a reproducible record");
            DEFAULT_SEED
        }
    };
    s.config.master_seed = seed;
    s.validate()?;
    Ok((s, seed))
}

fn with_output(out: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = std::io::BufWriter::new(file);
            f(&mut w)?;
            w.flush().with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush().context("writing stdout")
        }
    }
}

fn print_summary(summary: &[AlgorithmSummary]) {
    eprintln!("{:>5}  {:<28} {:>5} {:>14} {:>14} {:>14}", "N", "algorithm", "fail", "mean", "std", "median");
    for s in summary {
        match &s.stats {
            Some(st) => eprintln!(
                "{:>5}  {:<28} {:>5} {:>14.6e} {:>14.6e} {:>14.6e}",
                s.n_antennas, s.algorithm, s.failures, st.mean, st.std, st.percentiles[2]
            ),
            None => eprintln!("{:>5}  {:<28} {:>5} {:>14} {:>14} {:>14}", s.n_antennas, s.algorithm, s.failures, "-", "-", "-"),
        }
    }
}

fn emit(result: &ScenarioResult, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => emit_csv(&result.records, path)?,
        None => with_output(None, |w| Ok(write_records(&result.records, w)?))?,
    }
    print_summary(&result.summary);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Qos(args) => {
            let (s, seed) = build_scenario(&args, ModeKind::Qos)?;
            emit(&run_scenario(&s, seed)?, args.out.as_deref())
        }
        Command::Mmf(args) => {
            let (s, seed) = build_scenario(&args, ModeKind::Mmf)?;
            emit(&run_scenario(&s, seed)?, args.out.as_deref())
        }
        Command::Sweep(args) => {
            let kind = match args.mode.as_str() {
                "qos" => ModeKind::Qos,
                "mmf" => ModeKind::Mmf,
                other => bail!("unknown sweep mode `{other}`, expected qos or mmf"),
            };
            let (s, seed) = build_scenario(&args.run, kind)?;
            emit(&run_sweep(&s, &args.n_values, seed)?, args.run.out.as_deref())
        }
        Command::CompareOrdering(mut args) => {
            if !args.algo.is_empty() || args.power.is_some() {
                bail!("compare-ordering runs the heuristic in qos mode; --algo and --power do not apply");
            }
            let policies = if args.policy.is_empty() {
                OrderingPolicy::ALL.to_vec()
            } else {
                args.policy.iter().map(|p| p.parse()).collect::<Result<Vec<OrderingPolicy>, _>>()?
            };
            args.policy.clear();
            let (s, seed) = build_scenario(&args, ModeKind::Qos)?;
            let table = compare_ordering(&s.config, s.mode.eta(), &policies, s.trials, seed)?;
            with_output(args.out.as_deref(), |w| {
                let header: Vec<&str> = policies.iter().map(|p| p.tag()).collect();
                writeln!(w, "trial,{}", header.join(","))?;
                for (t, row) in table.powers.iter().enumerate() {
                    let cells: Vec<String> = row.iter().map(|&v| fmt_float(v)).collect();
                    writeln!(w, "{t},{}", cells.join(","))?;
                }
                Ok(())
            })?;
            for (p, m) in policies.iter().zip(table.means()) {
                eprintln!("{:<20} mean power {:.6e} W", p.tag(), m);
            }
            Ok(())
        }
        Command::Flops(args) => {
            if args.groups == 0 || args.group_size == 0 || args.n_values.is_empty() {
                bail!("--groups, --group-size and --n-values must be non-empty");
            }
            let sizes = vec![args.group_size; args.groups];
            let rows = report_flops(&sizes, &args.n_values, args.sca_iterations);
            with_output(args.out.as_deref(), |w| Ok(write_flops(&rows, w)?))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
