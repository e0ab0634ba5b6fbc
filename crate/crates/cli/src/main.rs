use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slbess::config::{load_config, Config};
use slbess::export::{
    acos_csv, economy_index_csv, export_campaign, export_case_study, export_comparison, schedule_csv, type_specs,
    Manifest, CASE_STUDY_C_RATES,
};
use slbess::simulator::{run_campaign, run_campaign_checkpointed, run_cycle, Allocator, Comparison};
use slbess::Error;

/// Power allocation and lifetime cost simulation for second-life battery fleets.
#[derive(Parser)]
#[command(name = "slbess", version)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "SLBESS_OUT", default_value = "out")]
    out: PathBuf,
    /// Seed for prices and solver starts; defaults to the configuration's.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Allocate one horizon at the configured prices.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "proposed")]
        allocator: Allocator,
    },
    /// Run one allocator for many cycles.
    Campaign {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "proposed")]
        allocator: Allocator,
        #[arg(long)]
        cycles: Option<usize>,
        /// Resume from and save to this checkpoint file.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Cycles between checkpoint saves.
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
    },
    /// Run all three allocators on the same prices and report reductions.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cycles: Option<usize>,
    },
    /// Temperature, fade and throughput curves for each pack type.
    CaseStudy {
        #[command(flatten)]
        common: Common,
    },
    /// Cost of storage and economy index tables.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cycles: Option<usize>,
    },
}

fn load(common: &Common, cycles: Option<usize>) -> Result<Config, Error> {
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.prices.seed = seed;
        cfg.solver.seed = seed;
    }
    if let Some(c) = cycles {
        cfg.campaign.cycles = c;
    }
    Ok(cfg)
}

fn done(m: &Manifest) {
    println!("wrote {} files to {}", m.entries.len(), m.root.display());
}

fn solve(common: &Common, allocator: Allocator) -> Result<(), Error> {
    let cfg = load(common, None)?;
    let out = run_cycle(&cfg.scenario, allocator, &cfg.solver, None)?;
    let t = out.costs.total;
    println!("{allocator}: total ${:.2}", t.grand_total);
    println!(
        "  energy loss ${:.2}  degradation ${:.2}  decommissioning ${:.2}",
        t.energy_loss, t.degradation, t.decommissioning
    );
    if !out.converged {
        println!("  solver hit its iteration cap; best feasible schedule kept");
    }
    let mut m = Manifest::new(&common.out)?;
    m.write("schedule.csv", &schedule_csv(&cfg.scenario, &out.schedule, &out.trajectory)?)?;
    m.finish()?;
    done(&m);
    Ok(())
}

fn campaign(
    common: &Common,
    allocator: Allocator,
    cycles: Option<usize>,
    checkpoint: Option<&Path>,
    every: usize,
) -> Result<(), Error> {
    let cfg = load(common, cycles)?;
    let cc = cfg.campaign_config(allocator);
    let result = match checkpoint {
        Some(path) => run_campaign_checkpointed(cc, path, every)?,
        None => run_campaign(cc)?,
    };
    println!("{allocator}: {} cycles, total ${:.2}", result.records.len(), result.total_cost());
    if let Some(a) = result.acos_overall {
        println!("  cost of storage {a:.4} $/kWh");
    }
    done(&export_campaign(&result, &cfg.scenario, &common.out)?);
    Ok(())
}

fn compare(common: &Common, cycles: Option<usize>) -> Result<(), Error> {
    let cfg = load(common, cycles)?;
    let cmp = Comparison::run(&cfg.campaign_config(Allocator::Proposed))?;
    let n = cmp.proposed.records.len();
    println!("{n} cycles, seed {}", cfg.prices.seed);
    for a in Allocator::ALL {
        println!("  {:<9} ${:.2}", a.name(), cmp.get(a).total_cost());
    }
    for base in [Allocator::Soh, Allocator::Capacity] {
        let first = cmp.reduction_pct(base)[0];
        let total = 100.0 * (1.0 - cmp.proposed.total_cost() / cmp.get(base).total_cost());
        println!("  reduction vs {:<9} first cycle {first:.2}%  overall {total:.2}%", base.name());
    }
    done(&export_comparison(&cmp, &cfg.scenario, &common.out)?);
    Ok(())
}

fn report(common: &Common, cycles: Option<usize>) -> Result<(), Error> {
    let cfg = load(common, cycles)?;
    let cmp = Comparison::run(&cfg.campaign_config(Allocator::Proposed))?;
    println!("cost of storage, $/kWh ({} cycles)", cmp.proposed.records.len());
    print!("  {:<9}", "");
    for name in &cmp.proposed.type_names {
        print!(" {name:>9}");
    }
    println!(" {:>9}", "all");
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    for a in Allocator::ALL {
        let r = cmp.get(a);
        print!("  {:<9}", a.name());
        for v in &r.acos_by_type {
            print!(" {:>9}", cell(*v));
        }
        println!(" {:>9}", cell(r.acos_overall));
    }
    println!("economy index, $/Ah");
    for spec in type_specs(&cfg.scenario) {
        print!("  {:<9}", spec.type_name);
        for c in CASE_STUDY_C_RATES {
            let ei = slbess::costs::economy_index(spec, cfg.scenario.decom_cost_per_lb, c);
            print!(" C={c}: {ei:.4}");
        }
        println!();
    }
    let mut m = Manifest::new(&common.out)?;
    m.write("acos.csv", &acos_csv(&cmp)?)?;
    m.write("economy_index.csv", &economy_index_csv(&cfg.scenario)?)?;
    m.finish()?;
    done(&m);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Solve { common, allocator } => solve(&common, allocator),
        Command::Campaign { common, allocator, cycles, checkpoint, checkpoint_every } => {
            campaign(&common, allocator, cycles, checkpoint.as_deref(), checkpoint_every)
        }
        Command::Compare { common, cycles } => compare(&common, cycles),
        Command::CaseStudy { common } => {
            let cfg = load(&common, None)?;
            done(&export_case_study(&cfg.scenario, &common.out)?);
            Ok(())
        }
        Command::Report { common, cycles } => report(&common, cycles),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors share the generic failure code; 2 is reserved for infeasible demand.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_infeasibility() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
