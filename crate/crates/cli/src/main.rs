//! Batch front-end: configuration ingestion, experiment selection, result
//! emission.
//!
//! Subcommands:
//! - `simulate`: Monte Carlo run, one KPI report and CDF file per policy
//! - `sweep`: the same across a list of small-cell densities
//! - `oracle-check`: heuristics vs the brute-force minimizer on micro instances
//! - `dump-topology`: emit one generated topology as JSON

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hetnetsim::assoc::{Policy, Scenario};
use hetnetsim::config::SimConfig;
use hetnetsim::oracle;
use hetnetsim::simkit::{self, KpiReport, PolicyKpis};
use hetnetsim::units::watts_to_dbm;

#[derive(Parser)]
#[command(name = "hetnetsim", version, about = "Uplink HetNet association and power simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Monte Carlo drops and write KPI reports
    Simulate(SimulateArgs),
    /// Run the simulation across several small-cell densities
    Sweep(SweepArgs),
    /// Compare the heuristics against the brute-force minimizer
    OracleCheck(OracleCheckArgs),
    /// Write one generated topology as JSON
    DumpTopology(DumpTopologyArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON configuration file (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Association policy, repeatable (overrides the config list)
    #[arg(long = "policy")]
    policies: Vec<String>,

    /// Number of Monte Carlo drops
    #[arg(long)]
    drops: Option<usize>,

    /// Base seed; drop i uses seed base+i
    #[arg(long)]
    seed: Option<u64>,

    /// Small cells per sector
    #[arg(long)]
    small_per_sector: Option<usize>,

    /// Output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Comma-separated small-cell densities, e.g. 1,4
    #[arg(long, value_delimiter = ',')]
    densities: Vec<usize>,
}

#[derive(Args)]
struct OracleCheckArgs {
    /// JSON configuration file (algorithm section applies)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Number of random micro instances
    #[arg(long, default_value_t = 100)]
    instances: usize,

    /// Instance generator seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct DumpTopologyArgs {
    #[command(flatten)]
    common: CommonArgs,
}

fn load_config(common: &CommonArgs) -> Result<SimConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            SimConfig::from_json_str(&text)?
        }
        None => SimConfig::default(),
    };
    if !common.policies.is_empty() {
        cfg.simulation.policies = common.policies.clone();
    }
    if let Some(d) = common.drops {
        cfg.simulation.drops = d;
    }
    if let Some(s) = common.seed {
        cfg.simulation.base_seed = s;
    }
    if let Some(k) = common.small_per_sector {
        cfg.topology.small_per_sector = k;
    }
    if let Some(dir) = &common.out_dir {
        cfg.output.out_dir = dir.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Round to six significant digits, rendered without trailing noise.
fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("rounded float reparses");
    format!("{rounded}")
}

/// Per-policy report file: the full resolved config plus that policy's KPIs.
#[derive(Serialize)]
struct PolicyReportFile<'a> {
    config: &'a SimConfig,
    config_hash: &'a str,
    base_seed: u64,
    n_drops: usize,
    policy: &'a str,
    kpis: &'a PolicyKpis,
}

fn write_reports(report: &KpiReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (policy, kpis) in &report.per_policy {
        let file = PolicyReportFile {
            config: &report.config,
            config_hash: &report.config_hash,
            base_seed: report.base_seed,
            n_drops: report.n_drops,
            policy,
            kpis,
        };
        let json_path = dir.join(format!("kpi_{policy}.json"));
        let mut body = serde_json::to_string_pretty(&file)?;
        body.push('\n');
        fs::write(&json_path, body)?;

        let csv_path = dir.join(format!("cdf_{policy}.csv"));
        let mut csv = String::from("policy,metric,x_value,cumulative_probability\n");
        for (metric, cdf) in [
            ("tx_power_dbm", &kpis.tx_power_cdf),
            ("sinr_db", &kpis.sinr_cdf),
        ] {
            for pt in cdf {
                csv.push_str(&format!("{policy},{metric},{},{}\n", sig6(pt.x), sig6(pt.p)));
            }
        }
        fs::write(&csv_path, csv)?;
    }
    Ok(())
}

fn print_summary(report: &KpiReport) {
    println!(
        "{} drops, base seed {}, config {}",
        report.n_drops,
        report.base_seed,
        &report.config_hash[..12]
    );
    for (policy, kpis) in &report.per_policy {
        let mean = kpis
            .mean_tx_power_dbm
            .map_or("n/a".into(), |m| format!("{m:7.2} dBm"));
        let med = kpis
            .median_sinr_db
            .map_or("n/a".into(), |m| format!("{m:6.2} dB"));
        let se = kpis
            .spectrum_efficiency_bps_hz
            .map_or("n/a".into(), |s| format!("{s:.3}"));
        println!(
            "  {policy:<18} mean power {mean}  median sinr {med}  \
             se {se} b/s/Hz  blocking {:.4}  flagged drops {}",
            kpis.blocking_rate, kpis.drops_flagged
        );
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let policies = cfg.policies()?;
    let report = simkit::run_monte_carlo(
        &cfg,
        &policies,
        cfg.simulation.drops,
        cfg.simulation.base_seed,
    )?;
    let dir = PathBuf::from(&cfg.output.out_dir);
    write_reports(&report, &dir)?;
    print_summary(&report);
    println!("reports written to {}", dir.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    if args.densities.is_empty() {
        bail!("--densities requires at least one value");
    }
    let cfg = load_config(&args.common)?;
    let policies = cfg.policies()?;
    let reports = simkit::sensitivity_sweep(&cfg, &args.densities, &policies, cfg.simulation.drops)?;
    let base = PathBuf::from(&cfg.output.out_dir);
    for (density, report) in args.densities.iter().zip(&reports) {
        let dir = base.join(format!("density_{density}"));
        write_reports(report, &dir)?;
        println!("--- {density} small cells per sector ---");
        print_summary(report);
    }
    println!("reports written to {}", base.display());
    Ok(())
}

fn cmd_oracle_check(args: OracleCheckArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            SimConfig::from_json_str(&text)?
        }
        None => SimConfig::default(),
    };
    let assoc_cfg = cfg.assoc_config();

    let mut ok = 0usize;
    let mut exact_single = 0usize;
    let mut single_total = 0usize;
    for i in 0..args.instances {
        let (inst, order) = oracle::generate_check_instance(args.seed + i as u64);
        let solution = oracle::brute_force_min_power(&inst, &assoc_cfg)?;
        let table = inst.gain_table();
        let scenario = Scenario::from_parts(
            &inst.base_stations,
            &inst.users,
            inst.thermal_noise_density_dbm_hz,
            &table,
        );
        let baseline_total: f64 = scenario.users.iter().map(|u| u.max_tx_power_w).sum();
        let mut line = format!(
            "instance {i:>4}: {} stations, {} users, oracle {:>8.3} dBm total",
            inst.base_stations.len(),
            inst.users.len(),
            watts_to_dbm(solution.total_power_w)
        );
        for policy in [Policy::SemiDistributive, Policy::Distributive] {
            let (state, report, total) = oracle::run_heuristic_on_instance(
                &scenario,
                inst.grid_quantum_hz,
                policy,
                &order,
                &assoc_cfg,
            );
            let served = state.associations.iter().flatten().count();
            if served != scenario.users.len() || !report.converged {
                bail!("instance {i}: {policy} blocked a user or failed to converge");
            }
            if total < solution.total_power_w * (1.0 - 1e-9) {
                bail!(
                    "instance {i}: {policy} total {} W beats the oracle {} W",
                    total,
                    solution.total_power_w
                );
            }
            if total > baseline_total * (1.0 + 1e-9) {
                bail!("instance {i}: {policy} exceeds the pinned-power baseline total");
            }
            if policy == Policy::SemiDistributive && inst.base_stations.len() == 1 {
                single_total += 1;
                let allocations_match = (0..scenario.users.len()).all(|u| {
                    let a = state.associations[u].as_ref().unwrap();
                    a.bs_id == solution.assignment[u]
                        && a.bandwidth_hz == solution.allocation_hz[u]
                });
                if allocations_match && (total - solution.total_power_w).abs() <= 1e-9 * solution.total_power_w
                {
                    exact_single += 1;
                }
            }
            line.push_str(&format!("  {} {:>8.3} dBm", policy, watts_to_dbm(total)));
        }
        println!("{line}");
        ok += 1;
    }
    println!(
        "{ok}/{} instances: heuristic total power >= oracle optimum; \
         single-station exact matches {exact_single}/{single_total}",
        args.instances
    );
    if exact_single != single_total {
        bail!("semi-distributive missed the grid optimum on a single-station instance");
    }
    Ok(())
}

fn cmd_dump_topology(args: DumpTopologyArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let seed = cfg.simulation.base_seed;
    let env = simkit::build_drop_environment(&cfg, seed)?;
    let dir = PathBuf::from(&cfg.output.out_dir);
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("topology_{seed}.json"));
    let mut body = serde_json::to_string_pretty(&env.topology)?;
    body.push('\n');
    fs::write(&path, body)?;
    println!(
        "topology with {} stations and {} users written to {}",
        env.topology.base_stations.len(),
        env.topology.users.len(),
        path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::OracleCheck(args) => cmd_oracle_check(args),
        Command::DumpTopology(args) => cmd_dump_topology(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
