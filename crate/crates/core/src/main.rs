use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use rmt_mapper::report::{render_report, ReportFormat};
use rmt_mapper::tdg_mapper::{ActionMode, LatencyCosts, StatefulPolicy};
use rmt_mapper::{compile, CompileOptions};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Policy {
    Colocate,
    Serialize,
}

/// Checks whether a P4 program fits an RMT switch and reports the mapping.
#[derive(Debug, Parser)]
#[command(name = "rmt-mapper", version)]
struct Cli {
    /// Frontend IR JSON of the program.
    #[arg(long)]
    ir: PathBuf,
    /// Hardware spec JSON. Defaults to the bundled benchmark profile.
    #[arg(long)]
    hw: Option<PathBuf>,
    /// Override the SRAM packing factor.
    #[arg(long)]
    packing_factor: Option<u32>,
    /// `per-entry` or `fixed:K`.
    #[arg(long, default_value = "per-entry", value_parser = parse_action_mode)]
    action_mode: ActionMode,
    /// Latency costs as `match,action,other,base`.
    #[arg(long, value_parser = parse_latency)]
    latency_costs: Option<LatencyCosts>,
    #[arg(long, value_enum, default_value = "colocate")]
    stateful_policy: Policy,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include per-phase wall-clock times (makes output non-deterministic).
    #[arg(long)]
    timings: bool,
}

fn parse_action_mode(s: &str) -> Result<ActionMode, String> {
    if s == "per-entry" {
        return Ok(ActionMode::PerEntry);
    }
    let k = s.strip_prefix("fixed:").ok_or_else(|| format!("expected `per-entry` or `fixed:K`, got `{s}`"))?;
    match k.parse::<u64>() {
        Ok(k) if k > 0 => Ok(ActionMode::Fixed(k)),
        _ => Err(format!("`{k}` is not a positive entry count")),
    }
}

fn parse_latency(s: &str) -> Result<LatencyCosts, String> {
    let v: Vec<u64> =
        s.split(',').map(|p| p.trim().parse::<u64>().map_err(|e| format!("`{p}`: {e}"))).collect::<Result<_, _>>()?;
    match v[..] {
        [match_cost, action_cost, other_cost, base] => Ok(LatencyCosts { match_cost, action_cost, other_cost, base }),
        _ => Err(format!("expected four comma-separated costs, got {}", v.len())),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let options = CompileOptions {
        packing_factor: cli.packing_factor,
        action_mode: cli.action_mode,
        latency_costs: cli.latency_costs.unwrap_or_default(),
        stateful_policy: match cli.stateful_policy {
            Policy::Colocate => StatefulPolicy::Colocate,
            Policy::Serialize => StatefulPolicy::Serialize,
        },
        timings: cli.timings,
        ..CompileOptions::default()
    };
    let report = match compile(&cli.ir, cli.hw.as_deref(), &options) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let format = match cli.format {
        Format::Json => ReportFormat::Json,
        Format::Table => ReportFormat::Table,
    };
    let text = render_report(&report, format);
    match &cli.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                eprintln!("error: cannot write `{}`: {e}", path.display());
                return ExitCode::from(1);
            }
        }
        None => print!("{text}"),
    }
    if report.verdict.is_accepted() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
