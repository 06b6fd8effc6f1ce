//! Command line front end: generate traces, replay them under a policy,
//! and sweep the adaptive policy's alpha grid against fixed baselines.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tierkv_core::engine::StorageMode;
use tierkv_core::model::MethodKind;
use tierkv_core::profiler::{desk_profile, server_profile, Profile};
use tierkv_core::sim::{run, sweep, write_rows_csv, write_summary_csv, MetricsReport, PolicyConfig, RunResult};
use tierkv_core::workload::{gen_trace, read_trace, write_trace, WorkloadSpec};

#[derive(Parser)]
#[command(name = "tierkv", version, about = "Tiered KV-cache placement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic request trace.
    Gen(GenArgs),
    /// Replay a trace under a single policy.
    Run(RunArgs),
    /// Replay a trace under the adaptive policy across an alpha grid plus
    /// fixed baselines, writing one summary line per run.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output trace path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 440)]
    contexts: u64,
    /// Zipf skew over context popularity; 0 is uniform.
    #[arg(long, default_value_t = 1.0)]
    zipf_s: f64,
    /// Mean request arrival rate per second.
    #[arg(long, default_value_t = 2.5)]
    lambda: f64,
    #[arg(long, default_value_t = 4000.0)]
    duration: f64,
    #[arg(long, default_value_t = 1024)]
    tokens_min: u64,
    #[arg(long, default_value_t = 16384)]
    tokens_max: u64,
    /// Comma-separated class tags assigned round-robin by context rank.
    #[arg(long, default_value = "summarization,qa,coding", value_delimiter = ',')]
    classes: Vec<String>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Input trace path.
    #[arg(long)]
    trace: PathBuf,
    /// Device/model profile: `desk`, `server`, or a JSON file path.
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Directory for rows and summary CSVs.
    #[arg(long)]
    out_dir: PathBuf,
    /// Store real codec output instead of byte-model sizes. Slower; only
    /// supported for the fixed policies.
    #[arg(long)]
    materialize: bool,
    /// Seed for materialized payload contents.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Adaptcache,
    FixedLru,
    NocompLru,
    Prefill,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    #[arg(long, value_enum)]
    policy: PolicyArg,
    /// Compression method for fixed-lru.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Compression rate for fixed-lru.
    #[arg(long)]
    rate: Option<f64>,
    /// Quality weight for adaptcache.
    #[arg(long)]
    alpha: Option<f64>,
    /// Full replan cadence, in arrivals, for adaptcache.
    #[arg(long, default_value_t = 256)]
    replan_every: u64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Quantize,
    Tokendrop,
}

impl From<MethodArg> for MethodKind {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Quantize => MethodKind::Quantize,
            MethodArg::Tokendrop => MethodKind::TokenDrop,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Comma-separated alpha grid for the adaptive policy.
    #[arg(long, default_value = "0.003,0.01,0.03,0.1", value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 256)]
    replan_every: u64,
    /// Baseline specs: `lru-full`, `prefill`, or `lru-<method>-<rate>`.
    /// Defaults to the standard comparison set.
    #[arg(long = "baseline", value_delimiter = ',')]
    baselines: Vec<String>,
}

fn load_profile(name: &str) -> Result<Profile> {
    match name {
        "desk" => Ok(desk_profile()),
        "server" => Ok(server_profile()),
        path => Ok(Profile::load(Path::new(path))?),
    }
}

fn storage_mode(common: &CommonRunArgs) -> StorageMode {
    if common.materialize {
        StorageMode::Materialized { dir: common.out_dir.join("store"), seed: common.seed }
    } else {
        StorageMode::SizeOnly
    }
}

fn parse_baseline(spec: &str) -> Result<PolicyConfig> {
    match spec {
        "lru-full" | "nocomp-lru" => return Ok(PolicyConfig::NoCompressionLru),
        "prefill" | "prefill-always" => return Ok(PolicyConfig::PrefillAlways),
        _ => {}
    }
    let parts: Vec<&str> = spec.splitn(3, '-').collect();
    if parts.len() == 3 && parts[0] == "lru" {
        let method = match parts[1] {
            "quantize" => MethodKind::Quantize,
            "tokendrop" => MethodKind::TokenDrop,
            other => bail!("unknown method {other:?} in baseline {spec:?}"),
        };
        let rate: f64 = parts[2].parse().with_context(|| format!("bad rate in baseline {spec:?}"))?;
        return Ok(PolicyConfig::FixedLru { method, rate });
    }
    bail!("unknown baseline {spec:?}; expected lru-full, prefill, or lru-<method>-<rate>")
}

/// Rows file name for one run, unique within a sweep.
fn rows_file_name(cfg: &PolicyConfig) -> String {
    match cfg.alpha() {
        Some(a) => format!("rows_{}_a{a}.csv", cfg.label()),
        None => format!("rows_{}.csv", cfg.label()),
    }
}

fn write_outputs(out_dir: &Path, profile: &Profile, results: &[RunResult]) -> Result<()> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    for r in results {
        write_rows_csv(&out_dir.join(rows_file_name(&r.config)), &r.rows)?;
    }
    let reports: Vec<&MetricsReport> = results.iter().map(|r| &r.report).collect();
    write_summary_csv(&out_dir.join("summary.csv"), profile, &reports)?;
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let spec = WorkloadSpec {
        contexts: args.contexts,
        zipf_s: args.zipf_s,
        lambda: args.lambda,
        duration_s: args.duration,
        tokens_min: args.tokens_min,
        tokens_max: args.tokens_max,
        classes: args.classes.clone(),
        seed: args.seed,
    };
    let events = gen_trace(&spec)?;
    write_trace(&args.out, &events)?;
    println!("wrote {} events to {}", events.len(), args.out.display());
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = match args.policy {
        PolicyArg::Adaptcache => PolicyConfig::Adapt {
            alpha: args.alpha.context("--alpha is required for adaptcache")?,
            replan_every: args.replan_every,
        },
        PolicyArg::FixedLru => PolicyConfig::FixedLru {
            method: args.method.context("--method is required for fixed-lru")?.into(),
            rate: args.rate.context("--rate is required for fixed-lru")?,
        },
        PolicyArg::NocompLru => PolicyConfig::NoCompressionLru,
        PolicyArg::Prefill => PolicyConfig::PrefillAlways,
    };
    let profile = load_profile(&args.common.profile)?;
    let events = read_trace(&args.common.trace)?;
    let result = run(&profile, &events, &cfg, storage_mode(&args.common))?;
    write_outputs(&args.common.out_dir, &profile, std::slice::from_ref(&result))?;
    let r = &result.report;
    println!(
        "{}: {} requests, mean_ttft {:.6} s, p95 {:.6} s, hit rate {:.4}, mean quality {:.4}",
        r.policy, r.requests, r.mean_ttft_s, r.p95_ttft_s, r.hit_rate_total, r.mean_quality
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let profile = load_profile(&args.common.profile)?;
    let events = read_trace(&args.common.trace)?;
    let baselines: Vec<PolicyConfig> = if args.baselines.is_empty() {
        vec![
            PolicyConfig::NoCompressionLru,
            PolicyConfig::FixedLru { method: MethodKind::Quantize, rate: 0.25 },
            PolicyConfig::FixedLru { method: MethodKind::TokenDrop, rate: 0.1 },
            PolicyConfig::PrefillAlways,
        ]
    } else {
        args.baselines.iter().map(|s| parse_baseline(s)).collect::<Result<_>>()?
    };
    let results = sweep(&profile, &events, &args.alphas, args.replan_every, &baselines, &storage_mode(&args.common))?;
    write_outputs(&args.common.out_dir, &profile, &results)?;
    for r in &results {
        let rep = &r.report;
        let alpha = rep.alpha.map(|a| format!(" alpha={a}")).unwrap_or_default();
        println!(
            "{}{}: mean_ttft {:.6} s, hit rate {:.4}, dram hit {:.4}, mean quality {:.4}",
            rep.policy,
            alpha,
            rep.mean_ttft_s,
            rep.hit_rate_total,
            rep.hit_rate_by_tier.first().copied().unwrap_or(f64::NAN),
            rep.mean_quality
        );
    }
    println!("summary written to {}", args.common.out_dir.join("summary.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<tierkv_core::Error>() {
                Some(e) => e.exit_code(),
                None => 2,
            };
            ExitCode::from(code as u8)
        }
    }
}
