use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use txds::Backoff;
use txds_bench::{emit_csv, run_micro, run_nids, BenchError, MicroConfig, MicroPolicy, NidsConfig, NidsPolicy, RunStats};

#[derive(Parser)]
#[command(name = "bench", about = "Throughput and abort-rate benchmarks for transactional data structures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Random map operations followed by random queue operations.
    Micro(MicroArgs),
    /// Fragment pool -> packet map -> inspection -> log pipeline.
    Nids(NidsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackoffArg {
    None,
    Exponential,
}

impl From<BackoffArg> for Backoff {
    fn from(b: BackoffArg) -> Self {
        match b {
            BackoffArg::None => Backoff::None,
            BackoffArg::Exponential => Backoff::Exponential,
        }
    }
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write one CSV row per run here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Record committed histories and check them.
    #[arg(long)]
    record_history: bool,
    /// Pause between retries of an aborted child.
    #[arg(long, value_enum, default_value = "exponential")]
    child_backoff: BackoffArg,
    /// Pause between retries of an aborted parent.
    #[arg(long, value_enum, default_value = "exponential")]
    parent_backoff: BackoffArg,
}

#[derive(Args)]
struct MicroArgs {
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 50_000)]
    txs: usize,
    #[arg(long, default_value_t = 10)]
    map_ops: usize,
    #[arg(long, default_value_t = 2)]
    queue_ops: usize,
    #[arg(long, default_value_t = 50_000)]
    key_range: u64,
    #[arg(long, value_enum, default_value = "flat")]
    policy: MicroPolicy,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct NidsArgs {
    #[arg(long, default_value_t = 1)]
    producers: usize,
    #[arg(long, default_value_t = 8)]
    consumers: usize,
    #[arg(long, default_value_t = 1)]
    fragments: usize,
    #[arg(long, default_value_t = 2_000)]
    packets: usize,
    #[arg(long, value_enum, default_value = "flat")]
    policy: NidsPolicy,
    #[arg(long, default_value_t = 20_000)]
    match_work: usize,
    /// Number of logs; defaults to half the consumers.
    #[arg(long)]
    logs: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pool_size: usize,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[command(flatten)]
    common: Common,
}

fn micro(args: MicroArgs) -> Result<Vec<RunStats>, BenchError> {
    let cfg = MicroConfig {
        threads: args.threads,
        txs_per_thread: args.txs,
        map_ops: args.map_ops,
        queue_ops: args.queue_ops,
        key_range: args.key_range,
        policy: args.policy,
        seed: args.common.seed,
        reps: args.reps,
        child_backoff: args.common.child_backoff.into(),
        parent_backoff: args.common.parent_backoff.into(),
        record_history: args.common.record_history,
    };
    cfg.validate()?;
    let mut out = Vec::new();
    for rep in 0..cfg.reps {
        let run = run_micro(&cfg, rep)?;
        if let Some(h) = &run.history {
            let verdict = txds::checker::check_serializable(h);
            if !verdict.is_ok() {
                return Err(BenchError::Audit(verdict.to_string()));
            }
        }
        eprintln!(
            "micro {} rep {rep}: {:.0} tx/s, abort rate {:.4}, {} empty deqs",
            cfg.policy.name(),
            run.stats.throughput(),
            run.stats.abort_rate(),
            run.empty_deqs
        );
        out.push(run.stats);
    }
    Ok(out)
}

fn nids(args: NidsArgs) -> Result<Vec<RunStats>, BenchError> {
    let cfg = NidsConfig {
        producers: args.producers,
        consumers: args.consumers,
        fragments_per_packet: args.fragments,
        packets: args.packets,
        policy: args.policy,
        match_work: args.match_work,
        logs: args.logs.unwrap_or((args.consumers / 2).max(1)),
        pool_size: args.pool_size,
        seed: args.common.seed,
        child_backoff: args.common.child_backoff.into(),
        parent_backoff: args.common.parent_backoff.into(),
        record_history: args.common.record_history,
    };
    cfg.validate()?;
    let mut out = Vec::new();
    for rep in 0..args.reps {
        let run = run_nids(&cfg, rep)?;
        if !run.violations.is_empty() {
            return Err(BenchError::Audit(run.violations.join("; ")));
        }
        eprintln!(
            "nids {} rep {rep}: {:.0} tx/s, {} parent aborts, {} child aborts",
            cfg.policy.name(),
            run.stats.throughput(),
            run.stats.parent_aborts,
            run.stats.child_aborts
        );
        out.push(run.stats);
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, csv) = match cli.command {
        Command::Micro(a) => {
            let csv = a.common.csv.clone();
            (micro(a), csv)
        }
        Command::Nids(a) => {
            let csv = a.common.csv.clone();
            (nids(a), csv)
        }
    };
    let written = result.and_then(|stats| match csv {
        Some(path) => emit_csv(&stats, &path),
        None => txds_bench::write_csv(&mut std::io::stdout(), &stats).map_err(|source| BenchError::Io {
            path: "<stdout>".into(),
            source,
        }),
    });
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
