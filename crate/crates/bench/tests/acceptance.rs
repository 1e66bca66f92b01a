//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use txds::checker::{check_structure_laws, Verdict};
use txds_bench::scenarios::{
    abort_hygiene_round, child_invisibility_round, cross_queue, law_suites, log_validation, pool_cancellation,
    pool_single_ready, stress_serializable,
};
use txds_bench::{run_micro, run_nids, MicroConfig, MicroPolicy, NidsConfig, NidsPolicy, RunStats};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const REPS: usize = 10;

fn serializability() -> Outcome {
    let start = Instant::now();
    let (mut txs, mut aborts) = (0, 0);
    for seed in 0..50 {
        let report = stress_serializable(seed, 4, 50).map_err(|e| format!("seed {seed}: {e}"))?;
        match report.verdict {
            Verdict::Ok { .. } => {}
            other => return Err(format!("seed {seed}: {other:?}")),
        }
        txs += report.committed;
        aborts += report.parent_aborts;
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(120) {
        return Err(format!("50/50 ok but took {elapsed:.1?}"));
    }
    Ok(format!("50/50 ok, {txs} committed, {aborts} parent aborts, {elapsed:.1?}"))
}

fn invisibility_and_hygiene() -> Outcome {
    for round in 0..1000 {
        child_invisibility_round(round).map_err(|e| format!("invisibility round {round}: {e}"))?;
        abort_hygiene_round(round).map_err(|e| format!("hygiene round {round}: {e}"))?;
    }
    Ok("1000/1000 invisibility, 1000/1000 hygiene".into())
}

fn micro(policy: MicroPolicy, threads: usize, txs_per_thread: usize, rep: usize) -> Result<RunStats, String> {
    let cfg = MicroConfig {
        threads,
        txs_per_thread,
        key_range: 50_000,
        policy,
        reps: REPS,
        ..MicroConfig::default()
    };
    run_micro(&cfg, rep).map(|r| r.stats).map_err(|e| e.to_string())
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    if xs.len().is_multiple_of(2) {
        (xs[mid - 1] + xs[mid]) / 2.0
    } else {
        xs[mid]
    }
}

fn abort_rate_trend() -> Outcome {
    let (mut flat, mut nested) = (Vec::new(), Vec::new());
    for rep in 0..REPS {
        flat.push(micro(MicroPolicy::Flat, 8, 5_000, rep)?.abort_rate());
        nested.push(micro(MicroPolicy::NestAll, 8, 5_000, rep)?.abort_rate());
    }
    let not_better = flat.iter().zip(&nested).filter(|(f, n)| n >= f).count();
    let (flat_mean, nested_mean) = (mean(flat), mean(nested));
    let detail = format!("abort rate flat {flat_mean:.4}, nest-all {nested_mean:.4}, nest-all >= flat on {not_better}/{REPS} reps");
    if nested_mean <= flat_mean && not_better <= 2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn single_thread_overhead() -> Outcome {
    let (mut flat, mut nested) = (Vec::new(), Vec::new());
    for rep in 0..REPS {
        let f = micro(MicroPolicy::Flat, 1, 20_000, rep)?;
        let n = micro(MicroPolicy::NestAll, 1, 20_000, rep)?;
        if f.committed != n.committed {
            return Err(format!("rep {rep}: committed {} flat vs {} nest-all", f.committed, n.committed));
        }
        flat.push(f.wall.as_secs_f64());
        nested.push(n.wall.as_secs_f64());
    }
    let factor = median(nested) / median(flat);
    let detail = format!("median wall nest-all/flat = {factor:.3}x");
    if (1.0..3.0).contains(&factor) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn nids(policy: NidsPolicy, fragments_per_packet: usize, record_history: bool, rep: usize) -> Result<RunStats, String> {
    let cfg = NidsConfig {
        fragments_per_packet,
        policy,
        record_history,
        ..NidsConfig::default()
    };
    let run = run_nids(&cfg, rep).map_err(|e| e.to_string())?;
    if let Some(v) = run.violations.first() {
        return Err(format!("{policy:?} fragments={fragments_per_packet} rep {rep}: {v}"));
    }
    if run.log_entries != cfg.packets {
        return Err(format!("{} log entries for {} packets", run.log_entries, cfg.packets));
    }
    Ok(run.stats)
}

fn nids_abort_trend() -> Outcome {
    let (mut flat, mut nested) = (Vec::new(), Vec::new());
    for rep in 0..REPS {
        flat.push(nids(NidsPolicy::Flat, 1, false, rep)?.parent_aborts as f64);
        nested.push(nids(NidsPolicy::NestLog, 1, false, rep)?.parent_aborts as f64);
    }
    let (flat_mean, nested_mean) = (mean(flat), mean(nested));
    let mut detail = format!("mean parent aborts flat {flat_mean:.1}, nest-log {nested_mean:.1}");
    if flat_mean == 0.0 {
        detail.push_str(" (flat saw no conflicts, so the trend was not exercised)");
    }
    if nested_mean <= 0.7 * flat_mean {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn nids_audit() -> Outcome {
    let policies = [NidsPolicy::Flat, NidsPolicy::NestLog, NidsPolicy::NestMap, NidsPolicy::NestBoth];
    let mut runs = 0;
    for policy in policies {
        for fragments in [1, 8] {
            for rep in 0..2 {
                nids(policy, fragments, rep == 0, rep)?;
                runs += 1;
            }
        }
    }
    Ok(format!("0 violations over {runs} runs (plus the trend runs above)"))
}

fn deadlock_escape() -> Outcome {
    let (mut min_aborts, mut slowest) = (u64::MAX, Duration::ZERO);
    for seed in 0..100 {
        let report = cross_queue(seed, Duration::from_secs(5)).map_err(|e| format!("seed {seed}: {e}"))?;
        if report.parent_aborts == 0 {
            return Err(format!("seed {seed}: terminated without a parent abort"));
        }
        min_aborts = min_aborts.min(report.parent_aborts);
        slowest = slowest.max(report.elapsed);
    }
    Ok(format!("100/100 terminated, min parent aborts {min_aborts}, slowest {slowest:.1?}"))
}

fn pool_liveness() -> Outcome {
    pool_cancellation(4)?;
    pool_single_ready(8)?;
    Ok("K=4 with 5 produce-consume pairs committed; 8 consumers got exactly 1 value".into())
}

fn law_suite() -> Outcome {
    let report = law_suites(1000, 7)?;
    let stress = stress_serializable(99, 4, 50)?;
    if let Some(v) = check_structure_laws(&stress.history).first() {
        return Err(format!("concurrent history: {v}"));
    }
    let cases: Vec<String> = report.cases.iter().map(|(k, v)| format!("{k} {v}")).collect();
    Ok(format!("sequential cases: {}; concurrent history laws ok", cases.join(", ")))
}

fn log_validation_law() -> Outcome {
    let report = log_validation(1000);
    let detail = format!(
        "{} trials: {} prefix-read aborts, {} past-end commits after growth",
        report.trials, report.prefix_aborts, report.past_end_commits
    );
    if report.prefix_aborts == 0 && report.past_end_commits == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("serializability under stress", serializability),
        ("child invisibility and abort hygiene", invisibility_and_hygiene),
        ("micro abort-rate trend", abort_rate_trend),
        ("single-thread nesting overhead", single_thread_overhead),
        ("NIDS abort reduction with nested log", nids_abort_trend),
        ("NIDS audit", nids_audit),
        ("cross-queue deadlock escape", deadlock_escape),
        ("pool liveness", pool_liveness),
        ("per-structure law suites", law_suite),
        ("log validation law", log_validation_law),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{took:.1?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{took:.1?}]", i + 1);
            }
        }
    }
    println!("{}/10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
