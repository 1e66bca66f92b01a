//! Map-then-queue microbenchmark.
//!
//! Every transaction performs a fixed number of random map operations
//! followed by a fixed number of random queue operations. The policy decides
//! which of the two groups run as child transactions.

use std::collections::BTreeMap;
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use txds::checker::{CommittedHistory, Event, History, Op, Snapshot, StructureId};
use txds::{Backoff, Config, RunCounters, Stm, Tx, TxMap, TxQueue, TxResult};

use crate::{BenchError, RunStats};

pub const MAP: StructureId = StructureId(0);
pub const QUEUE: StructureId = StructureId(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MicroPolicy {
    Flat,
    NestAll,
    NestQueue,
}

impl MicroPolicy {
    pub fn name(self) -> &'static str {
        match self {
            MicroPolicy::Flat => "flat",
            MicroPolicy::NestAll => "nest-all",
            MicroPolicy::NestQueue => "nest-queue",
        }
    }

    fn nests_map(self) -> bool {
        self == MicroPolicy::NestAll
    }

    fn nests_queue(self) -> bool {
        self != MicroPolicy::Flat
    }
}

#[derive(Debug, Clone)]
pub struct MicroConfig {
    pub threads: usize,
    pub txs_per_thread: usize,
    pub map_ops: usize,
    pub queue_ops: usize,
    pub key_range: u64,
    pub policy: MicroPolicy,
    pub seed: u64,
    pub reps: usize,
    pub child_backoff: Backoff,
    pub parent_backoff: Backoff,
    pub record_history: bool,
}

impl Default for MicroConfig {
    fn default() -> Self {
        Self {
            threads: 1,
            txs_per_thread: 50_000,
            map_ops: 10,
            queue_ops: 2,
            key_range: 50_000,
            policy: MicroPolicy::Flat,
            seed: 1,
            reps: 10,
            child_backoff: Backoff::Exponential,
            parent_backoff: Backoff::Exponential,
            record_history: false,
        }
    }
}

impl MicroConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let positive = [
            ("threads", self.threads as u64),
            ("txs", self.txs_per_thread as u64),
            ("map-ops", self.map_ops as u64),
            ("queue-ops", self.queue_ops as u64),
            ("key-range", self.key_range),
            ("reps", self.reps as u64),
        ];
        match positive.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(BenchError::Config(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapOp {
    Get(u64),
    Put(u64, u64),
    Remove(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueOp {
    Enq(u64),
    Deq,
}

/// The operations of one transaction, fixed before its first attempt so
/// that retries repeat the same work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroTx {
    pub map: Vec<MapOp>,
    pub queue: Vec<QueueOp>,
}

/// Uniform op mix: get/put/remove with probability 1/3 each over uniform
/// keys, enq/deq with probability 1/2 each. `tag` makes enqueued values unique.
pub fn generate_tx(rng: &mut impl Rng, cfg: &MicroConfig, tag: u64) -> MicroTx {
    let map = (0..cfg.map_ops)
        .map(|_| {
            let key = rng.random_range(0..cfg.key_range);
            match rng.random_range(0..3) {
                0 => MapOp::Get(key),
                1 => MapOp::Put(key, rng.random()),
                _ => MapOp::Remove(key),
            }
        })
        .collect();
    let queue = (0..cfg.queue_ops as u64)
        .map(|i| {
            if rng.random_bool(0.5) {
                QueueOp::Enq(tag * cfg.queue_ops as u64 + i)
            } else {
                QueueOp::Deq
            }
        })
        .collect();
    MicroTx { map, queue }
}

/// Stream of seeded per-thread workloads.
pub fn thread_rng(seed: u64, rep: usize, thread: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((rep as u64) << 32) | thread as u64);
    rng
}

/// Result of one repetition, with the end state for inspection.
#[derive(Debug)]
pub struct MicroRun {
    pub stats: RunStats,
    /// Deq operations of committed transactions that found the queue empty.
    pub empty_deqs: u64,
    pub final_map: BTreeMap<u64, u64>,
    pub final_queue: Vec<u64>,
    pub history: Option<CommittedHistory>,
}

struct Worker {
    counters: RunCounters,
    committed: u64,
    empty_deqs: u64,
}

fn run_map(tx: &mut Tx, map: &TxMap<u64, u64>, ops: &[MapOp]) -> TxResult<()> {
    for op in ops {
        match *op {
            MapOp::Get(key) => {
                let result = map.get(tx, &key)?;
                tx.record(Event::new(MAP, Op::Get { key, result }));
            }
            MapOp::Put(key, value) => {
                map.put(tx, key, value)?;
                tx.record(Event::new(MAP, Op::Put { key, value }));
            }
            MapOp::Remove(key) => {
                map.remove(tx, key)?;
                tx.record(Event::new(MAP, Op::Remove { key }));
            }
        }
    }
    Ok(())
}

fn run_queue(tx: &mut Tx, queue: &TxQueue<u64>, ops: &[QueueOp]) -> TxResult<u64> {
    let mut empty = 0;
    for op in ops {
        match *op {
            QueueOp::Enq(v) => {
                queue.enq(tx, v)?;
                tx.record(Event::new(QUEUE, Op::Enq(v)));
            }
            QueueOp::Deq => {
                let got = queue.deq(tx)?;
                empty += u64::from(got.is_none());
                tx.record(Event::new(QUEUE, Op::Deq(got)));
            }
        }
    }
    Ok(empty)
}

fn run_tx(
    tx: &mut Tx,
    work: &MicroTx,
    policy: MicroPolicy,
    map: &TxMap<u64, u64>,
    queue: &TxQueue<u64>,
) -> TxResult<u64> {
    if policy.nests_map() {
        tx.nested(|tx| run_map(tx, map, &work.map))?;
    } else {
        run_map(tx, map, &work.map)?;
    }
    if policy.nests_queue() {
        tx.nested(|tx| run_queue(tx, queue, &work.queue))
    } else {
        run_queue(tx, queue, &work.queue)
    }
}

/// Runs repetition `rep` of the microbenchmark.
pub fn run_micro(cfg: &MicroConfig, rep: usize) -> Result<MicroRun, BenchError> {
    cfg.validate()?;
    let config = Config {
        child_backoff: cfg.child_backoff,
        parent_backoff: cfg.parent_backoff,
        ..Config::default()
    };
    let history = cfg.record_history.then(|| Arc::new(History::new()));
    let stm = match &history {
        Some(h) => Stm::recording(config, h.clone()),
        None => Stm::new(config),
    };

    let mut prefill_rng = thread_rng(cfg.seed, rep, usize::MAX >> 32);
    let mut prefill = BTreeMap::new();
    for key in 0..cfg.key_range {
        if prefill_rng.random_bool(0.5) {
            prefill.insert(key, prefill_rng.random());
        }
    }
    if let Some(h) = &history {
        h.declare(MAP, Snapshot::Map(prefill.clone()));
        h.declare(QUEUE, Snapshot::Queue(Vec::new()));
    }
    let map = TxMap::with_entries(prefill);
    let queue = TxQueue::new();

    let warmup = cfg.txs_per_thread * 5 / 100;
    let barrier = Barrier::new(cfg.threads + 1);
    let (workers, wall) = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.threads)
            .map(|t| {
                let (stm, map, queue, barrier) = (&stm, &map, &queue, &barrier);
                s.spawn(move || {
                    let mut rng = thread_rng(cfg.seed, rep, t);
                    let mut w = Worker {
                        counters: RunCounters::default(),
                        committed: 0,
                        empty_deqs: 0,
                    };
                    for i in 0..cfg.txs_per_thread {
                        if i == warmup {
                            barrier.wait();
                        }
                        let tag = ((t as u64) << 32) | i as u64;
                        let work = generate_tx(&mut rng, cfg, tag);
                        let (empty, counters) = stm.run(|tx| run_tx(tx, &work, cfg.policy, map, queue));
                        if i >= warmup {
                            w.committed += 1;
                            w.empty_deqs += empty;
                            w.counters.parent_aborts += counters.parent_aborts;
                            w.counters.tx.absorb(counters.tx);
                        }
                    }
                    if warmup >= cfg.txs_per_thread {
                        barrier.wait();
                    }
                    w
                })
            })
            .collect();
        barrier.wait();
        let start = Instant::now();
        let workers: Vec<Worker> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        (workers, start.elapsed())
    });

    let mut stats = RunStats {
        bench: "micro",
        policy: cfg.policy.name().to_string(),
        threads: cfg.threads,
        rep,
        committed: 0,
        parent_aborts: 0,
        child_aborts: 0,
        child_retries: 0,
        wall: Duration::ZERO,
    };
    let mut empty_deqs = 0;
    for w in &workers {
        stats.committed += w.committed;
        stats.parent_aborts += w.counters.parent_aborts;
        stats.child_aborts += w.counters.tx.child_aborts;
        stats.child_retries += w.counters.tx.child_retries;
        empty_deqs += w.empty_deqs;
    }
    stats.wall = wall;

    let final_map = map.snapshot();
    let final_queue = queue.committed();
    let history = history.map(|h| {
        h.set_final(MAP, Snapshot::Map(final_map.clone()));
        h.set_final(QUEUE, Snapshot::Queue(final_queue.clone()));
        h.finish()
    });
    Ok(MicroRun {
        stats,
        empty_deqs,
        final_map,
        final_queue,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_counts_are_rejected() {
        let cfg = MicroConfig {
            txs_per_thread: 0,
            ..MicroConfig::default()
        };
        let err = run_micro(&cfg, 0).unwrap_err();
        assert!(err.to_string().contains("txs"), "{err}");
    }

    #[test]
    fn generated_tx_has_requested_shape_and_unique_tags() {
        let cfg = MicroConfig::default();
        let mut rng = thread_rng(7, 0, 0);
        let a = generate_tx(&mut rng, &cfg, 1);
        let b = generate_tx(&mut rng, &cfg, 2);
        assert_eq!(a.map.len(), 10);
        assert_eq!(a.queue.len(), 2);
        let tags: Vec<u64> = [a, b]
            .iter()
            .flat_map(|t| t.queue.iter())
            .filter_map(|op| match op {
                QueueOp::Enq(v) => Some(*v),
                QueueOp::Deq => None,
            })
            .collect();
        let mut dedup = tags.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(tags.len(), dedup.len());
    }

    #[test]
    fn op_mix_is_uniform_within_three_sigma() {
        let cfg = MicroConfig::default();
        let mut rng = thread_rng(11, 0, 0);
        let n = 20_000;
        let (mut map_counts, mut queue_counts) = ([0f64; 3], [0f64; 2]);
        for i in 0..n {
            let t = generate_tx(&mut rng, &cfg, i);
            for op in t.map {
                map_counts[match op {
                    MapOp::Get(_) => 0,
                    MapOp::Put(..) => 1,
                    MapOp::Remove(_) => 2,
                }] += 1.0;
            }
            for op in t.queue {
                queue_counts[matches!(op, QueueOp::Deq) as usize] += 1.0;
            }
        }
        let within = |counts: &[f64]| {
            let total: f64 = counts.iter().sum();
            let p = 1.0 / counts.len() as f64;
            let sigma = (total * p * (1.0 - p)).sqrt();
            counts.iter().all(|c| (c - total * p).abs() <= 3.0 * sigma)
        };
        assert!(within(&map_counts), "{map_counts:?}");
        assert!(within(&queue_counts), "{queue_counts:?}");
    }

    #[test]
    fn single_thread_policies_commit_the_same_work() {
        let base = MicroConfig {
            txs_per_thread: 400,
            key_range: 50,
            reps: 1,
            ..MicroConfig::default()
        };
        let runs: Vec<MicroRun> = [MicroPolicy::Flat, MicroPolicy::NestAll, MicroPolicy::NestQueue]
            .into_iter()
            .map(|policy| run_micro(&MicroConfig { policy, ..base.clone() }, 0).unwrap())
            .collect();
        for r in &runs {
            assert_eq!(r.stats.committed, 380);
            assert_eq!(r.stats.parent_aborts, 0);
            assert_eq!(r.final_map, runs[0].final_map);
            assert_eq!(r.final_queue, runs[0].final_queue);
        }
    }
}
