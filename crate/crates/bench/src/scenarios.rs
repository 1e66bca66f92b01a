//! Correctness scenarios shared by the acceptance suite and the CLI tests.
//!
//! Each function runs one self-contained experiment and returns `Err` with a
//! description of the first thing that went wrong.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Barrier};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use txds::checker::{
    check_serializable, check_structure_laws, CommittedHistory, Event, History, Op, Snapshot, StructureId, Verdict,
};
use txds::{Abort, Backoff, ChildStatus, Config, Level, Stm, Tx, TxLog, TxMap, TxPool, TxQueue, TxResult, TxStack};

const MAP: StructureId = StructureId(0);
const QUEUE: StructureId = StructureId(1);
const LOG: StructureId = StructureId(2);
const POOL: StructureId = StructureId(3);

fn ensure(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

struct StressWorld {
    map: TxMap<u64, u64>,
    queue: TxQueue<u64>,
    log: TxLog<u64>,
    pool: TxPool<u64>,
}

#[derive(Clone, Copy)]
enum StressOp {
    Get(u64),
    Put(u64, u64),
    Remove(u64),
    Enq(u64),
    Deq,
    Append(u64),
    Read(usize),
    Produce(u64),
    Consume,
}

fn stress_op(rng: &mut impl Rng, tag: &mut u64, log_hint: usize) -> StressOp {
    *tag += 1;
    let key = rng.random_range(0..16);
    match rng.random_range(0..9) {
        0 => StressOp::Get(key),
        1 => StressOp::Put(key, *tag),
        2 => StressOp::Remove(key),
        3 => StressOp::Enq(*tag),
        4 => StressOp::Deq,
        5 => StressOp::Append(*tag),
        6 => StressOp::Read(rng.random_range(0..log_hint + 2)),
        7 => StressOp::Produce(*tag),
        _ => StressOp::Consume,
    }
}

fn apply_stress(tx: &mut Tx, w: &StressWorld, op: StressOp) -> TxResult<()> {
    match op {
        StressOp::Get(key) => {
            let result = w.map.get(tx, &key)?;
            tx.record(Event::new(MAP, Op::Get { key, result }));
        }
        StressOp::Put(key, value) => {
            w.map.put(tx, key, value)?;
            tx.record(Event::new(MAP, Op::Put { key, value }));
        }
        StressOp::Remove(key) => {
            w.map.remove(tx, key)?;
            tx.record(Event::new(MAP, Op::Remove { key }));
        }
        StressOp::Enq(v) => {
            w.queue.enq(tx, v)?;
            tx.record(Event::new(QUEUE, Op::Enq(v)));
        }
        StressOp::Deq => {
            let got = w.queue.deq(tx)?;
            tx.record(Event::new(QUEUE, Op::Deq(got)));
        }
        StressOp::Append(v) => {
            w.log.append(tx, v)?;
            tx.record(Event::new(LOG, Op::Append(v)));
        }
        StressOp::Read(index) => {
            let result = w.log.read(tx, index)?;
            tx.record(Event::new(LOG, Op::Read { index, result }));
        }
        StressOp::Produce(v) => {
            if w.pool.try_produce(tx, v)?.is_none() {
                tx.record(Event::new(POOL, Op::Produce(v)));
            }
        }
        StressOp::Consume => {
            if let Some(v) = w.pool.try_consume(tx)? {
                tx.record(Event::new(POOL, Op::Consume(v)));
            }
        }
    }
    Ok(())
}

/// Outcome of one recorded stress run.
#[derive(Debug)]
pub struct StressReport {
    pub committed: usize,
    pub parent_aborts: u64,
    pub child_aborts: u64,
    pub verdict: Verdict,
    pub history: CommittedHistory,
}

/// `threads` workers each commit `txs_per_thread` random transactions over
/// one map, queue, log and pool, some operations grouped into children.
/// The committed history is then checked for serializability and the
/// per-structure laws.
pub fn stress_serializable(seed: u64, threads: usize, txs_per_thread: usize) -> Result<StressReport, String> {
    let history = Arc::new(History::new());
    let config = Config {
        child_backoff: Backoff::Exponential,
        parent_backoff: Backoff::Exponential,
        ..Config::default()
    };
    let stm = Stm::recording(config, history.clone());
    let w = StressWorld {
        map: TxMap::new(),
        queue: TxQueue::new(),
        log: TxLog::new(),
        pool: TxPool::new(32),
    };
    let (parent_aborts, child_aborts) = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let (stm, w) = (&stm, &w);
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(t as u64);
                    let mut tag = (t as u64 + 1) << 40;
                    let (mut parent_aborts, mut child_aborts) = (0, 0);
                    for _ in 0..txs_per_thread {
                        let hint = w.log.committed_len();
                        let n = rng.random_range(2..7);
                        let ops: Vec<StressOp> = (0..n).map(|_| stress_op(&mut rng, &mut tag, hint)).collect();
                        let child_from = rng.random_range(0..=n);
                        let child_to = rng.random_range(child_from..=n);
                        let ((), c) = stm.run(|tx| {
                            for &op in &ops[..child_from] {
                                apply_stress(tx, w, op)?;
                            }
                            if child_from < child_to {
                                tx.nested(|tx| {
                                    for &op in &ops[child_from..child_to] {
                                        apply_stress(tx, w, op)?;
                                    }
                                    Ok(())
                                })?;
                            }
                            for &op in &ops[child_to..] {
                                apply_stress(tx, w, op)?;
                            }
                            Ok(())
                        });
                        parent_aborts += c.parent_aborts;
                        child_aborts += c.tx.child_aborts;
                    }
                    (parent_aborts, child_aborts)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
    });

    history.set_final(MAP, Snapshot::Map(w.map.snapshot()));
    history.set_final(QUEUE, Snapshot::Queue(w.queue.committed()));
    history.set_final(LOG, Snapshot::Log(w.log.committed()));
    history.set_final(POOL, Snapshot::Pool(w.pool.ready_values()));
    let committed = history.finish();
    let laws = check_structure_laws(&committed);
    if let Some(v) = laws.first() {
        return Err(v.to_string());
    }
    let verdict = check_serializable(&committed);
    Ok(StressReport {
        committed: committed.txs.len(),
        parent_aborts,
        child_aborts,
        verdict,
        history: committed,
    })
}

/// One round: a child's effects stay invisible to another thread while the
/// child is open and after it aborts, and the aborted child's locks are free.
pub fn child_invisibility_round(round: u64) -> Result<(), String> {
    let stm = Stm::default();
    let map = TxMap::<u64, u64>::new();
    let queue = TxQueue::<u64>::new();
    let log = TxLog::<u64>::new();
    let barrier = Barrier::new(2);
    let key = round % 7;

    std::thread::scope(|s| {
        let writer = s.spawn(|| -> Result<(), String> {
            let mut tx = stm.begin().unwrap();
            tx.n_begin().unwrap();
            map.put(&mut tx, key, round).map_err(|e| e.to_string())?;
            queue.enq(&mut tx, round).map_err(|e| e.to_string())?;
            log.append(&mut tx, round).map_err(|e| e.to_string())?;
            barrier.wait(); // child open
            barrier.wait(); // observed
            let status = tx.n_abort().map_err(|e| e.to_string())?;
            ensure(status == ChildStatus::Retry, || format!("child abort gave {status:?}"))?;
            barrier.wait(); // child aborted
            barrier.wait(); // observed
            tx.n_commit().map_err(|e| e.to_string())?;
            tx.commit().map_err(|e| e.to_string())?;
            Ok(())
        });
        let observe = |phase: &str| -> Result<(), String> {
            let mut tx = stm.begin().unwrap();
            let seen = map.get(&mut tx, &key).map_err(|e| format!("{phase}: map read {e}"))?;
            ensure(seen.is_none(), || format!("{phase}: child put visible"))?;
            let deq = queue.deq(&mut tx).map_err(|e| format!("{phase}: deq {e}"))?;
            ensure(deq.is_none(), || format!("{phase}: child enq visible"))?;
            let read = log.read(&mut tx, 0).map_err(|e| format!("{phase}: log read {e}"))?;
            ensure(read.is_none(), || format!("{phase}: child append visible"))?;
            tx.commit().map_err(|e| format!("{phase}: observer commit {e}"))?;
            Ok(())
        };
        barrier.wait();
        let open = observe("child open");
        let held = log.lock().owner().is_some_and(|o| o.is_child());
        barrier.wait();
        barrier.wait();
        let aborted = observe("child aborted");
        let freed = stm.run(|tx| log.append(tx, u64::MAX)).1.parent_aborts == 0;
        barrier.wait();
        writer.join().unwrap()?;
        open?;
        aborted?;
        ensure(held, || "child append did not take the log lock at child level".into())?;
        ensure(freed, || "aborted child's log lock was not released".into())?;
        ensure(log.committed() == vec![u64::MAX], || format!("log holds {:?}", log.committed()))?;
        ensure(map.committed(&key).is_none(), || "aborted child's put was committed".into())?;
        ensure(queue.committed().is_empty(), || "aborted child's enq was committed".into())
    })
}

/// One round: a child abort releases exactly the child's locks and discards
/// exactly the child's state, keeping the parent's.
pub fn abort_hygiene_round(round: u64) -> Result<(), String> {
    let stm = Stm::default();
    let parent_q = TxQueue::with_items([round, round + 1]);
    let child_q = TxQueue::with_items([round + 2]);
    let map = TxMap::<u64, u64>::new();
    let barrier = Barrier::new(2);

    std::thread::scope(|s| {
        let owner = s.spawn(|| -> Result<(), String> {
            let mut tx = stm.begin().unwrap();
            let first = parent_q.deq(&mut tx).map_err(|e| e.to_string())?;
            ensure(first == Some(round), || format!("parent deq gave {first:?}"))?;
            map.put(&mut tx, 1, round).map_err(|e| e.to_string())?;
            tx.n_begin().unwrap();
            child_q.deq(&mut tx).map_err(|e| e.to_string())?;
            map.put(&mut tx, 2, round).map_err(|e| e.to_string())?;
            let status = tx.n_abort().map_err(|e| e.to_string())?;
            ensure(status == ChildStatus::Retry, || format!("child abort gave {status:?}"))?;
            ensure(tx.ctx().locks(Level::Child).is_empty(), || "child lock set not empty".into())?;
            ensure(tx.ctx().locks(Level::Parent).len() == 1, || "parent lock set changed".into())?;
            barrier.wait(); // child aborted, parent still open
            barrier.wait(); // other thread probed
            tx.n_commit().map_err(|e| e.to_string())?;
            let seen = map.get(&mut tx, &2).map_err(|e| e.to_string())?;
            ensure(seen.is_none(), || "aborted child's put still visible to the parent".into())?;
            let next = parent_q.deq(&mut tx).map_err(|e| e.to_string())?;
            ensure(next == Some(round + 1), || format!("parent cursor lost: {next:?}"))?;
            tx.commit().map_err(|e| e.to_string())?;
            Ok(())
        });
        barrier.wait();
        let probe = (|| -> Result<(), String> {
            let mut tx = stm.begin().unwrap();
            let got = child_q.deq(&mut tx).map_err(|e| format!("child lock not released: {e}"))?;
            ensure(got == Some(round + 2), || format!("child-dequeued item missing: {got:?}"))?;
            tx.commit().map_err(|e| e.to_string())?;
            let mut tx = stm.begin().unwrap();
            let blocked = parent_q.deq(&mut tx);
            ensure(blocked == Err(Abort::Parent), || format!("parent lock not held: {blocked:?}"))?;
            Ok(())
        })();
        barrier.wait();
        owner.join().unwrap()?;
        probe?;
        ensure(parent_q.committed().is_empty(), || format!("parent queue holds {:?}", parent_q.committed()))?;
        ensure(child_q.committed().is_empty(), || "probe deq lost".into())?;
        ensure(
            map.snapshot() == BTreeMap::from([(1, round)]),
            || format!("map holds {:?}", map.snapshot()),
        )
    })
}

/// Outcome of the cross-queue scenario.
#[derive(Debug, Clone, Copy)]
pub struct CrossQueueReport {
    pub parent_aborts: u64,
    pub child_aborts: u64,
    pub elapsed: Duration,
}

/// Two threads each dequeue from their own queue, then, inside a child,
/// from the other's. Both first attempts meet at a barrier while holding
/// their own queue, so the children can only fail until one parent gives
/// up and releases its lock.
pub fn cross_queue(seed: u64, timeout: Duration) -> Result<CrossQueueReport, String> {
    let (tx_done, rx_done) = mpsc::channel();
    std::thread::spawn(move || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fill = |rng: &mut ChaCha8Rng| -> Vec<u64> { (0..rng.random_range(2..6)).map(|_| rng.random()).collect() };
        let queues = [TxQueue::with_items(fill(&mut rng)), TxQueue::with_items(fill(&mut rng))];
        let stm = Stm::default();
        let barrier = Barrier::new(2);
        let start = Instant::now();
        let counters = std::thread::scope(|s| {
            let handles: Vec<_> = (0..2)
                .map(|i| {
                    let (stm, queues, barrier) = (&stm, &queues, &barrier);
                    s.spawn(move || {
                        let (mine, theirs) = (&queues[i], &queues[1 - i]);
                        let mut first = true;
                        stm.run(|tx| {
                            mine.deq(tx)?;
                            if std::mem::take(&mut first) {
                                barrier.wait();
                            }
                            tx.nested(|tx| theirs.deq(tx))?;
                            Ok(())
                        })
                        .1
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect::<Vec<_>>()
        });
        let _ = tx_done.send(CrossQueueReport {
            parent_aborts: counters.iter().map(|c| c.parent_aborts).sum(),
            child_aborts: counters.iter().map(|c| c.tx.child_aborts).sum(),
            elapsed: start.elapsed(),
        });
    });
    rx_done
        .recv_timeout(timeout)
        .map_err(|_| format!("seed {seed}: no progress within {timeout:?}"))
}

/// One ready value and `consumers` competing consumers: exactly one of them
/// gets the value.
pub fn pool_single_ready(consumers: usize) -> Result<(), String> {
    let stm = Stm::default();
    let pool = TxPool::new(4);
    stm.atomically(|tx| pool.produce(tx, 42u64));
    let barrier = Barrier::new(consumers);
    let got: Vec<Option<u64>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..consumers)
            .map(|_| {
                s.spawn(|| {
                    barrier.wait();
                    let mut tx = stm.begin().unwrap();
                    let v = tx_ok(pool.try_consume(&mut tx));
                    let committed = tx.commit().is_ok();
                    v.filter(|_| committed)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let delivered: Vec<u64> = got.into_iter().flatten().collect();
    ensure(delivered == vec![42], || format!("delivered {delivered:?}"))
}

fn tx_ok<T>(r: TxResult<Option<T>>) -> Option<T> {
    r.ok().flatten()
}

/// A single transaction performs `capacity + 1` produce/consume pairs on a
/// pool with `capacity` slots, which only works if consumes cancel produces.
pub fn pool_cancellation(capacity: usize) -> Result<(), String> {
    let stm = Stm::default();
    let pool = TxPool::logged(capacity);
    let mut tx = stm.begin().unwrap();
    for v in 0..=capacity as u64 {
        pool.produce(&mut tx, v).map_err(|e| format!("produce {v}: {e}"))?;
        let got = pool.consume(&mut tx).map_err(|e| format!("consume {v}: {e}"))?;
        ensure(got == v, || format!("consumed {got}, expected {v}"))?;
    }
    tx.commit().map_err(|e| e.to_string())?;
    let transitions = pool.transitions().unwrap_or_default();
    match transitions.iter().find(|t| !t.from.can_become(t.to)) {
        Some(t) => Err(format!("illegal transition {t:?}")),
        None => ensure(pool.ready_count() == 0, || "cancelled values became ready".into()),
    }
}

/// Result of the log validation trials.
#[derive(Debug, Clone, Copy)]
pub struct LogLawReport {
    pub prefix_aborts: u64,
    pub past_end_commits: u64,
    pub trials: u64,
}

/// Read-only transactions that stay inside the committed prefix must commit
/// despite appends landing meanwhile; transactions that read past the end
/// must abort when the log grows before they commit.
pub fn log_validation(trials: u64) -> LogLawReport {
    let stm = Stm::default();
    let log = TxLog::with_entries(vec![0u64]);
    let stop = AtomicBool::new(false);
    let mut report = LogLawReport {
        prefix_aborts: 0,
        past_end_commits: 0,
        trials,
    };
    std::thread::scope(|s| {
        s.spawn(|| {
            let mut i = 1;
            while !stop.load(Ordering::SeqCst) {
                stm.atomically(|tx| log.append(tx, i));
                i += 1;
                std::thread::yield_now();
            }
        });
        let append_now = || std::thread::scope(|s| s.spawn(|| stm.atomically(|tx| log.append(tx, 0))).join().unwrap());
        for t in 0..trials {
            let mut tx = stm.begin().unwrap();
            let len = log.committed_len();
            let ok = (0..len.min(4)).all(|i| matches!(log.read(&mut tx, (t as usize + i) % len), Ok(Some(_))));
            append_now();
            if !ok || tx.commit().is_err() {
                report.prefix_aborts += 1;
            }

            let mut tx = stm.begin().unwrap();
            let past = log.committed_len() + 10;
            let _ = log.read(&mut tx, past);
            append_now();
            if tx.commit().is_ok() {
                report.past_end_commits += 1;
            }
        }
        stop.store(true, Ordering::SeqCst);
    });
    report
}

/// Counts of generated cases per structure that matched the sequential
/// reference.
#[derive(Debug, Clone, Default)]
pub struct LawSuiteReport {
    pub cases: BTreeMap<&'static str, usize>,
}

/// Sequential-equivalence suites: random single-threaded transaction
/// sequences (with committed and aborted children and parents) on each
/// structure, compared step by step against a textbook model.
pub fn law_suites(cases: usize, seed: u64) -> Result<LawSuiteReport, String> {
    let mut report = LawSuiteReport::default();
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(case as u64);
        queue_case(&mut rng).map_err(|e| format!("queue case {case}: {e}"))?;
        stack_case(&mut rng).map_err(|e| format!("stack case {case}: {e}"))?;
        log_case(&mut rng).map_err(|e| format!("log case {case}: {e}"))?;
        map_case(&mut rng).map_err(|e| format!("map case {case}: {e}"))?;
    }
    for name in ["queue", "stack", "log", "map"] {
        report.cases.insert(name, cases);
    }
    Ok(report)
}

/// Drives one case: `txs` transactions, each a parent phase, a child phase
/// and a second parent phase, with random commit/abort decisions. `step`
/// applies one random op to the structure and the model of the current level.
fn run_case<M: Clone>(
    rng: &mut ChaCha8Rng,
    model: &mut M,
    mut step: impl FnMut(&mut ChaCha8Rng, &mut Tx, &mut M) -> Result<(), String>,
    mut check: impl FnMut(&M) -> Result<(), String>,
) -> Result<(), String> {
    let stm = Stm::default();
    for _ in 0..rng.random_range(1..5) {
        let mut tx = stm.begin().unwrap();
        let mut tx_model = model.clone();
        for _ in 0..rng.random_range(0..5) {
            step(rng, &mut tx, &mut tx_model)?;
        }
        tx.n_begin().unwrap();
        let mut child_model = tx_model.clone();
        for _ in 0..rng.random_range(0..5) {
            step(rng, &mut tx, &mut child_model)?;
        }
        if rng.random_bool(0.5) {
            ensure(tx.n_commit() == Ok(ChildStatus::Committed), || "child commit failed".into())?;
            tx_model = child_model;
        } else {
            ensure(tx.n_abort() == Ok(ChildStatus::Retry), || "child abort did not retry".into())?;
            ensure(tx.n_commit() == Ok(ChildStatus::Committed), || "empty child commit failed".into())?;
        }
        for _ in 0..rng.random_range(0..3) {
            step(rng, &mut tx, &mut tx_model)?;
        }
        if rng.random_bool(0.8) {
            tx.commit().map_err(|e| e.to_string())?;
            *model = tx_model;
        } else {
            tx.abort();
        }
        check(model)?;
    }
    Ok(())
}

fn queue_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let initial: Vec<u64> = (0..rng.random_range(0..4)).map(|_| rng.random()).collect();
    let q = TxQueue::with_items(initial.clone());
    let mut model: VecDeque<u64> = initial.into_iter().collect();
    run_case(
        rng,
        &mut model,
        |rng, tx, m| {
            if rng.random_bool(0.5) {
                let v = rng.random();
                q.enq(tx, v).map_err(|e| e.to_string())?;
                m.push_back(v);
            } else {
                let got = q.deq(tx).map_err(|e| e.to_string())?;
                let want = m.pop_front();
                ensure(got == want, || format!("deq gave {got:?}, FIFO says {want:?}"))?;
            }
            Ok(())
        },
        |m| ensure(q.committed() == m.iter().copied().collect::<Vec<_>>(), || "committed contents differ".into()),
    )
}

fn stack_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let initial: Vec<u64> = (0..rng.random_range(0..4)).map(|_| rng.random()).collect();
    let st = TxStack::with_items(initial.clone());
    let mut model = initial;
    run_case(
        rng,
        &mut model,
        |rng, tx, m| {
            if rng.random_bool(0.5) {
                let v = rng.random();
                st.push(tx, v).map_err(|e| e.to_string())?;
                m.push(v);
            } else {
                let got = st.pop(tx).map_err(|e| e.to_string())?;
                let want = m.pop();
                ensure(got == want, || format!("pop gave {got:?}, LIFO says {want:?}"))?;
            }
            Ok(())
        },
        |m| ensure(st.committed() == *m, || "committed contents differ".into()),
    )
}

fn log_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let initial: Vec<u64> = (0..rng.random_range(0..4)).map(|_| rng.random()).collect();
    let log = TxLog::with_entries(initial.clone());
    let mut model = initial;
    let mut last_committed = model.clone();
    run_case(
        rng,
        &mut model,
        |rng, tx, m| {
            if rng.random_bool(0.5) {
                let v = rng.random();
                log.append(tx, v).map_err(|e| e.to_string())?;
                m.push(v);
            } else {
                let i = rng.random_range(0..m.len() + 2);
                let got = log.read(tx, i).map_err(|e| e.to_string())?;
                ensure(got == m.get(i).copied(), || format!("read({i}) gave {got:?}"))?;
            }
            Ok(())
        },
        |m| {
            let now = log.committed();
            ensure(now.starts_with(&last_committed), || "committed prefix changed".into())?;
            ensure(now == *m, || "committed contents differ".into())?;
            last_committed = now;
            Ok(())
        },
    )
}

fn map_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let initial: BTreeMap<u64, u64> = (0..rng.random_range(0..5)).map(|_| (rng.random_range(0..8), rng.random())).collect();
    let map = TxMap::with_entries(initial.clone());
    let mut model = initial;
    run_case(
        rng,
        &mut model,
        |rng, tx, m| {
            let k = rng.random_range(0..8);
            match rng.random_range(0..3) {
                0 => {
                    let got = map.get(tx, &k).map_err(|e| e.to_string())?;
                    ensure(got == m.get(&k).copied(), || format!("get({k}) gave {got:?}"))?;
                }
                1 => {
                    let v = rng.random();
                    map.put(tx, k, v).map_err(|e| e.to_string())?;
                    m.insert(k, v);
                }
                _ => {
                    map.remove(tx, k).map_err(|e| e.to_string())?;
                    m.remove(&k);
                }
            }
            Ok(())
        },
        |m| ensure(map.snapshot() == *m, || "committed contents differ".into()),
    )
}
