use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use txds::checker::{
    check_opacity_proxy, check_serializable, check_structure_laws, Event, History, Op, Snapshot, StampedRead,
    StructureId, Verdict,
};
use txds::{Backoff, Config, Stm, TxLog, TxMap, TxQueue, TxStack};

const ACCOUNTS: u64 = 8;
const BALANCE: u64 = 100;

fn paced() -> Config {
    Config {
        child_backoff: Backoff::Exponential,
        parent_backoff: Backoff::Exponential,
        ..Config::default()
    }
}

#[test]
fn transfers_preserve_the_total_even_inside_doomed_attempts() {
    let stm = Stm::new(paced());
    let accounts = TxMap::with_entries((0..ACCOUNTS).map(|a| (a, BALANCE)));
    let torn = AtomicBool::new(false);
    thread::scope(|s| {
        for t in 0..4u64 {
            let (stm, accounts, torn) = (&stm, &accounts, &torn);
            s.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(t);
                for _ in 0..300 {
                    let (from, to) = (rng.random_range(0..ACCOUNTS), rng.random_range(0..ACCOUNTS));
                    let amount = rng.random_range(0..10);
                    stm.atomically(|tx| {
                        tx.nested(|tx| {
                            let a = accounts.get(tx, &from)?.unwrap();
                            if a >= amount && from != to {
                                let b = accounts.get(tx, &to)?.unwrap();
                                accounts.put(tx, from, a - amount)?;
                                accounts.put(tx, to, b + amount)?;
                            }
                            Ok(())
                        })
                    });
                    let total = stm.atomically(|tx| {
                        let mut sum = 0;
                        for a in 0..ACCOUNTS {
                            sum += accounts.get(tx, &a)?.unwrap();
                        }
                        // A torn snapshot seen by any attempt, even one that later aborts, is an opacity bug.
                        if sum != ACCOUNTS * BALANCE {
                            torn.store(true, Ordering::SeqCst);
                        }
                        Ok(sum)
                    });
                    assert_eq!(total, ACCOUNTS * BALANCE);
                }
            });
        }
    });
    assert!(!torn.load(Ordering::SeqCst));
    assert_eq!(accounts.snapshot().values().sum::<u64>(), ACCOUNTS * BALANCE);
}

#[test]
fn reads_only_see_writers_committed_before_the_snapshot() {
    let stm = Stm::new(paced());
    let cells: TxMap<u64, u64> = TxMap::new();
    let reads = Mutex::new(Vec::new());
    let stamps = Mutex::new(HashMap::new());
    thread::scope(|s| {
        for t in 0..4u64 {
            let (stm, cells, reads, stamps) = (&stm, &cells, &reads, &stamps);
            s.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
                for _ in 0..300 {
                    let key = rng.random_range(0..4);
                    loop {
                        let mut tx = stm.begin().unwrap();
                        let mut seen = Vec::new();
                        let attempt = (|| {
                            let writer = cells.get(&mut tx, &key)?;
                            seen.push(StampedRead { reader_vc: tx.vc(), writer });
                            let id = tx.id().0;
                            cells.put(&mut tx, key, id)
                        })();
                        reads.lock().unwrap().extend(seen);
                        if attempt.is_err() {
                            tx.abort();
                            continue;
                        }
                        let id = tx.id().0;
                        if let Ok(commit) = tx.commit() {
                            stamps.lock().unwrap().insert(id, commit.version);
                            break;
                        }
                    }
                }
            });
        }
    });
    let reads = reads.into_inner().unwrap();
    assert!(reads.len() >= 1200);
    assert_eq!(check_opacity_proxy(&reads, &stamps.into_inner().unwrap()), Ok(()));
}

#[test]
fn recorded_transactions_keep_their_events_together() {
    const QUEUE: StructureId = StructureId(0);
    let history = Arc::new(History::new());
    let stm = Stm::recording(paced(), history.clone());
    let queue = TxQueue::new();
    thread::scope(|s| {
        for t in 0..8u64 {
            let (stm, queue) = (&stm, &queue);
            s.spawn(move || {
                for i in 0..125u64 {
                    stm.atomically(|tx| {
                        for e in 0..10u64 {
                            let v = t << 32 | i << 8 | e;
                            queue.enq(tx, v)?;
                            tx.record(Event::new(QUEUE, Op::Enq(v)));
                        }
                        Ok(())
                    });
                }
            });
        }
    });
    history.set_final(QUEUE, Snapshot::Queue(queue.committed()));
    let committed = history.finish();
    assert_eq!(committed.event_count(), 10_000);
    for record in &committed.txs {
        let values: Vec<u64> = record
            .events
            .iter()
            .map(|e| match e.op {
                Op::Enq(v) => v,
                ref other => panic!("unexpected {other:?}"),
            })
            .collect();
        let first = values[0];
        assert_eq!(values, (first..first + 10).collect::<Vec<_>>());
    }
    assert!(check_structure_laws(&committed).is_empty());
    assert!(matches!(check_serializable(&committed), Verdict::Ok { .. }));
}

#[test]
fn concurrent_queue_hands_out_every_item_once() {
    let stm = Stm::new(paced());
    let queue = TxQueue::new();
    let taken = Mutex::new(Vec::new());
    thread::scope(|s| {
        for t in 0..2u64 {
            let (stm, queue) = (&stm, &queue);
            s.spawn(move || {
                for i in 0..500 {
                    stm.atomically(|tx| queue.enq(tx, t * 1000 + i));
                }
            });
        }
        for _ in 0..2 {
            let (stm, queue, taken) = (&stm, &queue, &taken);
            s.spawn(move || {
                let mut mine = Vec::new();
                for _ in 0..600 {
                    if let Some(v) = stm.atomically(|tx| tx.nested(|tx| queue.deq(tx))) {
                        mine.push(v);
                    }
                }
                taken.lock().unwrap().extend(mine);
            });
        }
    });
    let mut all = taken.into_inner().unwrap();
    all.extend(queue.committed());
    let unique: BTreeSet<u64> = all.iter().copied().collect();
    assert_eq!(all.len(), 1000);
    assert_eq!(unique.len(), 1000);
}

#[test]
fn stack_and_log_stay_consistent_across_threads() {
    let stm = Stm::new(paced());
    let stack = TxStack::new();
    let log = TxLog::new();
    thread::scope(|s| {
        for t in 0..4u64 {
            let (stm, stack, log) = (&stm, &stack, &log);
            s.spawn(move || {
                for i in 0..200 {
                    stm.atomically(|tx| {
                        stack.push(tx, t * 1000 + i)?;
                        let popped = tx.nested(|tx| stack.pop(tx))?;
                        log.append(tx, popped.unwrap())
                    });
                }
            });
        }
    });
    assert!(stack.committed().is_empty());
    let entries = log.committed();
    let unique: BTreeSet<u64> = entries.iter().copied().collect();
    assert_eq!(entries.len(), 800);
    assert_eq!(unique.len(), 800);
}
