//! Bounded transactional producer-consumer pool.
//!
//! The pool is a fixed array of slots, each with an atomic state
//! (free, locked or ready) changed only by compare-and-swap. A producer
//! claims a free slot and a consumer claims a ready one; the slot stays
//! locked until the transaction commits or aborts. There is no global lock
//! and nothing to validate, because slot claims are exclusive from the start.
//!
//! A consume that matches a produce of the same transaction cancels it: the
//! slot returns straight to free and never becomes visible to others.

use std::fmt;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::txcore::{Level, Nestable, ObjectId, Tx, TxCtx, TxResult};

pub const DEFAULT_PROBE_LIMIT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SlotState {
    Free = 0,
    Locked = 1,
    Ready = 2,
}

impl SlotState {
    fn from_u8(v: u8) -> Self {
        match v {
            0 => SlotState::Free,
            1 => SlotState::Locked,
            2 => SlotState::Ready,
            _ => unreachable!("invalid slot state {v}"),
        }
    }

    /// Whether `self -> to` is one of the transitions the pool may perform.
    pub fn can_become(self, to: SlotState) -> bool {
        matches!(
            (self, to),
            (SlotState::Free, SlotState::Locked)
                | (SlotState::Locked, SlotState::Ready)
                | (SlotState::Locked, SlotState::Free)
                | (SlotState::Ready, SlotState::Locked)
        )
    }
}

/// One observed slot state change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub slot: usize,
    pub from: SlotState,
    pub to: SlotState,
}

struct Slot<T> {
    state: AtomicU8,
    value: Mutex<Option<T>>,
}

struct Shared<T> {
    slots: Box<[Slot<T>]>,
    probe_limit: usize,
    transitions: Option<Mutex<Vec<Transition>>>,
}

impl<T> Shared<T> {
    fn state(&self, idx: usize) -> SlotState {
        SlotState::from_u8(self.slots[idx].state.load(Ordering::SeqCst))
    }

    fn change_state(&self, idx: usize, from: SlotState, to: SlotState) -> bool {
        let ok = self.slots[idx]
            .state
            .compare_exchange(from as u8, to as u8, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok();
        if ok {
            if let Some(log) = &self.transitions {
                log.lock().push(Transition { slot: idx, from, to });
            }
        }
        ok
    }

    /// Probes at most `probe_limit` slots from `start`, claiming the first
    /// one found in state `want`.
    fn claim(&self, start: usize, want: SlotState) -> Option<usize> {
        let k = self.slots.len();
        for p in 0..self.probe_limit {
            if p > 0 && p % k == 0 {
                std::thread::yield_now();
            }
            let idx = (start + p) % k;
            if self.state(idx) == want && self.change_state(idx, want, SlotState::Locked) {
                return Some(idx);
            }
        }
        None
    }

    /// Releases a locked slot back to free, dropping its value.
    fn free(&self, idx: usize) {
        self.slots[idx].value.lock().take();
        let ok = self.change_state(idx, SlotState::Locked, SlotState::Free);
        debug_assert!(ok, "slot {idx} was not locked");
    }

    fn make_ready(&self, idx: usize) {
        let ok = self.change_state(idx, SlotState::Locked, SlotState::Ready);
        debug_assert!(ok, "slot {idx} was not locked");
    }

    fn take(&self, idx: usize) -> T {
        self.slots[idx].value.lock().take().expect("claimed slot holds a value")
    }

    fn peek(&self, idx: usize) -> T
    where
        T: Clone,
    {
        self.slots[idx]
            .value
            .lock()
            .clone()
            .expect("claimed slot holds a value")
    }
}

/// A bounded transactional producer-consumer pool.
pub struct TxPool<T> {
    id: ObjectId,
    shared: Arc<Shared<T>>,
}

impl<T> Clone for TxPool<T> {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            shared: self.shared.clone(),
        }
    }
}

impl<T> fmt::Debug for TxPool<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TxPool")
            .field("id", &self.id)
            .field("capacity", &self.shared.slots.len())
            .finish()
    }
}

impl<T: Clone + Send + 'static> TxPool<T> {
    /// A pool of `capacity` free slots.
    pub fn new(capacity: usize) -> Self {
        Self::build(capacity, DEFAULT_PROBE_LIMIT, false)
    }

    /// A pool that gives up on finding a slot after `probe_limit` probes.
    pub fn with_probe_limit(capacity: usize, probe_limit: usize) -> Self {
        Self::build(capacity, probe_limit, false)
    }

    /// A pool that logs every slot state change, see [`TxPool::transitions`].
    pub fn logged(capacity: usize) -> Self {
        Self::build(capacity, DEFAULT_PROBE_LIMIT, true)
    }

    fn build(capacity: usize, probe_limit: usize, logged: bool) -> Self {
        assert!(capacity > 0, "pool needs at least one slot");
        assert!(probe_limit > 0, "probe limit must be positive");
        let slots = (0..capacity)
            .map(|_| Slot {
                state: AtomicU8::new(SlotState::Free as u8),
                value: Mutex::new(None),
            })
            .collect();
        Self {
            id: ObjectId::fresh(),
            shared: Arc::new(Shared {
                slots,
                probe_limit,
                transitions: logged.then(|| Mutex::new(Vec::new())),
            }),
        }
    }

    pub fn id(&self) -> ObjectId {
        self.id
    }

    pub fn capacity(&self) -> usize {
        self.shared.slots.len()
    }

    fn local<'t>(&self, tx: &'t mut Tx) -> TxResult<(&'t mut PoolLocal<T>, &'t mut TxCtx)> {
        let shared = &self.shared;
        tx.object_state(self.id, || PoolLocal::new(shared.clone()))
    }

    /// Places `value` in a free slot. Aborts the current level if no free
    /// slot turns up within the probe limit.
    pub fn produce(&self, tx: &mut Tx, value: T) -> TxResult<()> {
        match self.try_produce(tx, value)? {
            None => Ok(()),
            Some(_) => {
                let (_, ctx) = self.local(tx)?;
                Err(ctx.conflict())
            }
        }
    }

    /// Like [`TxPool::produce`], but hands `value` back instead of aborting
    /// when the pool is full.
    pub fn try_produce(&self, tx: &mut Tx, value: T) -> TxResult<Option<T>> {
        let (local, ctx) = self.local(tx)?;
        let Some(idx) = local.shared.claim(local.start(ctx), SlotState::Free) else {
            return Ok(Some(value));
        };
        *local.shared.slots[idx].value.lock() = Some(value);
        match ctx.level() {
            Level::Parent => local.parent_produced.push(idx),
            Level::Child => local.child_produced.push(idx),
        }
        Ok(None)
    }

    /// Takes a value. Aborts the current level if nothing is available
    /// within the probe limit.
    pub fn consume(&self, tx: &mut Tx) -> TxResult<T> {
        match self.try_consume(tx)? {
            Some(v) => Ok(v),
            None => {
                let (_, ctx) = self.local(tx)?;
                Err(ctx.conflict())
            }
        }
    }

    /// Like [`TxPool::consume`], but returns `None` when nothing is available.
    ///
    /// Values this transaction produced are taken first (cancelling the
    /// produce), then values from ready slots.
    pub fn try_consume(&self, tx: &mut Tx) -> TxResult<Option<T>> {
        let (local, ctx) = self.local(tx)?;
        Ok(match ctx.level() {
            Level::Parent => local.consume_parent(ctx),
            Level::Child => local.consume_child(ctx),
        })
    }

    pub fn slot_state(&self, idx: usize) -> SlotState {
        self.shared.state(idx)
    }

    /// Number of slots currently ready, read outside any transaction.
    pub fn ready_count(&self) -> usize {
        (0..self.capacity())
            .filter(|&i| self.shared.state(i) == SlotState::Ready)
            .count()
    }

    /// Values in ready slots, read outside any transaction. Only meaningful
    /// while no transaction is running.
    pub fn ready_values(&self) -> Vec<T> {
        (0..self.capacity())
            .filter(|&i| self.shared.state(i) == SlotState::Ready)
            .filter_map(|i| self.shared.slots[i].value.lock().clone())
            .collect()
    }

    /// Every state change so far, if the pool was built with [`TxPool::logged`].
    pub fn transitions(&self) -> Option<Vec<Transition>> {
        self.shared.transitions.as_ref().map(|t| t.lock().clone())
    }
}

struct PoolLocal<T> {
    shared: Arc<Shared<T>>,
    parent_produced: Vec<usize>,
    parent_consumed: Vec<usize>,
    child_produced: Vec<usize>,
    child_consumed: Vec<usize>,
    /// Parent-produced slots the child has consumed; freed on child commit.
    child_consumed_parent: Vec<usize>,
}

impl<T: Clone + Send + 'static> PoolLocal<T> {
    fn new(shared: Arc<Shared<T>>) -> Self {
        Self {
            shared,
            parent_produced: Vec::new(),
            parent_consumed: Vec::new(),
            child_produced: Vec::new(),
            child_consumed: Vec::new(),
            child_consumed_parent: Vec::new(),
        }
    }

    fn start(&self, ctx: &TxCtx) -> usize {
        let hash = ctx.id().0.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 32;
        hash as usize % self.shared.slots.len()
    }

    fn consume_parent(&mut self, ctx: &TxCtx) -> Option<T> {
        if let Some(idx) = self.parent_produced.pop() {
            let value = self.shared.take(idx);
            self.shared.free(idx);
            return Some(value);
        }
        let idx = self.shared.claim(self.start(ctx), SlotState::Ready)?;
        self.parent_consumed.push(idx);
        Some(self.shared.peek(idx))
    }

    fn consume_child(&mut self, ctx: &TxCtx) -> Option<T> {
        if let Some(idx) = self.child_produced.pop() {
            let value = self.shared.take(idx);
            self.shared.free(idx);
            return Some(value);
        }
        let claimed = self.child_consumed_parent.len();
        if let Some(i) = self.parent_produced.len().checked_sub(claimed + 1) {
            let idx = self.parent_produced[i];
            self.child_consumed_parent.push(idx);
            return Some(self.shared.peek(idx));
        }
        let idx = self.shared.claim(self.start(ctx), SlotState::Ready)?;
        self.child_consumed.push(idx);
        Some(self.shared.peek(idx))
    }

    fn revert_child(&mut self) {
        for idx in self.child_produced.drain(..) {
            self.shared.free(idx);
        }
        for idx in self.child_consumed.drain(..) {
            self.shared.make_ready(idx);
        }
        self.child_consumed_parent.clear();
    }
}

impl<T: Clone + Send + 'static> Nestable for PoolLocal<T> {
    fn validate(&self, _ctx: &TxCtx, _level: Level) -> bool {
        true
    }

    fn migrate(&mut self, _ctx: &TxCtx) {
        self.parent_consumed.append(&mut self.child_consumed);
        // Slots the child took from the parent are the newest ones.
        let keep = self.parent_produced.len() - self.child_consumed_parent.len();
        for idx in self.parent_produced.drain(keep..) {
            self.shared.free(idx);
        }
        self.child_consumed_parent.clear();
        self.parent_produced.append(&mut self.child_produced);
    }

    fn discard(&mut self, level: Level) {
        self.revert_child();
        if level == Level::Parent {
            for idx in self.parent_produced.drain(..) {
                self.shared.free(idx);
            }
            for idx in self.parent_consumed.drain(..) {
                self.shared.make_ready(idx);
            }
        }
    }

    fn has_writes(&self) -> bool {
        !self.parent_produced.is_empty() || !self.parent_consumed.is_empty()
    }

    fn commit_apply(&mut self, _version: u64) {
        for idx in self.parent_produced.drain(..) {
            self.shared.make_ready(idx);
        }
        for idx in self.parent_consumed.drain(..) {
            self.shared.free(idx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txcore::{Abort, ChildStatus, Stm};
    use std::sync::Barrier;

    fn assert_legal(pool: &TxPool<u64>) {
        for t in pool.transitions().unwrap() {
            assert!(t.from.can_become(t.to), "illegal transition {t:?}");
        }
    }

    fn local_sets(pool: &TxPool<u64>, tx: &mut Tx) -> [Vec<usize>; 5] {
        let (l, _) = pool.local(tx).unwrap();
        [
            l.parent_produced.clone(),
            l.parent_consumed.clone(),
            l.child_produced.clone(),
            l.child_consumed.clone(),
            l.child_consumed_parent.clone(),
        ]
    }

    #[test]
    fn produce_claims_slot_and_commit_makes_it_ready() {
        let stm = Stm::default();
        let pool = TxPool::logged(4);
        let mut tx = stm.begin().unwrap();
        pool.produce(&mut tx, 1).unwrap();
        let [pp, ..] = local_sets(&pool, &mut tx);
        assert_eq!(pool.slot_state(pp[0]), SlotState::Locked);
        tx.commit().unwrap();
        assert_eq!(pool.slot_state(pp[0]), SlotState::Ready);
        assert_eq!(pool.ready_values(), vec![1]);
        assert_legal(&pool);
    }

    #[test]
    fn cancellation_never_exposes_the_value() {
        let stm = Stm::default();
        let pool = TxPool::logged(4);
        let mut tx = stm.begin().unwrap();
        pool.produce(&mut tx, 9).unwrap();
        assert_eq!(pool.consume(&mut tx).unwrap(), 9);
        assert!(local_sets(&pool, &mut tx).iter().all(Vec::is_empty));
        tx.commit().unwrap();
        let t = pool.transitions().unwrap();
        assert!(t.iter().all(|t| t.to != SlotState::Ready));
        assert_eq!(pool.ready_count(), 0);
    }

    #[test]
    fn consume_commit_frees_and_abort_restores() {
        let stm = Stm::default();
        let pool = TxPool::logged(2);
        stm.atomically(|tx| pool.produce(tx, 5));
        let mut tx = stm.begin().unwrap();
        assert_eq!(pool.consume(&mut tx).unwrap(), 5);
        assert_eq!(pool.ready_count(), 0);
        tx.abort();
        assert_eq!(pool.ready_values(), vec![5]);
        assert_eq!(stm.atomically(|tx| pool.consume(tx)), 5);
        assert_eq!(pool.ready_count(), 0);
        assert!((0..2).all(|i| pool.slot_state(i) == SlotState::Free));
        assert_legal(&pool);
    }

    #[test]
    fn validate_always_succeeds() {
        let stm = Stm::default();
        let pool = TxPool::new(2);
        stm.atomically(|tx| pool.produce(tx, 1));
        let mut tx = stm.begin().unwrap();
        for step in 0..3 {
            match step {
                1 => pool.produce(&mut tx, 2).unwrap(),
                2 => drop(pool.consume(&mut tx).unwrap()),
                _ => {}
            }
            let (l, ctx) = pool.local(&mut tx).unwrap();
            assert!(l.validate(ctx, Level::Parent) && l.validate(ctx, Level::Child));
        }
    }

    #[test]
    fn child_tiers_and_migration() {
        let stm = Stm::default();
        let pool = TxPool::logged(8);
        stm.atomically(|tx| pool.produce(tx, 100));
        let mut tx = stm.begin().unwrap();
        pool.produce(&mut tx, 1).unwrap();
        let parent_slot = local_sets(&pool, &mut tx)[0][0];
        tx.n_begin().unwrap();
        pool.produce(&mut tx, 2).unwrap();
        assert_eq!(pool.consume(&mut tx).unwrap(), 2);
        assert_eq!(pool.consume(&mut tx).unwrap(), 1);
        assert_eq!(pool.slot_state(parent_slot), SlotState::Locked);
        assert_eq!(pool.consume(&mut tx).unwrap(), 100);
        assert_eq!(pool.try_consume(&mut tx).unwrap(), None);
        let sets = local_sets(&pool, &mut tx);
        assert_eq!(sets[4], vec![parent_slot]);
        assert_eq!(sets[3].len(), 1);
        assert_eq!(tx.n_commit().unwrap(), ChildStatus::Committed);
        let sets = local_sets(&pool, &mut tx);
        assert!(sets[0].is_empty());
        assert_eq!(sets[1].len(), 1);
        assert_eq!(pool.slot_state(parent_slot), SlotState::Free);
        tx.commit().unwrap();
        assert_eq!(pool.ready_count(), 0);
        assert_legal(&pool);
    }

    #[test]
    fn child_abort_reverts_only_child_claims() {
        let stm = Stm::default();
        let pool = TxPool::logged(8);
        stm.atomically(|tx| pool.produce(tx, 100));
        let mut tx = stm.begin().unwrap();
        pool.produce(&mut tx, 1).unwrap();
        tx.n_begin().unwrap();
        pool.produce(&mut tx, 2).unwrap();
        assert_eq!(pool.consume(&mut tx).unwrap(), 2);
        assert_eq!(pool.consume(&mut tx).unwrap(), 1);
        assert_eq!(pool.consume(&mut tx).unwrap(), 100);
        assert_eq!(tx.n_abort().unwrap(), ChildStatus::Retry);
        assert_eq!(pool.ready_values(), vec![100]);
        tx.n_commit().unwrap();
        tx.commit().unwrap();
        let mut ready = pool.ready_values();
        ready.sort();
        assert_eq!(ready, vec![1, 100]);
        assert_legal(&pool);
    }

    #[test]
    fn k_plus_one_produce_consume_pairs_commit() {
        let stm = Stm::default();
        let pool = TxPool::logged(4);
        let mut tx = stm.begin().unwrap();
        for v in 0..5 {
            pool.produce(&mut tx, v).unwrap();
            assert_eq!(pool.consume(&mut tx).unwrap(), v);
        }
        tx.commit().unwrap();
        assert_legal(&pool);
    }

    #[test]
    fn full_pool_aborts_after_probe_limit() {
        let stm = Stm::default();
        let pool = TxPool::with_probe_limit(2, 10);
        let mut tx = stm.begin().unwrap();
        pool.produce(&mut tx, 1).unwrap();
        pool.produce(&mut tx, 2).unwrap();
        assert_eq!(pool.try_produce(&mut tx, 3).unwrap(), Some(3));
        assert_eq!(pool.produce(&mut tx, 3), Err(Abort::Parent));
    }

    #[test]
    fn one_ready_slot_goes_to_exactly_one_consumer() {
        let stm = Stm::default();
        let pool = TxPool::new(4);
        stm.atomically(|tx| pool.produce(tx, 42));
        let barrier = Barrier::new(8);
        let got: Vec<Option<u64>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..8)
                .map(|_| {
                    s.spawn(|| {
                        barrier.wait();
                        let mut tx = stm.begin().unwrap();
                        let v = pool.try_consume(&mut tx).unwrap();
                        tx.commit().unwrap();
                        v
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert_eq!(got.iter().flatten().collect::<Vec<_>>(), vec![&42]);
    }

    #[test]
    fn racing_producers_claim_distinct_slots() {
        let stm = Stm::default();
        let pool = TxPool::with_probe_limit(1, 1);
        let barrier = Barrier::new(2);
        let wins: usize = std::thread::scope(|s| {
            let handles: Vec<_> = (0..2)
                .map(|i| {
                    let (pool, barrier, stm) = (&pool, &barrier, &stm);
                    s.spawn(move || {
                        let mut tx = stm.begin().unwrap();
                        barrier.wait();
                        let won = pool.try_produce(&mut tx, i).unwrap().is_none();
                        barrier.wait();
                        tx.commit().unwrap();
                        won as usize
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).sum()
        });
        assert_eq!(wins, 1);
        assert_eq!(pool.ready_count(), 1);
    }
}
