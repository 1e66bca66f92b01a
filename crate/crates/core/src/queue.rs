//! Transactional FIFO queue.
//!
//! The queue is guarded by a single [`VersionedLock`]. Enqueues are buffered
//! locally and take the lock only at commit. A dequeue takes the lock
//! immediately, at the level that performs it, so a child's dequeue can be
//! undone by releasing just the child's lock.
//!
//! A dequeue never removes anything from shared or parent state before the
//! transaction (or child) commits. Instead it advances a cursor over the
//! tiers in FIFO order: shared items first, then items the parent enqueued,
//! then items the child enqueued.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::txcore::{Level, Nestable, ObjectId, Tx, TxCtx, TxResult, VersionedLock};

struct Shared<T> {
    lock: Arc<VersionedLock>,
    items: Mutex<VecDeque<T>>,
}

/// A transactional FIFO queue.
pub struct TxQueue<T> {
    id: ObjectId,
    shared: Arc<Shared<T>>,
}

impl<T> Clone for TxQueue<T> {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            shared: self.shared.clone(),
        }
    }
}

impl<T> fmt::Debug for TxQueue<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TxQueue")
            .field("id", &self.id)
            .field("lock", &self.shared.lock)
            .finish()
    }
}

impl<T: Clone + Send + 'static> Default for TxQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Clone + Send + 'static> TxQueue<T> {
    pub fn new() -> Self {
        Self::with_items(std::iter::empty())
    }

    /// A queue pre-filled outside any transaction, front first.
    pub fn with_items(items: impl IntoIterator<Item = T>) -> Self {
        Self {
            id: ObjectId::fresh(),
            shared: Arc::new(Shared {
                lock: Arc::new(VersionedLock::new()),
                items: Mutex::new(items.into_iter().collect()),
            }),
        }
    }

    pub fn id(&self) -> ObjectId {
        self.id
    }

    /// The lock guarding the whole queue.
    pub fn lock(&self) -> &VersionedLock {
        &self.shared.lock
    }

    fn local<'t>(&self, tx: &'t mut Tx) -> TxResult<(&'t mut QueueLocal<T>, &'t mut TxCtx)> {
        let shared = &self.shared;
        tx.object_state(self.id, || QueueLocal::new(shared.clone()))
    }

    pub fn enq(&self, tx: &mut Tx, item: T) -> TxResult<()> {
        let (local, ctx) = self.local(tx)?;
        match ctx.level() {
            Level::Parent => local.parent_items.push_back(item),
            Level::Child => local.child_items.push_back(item),
        }
        Ok(())
    }

    /// Removes the front item, or returns `None` if the queue as seen by this
    /// transaction is empty. Aborts the current level if another transaction
    /// holds the queue.
    pub fn deq(&self, tx: &mut Tx) -> TxResult<Option<T>> {
        let (local, ctx) = self.local(tx)?;
        if !ctx.try_lock(&local.shared.lock) {
            return Err(ctx.conflict());
        }
        Ok(match ctx.level() {
            Level::Parent => local.deq_parent(),
            Level::Child => local.deq_child(),
        })
    }

    /// Committed contents, front first, read outside any transaction.
    pub fn committed(&self) -> Vec<T> {
        self.shared.items.lock().iter().cloned().collect()
    }
}

struct QueueLocal<T> {
    shared: Arc<Shared<T>>,
    parent_items: VecDeque<T>,
    /// Shared items the parent has dequeued.
    shared_taken: usize,
    parent_dequeued: bool,
    child_items: VecDeque<T>,
    /// Shared items the child has dequeued, past `shared_taken`.
    child_shared_taken: usize,
    /// Parent-enqueued items the child has dequeued, from the front.
    child_parent_taken: usize,
    child_dequeued: bool,
}

impl<T: Clone + Send + 'static> QueueLocal<T> {
    fn new(shared: Arc<Shared<T>>) -> Self {
        Self {
            shared,
            parent_items: VecDeque::new(),
            shared_taken: 0,
            parent_dequeued: false,
            child_items: VecDeque::new(),
            child_shared_taken: 0,
            child_parent_taken: 0,
            child_dequeued: false,
        }
    }

    fn deq_parent(&mut self) -> Option<T> {
        self.parent_dequeued = true;
        let items = self.shared.items.lock();
        if let Some(item) = items.get(self.shared_taken) {
            self.shared_taken += 1;
            return Some(item.clone());
        }
        drop(items);
        self.parent_items.pop_front()
    }

    fn deq_child(&mut self) -> Option<T> {
        self.child_dequeued = true;
        let items = self.shared.items.lock();
        if let Some(item) = items.get(self.shared_taken + self.child_shared_taken) {
            self.child_shared_taken += 1;
            return Some(item.clone());
        }
        drop(items);
        if let Some(item) = self.parent_items.get(self.child_parent_taken) {
            self.child_parent_taken += 1;
            return Some(item.clone());
        }
        self.child_items.pop_front()
    }

    fn reset_child(&mut self) {
        self.child_items.clear();
        self.child_shared_taken = 0;
        self.child_parent_taken = 0;
        self.child_dequeued = false;
    }
}

impl<T: Clone + Send + 'static> Nestable for QueueLocal<T> {
    fn validate(&self, _ctx: &TxCtx, _level: Level) -> bool {
        // Every read of shared state happens under the queue lock.
        true
    }

    fn migrate(&mut self, _ctx: &TxCtx) {
        self.shared_taken += self.child_shared_taken;
        self.parent_items.drain(..self.child_parent_taken);
        self.parent_items.extend(self.child_items.drain(..));
        self.parent_dequeued |= self.child_dequeued;
        self.reset_child();
    }

    fn discard(&mut self, level: Level) {
        self.reset_child();
        if level == Level::Parent {
            self.parent_items.clear();
            self.shared_taken = 0;
            self.parent_dequeued = false;
        }
    }

    fn lock_write_set(&mut self, ctx: &mut TxCtx) -> bool {
        if self.has_writes() {
            ctx.try_lock(&self.shared.lock)
        } else {
            true
        }
    }

    fn has_writes(&self) -> bool {
        self.parent_dequeued || !self.parent_items.is_empty()
    }

    fn commit_apply(&mut self, _version: u64) {
        let mut items = self.shared.items.lock();
        items.drain(..self.shared_taken);
        items.extend(self.parent_items.drain(..));
        self.shared_taken = 0;
        self.parent_dequeued = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txcore::{Abort, ChildStatus, Owner, Stm};
    use proptest::prelude::*;

    #[test]
    fn enqueue_only_locks_at_commit() {
        let stm = Stm::default();
        let q = TxQueue::new();
        let mut tx = stm.begin().unwrap();
        q.enq(&mut tx, 1).unwrap();
        assert!(!q.lock().load().is_locked());
        assert_eq!(tx.stats().lock_acquisitions, 0);
        let c = tx.commit().unwrap();
        assert!(c.wrote);
        assert_eq!(q.lock().version(), c.version);
        assert_eq!(q.committed(), vec![1]);
    }

    #[test]
    fn tier_order_is_shared_parent_child() {
        let stm = Stm::default();
        let q = TxQueue::with_items([1, 2]);
        let mut tx = stm.begin().unwrap();
        q.enq(&mut tx, 3).unwrap();
        tx.n_begin().unwrap();
        q.enq(&mut tx, 4).unwrap();
        let got: Vec<_> = (0..5).map(|_| q.deq(&mut tx).unwrap()).collect();
        assert_eq!(got, vec![Some(1), Some(2), Some(3), Some(4), None]);
        assert_eq!(q.committed(), vec![1, 2]);
        assert_eq!(tx.n_commit().unwrap(), ChildStatus::Committed);
        tx.commit().unwrap();
        assert!(q.committed().is_empty());
    }

    #[test]
    fn child_abort_restores_parent_view() {
        let stm = Stm::default();
        let q = TxQueue::with_items([1]);
        let mut tx = stm.begin().unwrap();
        q.enq(&mut tx, 2).unwrap();
        tx.n_begin().unwrap();
        assert_eq!(q.deq(&mut tx).unwrap(), Some(1));
        assert_eq!(q.deq(&mut tx).unwrap(), Some(2));
        assert!(q.lock().owner().unwrap().is_child());
        assert_eq!(tx.n_abort().unwrap(), ChildStatus::Retry);
        assert!(!q.lock().load().is_locked());
        tx.n_commit().unwrap();
        assert_eq!(q.deq(&mut tx).unwrap(), Some(1));
        assert_eq!(q.deq(&mut tx).unwrap(), Some(2));
        assert_eq!(q.deq(&mut tx).unwrap(), None);
        tx.commit().unwrap();
        assert!(q.committed().is_empty());
    }

    #[test]
    fn child_commit_hands_lock_to_parent() {
        let stm = Stm::default();
        let q = TxQueue::with_items([7]);
        let mut tx = stm.begin().unwrap();
        tx.n_begin().unwrap();
        q.deq(&mut tx).unwrap();
        tx.n_commit().unwrap();
        let owner = q.lock().owner().unwrap();
        assert!(!owner.is_child());
        assert_eq!(tx.ctx().locks(Level::Parent).len(), 1);
        tx.commit().unwrap();
        assert!(!q.lock().load().is_locked());
    }

    #[test]
    fn foreign_holder_aborts_dequeuer() {
        let stm = Stm::default();
        let q = TxQueue::with_items([1]);
        let other = std::thread::spawn(Owner::current).join().unwrap();
        assert!(q.lock().try_acquire(other));
        let mut tx = stm.begin().unwrap();
        q.enq(&mut tx, 5).unwrap();
        assert_eq!(q.deq(&mut tx), Err(Abort::Parent));
        drop(tx);
        q.shared.lock.release(None);
        assert_eq!(q.committed(), vec![1]);
    }

    #[derive(Debug, Clone)]
    enum Step {
        Enq(u8),
        Deq,
        Child(Vec<(bool, u8)>, bool),
    }

    fn step() -> impl Strategy<Value = Step> {
        prop_oneof![
            any::<u8>().prop_map(Step::Enq),
            Just(Step::Deq),
            (prop::collection::vec((any::<bool>(), any::<u8>()), 0..6), any::<bool>())
                .prop_map(|(ops, commit)| Step::Child(ops, commit)),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn matches_sequential_queue(
            initial in prop::collection::vec(any::<u8>(), 0..5),
            txs in prop::collection::vec((prop::collection::vec(step(), 0..8), any::<bool>()), 1..5),
        ) {
            let stm = Stm::default();
            let q = TxQueue::with_items(initial.clone());
            let mut model: VecDeque<u8> = initial.into_iter().collect();
            for (steps, commit) in txs {
                let mut tx = stm.begin().unwrap();
                let mut tx_model = model.clone();
                for s in steps {
                    match s {
                        Step::Enq(v) => {
                            q.enq(&mut tx, v).unwrap();
                            tx_model.push_back(v);
                        }
                        Step::Deq => {
                            prop_assert_eq!(q.deq(&mut tx).unwrap(), tx_model.pop_front());
                        }
                        Step::Child(ops, child_commits) => {
                            tx.n_begin().unwrap();
                            let mut child_model = tx_model.clone();
                            for (is_enq, v) in ops {
                                if is_enq {
                                    q.enq(&mut tx, v).unwrap();
                                    child_model.push_back(v);
                                } else {
                                    prop_assert_eq!(q.deq(&mut tx).unwrap(), child_model.pop_front());
                                }
                            }
                            if child_commits {
                                prop_assert_eq!(tx.n_commit().unwrap(), ChildStatus::Committed);
                                tx_model = child_model;
                            } else {
                                prop_assert_eq!(tx.n_abort().unwrap(), ChildStatus::Retry);
                                prop_assert_eq!(tx.n_commit().unwrap(), ChildStatus::Committed);
                            }
                        }
                    }
                }
                if commit {
                    tx.commit().unwrap();
                    model = tx_model;
                } else {
                    tx.abort();
                }
                prop_assert!(!q.lock().load().is_locked());
                prop_assert_eq!(q.committed(), model.iter().copied().collect::<Vec<_>>());
            }
        }
    }
}
