//! Transactional LIFO stack.
//!
//! Same locking discipline as [`crate::TxQueue`]: pushes are buffered and
//! lock at commit, pops lock immediately at the current level. A pop reads
//! the tiers top down (child pushes, then parent pushes, then shared items)
//! and only moves a cursor, so nothing is removed before commit.

use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::txcore::{Level, Nestable, ObjectId, Tx, TxCtx, TxResult, VersionedLock};

struct Shared<T> {
    lock: Arc<VersionedLock>,
    items: Mutex<Vec<T>>,
}

/// A transactional LIFO stack.
pub struct TxStack<T> {
    id: ObjectId,
    shared: Arc<Shared<T>>,
}

impl<T> Clone for TxStack<T> {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            shared: self.shared.clone(),
        }
    }
}

impl<T> fmt::Debug for TxStack<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TxStack")
            .field("id", &self.id)
            .field("lock", &self.shared.lock)
            .finish()
    }
}

impl<T: Clone + Send + 'static> Default for TxStack<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Clone + Send + 'static> TxStack<T> {
    pub fn new() -> Self {
        Self::with_items(std::iter::empty())
    }

    /// A stack pre-filled outside any transaction, bottom first.
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

    pub fn lock(&self) -> &VersionedLock {
        &self.shared.lock
    }

    fn local<'t>(&self, tx: &'t mut Tx) -> TxResult<(&'t mut StackLocal<T>, &'t mut TxCtx)> {
        let shared = &self.shared;
        tx.object_state(self.id, || StackLocal::new(shared.clone()))
    }

    pub fn push(&self, tx: &mut Tx, item: T) -> TxResult<()> {
        let (local, ctx) = self.local(tx)?;
        match ctx.level() {
            Level::Parent => local.parent_items.push(item),
            Level::Child => local.child_items.push(item),
        }
        Ok(())
    }

    /// Removes the top item, or returns `None` if the stack as seen by this
    /// transaction is empty.
    pub fn pop(&self, tx: &mut Tx) -> TxResult<Option<T>> {
        let (local, ctx) = self.local(tx)?;
        if !ctx.try_lock(&local.shared.lock) {
            return Err(ctx.conflict());
        }
        Ok(match ctx.level() {
            Level::Parent => local.pop_parent(),
            Level::Child => local.pop_child(),
        })
    }

    /// Committed contents, bottom first, read outside any transaction.
    pub fn committed(&self) -> Vec<T> {
        self.shared.items.lock().clone()
    }
}

struct StackLocal<T> {
    shared: Arc<Shared<T>>,
    parent_items: Vec<T>,
    /// Shared items the parent has popped, counted from the top.
    shared_taken: usize,
    parent_popped: bool,
    child_items: Vec<T>,
    child_shared_taken: usize,
    /// Parent-pushed items the child has popped, counted from the top.
    child_parent_taken: usize,
    child_popped: bool,
}

impl<T: Clone + Send + 'static> StackLocal<T> {
    fn new(shared: Arc<Shared<T>>) -> Self {
        Self {
            shared,
            parent_items: Vec::new(),
            shared_taken: 0,
            parent_popped: false,
            child_items: Vec::new(),
            child_shared_taken: 0,
            child_parent_taken: 0,
            child_popped: false,
        }
    }

    fn shared_from_top(&self, depth: usize) -> Option<T> {
        let items = self.shared.items.lock();
        items.len().checked_sub(depth + 1).map(|i| items[i].clone())
    }

    fn pop_parent(&mut self) -> Option<T> {
        self.parent_popped = true;
        if let Some(item) = self.parent_items.pop() {
            return Some(item);
        }
        let item = self.shared_from_top(self.shared_taken)?;
        self.shared_taken += 1;
        Some(item)
    }

    fn pop_child(&mut self) -> Option<T> {
        self.child_popped = true;
        if let Some(item) = self.child_items.pop() {
            return Some(item);
        }
        if let Some(i) = self.parent_items.len().checked_sub(self.child_parent_taken + 1) {
            self.child_parent_taken += 1;
            return Some(self.parent_items[i].clone());
        }
        let item = self.shared_from_top(self.shared_taken + self.child_shared_taken)?;
        self.child_shared_taken += 1;
        Some(item)
    }

    fn reset_child(&mut self) {
        self.child_items.clear();
        self.child_shared_taken = 0;
        self.child_parent_taken = 0;
        self.child_popped = false;
    }
}

impl<T: Clone + Send + 'static> Nestable for StackLocal<T> {
    fn validate(&self, _ctx: &TxCtx, _level: Level) -> bool {
        // Every read of shared state happens under the stack lock.
        true
    }

    fn migrate(&mut self, _ctx: &TxCtx) {
        self.shared_taken += self.child_shared_taken;
        let keep = self.parent_items.len() - self.child_parent_taken;
        self.parent_items.truncate(keep);
        self.parent_items.append(&mut self.child_items);
        self.parent_popped |= self.child_popped;
        self.reset_child();
    }

    fn discard(&mut self, level: Level) {
        self.reset_child();
        if level == Level::Parent {
            self.parent_items.clear();
            self.shared_taken = 0;
            self.parent_popped = false;
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
        self.parent_popped || !self.parent_items.is_empty()
    }

    fn commit_apply(&mut self, _version: u64) {
        let mut items = self.shared.items.lock();
        let keep = items.len() - self.shared_taken;
        items.truncate(keep);
        items.append(&mut self.parent_items);
        self.shared_taken = 0;
        self.parent_popped = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txcore::{ChildStatus, Stm};
    use proptest::prelude::*;

    #[test]
    fn push_only_transaction_locks_once_at_commit() {
        let stm = Stm::default();
        let s = TxStack::new();
        let mut tx = stm.begin().unwrap();
        for i in 0..10 {
            s.push(&mut tx, i).unwrap();
        }
        assert_eq!(tx.stats().lock_acquisitions, 0);
        assert!(!s.lock().load().is_locked());
        tx.commit().unwrap();
        assert_eq!(s.committed(), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn pops_read_child_then_parent_then_shared() {
        let stm = Stm::default();
        let s = TxStack::with_items([1, 2]);
        let mut tx = stm.begin().unwrap();
        s.push(&mut tx, 3).unwrap();
        tx.n_begin().unwrap();
        s.push(&mut tx, 4).unwrap();
        let got: Vec<_> = (0..5).map(|_| s.pop(&mut tx).unwrap()).collect();
        assert_eq!(got, vec![Some(4), Some(3), Some(2), Some(1), None]);
        s.push(&mut tx, 9).unwrap();
        tx.n_commit().unwrap();
        tx.commit().unwrap();
        assert_eq!(s.committed(), vec![9]);
    }

    #[test]
    fn aborted_child_pops_are_undone() {
        let stm = Stm::default();
        let s = TxStack::with_items([1]);
        let mut tx = stm.begin().unwrap();
        s.push(&mut tx, 2).unwrap();
        tx.n_begin().unwrap();
        s.pop(&mut tx).unwrap();
        s.pop(&mut tx).unwrap();
        assert_eq!(tx.n_abort().unwrap(), ChildStatus::Retry);
        tx.n_commit().unwrap();
        tx.commit().unwrap();
        assert_eq!(s.committed(), vec![1, 2]);
    }

    #[derive(Debug, Clone)]
    enum Step {
        Push(u8),
        Pop,
        Child(Vec<Option<u8>>, bool),
    }

    fn step() -> impl Strategy<Value = Step> {
        prop_oneof![
            any::<u8>().prop_map(Step::Push),
            Just(Step::Pop),
            (prop::collection::vec(any::<Option<u8>>(), 0..6), any::<bool>())
                .prop_map(|(ops, commit)| Step::Child(ops, commit)),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn matches_sequential_stack(
            initial in prop::collection::vec(any::<u8>(), 0..5),
            txs in prop::collection::vec((prop::collection::vec(step(), 0..8), any::<bool>()), 1..5),
        ) {
            let stm = Stm::default();
            let s = TxStack::with_items(initial.clone());
            let mut model = initial;
            for (steps, commit) in txs {
                let mut tx = stm.begin().unwrap();
                let mut tx_model = model.clone();
                for st in steps {
                    match st {
                        Step::Push(v) => {
                            s.push(&mut tx, v).unwrap();
                            tx_model.push(v);
                        }
                        Step::Pop => prop_assert_eq!(s.pop(&mut tx).unwrap(), tx_model.pop()),
                        Step::Child(ops, child_commits) => {
                            tx.n_begin().unwrap();
                            let mut child_model = tx_model.clone();
                            for op in ops {
                                match op {
                                    Some(v) => {
                                        s.push(&mut tx, v).unwrap();
                                        child_model.push(v);
                                    }
                                    None => prop_assert_eq!(s.pop(&mut tx).unwrap(), child_model.pop()),
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
                prop_assert!(!s.lock().load().is_locked());
                prop_assert_eq!(s.committed(), model.clone());
            }
        }
    }
}
