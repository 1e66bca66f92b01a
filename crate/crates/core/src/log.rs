//! Transactional append-only log.
//!
//! Appends are pessimistic: they take the log lock at the level that
//! performs them. Reads of the committed prefix need no lock because that
//! prefix never changes. A read past the committed end makes the
//! transaction sensitive to concurrent appends, and validation fails if the
//! log grew since the transaction first touched it.

use std::fmt;
use std::sync::Arc;

use parking_lot::RwLock;

use crate::txcore::{Level, Nestable, ObjectId, Tx, TxCtx, TxResult, VersionedLock};

struct Shared<T> {
    lock: Arc<VersionedLock>,
    entries: RwLock<Vec<T>>,
}

/// A transactional append-only log.
pub struct TxLog<T> {
    id: ObjectId,
    shared: Arc<Shared<T>>,
}

impl<T> Clone for TxLog<T> {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            shared: self.shared.clone(),
        }
    }
}

impl<T> fmt::Debug for TxLog<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TxLog")
            .field("id", &self.id)
            .field("len", &self.shared.entries.read().len())
            .finish()
    }
}

impl<T: Clone + Send + Sync + 'static> Default for TxLog<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Clone + Send + Sync + 'static> TxLog<T> {
    pub fn new() -> Self {
        Self::with_entries(Vec::new())
    }

    pub fn with_entries(entries: Vec<T>) -> Self {
        Self {
            id: ObjectId::fresh(),
            shared: Arc::new(Shared {
                lock: Arc::new(VersionedLock::new()),
                entries: RwLock::new(entries),
            }),
        }
    }

    pub fn id(&self) -> ObjectId {
        self.id
    }

    pub fn lock(&self) -> &VersionedLock {
        &self.shared.lock
    }

    fn local<'t>(&self, tx: &'t mut Tx) -> TxResult<(&'t mut LogLocal<T>, &'t mut TxCtx)> {
        let shared = &self.shared;
        let (local, ctx) = tx.object_state(self.id, || LogLocal::new(shared.clone()))?;
        if local.initial_len.is_none() {
            local.initial_len = Some(local.shared.entries.read().len());
        }
        Ok((local, ctx))
    }

    pub fn append(&self, tx: &mut Tx, entry: T) -> TxResult<()> {
        let (local, ctx) = self.local(tx)?;
        if !ctx.try_lock(&local.shared.lock) {
            return Err(ctx.conflict());
        }
        match ctx.level() {
            Level::Parent => local.parent_entries.push(entry),
            Level::Child => local.child_entries.push(entry),
        }
        Ok(())
    }

    /// Entry at `index` as seen by this transaction: the committed prefix,
    /// then the parent's appends, then the running child's.
    pub fn read(&self, tx: &mut Tx, index: usize) -> TxResult<Option<T>> {
        let (local, ctx) = self.local(tx)?;
        Ok(local.read(ctx.level(), index))
    }

    /// Committed length, read outside any transaction.
    pub fn committed_len(&self) -> usize {
        self.shared.entries.read().len()
    }

    /// Committed entries, read outside any transaction.
    pub fn committed(&self) -> Vec<T> {
        self.shared.entries.read().clone()
    }
}

struct LogLocal<T> {
    shared: Arc<Shared<T>>,
    initial_len: Option<usize>,
    parent_entries: Vec<T>,
    child_entries: Vec<T>,
    parent_read_past_end: bool,
    child_read_past_end: bool,
}

impl<T: Clone + Send + Sync + 'static> LogLocal<T> {
    fn new(shared: Arc<Shared<T>>) -> Self {
        Self {
            shared,
            initial_len: None,
            parent_entries: Vec::new(),
            child_entries: Vec::new(),
            parent_read_past_end: false,
            child_read_past_end: false,
        }
    }

    fn read(&mut self, level: Level, index: usize) -> Option<T> {
        let committed_len = {
            let entries = self.shared.entries.read();
            if let Some(e) = entries.get(index) {
                return Some(e.clone());
            }
            entries.len()
        };
        let local = index - committed_len;
        match level {
            Level::Parent => {
                self.parent_read_past_end = true;
                self.parent_entries.get(local).cloned()
            }
            Level::Child => {
                self.child_read_past_end = true;
                let parent_len = self.parent_entries.len();
                match local.checked_sub(parent_len) {
                    None => Some(self.parent_entries[local].clone()),
                    Some(i) => self.child_entries.get(i).cloned(),
                }
            }
        }
    }

    fn grew(&self) -> bool {
        self.initial_len
            .is_some_and(|n| self.shared.entries.read().len() > n)
    }
}

impl<T: Clone + Send + Sync + 'static> Nestable for LogLocal<T> {
    fn validate(&self, _ctx: &TxCtx, level: Level) -> bool {
        let read_past_end = match level {
            Level::Parent => self.parent_read_past_end,
            Level::Child => self.child_read_past_end,
        };
        !(read_past_end && self.grew())
    }

    fn migrate(&mut self, _ctx: &TxCtx) {
        self.parent_entries.append(&mut self.child_entries);
        self.parent_read_past_end |= self.child_read_past_end;
        self.child_read_past_end = false;
    }

    fn discard(&mut self, level: Level) {
        self.child_entries.clear();
        self.child_read_past_end = false;
        if level == Level::Parent {
            self.parent_entries.clear();
            self.parent_read_past_end = false;
            self.initial_len = None;
        }
    }

    fn lock_write_set(&mut self, ctx: &mut TxCtx) -> bool {
        self.parent_entries.is_empty() || ctx.try_lock(&self.shared.lock)
    }

    fn has_writes(&self) -> bool {
        !self.parent_entries.is_empty()
    }

    fn commit_apply(&mut self, _version: u64) {
        self.shared.entries.write().append(&mut self.parent_entries);
    }
}
