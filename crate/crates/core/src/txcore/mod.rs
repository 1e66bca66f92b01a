//! Transaction lifecycle and closed nesting.
//!
//! A [`Tx`] runs at parent level until [`Tx::nested`] (or the low-level
//! [`Tx::n_begin`]) opens a child. The child shares the parent's snapshot and
//! keeps its own local state inside every object it touches. A child commit
//! validates the child's reads without locking anything and migrates its
//! state and locks to the parent; a child abort refreshes the snapshot,
//! revalidates the parent and restarts only the child, up to
//! [`Config::child_retry_limit`] times.

mod clock;
mod lock;

pub use clock::GlobalVersionClock;
pub use lock::{LockWord, Owner, VersionedLock, MAX_VERSION};

use std::any::Any;
use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::marker::PhantomData;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::checker::{Event, History, OrderKey, TxRecord};

/// Control-flow outcome of a conflicting operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Abort {
    /// Only the running child must be rolled back and retried.
    #[error("child transaction aborted")]
    Child,
    /// The whole transaction must be rolled back and re-executed.
    #[error("transaction aborted")]
    Parent,
}

pub type TxResult<T> = Result<T, Abort>;

/// Misuse of the transaction API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum UsageError {
    #[error("a transaction is already active on this thread")]
    ThreadBusy,
    #[error("nesting is limited to a single level")]
    AlreadyNested,
    #[error("no child transaction is active")]
    NotNested,
    #[error("the transaction is no longer active")]
    Inactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Parent,
    Child,
}

/// Result of ending a child transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChildStatus {
    /// The child's effects now belong to the parent.
    Committed,
    /// The child was rolled back and must be re-executed; the descriptor is
    /// already at child level with empty child state.
    Retry,
    /// The parent was aborted as well; all locks are released.
    ParentAborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Active,
    Committed,
    Aborted,
}

/// Pause between retries of an aborted transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backoff {
    #[default]
    None,
    /// Spin, then yield, then sleep, doubling on each retry of the same
    /// transaction. Sleeping lets a preempted lock holder run when threads
    /// outnumber cores.
    Exponential,
}

/// Retry pacing for one attempt loop, for callers that drive
/// [`Stm::begin`] and [`Tx::commit`] by hand.
#[derive(Debug)]
pub struct Pacer {
    policy: Backoff,
    spin: crossbeam_utils::Backoff,
    pauses: u32,
}

impl Pacer {
    pub fn new(policy: Backoff) -> Self {
        Self {
            policy,
            spin: crossbeam_utils::Backoff::new(),
            pauses: 0,
        }
    }

    /// Waits before the next attempt.
    pub fn pause(&mut self) {
        if self.policy == Backoff::None {
            return;
        }
        if self.pauses < BACKOFF_SNOOZES {
            self.spin.snooze();
        } else {
            let doublings = (self.pauses - BACKOFF_SNOOZES).min(6);
            std::thread::sleep(BACKOFF_SLEEP * (1 << doublings));
        }
        self.pauses += 1;
    }
}

/// Retries that spin or yield before [`Backoff::Exponential`] starts sleeping.
const BACKOFF_SNOOZES: u32 = 3;
/// First sleep of [`Backoff::Exponential`]; later sleeps double.
const BACKOFF_SLEEP: std::time::Duration = std::time::Duration::from_micros(20);

#[derive(Debug, Clone)]
pub struct Config {
    /// How many times a child is restarted before the parent gives up.
    pub child_retry_limit: u32,
    pub child_backoff: Backoff,
    /// Pause before [`Stm::run`] restarts an aborted parent.
    pub parent_backoff: Backoff,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            child_retry_limit: 10,
            child_backoff: Backoff::None,
            parent_backoff: Backoff::None,
        }
    }
}

/// Unique id of a transactional object instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId(u64);

impl ObjectId {
    pub fn fresh() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        ObjectId(NEXT.fetch_add(1, Ordering::Relaxed))
    }
}

/// Unique id of a transaction descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxId(pub u64);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Contract every nestable data structure implements for its per-transaction
/// local state.
///
/// `validate` and `migrate` are driven by child commits and aborts; the
/// remaining hooks by the parent commit. `commit_apply` is only called while
/// every lock taken in `lock_write_set` (or during the transaction) is held.
pub trait Nestable: Any {
    /// Checks the read-set recorded at `level` against shared state.
    fn validate(&self, ctx: &TxCtx, level: Level) -> bool;

    /// Moves child-local state into parent-local state. Never touches shared state.
    fn migrate(&mut self, ctx: &TxCtx);

    /// Drops local state. `Level::Child` discards the child's part only;
    /// `Level::Parent` rolls back everything the transaction did.
    fn discard(&mut self, level: Level);

    /// Acquires commit-time locks. Returning false aborts the transaction.
    fn lock_write_set(&mut self, _ctx: &mut TxCtx) -> bool {
        true
    }

    /// Whether committing publishes anything to shared state.
    fn has_writes(&self) -> bool;

    /// Publishes parent-local state; `version` is the commit stamp.
    fn commit_apply(&mut self, version: u64);
}

/// Per-transaction counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TxStats {
    pub child_aborts: u64,
    pub child_retries: u64,
    pub lock_acquisitions: u64,
}

impl TxStats {
    pub fn absorb(&mut self, other: TxStats) {
        self.child_aborts += other.child_aborts;
        self.child_retries += other.child_retries;
        self.lock_acquisitions += other.lock_acquisitions;
    }
}

/// Counters of a whole retry loop (see [`Stm::run`]).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunCounters {
    pub parent_aborts: u64,
    pub tx: TxStats,
}

/// Information about a successful commit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Commit {
    pub tx_id: TxId,
    /// Write stamp for writers, the clock value sampled before validation otherwise.
    pub version: u64,
    pub wrote: bool,
}

impl Commit {
    /// Serialization key: writers sit at their stamp, read-only commits
    /// right after every writer with a stamp at or below their sample.
    pub fn order(&self) -> OrderKey {
        OrderKey::new(self.version, !self.wrote)
    }
}

struct StmInner {
    clock: GlobalVersionClock,
    config: Config,
    history: Option<Arc<History>>,
}

/// Shared transaction domain: the version clock plus configuration.
///
/// All transactions touching the same data structures must come from the
/// same `Stm`.
#[derive(Clone)]
pub struct Stm {
    inner: Arc<StmInner>,
}

impl Default for Stm {
    fn default() -> Self {
        Self::new(Config::default())
    }
}

impl fmt::Debug for Stm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stm")
            .field("clock", &self.inner.clock.now())
            .field("config", &self.inner.config)
            .finish()
    }
}

thread_local! {
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
}

impl Stm {
    pub fn new(config: Config) -> Self {
        Self::build(config, GlobalVersionClock::new(), None)
    }

    /// A domain whose clock starts at `version`.
    pub fn with_clock(config: Config, version: u64) -> Self {
        Self::build(config, GlobalVersionClock::starting_at(version), None)
    }

    /// A domain recording committed transactions into `history`.
    pub fn recording(config: Config, history: Arc<History>) -> Self {
        Self::build(config, GlobalVersionClock::new(), Some(history))
    }

    fn build(config: Config, clock: GlobalVersionClock, history: Option<Arc<History>>) -> Self {
        assert!(config.child_retry_limit > 0, "child retry limit must be positive");
        Self {
            inner: Arc::new(StmInner {
                clock,
                config,
                history,
            }),
        }
    }

    pub fn clock(&self) -> &GlobalVersionClock {
        &self.inner.clock
    }

    pub fn config(&self) -> &Config {
        &self.inner.config
    }

    pub fn history(&self) -> Option<&Arc<History>> {
        self.inner.history.as_ref()
    }

    /// Starts a parent transaction on the calling thread.
    pub fn begin(&self) -> Result<Tx, UsageError> {
        if ACTIVE.with(|a| a.replace(true)) {
            return Err(UsageError::ThreadBusy);
        }
        static NEXT_TX: AtomicU64 = AtomicU64::new(1);
        Ok(Tx {
            ctx: TxCtx {
                id: TxId(NEXT_TX.fetch_add(1, Ordering::Relaxed)),
                owner: Owner::current(),
                vc: self.inner.clock.now(),
                level: Level::Parent,
                parent_locks: Vec::new(),
                child_locks: Vec::new(),
                parent_doomed: false,
                child_doomed: false,
                stats: TxStats::default(),
            },
            objects: Vec::new(),
            index: HashMap::new(),
            status: Status::Active,
            child_retries: 0,
            events: Vec::new(),
            child_mark: 0,
            stm: self.clone(),
            _thread_affine: PhantomData,
        })
    }

    /// Runs `body` until it commits and returns its result.
    pub fn atomically<T>(&self, body: impl FnMut(&mut Tx) -> TxResult<T>) -> T {
        self.run(body).0
    }

    /// Like [`Stm::atomically`], also returning the abort counters of the loop.
    pub fn run<T>(&self, mut body: impl FnMut(&mut Tx) -> TxResult<T>) -> (T, RunCounters) {
        let mut counters = RunCounters::default();
        let mut pacer = Pacer::new(self.inner.config.parent_backoff);
        loop {
            let mut tx = self.begin().expect("transactions do not nest across Stm::run");
            let result = body(&mut tx);
            counters.tx.absorb(tx.stats());
            if let Ok(value) = result {
                if tx.commit().is_ok() {
                    return (value, counters);
                }
            } else {
                tx.abort();
            }
            counters.parent_aborts += 1;
            pacer.pause();
        }
    }
}

/// Transaction state shared with data-structure code: identity, snapshot,
/// level and the per-level lock sets.
pub struct TxCtx {
    id: TxId,
    owner: Owner,
    vc: u64,
    level: Level,
    parent_locks: Vec<Arc<VersionedLock>>,
    child_locks: Vec<Arc<VersionedLock>>,
    parent_doomed: bool,
    child_doomed: bool,
    stats: TxStats,
}

impl TxCtx {
    pub fn id(&self) -> TxId {
        self.id
    }

    pub fn owner(&self) -> Owner {
        self.owner
    }

    /// The snapshot all reads must be consistent with.
    pub fn vc(&self) -> u64 {
        self.vc
    }

    pub fn level(&self) -> Level {
        self.level
    }

    /// Records a conflict at the current level and returns the abort the
    /// operation should propagate.
    pub fn conflict(&mut self) -> Abort {
        match self.level {
            Level::Parent => {
                self.parent_doomed = true;
                Abort::Parent
            }
            Level::Child => {
                self.child_doomed = true;
                Abort::Child
            }
        }
    }

    /// True if the word may be read at this snapshot: not held by another
    /// transaction and not newer than `vc`.
    pub fn readable(&self, word: LockWord) -> bool {
        !word.locked_by_other(self.owner) && word.version() <= self.vc
    }

    /// Pessimistic lock acquisition at the current level.
    ///
    /// At child level a lock already held by the parent is left with the
    /// parent, and a newly acquired one is attributed to the child so a child
    /// abort can release it alone. Returns false if another transaction owns it.
    pub fn try_lock(&mut self, lock: &Arc<VersionedLock>) -> bool {
        let parent = self.owner.as_parent();
        let child = self.owner.as_child();
        match lock.owner() {
            Some(o) if o == parent => true,
            Some(o) if o == child => {
                debug_assert_eq!(self.level, Level::Child);
                true
            }
            Some(_) => false,
            None => {
                let (me, set) = match self.level {
                    Level::Parent => (parent, &mut self.parent_locks),
                    Level::Child => (child, &mut self.child_locks),
                };
                if lock.try_acquire(me) {
                    set.push(lock.clone());
                    self.stats.lock_acquisitions += 1;
                    true
                } else {
                    false
                }
            }
        }
    }

    /// Whether this transaction holds `lock` at either level.
    pub fn holds(&self, lock: &VersionedLock) -> bool {
        lock.owner().is_some_and(|o| o.same_tx(self.owner))
    }

    pub fn locks(&self, level: Level) -> &[Arc<VersionedLock>] {
        match level {
            Level::Parent => &self.parent_locks,
            Level::Child => &self.child_locks,
        }
    }
}

struct Registered {
    id: ObjectId,
    state: Box<dyn Nestable>,
    in_parent: bool,
    in_child: bool,
}

/// A transaction descriptor. Thread-affine: it cannot leave the thread that
/// began it. Dropping an active descriptor aborts it.
pub struct Tx {
    ctx: TxCtx,
    objects: Vec<Registered>,
    index: HashMap<ObjectId, usize>,
    status: Status,
    child_retries: u32,
    events: Vec<Event>,
    child_mark: usize,
    stm: Stm,
    _thread_affine: PhantomData<*const ()>,
}

impl fmt::Debug for Tx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tx")
            .field("id", &self.ctx.id)
            .field("vc", &self.ctx.vc)
            .field("level", &self.ctx.level)
            .field("status", &self.status)
            .field("objects", &self.objects.len())
            .finish()
    }
}

impl Tx {
    pub fn id(&self) -> TxId {
        self.ctx.id
    }

    pub fn vc(&self) -> u64 {
        self.ctx.vc
    }

    pub fn level(&self) -> Level {
        self.ctx.level
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn ctx(&self) -> &TxCtx {
        &self.ctx
    }

    pub fn stats(&self) -> TxStats {
        self.ctx.stats
    }

    pub fn child_retry_count(&self) -> u32 {
        self.child_retries
    }

    /// Objects registered at `level`.
    pub fn registered(&self, level: Level) -> Vec<ObjectId> {
        self.objects
            .iter()
            .filter(|r| match level {
                Level::Parent => r.in_parent,
                Level::Child => r.in_child,
            })
            .map(|r| r.id)
            .collect()
    }

    /// Registers object `id` at the current level (creating its local state
    /// with `init` on first access) and returns that state together with the
    /// transaction context.
    ///
    /// Fails with the pending abort if the current level already conflicted.
    pub fn object_state<L: Nestable>(
        &mut self,
        id: ObjectId,
        init: impl FnOnce() -> L,
    ) -> TxResult<(&mut L, &mut TxCtx)> {
        self.check_alive()?;
        let idx = match self.index.get(&id) {
            Some(&idx) => idx,
            None => {
                self.objects.push(Registered {
                    id,
                    state: Box::new(init()),
                    in_parent: false,
                    in_child: false,
                });
                self.index.insert(id, self.objects.len() - 1);
                self.objects.len() - 1
            }
        };
        let reg = &mut self.objects[idx];
        match self.ctx.level {
            Level::Parent => reg.in_parent = true,
            Level::Child => reg.in_child = true,
        }
        let state: &mut dyn Any = reg.state.as_mut();
        let state = state
            .downcast_mut::<L>()
            .expect("object id registered with a different state type");
        Ok((state, &mut self.ctx))
    }

    fn check_alive(&self) -> TxResult<()> {
        if self.status != Status::Active || self.ctx.parent_doomed {
            return Err(Abort::Parent);
        }
        if self.ctx.level == Level::Child && self.ctx.child_doomed {
            return Err(Abort::Child);
        }
        Ok(())
    }

    /// Acquires `lock` at the current level (see [`TxCtx::try_lock`]).
    pub fn try_lock(&mut self, lock: &Arc<VersionedLock>) -> TxResult<()> {
        self.check_alive()?;
        if self.ctx.try_lock(lock) {
            Ok(())
        } else {
            Err(self.ctx.conflict())
        }
    }

    /// Whether committed transactions are being recorded.
    pub fn recording(&self) -> bool {
        self.stm.inner.history.is_some()
    }

    /// Appends an event to this transaction's record. Events of a rolled
    /// back child are dropped with it.
    pub fn record(&mut self, event: Event) {
        if self.recording() {
            self.events.push(event);
        }
    }

    /// Opens a child transaction.
    pub fn n_begin(&mut self) -> Result<(), UsageError> {
        if self.status != Status::Active {
            return Err(UsageError::Inactive);
        }
        if self.ctx.level == Level::Child {
            return Err(UsageError::AlreadyNested);
        }
        self.ctx.level = Level::Child;
        self.ctx.child_doomed = false;
        self.child_retries = 0;
        self.child_mark = self.events.len();
        debug_assert!(self.ctx.child_locks.is_empty());
        Ok(())
    }

    /// Validates the child's reads at the shared snapshot (without locking)
    /// and, on success, migrates its state and locks into the parent.
    /// On failure the child is aborted as by [`Tx::n_abort`].
    pub fn n_commit(&mut self) -> Result<ChildStatus, UsageError> {
        if self.status != Status::Active {
            return Err(UsageError::Inactive);
        }
        if self.ctx.level != Level::Child {
            return Err(UsageError::NotNested);
        }
        let valid = !self.ctx.child_doomed
            && self
                .objects
                .iter()
                .filter(|r| r.in_child)
                .all(|r| r.state.validate(&self.ctx, Level::Child));
        if !valid {
            return self.n_abort();
        }
        for reg in self.objects.iter_mut().filter(|r| r.in_child) {
            reg.state.migrate(&self.ctx);
            reg.in_child = false;
            reg.in_parent = true;
        }
        let (child, parent) = (self.ctx.owner.as_child(), self.ctx.owner.as_parent());
        for lock in self.ctx.child_locks.drain(..) {
            let moved = lock.transfer(child, parent);
            assert!(moved, "child lost a lock it held");
            self.ctx.parent_locks.push(lock);
        }
        self.ctx.level = Level::Parent;
        Ok(ChildStatus::Committed)
    }

    /// Rolls back the child, refreshes the snapshot and revalidates the
    /// parent. Restarts the child unless the parent no longer validates or
    /// the retry limit is exhausted, in which case the whole transaction aborts.
    pub fn n_abort(&mut self) -> Result<ChildStatus, UsageError> {
        if self.status != Status::Active {
            return Err(UsageError::Inactive);
        }
        if self.ctx.level != Level::Child {
            return Err(UsageError::NotNested);
        }
        for lock in self.ctx.child_locks.drain(..) {
            lock.release(None);
        }
        for reg in self.objects.iter_mut().filter(|r| r.in_child) {
            reg.state.discard(Level::Child);
            reg.in_child = false;
        }
        self.events.truncate(self.child_mark);
        self.ctx.stats.child_aborts += 1;

        self.ctx.vc = self.stm.inner.clock.now();
        let parent_valid = self
            .objects
            .iter()
            .filter(|r| r.in_parent)
            .all(|r| r.state.validate(&self.ctx, Level::Parent));
        if !parent_valid || self.child_retries >= self.stm.inner.config.child_retry_limit {
            self.abort_all();
            return Ok(ChildStatus::ParentAborted);
        }
        self.child_retries += 1;
        self.ctx.stats.child_retries += 1;
        self.ctx.child_doomed = false;
        Ok(ChildStatus::Retry)
    }

    /// Runs `body` as a child transaction, restarting it after child aborts.
    ///
    /// # Panics
    ///
    /// If called from inside another child.
    pub fn nested<T>(&mut self, mut body: impl FnMut(&mut Tx) -> TxResult<T>) -> TxResult<T> {
        self.check_alive()?;
        if let Err(e) = self.n_begin() {
            panic!("{e}");
        }
        let mut pacer = Pacer::new(self.stm.inner.config.child_backoff);
        loop {
            let status = match body(self) {
                Ok(value) => match self.n_commit() {
                    Ok(ChildStatus::Committed) => return Ok(value),
                    Ok(status) => status,
                    Err(_) => return Err(Abort::Parent),
                },
                Err(Abort::Child) => self.n_abort().unwrap_or(ChildStatus::ParentAborted),
                Err(Abort::Parent) => {
                    self.abort_all();
                    ChildStatus::ParentAborted
                }
            };
            match status {
                ChildStatus::Retry => pacer.pause(),
                _ => return Err(Abort::Parent),
            }
        }
    }

    /// Commits the transaction: locks write-sets, stamps a new version if
    /// anything is written, validates every read-set and publishes.
    ///
    /// # Panics
    ///
    /// If a child transaction is still open.
    pub fn commit(mut self) -> Result<Commit, Abort> {
        assert_eq!(self.ctx.level, Level::Parent, "commit with an open child transaction");
        if self.status != Status::Active || self.ctx.parent_doomed {
            self.abort_all();
            return Err(Abort::Parent);
        }
        let ctx = &mut self.ctx;
        let locked = self
            .objects
            .iter_mut()
            .filter(|r| r.in_parent)
            .all(|r| r.state.lock_write_set(ctx));
        if !locked {
            self.abort_all();
            return Err(Abort::Parent);
        }
        let wrote = self.objects.iter().any(|r| r.in_parent && r.state.has_writes());
        let clock = &self.stm.inner.clock;
        let version = if wrote { clock.tick() } else { clock.now() };
        let valid = self
            .objects
            .iter()
            .filter(|r| r.in_parent)
            .all(|r| r.state.validate(&self.ctx, Level::Parent));
        if !valid {
            self.abort_all();
            return Err(Abort::Parent);
        }
        for reg in self.objects.iter_mut().filter(|r| r.in_parent) {
            reg.state.commit_apply(version);
        }
        let stamp = wrote.then_some(version);
        for lock in self.ctx.parent_locks.drain(..) {
            lock.release(stamp);
        }
        self.status = Status::Committed;
        let commit = Commit {
            tx_id: self.ctx.id,
            version,
            wrote,
        };
        if let Some(history) = &self.stm.inner.history {
            history.push(TxRecord {
                tx_id: commit.tx_id.0,
                order: commit.order(),
                events: std::mem::take(&mut self.events),
            });
        }
        Ok(commit)
    }

    /// Aborts the transaction, releasing every lock and local state.
    pub fn abort(mut self) {
        self.abort_all();
    }

    fn abort_all(&mut self) {
        if self.status != Status::Active {
            return;
        }
        for lock in self.ctx.child_locks.drain(..).chain(self.ctx.parent_locks.drain(..)) {
            lock.release(None);
        }
        for reg in &mut self.objects {
            reg.state.discard(Level::Parent);
            reg.in_child = false;
        }
        self.events.clear();
        self.ctx.level = Level::Parent;
        self.status = Status::Aborted;
    }
}

impl Drop for Tx {
    fn drop(&mut self) {
        self.abort_all();
        ACTIVE.with(|a| a.set(false));
    }
}
