//! Transactional data structures with closed nesting.
//!
//! [`Stm`] runs transactions over a global version clock. Each data structure
//! ([`TxMap`], [`TxQueue`], [`TxStack`], [`TxLog`], [`TxPool`]) keeps its own
//! per-transaction state and plugs into commit, validation and nesting through
//! the [`Nestable`] trait. [`checker`] verifies recorded histories.

pub mod checker;
pub mod log;
pub mod map;
pub mod pool;
pub mod queue;
pub mod stack;
pub mod txcore;

pub use log::TxLog;
pub use map::TxMap;
pub use pool::{SlotState, TxPool};
pub use queue::TxQueue;
pub use stack::TxStack;
pub use txcore::{
    Abort, Backoff, ChildStatus, Commit, Config, GlobalVersionClock, Level, LockWord, Nestable,
    ObjectId, Owner, Pacer, RunCounters, Status, Stm, Tx, TxCtx, TxId, TxResult, TxStats, UsageError,
    VersionedLock,
};
