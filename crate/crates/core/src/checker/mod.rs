//! History recording and offline verification.
//!
//! Transactions append [`Event`]s through [`crate::Tx::record`]; committed
//! ones land in a [`History`]. [`check_serializable`] searches for a
//! sequential order that reproduces every recorded result on naive
//! reference structures, and [`check_structure_laws`] runs the cheap
//! per-structure invariants.

mod history;
mod laws;
mod model;
mod opacity;
mod serial;

pub use history::{
    CommittedHistory, Event, History, Key, Op, OrderKey, Snapshot, StructureId, TxRecord, Value,
};
pub use laws::{check_structure_laws, LawViolation};
pub use model::{Mismatch, ReferenceState};
pub use opacity::{check_opacity_proxy, StampedRead};
pub use serial::{check_serializable, check_serializable_with, Counterexample, SearchBounds, Verdict};
