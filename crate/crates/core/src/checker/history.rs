use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};

use crossbeam_queue::SegQueue;
use parking_lot::Mutex;

pub type Key = u64;
pub type Value = u64;

/// Names one recorded data-structure instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StructureId(pub u32);

impl fmt::Display for StructureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// One operation with its arguments and observed result.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Op {
    Get { key: Key, result: Option<Value> },
    Put { key: Key, value: Value },
    Remove { key: Key },
    Enq(Value),
    Deq(Option<Value>),
    Push(Value),
    Pop(Option<Value>),
    Append(Value),
    Read { index: usize, result: Option<Value> },
    Produce(Value),
    Consume(Value),
}

fn opt(v: &Option<Value>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Get { .. } => "get",
            Op::Put { .. } => "put",
            Op::Remove { .. } => "remove",
            Op::Enq(_) => "enq",
            Op::Deq(_) => "deq",
            Op::Push(_) => "push",
            Op::Pop(_) => "pop",
            Op::Append(_) => "append",
            Op::Read { .. } => "read",
            Op::Produce(_) => "produce",
            Op::Consume(_) => "consume",
        }
    }

    pub fn args(&self) -> String {
        match self {
            Op::Get { key, .. } | Op::Remove { key } => key.to_string(),
            Op::Put { key, value } => format!("{key} {value}"),
            Op::Enq(v) | Op::Push(v) | Op::Append(v) | Op::Produce(v) => v.to_string(),
            Op::Read { index, .. } => index.to_string(),
            Op::Deq(_) | Op::Pop(_) | Op::Consume(_) => String::new(),
        }
    }

    pub fn result(&self) -> String {
        match self {
            Op::Get { result, .. } | Op::Read { result, .. } => opt(result),
            Op::Deq(r) | Op::Pop(r) => opt(r),
            Op::Consume(v) => v.to_string(),
            _ => "ok".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub structure: StructureId,
    pub op: Op,
}

impl Event {
    pub fn new(structure: StructureId, op: Op) -> Self {
        Self { structure, op }
    }
}

/// Position of a committed transaction in the commit-point order.
///
/// Ordered by version, with writers before read-only transactions at the
/// same version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrderKey {
    pub version: u64,
    pub read_only: bool,
}

impl OrderKey {
    pub fn new(version: u64, read_only: bool) -> Self {
        Self { version, read_only }
    }
}

/// All events of one committed transaction, in program order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxRecord {
    pub tx_id: u64,
    pub order: OrderKey,
    pub events: Vec<Event>,
}

impl TxRecord {
    /// One line per event: `tx=<id> op=<name> structure=<s> args=<..> result=<..>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&format!(
                "tx={} op={} structure={} args={} result={}\n",
                self.tx_id,
                e.op.name(),
                e.structure,
                e.op.args(),
                e.op.result()
            ));
        }
        out
    }
}

/// Initial or final contents of a recorded structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Snapshot {
    Map(BTreeMap<Key, Value>),
    /// Front first.
    Queue(Vec<Value>),
    /// Bottom first.
    Stack(Vec<Value>),
    Log(Vec<Value>),
    /// Values sitting in ready slots.
    Pool(Vec<Value>),
}

/// Lock-free collector of committed transactions.
#[derive(Debug)]
pub struct History {
    enabled: AtomicBool,
    records: SegQueue<TxRecord>,
    initial: Mutex<BTreeMap<StructureId, Snapshot>>,
    finals: Mutex<BTreeMap<StructureId, Snapshot>>,
}

impl Default for History {
    fn default() -> Self {
        Self::new()
    }
}

impl History {
    pub fn new() -> Self {
        Self {
            enabled: AtomicBool::new(true),
            records: SegQueue::new(),
            initial: Mutex::new(BTreeMap::new()),
            finals: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn set_enabled(&self, on: bool) {
        self.enabled.store(on, Ordering::SeqCst);
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled.load(Ordering::SeqCst)
    }

    /// Appends one committed transaction. No-op while disabled.
    pub fn push(&self, record: TxRecord) {
        if self.is_enabled() {
            self.records.push(record);
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Declares a structure and its contents before the run. Structures
    /// without a declaration start empty.
    pub fn declare(&self, id: StructureId, initial: Snapshot) {
        self.initial.lock().insert(id, initial);
    }

    /// Records the contents of a structure after the run, for the laws that
    /// look at end state.
    pub fn set_final(&self, id: StructureId, snapshot: Snapshot) {
        self.finals.lock().insert(id, snapshot);
    }

    /// Drains the recorded transactions into an immutable, checkable form.
    pub fn finish(&self) -> CommittedHistory {
        let mut txs = Vec::with_capacity(self.records.len());
        while let Some(r) = self.records.pop() {
            txs.push(r);
        }
        CommittedHistory {
            txs,
            initial: self.initial.lock().clone(),
            finals: self.finals.lock().clone(),
        }
    }
}

/// Committed transactions plus structure initial (and optional final) states.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommittedHistory {
    pub txs: Vec<TxRecord>,
    pub initial: BTreeMap<StructureId, Snapshot>,
    pub finals: BTreeMap<StructureId, Snapshot>,
}

impl CommittedHistory {
    pub fn new(txs: Vec<TxRecord>) -> Self {
        Self {
            txs,
            ..Self::default()
        }
    }

    pub fn with_initial(mut self, id: StructureId, snapshot: Snapshot) -> Self {
        self.initial.insert(id, snapshot);
        self
    }

    pub fn with_final(mut self, id: StructureId, snapshot: Snapshot) -> Self {
        self.finals.insert(id, snapshot);
        self
    }

    pub fn event_count(&self) -> usize {
        self.txs.iter().map(|t| t.events.len()).sum()
    }
}
