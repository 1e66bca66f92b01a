//! Single-threaded reference structures used to replay histories.
//!
//! Deliberately naive and independent of the transactional code paths.

use std::collections::{BTreeMap, VecDeque};

use super::history::{Event, Op, Snapshot, StructureId, TxRecord, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Model {
    Map(BTreeMap<u64, Value>),
    Queue(VecDeque<Value>),
    Stack(Vec<Value>),
    Log(Vec<Value>),
    Pool(BTreeMap<Value, usize>),
}

impl Model {
    fn from_snapshot(s: &Snapshot) -> Self {
        match s {
            Snapshot::Map(m) => Model::Map(m.clone()),
            Snapshot::Queue(q) => Model::Queue(q.iter().copied().collect()),
            Snapshot::Stack(s) => Model::Stack(s.clone()),
            Snapshot::Log(l) => Model::Log(l.clone()),
            Snapshot::Pool(p) => {
                let mut bag = BTreeMap::new();
                for v in p {
                    *bag.entry(*v).or_insert(0) += 1;
                }
                Model::Pool(bag)
            }
        }
    }

    fn empty_for(op: &Op) -> Self {
        match op {
            Op::Get { .. } | Op::Put { .. } | Op::Remove { .. } => Model::Map(BTreeMap::new()),
            Op::Enq(_) | Op::Deq(_) => Model::Queue(VecDeque::new()),
            Op::Push(_) | Op::Pop(_) => Model::Stack(Vec::new()),
            Op::Append(_) | Op::Read { .. } => Model::Log(Vec::new()),
            Op::Produce(_) | Op::Consume(_) => Model::Pool(BTreeMap::new()),
        }
    }

    /// Applies `op`, returning what the reference expected when the
    /// recorded result disagrees.
    fn apply(&mut self, op: &Op) -> Result<(), String> {
        fn check(expected: Option<Value>, got: &Option<Value>) -> Result<(), String> {
            if expected == *got {
                Ok(())
            } else {
                Err(format!("{expected:?}"))
            }
        }
        match (self, op) {
            (Model::Map(m), Op::Get { key, result }) => check(m.get(key).copied(), result),
            (Model::Map(m), Op::Put { key, value }) => {
                m.insert(*key, *value);
                Ok(())
            }
            (Model::Map(m), Op::Remove { key }) => {
                m.remove(key);
                Ok(())
            }
            (Model::Queue(q), Op::Enq(v)) => {
                q.push_back(*v);
                Ok(())
            }
            (Model::Queue(q), Op::Deq(got)) => check(q.pop_front(), got),
            (Model::Stack(s), Op::Push(v)) => {
                s.push(*v);
                Ok(())
            }
            (Model::Stack(s), Op::Pop(got)) => check(s.pop(), got),
            (Model::Log(l), Op::Append(v)) => {
                l.push(*v);
                Ok(())
            }
            (Model::Log(l), Op::Read { index, result }) => check(l.get(*index).copied(), result),
            (Model::Pool(p), Op::Produce(v)) => {
                *p.entry(*v).or_insert(0) += 1;
                Ok(())
            }
            (Model::Pool(p), Op::Consume(v)) => match p.get_mut(v) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    if *n == 0 {
                        p.remove(v);
                    }
                    Ok(())
                }
                _ => Err(format!("{v} not ready")),
            },
            (model, op) => Err(format!("{} on a {}", op.name(), model.kind())),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Model::Map(_) => "map",
            Model::Queue(_) => "queue",
            Model::Stack(_) => "stack",
            Model::Log(_) => "log",
            Model::Pool(_) => "pool",
        }
    }
}

/// Where a replay diverged from the recorded results.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub event: usize,
    pub expected: String,
}

/// The combined state of every recorded structure.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReferenceState {
    models: BTreeMap<StructureId, Model>,
}

impl ReferenceState {
    pub fn new(initial: &BTreeMap<StructureId, Snapshot>) -> Self {
        Self {
            models: initial
                .iter()
                .map(|(id, s)| (*id, Model::from_snapshot(s)))
                .collect(),
        }
    }

    pub fn apply_event(&mut self, event: &Event) -> Result<(), String> {
        self.models
            .entry(event.structure)
            .or_insert_with(|| Model::empty_for(&event.op))
            .apply(&event.op)
    }

    /// Replays a whole transaction; `self` is left unspecified on mismatch.
    pub fn apply_tx(&mut self, tx: &TxRecord) -> Result<(), Mismatch> {
        for (i, e) in tx.events.iter().enumerate() {
            self.apply_event(e).map_err(|expected| Mismatch { event: i, expected })?;
        }
        Ok(())
    }
}
