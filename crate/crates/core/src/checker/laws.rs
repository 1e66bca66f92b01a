//! Cheap per-structure laws over a committed history. These assume the
//! recorded values are unique tags (each value enqueued, pushed, appended
//! or produced at most once).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::history::{CommittedHistory, Op, Snapshot, StructureId, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LawViolation {
    pub law: &'static str,
    pub structure: StructureId,
    pub detail: String,
}

impl fmt::Display for LawViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated on {}: {}", self.law, self.structure, self.detail)
    }
}

/// Runs every applicable law; an empty result means the history is clean.
pub fn check_structure_laws(history: &CommittedHistory) -> Vec<LawViolation> {
    let mut out = Vec::new();
    let mut per: BTreeMap<StructureId, Tally> = BTreeMap::new();
    for tx in &history.txs {
        let mut appended_here: BTreeMap<StructureId, Vec<Value>> = BTreeMap::new();
        for e in &tx.events {
            let t = per.entry(e.structure).or_default();
            match &e.op {
                Op::Enq(v) | Op::Push(v) | Op::Produce(v) => t.inserted.push(*v),
                Op::Deq(Some(v)) | Op::Pop(Some(v)) | Op::Consume(v) => t.removed.push(*v),
                Op::Append(v) => {
                    t.inserted.push(*v);
                    appended_here.entry(e.structure).or_default().push(*v);
                }
                Op::Read {
                    index,
                    result: Some(v),
                } => t.reads.push((*index, *v, tx.tx_id)),
                _ => {}
            }
            t.kind.get_or_insert(kind_of(&e.op));
        }
        for (s, vals) in appended_here {
            per.entry(s).or_default().append_groups.push((tx.tx_id, vals));
        }
    }

    for (&s, t) in &per {
        let initial = history.initial.get(&s).map(contents).unwrap_or_default();
        let fin = history.finals.get(&s);
        match t.kind {
            Some(Kind::Container(law)) => {
                container_laws(law, s, &initial, t, fin.map(contents), &mut out)
            }
            Some(Kind::Log) => log_laws(s, &initial, t, fin.map(contents), &mut out),
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Map,
    Container(&'static str),
    Log,
}

fn kind_of(op: &Op) -> Kind {
    match op {
        Op::Get { .. } | Op::Put { .. } | Op::Remove { .. } => Kind::Map,
        Op::Enq(_) | Op::Deq(_) => Kind::Container("queue no-loss/no-duplication"),
        Op::Push(_) | Op::Pop(_) => Kind::Container("stack balance"),
        Op::Produce(_) | Op::Consume(_) => Kind::Container("pool at-most-once"),
        Op::Append(_) | Op::Read { .. } => Kind::Log,
    }
}

#[derive(Debug, Default)]
struct Tally {
    kind: Option<Kind>,
    inserted: Vec<Value>,
    removed: Vec<Value>,
    reads: Vec<(usize, Value, u64)>,
    append_groups: Vec<(u64, Vec<Value>)>,
}

fn contents(s: &Snapshot) -> Vec<Value> {
    match s {
        Snapshot::Map(m) => m.values().copied().collect(),
        Snapshot::Queue(v) | Snapshot::Stack(v) | Snapshot::Log(v) | Snapshot::Pool(v) => v.clone(),
    }
}

fn container_laws(
    law: &'static str,
    s: StructureId,
    initial: &[Value],
    t: &Tally,
    fin: Option<Vec<Value>>,
    out: &mut Vec<LawViolation>,
) {
    let mut violation = |detail: String| {
        out.push(LawViolation {
            law,
            structure: s,
            detail,
        })
    };
    let available: BTreeSet<Value> = initial.iter().chain(&t.inserted).copied().collect();
    let mut seen = BTreeSet::new();
    for v in &t.removed {
        if !seen.insert(*v) {
            violation(format!("value {v} removed more than once"));
        }
        if !available.contains(v) {
            violation(format!("value {v} removed but never inserted"));
        }
    }
    if let Some(fin) = fin {
        let mut expected: Vec<Value> = initial.iter().chain(&t.inserted).copied().collect();
        let mut actual: Vec<Value> = fin.iter().chain(&t.removed).copied().collect();
        expected.sort_unstable();
        actual.sort_unstable();
        if expected != actual {
            violation(format!(
                "inserted values ({}) do not match removed plus remaining ({})",
                expected.len(),
                actual.len()
            ));
        }
    }
}

fn log_laws(
    s: StructureId,
    initial: &[Value],
    t: &Tally,
    fin: Option<Vec<Value>>,
    out: &mut Vec<LawViolation>,
) {
    let Some(fin) = fin else {
        return;
    };
    if !fin.starts_with(initial) {
        out.push(LawViolation {
            law: "log prefix immutability",
            structure: s,
            detail: "initial contents were rewritten".into(),
        });
    }
    for &(index, v, tx) in &t.reads {
        if fin.get(index) != Some(&v) {
            out.push(LawViolation {
                law: "log prefix immutability",
                structure: s,
                detail: format!("tx {tx} read {v} at {index}, final log holds {:?}", fin.get(index)),
            });
        }
    }
    if fin.len() != initial.len() + t.inserted.len() {
        out.push(LawViolation {
            law: "log contiguous append",
            structure: s,
            detail: format!(
                "{} entries after run, expected {}",
                fin.len(),
                initial.len() + t.inserted.len()
            ),
        });
    }
    for (tx, vals) in &t.append_groups {
        let contiguous = fin
            .iter()
            .position(|x| *x == vals[0])
            .is_some_and(|start| fin[start..].starts_with(vals));
        if !contiguous {
            out.push(LawViolation {
                law: "log contiguous append",
                structure: s,
                detail: format!("appends of tx {tx} are not contiguous"),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::history::{Event, OrderKey, TxRecord};

    fn tx(id: u64, ops: Vec<(u32, Op)>) -> TxRecord {
        TxRecord {
            tx_id: id,
            order: OrderKey::new(id, false),
            events: ops
                .into_iter()
                .map(|(s, op)| Event::new(StructureId(s), op))
                .collect(),
        }
    }

    #[test]
    fn empty_history_is_clean() {
        assert!(check_structure_laws(&CommittedHistory::default()).is_empty());
    }

    #[test]
    fn double_consume_is_named() {
        let h = CommittedHistory::new(vec![
            tx(1, vec![(0, Op::Produce(4))]),
            tx(2, vec![(0, Op::Consume(4))]),
            tx(3, vec![(0, Op::Consume(4))]),
        ]);
        let v = check_structure_laws(&h);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].law, "pool at-most-once");
    }

    #[test]
    fn interleaved_appends_are_detected() {
        let h = CommittedHistory::new(vec![
            tx(1, vec![(2, Op::Append(1)), (2, Op::Append(2))]),
            tx(2, vec![(2, Op::Append(3))]),
        ])
        .with_final(StructureId(2), Snapshot::Log(vec![1, 3, 2]));
        let v = check_structure_laws(&h);
        assert!(v.iter().any(|v| v.law == "log contiguous append"), "{v:?}");
    }

    #[test]
    fn clean_queue_with_final_state() {
        let h = CommittedHistory::new(vec![
            tx(1, vec![(0, Op::Enq(1)), (0, Op::Enq(2))]),
            tx(2, vec![(0, Op::Deq(Some(1)))]),
        ])
        .with_final(StructureId(0), Snapshot::Queue(vec![2]));
        assert!(check_structure_laws(&h).is_empty());
    }

    #[test]
    fn lost_value_is_detected() {
        let h = CommittedHistory::new(vec![tx(1, vec![(0, Op::Push(1)), (0, Op::Push(2))])])
            .with_final(StructureId(0), Snapshot::Stack(vec![1]));
        assert_eq!(check_structure_laws(&h).len(), 1);
    }
}
