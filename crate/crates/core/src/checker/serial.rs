use std::fmt;

use super::history::{CommittedHistory, Event, TxRecord};
use super::model::ReferenceState;

/// Limits of the witness search.
#[derive(Debug, Clone, Copy)]
pub struct SearchBounds {
    /// How far ahead of the commit-point order a transaction may be moved.
    pub window: usize,
    /// Maximum number of transaction placements tried before giving up.
    pub budget: usize,
}

impl Default for SearchBounds {
    fn default() -> Self {
        Self {
            window: 8,
            budget: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub record: TxRecord,
    pub event: Event,
    pub expected: String,
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "violation: tx={} op={} structure={} args={} result={} expected={}",
            self.record.tx_id,
            self.event.op.name(),
            self.event.structure,
            self.event.op.args(),
            self.event.op.result(),
            self.expected
        )?;
        write!(f, "{}", self.record.dump())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// A sequential order reproducing every result, as transaction ids.
    Ok { order: Vec<u64> },
    Counterexample(Box<Counterexample>),
    /// The search budget ran out around these positions of the commit order.
    Inconclusive { window: (usize, usize) },
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok { .. })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Ok { order } => write!(f, "ok ({} transactions)", order.len()),
            Verdict::Counterexample(c) => write!(f, "counterexample\n{c}"),
            Verdict::Inconclusive { window: (lo, hi) } => {
                write!(f, "inconclusive: search budget exceeded in window {lo}..{hi}")
            }
        }
    }
}

pub fn check_serializable(history: &CommittedHistory) -> Verdict {
    check_serializable_with(history, SearchBounds::default())
}

/// Looks for a sequential order of the committed transactions that
/// reproduces every recorded result on the reference structures.
///
/// The commit-point order is tried first; if it fails, transactions may be
/// reordered within `bounds.window` of their commit position. Histories no
/// longer than the window are therefore searched exhaustively.
pub fn check_serializable_with(history: &CommittedHistory, bounds: SearchBounds) -> Verdict {
    let mut txs: Vec<&TxRecord> = history.txs.iter().collect();
    txs.sort_by_key(|t| (t.order, t.tx_id));
    let initial = ReferenceState::new(&history.initial);

    let mut state = initial.clone();
    let mut failure = None;
    for (pos, tx) in txs.iter().enumerate() {
        if let Err(m) = state.apply_tx(tx) {
            failure = Some((pos, (*tx).clone(), m));
            break;
        }
    }
    let Some(first_failure) = failure else {
        return Verdict::Ok {
            order: txs.iter().map(|t| t.tx_id).collect(),
        };
    };

    let mut search = Search {
        txs: &txs,
        window: bounds.window.max(1),
        budget: bounds.budget,
        deepest: first_failure,
        exhausted: false,
    };
    let mut remaining: Vec<usize> = (0..txs.len()).collect();
    let mut order = Vec::with_capacity(txs.len());
    if search.dfs(initial, &mut remaining, &mut order) {
        return Verdict::Ok {
            order: order.iter().map(|&i| txs[i].tx_id).collect(),
        };
    }
    let (pos, record, mismatch) = search.deepest;
    if search.exhausted {
        return Verdict::Inconclusive {
            window: (pos, (pos + bounds.window).min(txs.len())),
        };
    }
    let event = record.events[mismatch.event].clone();
    Verdict::Counterexample(Box::new(Counterexample {
        record,
        event,
        expected: mismatch.expected,
    }))
}

struct Search<'a> {
    txs: &'a [&'a TxRecord],
    window: usize,
    budget: usize,
    deepest: (usize, TxRecord, super::model::Mismatch),
    exhausted: bool,
}

impl Search<'_> {
    fn dfs(&mut self, state: ReferenceState, remaining: &mut Vec<usize>, order: &mut Vec<usize>) -> bool {
        if remaining.is_empty() {
            return true;
        }
        let depth = order.len();
        for slot in 0..self.window.min(remaining.len()) {
            if self.budget == 0 {
                self.exhausted = true;
                return false;
            }
            self.budget -= 1;
            let idx = remaining[slot];
            let mut next = state.clone();
            match next.apply_tx(self.txs[idx]) {
                Ok(()) => {
                    remaining.remove(slot);
                    order.push(idx);
                    if self.dfs(next, remaining, order) {
                        return true;
                    }
                    order.pop();
                    remaining.insert(slot, idx);
                    if self.exhausted {
                        return false;
                    }
                }
                Err(m) => {
                    if depth > self.deepest.0 {
                        self.deepest = (depth, self.txs[idx].clone(), m);
                    }
                }
            }
        }
        false
    }
}
