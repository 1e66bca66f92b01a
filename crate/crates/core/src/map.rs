//! Transactional ordered map.
//!
//! Entries live in a concurrent skiplist index that is navigated without any
//! transactional tracking; only the entry for a key actually read enters the
//! read-set. Each entry carries its own [`VersionedLock`]. Removal leaves a
//! tombstone in place, and keys are inserted into the index the first time
//! any transaction reads or commits them, so an absent key still has an
//! entry whose version a reader can validate.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crossbeam_skiplist::SkipMap;
use parking_lot::RwLock;

use crate::txcore::{Level, LockWord, Nestable, ObjectId, Tx, TxCtx, TxResult, VersionedLock};

struct Entry<V> {
    lock: Arc<VersionedLock>,
    value: RwLock<Option<V>>,
}

impl<V> Entry<V> {
    fn absent() -> Self {
        Entry {
            lock: Arc::new(VersionedLock::new()),
            value: RwLock::new(None),
        }
    }
}

struct Shared<K, V> {
    index: SkipMap<K, Arc<Entry<V>>>,
}

impl<K, V> Shared<K, V>
where
    K: Ord + Send + 'static,
    V: Send + Sync + 'static,
{
    fn entry(&self, key: &K) -> Arc<Entry<V>>
    where
        K: Clone,
    {
        if let Some(e) = self.index.get(key) {
            return e.value().clone();
        }
        self.index
            .get_or_insert_with(key.clone(), || Arc::new(Entry::absent()))
            .value()
            .clone()
    }
}

/// A transactional map with per-key versions.
pub struct TxMap<K, V> {
    id: ObjectId,
    shared: Arc<Shared<K, V>>,
}

impl<K, V> Clone for TxMap<K, V> {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            shared: self.shared.clone(),
        }
    }
}

impl<K, V> fmt::Debug for TxMap<K, V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TxMap")
            .field("id", &self.id)
            .field("entries", &self.shared.index.len())
            .finish()
    }
}

impl<K, V> Default for TxMap<K, V>
where
    K: Ord + Clone + Send + Sync + 'static,
    V: Clone + Send + Sync + 'static,
{
    fn default() -> Self {
        Self::new()
    }
}

impl<K, V> TxMap<K, V>
where
    K: Ord + Clone + Send + Sync + 'static,
    V: Clone + Send + Sync + 'static,
{
    pub fn new() -> Self {
        Self {
            id: ObjectId::fresh(),
            shared: Arc::new(Shared {
                index: SkipMap::new(),
            }),
        }
    }

    /// A map pre-filled outside any transaction, all entries at version 0.
    pub fn with_entries(entries: impl IntoIterator<Item = (K, V)>) -> Self {
        let map = Self::new();
        for (k, v) in entries {
            map.shared.index.insert(
                k,
                Arc::new(Entry {
                    lock: Arc::new(VersionedLock::new()),
                    value: RwLock::new(Some(v)),
                }),
            );
        }
        map
    }

    pub fn id(&self) -> ObjectId {
        self.id
    }

    fn local<'t>(&self, tx: &'t mut Tx) -> TxResult<(&'t mut MapLocal<K, V>, &'t mut TxCtx)> {
        let shared = &self.shared;
        tx.object_state(self.id, || MapLocal::new(shared.clone()))
    }

    /// Reads `key`: the running child's writes first, then the parent's, then
    /// shared state. Aborts the current level if the entry is locked by
    /// another transaction or newer than the snapshot.
    pub fn get(&self, tx: &mut Tx, key: &K) -> TxResult<Option<V>> {
        let (local, ctx) = self.local(tx)?;
        local.get(ctx, key)
    }

    pub fn put(&self, tx: &mut Tx, key: K, value: V) -> TxResult<()> {
        let (local, ctx) = self.local(tx)?;
        local.writes_mut(ctx.level()).insert(key, Some(value));
        Ok(())
    }

    pub fn remove(&self, tx: &mut Tx, key: K) -> TxResult<()> {
        let (local, ctx) = self.local(tx)?;
        local.writes_mut(ctx.level()).insert(key, None);
        Ok(())
    }

    pub fn contains_key(&self, tx: &mut Tx, key: &K) -> TxResult<bool> {
        Ok(self.get(tx, key)?.is_some())
    }

    /// Committed value of `key`, read outside any transaction.
    pub fn committed(&self, key: &K) -> Option<V> {
        self.shared
            .index
            .get(key)
            .and_then(|e| e.value().value.read().clone())
    }

    /// Committed version of `key`'s entry, if the index has one.
    pub fn committed_version(&self, key: &K) -> Option<u64> {
        self.shared.index.get(key).map(|e| e.value().lock.version())
    }

    /// Committed contents, read outside any transaction. Only meaningful
    /// while no transaction is committing.
    pub fn snapshot(&self) -> BTreeMap<K, V> {
        self.shared
            .index
            .iter()
            .filter_map(|e| e.value().value.read().clone().map(|v| (e.key().clone(), v)))
            .collect()
    }
}

struct Observed<V> {
    entry: Arc<Entry<V>>,
    version: u64,
}

struct MapLocal<K, V> {
    shared: Arc<Shared<K, V>>,
    parent_reads: BTreeMap<K, Observed<V>>,
    parent_writes: BTreeMap<K, Option<V>>,
    child_reads: BTreeMap<K, Observed<V>>,
    child_writes: BTreeMap<K, Option<V>>,
    locked: Vec<Arc<Entry<V>>>,
}

impl<K, V> MapLocal<K, V>
where
    K: Ord + Clone + Send + Sync + 'static,
    V: Clone + Send + Sync + 'static,
{
    fn new(shared: Arc<Shared<K, V>>) -> Self {
        Self {
            shared,
            parent_reads: BTreeMap::new(),
            parent_writes: BTreeMap::new(),
            child_reads: BTreeMap::new(),
            child_writes: BTreeMap::new(),
            locked: Vec::new(),
        }
    }

    fn writes_mut(&mut self, level: Level) -> &mut BTreeMap<K, Option<V>> {
        match level {
            Level::Parent => &mut self.parent_writes,
            Level::Child => &mut self.child_writes,
        }
    }

    fn get(&mut self, ctx: &mut TxCtx, key: &K) -> TxResult<Option<V>> {
        let entry = self.shared.entry(key);
        let Some((shared_value, version)) = read_consistent(&entry, ctx) else {
            return Err(ctx.conflict());
        };
        let reads = match ctx.level() {
            Level::Parent => &mut self.parent_reads,
            Level::Child => &mut self.child_reads,
        };
        let seen = reads.entry(key.clone()).or_insert(Observed { entry, version });
        if seen.version != version {
            return Err(ctx.conflict());
        }
        if ctx.level() == Level::Child {
            if let Some(v) = self.child_writes.get(key) {
                return Ok(v.clone());
            }
        }
        if let Some(v) = self.parent_writes.get(key) {
            return Ok(v.clone());
        }
        Ok(shared_value)
    }
}

/// Reads an entry's value and version as one consistent pair, or `None` if
/// the snapshot cannot see it.
fn read_consistent<V: Clone>(entry: &Entry<V>, ctx: &TxCtx) -> Option<(Option<V>, u64)> {
    let before: LockWord = entry.lock.load();
    if !ctx.readable(before) {
        return None;
    }
    let value = entry.value.read().clone();
    (entry.lock.load() == before).then(|| (value, before.version()))
}

fn still_valid<K, V>(reads: &BTreeMap<K, Observed<V>>, ctx: &TxCtx) -> bool {
    reads.values().all(|o| {
        let word = o.entry.lock.load();
        !word.locked_by_other(ctx.owner()) && word.version() == o.version && word.version() <= ctx.vc()
    })
}

impl<K, V> Nestable for MapLocal<K, V>
where
    K: Ord + Clone + Send + Sync + 'static,
    V: Clone + Send + Sync + 'static,
{
    fn validate(&self, ctx: &TxCtx, level: Level) -> bool {
        match level {
            Level::Parent => still_valid(&self.parent_reads, ctx),
            Level::Child => still_valid(&self.child_reads, ctx),
        }
    }

    fn migrate(&mut self, _ctx: &TxCtx) {
        let writes = std::mem::take(&mut self.child_writes);
        self.parent_writes.extend(writes);
        for (k, o) in std::mem::take(&mut self.child_reads) {
            self.parent_reads.entry(k).or_insert(o);
        }
    }

    fn discard(&mut self, level: Level) {
        self.child_reads.clear();
        self.child_writes.clear();
        if level == Level::Parent {
            self.parent_reads.clear();
            self.parent_writes.clear();
            self.locked.clear();
        }
    }

    fn lock_write_set(&mut self, ctx: &mut TxCtx) -> bool {
        for key in self.parent_writes.keys() {
            let entry = self.shared.entry(key);
            if !ctx.try_lock(&entry.lock) {
                return false;
            }
            self.locked.push(entry);
        }
        true
    }

    fn has_writes(&self) -> bool {
        !self.parent_writes.is_empty()
    }

    fn commit_apply(&mut self, _version: u64) {
        let writes = std::mem::take(&mut self.parent_writes);
        let locked = std::mem::take(&mut self.locked);
        debug_assert_eq!(writes.len(), locked.len());
        for ((_, value), entry) in writes.into_iter().zip(locked) {
            *entry.value.write() = value;
        }
        self.parent_reads.clear();
    }
}
