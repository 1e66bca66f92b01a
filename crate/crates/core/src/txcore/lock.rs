use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

// Lock word layout:
//
//   63      62      61 ........ 40   39 ............ 0
//  LOCKED  CHILD    owner thread      version stamp
//
// The version survives acquisition, so it can be read without taking the lock.
const LOCKED: u64 = 1 << 63;
const CHILD: u64 = 1 << 62;
const OWNER_SHIFT: u32 = 40;
const OWNER_BITS: u32 = 22;
const OWNER_MASK: u64 = ((1 << OWNER_BITS) - 1) << OWNER_SHIFT;
const VERSION_MASK: u64 = (1 << OWNER_SHIFT) - 1;

/// Largest version stamp a lock word can hold.
pub const MAX_VERSION: u64 = VERSION_MASK;

/// Identity under which a thread's transactions hold locks.
///
/// A thread runs at most one transaction at a time, so a per-thread slot is
/// enough to tell "mine" from "foreign". The level bit tells a child's locks
/// apart from the ones its parent acquired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Owner {
    thread: u32,
    child: bool,
}

impl Owner {
    /// The owner identity of the calling thread at parent level.
    pub fn current() -> Self {
        thread_local! {
            static SLOT: Cell<u32> = const { Cell::new(0) };
        }
        static NEXT: AtomicU64 = AtomicU64::new(1);
        let thread = SLOT.with(|slot| {
            if slot.get() == 0 {
                let id = NEXT.fetch_add(1, Ordering::Relaxed);
                assert!(id < (1 << OWNER_BITS), "lock owner ids exhausted");
                slot.set(id as u32);
            }
            slot.get()
        });
        Owner { thread, child: false }
    }

    pub fn thread(self) -> u32 {
        self.thread
    }

    pub fn is_child(self) -> bool {
        self.child
    }

    pub fn as_child(self) -> Self {
        Owner { child: true, ..self }
    }

    pub fn as_parent(self) -> Self {
        Owner { child: false, ..self }
    }

    /// True when both identities belong to the same transaction, at either level.
    pub fn same_tx(self, other: Owner) -> bool {
        self.thread == other.thread
    }

    fn bits(self) -> u64 {
        let level = if self.child { CHILD } else { 0 };
        LOCKED | level | ((self.thread as u64) << OWNER_SHIFT)
    }
}

/// Snapshot of a lock word.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct LockWord(u64);

impl LockWord {
    pub fn is_locked(self) -> bool {
        self.0 & LOCKED != 0
    }

    pub fn version(self) -> u64 {
        self.0 & VERSION_MASK
    }

    pub fn owner(self) -> Option<Owner> {
        self.is_locked().then_some(Owner {
            thread: ((self.0 & OWNER_MASK) >> OWNER_SHIFT) as u32,
            child: self.0 & CHILD != 0,
        })
    }

    /// Locked by anyone other than `me`'s transaction.
    pub fn locked_by_other(self, me: Owner) -> bool {
        self.owner().is_some_and(|o| !o.same_tx(me))
    }
}

impl fmt::Debug for LockWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LockWord")
            .field("owner", &self.owner())
            .field("version", &self.version())
            .finish()
    }
}

/// A per-object lock combined with the version stamp of its last committed
/// writer, packed in one atomic word.
#[derive(Default)]
pub struct VersionedLock {
    word: AtomicU64,
}

impl VersionedLock {
    pub fn new() -> Self {
        Self::with_version(0)
    }

    pub fn with_version(version: u64) -> Self {
        assert!(version <= MAX_VERSION, "version stamp overflow");
        Self {
            word: AtomicU64::new(version),
        }
    }

    pub fn load(&self) -> LockWord {
        LockWord(self.word.load(Ordering::SeqCst))
    }

    pub fn version(&self) -> u64 {
        self.load().version()
    }

    pub fn owner(&self) -> Option<Owner> {
        self.load().owner()
    }

    /// Single CAS attempt to take an unlocked lock for `owner`.
    pub fn try_acquire(&self, owner: Owner) -> bool {
        let current = self.load();
        if current.is_locked() {
            return false;
        }
        self.word
            .compare_exchange(
                current.0,
                current.version() | owner.bits(),
                Ordering::SeqCst,
                Ordering::SeqCst,
            )
            .is_ok()
    }

    /// Hands a child-held lock over to the parent of the same transaction.
    pub(crate) fn transfer(&self, from: Owner, to: Owner) -> bool {
        let current = self.load();
        if current.owner() != Some(from) {
            return false;
        }
        self.word
            .compare_exchange(
                current.0,
                current.version() | to.bits(),
                Ordering::SeqCst,
                Ordering::SeqCst,
            )
            .is_ok()
    }

    /// Releases the lock, keeping its version, or stamping `version` when
    /// the holder published a write.
    pub(crate) fn release(&self, version: Option<u64>) {
        let current = self.load();
        debug_assert!(current.is_locked(), "releasing an unlocked lock");
        let version = version.unwrap_or(current.version());
        assert!(version <= MAX_VERSION, "version stamp overflow");
        self.word.store(version, Ordering::SeqCst);
    }
}

impl fmt::Debug for VersionedLock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.load().fmt(f)
    }
}
