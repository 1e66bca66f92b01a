use std::sync::atomic::{AtomicU64, Ordering};

/// Shared logical clock advanced by every committing writer.
///
/// Transactions sample it at begin to obtain their snapshot, and writers
/// stamp the objects they publish with the post-increment value.
#[derive(Debug, Default)]
pub struct GlobalVersionClock {
    value: AtomicU64,
}

impl GlobalVersionClock {
    pub fn new() -> Self {
        Self::starting_at(0)
    }

    /// A clock whose first observable value is `value`.
    pub fn starting_at(value: u64) -> Self {
        Self {
            value: AtomicU64::new(value),
        }
    }

    pub fn now(&self) -> u64 {
        self.value.load(Ordering::SeqCst)
    }

    /// Advances the clock and returns the new value, which becomes the
    /// write stamp of the calling commit.
    pub(crate) fn tick(&self) -> u64 {
        self.value.fetch_add(1, Ordering::SeqCst) + 1
    }
}
