use std::collections::HashMap;

/// A value observed by some transaction, tagged with the id of the
/// transaction that wrote it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StampedRead {
    /// Snapshot of the reader when the read happened.
    pub reader_vc: u64,
    /// Writer transaction id, or `None` for values present before the run.
    pub writer: Option<u64>,
}

/// Checks that no read (by a committed or aborted reader) returned a value
/// whose writer never committed or committed after the reader's snapshot.
///
/// `stamps` maps committed writer ids to their commit stamps.
pub fn check_opacity_proxy(
    reads: &[StampedRead],
    stamps: &HashMap<u64, u64>,
) -> Result<(), StampedRead> {
    for read in reads {
        let Some(writer) = read.writer else { continue };
        match stamps.get(&writer) {
            Some(&stamp) if stamp <= read.reader_vc => {}
            _ => return Err(*read),
        }
    }
    Ok(())
}
