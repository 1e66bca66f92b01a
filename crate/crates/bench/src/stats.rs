use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use crate::BenchError;

pub const CSV_HEADER: &str =
    "bench,policy,threads,reps,throughput,abort_rate,parent_aborts,child_aborts,child_retries,wall_ms";

/// Outcome of one benchmark repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub bench: &'static str,
    pub policy: String,
    pub threads: usize,
    /// Index of this repetition.
    pub rep: usize,
    /// Committed transactions inside the timed region.
    pub committed: u64,
    pub parent_aborts: u64,
    pub child_aborts: u64,
    pub child_retries: u64,
    pub wall: Duration,
}

impl RunStats {
    /// Committed transactions per second.
    pub fn throughput(&self) -> f64 {
        let secs = self.wall.as_secs_f64();
        if secs > 0.0 {
            self.committed as f64 / secs
        } else {
            0.0
        }
    }

    /// Aborted parent attempts over all parent attempts.
    pub fn abort_rate(&self) -> f64 {
        let attempts = self.committed + self.parent_aborts;
        if attempts == 0 {
            0.0
        } else {
            self.parent_aborts as f64 / attempts as f64
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.2},{:.6},{},{},{},{:.3}",
            self.bench,
            self.policy,
            self.threads,
            self.rep,
            self.throughput(),
            self.abort_rate(),
            self.parent_aborts,
            self.child_aborts,
            self.child_retries,
            self.wall.as_secs_f64() * 1e3
        )
    }
}

pub fn write_csv(out: &mut impl Write, stats: &[RunStats]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for s in stats {
        writeln!(out, "{}", s.csv_row())?;
    }
    Ok(())
}

/// Writes `stats` as CSV to `path`, header first.
pub fn emit_csv(stats: &[RunStats], path: &Path) -> Result<(), BenchError> {
    let io_err = |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    write_csv(&mut out, stats).map_err(io_err)?;
    out.flush().map_err(io_err)
}
