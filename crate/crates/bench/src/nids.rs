//! Intrusion-detection pipeline benchmark.
//!
//! Producers split seeded packets into fragments and place them in a shared
//! fragment pool. Each consumer transaction takes one fragment, parses its
//! header, records it in the packet map, and, when it completes a packet,
//! reassembles and inspects it and appends a verdict to one of several logs.
//! The policy decides whether the map update, the log append, or both run as
//! child transactions.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Barrier, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use txds::checker::{check_structure_laws, Event, History, Op, Snapshot, StructureId};
use txds::{Backoff, Config, Pacer, Stm, Tx, TxLog, TxMap, TxPool, TxResult, TxStats};

use crate::{BenchError, RunStats};

pub const HEADER_LEN: usize = 64;
pub const BODY_LEN: usize = 192;

const POOL: StructureId = StructureId(0);
const MAP: StructureId = StructureId(1);

fn log_structure(i: usize) -> StructureId {
    StructureId(2 + i as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NidsPolicy {
    Flat,
    NestLog,
    NestMap,
    NestBoth,
}

impl NidsPolicy {
    pub fn name(self) -> &'static str {
        match self {
            NidsPolicy::Flat => "flat",
            NidsPolicy::NestLog => "nest-log",
            NidsPolicy::NestMap => "nest-map",
            NidsPolicy::NestBoth => "nest-both",
        }
    }

    fn nests_map(self) -> bool {
        matches!(self, NidsPolicy::NestMap | NidsPolicy::NestBoth)
    }

    fn nests_log(self) -> bool {
        matches!(self, NidsPolicy::NestLog | NidsPolicy::NestBoth)
    }
}

#[derive(Debug, Clone)]
pub struct NidsConfig {
    pub producers: usize,
    pub consumers: usize,
    pub fragments_per_packet: usize,
    pub packets: usize,
    pub policy: NidsPolicy,
    /// Iterations of the synthetic signature matcher per packet.
    pub match_work: usize,
    pub logs: usize,
    pub pool_size: usize,
    pub seed: u64,
    pub child_backoff: Backoff,
    pub parent_backoff: Backoff,
    pub record_history: bool,
}

impl Default for NidsConfig {
    fn default() -> Self {
        Self {
            producers: 1,
            consumers: 8,
            fragments_per_packet: 1,
            packets: 2_000,
            policy: NidsPolicy::Flat,
            match_work: 20_000,
            logs: 4,
            pool_size: 64,
            seed: 1,
            child_backoff: Backoff::Exponential,
            parent_backoff: Backoff::Exponential,
            record_history: false,
        }
    }
}

impl NidsConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let positive = [
            ("producers", self.producers),
            ("consumers", self.consumers),
            ("fragments", self.fragments_per_packet),
            ("packets", self.packets),
            ("logs", self.logs),
            ("pool-size", self.pool_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(BenchError::Config(format!("{name} must be positive")));
        }
        if self.fragments_per_packet > 64 {
            return Err(BenchError::Config("fragments must be at most 64".into()));
        }
        Ok(())
    }

    fn total_fragments(&self) -> usize {
        self.packets * self.fragments_per_packet
    }
}

/// Fields encoded in the first [`HEADER_LEN`] bytes of every fragment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub packet: u64,
    pub fragment: u64,
    pub index: u32,
    pub count: u32,
}

pub fn encode_fragment(h: Header, rng: &mut impl Rng) -> Arc<[u8]> {
    let mut buf = vec![0u8; HEADER_LEN + BODY_LEN];
    buf[0..8].copy_from_slice(&h.packet.to_le_bytes());
    buf[8..16].copy_from_slice(&h.fragment.to_le_bytes());
    buf[16..20].copy_from_slice(&h.index.to_le_bytes());
    buf[20..24].copy_from_slice(&h.count.to_le_bytes());
    rng.fill(&mut buf[24..]);
    let checksum = buf[..HEADER_LEN - 8].iter().fold(0u64, |acc, b| mix(acc ^ *b as u64));
    buf[HEADER_LEN - 8..HEADER_LEN].copy_from_slice(&checksum.to_le_bytes());
    buf.into()
}

/// Parses the fixed 64-byte header, verifying its checksum.
pub fn parse_header(frag: &[u8]) -> Header {
    let word = |r: std::ops::Range<usize>| {
        let mut b = [0u8; 8];
        b[..r.len()].copy_from_slice(&frag[r]);
        u64::from_le_bytes(b)
    };
    let checksum = frag[..HEADER_LEN - 8].iter().fold(0u64, |acc, b| mix(acc ^ *b as u64));
    assert_eq!(checksum, word(HEADER_LEN - 8..HEADER_LEN), "corrupt fragment header");
    Header {
        packet: word(0..8),
        fragment: word(8..16),
        index: word(16..20) as u32,
        count: word(20..24) as u32,
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Synthetic signature matching: `work` rounds of mixing over the payload.
pub fn inspect(payload: &[u8], work: usize, seed: u64) -> u64 {
    let mut h = seed;
    for i in 0..work {
        h = mix(h ^ payload[i % payload.len()] as u64);
    }
    h
}

fn log_index(packet: u64, logs: usize) -> usize {
    (mix(packet) % logs as u64) as usize
}

/// Per-packet progress in the packet map: the fragments received so far.
type Reassembly = Vec<Option<Arc<[u8]>>>;

fn received_mask(r: &Reassembly) -> u64 {
    r.iter()
        .enumerate()
        .filter(|(_, f)| f.is_some())
        .fold(0, |m, (i, _)| m | (1 << i))
}

struct Structures {
    pool: TxPool<Arc<[u8]>>,
    map: TxMap<u64, Reassembly>,
    logs: Vec<TxLog<(u64, u64)>>,
}

/// What one committed consumer transaction did.
struct Consumed {
    header: Header,
    created: bool,
    completed: bool,
}

fn consume_one(tx: &mut Tx, s: &Structures, cfg: &NidsConfig) -> TxResult<Option<Consumed>> {
    let Some(frag) = s.pool.try_consume(tx)? else {
        return Ok(None);
    };
    let header = parse_header(&frag);
    tx.record(Event::new(POOL, Op::Consume(header.fragment)));

    let update = |tx: &mut Tx| -> TxResult<(bool, Reassembly)> {
        let current = s.map.get(tx, &header.packet)?;
        tx.record(Event::new(
            MAP,
            Op::Get {
                key: header.packet,
                result: current.as_ref().map(received_mask),
            },
        ));
        let created = current.is_none();
        let mut parts = current.unwrap_or_else(|| vec![None; header.count as usize]);
        parts[header.index as usize] = Some(frag.clone());
        s.map.put(tx, header.packet, parts.clone())?;
        tx.record(Event::new(
            MAP,
            Op::Put {
                key: header.packet,
                value: received_mask(&parts),
            },
        ));
        Ok((created, parts))
    };
    let (created, parts) = if cfg.policy.nests_map() {
        tx.nested(update)?
    } else {
        update(tx)?
    };

    let completed = parts.iter().all(Option::is_some);
    if completed {
        let packet: Vec<u8> = parts
            .iter()
            .flatten()
            .flat_map(|f| f[HEADER_LEN..].iter().copied())
            .collect();
        let verdict = inspect(&packet, cfg.match_work, cfg.seed);
        let li = log_index(header.packet, s.logs.len());
        let append = |tx: &mut Tx| -> TxResult<()> {
            s.logs[li].append(tx, (header.packet, verdict))?;
            tx.record(Event::new(log_structure(li), Op::Append(header.packet)));
            Ok(())
        };
        if cfg.policy.nests_log() {
            tx.nested(append)?;
        } else {
            append(tx)?;
        }
    }
    Ok(Some(Consumed {
        header,
        created,
        completed,
    }))
}

#[derive(Default)]
struct ConsumerTally {
    parent_aborts: u64,
    tx: TxStats,
}

struct Audit {
    created: Vec<AtomicU32>,
    completed: Vec<AtomicU32>,
    consumed: Vec<AtomicU32>,
}

impl Audit {
    fn new(cfg: &NidsConfig) -> Self {
        let counters = |n| (0..n).map(|_| AtomicU32::new(0)).collect();
        Self {
            created: counters(cfg.packets),
            completed: counters(cfg.packets),
            consumed: counters(cfg.total_fragments()),
        }
    }
}

/// Result of one NIDS repetition.
#[derive(Debug)]
pub struct NidsRun {
    pub stats: RunStats,
    /// End-state audit failures; empty on a correct run.
    pub violations: Vec<String>,
    pub log_entries: usize,
}

/// Runs repetition `rep` of the pipeline and audits the end state.
pub fn run_nids(cfg: &NidsConfig, rep: usize) -> Result<NidsRun, BenchError> {
    cfg.validate()?;
    let config = Config {
        child_backoff: cfg.child_backoff,
        parent_backoff: cfg.parent_backoff,
        ..Config::default()
    };
    let history = cfg.record_history.then(|| Arc::new(History::new()));
    let stm = match &history {
        Some(h) => Stm::recording(config, h.clone()),
        None => Stm::new(config),
    };
    let s = Structures {
        pool: TxPool::new(cfg.pool_size),
        map: TxMap::new(),
        logs: (0..cfg.logs).map(|_| TxLog::new()).collect(),
    };
    let audit = Audit::new(cfg);
    let total = cfg.total_fragments() as u64;
    let warmup = total * 5 / 100;
    let done = AtomicU64::new(0);
    let timed_from: OnceLock<Instant> = OnceLock::new();
    let start_line = Barrier::new(cfg.producers + cfg.consumers);

    let tallies: Vec<ConsumerTally> = std::thread::scope(|scope| {
        for p in 0..cfg.producers {
            let (stm, s, start_line) = (&stm, &s, &start_line);
            scope.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(((rep as u64) << 32) | p as u64);
                start_line.wait();
                for packet in (p..cfg.packets).step_by(cfg.producers) {
                    for index in 0..cfg.fragments_per_packet {
                        let header = Header {
                            packet: packet as u64,
                            fragment: (packet * cfg.fragments_per_packet + index) as u64,
                            index: index as u32,
                            count: cfg.fragments_per_packet as u32,
                        };
                        let frag = encode_fragment(header, &mut rng);
                        produce(stm, &s.pool, frag, header.fragment);
                    }
                }
            });
        }
        let consumers: Vec<_> = (0..cfg.consumers)
            .map(|_| {
                let (stm, s, audit, done, timed_from, start_line) =
                    (&stm, &s, &audit, &done, &timed_from, &start_line);
                scope.spawn(move || {
                    let mut tally = ConsumerTally::default();
                    let mut pacer = Pacer::new(cfg.parent_backoff);
                    start_line.wait();
                    while done.load(Ordering::SeqCst) < total {
                        if s.pool.ready_count() == 0 {
                            std::thread::yield_now();
                            continue;
                        }
                        let mut tx = stm.begin().expect("consumer thread runs one transaction at a time");
                        let result = consume_one(&mut tx, s, cfg);
                        tally.tx.absorb(tx.stats());
                        match result {
                            Ok(Some(c)) => {
                                if tx.commit().is_err() {
                                    tally.parent_aborts += 1;
                                    pacer.pause();
                                    continue;
                                }
                                pacer = Pacer::new(cfg.parent_backoff);
                                let h = c.header;
                                audit.consumed[h.fragment as usize].fetch_add(1, Ordering::SeqCst);
                                if c.created {
                                    audit.created[h.packet as usize].fetch_add(1, Ordering::SeqCst);
                                }
                                if c.completed {
                                    audit.completed[h.packet as usize].fetch_add(1, Ordering::SeqCst);
                                }
                                if done.fetch_add(1, Ordering::SeqCst) + 1 == warmup.max(1) {
                                    let _ = timed_from.set(Instant::now());
                                }
                            }
                            // Lost the race for the last ready fragment.
                            Ok(None) => tx.abort(),
                            Err(_) => {
                                tx.abort();
                                tally.parent_aborts += 1;
                                pacer.pause();
                            }
                        }
                    }
                    tally
                })
            })
            .collect();
        consumers.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let wall = timed_from.get().map_or(Duration::ZERO, Instant::elapsed);

    let mut stats = RunStats {
        bench: "nids",
        policy: cfg.policy.name().to_string(),
        threads: cfg.consumers,
        rep,
        committed: total - warmup.max(1).min(total),
        parent_aborts: 0,
        child_aborts: 0,
        child_retries: 0,
        wall,
    };
    for t in &tallies {
        stats.parent_aborts += t.parent_aborts;
        stats.child_aborts += t.tx.child_aborts;
        stats.child_retries += t.tx.child_retries;
    }

    let mut violations = Vec::new();
    let once = |name: &str, counters: &[AtomicU32], out: &mut Vec<String>| {
        for (i, c) in counters.iter().enumerate() {
            let n = c.load(Ordering::SeqCst);
            if n != 1 {
                out.push(format!("{name} {i} seen {n} times"));
            }
        }
    };
    once("fragment consumed: fragment", &audit.consumed, &mut violations);
    once("packet entry created: packet", &audit.created, &mut violations);
    once("packet reassembled: packet", &audit.completed, &mut violations);

    let mut per_packet: BTreeMap<u64, u32> = BTreeMap::new();
    let mut log_entries = 0;
    for log in &s.logs {
        for (packet, _) in log.committed() {
            *per_packet.entry(packet).or_default() += 1;
            log_entries += 1;
        }
    }
    if log_entries != cfg.packets {
        violations.push(format!("{log_entries} log entries for {} packets", cfg.packets));
    }
    if let Some((p, n)) = per_packet.iter().find(|(_, n)| **n != 1) {
        violations.push(format!("packet {p} logged {n} times"));
    }
    if s.pool.ready_count() != 0 {
        violations.push(format!("{} fragments left in the pool", s.pool.ready_count()));
    }

    if let Some(h) = history {
        h.set_final(POOL, Snapshot::Pool(Vec::new()));
        for (i, log) in s.logs.iter().enumerate() {
            let packets = log.committed().into_iter().map(|(p, _)| p).collect();
            h.set_final(log_structure(i), Snapshot::Log(packets));
        }
        let committed = h.finish();
        violations.extend(check_structure_laws(&committed).iter().map(ToString::to_string));
    }

    Ok(NidsRun {
        stats,
        violations,
        log_entries,
    })
}

/// Places one fragment, waiting for a free slot when the pool is full.
fn produce(stm: &Stm, pool: &TxPool<Arc<[u8]>>, frag: Arc<[u8]>, id: u64) {
    loop {
        let mut tx = stm.begin().expect("producer thread runs one transaction at a time");
        match pool.try_produce(&mut tx, frag.clone()) {
            Ok(None) => {
                tx.record(Event::new(POOL, Op::Produce(id)));
                if tx.commit().is_ok() {
                    return;
                }
            }
            _ => tx.abort(),
        }
        std::thread::yield_now();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Header {
            packet: 77,
            fragment: 616,
            index: 5,
            count: 8,
        };
        let frag = encode_fragment(h, &mut rng);
        assert_eq!(frag.len(), HEADER_LEN + BODY_LEN);
        assert_eq!(parse_header(&frag), h);
    }

    #[test]
    fn config_violations_are_rejected() {
        let cfg = NidsConfig {
            packets: 0,
            ..NidsConfig::default()
        };
        assert!(run_nids(&cfg, 0).is_err());
    }

    #[test]
    fn small_runs_pass_the_audit() {
        for policy in [NidsPolicy::Flat, NidsPolicy::NestLog, NidsPolicy::NestMap, NidsPolicy::NestBoth] {
            for fragments in [1, 8] {
                let cfg = NidsConfig {
                    consumers: 3,
                    producers: 2,
                    fragments_per_packet: fragments,
                    packets: 100,
                    match_work: 100,
                    logs: 2,
                    pool_size: 8,
                    policy,
                    record_history: true,
                    ..NidsConfig::default()
                };
                let run = run_nids(&cfg, 0).unwrap();
                assert!(run.violations.is_empty(), "{policy:?}/{fragments}: {:?}", run.violations);
                assert_eq!(run.log_entries, 100);
            }
        }
    }
}
