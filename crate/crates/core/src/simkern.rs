//! Deterministic discrete-event kernel.
//!
//! Virtual time is integer microseconds ("true time"). Events are totally
//! ordered by (fire_at, sequence), where sequence is the insertion counter,
//! so simultaneous events always dequeue in the order they were scheduled.
//! Per-node clocks model offset + drift relative to true time.
//!
//! Randomness: a scenario has one root seed; every stochastic consumer
//! derives its own ChaCha stream from (root seed, label, indices) via
//! SHA-256, so no consumer's draw count or evaluation order can perturb
//! another's.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Simulated true time in microsecond ticks since scenario start.
pub type SimTime = u64;

/// Index of a simulated node (robot or edge node) within a scenario.
pub type NodeId = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("event scheduled in the past: fire_at={fire_at} < now={now}")]
    ScheduleInPast { fire_at: SimTime, now: SimTime },
}

/// Payloads must describe themselves for the event log.
pub trait EventPayload {
    fn kind(&self) -> &'static str;
    /// Short human-readable summary logged next to the event; keep it free of
    /// commas so the CSV trace stays single-field.
    fn digest(&self) -> String {
        String::new()
    }
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub sequence: u64,
    pub target: NodeId,
    pub payload: P,
}

/// One row of the kernel's event log (written as CSV by the runner).
#[derive(Debug, Clone)]
pub struct EventRecord {
    pub true_time_us: SimTime,
    pub node: NodeId,
    pub kind: &'static str,
    pub detail: String,
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.true_time_us, self.node, self.kind, self.detail
        )
    }
}

// Heap entry holds the ordering key only; payloads live in a side table so
// the heap stays small and the ordering is self-evidently total.
#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct HeapKey {
    fire_at: SimTime,
    sequence: u64,
}

pub struct Kernel<P> {
    now: SimTime,
    next_sequence: u64,
    heap: BinaryHeap<Reverse<HeapKey>>,
    // Indexed by sequence; slots are taken on pop. A Vec (not a map) keeps
    // memory proportional to total events, which scenario sizes keep modest.
    pending: Vec<Option<(SimTime, NodeId, P)>>,
    trace: Option<Vec<EventRecord>>,
}

impl<P: EventPayload> Kernel<P> {
    pub fn new() -> Self {
        Kernel {
            now: 0,
            next_sequence: 0,
            heap: BinaryHeap::new(),
            pending: Vec::new(),
            trace: None,
        }
    }

    /// Enable the event log (one record per processed event).
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Enqueue an event. Events with equal fire_at dequeue in schedule order.
    pub fn schedule(
        &mut self,
        fire_at: SimTime,
        target: NodeId,
        payload: P,
    ) -> Result<u64, KernelError> {
        if fire_at < self.now {
            return Err(KernelError::ScheduleInPast {
                fire_at,
                now: self.now,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Reverse(HeapKey { fire_at, sequence }));
        self.pending.push(Some((fire_at, target, payload)));
        debug_assert_eq!(self.pending.len() as u64, self.next_sequence);
        Ok(sequence)
    }

    /// Dequeue the next event and advance true time to it.
    pub fn pop(&mut self) -> Option<Event<P>> {
        let Reverse(key) = self.heap.pop()?;
        let (fire_at, target, payload) = self.pending[key.sequence as usize]
            .take()
            .expect("heap key without pending payload");
        debug_assert!(fire_at >= self.now, "time went backward");
        self.now = fire_at;
        if let Some(trace) = &mut self.trace {
            trace.push(EventRecord {
                true_time_us: fire_at,
                node: target,
                kind: payload.kind(),
                detail: payload.digest(),
            });
        }
        Some(Event {
            fire_at,
            sequence: key.sequence,
            target,
            payload,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Drain the event log accumulated so far (empty when tracing is off).
    pub fn take_trace(&mut self) -> Vec<EventRecord> {
        self.trace.take().unwrap_or_default()
    }
}

impl<P: EventPayload> Default for Kernel<P> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node clock: `local = true + offset + drift·(true − last_sync)/1e6`.
///
/// `offset_us` is (local − true) at the last sync instant; `drift_ppm` is the
/// dimensionless rate error in parts per million. Results are rounded
/// half-up to whole microseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeClock {
    pub offset_us: i64,
    pub drift_ppm: f64,
    pub last_sync: SimTime,
}

impl NodeClock {
    pub fn perfect() -> Self {
        NodeClock {
            offset_us: 0,
            drift_ppm: 0.0,
            last_sync: 0,
        }
    }

    /// Local reading of this clock at true time `t`, in signed microseconds.
    pub fn local_time(&self, t: SimTime) -> i64 {
        let elapsed = t.saturating_sub(self.last_sync) as f64;
        round_half_up(t as f64 + self.offset_us as f64 + self.drift_ppm * elapsed / 1e6)
    }

    /// True time at which this clock reads `local`. Inverse of `local_time`
    /// up to the microsecond rounding; strictly increasing in `local` for
    /// |drift| < 10⁶ ppm.
    pub fn true_time_for_local(&self, local: i64) -> SimTime {
        let rate = 1.0 + self.drift_ppm / 1e6;
        let t = (local as f64 - self.offset_us as f64
            + self.drift_ppm * self.last_sync as f64 / 1e6)
            / rate;
        round_half_up(t).max(0) as SimTime
    }

    /// Fold accumulated drift into the offset and apply a sync correction
    /// (subtracted: a positive correction means this clock reads ahead).
    pub fn resync(&mut self, now: SimTime, correction_us: i64) {
        let elapsed = now.saturating_sub(self.last_sync) as f64;
        self.offset_us += round_half_up(self.drift_ppm * elapsed / 1e6);
        self.offset_us -= correction_us;
        self.last_sync = now;
    }
}

/// Round to the nearest integer, halves toward +∞ (documented tie rule for
/// every sub-microsecond quantity in the model).
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Derive an independent ChaCha stream from the scenario root seed, a
/// consumer label, and per-consumer indices. SHA-256 keys the stream, so
/// distinct (label, indices) never collide in practice and the mapping is
/// stable across platforms.
pub fn derive_stream(root_seed: u64, label: &str, indices: &[u64]) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    for ix in indices {
        hasher.update(ix.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(seed)
}

/// Fixed-size worker pool for data-parallel phases. Thin wrapper so callers
/// state their worker count explicitly and tests can assert count-independence.
pub struct WorkerPool {
    pool: rayon::ThreadPool,
    threads: usize,
}

impl WorkerPool {
    pub fn new(threads: usize) -> Self {
        let threads = threads.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("worker pool construction");
        WorkerPool { pool, threads }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        self.pool.install(op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[derive(Debug)]
    struct Tick(&'static str);

    impl EventPayload for Tick {
        fn kind(&self) -> &'static str {
            self.0
        }
    }

    #[test]
    fn equal_fire_times_dequeue_in_schedule_order() {
        let mut k: Kernel<Tick> = Kernel::new();
        k.schedule(5, 0, Tick("first")).unwrap();
        k.schedule(5, 0, Tick("second")).unwrap();
        k.schedule(3, 0, Tick("early")).unwrap();
        let order: Vec<_> = std::iter::from_fn(|| k.pop())
            .map(|e| e.payload.0)
            .collect();
        assert_eq!(order, vec!["early", "first", "second"]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut k: Kernel<Tick> = Kernel::new();
        k.schedule(3, 0, Tick("a")).unwrap();
        k.pop();
        assert_eq!(k.now(), 3);
        assert_eq!(
            k.schedule(2, 0, Tick("late")),
            Err(KernelError::ScheduleInPast { fire_at: 2, now: 3 })
        );
        // Scheduling exactly at `now` is allowed (zero-delay follow-ups).
        assert!(k.schedule(3, 0, Tick("same-tick")).is_ok());
    }

    #[test]
    fn time_never_goes_backward() {
        let mut k: Kernel<Tick> = Kernel::new();
        for t in [9u64, 1, 4, 4, 7, 0] {
            k.schedule(t, 0, Tick("t")).unwrap();
        }
        let mut last = 0;
        while let Some(e) = k.pop() {
            assert!(e.fire_at >= last);
            last = e.fire_at;
        }
    }

    #[test]
    fn perfect_clock_reads_true_time() {
        let c = NodeClock::perfect();
        for t in [0u64, 1, 1000, 1_000_000] {
            assert_eq!(c.local_time(t), t as i64);
        }
    }

    #[test]
    fn pure_offset_shifts_reading() {
        let c = NodeClock {
            offset_us: 50,
            drift_ppm: 0.0,
            last_sync: 0,
        };
        assert_eq!(c.local_time(1000), 1050);
    }

    #[test]
    fn drift_accumulates_per_formula() {
        // +100 ppm over one simulated second → +100 µs.
        let c = NodeClock {
            offset_us: 0,
            drift_ppm: 100.0,
            last_sync: 0,
        };
        assert_eq!(c.local_time(1_000_000), 1_000_100);
    }

    #[test]
    fn local_and_true_roundtrip_within_a_microsecond() {
        let c = NodeClock {
            offset_us: -37,
            drift_ppm: 83.0,
            last_sync: 12_345,
        };
        for t in [12_345u64, 50_000, 1_000_000, 987_654_321] {
            let local = c.local_time(t);
            let back = c.true_time_for_local(local);
            assert!((back as i64 - t as i64).abs() <= 1, "t={t} back={back}");
        }
    }

    #[test]
    fn resync_folds_drift_and_applies_correction() {
        let mut c = NodeClock {
            offset_us: 10,
            drift_ppm: 100.0,
            last_sync: 0,
        };
        // At t=1s the clock reads +110 µs; a measured correction of +110
        // brings the post-sync reading back to true time.
        c.resync(1_000_000, 110);
        assert_eq!(c.local_time(1_000_000), 1_000_000);
        assert_eq!(c.last_sync, 1_000_000);
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(2.4999), 2);
        assert_eq!(round_half_up(-2.5), -2);
        assert_eq!(round_half_up(-2.51), -3);
        assert_eq!(round_half_up(0.0), 0);
    }

    #[test]
    fn derived_streams_are_stable_and_distinct() {
        let mut a = derive_stream(7, "unit.test", &[1, 2]);
        let mut a2 = derive_stream(7, "unit.test", &[1, 2]);
        let mut b = derive_stream(7, "unit.test", &[1, 3]);
        let mut c = derive_stream(8, "unit.test", &[1, 2]);
        let va: u64 = a.random();
        assert_eq!(va, a2.random::<u64>(), "same key, same stream");
        assert_ne!(va, b.random::<u64>(), "index changes the stream");
        assert_ne!(va, c.random::<u64>(), "seed changes the stream");
    }

    #[test]
    fn event_log_records_processed_events() {
        let mut k: Kernel<Tick> = Kernel::new();
        k.enable_trace();
        k.schedule(2, 4, Tick("slot_start")).unwrap();
        k.schedule(1, 3, Tick("frame_arrival")).unwrap();
        while k.pop().is_some() {}
        let rows = k.take_trace();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].kind, "frame_arrival");
        assert_eq!(rows[0].node, 3);
        assert_eq!(rows[1].true_time_us, 2);
    }
}
