//! Deterministic multi-worker map-reduce-style execution core.
//!
//! The engine provides the platform operator set (map, filter, flat_map,
//! reduce, join, repartition, subtract-by-key, count, collect, plus
//! zip-with-index, broadcast, and cache) over [`Dataset`] handles, together
//! with explicit memory accounting and data-movement metering:
//!
//! * the **driver** is the single orchestration locus; collected data is
//!   charged against `driver_mem_cap` and released only by an explicit
//!   [`Engine::driver_release`];
//! * **workers** execute partition logic concurrently; cached partitions and
//!   oversized broadcasts are charged against `worker_mem_cap`;
//! * [`RunStats`] snapshots all counters. Everything except `wall_ms` is
//!   reproducible for a fixed [`ExecConfig`] and input.
//!
//! Operators are lazy: they append to the dataset lineage and execute only
//! when an action (reduce / collect / count) runs. Caching materializes a
//! node once and re-serves it to later traversals.

mod dataset;

pub use dataset::{Dataset, JoinKey};

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::measure::Measurable;

/// Execution parameters for one engine instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecConfig {
    pub num_workers: usize,
    pub num_partitions: usize,
    /// Driver memory cap in bytes; 0 means unlimited.
    pub driver_mem_cap: u64,
    /// Per-worker memory cap in bytes; 0 means unlimited.
    pub worker_mem_cap: u64,
    /// Seed consumed by randomized operators built on top of the engine.
    pub seed: u64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            num_workers: 4,
            num_partitions: 4,
            driver_mem_cap: 0,
            worker_mem_cap: 0,
            seed: 0,
        }
    }
}

impl ExecConfig {
    fn validate(&self) -> Result<(), EngineError> {
        if self.num_workers < 1 {
            return Err(EngineError::InvalidConfig("num_workers must be >= 1".into()));
        }
        if self.num_partitions < 1 {
            return Err(EngineError::InvalidConfig(
                "num_partitions must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Errors surfaced by engine operators.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    /// A user function failed; `index` is the failing element's global index.
    #[error("user function failed at element {index}: {message}")]
    UserFn { index: u64, message: String },
    #[error("memory cap exceeded in {context}: needs {needed} bytes, cap is {cap}")]
    MemoryExceeded {
        context: String,
        needed: u64,
        cap: u64,
    },
    #[error("reduce on an empty dataset with no identity")]
    EmptyDataset,
}

/// Per-run metering snapshot.
///
/// `wall_ms` is informational only; every other field is deterministic for
/// a fixed config and input.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RunStats {
    /// Highest driver-resident byte count observed.
    pub driver_highwater: u64,
    /// Bytes moved by repartition / join / subtract-by-key.
    pub shuffle_bytes: u64,
    /// Record bytes crossing pipeline module boundaries.
    pub flowed_bytes: u64,
    /// Bytes delivered to workers by broadcasts.
    pub broadcast_bytes: u64,
    /// Number of engine operators executed.
    pub stage_count: u64,
    /// Elapsed wall clock, reported but never asserted.
    pub wall_ms: u64,
}

/// An immutable value delivered to every worker.
#[derive(Debug, Clone)]
pub struct Broadcast<T> {
    value: Arc<T>,
    size_bytes: u64,
    charge_count: usize,
}

impl<T> Broadcast<T> {
    pub fn value(&self) -> &T {
        &self.value
    }

    pub fn size_bytes(&self) -> u64 {
        self.size_bytes
    }

    /// Number of worker deliveries metered for this broadcast.
    pub fn charge_count(&self) -> usize {
        self.charge_count
    }
}

pub(crate) struct EngineInner {
    config: ExecConfig,
    pool: rayon::ThreadPool,
    started: Instant,
    stage_seq: AtomicU64,
    shuffle_bytes: AtomicU64,
    flowed_bytes: AtomicU64,
    broadcast_bytes: AtomicU64,
    driver_resident: AtomicU64,
    driver_highwater: AtomicU64,
    worker_resident: Vec<AtomicU64>,
    instrument_on: AtomicBool,
    instrument: Mutex<Vec<String>>,
}

/// Cheaply cloneable handle to one execution context.
///
/// Driver logic (actions, charges, releases) is expected to run on a single
/// logical thread; metering counters use atomic aggregation so worker-side
/// updates never lose increments.
#[derive(Clone)]
pub struct Engine {
    pub(crate) inner: Arc<EngineInner>,
}

impl Engine {
    pub fn new(config: ExecConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.num_workers)
            .build()
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
        let worker_resident = (0..config.num_workers).map(|_| AtomicU64::new(0)).collect();
        Ok(Self {
            inner: Arc::new(EngineInner {
                config,
                pool,
                started: Instant::now(),
                stage_seq: AtomicU64::new(0),
                shuffle_bytes: AtomicU64::new(0),
                flowed_bytes: AtomicU64::new(0),
                broadcast_bytes: AtomicU64::new(0),
                driver_resident: AtomicU64::new(0),
                driver_highwater: AtomicU64::new(0),
                worker_resident,
                instrument_on: AtomicBool::new(false),
                instrument: Mutex::new(Vec::new()),
            }),
        })
    }

    pub fn config(&self) -> &ExecConfig {
        &self.inner.config
    }

    /// Broadcast a value to all workers, metering one delivery per worker.
    pub fn broadcast<T: Measurable>(&self, value: T) -> Result<Broadcast<T>, EngineError> {
        let size = value.size_bytes();
        let cap = self.inner.config.worker_mem_cap;
        if cap > 0 && size > cap {
            return Err(EngineError::MemoryExceeded {
                context: "broadcast".into(),
                needed: size,
                cap,
            });
        }
        let workers = self.inner.config.num_workers;
        self.inner
            .broadcast_bytes
            .fetch_add(size * workers as u64, Ordering::Relaxed);
        Ok(Broadcast {
            value: Arc::new(value),
            size_bytes: size,
            charge_count: workers,
        })
    }

    /// Charge bytes against the driver cap. Fails without charging when the
    /// cap would be exceeded.
    pub fn driver_charge(&self, bytes: u64, context: &str) -> Result<(), EngineError> {
        let cap = self.inner.config.driver_mem_cap;
        let resident = self.inner.driver_resident.load(Ordering::Relaxed);
        let needed = resident + bytes;
        if cap > 0 && needed > cap {
            return Err(EngineError::MemoryExceeded {
                context: context.to_string(),
                needed,
                cap,
            });
        }
        self.inner.driver_resident.store(needed, Ordering::Relaxed);
        self.inner
            .driver_highwater
            .fetch_max(needed, Ordering::Relaxed);
        Ok(())
    }

    /// Release driver-resident bytes previously charged.
    pub fn driver_release(&self, bytes: u64) {
        let resident = self.inner.driver_resident.load(Ordering::Relaxed);
        self.inner
            .driver_resident
            .store(resident.saturating_sub(bytes), Ordering::Relaxed);
    }

    pub fn driver_resident(&self) -> u64 {
        self.inner.driver_resident.load(Ordering::Relaxed)
    }

    /// Account record bytes crossing a pipeline module boundary.
    pub fn add_flowed_bytes(&self, bytes: u64) {
        self.inner.flowed_bytes.fetch_add(bytes, Ordering::Relaxed);
    }

    pub(crate) fn add_shuffle_bytes(&self, bytes: u64) {
        self.inner.shuffle_bytes.fetch_add(bytes, Ordering::Relaxed);
    }

    /// Charge cached partition bytes to the worker that owns the partition.
    pub(crate) fn worker_charge(
        &self,
        partition: usize,
        bytes: u64,
        context: &str,
    ) -> Result<(), EngineError> {
        let worker = partition % self.inner.config.num_workers;
        let cap = self.inner.config.worker_mem_cap;
        let resident = self.inner.worker_resident[worker].load(Ordering::Relaxed) + bytes;
        if cap > 0 && resident > cap {
            return Err(EngineError::MemoryExceeded {
                context: format!("{context} (worker {worker})"),
                needed: resident,
                cap,
            });
        }
        self.inner.worker_resident[worker].store(resident, Ordering::Relaxed);
        Ok(())
    }

    pub(crate) fn record_stage(&self, op: &str, in_count: usize, out_count: usize, shuffle: u64) {
        let stage = self.inner.stage_seq.fetch_add(1, Ordering::Relaxed) + 1;
        if self.inner.instrument_on.load(Ordering::Relaxed) {
            let line = format!("stage={stage} op={op} in={in_count} out={out_count} shuffle={shuffle}");
            self.inner.instrument.lock().unwrap().push(line);
        }
    }

    /// Turn on the per-stage instrumentation log.
    pub fn enable_instrumentation(&self) {
        self.inner.instrument_on.store(true, Ordering::Relaxed);
    }

    /// Drain the instrumentation log collected so far.
    pub fn take_instrument_lines(&self) -> Vec<String> {
        std::mem::take(&mut *self.inner.instrument.lock().unwrap())
    }

    /// Snapshot all metering counters.
    pub fn stats(&self) -> RunStats {
        RunStats {
            driver_highwater: self.inner.driver_highwater.load(Ordering::Relaxed),
            shuffle_bytes: self.inner.shuffle_bytes.load(Ordering::Relaxed),
            flowed_bytes: self.inner.flowed_bytes.load(Ordering::Relaxed),
            broadcast_bytes: self.inner.broadcast_bytes.load(Ordering::Relaxed),
            stage_count: self.inner.stage_seq.load(Ordering::Relaxed),
            wall_ms: self.inner.started.elapsed().as_millis() as u64,
        }
    }

    /// Run `f` over each partition on the worker pool, preserving partition
    /// order in the result.
    pub(crate) fn run_partitions<A, B, F>(&self, parts: &[A], f: F) -> Vec<B>
    where
        A: Sync,
        B: Send,
        F: Fn(usize, &A) -> B + Send + Sync,
    {
        use rayon::prelude::*;
        self.inner
            .pool
            .install(|| parts.par_iter().enumerate().map(|(i, p)| f(i, p)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(Engine::new(ExecConfig {
            num_workers: 0,
            ..ExecConfig::default()
        })
        .is_err());
        assert!(Engine::new(ExecConfig {
            num_partitions: 0,
            ..ExecConfig::default()
        })
        .is_err());
        assert!(Engine::new(ExecConfig::default()).is_ok());
    }

    #[test]
    fn broadcast_meters_per_worker() {
        let engine = Engine::new(ExecConfig {
            num_workers: 8,
            ..ExecConfig::default()
        })
        .unwrap();
        let hist = vec![0.0f64; 256];
        let size = hist.size_bytes();
        let handle = engine.broadcast(hist).unwrap();
        assert_eq!(handle.charge_count(), 8);
        assert_eq!(engine.stats().broadcast_bytes, size * 8);
    }

    #[test]
    fn broadcast_zero_size_zero_charge() {
        let engine = Engine::new(ExecConfig::default()).unwrap();
        engine.broadcast(()).unwrap();
        assert_eq!(engine.stats().broadcast_bytes, 0);
    }

    #[test]
    fn broadcast_respects_worker_cap() {
        let engine = Engine::new(ExecConfig {
            worker_mem_cap: 10,
            ..ExecConfig::default()
        })
        .unwrap();
        let err = engine.broadcast(vec![0u8; 64]).unwrap_err();
        assert!(matches!(err, EngineError::MemoryExceeded { .. }));
    }

    #[test]
    fn driver_charge_checks_before_charging() {
        let engine = Engine::new(ExecConfig {
            driver_mem_cap: 100,
            ..ExecConfig::default()
        })
        .unwrap();
        engine.driver_charge(60, "a").unwrap();
        let err = engine.driver_charge(50, "b").unwrap_err();
        assert!(matches!(err, EngineError::MemoryExceeded { needed: 110, cap: 100, .. }));
        // Failed charge must not stick.
        assert_eq!(engine.driver_resident(), 60);
        engine.driver_release(60);
        assert_eq!(engine.driver_resident(), 0);
        // High-water keeps the successful peak only.
        assert_eq!(engine.stats().driver_highwater, 60);
    }
}
