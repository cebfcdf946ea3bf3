//! Lazy, partitioned dataset handles and the operator set over them.
//!
//! Elements carry a hidden global sequence number so that the original
//! order survives filtering and uneven partition layouts: `collect` merges
//! partitions by sequence, `zip_with_index` ranks by it, and repartition /
//! join / subtract rebuild a canonical round-robin layout with fresh
//! sequence numbers.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use super::{Engine, EngineError};
use crate::measure::Measurable;

/// Requirements on element types carried by a [`Dataset`].
pub trait Data: Measurable + Clone + Send + Sync + 'static {}
impl<T: Measurable + Clone + Send + Sync + 'static> Data for T {}

/// Requirements on join keys.
pub trait JoinKey: Data + Ord + Hash + Eq {}
impl<T: Data + Ord + Hash + Eq> JoinKey for T {}

type Part<T> = Vec<(u64, T)>;
type ComputeFn<T> = Box<dyn Fn(&Engine) -> Result<Vec<Part<T>>, EngineError> + Send + Sync>;

struct Node<T> {
    lineage: Vec<String>,
    compute: ComputeFn<T>,
    cache_on: AtomicBool,
    cached: Mutex<Option<Arc<Vec<Part<T>>>>>,
}

/// A partitioned, lazily described collection executed by an [`Engine`].
///
/// Transformations append to the lineage; actions (`reduce`, `collect`,
/// `count`) trigger execution. Handles are cheap to clone and safe to share.
pub struct Dataset<T: Data> {
    engine: Engine,
    node: Arc<Node<T>>,
}

impl<T: Data> Clone for Dataset<T> {
    fn clone(&self) -> Self {
        Self {
            engine: self.engine.clone(),
            node: self.node.clone(),
        }
    }
}

impl<T: Data> std::fmt::Debug for Dataset<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("lineage", &self.node.lineage)
            .field("cached", &self.is_cached())
            .finish()
    }
}

/// Round-robin placement by global index: element `i` goes to partition
/// `i % parts`, preserving index order inside each partition.
fn place_round_robin<T>(items: Vec<T>, parts: usize) -> Vec<Part<T>> {
    let mut out: Vec<Part<T>> = (0..parts).map(|_| Vec::new()).collect();
    for (i, item) in items.into_iter().enumerate() {
        out[i % parts].push((i as u64, item));
    }
    out
}

/// Flatten partitions into global order (ascending sequence).
fn into_global_order<T: Clone>(parts: &[Part<T>]) -> Vec<(u64, T)> {
    let mut all: Vec<(u64, T)> = parts.iter().flatten().cloned().collect();
    all.sort_by_key(|(seq, _)| *seq);
    all
}

fn element_count<T>(parts: &[Part<T>]) -> usize {
    parts.iter().map(Vec::len).sum()
}

impl Engine {
    /// Distribute `items` round-robin by global index into
    /// `num_partitions` partitions.
    pub fn parallelize<T: Data>(&self, items: Vec<T>) -> Dataset<T> {
        let parts = self.config().num_partitions;
        let placed = Arc::new(place_round_robin(items, parts));
        Dataset {
            engine: self.clone(),
            node: Arc::new(Node {
                lineage: vec!["parallelize".to_string()],
                compute: Box::new(move |_| Ok(placed.as_ref().clone())),
                cache_on: AtomicBool::new(false),
                cached: Mutex::new(None),
            }),
        }
    }
}

impl<T: Data> Dataset<T> {
    fn derive<U: Data>(
        &self,
        op: &str,
        compute: impl Fn(&Engine) -> Result<Vec<Part<U>>, EngineError> + Send + Sync + 'static,
    ) -> Dataset<U> {
        let mut lineage = self.node.lineage.clone();
        lineage.push(op.to_string());
        Dataset {
            engine: self.engine.clone(),
            node: Arc::new(Node {
                lineage,
                compute: Box::new(compute),
                cache_on: AtomicBool::new(false),
                cached: Mutex::new(None),
            }),
        }
    }

    /// Execute the lineage (or serve the cache) and return the partitions.
    fn materialize(&self) -> Result<Arc<Vec<Part<T>>>, EngineError> {
        if let Some(cached) = self.node.cached.lock().unwrap().as_ref() {
            return Ok(cached.clone());
        }
        let parts = (self.node.compute)(&self.engine)?;
        let parts = Arc::new(parts);
        if self.node.cache_on.load(Ordering::Relaxed) {
            let mut slot = self.node.cached.lock().unwrap();
            if slot.is_none() {
                for (p, part) in parts.iter().enumerate() {
                    let bytes: u64 = part.iter().map(|(_, v)| v.size_bytes()).sum();
                    self.engine.worker_charge(p, bytes, "cache")?;
                }
                *slot = Some(parts.clone());
            }
        }
        Ok(parts)
    }

    /// Operator descriptors applied so far, oldest first.
    pub fn lineage(&self) -> Vec<String> {
        self.node.lineage.clone()
    }

    /// Whether this handle is marked for materialization reuse.
    pub fn is_cached(&self) -> bool {
        self.node.cache_on.load(Ordering::Relaxed)
    }

    /// Partition contents in partition order. Triggers execution; intended
    /// for inspection and tests.
    pub fn partition_contents(&self) -> Result<Vec<Vec<T>>, EngineError> {
        let parts = self.materialize()?;
        Ok(parts
            .iter()
            .map(|p| p.iter().map(|(_, v)| v.clone()).collect())
            .collect())
    }

    /// Element-wise map. `f` must be pure.
    pub fn map<U: Data>(&self, f: impl Fn(&T) -> U + Send + Sync + 'static) -> Dataset<U> {
        self.try_map(move |x| Ok(f(x)))
    }

    /// Element-wise map with a fallible user function. A failure reports
    /// the failing element's global index.
    pub fn try_map<U: Data>(
        &self,
        f: impl Fn(&T) -> Result<U, String> + Send + Sync + 'static,
    ) -> Dataset<U> {
        let parent = self.clone();
        let f = Arc::new(f);
        self.derive("map", move |engine| {
            let input = parent.materialize()?;
            let in_count = element_count(&input);
            let results: Vec<Result<Part<U>, (u64, String)>> =
                engine.run_partitions(&input, |_, part| {
                    let mut out = Vec::with_capacity(part.len());
                    for (seq, v) in part {
                        match f(v) {
                            Ok(u) => out.push((*seq, u)),
                            Err(msg) => return Err((*seq, msg)),
                        }
                    }
                    Ok(out)
                });
            let parts = collect_partition_results(results)?;
            engine.record_stage("map", in_count, element_count(&parts), 0);
            Ok(parts)
        })
    }

    /// Keep elements where `p` is true; relative order and partition layout
    /// are unchanged.
    pub fn filter(&self, p: impl Fn(&T) -> bool + Send + Sync + 'static) -> Dataset<T> {
        self.try_filter(move |x| Ok(p(x)))
    }

    pub fn try_filter(
        &self,
        p: impl Fn(&T) -> Result<bool, String> + Send + Sync + 'static,
    ) -> Dataset<T> {
        let parent = self.clone();
        let p = Arc::new(p);
        self.derive("filter", move |engine| {
            let input = parent.materialize()?;
            let in_count = element_count(&input);
            let results: Vec<Result<Part<T>, (u64, String)>> =
                engine.run_partitions(&input, |_, part| {
                    let mut out = Vec::new();
                    for (seq, v) in part {
                        match p(v) {
                            Ok(true) => out.push((*seq, v.clone())),
                            Ok(false) => {}
                            Err(msg) => return Err((*seq, msg)),
                        }
                    }
                    Ok(out)
                });
            let parts = collect_partition_results(results)?;
            engine.record_stage("filter", in_count, element_count(&parts), 0);
            Ok(parts)
        })
    }

    /// Map each element to a sequence; outputs are concatenated in input
    /// order and stay in the input element's partition.
    pub fn flat_map<U: Data>(
        &self,
        f: impl Fn(&T) -> Vec<U> + Send + Sync + 'static,
    ) -> Dataset<U> {
        self.try_flat_map(move |x| Ok(f(x)))
    }

    pub fn try_flat_map<U: Data>(
        &self,
        f: impl Fn(&T) -> Result<Vec<U>, String> + Send + Sync + 'static,
    ) -> Dataset<U> {
        let parent = self.clone();
        let f = Arc::new(f);
        self.derive("flat_map", move |engine| {
            let input = parent.materialize()?;
            let in_count = element_count(&input);
            // Per input element: (parent seq, outputs).
            type Expanded<U> = Vec<(u64, Vec<U>)>;
            let results: Vec<Result<Expanded<U>, (u64, String)>> =
                engine.run_partitions(&input, |_, part| {
                    let mut out = Vec::with_capacity(part.len());
                    for (seq, v) in part {
                        match f(v) {
                            Ok(items) => out.push((*seq, items)),
                            Err(msg) => return Err((*seq, msg)),
                        }
                    }
                    Ok(out)
                });
            let expanded = collect_partition_results(results)?;
            // Renumber outputs densely in parent-sequence order so global
            // order remains "concatenation of outputs in input order".
            let mut sizes: Vec<(u64, usize)> = expanded
                .iter()
                .flatten()
                .map(|(seq, items)| (*seq, items.len()))
                .collect();
            sizes.sort_by_key(|(seq, _)| *seq);
            let mut starts: BTreeMap<u64, u64> = BTreeMap::new();
            let mut next = 0u64;
            for (seq, len) in sizes {
                starts.insert(seq, next);
                next += len as u64;
            }
            let parts: Vec<Part<U>> = expanded
                .into_iter()
                .map(|part| {
                    let mut out = Vec::new();
                    for (seq, items) in part {
                        let base = starts[&seq];
                        for (j, item) in items.into_iter().enumerate() {
                            out.push((base + j as u64, item));
                        }
                    }
                    out
                })
                .collect();
            engine.record_stage("flat_map", in_count, element_count(&parts), 0);
            Ok(parts)
        })
    }

    /// Pair each element with its global index 0..n-1 in global order.
    pub fn zip_with_index(&self) -> Dataset<(T, u64)> {
        let parent = self.clone();
        self.derive("zip_with_index", move |engine| {
            let input = parent.materialize()?;
            let in_count = element_count(&input);
            let mut seqs: Vec<u64> = input.iter().flatten().map(|(s, _)| *s).collect();
            seqs.sort_unstable();
            let rank: BTreeMap<u64, u64> = seqs
                .into_iter()
                .enumerate()
                .map(|(i, s)| (s, i as u64))
                .collect();
            let parts: Vec<Part<(T, u64)>> = input
                .iter()
                .map(|part| {
                    part.iter()
                        .map(|(seq, v)| (*seq, (v.clone(), rank[seq])))
                        .collect()
                })
                .collect();
            engine.record_stage("zip_with_index", in_count, in_count, 0);
            Ok(parts)
        })
    }

    /// Round-robin redistribution into `n` partitions. Every element counts
    /// toward `shuffle_bytes`, even when its placement does not change.
    pub fn repartition(&self, n: usize) -> Dataset<T> {
        let parent = self.clone();
        self.derive("repartition", move |engine| {
            let n = n.max(1);
            let input = parent.materialize()?;
            let ordered = into_global_order(&input);
            let moved: u64 = ordered.iter().map(|(_, v)| v.size_bytes()).sum();
            engine.add_shuffle_bytes(moved);
            let items: Vec<T> = ordered.into_iter().map(|(_, v)| v).collect();
            let count = items.len();
            let parts = place_round_robin(items, n);
            engine.record_stage("repartition", count, count, moved);
            Ok(parts)
        })
    }

    /// Mark this dataset for materialization reuse. Idempotent: caching an
    /// already-cached handle is a no-op and the worker-memory charge is
    /// applied once, at first materialization.
    pub fn cache(&self) -> Dataset<T> {
        self.node.cache_on.store(true, Ordering::Relaxed);
        self.clone()
    }

    /// Fold with an identity element. `op` must be associative and
    /// commutative; the result is independent of partitioning.
    ///
    /// Partials are folded per partition on workers; the driver is charged
    /// transiently for each partial plus the final value.
    pub fn reduce(
        &self,
        identity: T,
        op: impl Fn(&T, &T) -> T + Send + Sync + 'static,
    ) -> Result<T, EngineError> {
        self.reduce_inner(Some(identity), op)
    }

    /// Fold without an identity; fails on an empty dataset.
    pub fn reduce_first(
        &self,
        op: impl Fn(&T, &T) -> T + Send + Sync + 'static,
    ) -> Result<T, EngineError> {
        self.reduce_inner(None, op)
    }

    fn reduce_inner(
        &self,
        identity: Option<T>,
        op: impl Fn(&T, &T) -> T + Send + Sync + 'static,
    ) -> Result<T, EngineError> {
        let input = self.materialize()?;
        let in_count = element_count(&input);
        let op = Arc::new(op);
        let partials: Vec<Option<T>> = self.engine.run_partitions(&input, |_, part| {
            let mut acc: Option<T> = None;
            for (_, v) in part {
                acc = Some(match acc {
                    None => v.clone(),
                    Some(a) => op(&a, v),
                });
            }
            acc
        });
        let mut charged = 0u64;
        let mut acc = identity;
        for partial in partials.into_iter().flatten() {
            let bytes = partial.size_bytes();
            if let Err(e) = self.engine.driver_charge(bytes, "reduce partials") {
                self.engine.driver_release(charged);
                return Err(e);
            }
            charged += bytes;
            acc = Some(match acc {
                None => partial,
                Some(a) => op(&a, &partial),
            });
        }
        let result = match acc {
            Some(v) => v,
            None => {
                self.engine.driver_release(charged);
                return Err(EngineError::EmptyDataset);
            }
        };
        let final_bytes = result.size_bytes();
        if let Err(e) = self.engine.driver_charge(final_bytes, "reduce result") {
            self.engine.driver_release(charged);
            return Err(e);
        }
        // Partials and the result are transient; ownership passes to the
        // caller, so the charge is dropped once the fold completes.
        self.engine.driver_release(charged + final_bytes);
        self.engine.record_stage("reduce", in_count, 1, 0);
        Ok(result)
    }

    /// Materialize all elements at the driver in global order.
    ///
    /// The driver stays charged for the collected bytes until an explicit
    /// [`Engine::driver_release`].
    pub fn collect(&self) -> Result<Vec<T>, EngineError> {
        let input = self.materialize()?;
        let in_count = element_count(&input);
        let ordered = into_global_order(&input);
        let bytes: u64 = ordered.iter().map(|(_, v)| v.size_bytes()).sum();
        self.engine.driver_charge(bytes, "collect")?;
        self.engine.record_stage("collect", in_count, in_count, 0);
        Ok(ordered.into_iter().map(|(_, v)| v).collect())
    }

    /// Exact element count. No driver data charge.
    pub fn count(&self) -> Result<usize, EngineError> {
        let input = self.materialize()?;
        let n = element_count(&input);
        self.engine.record_stage("count", n, 1, 0);
        Ok(n)
    }

    /// Total serialized size of all elements, by the crate's accounting.
    pub fn total_bytes(&self) -> Result<u64, EngineError> {
        let input = self.materialize()?;
        Ok(input
            .iter()
            .flatten()
            .map(|(_, v)| v.size_bytes())
            .sum())
    }
}

impl<K: JoinKey, V: Data> Dataset<(K, V)> {
    /// Inner join: cross product per duplicate key, output ordered by
    /// (key, left order, right order). Both inputs count toward
    /// `shuffle_bytes`.
    pub fn join<W: Data>(&self, right: &Dataset<(K, W)>) -> Dataset<(K, (V, W))> {
        let left = self.clone();
        let right = right.clone();
        self.derive("join", move |engine| {
            let lparts = left.materialize()?;
            let rparts = right.materialize()?;
            let lordered = into_global_order(&lparts);
            let rordered = into_global_order(&rparts);
            let moved: u64 = lordered.iter().map(|(_, v)| v.size_bytes()).sum::<u64>()
                + rordered.iter().map(|(_, v)| v.size_bytes()).sum::<u64>();
            engine.add_shuffle_bytes(moved);
            let in_count = lordered.len() + rordered.len();

            let mut by_key: BTreeMap<K, (Vec<V>, Vec<W>)> = BTreeMap::new();
            for (_, (k, v)) in &lordered {
                by_key.entry(k.clone()).or_default().0.push(v.clone());
            }
            for (_, (k, w)) in &rordered {
                by_key.entry(k.clone()).or_default().1.push(w.clone());
            }
            let mut out = Vec::new();
            for (k, (vs, ws)) in by_key {
                for v in &vs {
                    for w in &ws {
                        out.push((k.clone(), (v.clone(), w.clone())));
                    }
                }
            }
            let count = out.len();
            let parts = place_round_robin(out, lparts.len().max(1));
            engine.record_stage("join", in_count, count, moved);
            Ok(parts)
        })
    }

    /// Remove left entries whose key appears in `right`. Output ordered by
    /// (key, left order).
    pub fn subtract_by_key<W: Data>(&self, right: &Dataset<(K, W)>) -> Dataset<(K, V)> {
        let left = self.clone();
        let right = right.clone();
        self.derive("subtract_by_key", move |engine| {
            let lparts = left.materialize()?;
            let rparts = right.materialize()?;
            let lordered = into_global_order(&lparts);
            let rordered = into_global_order(&rparts);
            let moved: u64 = lordered.iter().map(|(_, v)| v.size_bytes()).sum::<u64>()
                + rordered.iter().map(|(_, v)| v.size_bytes()).sum::<u64>();
            engine.add_shuffle_bytes(moved);
            let in_count = lordered.len() + rordered.len();

            let drop: HashSet<K> = rordered.into_iter().map(|(_, (k, _))| k).collect();
            let mut kept: Vec<(u64, (K, V))> = lordered
                .into_iter()
                .filter(|(_, (k, _))| !drop.contains(k))
                .collect();
            kept.sort_by(|(sa, (ka, _)), (sb, (kb, _))| ka.cmp(kb).then(sa.cmp(sb)));
            let out: Vec<(K, V)> = kept.into_iter().map(|(_, kv)| kv).collect();
            let count = out.len();
            let parts = place_round_robin(out, lparts.len().max(1));
            engine.record_stage("subtract_by_key", in_count, count, moved);
            Ok(parts)
        })
    }
}

fn collect_partition_results<U>(
    results: Vec<Result<Vec<U>, (u64, String)>>,
) -> Result<Vec<Vec<U>>, EngineError> {
    // Deterministic failure selection: the error with the smallest global
    // index wins, regardless of worker scheduling.
    let mut first_err: Option<(u64, String)> = None;
    let mut parts = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(p) => parts.push(p),
            Err((seq, msg)) => {
                if first_err.as_ref().is_none_or(|(s, _)| seq < *s) {
                    first_err = Some((seq, msg));
                }
                parts.push(Vec::new());
            }
        }
    }
    match first_err {
        Some((index, message)) => Err(EngineError::UserFn { index, message }),
        None => Ok(parts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ExecConfig;

    fn engine(partitions: usize) -> Engine {
        Engine::new(ExecConfig {
            num_workers: 2,
            num_partitions: partitions,
            ..ExecConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn parallelize_round_robin_layout() {
        let eng = engine(2);
        let ds = eng.parallelize(vec![1i64, 2, 3, 4]);
        assert_eq!(ds.partition_contents().unwrap(), vec![vec![1, 3], vec![2, 4]]);
        assert_eq!(ds.collect().unwrap(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn parallelize_empty() {
        let eng = engine(3);
        let ds = eng.parallelize(Vec::<i64>::new());
        assert_eq!(ds.count().unwrap(), 0);
    }

    #[test]
    fn parallelize_even_split_sizes() {
        let eng = Engine::new(ExecConfig {
            num_partitions: 40,
            ..ExecConfig::default()
        })
        .unwrap();
        let ds = eng.parallelize((0..8600i64).collect::<Vec<_>>());
        let sizes: Vec<usize> = ds.partition_contents().unwrap().iter().map(Vec::len).collect();
        assert!(sizes.iter().all(|&s| s == 215));
    }

    #[test]
    fn map_preserves_order_and_counts_one_stage() {
        let eng = engine(2);
        let ds = eng.parallelize(vec![1i64, 2, 3]);
        let mapped = ds.map(|x| x + 1);
        assert_eq!(mapped.collect().unwrap(), vec![2, 3, 4]);

        // Identity map costs exactly one extra stage over a bare collect.
        let eng_a = engine(2);
        let base = eng_a.parallelize(vec![1i64, 2]);
        base.collect().unwrap();
        let bare = eng_a.stats().stage_count;
        let eng_b = engine(2);
        let mapped = eng_b.parallelize(vec![1i64, 2]).map(|x| *x);
        mapped.collect().unwrap();
        assert_eq!(eng_b.stats().stage_count, bare + 1);
    }

    #[test]
    fn map_on_empty() {
        let eng = engine(2);
        let ds = eng.parallelize(Vec::<i64>::new()).map(|x| x * 2);
        assert!(ds.collect().unwrap().is_empty());
    }

    #[test]
    fn filter_keeps_order_and_layout() {
        let eng = engine(2);
        let ds = eng.parallelize(vec![1i64, 2, 3, 4]);
        assert_eq!(ds.filter(|x| x % 2 == 0).collect().unwrap(), vec![2, 4]);
        // Order restored across partitions even when the kept set straddles them.
        let ds = eng.parallelize(vec![1i64, 2, 3, 4]);
        let kept = ds.filter(|x| [1, 3, 4].contains(x));
        assert_eq!(kept.collect().unwrap(), vec![1, 3, 4]);
        // filter(true) keeps everything.
        let ds = eng.parallelize(vec![5i64, 6]);
        assert_eq!(ds.filter(|_| true).collect().unwrap(), vec![5, 6]);
    }

    #[test]
    fn flat_map_concatenates_in_input_order() {
        let eng = engine(2);
        let ds = eng.parallelize(vec![1i64, 2]);
        assert_eq!(ds.flat_map(|x| vec![*x, *x]).collect().unwrap(), vec![1, 1, 2, 2]);
        let ds = eng.parallelize(vec![1i64, 2, 3]);
        assert!(ds.flat_map(|_| Vec::<i64>::new()).collect().unwrap().is_empty());
    }

    #[test]
    fn zip_with_index_follows_global_order() {
        let eng = engine(2);
        let ds = eng.parallelize(vec!["a".to_string(), "b".to_string()]);
        assert_eq!(
            ds.zip_with_index().collect().unwrap(),
            vec![("a".to_string(), 0), ("b".to_string(), 1)]
        );
        let empty = eng.parallelize(Vec::<i64>::new());
        assert!(empty.zip_with_index().collect().unwrap().is_empty());
        // Re-zipping nests pairs with fresh outer indices.
        let ds = eng.parallelize(vec![10i64, 20]);
        let z2 = ds.zip_with_index().zip_with_index();
        assert_eq!(z2.collect().unwrap(), vec![((10, 0), 0), ((20, 1), 1)]);
    }

    #[test]
    fn zip_after_filter_ranks_survivors() {
        let eng = engine(3);
        let ds = eng.parallelize((0..10i64).collect::<Vec<_>>());
        let z = ds.filter(|x| x % 3 == 1).zip_with_index();
        assert_eq!(z.collect().unwrap(), vec![(1, 0), (4, 1), (7, 2)]);
    }

    #[test]
    fn repartition_meters_all_elements() {
        let eng = engine(1);
        let ds = eng.parallelize(vec![1i64, 2, 3, 4]);
        let re = ds.repartition(2);
        assert_eq!(re.partition_contents().unwrap(), vec![vec![1, 3], vec![2, 4]]);
        // One materialization moved all four i64s.
        assert_eq!(eng.stats().shuffle_bytes, 32);
        let eng_order = engine(1);
        let re = eng_order.parallelize(vec![1i64, 2, 3, 4]).repartition(2);
        assert_eq!(re.collect().unwrap(), vec![1, 2, 3, 4]);

        // Uniform rule: same layout still counts as a full shuffle.
        let eng2 = engine(2);
        let ds2 = eng2.parallelize(vec![1i64, 2, 3, 4]);
        ds2.repartition(2).collect().unwrap();
        assert_eq!(eng2.stats().shuffle_bytes, 32);

        let eng3 = engine(2);
        eng3.parallelize(Vec::<i64>::new()).repartition(3).collect().unwrap();
        assert_eq!(eng3.stats().shuffle_bytes, 0);
    }

    #[test]
    fn reduce_is_partition_invariant() {
        for parts in [1usize, 2, 4] {
            let eng = engine(parts);
            let ds = eng.parallelize(vec![1i64, 2, 3, 4]);
            assert_eq!(ds.reduce(0, |a, b| a + b).unwrap(), 10);
        }
        let eng = engine(2);
        assert_eq!(eng.parallelize(Vec::<i64>::new()).reduce(0, |a, b| a + b).unwrap(), 0);
        assert!(matches!(
            eng.parallelize(Vec::<i64>::new()).reduce_first(|a, b| a + b),
            Err(EngineError::EmptyDataset)
        ));
    }

    #[test]
    fn reduce_max_by_ratio_breaks_ties_to_lowest_id() {
        // (im_id, ratio) records; ties resolve to the lowest id.
        let records = vec![
            (3i64, 0.5f64),
            (1, 0.9),
            (2, 0.9),
            (4, 0.1),
        ];
        let pick = |a: &(i64, f64), b: &(i64, f64)| {
            if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                *b
            } else {
                *a
            }
        };
        let sequential = records.iter().skip(1).fold(records[0], |a, b| pick(&a, b));
        for parts in [1usize, 2, 3] {
            let eng = engine(parts);
            let ds = eng.parallelize(records.clone());
            assert_eq!(ds.reduce_first(move |a, b| pick(a, b)).unwrap(), sequential);
            assert_eq!(sequential.0, 1);
        }
    }

    #[test]
    fn collect_charges_driver_until_release() {
        let eng = Engine::new(ExecConfig {
            num_partitions: 2,
            driver_mem_cap: 100,
            ..ExecConfig::default()
        })
        .unwrap();
        let ds = eng.parallelize(vec![1i64; 10]); // 80 bytes
        let got = ds.collect().unwrap();
        assert_eq!(got.len(), 10);
        assert_eq!(eng.driver_resident(), 80);
        // A second collect without release exceeds the cap.
        let ds2 = eng.parallelize(vec![1i64; 10]);
        assert!(matches!(ds2.collect(), Err(EngineError::MemoryExceeded { .. })));
        eng.driver_release(80);
        assert_eq!(ds2.collect().unwrap().len(), 10);
    }

    #[test]
    fn chunked_collect_with_release_fits_under_cap() {
        // 8600 histogram-sized values would blow the cap when collected at
        // once, but 10 chunks of 860 with releases in between fit.
        let hist_bytes = vec![0.0f64; 256].size_bytes();
        let n = 8600u64;
        let cap = n * hist_bytes / 2;
        let eng = Engine::new(ExecConfig {
            num_partitions: 4,
            driver_mem_cap: cap,
            ..ExecConfig::default()
        })
        .unwrap();
        let items: Vec<(u64, Vec<f64>)> = (0..n).map(|i| (i, vec![0.0f64; 256])).collect();
        let ds = eng.parallelize(items).cache();
        assert!(matches!(ds.collect(), Err(EngineError::MemoryExceeded { .. })));

        let chunk = 860u64;
        let mut seen = 0u64;
        for c in 0..10u64 {
            let lo = c * chunk;
            let hi = lo + chunk;
            let slice = ds.filter(move |(i, _)| *i >= lo && *i < hi);
            let got = slice.collect().unwrap();
            seen += got.len() as u64;
            let bytes: u64 = got.iter().map(|v| v.size_bytes()).sum();
            eng.driver_release(bytes);
        }
        assert_eq!(seen, n);
        assert!(eng.stats().driver_highwater <= cap);
    }

    #[test]
    fn reduce_partials_respect_driver_cap() {
        // Four partitions of histogram-sized partials exceed a tiny cap.
        let eng = Engine::new(ExecConfig {
            num_partitions: 4,
            driver_mem_cap: 3000,
            ..ExecConfig::default()
        })
        .unwrap();
        let items: Vec<Vec<f64>> = (0..8).map(|_| vec![0.0f64; 256]).collect();
        let ds = eng.parallelize(items);
        let err = ds
            .reduce(Vec::new(), |a, b| if a.is_empty() { b.clone() } else { a.clone() })
            .unwrap_err();
        assert!(matches!(err, EngineError::MemoryExceeded { .. }));
        // The transient charge rolls back on failure.
        assert_eq!(eng.driver_resident(), 0);
    }

    #[test]
    fn rebroadcasts_accumulate_charges() {
        let eng = Engine::new(ExecConfig {
            num_workers: 4,
            ..ExecConfig::default()
        })
        .unwrap();
        let payload = vec![1.0f64; 64];
        let size = payload.size_bytes();
        for _ in 0..5 {
            eng.broadcast(payload.clone()).unwrap();
        }
        assert_eq!(eng.stats().broadcast_bytes, 5 * 4 * size);
    }

    #[test]
    fn flat_map_expands_histograms_to_bins() {
        let eng = engine(2);
        let hists = vec![vec![0.0f64; 256], vec![1.0f64; 256]];
        let ds = eng.parallelize(hists);
        let bins = ds.flat_map(|h| h.clone());
        assert_eq!(bins.count().unwrap(), 2 * 256);
    }

    #[test]
    fn count_examples() {
        let eng = engine(2);
        assert_eq!(eng.parallelize(Vec::<i64>::new()).count().unwrap(), 0);
        assert_eq!(eng.parallelize(vec![1i64, 2, 3]).count().unwrap(), 3);
        assert_eq!(eng.parallelize(vec![0u8; 2000]).count().unwrap(), 2000);
    }

    #[test]
    fn join_and_subtract_examples() {
        let eng = engine(2);
        let left = eng.parallelize(vec![(1i64, "a".to_string())]);
        let right = eng.parallelize(vec![(1i64, "x".to_string())]);
        assert_eq!(
            left.join(&right).collect().unwrap(),
            vec![(1, ("a".to_string(), "x".to_string()))]
        );

        let left = eng.parallelize(vec![(1i64, 10i64), (2, 20)]);
        let right = eng.parallelize(vec![(2i64, 0i64)]);
        assert_eq!(left.subtract_by_key(&right).collect().unwrap(), vec![(1, 10)]);

        let left = eng.parallelize(vec![(1i64, 10i64), (2, 20)]);
        let right = eng.parallelize(Vec::<(i64, i64)>::new());
        assert!(left.join(&right).collect().unwrap().is_empty());
    }

    #[test]
    fn join_orders_by_key_then_left_order() {
        let eng = engine(3);
        let left = eng.parallelize(vec![(2i64, 1i64), (1, 2), (2, 3)]);
        let right = eng.parallelize(vec![(2i64, 7i64), (1, 8), (2, 9)]);
        assert_eq!(
            left.join(&right).collect().unwrap(),
            vec![(1, (2, 8)), (2, (1, 7)), (2, (1, 9)), (2, (3, 7)), (2, (3, 9))]
        );
    }

    #[test]
    fn cache_executes_lineage_once() {
        let eng = engine(2);
        eng.enable_instrumentation();
        let ds = eng.parallelize(vec![1i64, 2, 3, 4]).map(|x| x * 2).cache();
        ds.collect().unwrap();
        eng.driver_release(32);
        ds.collect().unwrap();
        let lines = eng.take_instrument_lines();
        let maps = lines.iter().filter(|l| l.contains("op=map")).count();
        assert_eq!(maps, 1, "cached lineage must execute once, got: {lines:?}");

        // Without a cache, the map re-executes per traversal.
        let eng2 = engine(2);
        eng2.enable_instrumentation();
        let ds2 = eng2.parallelize(vec![1i64, 2, 3, 4]).map(|x| x * 2);
        ds2.collect().unwrap();
        ds2.collect().unwrap();
        let lines2 = eng2.take_instrument_lines();
        assert_eq!(lines2.iter().filter(|l| l.contains("op=map")).count(), 2);
    }

    #[test]
    fn cache_respects_worker_cap_and_is_idempotent() {
        let eng = Engine::new(ExecConfig {
            num_workers: 1,
            num_partitions: 1,
            worker_mem_cap: 16,
            ..ExecConfig::default()
        })
        .unwrap();
        let ds = eng.parallelize(vec![1i64, 2, 3]).cache();
        assert!(matches!(ds.collect(), Err(EngineError::MemoryExceeded { .. })));

        let eng2 = Engine::new(ExecConfig {
            num_workers: 1,
            num_partitions: 1,
            worker_mem_cap: 100,
            ..ExecConfig::default()
        })
        .unwrap();
        let ds2 = eng2.parallelize(vec![1i64, 2, 3]).cache().cache();
        ds2.collect().unwrap();
        ds2.count().unwrap();
        // 24 bytes charged once despite double cache() and double traversal.
        assert_eq!(
            eng2.inner.worker_resident[0].load(std::sync::atomic::Ordering::Relaxed),
            24
        );
        // Caching an empty dataset charges nothing.
        let eng3 = Engine::new(ExecConfig {
            num_workers: 1,
            num_partitions: 1,
            worker_mem_cap: 1,
            ..ExecConfig::default()
        })
        .unwrap();
        eng3.parallelize(Vec::<i64>::new()).cache().count().unwrap();
    }

    #[test]
    fn user_fn_error_reports_lowest_global_index() {
        let eng = engine(3);
        let ds = eng.parallelize((0..20i64).collect::<Vec<_>>());
        let poisoned = ds.try_map(|x| {
            if *x >= 7 {
                Err(format!("poisoned {x}"))
            } else {
                Ok(*x)
            }
        });
        match poisoned.collect() {
            Err(EngineError::UserFn { index, message }) => {
                assert_eq!(index, 7);
                assert!(message.contains("poisoned 7"));
            }
            other => panic!("expected UserFn error, got {other:?}"),
        }
    }

    #[test]
    fn filtered_chunk_matches_sequential_slice() {
        let eng = engine(4);
        let items: Vec<i64> = (100..160).collect();
        let ds = eng.parallelize(items.clone()).zip_with_index();
        let (start, end) = (13u64, 29u64);
        let chunk = ds.filter(move |(_, i)| *i >= start && *i < end);
        let got: Vec<i64> = chunk.collect().unwrap().into_iter().map(|(v, _)| v).collect();
        assert_eq!(got, items[start as usize..end as usize].to_vec());
    }

    #[test]
    fn determinism_same_seed_same_stats() {
        let run = || {
            let eng = Engine::new(ExecConfig {
                num_workers: 3,
                num_partitions: 3,
                seed: 9,
                ..ExecConfig::default()
            })
            .unwrap();
            let ds = eng.parallelize((0..50i64).collect::<Vec<_>>());
            let out = ds
                .map(|x| x * 3)
                .filter(|x| x % 2 == 0)
                .repartition(2)
                .zip_with_index()
                .collect()
                .unwrap();
            let mut stats = eng.stats();
            stats.wall_ms = 0;
            (out, stats)
        };
        assert_eq!(run(), run());
    }
}
