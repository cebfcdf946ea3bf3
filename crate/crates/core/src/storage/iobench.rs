//! Read/write benchmark across backend pairs with round-trip verification.
//!
//! Wall times are reported, never asserted; the verified property is
//! bit-exact fidelity of every moved payload.

use std::time::Instant;

use super::{store_read, store_write, StorageError, StoreKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoRow {
    pub src: &'static str,
    pub dst: &'static str,
    pub keys: usize,
    pub bytes: u64,
    pub read_ms: u64,
    pub write_ms: u64,
    pub fidelity: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IoReport {
    pub rows: Vec<IoRow>,
}

impl IoReport {
    pub fn render(&self) -> String {
        let mut out = String::from("src->dst        keys      bytes   read_ms  write_ms  fidelity\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>5} {:>10} {:>9} {:>9}  {}\n",
                format!("{}-{}", row.src, row.dst),
                row.keys,
                row.bytes,
                row.read_ms,
                row.write_ms,
                if row.fidelity { "exact" } else { "MISMATCH" }
            ));
        }
        out
    }
}

/// Read every key from `src`, write the envelopes to `dst`, verify the
/// copies byte-for-byte, and time both halves.
pub fn io_bench(
    src: &StoreKind,
    dst: &StoreKind,
    keys: &[String],
) -> Result<IoRow, StorageError> {
    let read_start = Instant::now();
    let envelopes = store_read(src, keys)?;
    let read_ms = read_start.elapsed().as_millis() as u64;

    let write_start = Instant::now();
    store_write(dst, &envelopes)?;
    let write_ms = write_start.elapsed().as_millis() as u64;

    let back = store_read(dst, keys)?;
    let fidelity = back == envelopes;
    let bytes = envelopes.iter().map(|e| e.payload.len() as u64).sum();
    Ok(IoRow {
        src: src.label(),
        dst: dst.label(),
        keys: keys.len(),
        bytes,
        read_ms,
        write_ms,
        fidelity,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{Encoding, RecordEnvelope};
    use super::*;

    #[test]
    fn bench_pairs_verify_fidelity() {
        let tmp = tempfile::tempdir().unwrap();
        let envelopes: Vec<RecordEnvelope> = (0..20)
            .map(|i| RecordEnvelope::new(&format!("k{i}"), vec![i as u8; 64], Encoding::Text))
            .collect();
        let keys: Vec<String> = envelopes.iter().map(|e| e.key.clone()).collect();

        let kv_a = StoreKind::Kv(tmp.path().join("a.kv"));
        let kv_b = StoreKind::Kv(tmp.path().join("b.kv"));
        let sharded_a = StoreKind::Sharded {
            dir: tmp.path().join("sa"),
            shard_count: 3,
            replication: 1,
        };
        let sharded_b = StoreKind::Sharded {
            dir: tmp.path().join("sb"),
            shard_count: 3,
            replication: 1,
        };
        let flat = StoreKind::Flat(tmp.path().join("flat"));

        store_write(&kv_a, &envelopes).unwrap();
        store_write(&sharded_a, &envelopes).unwrap();

        let rows = vec![
            io_bench(&kv_a, &kv_b, &keys).unwrap(),
            io_bench(&sharded_a, &sharded_b, &keys).unwrap(),
            io_bench(&sharded_a, &flat, &keys).unwrap(),
        ];
        assert!(rows.iter().all(|r| r.fidelity));
        assert_eq!(rows.len(), 3);
        let report = IoReport { rows };
        assert!(report.render().contains("kv-kv"));
        assert!(report.render().contains("sharded-flat"));
    }

    #[test]
    fn empty_key_set_is_a_zero_row() {
        let tmp = tempfile::tempdir().unwrap();
        let kv_a = StoreKind::Kv(tmp.path().join("a.kv"));
        let kv_b = StoreKind::Kv(tmp.path().join("b.kv"));
        let row = io_bench(&kv_a, &kv_b, &[]).unwrap();
        assert_eq!(row.keys, 0);
        assert_eq!(row.bytes, 0);
        assert!(row.fidelity);
    }
}
