//! The three backend implementations.
//!
//! Sharded and KV stores share one on-disk record framing, little-endian
//! throughout: record length (u32, bytes after this field), key length
//! (u32), key bytes, CRC-32 of the payload (u32), one encoding-tag byte,
//! payload bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{shard_of, Encoding, RecordEnvelope, StorageError, WriteReceipt};

fn io_err(backend: &'static str, e: std::io::Error) -> StorageError {
    StorageError::Backend {
        backend,
        message: e.to_string(),
    }
}

fn encode_record(env: &RecordEnvelope) -> Vec<u8> {
    let key = env.key.as_bytes();
    let body_len = 4 + key.len() + 4 + 1 + env.payload.len();
    let mut out = Vec::with_capacity(4 + body_len);
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    out.extend_from_slice(&(key.len() as u32).to_le_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(&env.checksum.to_le_bytes());
    out.push(env.encoding.to_byte());
    out.extend_from_slice(&env.payload);
    out
}

/// Decode every framed record in `bytes`, in file order.
fn decode_records(bytes: &[u8]) -> Result<Vec<RecordEnvelope>, StorageError> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        if pos + 4 > bytes.len() {
            return Err(StorageError::Corrupt("truncated record length".into()));
        }
        let body_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if pos + body_len > bytes.len() {
            return Err(StorageError::Corrupt("truncated record body".into()));
        }
        let body = &bytes[pos..pos + body_len];
        pos += body_len;
        if body.len() < 9 {
            return Err(StorageError::Corrupt("record body too short".into()));
        }
        let key_len = u32::from_le_bytes(body[0..4].try_into().unwrap()) as usize;
        if 4 + key_len + 5 > body.len() {
            return Err(StorageError::Corrupt("bad key length".into()));
        }
        let key = String::from_utf8(body[4..4 + key_len].to_vec())
            .map_err(|_| StorageError::Corrupt("non-UTF8 key".into()))?;
        let mut at = 4 + key_len;
        let checksum = u32::from_le_bytes(body[at..at + 4].try_into().unwrap());
        at += 4;
        let encoding = Encoding::from_byte(body[at])?;
        at += 1;
        out.push(RecordEnvelope {
            key,
            payload: body[at..].to_vec(),
            checksum,
            encoding,
        });
    }
    Ok(out)
}

fn reject_batch_duplicates(envelopes: &[RecordEnvelope]) -> Result<(), StorageError> {
    let mut seen = std::collections::HashSet::new();
    for env in envelopes {
        if !seen.insert(&env.key) {
            return Err(StorageError::DuplicateKey(env.key.clone()));
        }
    }
    Ok(())
}

// --- flat store: one file per key ---------------------------------------

/// File extension by encoding; PPM keeps flat-stored images viewable.
/// Names carry the sanitized key plus the key hash so two distinct keys
/// cannot collide after sanitization.
fn flat_file_name(key: &str, encoding: Encoding) -> String {
    let safe: String = key
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let hash = crc32fast::hash(key.as_bytes());
    match encoding {
        Encoding::RawImage => format!("{safe}-{hash}.ppm"),
        Encoding::Text => format!("{safe}-{hash}.txt"),
        Encoding::PackedRecord => format!("{safe}-{hash}.rec"),
    }
}

pub(super) fn flat_write(
    dir: &Path,
    envelopes: &[RecordEnvelope],
) -> Result<WriteReceipt, StorageError> {
    reject_batch_duplicates(envelopes)?;
    fs::create_dir_all(dir).map_err(|e| io_err("flat", e))?;
    let mut receipt = WriteReceipt::empty("flat");
    for env in envelopes {
        env.verify()?;
        let meta = dir.join(flat_meta_name(&env.key));
        if meta.exists() {
            return Err(StorageError::DuplicateKey(env.key.clone()));
        }
        let file = dir.join(flat_file_name(&env.key, env.encoding));
        fs::write(&file, &env.payload).map_err(|e| io_err("flat", e))?;
        // Sidecar holds the exact key, checksum, and encoding so reads
        // do not depend on file-name sanitization.
        let sidecar = format!("{}\n{}\n{}\n", env.key, env.checksum, env.encoding.to_byte());
        fs::write(&meta, sidecar).map_err(|e| io_err("flat", e))?;
        receipt
            .entries
            .push((env.key.clone(), file.display().to_string()));
    }
    Ok(receipt)
}

fn flat_meta_name(key: &str) -> String {
    let safe: String = key
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}-{}.key", crc32fast::hash(key.as_bytes()))
}

pub(super) fn flat_read(
    dir: &Path,
    keys: &[String],
) -> Result<Vec<RecordEnvelope>, StorageError> {
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let meta = dir.join(flat_meta_name(key));
        let sidecar = fs::read_to_string(&meta)
            .map_err(|_| StorageError::MissingKey(key.clone()))?;
        let mut lines = sidecar.lines();
        let stored_key = lines.next().unwrap_or_default();
        if stored_key != key {
            return Err(StorageError::MissingKey(key.clone()));
        }
        let checksum: u32 = lines
            .next()
            .and_then(|l| l.parse().ok())
            .ok_or_else(|| StorageError::Corrupt(format!("bad sidecar for '{key}'")))?;
        let encoding = lines
            .next()
            .and_then(|l| l.parse::<u8>().ok())
            .map(Encoding::from_byte)
            .transpose()?
            .ok_or_else(|| StorageError::Corrupt(format!("bad sidecar for '{key}'")))?;
        let file = dir.join(flat_file_name(key, encoding));
        let payload = fs::read(&file).map_err(|_| StorageError::MissingKey(key.clone()))?;
        let env = RecordEnvelope {
            key: key.clone(),
            payload,
            checksum,
            encoding,
        };
        env.verify()?;
        out.push(env);
    }
    Ok(out)
}

pub(super) fn flat_keys(dir: &Path) -> Result<Vec<String>, StorageError> {
    let mut keys = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(_) => return Ok(keys),
    };
    for entry in entries {
        let entry = entry.map_err(|e| io_err("flat", e))?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "key") {
            let sidecar = fs::read_to_string(&path).map_err(|e| io_err("flat", e))?;
            if let Some(key) = sidecar.lines().next() {
                keys.push(key.to_string());
            }
        }
    }
    keys.sort();
    Ok(keys)
}

// --- sharded store -------------------------------------------------------

pub(super) fn sharded_write(
    dir: &Path,
    shard_count: u32,
    replication: u32,
    envelopes: &[RecordEnvelope],
) -> Result<WriteReceipt, StorageError> {
    reject_batch_duplicates(envelopes)?;
    let existing: std::collections::HashSet<String> =
        sharded_keys(dir, shard_count)?.into_iter().collect();
    let mut receipt = WriteReceipt::empty("sharded");
    for env in envelopes {
        env.verify()?;
        if existing.contains(&env.key) {
            return Err(StorageError::DuplicateKey(env.key.clone()));
        }
        let home = shard_of(&env.key, shard_count);
        let bytes = encode_record(env);
        for r in 0..replication {
            let shard = (home + r) % shard_count;
            let shard_dir = dir.join(format!("shard-{shard}"));
            fs::create_dir_all(&shard_dir).map_err(|e| io_err("sharded", e))?;
            let path = shard_dir.join("records.log");
            let mut file = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| io_err("sharded", e))?;
            file.write_all(&bytes).map_err(|e| io_err("sharded", e))?;
            receipt
                .entries
                .push((env.key.clone(), format!("shard-{shard}")));
        }
    }
    Ok(receipt)
}

fn sharded_scan(dir: &Path, shard: u32) -> Result<Vec<RecordEnvelope>, StorageError> {
    let path = dir.join(format!("shard-{shard}")).join("records.log");
    match fs::read(&path) {
        Ok(bytes) => decode_records(&bytes),
        Err(_) => Ok(Vec::new()),
    }
}

pub(super) fn sharded_read(
    dir: &Path,
    shard_count: u32,
    keys: &[String],
) -> Result<Vec<RecordEnvelope>, StorageError> {
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let shard = shard_of(key, shard_count);
        let records = sharded_scan(dir, shard)?;
        let env = records
            .into_iter()
            .find(|r| &r.key == key)
            .ok_or_else(|| StorageError::MissingKey(key.clone()))?;
        env.verify()?;
        out.push(env);
    }
    Ok(out)
}

pub(super) fn sharded_keys(dir: &Path, shard_count: u32) -> Result<Vec<String>, StorageError> {
    let mut keys = Vec::new();
    for shard in 0..shard_count {
        for env in sharded_scan(dir, shard)? {
            // Replicated copies land in other shards; count home copies once.
            if shard_of(&env.key, shard_count) == shard {
                keys.push(env.key);
            }
        }
    }
    keys.sort();
    keys.dedup();
    Ok(keys)
}

/// Keys physically present in one shard directory (including replicas).
pub fn shard_contents(dir: &Path, shard: u32) -> Result<Vec<String>, StorageError> {
    Ok(sharded_scan(dir, shard)?.into_iter().map(|e| e.key).collect())
}

// --- key-value log -------------------------------------------------------

fn kv_index(path: &Path) -> Result<BTreeMap<String, RecordEnvelope>, StorageError> {
    let mut index = BTreeMap::new();
    if let Ok(bytes) = fs::read(path) {
        for env in decode_records(&bytes)? {
            index.insert(env.key.clone(), env);
        }
    }
    Ok(index)
}

pub(super) fn kv_write(
    path: &Path,
    envelopes: &[RecordEnvelope],
) -> Result<WriteReceipt, StorageError> {
    reject_batch_duplicates(envelopes)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err("kv", e))?;
        }
    }
    let index = kv_index(path)?;
    for env in envelopes {
        if index.contains_key(&env.key) {
            return Err(StorageError::DuplicateKey(env.key.clone()));
        }
    }
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err("kv", e))?;
    let mut receipt = WriteReceipt::empty("kv");
    for env in envelopes {
        env.verify()?;
        file.write_all(&encode_record(env))
            .map_err(|e| io_err("kv", e))?;
        receipt
            .entries
            .push((env.key.clone(), path.display().to_string()));
    }
    Ok(receipt)
}

pub(super) fn kv_read(path: &Path, keys: &[String]) -> Result<Vec<RecordEnvelope>, StorageError> {
    let index = kv_index(path)?;
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let env = index
            .get(key)
            .cloned()
            .ok_or_else(|| StorageError::MissingKey(key.clone()))?;
        env.verify()?;
        out.push(env);
    }
    Ok(out)
}

pub(super) fn kv_keys(path: &Path) -> Result<Vec<String>, StorageError> {
    Ok(kv_index(path)?.into_keys().collect())
}

#[cfg(test)]
mod tests {
    use super::super::{store_keys, store_read, store_write, StoreKind};
    use super::*;
    use crate::rng::SplitMix64;

    fn sample_envelopes(n: usize, seed: u64) -> Vec<RecordEnvelope> {
        let mut rng = SplitMix64::new(seed);
        (0..n)
            .map(|i| {
                let len = 1 + rng.below(512) as usize;
                let payload: Vec<u8> = (0..len).map(|_| rng.below(256) as u8).collect();
                let encoding = match rng.below(3) {
                    0 => Encoding::RawImage,
                    1 => Encoding::Text,
                    _ => Encoding::PackedRecord,
                };
                RecordEnvelope::new(&format!("key-{i}"), payload, encoding)
            })
            .collect()
    }

    fn all_kinds(root: &Path) -> Vec<StoreKind> {
        vec![
            StoreKind::Flat(root.join("flat")),
            StoreKind::Sharded {
                dir: root.join("sharded"),
                shard_count: 4,
                replication: 1,
            },
            StoreKind::Kv(root.join("store.kvlog")),
        ]
    }

    #[test]
    fn round_trip_bit_exact_on_all_backends() {
        let tmp = tempfile::tempdir().unwrap();
        let envelopes = sample_envelopes(50, 3);
        let keys: Vec<String> = envelopes.iter().map(|e| e.key.clone()).collect();
        for kind in all_kinds(tmp.path()) {
            store_write(&kind, &envelopes).unwrap();
            let back = store_read(&kind, &keys).unwrap();
            assert_eq!(back, envelopes, "round trip failed for {}", kind.label());
        }
    }

    #[test]
    fn missing_key_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        for kind in all_kinds(tmp.path()) {
            store_write(&kind, &sample_envelopes(3, 5)).unwrap();
            let err = store_read(&kind, &["nope".to_string()]).unwrap_err();
            assert!(matches!(err, StorageError::MissingKey(_)), "{}", kind.label());
        }
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let envelopes = sample_envelopes(3, 7);
        for kind in all_kinds(tmp.path()) {
            store_write(&kind, &envelopes).unwrap();
            let err = store_write(&kind, &envelopes[..1]).unwrap_err();
            assert!(matches!(err, StorageError::DuplicateKey(_)), "{}", kind.label());
        }
    }

    #[test]
    fn sharded_placement_is_hash_of_key() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s");
        let kind = StoreKind::Sharded {
            dir: dir.clone(),
            shard_count: 4,
            replication: 1,
        };
        let envelopes = sample_envelopes(8, 11);
        store_write(&kind, &envelopes).unwrap();
        for shard in 0..4u32 {
            let present = shard_contents(&dir, shard).unwrap();
            let expected: Vec<String> = envelopes
                .iter()
                .filter(|e| shard_of(&e.key, 4) == shard)
                .map(|e| e.key.clone())
                .collect();
            assert_eq!(present, expected, "shard {shard}");
        }
    }

    #[test]
    fn replication_writes_extra_copies() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("r");
        let kind = StoreKind::Sharded {
            dir: dir.clone(),
            shard_count: 3,
            replication: 2,
        };
        let envelopes = sample_envelopes(5, 13);
        let receipt = store_write(&kind, &envelopes).unwrap();
        assert_eq!(receipt.entries.len(), 10);
        let keys: Vec<String> = envelopes.iter().map(|e| e.key.clone()).collect();
        assert_eq!(store_read(&kind, &keys).unwrap(), envelopes);
        assert_eq!(store_keys(&kind).unwrap().len(), 5);
    }

    #[test]
    fn kv_index_survives_reopen() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("log.kv");
        let kind = StoreKind::Kv(path);
        let first = sample_envelopes(10, 17);
        store_write(&kind, &first).unwrap();
        let more: Vec<RecordEnvelope> = (0..5)
            .map(|i| RecordEnvelope::new(&format!("late-{i}"), vec![i as u8; 9], Encoding::Text))
            .collect();
        store_write(&kind, &more).unwrap();
        // Fresh reads rebuild the index from the log alone.
        let keys: Vec<String> = first.iter().chain(&more).map(|e| e.key.clone()).collect();
        let back = store_read(&kind, &keys).unwrap();
        assert_eq!(back.len(), 15);
        assert_eq!(&back[..10], &first[..]);
        assert_eq!(&back[10..], &more[..]);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("log.kv");
        let kind = StoreKind::Kv(path.clone());
        let mut env = RecordEnvelope::new("k", vec![1, 2, 3, 4], Encoding::Text);
        store_write(&kind, &[env.clone()]).unwrap();
        // Flip a payload byte on disk.
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        let err = store_read(&kind, &["k".to_string()]).unwrap_err();
        assert!(matches!(err, StorageError::ChecksumMismatch { .. }));
        // Envelope-level verify agrees.
        env.payload[0] ^= 0xff;
        assert!(env.verify().is_err());
    }
}
