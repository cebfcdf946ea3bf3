//! Storage backends: a flat per-key directory, a sharded directory store,
//! and an append-only key-value log. All three move [`RecordEnvelope`]s
//! with CRC-32 checksums and guarantee bit-exact round trips.

mod backends;
mod iobench;

pub use backends::shard_contents;
pub use iobench::{io_bench, IoReport, IoRow};

use std::path::PathBuf;

use crate::measure::Measurable;

/// Backend selector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreKind {
    /// One file per key under a directory (PPM for raw images).
    Flat(PathBuf),
    /// `shard-<i>/` directories; keys place by CRC-32 hash mod shard count,
    /// written `replication` times.
    Sharded {
        dir: PathBuf,
        shard_count: u32,
        replication: u32,
    },
    /// Single append-only log with an index rebuilt on open.
    Kv(PathBuf),
}

impl StoreKind {
    pub fn label(&self) -> &'static str {
        match self {
            StoreKind::Flat(_) => "flat",
            StoreKind::Sharded { .. } => "sharded",
            StoreKind::Kv(_) => "kv",
        }
    }

    pub fn validate(&self) -> Result<(), StorageError> {
        if let StoreKind::Sharded {
            shard_count,
            replication,
            ..
        } = self
        {
            if *shard_count < 1 {
                return Err(StorageError::Backend {
                    backend: "sharded",
                    message: "shard_count must be >= 1".into(),
                });
            }
            if *replication < 1 {
                return Err(StorageError::Backend {
                    backend: "sharded",
                    message: "replication must be >= 1".into(),
                });
            }
        }
        Ok(())
    }
}

/// Payload encoding hint carried with each envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    RawImage,
    Text,
    PackedRecord,
}

impl Encoding {
    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Encoding::RawImage => 0,
            Encoding::Text => 1,
            Encoding::PackedRecord => 2,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Result<Self, StorageError> {
        match b {
            0 => Ok(Encoding::RawImage),
            1 => Ok(Encoding::Text),
            2 => Ok(Encoding::PackedRecord),
            other => Err(StorageError::Corrupt(format!("bad encoding tag {other}"))),
        }
    }
}

/// A checksummed key/payload pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordEnvelope {
    pub key: String,
    pub payload: Vec<u8>,
    pub checksum: u32,
    pub encoding: Encoding,
}

impl RecordEnvelope {
    pub fn new(key: &str, payload: Vec<u8>, encoding: Encoding) -> Self {
        let checksum = crc32fast::hash(&payload);
        Self {
            key: key.to_string(),
            payload,
            checksum,
            encoding,
        }
    }

    pub fn verify(&self) -> Result<(), StorageError> {
        let got = crc32fast::hash(&self.payload);
        if got != self.checksum {
            return Err(StorageError::ChecksumMismatch {
                key: self.key.clone(),
                expected: self.checksum,
                got,
            });
        }
        Ok(())
    }
}

impl Measurable for RecordEnvelope {
    fn size_bytes(&self) -> u64 {
        16 + self.key.len() as u64 + self.payload.len() as u64 + 4 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StorageError {
    #[error("checksum mismatch for key '{key}': stored {expected:#010x}, computed {got:#010x}")]
    ChecksumMismatch {
        key: String,
        expected: u32,
        got: u32,
    },
    #[error("missing key '{0}'")]
    MissingKey(String),
    #[error("duplicate key '{0}'")]
    DuplicateKey(String),
    #[error("{backend} backend error: {message}")]
    Backend {
        backend: &'static str,
        message: String,
    },
    #[error("corrupt store data: {0}")]
    Corrupt(String),
}

/// Where each envelope of a batch landed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteReceipt {
    pub backend: &'static str,
    /// (key, path-or-location) per written copy, in write order.
    pub entries: Vec<(String, String)>,
}

impl WriteReceipt {
    pub fn empty(backend: &'static str) -> Self {
        Self {
            backend,
            entries: Vec::new(),
        }
    }
}

/// Write a batch of envelopes. Keys must be unique within the store;
/// writing an existing key fails with `DuplicateKey`.
pub fn store_write(
    kind: &StoreKind,
    envelopes: &[RecordEnvelope],
) -> Result<WriteReceipt, StorageError> {
    kind.validate()?;
    match kind {
        StoreKind::Flat(dir) => backends::flat_write(dir, envelopes),
        StoreKind::Sharded {
            dir,
            shard_count,
            replication,
        } => backends::sharded_write(dir, *shard_count, *replication, envelopes),
        StoreKind::Kv(path) => backends::kv_write(path, envelopes),
    }
}

/// Read envelopes back by key, verifying checksums.
pub fn store_read(kind: &StoreKind, keys: &[String]) -> Result<Vec<RecordEnvelope>, StorageError> {
    kind.validate()?;
    match kind {
        StoreKind::Flat(dir) => backends::flat_read(dir, keys),
        StoreKind::Sharded {
            dir, shard_count, ..
        } => backends::sharded_read(dir, *shard_count, keys),
        StoreKind::Kv(path) => backends::kv_read(path, keys),
    }
}

/// All keys present in a store, sorted.
pub fn store_keys(kind: &StoreKind) -> Result<Vec<String>, StorageError> {
    kind.validate()?;
    match kind {
        StoreKind::Flat(dir) => backends::flat_keys(dir),
        StoreKind::Sharded {
            dir, shard_count, ..
        } => backends::sharded_keys(dir, *shard_count),
        StoreKind::Kv(path) => backends::kv_keys(path),
    }
}

/// Deterministic shard placement: CRC-32 of the key, mod shard count.
pub fn shard_of(key: &str, shard_count: u32) -> u32 {
    crc32fast::hash(key.as_bytes()) % shard_count
}
