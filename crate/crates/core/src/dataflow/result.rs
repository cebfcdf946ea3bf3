//! Result taxonomy and storage routing.
//!
//! Pipelines produce one of five result shapes; the shape alone decides
//! where the data lands: image and matrix collections go to the sharded
//! store, everything else to flat or key-value storage.

use std::collections::BTreeMap;

use crate::imgops::{write_ppm_bytes, Image};
use crate::storage::{store_write, Encoding, RecordEnvelope, StorageError, StoreKind, WriteReceipt};

/// A per-image output value with a stable text rendering.
#[derive(Debug, Clone, PartialEq)]
pub enum PerImage {
    Int(i64),
    Real(f64),
    Text(String),
    Reals(Vec<f64>),
}

impl PerImage {
    pub fn render(&self) -> String {
        match self {
            PerImage::Int(v) => v.to_string(),
            PerImage::Real(v) => format!("{v:.12}"),
            PerImage::Text(s) => s.clone(),
            PerImage::Reals(vs) => vs
                .iter()
                .map(|v| format!("{v:.12}"))
                .collect::<Vec<_>>()
                .join(","),
        }
    }

    /// Approximate equality: exact for ints/text, relative tolerance for
    /// floating-point payloads.
    pub fn approx_eq(&self, other: &PerImage, rel_tol: f64) -> bool {
        fn close(a: f64, b: f64, rel: f64) -> bool {
            let scale = a.abs().max(b.abs()).max(1e-300);
            (a - b).abs() <= rel * scale || (a - b).abs() < 1e-300
        }
        match (self, other) {
            (PerImage::Int(a), PerImage::Int(b)) => a == b,
            (PerImage::Text(a), PerImage::Text(b)) => a == b,
            (PerImage::Real(a), PerImage::Real(b)) => close(*a, *b, rel_tol),
            (PerImage::Reals(a), PerImage::Reals(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y, rel_tol))
            }
            _ => false,
        }
    }
}

/// The produced-result taxonomy.
#[derive(Debug, Clone, PartialEq)]
pub enum ResultValue {
    /// A single image or a collection of images / image objects.
    ImageCollection(Vec<(String, Image)>),
    /// List of string or numeric values, keyed.
    ValueList(Vec<(String, String)>),
    /// Collection of matrices or vectors, keyed.
    MatrixCollection(Vec<(String, Vec<f64>)>),
    /// String dictionary.
    Dictionary(BTreeMap<String, String>),
    /// Tuple of lists, keyed.
    TupleOfLists(Vec<(String, Vec<String>)>),
}

impl ResultValue {
    pub fn is_empty(&self) -> bool {
        match self {
            ResultValue::ImageCollection(v) => v.is_empty(),
            ResultValue::ValueList(v) => v.is_empty(),
            ResultValue::MatrixCollection(v) => v.is_empty(),
            ResultValue::Dictionary(v) => v.is_empty(),
            ResultValue::TupleOfLists(v) => v.is_empty(),
        }
    }
}

/// Storage targets for result routing.
#[derive(Debug, Clone)]
pub struct StorageRouting {
    /// Destination for image and matrix collections.
    pub sharded: StoreKind,
    /// Destination for lists, dictionaries, and tuple results.
    pub flat: StoreKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageReceipt {
    pub entries: Vec<(String, String)>,
}

/// Route a result to storage by its variant. Image and matrix collections
/// go to the sharded store; list-like results go to the flat/KV store.
/// Empty results write nothing.
pub fn route_result(
    result: &ResultValue,
    routing: &StorageRouting,
) -> Result<StorageReceipt, StorageError> {
    if result.is_empty() {
        return Ok(StorageReceipt { entries: Vec::new() });
    }
    let receipt = match result {
        ResultValue::ImageCollection(images) => {
            let envelopes: Vec<RecordEnvelope> = images
                .iter()
                .map(|(key, img)| {
                    RecordEnvelope::new(key, write_ppm_bytes(img), Encoding::RawImage)
                })
                .collect();
            store_write(&routing.sharded, &envelopes)?
        }
        ResultValue::MatrixCollection(mats) => {
            let envelopes: Vec<RecordEnvelope> = mats
                .iter()
                .map(|(key, vals)| {
                    let text = vals
                        .iter()
                        .map(|v| format!("{v:.17e}"))
                        .collect::<Vec<_>>()
                        .join(",");
                    RecordEnvelope::new(key, text.into_bytes(), Encoding::Text)
                })
                .collect();
            store_write(&routing.sharded, &envelopes)?
        }
        ResultValue::ValueList(items) => write_lines(
            &routing.flat,
            items.iter().map(|(k, v)| (k.clone(), v.clone())),
        )?,
        ResultValue::Dictionary(map) => write_lines(
            &routing.flat,
            map.iter().map(|(k, v)| (k.clone(), v.clone())),
        )?,
        ResultValue::TupleOfLists(tuples) => write_lines(
            &routing.flat,
            tuples.iter().map(|(k, vs)| (k.clone(), vs.join("\t"))),
        )?,
    };
    Ok(StorageReceipt {
        entries: receipt.entries,
    })
}

fn write_lines(
    store: &StoreKind,
    items: impl Iterator<Item = (String, String)>,
) -> Result<WriteReceipt, StorageError> {
    let envelopes: Vec<RecordEnvelope> = items
        .map(|(k, v)| RecordEnvelope::new(&k, v.into_bytes(), Encoding::Text))
        .collect();
    store_write(store, &envelopes)
}

/// Render per-image outputs as the newline-delimited `im_id<TAB>value`
/// manifest format.
pub fn render_manifest(per_image: &[(String, PerImage)]) -> String {
    let mut out = String::new();
    for (im_id, value) in per_image {
        out.push_str(im_id);
        out.push('\t');
        out.push_str(&value.render());
        out.push('\n');
    }
    out
}
