//! The ordered entity bundle flowing between data-parallel modules.
//!
//! A [`PackedRecord`] carries one image's identifier plus the slots each
//! pipeline stage reads and writes: the raw image, the processed image,
//! a metrics payload, a model payload, and tagged extras. Slot order is
//! fixed (id, raw, processed, metrics, model, extras in insertion order),
//! and the binary serialization preserves it byte-for-byte.

use crate::imgops::{FeatureSet, Histogram, Homography, Image, Keypoint, DESCRIPTOR_LEN};
use crate::measure::Measurable;

use super::DataflowError;

/// A tagged value storable in the metrics / model / extra slots.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Real(f64),
    Int(i64),
    Text(String),
    Vector(Vec<f64>),
    Hist(Histogram),
    Features(FeatureSet),
    Matrix(Homography),
    Picture(Image),
    List(Vec<Payload>),
}

impl Payload {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Payload::Real(v) => Some(*v),
            Payload::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Payload::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Payload::Text(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Payload::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_hist(&self) -> Option<&Histogram> {
        match self {
            Payload::Hist(h) => Some(h),
            _ => None,
        }
    }

    pub fn as_features(&self) -> Option<&FeatureSet> {
        match self {
            Payload::Features(f) => Some(f),
            _ => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&Homography> {
        match self {
            Payload::Matrix(h) => Some(h),
            _ => None,
        }
    }

    pub fn as_picture(&self) -> Option<&Image> {
        match self {
            Payload::Picture(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Payload]> {
        match self {
            Payload::List(l) => Some(l),
            _ => None,
        }
    }
}

impl Measurable for Payload {
    fn size_bytes(&self) -> u64 {
        match self {
            Payload::Real(_) | Payload::Int(_) => 8,
            Payload::Text(s) => s.size_bytes(),
            Payload::Vector(v) => 16 + v.len() as u64 * 8,
            Payload::Hist(h) => h.size_bytes(),
            Payload::Features(f) => f.size_bytes(),
            Payload::Matrix(m) => m.size_bytes(),
            Payload::Picture(i) => i.size_bytes(),
            Payload::List(items) => 16 + items.iter().map(Measurable::size_bytes).sum::<u64>(),
        }
    }
}

/// One image's entity bundle. `im_id` is always present; other slots fill
/// as stages run. The record size is the sum of present slots plus an
/// 8-byte tag per present slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedRecord {
    pub im_id: String,
    pub raw: Option<Image>,
    pub processed: Option<Image>,
    pub metrics: Option<Payload>,
    pub model: Option<Payload>,
    pub extra: Vec<(String, Payload)>,
}

impl Measurable for PackedRecord {
    fn size_bytes(&self) -> u64 {
        let mut total = 8 + self.im_id.size_bytes();
        if let Some(raw) = &self.raw {
            total += 8 + raw.size_bytes();
        }
        if let Some(p) = &self.processed {
            total += 8 + p.size_bytes();
        }
        if let Some(m) = &self.metrics {
            total += 8 + m.size_bytes();
        }
        if let Some(m) = &self.model {
            total += 8 + m.size_bytes();
        }
        for (tag, value) in &self.extra {
            total += 8 + tag.size_bytes() + value.size_bytes();
        }
        total
    }
}

/// Assemble a record. Fails on an empty `im_id`.
pub fn pack(
    im_id: &str,
    raw: Option<Image>,
    processed: Option<Image>,
    metrics: Option<Payload>,
    model: Option<Payload>,
    extra: Vec<(String, Payload)>,
) -> Result<PackedRecord, DataflowError> {
    if im_id.is_empty() {
        return Err(DataflowError::MalformedRecord(
            "im_id must be non-empty".into(),
        ));
    }
    Ok(PackedRecord {
        im_id: im_id.to_string(),
        raw,
        processed,
        metrics,
        model,
        extra,
    })
}

/// Disassemble a record into the ordered slot tuple. Round-trips `pack`.
#[allow(clippy::type_complexity)]
pub fn unpack(
    record: PackedRecord,
) -> Result<
    (
        String,
        Option<Image>,
        Option<Image>,
        Option<Payload>,
        Option<Payload>,
        Vec<(String, Payload)>,
    ),
    DataflowError,
> {
    if record.im_id.is_empty() {
        return Err(DataflowError::MalformedRecord(
            "record is missing its im_id".into(),
        ));
    }
    Ok((
        record.im_id,
        record.raw,
        record.processed,
        record.metrics,
        record.model,
        record.extra,
    ))
}

impl PackedRecord {
    pub fn from_image(im_id: &str, raw: Image) -> Result<Self, DataflowError> {
        pack(im_id, Some(raw), None, None, None, Vec::new())
    }

    pub fn extra_value(&self, tag: &str) -> Option<&Payload> {
        self.extra
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, v)| v)
    }

    /// Set or replace an extra slot, keeping first-insertion order.
    pub fn set_extra(&mut self, tag: &str, value: Payload) {
        if let Some(slot) = self.extra.iter_mut().find(|(t, _)| t == tag) {
            slot.1 = value;
        } else {
            self.extra.push((tag.to_string(), value));
        }
    }

    /// Deterministic binary layout: slots in fixed order, each with a tag
    /// byte, little-endian lengths. Identical records serialize to
    /// identical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_str(&mut out, &self.im_id);
        write_opt(&mut out, &self.raw, write_image);
        write_opt(&mut out, &self.processed, write_image);
        write_opt(&mut out, &self.metrics, write_payload);
        write_opt(&mut out, &self.model, write_payload);
        out.extend_from_slice(&(self.extra.len() as u32).to_le_bytes());
        for (tag, value) in &self.extra {
            write_str(&mut out, tag);
            write_payload(&mut out, value);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataflowError> {
        let mut pos = 0usize;
        let im_id = read_str(bytes, &mut pos)?;
        let raw = read_opt(bytes, &mut pos, read_image)?;
        let processed = read_opt(bytes, &mut pos, read_image)?;
        let metrics = read_opt(bytes, &mut pos, read_payload)?;
        let model = read_opt(bytes, &mut pos, read_payload)?;
        let n = read_u32(bytes, &mut pos)? as usize;
        let mut extra = Vec::with_capacity(n);
        for _ in 0..n {
            let tag = read_str(bytes, &mut pos)?;
            let value = read_payload(bytes, &mut pos)?;
            extra.push((tag, value));
        }
        if im_id.is_empty() {
            return Err(DataflowError::MalformedRecord(
                "decoded record has an empty im_id".into(),
            ));
        }
        Ok(PackedRecord {
            im_id,
            raw,
            processed,
            metrics,
            model,
            extra,
        })
    }
}

fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    write_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn write_opt<T>(out: &mut Vec<u8>, v: &Option<T>, write: impl Fn(&mut Vec<u8>, &T)) {
    match v {
        None => out.push(0),
        Some(inner) => {
            out.push(1);
            write(out, inner);
        }
    }
}

fn write_image(out: &mut Vec<u8>, img: &Image) {
    write_u32(out, img.width);
    write_u32(out, img.height);
    out.push(img.channels);
    out.extend_from_slice(&img.data);
}

fn write_payload(out: &mut Vec<u8>, p: &Payload) {
    match p {
        Payload::Real(v) => {
            out.push(0);
            write_f64(out, *v);
        }
        Payload::Int(v) => {
            out.push(1);
            out.extend_from_slice(&v.to_le_bytes());
        }
        Payload::Text(s) => {
            out.push(2);
            write_str(out, s);
        }
        Payload::Vector(v) => {
            out.push(3);
            write_u32(out, v.len() as u32);
            v.iter().for_each(|x| write_f64(out, *x));
        }
        Payload::Hist(h) => {
            out.push(4);
            out.push(h.channel);
            write_u32(out, h.bins.len() as u32);
            h.bins.iter().for_each(|x| write_f64(out, *x));
        }
        Payload::Features(f) => {
            out.push(5);
            write_u32(out, f.keypoints.len() as u32);
            for kp in &f.keypoints {
                write_u32(out, kp.x);
                write_u32(out, kp.y);
                write_f64(out, kp.score);
            }
            for d in &f.descriptors {
                d.iter().for_each(|x| write_f64(out, *x));
            }
        }
        Payload::Matrix(h) => {
            out.push(6);
            h.m.iter().for_each(|x| write_f64(out, *x));
        }
        Payload::Picture(i) => {
            out.push(7);
            write_image(out, i);
        }
        Payload::List(items) => {
            out.push(8);
            write_u32(out, items.len() as u32);
            items.iter().for_each(|x| write_payload(out, x));
        }
    }
}

fn need(bytes: &[u8], pos: usize, n: usize) -> Result<(), DataflowError> {
    if pos + n > bytes.len() {
        Err(DataflowError::MalformedRecord("truncated record".into()))
    } else {
        Ok(())
    }
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32, DataflowError> {
    need(bytes, *pos, 4)?;
    let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
    *pos += 4;
    Ok(v)
}

fn read_u8(bytes: &[u8], pos: &mut usize) -> Result<u8, DataflowError> {
    need(bytes, *pos, 1)?;
    let v = bytes[*pos];
    *pos += 1;
    Ok(v)
}

fn read_f64(bytes: &[u8], pos: &mut usize) -> Result<f64, DataflowError> {
    need(bytes, *pos, 8)?;
    let v = f64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap());
    *pos += 8;
    Ok(v)
}

fn read_str(bytes: &[u8], pos: &mut usize) -> Result<String, DataflowError> {
    let len = read_u32(bytes, pos)? as usize;
    need(bytes, *pos, len)?;
    let s = String::from_utf8(bytes[*pos..*pos + len].to_vec())
        .map_err(|_| DataflowError::MalformedRecord("non-UTF8 string".into()))?;
    *pos += len;
    Ok(s)
}

fn read_opt<T>(
    bytes: &[u8],
    pos: &mut usize,
    read: impl Fn(&[u8], &mut usize) -> Result<T, DataflowError>,
) -> Result<Option<T>, DataflowError> {
    match read_u8(bytes, pos)? {
        0 => Ok(None),
        1 => Ok(Some(read(bytes, pos)?)),
        other => Err(DataflowError::MalformedRecord(format!(
            "bad option tag {other}"
        ))),
    }
}

fn read_image(bytes: &[u8], pos: &mut usize) -> Result<Image, DataflowError> {
    let width = read_u32(bytes, pos)?;
    let height = read_u32(bytes, pos)?;
    let channels = read_u8(bytes, pos)?;
    let len = (width * height * channels as u32) as usize;
    need(bytes, *pos, len)?;
    let data = bytes[*pos..*pos + len].to_vec();
    *pos += len;
    Ok(Image::new(width, height, channels, data))
}

fn read_payload(bytes: &[u8], pos: &mut usize) -> Result<Payload, DataflowError> {
    match read_u8(bytes, pos)? {
        0 => Ok(Payload::Real(read_f64(bytes, pos)?)),
        1 => {
            need(bytes, *pos, 8)?;
            let v = i64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap());
            *pos += 8;
            Ok(Payload::Int(v))
        }
        2 => Ok(Payload::Text(read_str(bytes, pos)?)),
        3 => {
            let n = read_u32(bytes, pos)? as usize;
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(read_f64(bytes, pos)?);
            }
            Ok(Payload::Vector(v))
        }
        4 => {
            let channel = read_u8(bytes, pos)?;
            let n = read_u32(bytes, pos)? as usize;
            let mut bins = Vec::with_capacity(n);
            for _ in 0..n {
                bins.push(read_f64(bytes, pos)?);
            }
            Ok(Payload::Hist(Histogram { bins, channel }))
        }
        5 => {
            let n = read_u32(bytes, pos)? as usize;
            let mut keypoints = Vec::with_capacity(n);
            for _ in 0..n {
                let x = read_u32(bytes, pos)?;
                let y = read_u32(bytes, pos)?;
                let score = read_f64(bytes, pos)?;
                keypoints.push(Keypoint { x, y, score });
            }
            let mut descriptors = Vec::with_capacity(n);
            for _ in 0..n {
                let mut d = Vec::with_capacity(DESCRIPTOR_LEN);
                for _ in 0..DESCRIPTOR_LEN {
                    d.push(read_f64(bytes, pos)?);
                }
                descriptors.push(d);
            }
            Ok(Payload::Features(FeatureSet {
                keypoints,
                descriptors,
            }))
        }
        6 => {
            let mut m = [0.0f64; 9];
            for v in &mut m {
                *v = read_f64(bytes, pos)?;
            }
            Ok(Payload::Matrix(Homography { m }))
        }
        7 => Ok(Payload::Picture(read_image(bytes, pos)?)),
        8 => {
            let n = read_u32(bytes, pos)? as usize;
            let mut items = Vec::with_capacity(n);
            for _ in 0..n {
                items.push(read_payload(bytes, pos)?);
            }
            Ok(Payload::List(items))
        }
        other => Err(DataflowError::MalformedRecord(format!(
            "bad payload tag {other}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_image() -> Image {
        Image::new(2, 2, 3, (0u8..12).collect())
    }

    #[test]
    fn pack_unpack_round_trip() {
        let img = tiny_image();
        let rec = pack("a", Some(img.clone()), None, None, None, Vec::new()).unwrap();
        let (id, raw, processed, metrics, model, extra) = unpack(rec).unwrap();
        assert_eq!(id, "a");
        assert_eq!(raw, Some(img));
        assert_eq!(processed, None);
        assert_eq!(metrics, None);
        assert_eq!(model, None);
        assert!(extra.is_empty());
    }

    #[test]
    fn empty_im_id_is_malformed() {
        assert!(matches!(
            pack("", None, None, None, None, Vec::new()),
            Err(DataflowError::MalformedRecord(_))
        ));
        let rec = PackedRecord {
            im_id: String::new(),
            raw: None,
            processed: None,
            metrics: None,
            model: None,
            extra: Vec::new(),
        };
        assert!(matches!(unpack(rec), Err(DataflowError::MalformedRecord(_))));
    }

    #[test]
    fn record_size_follows_slot_rule() {
        let img = tiny_image();
        let metrics = Payload::Vector(vec![0.5; 256]);
        let rec = pack("im7", Some(img.clone()), None, Some(metrics), None, Vec::new()).unwrap();
        // id slot: 8 tag + (16 + 3); raw slot: 8 + (2*2*3 + 16);
        // metrics slot: 8 + (16 + 256*8).
        let expect = (8 + 16 + 3) + (8 + img.size_bytes()) + (8 + 16 + 256 * 8);
        assert_eq!(rec.size_bytes(), expect);
    }

    #[test]
    fn byte_layout_is_stable_and_round_trips() {
        let mut rec = pack(
            "x1",
            Some(tiny_image()),
            None,
            Some(Payload::Hist(Histogram::zeroed(2))),
            Some(Payload::Matrix(Homography::identity())),
            Vec::new(),
        )
        .unwrap();
        rec.set_extra("note", Payload::Text("hello".into()));
        rec.set_extra("vals", Payload::List(vec![Payload::Int(3), Payload::Real(0.25)]));
        let bytes_a = rec.to_bytes();
        let bytes_b = rec.to_bytes();
        assert_eq!(bytes_a, bytes_b);
        let back = PackedRecord::from_bytes(&bytes_a).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.to_bytes(), bytes_a);
    }

    #[test]
    fn set_extra_replaces_in_place() {
        let mut rec = PackedRecord::from_image("a", tiny_image()).unwrap();
        rec.set_extra("k", Payload::Int(1));
        rec.set_extra("j", Payload::Int(2));
        rec.set_extra("k", Payload::Int(3));
        assert_eq!(rec.extra.len(), 2);
        assert_eq!(rec.extra[0].0, "k");
        assert_eq!(rec.extra_value("k"), Some(&Payload::Int(3)));
    }
}
