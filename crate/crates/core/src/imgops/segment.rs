//! Otsu thresholding and 4-connected component labeling.

use crate::measure::Measurable;

use super::{Image, ImgError};

/// Threshold maximizing between-class variance, plus the `> threshold` mask.
/// A uniform image yields its own value as threshold and an empty foreground.
pub fn otsu_threshold(img: &Image) -> Result<(u8, Image), ImgError> {
    if img.channels != 1 {
        return Err(ImgError::BadChannels(format!(
            "otsu needs a 1-channel image, got {}",
            img.channels
        )));
    }
    let mut hist = [0u64; 256];
    for &v in &img.data {
        hist[v as usize] += 1;
    }
    let total = img.data.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let mut best_t = 0u8;
    let mut best_var = -1.0f64;
    let mut w_bg = 0.0;
    let mut sum_bg = 0.0;
    for (t, &count) in hist.iter().enumerate() {
        w_bg += count as f64;
        if w_bg == 0.0 {
            continue;
        }
        let w_fg = total - w_bg;
        if w_fg == 0.0 {
            break;
        }
        sum_bg += t as f64 * count as f64;
        let mean_bg = sum_bg / w_bg;
        let mean_fg = (sum_all - sum_bg) / w_fg;
        let between = w_bg * w_fg * (mean_bg - mean_fg) * (mean_bg - mean_fg);
        if between > best_var {
            best_var = between;
            best_t = t as u8;
        }
    }
    if best_var < 0.0 {
        // Uniform image: every split is empty on one side.
        best_t = img.data[0];
    }
    let mask_data = img
        .data
        .iter()
        .map(|&v| if v > best_t { 255 } else { 0 })
        .collect();
    Ok((best_t, Image::new(img.width, img.height, 1, mask_data)))
}

/// Per-pixel component labels: 0 is background, components are numbered
/// 1..count in raster-scan first-encounter order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
    pub count: u32,
}

impl Measurable for LabelMap {
    fn size_bytes(&self) -> u64 {
        self.labels.len() as u64 * 4 + 16
    }
}

/// 4-connectivity labeling of the nonzero pixels of `mask`.
pub fn connected_components(mask: &Image) -> LabelMap {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut labels = vec![0u32; w * h];
    let mut count = 0u32;
    let mut queue = Vec::new();
    for start in 0..w * h {
        if mask.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push(start);
        while let Some(idx) = queue.pop() {
            let (x, y) = (idx % w, idx / w);
            let mut visit = |nx: usize, ny: usize| {
                let nidx = ny * w + nx;
                if mask.data[nidx] != 0 && labels[nidx] == 0 {
                    labels[nidx] = count;
                    queue.push(nidx);
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < w {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < h {
                visit(x, y + 1);
            }
        }
    }
    LabelMap {
        width: mask.width,
        height: mask.height,
        labels,
        count,
    }
}

/// Axis-aligned bounding box of one labeled component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Bounding boxes in label order (1..count).
pub fn component_boxes(map: &LabelMap) -> Vec<BoundingBox> {
    let mut bounds: Vec<(u32, u32, u32, u32)> =
        vec![(u32::MAX, u32::MAX, 0, 0); map.count as usize];
    for (idx, &label) in map.labels.iter().enumerate() {
        if label == 0 {
            continue;
        }
        let x = (idx % map.width as usize) as u32;
        let y = (idx / map.width as usize) as u32;
        let b = &mut bounds[label as usize - 1];
        b.0 = b.0.min(x);
        b.1 = b.1.min(y);
        b.2 = b.2.max(x);
        b.3 = b.3.max(y);
    }
    bounds
        .into_iter()
        .map(|(x0, y0, x1, y1)| BoundingBox {
            x: x0,
            y: y0,
            width: x1 - x0 + 1,
            height: y1 - y0 + 1,
        })
        .collect()
}
