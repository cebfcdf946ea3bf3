//! Shared synthetic scene texture: a gradient background scattered with
//! rectangles and disks, giving corner detectors plenty to latch onto.

use crate::imgops::Image;
use crate::rng::SplitMix64;

pub fn textured_scene(width: u32, height: u32, rng: &mut SplitMix64) -> Image {
    let mut img = Image::filled(width, height, 3, 0);
    for y in 0..height {
        for x in 0..width {
            let gx = (30 + x * 40 / width.max(1)) as u8;
            let gy = (30 + y * 40 / height.max(1)) as u8;
            img.set(x, y, 0, gx);
            img.set(x, y, 1, gy);
            img.set(x, y, 2, 60);
        }
    }
    let rects = 16 + (width as u64 * height as u64 / 2500);
    for _ in 0..rects {
        let rw = 6 + rng.below(width.max(8) as u64 / 4) as u32;
        let rh = 6 + rng.below(height.max(8) as u64 / 4) as u32;
        let rx = rng.below((width.saturating_sub(rw)).max(1) as u64) as u32;
        let ry = rng.below((height.saturating_sub(rh)).max(1) as u64) as u32;
        let color = [
            60 + rng.below(196) as u8,
            60 + rng.below(196) as u8,
            60 + rng.below(196) as u8,
        ];
        for y in ry..(ry + rh).min(height) {
            for x in rx..(rx + rw).min(width) {
                for c in 0..3u8 {
                    img.set(x, y, c, color[c as usize]);
                }
            }
        }
    }
    for _ in 0..rects / 3 {
        let r = 3 + rng.below(8) as i64;
        let cx = rng.below(width as u64) as i64;
        let cy = rng.below(height as u64) as i64;
        let color = [
            40 + rng.below(216) as u8,
            40 + rng.below(216) as u8,
            40 + rng.below(216) as u8,
        ];
        for y in (cy - r).max(0)..(cy + r).min(height as i64) {
            for x in (cx - r).max(0)..(cx + r).min(width as i64) {
                if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r {
                    for c in 0..3u8 {
                        img.set(x as u32, y as u32, c, color[c as usize]);
                    }
                }
            }
        }
    }
    // Per-pixel speckle makes local patches unique, so descriptor matching
    // cannot confuse one rectangle corner for another.
    for v in img.data.iter_mut() {
        let jitter = rng.below(25) as i32 - 12;
        *v = (*v as i32 + jitter).clamp(0, 255) as u8;
    }
    img
}
