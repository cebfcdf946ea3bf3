//! Separable Gaussian smoothing with clamped edges.

use super::{Image, ImgError};

/// Gaussian blur with kernel radius ⌈3σ⌉ and edge clamping. Output has the
/// same shape as the input.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image, ImgError> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(ImgError::BadParam(format!("sigma must be positive, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h, ch) = (img.width as i64, img.height as i64, img.channels as usize);

    // Horizontal pass into a float buffer, then vertical.
    let mut mid = vec![0.0f64; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let sx = (x + k as i64 - radius).clamp(0, w - 1);
                    acc += wgt * img.data[((y * w + sx) as usize * ch) + c] as f64;
                }
                mid[(y * w + x) as usize * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0u8; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let sy = (y + k as i64 - radius).clamp(0, h - 1);
                    acc += wgt * mid[(sy * w + x) as usize * ch + c];
                }
                out[(y * w + x) as usize * ch + c] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(Image::new(img.width, img.height, img.channels, out))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64 * i as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}
