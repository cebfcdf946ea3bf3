//! 8-bit raster images, 1 or 3 channels, row-major.

use crate::measure::Measurable;

use super::ImgError;

/// An 8-bit image. `data.len() == width * height * channels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be >= 1");
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        assert_eq!(
            data.len(),
            (width * height * channels as u32) as usize,
            "data length must match dimensions"
        );
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// Single-channel image filled with one value.
    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Self {
        Self::new(
            width,
            height,
            channels,
            vec![value; (width * height * channels as u32) as usize],
        )
    }

    #[inline]
    pub fn sample(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[((y * self.width + x) * self.channels as u32 + c as u32) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u8, v: u8) {
        self.data[((y * self.width + x) * self.channels as u32 + c as u32) as usize] = v;
    }

    pub fn pixel_count(&self) -> usize {
        (self.width * self.height) as usize
    }
}

impl Measurable for Image {
    fn size_bytes(&self) -> u64 {
        self.width as u64 * self.height as u64 * self.channels as u64 + 16
    }
}

/// Luma conversion: round(0.299 R + 0.587 G + 0.114 B) per pixel.
pub fn to_gray(img: &Image) -> Result<Image, ImgError> {
    if img.channels != 3 {
        return Err(ImgError::BadChannels(format!(
            "to_gray needs a 3-channel image, got {}",
            img.channels
        )));
    }
    let mut data = Vec::with_capacity(img.pixel_count());
    for px in img.data.chunks_exact(3) {
        let luma = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
        data.push(luma.round() as u8);
    }
    Ok(Image::new(img.width, img.height, 1, data))
}

/// Copy one channel plane out of a multi-channel image.
pub fn extract_channel(img: &Image, c: u8) -> Result<Image, ImgError> {
    if c >= img.channels {
        return Err(ImgError::BadChannels(format!(
            "channel {c} out of range for {}-channel image",
            img.channels
        )));
    }
    let step = img.channels as usize;
    let data = img.data[c as usize..]
        .iter()
        .step_by(step)
        .copied()
        .collect();
    Ok(Image::new(img.width, img.height, 1, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_of_black_and_white() {
        let black = Image::filled(2, 2, 3, 0);
        assert!(to_gray(&black).unwrap().data.iter().all(|&v| v == 0));
        let white = Image::filled(2, 2, 3, 255);
        assert!(to_gray(&white).unwrap().data.iter().all(|&v| v == 255));
    }

    #[test]
    fn gray_of_pure_red() {
        let mut img = Image::filled(1, 1, 3, 0);
        img.set(0, 0, 0, 255);
        // round(0.299 * 255) = round(76.245) = 76
        assert_eq!(to_gray(&img).unwrap().data[0], 76);
    }

    #[test]
    fn gray_rejects_single_channel() {
        let img = Image::filled(2, 2, 1, 7);
        assert!(matches!(to_gray(&img), Err(ImgError::BadChannels(_))));
    }

    #[test]
    fn extract_channel_plane() {
        let mut img = Image::filled(2, 1, 3, 0);
        for x in 0..2 {
            img.set(x, 0, 0, 10);
            img.set(x, 0, 1, 20);
            img.set(x, 0, 2, 30);
        }
        assert_eq!(extract_channel(&img, 2).unwrap().data, vec![30, 30]);
        assert!(matches!(extract_channel(&img, 5), Err(ImgError::BadChannels(_))));
    }

    #[test]
    fn size_rule() {
        let img = Image::filled(4, 3, 3, 0);
        assert_eq!(img.size_bytes(), 4 * 3 * 3 + 16);
    }
}
