//! PPM (P6) / PGM (P5) binary read and write, bit-exact round trip.

use std::fs;
use std::path::Path;

use super::{Image, ImgError};

pub fn write_ppm_bytes(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_ppm(img: &Image, path: &Path) -> std::io::Result<()> {
    fs::write(path, write_ppm_bytes(img))
}

pub fn read_ppm_bytes(bytes: &[u8]) -> Result<Image, ImgError> {
    let mut pos = 0usize;
    let magic = token(bytes, &mut pos).ok_or_else(|| ImgError::Decode("missing magic".into()))?;
    let channels = match magic.as_str() {
        "P5" => 1u8,
        "P6" => 3u8,
        other => return Err(ImgError::Decode(format!("unsupported magic '{other}'"))),
    };
    let width: u32 = parse_num(bytes, &mut pos)?;
    let height: u32 = parse_num(bytes, &mut pos)?;
    let maxval: u32 = parse_num(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(ImgError::Decode(format!("unsupported maxval {maxval}")));
    }
    // Single whitespace byte separates the header from the raster.
    pos += 1;
    let need = (width * height * channels as u32) as usize;
    if bytes.len() < pos + need {
        return Err(ImgError::Decode("truncated raster".into()));
    }
    Ok(Image::new(
        width,
        height,
        channels,
        bytes[pos..pos + need].to_vec(),
    ))
}

pub fn read_ppm(path: &Path) -> Result<Image, ImgError> {
    let bytes = fs::read(path).map_err(|e| ImgError::Decode(format!("{}: {e}", path.display())))?;
    read_ppm_bytes(&bytes)
}

fn token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    } else {
        None
    }
}

fn parse_num(bytes: &[u8], pos: &mut usize) -> Result<u32, ImgError> {
    token(bytes, pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| ImgError::Decode("bad header number".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_p6_and_p5() {
        let rgb = Image::new(2, 2, 3, (0u8..12).collect());
        assert_eq!(read_ppm_bytes(&write_ppm_bytes(&rgb)).unwrap(), rgb);
        let gray = Image::new(3, 2, 1, vec![9, 8, 7, 6, 5, 4]);
        assert_eq!(read_ppm_bytes(&write_ppm_bytes(&gray)).unwrap(), gray);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_ppm_bytes(b"P9\n1 1\n255\nx").is_err());
        assert!(read_ppm_bytes(b"P6\n4 4\n255\nxy").is_err());
    }
}
