//! Float (`S7DF`) and 8-bit PNG image files.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub const S7DF_MAGIC: &[u8; 4] = b"S7DF";

/// Writes a lossless float image: magic, `u32` width, height, channels,
/// then row-major `f32` samples, all little-endian.
pub fn write_s7df(path: &Path, img: &Image) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + img.data.len() * 4);
    buf.extend_from_slice(S7DF_MAGIC);
    for v in [img.width as u32, img.height as u32, 3u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &img.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    super::write_atomic(path, &buf)
}

pub fn read_s7df(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_s7df(&bytes)
}

pub fn decode_s7df(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 16 || &bytes[..4] != S7DF_MAGIC {
        return Err(Error::Image("not an S7DF image".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, c) = (word(0), word(1), word(2));
    if c != 3 {
        return Err(Error::Image(format!("expected 3 channels, found {c}")));
    }
    let n = w.checked_mul(h).and_then(|v| v.checked_mul(3)).ok_or_else(|| Error::Image("image too large".into()))?;
    if bytes.len() != 16 + 4 * n {
        return Err(Error::Image(format!("S7DF payload is {} bytes, expected {}", bytes.len() - 16, 4 * n)));
    }
    let data = bytes[16..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    Image::from_data(w, h, data)
}

pub fn linear_to_srgb(v: f32) -> f32 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear(v: f32) -> f32 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// 8-bit sRGB-encoded PNG of a linear image.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_source_srgb(png::SrgbRenderingIntent::Perceptual);
    let bytes: Vec<u8> = img.data.iter().map(|v| (linear_to_srgb(*v) * 255.0).round() as u8).collect();
    let mut writer = encoder.write_header().map_err(|e| Error::Image(e.to_string()))?;
    writer.write_image_data(&bytes).map_err(|e| Error::Image(e.to_string()))?;
    writer.finish().map_err(|e| Error::Image(e.to_string()))?;
    Ok(())
}

/// Reads an 8-bit PNG and returns linear RGB (alpha dropped).
pub fn read_png(path: &Path) -> Result<Image> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| Error::Image(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Image("png too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Image(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let mut data = Vec::with_capacity(w * h * 3);
    for px in buf[..info.buffer_size()].chunks_exact(channels) {
        let rgb = if channels >= 3 { [px[0], px[1], px[2]] } else { [px[0]; 3] };
        data.extend(rgb.map(|v| srgb_to_linear(v as f32 / 255.0)));
    }
    Image::from_data(w, h, data)
}

/// Loads by extension: `.s7df` or `.png`.
pub fn read_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => read_png(path),
        _ => read_s7df(path),
    }
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => write_png(path, img),
        _ => write_s7df(path, img),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_data(w, h, (0..w * h * 3).map(|i| i as f32 / (w * h * 3) as f32).collect()).unwrap()
    }

    #[test]
    fn s7df_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.s7df");
        let img = ramp(5, 3);
        write_s7df(&p, &img).unwrap();
        assert_eq!(read_s7df(&p).unwrap(), img);
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"S7DF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 5);
        assert_eq!(bytes.len(), 16 + 5 * 3 * 3 * 4);
    }

    #[test]
    fn s7df_rejects_truncation() {
        let mut bytes = b"S7DF".to_vec();
        for v in [2u32, 2, 3] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[0; 10]);
        assert!(decode_s7df(&bytes).is_err());
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = ramp(7, 4);
        write_png(&p, &img).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!((back.width, back.height), (7, 4));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((linear_to_srgb(*a) - linear_to_srgb(*b)).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn srgb_transfer_round_trip() {
        for i in 0..=100 {
            let v = i as f32 / 100.0;
            assert!((srgb_to_linear(linear_to_srgb(v)) - v).abs() < 1e-6);
        }
    }
}
