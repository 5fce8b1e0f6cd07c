//! File helpers: atomic writes, JSON documents and 16-bit PNG rasters.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{DepthImage, LabelImage, Raster};

/// Default depth scale: raw units are millimeters.
pub const DEFAULT_DEPTH_SCALE: f64 = 0.001;

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(parent)
        .map_err(|e| Error::io(parent, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn encode_png(path: &Path, width: usize, height: usize, bytes: &[u8], color: ExtendedColorType) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    PngEncoder::new(&mut out)
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(out.into_inner())
}

/// Writes a single-channel 16-bit PNG.
pub fn save_u16_png(raster: &Raster<u16>, path: &Path) -> Result<()> {
    // PNG stores 16-bit samples big-endian; the encoder takes native-endian bytes.
    let bytes: Vec<u8> = raster.as_slice().iter().flat_map(|v| v.to_ne_bytes()).collect();
    let png = encode_png(path, raster.width(), raster.height(), &bytes, ExtendedColorType::L16)?;
    write_atomic(path, &png)
}

/// Reads a single-channel 16-bit PNG; any other layout is a format error.
pub fn load_u16_png(path: &Path) -> Result<Raster<u16>> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Raster::from_vec(w as usize, h as usize, buf.into_raw())
        }
        other => Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected single-channel 16-bit PNG, found {:?}", other.color()),
        }),
    }
}

pub fn save_label_image(img: &LabelImage, path: &Path) -> Result<()> {
    save_u16_png(img, path)
}

pub fn load_label_image(path: &Path) -> Result<LabelImage> {
    load_u16_png(path)
}

/// Loads a 16-bit depth PNG, converting raw units to meters with `scale`.
/// Raw 0 stays 0 (invalid).
pub fn load_depth(path: &Path, scale: f64) -> Result<DepthImage> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid("depth scale", format!("{scale} is not positive")));
    }
    Ok(load_u16_png(path)?.map(|&raw| raw as f64 * scale))
}

/// Quantizes depth to raw units of `scale` meters (rounded, saturating).
pub fn save_depth(depth: &DepthImage, path: &Path, scale: f64) -> Result<()> {
    let raw = depth.map(|&d| {
        if d > 0.0 && d.is_finite() {
            (d / scale).round().clamp(0.0, u16::MAX as f64) as u16
        } else {
            0
        }
    });
    save_u16_png(&raw, path)
}

pub fn save_rgb_png(raster: &Raster<[u8; 3]>, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = raster.as_slice().iter().flatten().copied().collect();
    let png = encode_png(path, raster.width(), raster.height(), &bytes, ExtendedColorType::Rgb8)?;
    write_atomic(path, &png)
}

pub fn load_rgb_png(path: &Path) -> Result<Raster<[u8; 3]>> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0).collect();
    Raster::from_vec(w as usize, h as usize, data)
}
