//! PNG and raw depth files.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::perspective::StylePair;
use crate::scalar::Scalar;

/// Extension of raw depth files: `u32 width, u32 height`, then
/// `width * height` little-endian f32 values, row-major.
pub const DEPTH_SIDECAR_EXT: &str = "depth";

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit RGB PNG; values are clamped to `[0, 1]`.
pub fn write_png_rgb<S: Scalar>(path: &Path, img: &Image<S>) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::invalid("RGB output needs a 3-channel image"));
    }
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(
        img.width as u32,
        img.height as u32,
        img.data.iter().map(|v| to_u8(v.to_f64_lossy())).collect(),
    )
    .expect("buffer matches dimensions");
    buf.save(path).map_err(|e| image_err(path, e))
}

/// Reads any PNG as RGB in `[0, 1]`.
pub fn read_png_rgb<S: Scalar>(path: &Path) -> Result<Image<S>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().bytes_per_pixel() / img.color().channel_count() > 1 {
        let rgb = img.to_rgb16();
        return Image::from_vec(w, h, 3, rgb.into_raw().into_iter().map(|v| S::lit(v as f64 / 65535.0)).collect());
    }
    let rgb = img.to_rgb8();
    Image::from_vec(w, h, 3, rgb.into_raw().into_iter().map(|v| S::lit(v as f64 / 255.0)).collect())
}

/// 16-bit grayscale PNG of a depth map, min-max normalized (a constant map
/// is written as mid-gray).
pub fn write_depth_png16<S: Scalar>(path: &Path, depth: &Image<S>) -> Result<()> {
    if depth.channels != 1 {
        return Err(Error::invalid("depth output needs a single-channel image"));
    }
    let vals: Vec<f64> = depth.data.iter().map(|v| v.to_f64_lossy()).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let data: Vec<u16> = vals
        .iter()
        .map(|&v| {
            let n = if range > 0.0 { (v - lo) / range } else { 0.5 };
            (n * 65535.0).round() as u16
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width as u32, depth.height as u32, data).expect("buffer matches dimensions");
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn write_depth_sidecar<S: Scalar>(path: &Path, depth: &Image<S>) -> Result<()> {
    if depth.channels != 1 {
        return Err(Error::invalid("depth output needs a single-channel image"));
    }
    let mut bytes = Vec::with_capacity(8 + 4 * depth.data.len());
    bytes.write_all(&(depth.width as u32).to_le_bytes()).unwrap();
    bytes.write_all(&(depth.height as u32).to_le_bytes()).unwrap();
    for v in &depth.data {
        bytes.write_all(&v.to_f32_lossy().to_le_bytes()).unwrap();
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_depth_sidecar<S: Scalar>(path: &Path) -> Result<Image<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::format(format!("{}: depth file too short for its header", path.display())));
    }
    let w = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload = &bytes[8..];
    if payload.len() != 4 * w * h {
        return Err(Error::format(format!(
            "{}: header declares {w}x{h} depth values but the payload holds {} bytes",
            path.display(),
            payload.len()
        )));
    }
    let data: Vec<S> = payload
        .chunks_exact(4)
        .map(|c| S::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(format!("{}: depth values must be finite", path.display())));
    }
    Image::from_vec(w, h, 1, data)
}

/// Depth from a 16-bit (or 8-bit) PNG, scaled to `[0, 1]`, or from a raw sidecar.
pub fn read_depth<S: Scalar>(path: &Path) -> Result<Image<S>> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if !is_png {
        return read_depth_sidecar(path);
    }
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let l = img.to_luma16();
    let (w, h) = (l.width() as usize, l.height() as usize);
    Image::from_vec(w, h, 1, l.into_raw().into_iter().map(|v| S::lit(v as f64 / 65535.0)).collect())
}

/// Loads an RGB style image and its required depth map. Depth of another
/// size is area-resampled to the RGB size; the returned messages record it.
pub fn load_style_pair<S: Scalar>(rgb_path: &Path, depth_path: Option<&Path>) -> Result<(StylePair<S>, Vec<String>)> {
    let missing = |what: String| {
        Error::invalid(format!(
            "{what}: a style depth map is a required input alongside the RGB style image \
             (depth estimation is not provided; supply a 16-bit PNG or a raw .{DEPTH_SIDECAR_EXT} file)"
        ))
    };
    let depth_path = depth_path.ok_or_else(|| missing("no style depth given".into()))?;
    if !depth_path.exists() {
        return Err(missing(format!("style depth {} not found", depth_path.display())));
    }
    let rgb = read_png_rgb::<S>(rgb_path)?;
    let mut depth = read_depth::<S>(depth_path)?;
    let mut warnings = Vec::new();
    if depth.width != rgb.width || depth.height != rgb.height {
        let msg = format!(
            "style depth {}x{} resampled to the RGB size {}x{}",
            depth.width, depth.height, rgb.width, rgb.height
        );
        log::warn!("{msg}");
        warnings.push(msg);
        depth = depth.resize_area(rgb.width, rgb.height)?;
    }
    Ok((StylePair::new(rgb, depth)?, warnings))
}
