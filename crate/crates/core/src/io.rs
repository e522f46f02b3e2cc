//! Tensor files ("RTF1") and 8-bit PNG conversion.
//!
//! RTF1 layout: magic `RTF1`, then `H`, `W`, `C` as little-endian `u32`,
//! then `H * W * C` little-endian `f64` values in row-major interleaved order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, KernelGrid};

pub const RTF_MAGIC: &[u8; 4] = b"RTF1";

pub fn write_rtf<W: Write>(mut out: W, image: &ImageTensor) -> Result<()> {
    out.write_all(RTF_MAGIC)?;
    for d in [image.height(), image.width(), image.channels()] {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in image.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rtf<R: Read>(mut input: R) -> Result<ImageTensor> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::TensorFile("file too short for header".into()))?;
    if &magic != RTF_MAGIC {
        return Err(Error::TensorFile(format!(
            "bad magic {:?}, expected \"RTF1\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        let mut buf = [0u8; 4];
        input
            .read_exact(&mut buf)
            .map_err(|_| Error::TensorFile("truncated header".into()))?;
        *d = u32::from_le_bytes(buf) as usize;
    }
    let [h, w, c] = dims;
    let count = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::TensorFile("dimensions overflow".into()))?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::TensorFile(format!(
            "expected {} payload bytes for {h}x{w}x{c}, found {}",
            count * 8,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    ImageTensor::from_vec(h, w, c, data)
}

pub fn save_rtf(path: impl AsRef<Path>, image: &ImageTensor) -> Result<()> {
    write_rtf(BufWriter::new(File::create(path)?), image)
}

pub fn load_rtf(path: impl AsRef<Path>) -> Result<ImageTensor> {
    read_rtf(BufReader::new(File::open(path)?))
}

pub fn kernel_to_image(kernel: &KernelGrid) -> ImageTensor {
    ImageTensor::from_vec(kernel.height(), kernel.width(), 1, kernel.data().to_vec())
        .expect("kernel grids have valid dims")
}

pub fn save_kernel(path: impl AsRef<Path>, kernel: &KernelGrid) -> Result<()> {
    save_rtf(path, &kernel_to_image(kernel))
}

pub fn load_kernel(path: impl AsRef<Path>) -> Result<KernelGrid> {
    let img = load_rtf(path)?;
    if img.channels() != 1 {
        return Err(Error::TensorFile(format!(
            "kernel files must have one channel, found {}",
            img.channels()
        )));
    }
    KernelGrid::from_vec(img.height(), img.width(), img.into_vec())
}

/// Reads an 8-bit PNG as `[0, 1]` floats. Gray stays one channel; alpha is dropped.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let data = rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        ImageTensor::from_vec(h, w, 3, data)
    } else {
        let gray = img.to_luma8();
        let data = gray.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        ImageTensor::from_vec(h, w, 1, data)
    }
}

/// Writes a 1- or 3-channel image as 8-bit PNG, clamping to `[0, 1]`.
pub fn save_png(path: impl AsRef<Path>, image: &ImageTensor) -> Result<()> {
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let (w, h) = (image.width() as u32, image.height() as u32);
    match image.channels() {
        1 => image::GrayImage::from_raw(w, h, bytes)
            .expect("buffer size matches")
            .save(path)?,
        3 => image::RgbImage::from_raw(w, h, bytes)
            .expect("buffer size matches")
            .save(path)?,
        c => {
            return Err(Error::invalid(format!(
                "PNG output supports 1 or 3 channels, got {c}"
            )))
        }
    }
    Ok(())
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Loads PNG by extension, RTF1 otherwise.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    if is_png(path) {
        load_png(path)
    } else {
        load_rtf(path)
    }
}

pub fn save_image(path: impl AsRef<Path>, image: &ImageTensor) -> Result<()> {
    let path = path.as_ref();
    if is_png(path) {
        save_png(path, image)
    } else {
        save_rtf(path, image)
    }
}
