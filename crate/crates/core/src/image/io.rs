//! PNG and binary PPM/PGM reading and writing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, GrayImage, ImageError, ImageFormat, ImageReader, RgbImage};

use super::{Image, LabelMap, Mask};
use crate::error::{Error, Result};

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        None => {
            return Err(Error::UnsupportedFormat(format!(
                "unrecognized raster format in {}",
                path.display()
            )))
        }
    }
    reader.decode().map_err(|e| match e {
        ImageError::Unsupported(u) => Error::UnsupportedFormat(u.to_string()),
        ImageError::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => {
            Error::io(path, io)
        }
        other => Error::CorruptData { path: path.to_owned(), reason: other.to_string() },
    })
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "ppm" | "pgm" | "pnm" => Ok(ImageFormat::Pnm),
        _ => Err(Error::UnsupportedFormat(format!("cannot write '{}'", path.display()))),
    }
}

fn write(img: DynamicImage, path: &Path) -> Result<()> {
    let to_error = |e: ImageError| match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedFormat(other.to_string()),
    };
    match format_for(path)? {
        ImageFormat::Pnm => {
            // Binary P6 / P5 with maxval 255; the encoder's default is PAM.
            let subtype = if img.color().has_color() {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            };
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut out = BufWriter::new(file);
            img.write_with_encoder(PnmEncoder::new(&mut out).with_subtype(subtype))
                .map_err(to_error)?;
            out.flush().map_err(|e| Error::io(path, e))
        }
        format => img.save_with_format(path, format).map_err(to_error),
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads an 8-bit raster and maps each channel value `v` to `v / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let rgb = decode(path.as_ref())?.into_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
    Image::new(h as usize, w as usize, data)
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let raw = image.data().iter().map(|&v| quantize(v)).collect();
    let buf = RgbImage::from_raw(image.width() as u32, image.height() as u32, raw)
        .expect("buffer length matches dimensions");
    write(DynamicImage::ImageRgb8(buf), path.as_ref())
}

/// Loads a mask, converting to grayscale and thresholding at 128.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let gray = decode(path.as_ref())?.into_luma8();
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(|v| u8::from(v >= 128)).collect();
    Mask::new(h as usize, w as usize, data)
}

/// Writes foreground as 255 and background as 0 in an 8-bit grayscale file.
pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let raw = mask.data().iter().map(|&v| v * 255).collect();
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("buffer length matches dimensions");
    write(DynamicImage::ImageLuma8(buf), path.as_ref())
}

/// Loads a grayscale label map whose pixel values are class indices.
pub fn load_label_map(path: impl AsRef<Path>, num_classes: usize) -> Result<LabelMap> {
    let path = path.as_ref();
    let img = decode(path)?;
    if img.color().has_color() {
        return Err(Error::CorruptData {
            path: path.to_owned(),
            reason: "label maps must be single-channel".into(),
        });
    }
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    LabelMap::new(h as usize, w as usize, num_classes, gray.into_raw())
}

pub fn save_label_map(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let buf = GrayImage::from_raw(labels.width() as u32, labels.height() as u32, labels.data().to_vec())
        .expect("buffer length matches dimensions");
    write(DynamicImage::ImageLuma8(buf), path.as_ref())
}
