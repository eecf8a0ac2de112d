//! PNG encoding/decoding for the on-disk grid formats.
//!
//! Images are 8-bit RGB; label maps are 8- or 16-bit single-channel with the
//! pixel value equal to the class id; masks are 8-bit single-channel with
//! values {0, 255}.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Image, LabelMap};

pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    let rgb = img.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(w, h, data)
}

pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    let mut out = RgbImage::new(img.width() as u32, img.height() as u32);
    for (i, px) in out.pixels_mut().enumerate() {
        for c in 0..3 {
            px.0[c] = (img.data()[i * 3 + c] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    out.save(path)?;
    Ok(())
}

pub fn read_labelmap(path: &Path) -> Result<LabelMap> {
    let img = image::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    let (w, h, labels) = match img {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            (w, h, buf.as_raw().iter().map(|&v| v as u32).collect())
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            (w, h, buf.as_raw().iter().map(|&v| v as u32).collect())
        }
        other => {
            return Err(Error::data(
                path,
                format!(
                    "label maps must be 8- or 16-bit single-channel PNG, got {:?}",
                    other.color()
                ),
            ))
        }
    };
    LabelMap::new(w, h, labels)
}

pub fn write_labelmap(labels: &LabelMap, path: &Path) -> Result<()> {
    if let Some(&max) = labels.labels().iter().max() {
        if max > u16::MAX as u32 {
            return Err(Error::data(path, format!("class id {max} exceeds 16-bit PNG range")));
        }
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(
        labels.width() as u32,
        labels.height() as u32,
        |x, y| Luma([labels.get(x as usize, y as usize) as u16]),
    );
    buf.save(path)?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    let buf = match img {
        DynamicImage::ImageLuma8(buf) => buf,
        other => {
            return Err(Error::data(
                path,
                format!("masks must be 8-bit single-channel PNG, got {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut bits = Vec::with_capacity(w * h);
    for &v in buf.as_raw() {
        match v {
            0 => bits.push(0),
            255 => bits.push(1),
            other => {
                return Err(Error::data(path, format!("mask pixel value {other} is not 0 or 255")))
            }
        }
    }
    BinaryMask::new(w, h, bits)
}

pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let buf = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([mask.get(x as usize, y as usize) * 255])
    });
    buf.save(path)?;
    Ok(())
}
