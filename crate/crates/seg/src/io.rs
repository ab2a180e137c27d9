//! PNG image/mask files and the on-disk dataset layout
//! `<root>/images/<id>.png` + `<root>/masks/<id>.png`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use vimpute_core::dataset::{Dataset, Sample, Split};
use vimpute_core::{BinaryMask, GrayImage};

use crate::error::{Error, IoContext, Result};

pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path).at(path)?;
    reader.decode().map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Intensities rescaled to `[0, 1]` by the full range of the stored bit depth.
fn intensities(img: DynamicImage) -> (u32, u32, Vec<f32>) {
    let (w, h) = (img.width(), img.height());
    let data = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        other => other.into_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
    };
    (h, w, data)
}

/// Reads an 8- or 16-bit grayscale PNG (colour images are converted to luma).
pub fn read_image(path: &Path) -> Result<GrayImage> {
    let (h, w, data) = intensities(decode(path)?);
    GrayImage::new(h as usize, w as usize, data)
        .map_err(|e| Error::BadFile { path: path.to_path_buf(), reason: e.to_string() })
}

/// Reads a mask. Files whose values are all 0 or 1 of the stored range are
/// taken as label maps (nonzero is foreground); anything else is
/// binarized at half of full scale.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = decode(path)?;
    let label_map = match &img {
        DynamicImage::ImageLuma8(b) => b.as_raw().iter().all(|&v| v <= 1),
        DynamicImage::ImageLuma16(b) => b.as_raw().iter().all(|&v| v <= 1),
        _ => false,
    };
    let (h, w, data) = intensities(img);
    let bits = if label_map {
        data.iter().map(|&v| (v > 0.0) as u8).collect()
    } else {
        data.iter().map(|&v| (v >= 0.5) as u8).collect()
    };
    BinaryMask::new(h as usize, w as usize, bits)
        .map_err(|e| Error::BadFile { path: path.to_path_buf(), reason: e.to_string() })
}

fn save(path: &Path, img: DynamicImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// 16-bit grayscale PNG; values on the 1/65535 grid survive a round trip exactly.
pub fn write_image(path: &Path, img: &GrayImage) -> Result<()> {
    let data = img.pixels().iter().map(|&v| (v * 65535.0).round() as u16).collect();
    let buf = ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(img.width() as u32, img.height() as u32, data)
        .expect("buffer size matches image dimensions");
    save(path, DynamicImage::ImageLuma16(buf))
}

/// 8-bit grayscale PNG (for previews).
pub fn write_image8(path: &Path, img: &GrayImage) -> Result<()> {
    let data = img.pixels().iter().map(|&v| (v * 255.0).round() as u8).collect();
    let buf = ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(img.width() as u32, img.height() as u32, data)
        .expect("buffer size matches image dimensions");
    save(path, DynamicImage::ImageLuma8(buf))
}

/// 8-bit PNG with foreground 255.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let data = mask.pixels().iter().map(|&v| v * 255).collect();
    let buf = ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(mask.width() as u32, mask.height() as u32, data)
        .expect("buffer size matches mask dimensions");
    save(path, DynamicImage::ImageLuma8(buf))
}

pub fn write_rgb(path: &Path, h: usize, w: usize, rgb: Vec<u8>) -> Result<()> {
    let buf = ImageBuffer::<Rgb<u8>, Vec<u8>>::from_raw(w as u32, h as u32, rgb).expect("buffer size matches dimensions");
    save(path, DynamicImage::ImageRgb8(buf))
}

/// `(id, path)` for every `*.png` in `dir`, sorted by id.
pub fn list_pngs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            if let Some(id) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((id.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_dataset(root: &Path, split: Split) -> Result<Dataset> {
    let images = list_pngs(&root.join(IMAGES_DIR))?;
    if images.is_empty() {
        return Err(Error::EmptyDirectory { path: root.join(IMAGES_DIR) });
    }
    let mut items = Vec::with_capacity(images.len());
    for (id, img_path) in images {
        let mask_path = root.join(MASKS_DIR).join(format!("{id}.png"));
        if !mask_path.is_file() {
            return Err(Error::OrphanImage { id, path: mask_path });
        }
        let image = read_image(&img_path)?;
        let mask = read_mask(&mask_path)?;
        if image.dims() != mask.dims() {
            return Err(Error::BadFile {
                path: mask_path,
                reason: format!("mask is {:?} but image `{id}` is {:?}", mask.dims(), image.dims()),
            });
        }
        items.push(Sample::new(id, image, mask)?);
    }
    Ok(Dataset::new(items, split)?)
}

pub fn save_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    for s in ds.items() {
        write_image(&root.join(IMAGES_DIR).join(format!("{}.png", s.id)), &s.image)?;
        write_mask(&root.join(MASKS_DIR).join(format!("{}.png", s.id)), &s.mask)?;
    }
    Ok(())
}
