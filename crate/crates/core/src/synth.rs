//! Small synthetic corpora with known ground truth, for tests and demos.
//!
//! Video frames are solid colors that encode their own index, so any
//! reordering can be read back from pixel values. Depth rasters are smooth
//! functions of position.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::video::FPS_SIDECAR;

/// Solid frame whose red/green channels hold `index` (up to 65535).
pub fn index_frame(index: usize, width: u32, height: u32) -> RgbImage {
    RgbImage::from_pixel(width, height, Rgb([(index & 0xff) as u8, ((index >> 8) & 0xff) as u8, 128]))
}

/// Reads back the index written by [`index_frame`] from the center pixel.
pub fn frame_index(img: &RgbImage) -> usize {
    let p = img.get_pixel(img.width() / 2, img.height() / 2);
    p[0] as usize | (p[1] as usize) << 8
}

fn save(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes `frames` index frames plus an `fps.txt` sidecar into `dir`.
pub fn write_frame_dir(dir: &Path, frames: usize, fps: f64, width: u32, height: u32) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0..frames {
        save(&dir.join(format!("frame_{i:06}.png")), &index_frame(i, width, height))?;
    }
    let sidecar = dir.join(FPS_SIDECAR);
    std::fs::write(&sidecar, format!("{fps}\n")).map_err(|e| Error::io(&sidecar, e))
}

/// Colorful gradient test card.
pub fn gradient_image(width: u32, height: u32, salt: u32) -> RgbImage {
    RgbImage::from_fn(width, height, |x, y| {
        Rgb([
            ((x * 255) / width.max(1)) as u8,
            ((y * 255) / height.max(1)) as u8,
            ((x ^ y).wrapping_add(salt) & 0xff) as u8,
        ])
    })
}

/// Writes `color/<stem>.png` and a 16-bit millimeter `depth/<stem>.png`
/// under `root`. `depth_m` gives meters per pixel; 0 marks invalid.
pub fn write_rgbd_pair(
    root: &Path,
    stem: &str,
    width: u32,
    height: u32,
    depth_m: impl Fn(u32, u32) -> f64,
) -> Result<(PathBuf, PathBuf)> {
    let color_dir = root.join("color");
    let depth_dir = root.join("depth");
    for d in [&color_dir, &depth_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let color = color_dir.join(format!("{stem}.png"));
    save(&color, &gradient_image(width, height, stem.len() as u32))?;
    let raw: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(width, height, |x, y| {
        Luma([(depth_m(x, y) * 1000.0).round().clamp(0.0, 65535.0) as u16])
    });
    let depth = depth_dir.join(format!("{stem}.png"));
    raw.save(&depth).map_err(|e| Error::Image {
        path: depth.clone(),
        source: e,
    })?;
    Ok((color, depth))
}

/// Depth that grows left to right and top to bottom across `[near, far]`.
pub fn ramp_depth(width: u32, height: u32, near: f64, far: f64) -> impl Fn(u32, u32) -> f64 {
    move |x, y| {
        let t = (x as f64 / width as f64 + y as f64 / height as f64) / 2.0;
        near + t * (far - near)
    }
}
