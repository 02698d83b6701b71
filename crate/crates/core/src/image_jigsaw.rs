//! Image jigsaw: raster-order grid partition, shuffle and reassembly.

use image::{DynamicImage, GenericImage, GenericImageView, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FilterReason, Result};
use crate::permutation::{sample_permutation, GroundTruth, Permutation};
use crate::prompts::{render_prompt, PromptKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageGridConfig {
    pub rows: u32,
    pub cols: u32,
    pub min_side_px: u32,
    pub allow_identity: bool,
}

impl Default for ImageGridConfig {
    fn default() -> Self {
        ImageGridConfig {
            rows: 3,
            cols: 3,
            min_side_px: 84,
            allow_identity: true,
        }
    }
}

impl ImageGridConfig {
    pub fn k(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.k() < 2 {
            return Err(Error::invalid(format!(
                "image.rows/image.cols: grid {}x{} must have at least two tiles",
                self.rows, self.cols
            )));
        }
        if self.k() > crate::permutation::MAX_K {
            return Err(Error::invalid(format!(
                "image.rows/image.cols: grid {}x{} exceeds {} tiles",
                self.rows,
                self.cols,
                crate::permutation::MAX_K
            )));
        }
        if self.min_side_px < self.rows || self.min_side_px < self.cols {
            return Err(Error::invalid(format!(
                "image.min_side_px: {} is smaller than the grid dimensions",
                self.min_side_px
            )));
        }
        Ok(())
    }

    pub fn prompt_kind(&self) -> PromptKind {
        PromptKind::Image {
            rows: self.rows as usize,
            cols: self.cols as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }
}

/// Crop region plus its tiles in raster order (row-major, top-left first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPlan {
    pub rows: u32,
    pub cols: u32,
    pub crop: Rect,
    pub tiles: Vec<Rect>,
}

impl GridPlan {
    pub fn tile_size(&self) -> (u32, u32) {
        (self.crop.w / self.cols, self.crop.h / self.rows)
    }
}

/// Plans an `rows x cols` grid over an `h x w` image. Remainder pixels on the
/// right and bottom edges are dropped so every tile has the same size.
pub fn plan_grid(h: u32, w: u32, cfg: &ImageGridConfig) -> Result<GridPlan> {
    cfg.validate()?;
    if h.min(w) < cfg.min_side_px {
        return Err(Error::filtered(
            FilterReason::TooSmall,
            format!("{w}x{h} has a side below {} px", cfg.min_side_px),
        ));
    }
    let tile_h = h / cfg.rows;
    let tile_w = w / cfg.cols;
    let crop = Rect {
        x: 0,
        y: 0,
        w: tile_w * cfg.cols,
        h: tile_h * cfg.rows,
    };
    let tiles = (0..cfg.rows)
        .flat_map(|r| {
            (0..cfg.cols).map(move |c| Rect {
                x: c * tile_w,
                y: r * tile_h,
                w: tile_w,
                h: tile_h,
            })
        })
        .collect();
    Ok(GridPlan {
        rows: cfg.rows,
        cols: cfg.cols,
        crop,
        tiles,
    })
}

pub fn cut_tiles(image: &RgbImage, plan: &GridPlan) -> Vec<RgbImage> {
    plan.tiles
        .iter()
        .map(|t| image.view(t.x, t.y, t.w, t.h).to_image())
        .collect()
}

pub fn crop(image: &RgbImage, plan: &GridPlan) -> RgbImage {
    let c = plan.crop;
    image.view(c.x, c.y, c.w, c.h).to_image()
}

/// An image jigsaw held in memory; persisting tiles is the pipeline's job.
#[derive(Debug, Clone)]
pub struct ImageJigsaw {
    pub plan: GridPlan,
    pub perm: Permutation,
    pub ground_truth: GroundTruth,
    pub prompt: String,
    /// Tiles in shuffled order; index `j` is shown as "Tile j+1".
    pub shuffled_tiles: Vec<RgbImage>,
    pub source_size: (u32, u32),
}

pub fn generate_image_task<R: Rng + ?Sized>(
    image: &DynamicImage,
    cfg: &ImageGridConfig,
    rng: &mut R,
) -> Result<ImageJigsaw> {
    let rgb = image.to_rgb8();
    let plan = plan_grid(rgb.height(), rgb.width(), cfg)?;
    let tiles = cut_tiles(&rgb, &plan);
    let perm = sample_permutation(cfg.k(), rng, cfg.allow_identity)?;
    let shuffled_tiles = perm.apply_shuffle(&tiles)?;
    Ok(ImageJigsaw {
        ground_truth: perm.ground_truth(),
        prompt: render_prompt(&cfg.prompt_kind())?,
        plan,
        perm,
        shuffled_tiles,
        source_size: (rgb.width(), rgb.height()),
    })
}

/// Places `shuffled_tiles[answer[i] - 1]` at raster position `i`.
///
/// `answer` must be a permutation of `1..=K` with `K = rows * cols`; a single
/// tile is returned unchanged.
pub fn reassemble(
    shuffled_tiles: &[RgbImage],
    answer: &[usize],
    rows: u32,
    cols: u32,
) -> Result<RgbImage> {
    let k = shuffled_tiles.len();
    if k == 0 || k != (rows * cols) as usize || answer.len() != k {
        return Err(Error::invalid(format!(
            "{k} tiles and {} answer entries for a {rows}x{cols} grid",
            answer.len()
        )));
    }
    let as_i64: Vec<i64> = answer.iter().map(|&a| a as i64).collect();
    if !crate::permutation::is_valid_permutation(&as_i64, k) {
        return Err(Error::invalid(format!(
            "answer {answer:?} is not a permutation of 1..{k}"
        )));
    }
    let (tw, th) = shuffled_tiles[0].dimensions();
    if shuffled_tiles.iter().any(|t| t.dimensions() != (tw, th)) {
        return Err(Error::invalid("tiles differ in size"));
    }
    if k == 1 {
        return Ok(shuffled_tiles[0].clone());
    }
    let mut out = RgbImage::new(tw * cols, th * rows);
    for (pos, &a) in answer.iter().enumerate() {
        let (r, c) = (pos as u32 / cols, pos as u32 % cols);
        out.copy_from(&shuffled_tiles[a - 1], c * tw, r * th)
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::task_rng;

    fn gradient(w: u32, h: u32, salt: u8) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([(x % 256) as u8, (y % 256) as u8, ((x * 7 + y * 13) as u8) ^ salt])
        })
    }

    #[test]
    fn exact_division() {
        let plan = plan_grid(90, 90, &ImageGridConfig::default()).unwrap();
        assert_eq!(plan.tiles.len(), 9);
        assert!(plan.tiles.iter().all(|t| t.w == 30 && t.h == 30));
        assert_eq!(plan.crop, Rect { x: 0, y: 0, w: 90, h: 90 });
        assert_eq!(plan.tiles[1], Rect { x: 30, y: 0, w: 30, h: 30 });
        assert_eq!(plan.tiles[3], Rect { x: 0, y: 30, w: 30, h: 30 });
    }

    #[test]
    fn remainders_dropped() {
        let plan = plan_grid(100, 92, &ImageGridConfig::default()).unwrap();
        assert_eq!(plan.tile_size(), (30, 33));
        assert_eq!(plan.crop, Rect { x: 0, y: 0, w: 90, h: 99 });
    }

    #[test]
    fn too_small_is_filtered() {
        let err = plan_grid(83, 500, &ImageGridConfig::default()).unwrap_err();
        assert_eq!(err.filter_reason(), Some(FilterReason::TooSmall));
        assert!(plan_grid(84, 84, &ImageGridConfig::default()).is_ok());
    }

    #[test]
    fn config_validation() {
        let bad = ImageGridConfig { rows: 1, cols: 1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ImageGridConfig { rows: 9, cols: 9, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ImageGridConfig { rows: 3, cols: 3, min_side_px: 2, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tiles_disjoint_and_exhaustive() {
        for (h, w) in [(84, 84), (100, 92), (301, 517), (480, 640)] {
            for (rows, cols) in [(3, 3), (2, 2), (2, 3), (4, 1)] {
                let cfg = ImageGridConfig { rows, cols, ..Default::default() };
                let plan = plan_grid(h, w, &cfg).unwrap();
                let area: u64 = plan.tiles.iter().map(Rect::area).sum();
                assert_eq!(area, plan.crop.area());
                for (i, a) in plan.tiles.iter().enumerate() {
                    for b in &plan.tiles[i + 1..] {
                        assert!(!a.intersects(b));
                    }
                }
            }
        }
    }

    #[test]
    fn generate_300px() {
        let img = DynamicImage::ImageRgb8(gradient(300, 300, 1));
        let task = generate_image_task(&img, &ImageGridConfig::default(), &mut task_rng(5)).unwrap();
        assert_eq!(task.shuffled_tiles.len(), 9);
        assert!(task.shuffled_tiles.iter().all(|t| t.dimensions() == (100, 100)));
        assert_eq!(task.ground_truth, task.perm.ground_truth());
    }

    #[test]
    fn two_by_two() {
        let img = DynamicImage::ImageRgb8(gradient(120, 100, 2));
        let cfg = ImageGridConfig { rows: 2, cols: 2, ..Default::default() };
        let task = generate_image_task(&img, &cfg, &mut task_rng(5)).unwrap();
        assert_eq!(task.ground_truth.k(), 4);
        assert!(task.prompt.contains("four shuffled image tiles"));
        assert!(task.prompt.contains("2*2 grid"));
    }

    #[test]
    fn round_trip_and_negative_control() {
        let cfg = ImageGridConfig::default();
        for seed in 0..20u64 {
            let src = gradient(150 + seed as u32, 120 + 3 * seed as u32, seed as u8);
            let task =
                generate_image_task(&DynamicImage::ImageRgb8(src.clone()), &cfg, &mut task_rng(seed)).unwrap();
            let restored =
                reassemble(&task.shuffled_tiles, task.ground_truth.answer(), cfg.rows, cfg.cols).unwrap();
            assert_eq!(restored, crop(&src, &task.plan));
            if !task.perm.is_identity() {
                let identity: Vec<usize> = (1..=9).collect();
                let wrong = reassemble(&task.shuffled_tiles, &identity, cfg.rows, cfg.cols).unwrap();
                assert_ne!(wrong, crop(&src, &task.plan));
            }
        }
    }

    #[test]
    fn reassemble_edge_cases() {
        let tile = gradient(10, 10, 0);
        assert_eq!(reassemble(&[tile.clone()], &[1], 1, 1).unwrap(), tile);
        let other = gradient(11, 10, 0);
        assert!(reassemble(&[tile.clone(), other], &[1, 2], 1, 2).is_err());
        assert!(reassemble(&[tile.clone(), tile.clone()], &[1, 1], 1, 2).is_err());
        assert!(reassemble(&[tile.clone(), tile], &[1, 2], 2, 2).is_err());
    }
}
