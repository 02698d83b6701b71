//! Depth-ordering jigsaw on RGB-D frames.
//!
//! Points are drawn from a depth raster under range, pixel-separation and
//! depth-gap constraints, shuffled, and drawn onto the color image as red
//! numbered markers. The answer lists marker labels from nearest to farthest.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FilterReason, Result};
use crate::permutation::{sample_permutation, GroundTruth, Permutation};
use crate::prompts::{render_prompt, PromptKind};

/// Draws attempted per point slot before an attempt is abandoned.
const DRAWS_PER_SLOT: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSampleConfig {
    pub points: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    pub min_pixel_dist: f64,
    pub min_depth_gap: f64,
    pub max_attempts: usize,
    pub marker_radius: u32,
    /// Meters per raw depth unit (millimeter PNGs: 0.001).
    pub depth_scale: f64,
    pub allow_identity: bool,
}

impl Default for DepthSampleConfig {
    fn default() -> Self {
        DepthSampleConfig {
            points: 6,
            depth_min: 0.1,
            depth_max: 10.0,
            min_pixel_dist: 40.0,
            min_depth_gap: 0.2,
            max_attempts: 10_000,
            marker_radius: 12,
            depth_scale: 0.001,
            allow_identity: true,
        }
    }
}

impl DepthSampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(crate::permutation::MIN_K..=crate::permutation::MAX_K).contains(&self.points) {
            return Err(Error::invalid(format!(
                "rgbd.points: {} outside [2, {}]",
                self.points,
                crate::permutation::MAX_K
            )));
        }
        if !(self.depth_min < self.depth_max) || !(self.depth_min >= 0.0) {
            return Err(Error::invalid(format!(
                "rgbd.depth_min/depth_max: need 0 <= min < max, got [{}, {}]",
                self.depth_min, self.depth_max
            )));
        }
        if !(self.min_depth_gap > 0.0) {
            return Err(Error::invalid("rgbd.min_depth_gap: must be > 0"));
        }
        if !(self.min_pixel_dist >= 0.0) {
            return Err(Error::invalid("rgbd.min_pixel_dist: must be >= 0"));
        }
        if self.marker_radius == 0 {
            return Err(Error::invalid("rgbd.marker_radius: must be >= 1"));
        }
        if self.max_attempts == 0 {
            return Err(Error::invalid("rgbd.max_attempts: must be >= 1"));
        }
        if !(self.depth_scale > 0.0) {
            return Err(Error::invalid("rgbd.depth_scale: must be > 0"));
        }
        Ok(())
    }

    pub fn prompt_kind(&self) -> PromptKind {
        PromptKind::Rgbd {
            points: self.points,
        }
    }

    pub fn depth_in_range(&self, d: f32) -> bool {
        let d = d as f64;
        d > 0.0 && d >= self.depth_min && d <= self.depth_max
    }
}

/// Depth raster in meters; non-positive or non-finite values are invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    meters: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, meters: Vec<f32>) -> Result<Self> {
        if meters.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "{} depth values for a {width}x{height} raster",
                meters.len()
            )));
        }
        Ok(DepthMap {
            width,
            height,
            meters,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f32) -> Self {
        let meters = (0..height)
            .flat_map(|v| (0..width).map(move |u| (u, v)))
            .map(|(u, v)| f(u, v))
            .collect();
        DepthMap {
            width,
            height,
            meters,
        }
    }

    /// Reads a 16-bit (or 8-bit) grayscale PNG; raw value 0 marks invalid pixels.
    pub fn load_png(path: &Path, scale: f64) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::CorruptInput {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let raw = img.to_luma16();
        let scale8 = match img {
            // 8-bit rasters are widened by 257 in to_luma16
            image::DynamicImage::ImageLuma8(_) | image::DynamicImage::ImageRgb8(_) => 1.0 / 257.0,
            _ => 1.0,
        };
        let meters = raw
            .pixels()
            .map(|p| (p[0] as f64 * scale8 * scale) as f32)
            .collect();
        DepthMap::new(raw.width(), raw.height(), meters)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, u: u32, v: u32) -> Option<f32> {
        (u < self.width && v < self.height)
            .then(|| self.meters[v as usize * self.width as usize + u as usize])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub u: u32,
    pub v: u32,
    pub depth: f32,
}

impl DepthPoint {
    fn pixel_dist_sq(&self, other: &DepthPoint) -> f64 {
        let du = self.u as f64 - other.u as f64;
        let dv = self.v as f64 - other.v as f64;
        du * du + dv * dv
    }
}

/// Whether two points may appear in the same task.
pub fn compatible(a: &DepthPoint, b: &DepthPoint, cfg: &DepthSampleConfig) -> bool {
    a.pixel_dist_sq(b) >= cfg.min_pixel_dist * cfg.min_pixel_dist
        && (a.depth as f64 - b.depth as f64).abs() > cfg.min_depth_gap
}

/// Rejection-samples `cfg.points` points satisfying every constraint and
/// returns them sorted nearest first.
pub fn sample_depth_points<R: Rng + ?Sized>(
    depth: &DepthMap,
    cfg: &DepthSampleConfig,
    rng: &mut R,
) -> Result<Vec<DepthPoint>> {
    cfg.validate()?;
    let candidates: Vec<u32> = (0..depth.meters.len() as u32)
        .filter(|&i| cfg.depth_in_range(depth.meters[i as usize]))
        .collect();
    let no_combination = |detail: String| Error::filtered(FilterReason::NoValidCombination, detail);
    if candidates.len() < cfg.points {
        return Err(no_combination(format!(
            "{} in-range pixels for {} points",
            candidates.len(),
            cfg.points
        )));
    }
    let point_at = |i: u32| DepthPoint {
        u: i % depth.width,
        v: i / depth.width,
        depth: depth.meters[i as usize],
    };

    let mut chosen: Vec<DepthPoint> = Vec::with_capacity(cfg.points);
    for _ in 0..cfg.max_attempts {
        chosen.clear();
        'slots: while chosen.len() < cfg.points {
            for _ in 0..DRAWS_PER_SLOT {
                let p = point_at(candidates[rng.random_range(0..candidates.len())]);
                if chosen.iter().all(|q| compatible(&p, q, cfg)) {
                    chosen.push(p);
                    continue 'slots;
                }
            }
            break;
        }
        if chosen.len() == cfg.points {
            chosen.sort_by(|a, b| a.depth.total_cmp(&b.depth));
            return Ok(chosen);
        }
    }
    Err(no_combination(format!(
        "no {}-point combination after {} attempts",
        cfg.points, cfg.max_attempts
    )))
}

const MARKER_RED: Rgb<u8> = Rgb([230, 25, 25]);
const LABEL_WHITE: Rgb<u8> = Rgb([255, 255, 255]);

/// 3x5 bitmap digits, one row per byte, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn in_disk(x: i64, y: i64, cx: i64, cy: i64, r: i64) -> bool {
    let (dx, dy) = (x - cx, y - cy);
    dx * dx + dy * dy <= r * r
}

fn draw_marker(img: &mut RgbImage, cx: u32, cy: u32, radius: u32, label: usize) {
    let (cx, cy, r) = (cx as i64, cy as i64, radius as i64);
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in (cy - r).max(0)..=(cy + r).min(h - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(w - 1) {
            if in_disk(x, y, cx, cy, r) {
                img.put_pixel(x as u32, y as u32, MARKER_RED);
            }
        }
    }

    let text: Vec<usize> = label
        .to_string()
        .bytes()
        .map(|b| (b - b'0') as usize)
        .collect();
    let n = text.len() as i64;
    // largest integer scale whose text box fits inside the disk
    let fits = |s: i64| {
        let tw = n * 3 * s + (n - 1) * s;
        let th = 5 * s;
        let (hx, hy) = ((tw + 1) / 2, (th + 1) / 2);
        hx * hx + hy * hy <= r * r
    };
    let scale = (1..=r).rev().find(|&s| fits(s)).unwrap_or(1);
    let text_w = n * 3 * scale + (n - 1) * scale;
    let x0 = cx - text_w / 2;
    let y0 = cy - (5 * scale) / 2;
    for (di, &d) in text.iter().enumerate() {
        let gx = x0 + di as i64 * 4 * scale;
        for (row, bits) in DIGITS[d].iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) == 0 {
                    continue;
                }
                for sy in 0..scale {
                    for sx in 0..scale {
                        let x = gx + col * scale + sx;
                        let y = y0 + row as i64 * scale + sy;
                        if x >= 0 && y >= 0 && x < w && y < h && in_disk(x, y, cx, cy, r) {
                            img.put_pixel(x as u32, y as u32, LABEL_WHITE);
                        }
                    }
                }
            }
        }
    }
}

/// Draws a filled red disk with a white 1-based label at each point; the
/// label of `points_shuffled[j]` is `j + 1`. Pixels outside the disks are
/// left untouched.
pub fn annotate(rgb: &RgbImage, points_shuffled: &[DepthPoint], cfg: &DepthSampleConfig) -> Result<RgbImage> {
    if cfg.marker_radius == 0 {
        return Err(Error::invalid("rgbd.marker_radius: must be >= 1"));
    }
    if let Some(p) = points_shuffled
        .iter()
        .find(|p| p.u >= rgb.width() || p.v >= rgb.height())
    {
        return Err(Error::invalid(format!(
            "point ({}, {}) outside a {}x{} image",
            p.u,
            p.v,
            rgb.width(),
            rgb.height()
        )));
    }
    let mut out = rgb.clone();
    for (j, p) in points_shuffled.iter().enumerate() {
        draw_marker(&mut out, p.u, p.v, cfg.marker_radius, j + 1);
    }
    Ok(out)
}

/// True when `(x, y)` lies in some marker disk of the given points.
pub fn within_markers(x: u32, y: u32, points: &[DepthPoint], radius: u32) -> bool {
    points
        .iter()
        .any(|p| in_disk(x as i64, y as i64, p.u as i64, p.v as i64, radius as i64))
}

#[derive(Debug, Clone)]
pub struct DepthJigsaw {
    /// Points nearest first.
    pub points_sorted: Vec<DepthPoint>,
    /// Points in label order; `points_shuffled[j]` carries label `j + 1`.
    pub points_shuffled: Vec<DepthPoint>,
    pub perm: Permutation,
    pub ground_truth: GroundTruth,
    pub annotated: RgbImage,
    pub prompt: String,
}

pub fn generate_3d_task<R: Rng + ?Sized>(
    rgb: &RgbImage,
    depth: &DepthMap,
    cfg: &DepthSampleConfig,
    rng: &mut R,
) -> Result<DepthJigsaw> {
    if rgb.dimensions() != (depth.width(), depth.height()) {
        return Err(Error::invalid(format!(
            "color {}x{} and depth {}x{} are not aligned",
            rgb.width(),
            rgb.height(),
            depth.width(),
            depth.height()
        )));
    }
    let points_sorted = sample_depth_points(depth, cfg, rng)?;
    let perm = sample_permutation(cfg.points, rng, cfg.allow_identity)?;
    let points_shuffled = perm.apply_shuffle(&points_sorted)?;
    let annotated = annotate(rgb, &points_shuffled, cfg)?;
    Ok(DepthJigsaw {
        ground_truth: perm.ground_truth(),
        prompt: render_prompt(&cfg.prompt_kind())?,
        points_sorted,
        points_shuffled,
        perm,
        annotated,
    })
}

/// Labels sorted nearest to farthest, reading depths straight from the
/// raster. Used to cross-check ground truth.
pub fn depth_order_from_raster(points_shuffled: &[DepthPoint], depth: &DepthMap) -> Option<Vec<usize>> {
    let mut labelled: Vec<(f32, usize)> = points_shuffled
        .iter()
        .enumerate()
        .map(|(j, p)| depth.get(p.u, p.v).map(|d| (d, j + 1)))
        .collect::<Option<_>>()?;
    labelled.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(labelled.into_iter().map(|(_, label)| label).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::task_rng;

    fn ramp(w: u32, h: u32) -> DepthMap {
        DepthMap::from_fn(w, h, |u, _| 0.5 + 4.5 * u as f32 / (w - 1) as f32)
    }

    fn check_constraints(points: &[DepthPoint], depth: &DepthMap, cfg: &DepthSampleConfig) {
        for (i, a) in points.iter().enumerate() {
            let d = depth.get(a.u, a.v).unwrap();
            assert_eq!(d, a.depth);
            assert!((0.1..=10.0).contains(&(d as f64)));
            for b in &points[i + 1..] {
                let du = a.u as f64 - b.u as f64;
                let dv = a.v as f64 - b.v as f64;
                assert!((du * du + dv * dv).sqrt() >= cfg.min_pixel_dist);
                assert!((a.depth as f64 - b.depth as f64).abs() > cfg.min_depth_gap);
            }
        }
    }

    #[test]
    fn ramp_succeeds() {
        let depth = ramp(640, 480);
        let cfg = DepthSampleConfig::default();
        for seed in 0..20 {
            let pts = sample_depth_points(&depth, &cfg, &mut task_rng(seed)).unwrap();
            assert_eq!(pts.len(), 6);
            assert!(pts.windows(2).all(|w| w[0].depth < w[1].depth));
            check_constraints(&pts, &depth, &cfg);
        }
    }

    #[test]
    fn uniform_plane_has_no_combination() {
        let depth = DepthMap::from_fn(64, 48, |_, _| 2.0);
        let cfg = DepthSampleConfig { max_attempts: 200, ..Default::default() };
        let err = sample_depth_points(&depth, &cfg, &mut task_rng(0)).unwrap_err();
        assert_eq!(err.filter_reason(), Some(FilterReason::NoValidCombination));
    }

    #[test]
    fn all_invalid_has_no_combination() {
        let depth = DepthMap::from_fn(64, 48, |_, _| 0.0);
        let err = sample_depth_points(&depth, &DepthSampleConfig::default(), &mut task_rng(0)).unwrap_err();
        assert_eq!(err.filter_reason(), Some(FilterReason::NoValidCombination));
    }

    #[test]
    fn six_labelled_markers() {
        let rgb = RgbImage::from_pixel(320, 240, Rgb([0, 0, 255]));
        let cfg = DepthSampleConfig::default();
        let pts: Vec<DepthPoint> = (0..6)
            .map(|i| DepthPoint { u: 30 + 50 * i, v: 120, depth: 1.0 + i as f32 })
            .collect();
        let out = annotate(&rgb, &pts, &cfg).unwrap();
        for (j, p) in pts.iter().enumerate() {
            // marker center belongs to the marker (red or label white)
            let c = *out.get_pixel(p.u, p.v);
            assert!(c == MARKER_RED || c == LABEL_WHITE, "marker {j}");
            let whites = (p.u - 12..=p.u + 12)
                .flat_map(|x| (p.v - 12..=p.v + 12).map(move |y| (x, y)))
                .filter(|&(x, y)| *out.get_pixel(x, y) == LABEL_WHITE)
                .count();
            assert!(whites > 0, "label drawn for marker {}", j + 1);
        }
        // two-digit labels stay inside their disks too
        let many: Vec<DepthPoint> = (0..12)
            .map(|i| DepthPoint { u: 14 + 26 * i, v: 20, depth: 1.0 })
            .collect();
        let out2 = annotate(&rgb, &many, &cfg).unwrap();
        for y in 0..240 {
            for x in 0..320 {
                if !within_markers(x, y, &many, 12) {
                    assert_eq!(out2.get_pixel(x, y), rgb.get_pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn zero_radius_rejected() {
        let cfg = DepthSampleConfig { marker_radius: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let rgb = RgbImage::new(10, 10);
        assert!(annotate(&rgb, &[], &cfg).is_err());
    }

    #[test]
    fn out_of_bounds_point_rejected() {
        let rgb = RgbImage::new(10, 10);
        let p = DepthPoint { u: 10, v: 0, depth: 1.0 };
        assert!(matches!(annotate(&rgb, &[p], &DepthSampleConfig::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn markers_forty_apart_do_not_overlap() {
        for radius in 1..=19u32 {
            let a = DepthPoint { u: 100, v: 100, depth: 1.0 };
            for (du, dv) in [(40i64, 0i64), (0, 40), (24, 32), (28, 29)] {
                let b = DepthPoint { u: (100 + du) as u32, v: (100 + dv) as u32, depth: 2.0 };
                let overlap = (0..300u32).any(|x| {
                    (0..300u32).any(|y| within_markers(x, y, &[a], radius) && within_markers(x, y, &[b], radius))
                });
                assert!(!overlap, "radius {radius} offset ({du},{dv})");
            }
        }
    }

    #[test]
    fn generate_and_resort() {
        let depth = ramp(320, 240);
        let rgb = RgbImage::from_fn(320, 240, |x, y| Rgb([x as u8, y as u8, 90]));
        let cfg = DepthSampleConfig::default();
        for seed in 0..10 {
            let task = generate_3d_task(&rgb, &depth, &cfg, &mut task_rng(seed)).unwrap();
            let order = depth_order_from_raster(&task.points_shuffled, &depth).unwrap();
            assert_eq!(order, task.ground_truth.answer());
            for y in 0..240 {
                for x in 0..320 {
                    if !within_markers(x, y, &task.points_shuffled, cfg.marker_radius) {
                        assert_eq!(task.annotated.get_pixel(x, y), rgb.get_pixel(x, y));
                    }
                }
            }
            if task.perm.is_identity() {
                assert_eq!(task.ground_truth.answer(), &[1, 2, 3, 4, 5, 6]);
            }
        }
    }

    #[test]
    fn identity_permutation_answer() {
        let pts: Vec<DepthPoint> = (0..6).map(|i| DepthPoint { u: i * 50, v: 0, depth: 1.0 + i as f32 }).collect();
        let depth = DepthMap::from_fn(300, 1, |u, _| 1.0 + (u / 50) as f32);
        assert_eq!(depth_order_from_raster(&pts, &depth).unwrap(), vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn misaligned_rasters_rejected() {
        let rgb = RgbImage::new(10, 10);
        let depth = ramp(11, 10);
        assert!(generate_3d_task(&rgb, &depth, &DepthSampleConfig::default(), &mut task_rng(0)).is_err());
    }

    #[test]
    fn png_millimeters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let raw = image::ImageBuffer::<image::Luma<u16>, _>::from_fn(4, 2, |u, v| image::Luma([(u * 1000 + v) as u16]));
        raw.save(&path).unwrap();
        let d = DepthMap::load_png(&path, 0.001).unwrap();
        assert_eq!(d.get(0, 0), Some(0.0));
        assert!((d.get(2, 1).unwrap() - 2.001).abs() < 1e-6);
        assert_eq!(d.get(4, 0), None);
    }
}
