//! Re-checks the invariants of an existing dataset.
//!
//! Every record is checked for internal consistency and media integrity,
//! then against the modality-specific facts stored in its `detail` object.
//! With an input root, RGB-D records are also re-validated against their
//! depth rasters.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::depth::{compatible, depth_order_from_raster, DepthMap, DepthPoint, DepthSampleConfig};
use crate::error::{Error, Result};
use crate::image_jigsaw::reassemble;
use crate::manifest::{dataset_root, read_dataset, ManifestRecord};
use crate::pipeline::media_hash;
use crate::prompts::{render_prompt, Modality, PromptKind};
use crate::video::{is_frame_file, ClipSpan};

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Write reassembled previews for image tasks under `previews/`.
    pub render: bool,
    /// Corpus root the dataset was generated from.
    pub input_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyFailure {
    pub task_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub failures: Vec<VerifyFailure>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn fail<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::invalid(msg))
}

fn detail_u64(r: &ManifestRecord, key: &str) -> Result<u64> {
    r.detail
        .get(key)
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::invalid(format!("detail.{key} missing")))
}

fn detail_f64(r: &ManifestRecord, key: &str) -> Result<f64> {
    r.detail
        .get(key)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::invalid(format!("detail.{key} missing")))
}

fn detail_as<T: serde::de::DeserializeOwned>(r: &ManifestRecord, key: &str) -> Result<T> {
    let v = r
        .detail
        .get(key)
        .ok_or_else(|| Error::invalid(format!("detail.{key} missing")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::invalid(format!("detail.{key}: {e}")))
}

fn decode(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| Error::CorruptInput {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
}

pub fn prompt_kind(r: &ManifestRecord) -> Result<PromptKind> {
    Ok(match r.modality {
        Modality::Image => PromptKind::Image {
            rows: detail_u64(r, "rows")? as usize,
            cols: detail_u64(r, "cols")? as usize,
        },
        Modality::Video => PromptKind::Video { clips: r.k },
        Modality::Rgbd => PromptKind::Rgbd { points: r.k },
    })
}

fn check_media(root: &Path, r: &ManifestRecord) -> Result<()> {
    if r.media_sha256.len() != r.media.len() {
        return fail("media_sha256 missing or incomplete");
    }
    for (rel, expected) in r.media.iter().zip(&r.media_sha256) {
        let path = root.join(rel);
        if !path.exists() {
            return fail(format!("missing media {rel}"));
        }
        if media_hash(&path)? != *expected {
            return fail(format!("media {rel} does not match its recorded hash"));
        }
    }
    Ok(())
}

fn check_image(root: &Path, r: &ManifestRecord, opts: &VerifyOptions) -> Result<()> {
    let (rows, cols) = (detail_u64(r, "rows")? as u32, detail_u64(r, "cols")? as u32);
    let (tw, th) = (detail_u64(r, "tile_w")? as u32, detail_u64(r, "tile_h")? as u32);
    let min_side = detail_u64(r, "min_side_px")?;
    let (sw, sh) = (detail_u64(r, "source_w")?, detail_u64(r, "source_h")?);
    if sw.min(sh) < min_side {
        return fail(format!("source {sw}x{sh} is below the {min_side} px filter"));
    }
    if (rows * cols) as usize != r.k {
        return fail(format!("{rows}x{cols} grid but k = {}", r.k));
    }
    let tiles = r
        .media
        .iter()
        .map(|m| decode(&root.join(m)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(t) = tiles.iter().find(|t| t.dimensions() != (tw, th)) {
        return fail(format!("tile is {:?}, expected {tw}x{th}", t.dimensions()));
    }
    let restored = reassemble(&tiles, &r.ground_truth, rows, cols)?;
    if opts.render {
        let path = root.join("previews").join(format!("{}.png", r.task_id));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        restored.save(&path).map_err(|e| Error::Image { path, source: e })?;
    }
    if let Some(input) = &opts.input_root {
        let src = decode(&input.join(&r.source_ref))?;
        let crop = image::imageops::crop_imm(&src, 0, 0, tw * cols, th * rows).to_image();
        if crop != restored {
            return fail("reassembled tiles differ from the source crop");
        }
    }
    Ok(())
}

fn check_spans(spans: &[ClipSpan], t_frames: usize, trim_frac: f64, max_frames: usize) -> Result<()> {
    let trim = crate::reward::rational_from_f64(trim_frac)?;
    let mut prev_end = 0;
    for (i, s) in spans.iter().enumerate() {
        if s.start != prev_end || s.end <= s.start || s.end > t_frames {
            return fail(format!("clip {i} span [{}, {}) is out of order", s.start, s.end));
        }
        if s.frames.is_empty() || s.frames.len() > max_frames {
            return fail(format!("clip {i} has {} frames", s.frames.len()));
        }
        let t = s.trim(trim);
        if s.frames.iter().any(|&f| f < s.start + t || f >= s.end - t) {
            return fail(format!("clip {i} samples a trimmed frame"));
        }
        if !s.frames.windows(2).all(|w| w[0] < w[1]) {
            return fail(format!("clip {i} frames not increasing"));
        }
        prev_end = s.end;
    }
    if prev_end != t_frames {
        return fail(format!("clips cover {prev_end} of {t_frames} frames"));
    }
    Ok(())
}

fn check_video(root: &Path, r: &ManifestRecord) -> Result<()> {
    let spans: Vec<ClipSpan> = detail_as(r, "spans")?;
    let t_frames = detail_u64(r, "t_frames")? as usize;
    let max_frames = detail_u64(r, "max_frames_per_clip")? as usize;
    let budget = detail_u64(r, "max_pixels_per_frame")?;
    let (fw, fh) = (detail_u64(r, "frame_w")? as u32, detail_u64(r, "frame_h")? as u32);
    let fps = detail_f64(r, "fps")?;
    let min_duration = detail_f64(r, "min_duration_s")?;
    if spans.len() != r.k {
        return fail(format!("{} spans for k = {}", spans.len(), r.k));
    }
    if (t_frames as f64 / fps) < min_duration {
        return fail("source is shorter than the duration filter");
    }
    check_spans(&spans, t_frames, detail_f64(r, "trim_frac")?, max_frames)?;
    if fw as u64 * fh as u64 > budget {
        return fail(format!("frames {fw}x{fh} exceed {budget} px"));
    }
    let shuffled = r.permutation()?.apply_shuffle(&spans)?;
    let restored = r.ground_truth()?.reassemble(&shuffled)?;
    let order: Vec<usize> = restored.iter().flat_map(|s| s.frames.iter().copied()).collect();
    if !order.windows(2).all(|w| w[0] < w[1]) {
        return fail("ground truth does not restore chronological order");
    }
    for (j, rel) in r.media.iter().enumerate() {
        let dir = root.join(rel);
        let mut frames: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_frame_file(p))
            .collect();
        frames.sort();
        if frames.len() != shuffled[j].frames.len() {
            return fail(format!("clip {} holds {} frames, expected {}", j + 1, frames.len(), shuffled[j].frames.len()));
        }
        for f in frames {
            let (w, h) = image::image_dimensions(&f).map_err(|e| Error::CorruptInput {
                path: f.display().to_string(),
                detail: e.to_string(),
            })?;
            if (w, h) != (fw, fh) || w as u64 * h as u64 > budget {
                return fail(format!("{} is {w}x{h}", f.display()));
            }
        }
    }
    Ok(())
}

fn check_rgbd(root: &Path, r: &ManifestRecord, opts: &VerifyOptions) -> Result<()> {
    let points: Vec<DepthPoint> = detail_as(r, "points")?;
    let cfg = DepthSampleConfig {
        points: r.k,
        depth_min: detail_f64(r, "depth_min")?,
        depth_max: detail_f64(r, "depth_max")?,
        min_pixel_dist: detail_f64(r, "min_pixel_dist")?,
        min_depth_gap: detail_f64(r, "min_depth_gap")?,
        marker_radius: detail_u64(r, "marker_radius")? as u32,
        depth_scale: detail_f64(r, "depth_scale")?,
        ..Default::default()
    };
    if points.len() != r.k {
        return fail(format!("{} points for k = {}", points.len(), r.k));
    }
    for (i, a) in points.iter().enumerate() {
        if !cfg.depth_in_range(a.depth) {
            return fail(format!("point {} depth {} out of range", i + 1, a.depth));
        }
        for (j, b) in points.iter().enumerate().skip(i + 1) {
            if !compatible(a, b, &cfg) {
                return fail(format!("points {} and {} violate spacing or depth gap", i + 1, j + 1));
            }
        }
    }
    // labels sorted by recorded depth
    let mut by_depth: Vec<(f32, usize)> = points.iter().enumerate().map(|(j, p)| (p.depth, j + 1)).collect();
    by_depth.sort_by(|a, b| a.0.total_cmp(&b.0));
    if by_depth.iter().map(|x| x.1).collect::<Vec<_>>() != r.ground_truth {
        return fail("ground truth is not the nearest-to-farthest label order");
    }
    let annotated = decode(&root.join(&r.media[0]))?;
    let (w, h) = (detail_u64(r, "width")? as u32, detail_u64(r, "height")? as u32);
    if annotated.dimensions() != (w, h) {
        return fail("annotated image has the wrong size");
    }
    if let Some(input) = &opts.input_root {
        let depth_ref: String = detail_as(r, "depth_ref")?;
        let depth = DepthMap::load_png(&input.join(depth_ref), cfg.depth_scale)?;
        for p in &points {
            if depth.get(p.u, p.v) != Some(p.depth) {
                return fail(format!("recorded depth at ({}, {}) differs from the raster", p.u, p.v));
            }
        }
        if depth_order_from_raster(&points, &depth).as_deref() != Some(&r.ground_truth[..]) {
            return fail("raster depth order disagrees with ground truth");
        }
    }
    Ok(())
}

fn check_record(root: &Path, r: &ManifestRecord, opts: &VerifyOptions) -> Result<()> {
    r.check()?;
    let expected_prompt = render_prompt(&prompt_kind(r)?)?;
    if r.prompt != expected_prompt {
        return fail("prompt differs from the rendered template");
    }
    check_media(root, r)?;
    match r.modality {
        Modality::Image => check_image(root, r, opts),
        Modality::Video => check_video(root, r),
        Modality::Rgbd => check_rgbd(root, r, opts),
    }
}

/// Verifies a dataset directory or a single manifest file. Returns an error
/// only when the manifest itself cannot be read.
pub fn verify_dataset(path: &Path, opts: &VerifyOptions) -> Result<VerifyReport> {
    let root = dataset_root(path);
    let records = read_dataset(path)?;
    let mut report = VerifyReport::default();
    let mut seen = HashSet::new();
    for r in &records {
        report.checked += 1;
        let outcome = if !seen.insert(r.task_id.clone()) {
            fail("duplicate task_id")
        } else {
            check_record(&root, r, opts)
        };
        if let Err(e) = outcome {
            report.failures.push(VerifyFailure {
                task_id: r.task_id.clone(),
                message: e.to_string(),
            });
        }
    }
    Ok(report)
}
