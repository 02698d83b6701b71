//! Corpus-level generation: discover sources, build tasks in parallel,
//! persist media and append manifest records in source order.

use std::collections::{BTreeMap, HashSet};
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::depth::{generate_3d_task, DepthMap, DepthSampleConfig};
use crate::error::{Error, FilterReason, Result};
use crate::image_jigsaw::{generate_image_task, ImageGridConfig};
use crate::manifest::{
    append_filtered, read_dataset, read_filtered, FilteredEntry, ManifestRecord, ShardedWriter,
};
use crate::prompts::Modality;
use crate::seeds::{config_digest, derive_seed, sha256_hex, task_id, task_rng};
use crate::video::{generate_video_task, ExternalDecoder, FrameDirSource, FrameSource, VideoClipConfig, FPS_SIDECAR};

const IMAGE_EXTENSIONS: &[&str] = &["jpg", "jpeg", "png"];
const VIDEO_EXTENSIONS: &[&str] = &["mp4", "mkv", "webm", "avi", "mov", "m4v"];

/// Settings shared by every generation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub global_seed: u64,
    pub jobs: usize,
    pub shard_size: usize,
    /// Timestamp stamped on records; fixed so reruns are byte-identical.
    pub created_unix_s: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            global_seed: 0,
            jobs: 1,
            shard_size: usize::MAX,
            created_unix_s: 0,
        }
    }
}

/// One input item; `source_ref` is its path relative to the corpus root
/// with `/` separators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Source {
    pub path: PathBuf,
    pub source_ref: String,
    /// Companion file (the depth raster for RGB-D pairs) and its ref.
    pub companion: Option<PathBuf>,
    pub companion_ref: Option<String>,
}

fn relative_ref(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.contains(&e.to_ascii_lowercase().as_str()))
}

fn walk_sorted(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path.clone());
            }
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads a newline-separated file list; relative entries resolve against the
/// list's directory and keep their written form as `source_ref`.
fn read_file_list(list: &Path) -> Result<Vec<Source>> {
    let base = list.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(list).map_err(|e| Error::io(list, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| Source {
            path: base.join(l),
            source_ref: l.to_string(),
            companion: None,
            companion_ref: None,
        })
        .collect())
}

/// Images under a directory (recursive), a single image, or a `.txt` file list.
pub fn discover_images(input: &Path) -> Result<Vec<Source>> {
    if input.is_file() {
        if has_extension(input, &["txt", "lst"]) {
            return read_file_list(input);
        }
        let name = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![Source {
            path: input.to_path_buf(),
            source_ref: name,
            companion: None,
            companion_ref: None,
        }]);
    }
    Ok(walk_sorted(input)?
        .into_iter()
        .filter(|p| p.is_file() && has_extension(p, IMAGE_EXTENSIONS))
        .map(|p| Source {
            source_ref: relative_ref(input, &p),
            path: p,
            companion: None,
            companion_ref: None,
        })
        .collect())
}

/// Frame directories (holding `fps.txt`) and video files under `input`.
pub fn discover_videos(input: &Path) -> Result<Vec<Source>> {
    if input.is_file() {
        if has_extension(input, &["txt", "lst"]) {
            return read_file_list(input);
        }
        let name = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![Source { path: input.to_path_buf(), source_ref: name, companion: None, companion_ref: None }]);
    }
    if input.join(FPS_SIDECAR).is_file() {
        let name = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![Source { path: input.to_path_buf(), source_ref: name, companion: None, companion_ref: None }]);
    }
    Ok(walk_sorted(input)?
        .into_iter()
        .filter(|p| {
            (p.is_dir() && p.join(FPS_SIDECAR).is_file())
                || (p.is_file() && has_extension(p, VIDEO_EXTENSIONS))
        })
        .map(|p| Source {
            source_ref: relative_ref(input, &p),
            path: p,
            companion: None,
            companion_ref: None,
        })
        .collect())
}

/// `color/<stem>.{jpg,png}` paired with `depth/<stem>.png` in sibling
/// directories anywhere under `input`.
pub fn discover_rgbd(input: &Path) -> Result<Vec<Source>> {
    let mut out = Vec::new();
    let mut color_dirs: Vec<PathBuf> = walk_sorted(input)?
        .into_iter()
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n == "color"))
        .collect();
    if input.file_name().is_some_and(|n| n == "color") {
        color_dirs.insert(0, input.to_path_buf());
    } else if input.join("color").is_dir() && !color_dirs.contains(&input.join("color")) {
        color_dirs.insert(0, input.join("color"));
    }
    color_dirs.sort();
    color_dirs.dedup();
    for color_dir in color_dirs {
        let depth_dir = color_dir.with_file_name("depth");
        if !depth_dir.is_dir() {
            continue;
        }
        let mut colors: Vec<PathBuf> = std::fs::read_dir(&color_dir)
            .map_err(|e| Error::io(&color_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && has_extension(p, IMAGE_EXTENSIONS))
            .collect();
        colors.sort();
        for color in colors {
            let stem = color.file_stem().unwrap_or_default();
            let depth = depth_dir.join(stem).with_extension("png");
            if depth.is_file() {
                out.push(Source {
                    source_ref: relative_ref(input, &color),
                    path: color,
                    companion_ref: Some(relative_ref(input, &depth)),
                    companion: Some(depth),
                });
            }
        }
    }
    Ok(out)
}

/// Identity and destination of the task being built for one source.
#[derive(Debug, Clone)]
pub struct TaskContext {
    pub task_id: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub config_digest: String,
    pub created_unix_s: u64,
}

impl TaskContext {
    pub fn new(source_ref: &str, config_digest: &str, out_dir: &Path, opts: &RunOptions) -> Self {
        TaskContext {
            task_id: task_id(source_ref, opts.global_seed, config_digest),
            seed: derive_seed(opts.global_seed, source_ref),
            out_dir: out_dir.to_path_buf(),
            config_digest: config_digest.to_string(),
            created_unix_s: opts.created_unix_s,
        }
    }
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| Error::Image {
        path: PathBuf::from("<memory>"),
        source: e,
    })?;
    Ok(buf.into_inner())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `img` as PNG and returns its SHA-256.
fn write_png(path: &Path, img: &RgbImage) -> Result<String> {
    let bytes = encode_png(img)?;
    write_file(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

fn fresh_dir(path: &Path) -> Result<()> {
    if path.exists() {
        std::fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
    }
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Content hash of a media entry: the file's SHA-256, or for a directory
/// the SHA-256 of its sorted `name\0sha256\n` listing.
pub fn media_hash(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut names: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        let mut listing = String::new();
        for p in names {
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            listing.push_str(&format!(
                "{}\0{}\n",
                p.file_name().unwrap_or_default().to_string_lossy(),
                sha256_hex(&bytes)
            ));
        }
        Ok(sha256_hex(listing.as_bytes()))
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }
}

fn decode_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| Error::CorruptInput {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
}

pub fn image_record(source: &Source, cfg: &ImageGridConfig, ctx: &TaskContext) -> Result<ManifestRecord> {
    let img = image::open(&source.path).map_err(|e| Error::CorruptInput {
        path: source.path.display().to_string(),
        detail: e.to_string(),
    })?;
    let task = generate_image_task(&img, cfg, &mut task_rng(ctx.seed))?;
    let rel_dir = format!("tiles/{}", ctx.task_id);
    fresh_dir(&ctx.out_dir.join(&rel_dir))?;
    let mut media = Vec::new();
    let mut hashes = Vec::new();
    for (j, tile) in task.shuffled_tiles.iter().enumerate() {
        let rel = format!("{rel_dir}/{}.png", j + 1);
        hashes.push(write_png(&ctx.out_dir.join(&rel), tile)?);
        media.push(rel);
    }
    let (tile_w, tile_h) = task.plan.tile_size();
    Ok(ManifestRecord {
        task_id: ctx.task_id.clone(),
        modality: Modality::Image,
        k: cfg.k(),
        prompt: task.prompt,
        media,
        ground_truth: task.ground_truth.into(),
        perm: task.perm.into(),
        seed: ctx.seed,
        source_ref: source.source_ref.clone(),
        config_digest: ctx.config_digest.clone(),
        created_unix_s: ctx.created_unix_s,
        media_sha256: hashes,
        detail: json!({
            "rows": cfg.rows,
            "cols": cfg.cols,
            "crop": task.plan.crop,
            "tile_w": tile_w,
            "tile_h": tile_h,
            "source_w": task.source_size.0,
            "source_h": task.source_size.1,
            "min_side_px": cfg.min_side_px,
        }),
        extra: Default::default(),
    })
}

/// Decoder used for a video source: frame directories are read directly,
/// files go through the external decoder when one is configured.
pub fn frame_source(source: &Source, decoder: Option<&Path>) -> Result<Box<dyn FrameSource>> {
    if source.path.is_dir() {
        return Ok(Box::new(FrameDirSource::open(&source.path)?));
    }
    match decoder {
        Some(program) => Ok(Box::new(ExternalDecoder {
            program: program.to_path_buf(),
            source: source.path.clone(),
        })),
        None => Err(Error::CorruptInput {
            path: source.path.display().to_string(),
            detail: "video files need an external decoder (--decoder)".into(),
        }),
    }
}

pub fn video_record(
    source: &Source,
    cfg: &VideoClipConfig,
    decoder: Option<&Path>,
    ctx: &TaskContext,
) -> Result<ManifestRecord> {
    let frames = frame_source(source, decoder)?;
    let task = generate_video_task(frames.as_ref(), cfg, &mut task_rng(ctx.seed))?;
    let rel_dir = format!("clips/{}", ctx.task_id);
    fresh_dir(&ctx.out_dir.join(&rel_dir))?;
    let mut media = Vec::new();
    let mut hashes = Vec::new();
    for (j, clip) in task.shuffled_clips.iter().enumerate() {
        let clip_rel = format!("{rel_dir}/{}", j + 1);
        for (n, frame) in clip.iter().enumerate() {
            write_png(&ctx.out_dir.join(format!("{clip_rel}/frame_{:06}.png", n + 1)), frame)?;
        }
        hashes.push(media_hash(&ctx.out_dir.join(&clip_rel))?);
        media.push(clip_rel);
    }
    Ok(ManifestRecord {
        task_id: ctx.task_id.clone(),
        modality: Modality::Video,
        k: cfg.clips,
        prompt: task.prompt,
        media,
        ground_truth: task.ground_truth.into(),
        perm: task.perm.into(),
        seed: ctx.seed,
        source_ref: source.source_ref.clone(),
        config_digest: ctx.config_digest.clone(),
        created_unix_s: ctx.created_unix_s,
        media_sha256: hashes,
        detail: json!({
            "fps": task.info.fps,
            "t_frames": task.info.frames,
            "source_w": task.info.width,
            "source_h": task.info.height,
            "frame_w": task.frame_dims.1,
            "frame_h": task.frame_dims.0,
            "trim_frac": cfg.trim_frac,
            "max_frames_per_clip": cfg.max_frames_per_clip,
            "max_pixels_per_frame": cfg.max_pixels_per_frame,
            "min_duration_s": cfg.min_duration_s,
            "spans": task.plan.spans,
        }),
        extra: Default::default(),
    })
}

pub fn rgbd_record(source: &Source, cfg: &DepthSampleConfig, ctx: &TaskContext) -> Result<ManifestRecord> {
    let depth_path = source.companion.as_ref().ok_or_else(|| {
        Error::invalid(format!("{} has no depth raster", source.source_ref))
    })?;
    let rgb = decode_rgb(&source.path)?;
    let depth = DepthMap::load_png(depth_path, cfg.depth_scale)?;
    let task = generate_3d_task(&rgb, &depth, cfg, &mut task_rng(ctx.seed))?;
    let rel = format!("annotated/{}.png", ctx.task_id);
    let hash = write_png(&ctx.out_dir.join(&rel), &task.annotated)?;
    let depth_ref = source.companion_ref.clone().unwrap_or_default();
    Ok(ManifestRecord {
        task_id: ctx.task_id.clone(),
        modality: Modality::Rgbd,
        k: cfg.points,
        prompt: task.prompt,
        media: vec![rel],
        ground_truth: task.ground_truth.into(),
        perm: task.perm.into(),
        seed: ctx.seed,
        source_ref: source.source_ref.clone(),
        config_digest: ctx.config_digest.clone(),
        created_unix_s: ctx.created_unix_s,
        media_sha256: vec![hash],
        detail: json!({
            "width": rgb.width(),
            "height": rgb.height(),
            "depth_ref": depth_ref,
            "depth_scale": cfg.depth_scale,
            "depth_min": cfg.depth_min,
            "depth_max": cfg.depth_max,
            "min_pixel_dist": cfg.min_pixel_dist,
            "min_depth_gap": cfg.min_depth_gap,
            "marker_radius": cfg.marker_radius,
            "points": task.points_shuffled,
        }),
        extra: Default::default(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub written: usize,
    pub skipped_existing: usize,
    pub filtered: BTreeMap<FilterReason, usize>,
}

impl GenerationReport {
    pub fn filtered_total(&self) -> usize {
        self.filtered.values().sum()
    }
}

/// Runs `build` over `sources` with `opts.jobs` workers and appends results
/// to the dataset at `out_dir` in source order. Sources already recorded
/// (as tasks or as filtered) are skipped, so an interrupted run can resume.
pub fn run_generation<F>(
    sources: &[Source],
    modality: Modality,
    digest: &str,
    out_dir: &Path,
    opts: &RunOptions,
    build: F,
) -> Result<GenerationReport>
where
    F: Fn(&Source, &TaskContext) -> Result<ManifestRecord> + Sync,
{
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut writer = ShardedWriter::open(out_dir, opts.shard_size)?;
    writer.touch()?;
    let done: HashSet<String> = read_dataset(out_dir)?.into_iter().map(|r| r.task_id).collect();
    let filtered_before: HashSet<(Modality, String)> = read_filtered(out_dir)?
        .into_iter()
        .map(|e| (e.modality, e.source_ref))
        .collect();

    let mut report = GenerationReport::default();
    let pending: Vec<(&Source, TaskContext)> = sources
        .iter()
        .map(|s| (s, TaskContext::new(&s.source_ref, digest, out_dir, opts)))
        .filter(|(s, ctx)| {
            let skip = done.contains(&ctx.task_id)
                || filtered_before.contains(&(modality, s.source_ref.clone()));
            if skip {
                report.skipped_existing += 1;
            }
            !skip
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let chunk = opts.jobs.max(1) * 8;
    for batch in pending.chunks(chunk) {
        let results: Vec<Result<ManifestRecord>> =
            pool.install(|| batch.par_iter().map(|(s, ctx)| build(s, ctx)).collect());
        let mut filtered = Vec::new();
        for ((source, _), result) in batch.iter().zip(results) {
            match result {
                Ok(record) => {
                    writer.append(&record)?;
                    report.written += 1;
                }
                Err(err) => match err.filter_reason() {
                    Some(reason) => {
                        log::info!("skipping {}: {err}", source.source_ref);
                        *report.filtered.entry(reason).or_default() += 1;
                        filtered.push(FilteredEntry {
                            source_ref: source.source_ref.clone(),
                            modality,
                            reason,
                            detail: err.to_string(),
                        });
                    }
                    None => {
                        writer.flush()?;
                        append_filtered(out_dir, &filtered)?;
                        return Err(err);
                    }
                },
            }
        }
        writer.flush()?;
        append_filtered(out_dir, &filtered)?;
    }
    Ok(report)
}

pub fn generate_images(input: &Path, out_dir: &Path, cfg: &ImageGridConfig, opts: &RunOptions) -> Result<GenerationReport> {
    cfg.validate()?;
    let sources = discover_images(input)?;
    let digest = config_digest(&(Modality::Image, cfg));
    run_generation(&sources, Modality::Image, &digest, out_dir, opts, |s, ctx| image_record(s, cfg, ctx))
}

pub fn generate_videos(
    input: &Path,
    out_dir: &Path,
    cfg: &VideoClipConfig,
    decoder: Option<&Path>,
    opts: &RunOptions,
) -> Result<GenerationReport> {
    cfg.validate()?;
    let sources = discover_videos(input)?;
    let digest = config_digest(&(Modality::Video, cfg));
    run_generation(&sources, Modality::Video, &digest, out_dir, opts, |s, ctx| {
        video_record(s, cfg, decoder, ctx)
    })
}

pub fn generate_rgbd(input: &Path, out_dir: &Path, cfg: &DepthSampleConfig, opts: &RunOptions) -> Result<GenerationReport> {
    cfg.validate()?;
    let sources = discover_rgbd(input)?;
    let digest = config_digest(&(Modality::Rgbd, cfg));
    run_generation(&sources, Modality::Rgbd, &digest, out_dir, opts, |s, ctx| rgbd_record(s, cfg, ctx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_refs_use_forward_slashes() {
        assert_eq!(relative_ref(Path::new("/a"), Path::new("/a/b/c.png")), "b/c.png");
    }

    #[test]
    fn extension_matching_is_case_insensitive() {
        assert!(has_extension(Path::new("x.JPG"), IMAGE_EXTENSIONS));
        assert!(!has_extension(Path::new("x.gif"), IMAGE_EXTENSIONS));
    }
}
