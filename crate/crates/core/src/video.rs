//! Video jigsaw: uniform temporal clips, boundary trimming, frame
//! subsampling and per-frame pixel budgets.
//!
//! Decoding sits behind [`FrameSource`]. Two sources ship here: directories
//! of pre-extracted frames, and an external decoder program driven over a
//! small command-line protocol (see [`ExternalDecoder`]).

use std::path::{Path, PathBuf};
use std::process::Command;

use image::imageops::FilterType;
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FilterReason, Result};
use crate::permutation::{sample_permutation, GroundTruth, Permutation};
use crate::prompts::{render_prompt, PromptKind};
use crate::reward::{rational_from_f64, Rational};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoClipConfig {
    #[serde(alias = "k_clips")]
    pub clips: usize,
    /// Fraction of each clip's frames dropped at both its start and its end.
    pub trim_frac: f64,
    pub max_frames_per_clip: usize,
    pub max_pixels_per_frame: u64,
    pub min_duration_s: f64,
    pub dim_multiple: u32,
    pub allow_identity: bool,
}

impl Default for VideoClipConfig {
    fn default() -> Self {
        VideoClipConfig {
            clips: 6,
            trim_frac: 0.05,
            max_frames_per_clip: 12,
            max_pixels_per_frame: 128 * 28 * 28,
            min_duration_s: 24.0,
            dim_multiple: 28,
            allow_identity: true,
        }
    }
}

impl VideoClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(crate::permutation::MIN_K..=crate::permutation::MAX_K).contains(&self.clips) {
            return Err(Error::invalid(format!(
                "video.clips: {} outside [2, {}]",
                self.clips,
                crate::permutation::MAX_K
            )));
        }
        if !(0.0..0.5).contains(&self.trim_frac) {
            return Err(Error::invalid(format!(
                "video.trim_frac: {} outside [0, 0.5)",
                self.trim_frac
            )));
        }
        rational_from_f64(self.trim_frac)
            .map_err(|e| Error::invalid(format!("video.trim_frac: {e}")))?;
        if self.max_frames_per_clip == 0 {
            return Err(Error::invalid("video.max_frames_per_clip: must be >= 1"));
        }
        if self.dim_multiple == 0 {
            return Err(Error::invalid("video.dim_multiple: must be >= 1"));
        }
        let m = self.dim_multiple as u64;
        if m * m > self.max_pixels_per_frame {
            return Err(Error::invalid(format!(
                "video.max_pixels_per_frame: {} cannot hold one {m}x{m} block",
                self.max_pixels_per_frame
            )));
        }
        if !(self.min_duration_s >= 0.0) {
            return Err(Error::invalid("video.min_duration_s: must be >= 0"));
        }
        Ok(())
    }

    fn trim_ratio(&self) -> Rational {
        rational_from_f64(self.trim_frac).unwrap_or_else(|_| Rational::from_integer(0))
    }

    pub fn prompt_kind(&self) -> PromptKind {
        PromptKind::Video { clips: self.clips }
    }
}

/// One clip: the untrimmed span `[start, end)` and the frames drawn from its
/// trimmed interior.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpan {
    pub start: usize,
    pub end: usize,
    pub frames: Vec<usize>,
}

impl ClipSpan {
    /// Frames dropped at each end of this span.
    pub fn trim(&self, trim_frac: Rational) -> usize {
        trim_amount(self.end - self.start, trim_frac)
    }
}

fn trim_amount(len: usize, trim_frac: Rational) -> usize {
    let t = (trim_frac * Rational::from_integer(len as i64)).floor().to_integer() as usize;
    // keep at least one frame
    t.min(len.saturating_sub(1) / 2)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipPlan {
    pub spans: Vec<ClipSpan>,
}

/// `n` indices spread evenly over `[a, b)`, including both `a` and `b - 1`.
fn uniform_indices(a: usize, b: usize, n: usize) -> Vec<usize> {
    let len = b - a;
    let n = n.min(len);
    if n <= 1 {
        return vec![a];
    }
    (0..n)
        .map(|j| a + (j * (len - 1) + (n - 1) / 2) / (n - 1))
        .collect()
}

/// Splits `t_frames` frames into `cfg.clips` uniform spans, trims each span,
/// and picks up to `cfg.max_frames_per_clip` frames per span.
pub fn plan_clips(t_frames: usize, fps: f64, cfg: &VideoClipConfig) -> Result<ClipPlan> {
    cfg.validate()?;
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(Error::invalid(format!("fps must be positive, got {fps}")));
    }
    let duration = t_frames as f64 / fps;
    if duration < cfg.min_duration_s {
        return Err(Error::filtered(
            FilterReason::TooShort,
            format!("{duration:.2} s is below {} s", cfg.min_duration_s),
        ));
    }
    let k = cfg.clips;
    if t_frames < k {
        return Err(Error::filtered(
            FilterReason::TooFewFrames,
            format!("{t_frames} frames for {k} clips"),
        ));
    }
    let trim = cfg.trim_ratio();
    let spans = (0..k)
        .map(|i| {
            let start = i * t_frames / k;
            let end = (i + 1) * t_frames / k;
            let t = trim_amount(end - start, trim);
            ClipSpan {
                start,
                end,
                frames: uniform_indices(start + t, end - t, cfg.max_frames_per_clip),
            }
        })
        .collect();
    Ok(ClipPlan { spans })
}

/// Largest `dim_multiple`-aligned size with the input's aspect ratio whose
/// pixel count fits the budget. Aligned inputs already within budget are
/// returned unchanged; each side is at least one multiple.
pub fn fit_resolution(h: u32, w: u32, cfg: &VideoClipConfig) -> (u32, u32) {
    let m = cfg.dim_multiple.max(1) as u64;
    let budget = cfg.max_pixels_per_frame;
    let (h64, w64) = (h.max(1) as u64, w.max(1) as u64);
    if h64 * w64 <= budget && h64 % m == 0 && w64 % m == 0 {
        return (h, w);
    }
    let scale = ((budget as f64) / (h64 * w64) as f64).sqrt().min(1.0);
    let align = |v: u64| -> u64 { (((v as f64 * scale) as u64) / m * m).max(m) };
    let (mut nh, mut nw) = (align(h64), align(w64));
    // float rounding or the one-multiple floor can still overshoot
    while nh * nw > budget {
        if nh >= nw && nh > m {
            nh -= m;
        } else if nw > m {
            nw -= m;
        } else {
            break;
        }
    }
    (nh as u32, nw as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoInfo {
    pub frames: usize,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
}

/// Decoder boundary: report stream metadata and extract frames by index.
pub trait FrameSource {
    fn probe(&self) -> Result<VideoInfo>;

    /// Decodes the frames at `indices` (ascending), each resized to `width x height`.
    fn extract(&self, indices: &[usize], width: u32, height: u32) -> Result<Vec<RgbImage>>;
}

pub const FPS_SIDECAR: &str = "fps.txt";

/// A directory of `frame_%06d.png` files plus an `fps.txt` sidecar. Frames
/// are indexed by sorted file name, so the numbering may start at 0 or 1.
#[derive(Debug, Clone)]
pub struct FrameDirSource {
    dir: PathBuf,
    frames: Vec<PathBuf>,
    fps: f64,
}

impl FrameDirSource {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let fps_path = dir.join(FPS_SIDECAR);
        let fps_text =
            std::fs::read_to_string(&fps_path).map_err(|e| Error::io(&fps_path, e))?;
        let fps: f64 = fps_text.trim().parse().map_err(|_| Error::CorruptInput {
            path: fps_path.display().to_string(),
            detail: format!("fps sidecar holds {:?}", fps_text.trim()),
        })?;
        let mut frames: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| is_frame_file(p))
            .collect();
        frames.sort();
        Ok(FrameDirSource { dir, frames, fps })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

pub fn is_frame_file(p: &Path) -> bool {
    p.file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("frame_"))
        .and_then(|n| n.strip_suffix(".png"))
        .is_some_and(|digits| !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()))
}

fn decode_frame(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::CorruptInput {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
}

fn resize_exact(img: RgbImage, width: u32, height: u32) -> RgbImage {
    if img.dimensions() == (width, height) {
        img
    } else {
        image::imageops::resize(&img, width, height, FilterType::Triangle)
    }
}

impl FrameSource for FrameDirSource {
    fn probe(&self) -> Result<VideoInfo> {
        let first = self.frames.first().ok_or_else(|| Error::CorruptInput {
            path: self.dir.display().to_string(),
            detail: "no frame_*.png files".into(),
        })?;
        let (width, height) = image::image_dimensions(first).map_err(|e| Error::CorruptInput {
            path: first.display().to_string(),
            detail: e.to_string(),
        })?;
        Ok(VideoInfo {
            frames: self.frames.len(),
            fps: self.fps,
            width,
            height,
        })
    }

    fn extract(&self, indices: &[usize], width: u32, height: u32) -> Result<Vec<RgbImage>> {
        indices
            .iter()
            .map(|&i| {
                let path = self.frames.get(i).ok_or_else(|| {
                    Error::invalid(format!("frame {i} out of range ({} frames)", self.frames.len()))
                })?;
                Ok(resize_exact(decode_frame(path)?, width, height))
            })
            .collect()
    }
}

/// Delegates decoding to an external program:
///
/// - `<program> probe <source>` prints `{"frames":N,"fps":F,"width":W,"height":H}`.
/// - `<program> extract <source> <out_dir> <width> <height> <i1,i2,...>` writes
///   `<out_dir>/<index>.png` for every requested index.
///
/// Frames are resized here as well, so a decoder may ignore the size hint.
#[derive(Debug, Clone)]
pub struct ExternalDecoder {
    pub program: PathBuf,
    pub source: PathBuf,
}

impl ExternalDecoder {
    fn run(&self, args: &[&std::ffi::OsStr]) -> Result<Vec<u8>> {
        let out = Command::new(&self.program)
            .args(args)
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        if !out.status.success() {
            return Err(Error::CorruptInput {
                path: self.source.display().to_string(),
                detail: format!(
                    "decoder exited with {}: {}",
                    out.status,
                    String::from_utf8_lossy(&out.stderr).trim()
                ),
            });
        }
        Ok(out.stdout)
    }
}

impl FrameSource for ExternalDecoder {
    fn probe(&self) -> Result<VideoInfo> {
        let stdout = self.run(&["probe".as_ref(), self.source.as_os_str()])?;
        serde_json::from_slice(&stdout).map_err(|e| Error::CorruptInput {
            path: self.source.display().to_string(),
            detail: format!("bad probe output: {e}"),
        })
    }

    fn extract(&self, indices: &[usize], width: u32, height: u32) -> Result<Vec<RgbImage>> {
        let tmp = tempdir_for_decode()?;
        let list = indices
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let (w, h) = (width.to_string(), height.to_string());
        let result = self
            .run(&[
                "extract".as_ref(),
                self.source.as_os_str(),
                tmp.as_os_str(),
                w.as_ref(),
                h.as_ref(),
                list.as_ref(),
            ])
            .and_then(|_| {
                indices
                    .iter()
                    .map(|i| Ok(resize_exact(decode_frame(&tmp.join(format!("{i}.png")))?, width, height)))
                    .collect()
            });
        let _ = std::fs::remove_dir_all(&tmp);
        result
    }
}

fn tempdir_for_decode() -> Result<PathBuf> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let dir = std::env::temp_dir().join(format!(
        "jigsaw-decode-{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

#[derive(Debug, Clone)]
pub struct VideoJigsaw {
    pub info: VideoInfo,
    pub plan: ClipPlan,
    pub perm: Permutation,
    pub ground_truth: GroundTruth,
    pub prompt: String,
    /// `(height, width)` of every extracted frame.
    pub frame_dims: (u32, u32),
    /// Clips in shuffled order, each a list of frames in time order.
    pub shuffled_clips: Vec<Vec<RgbImage>>,
}

impl VideoJigsaw {
    /// Clip spans in shuffled order.
    pub fn shuffled_spans(&self) -> Vec<ClipSpan> {
        self.perm
            .apply_shuffle(&self.plan.spans)
            .expect("plan has k spans")
    }
}

pub fn generate_video_task<R: Rng + ?Sized>(
    source: &dyn FrameSource,
    cfg: &VideoClipConfig,
    rng: &mut R,
) -> Result<VideoJigsaw> {
    let info = source.probe()?;
    let plan = plan_clips(info.frames, info.fps, cfg)?;
    let (h, w) = fit_resolution(info.height, info.width, cfg);
    let clips = plan
        .spans
        .iter()
        .map(|span| source.extract(&span.frames, w, h))
        .collect::<Result<Vec<_>>>()?;
    let perm = sample_permutation(cfg.clips, rng, cfg.allow_identity)?;
    let shuffled_clips = perm.apply_shuffle(&clips)?;
    Ok(VideoJigsaw {
        info,
        ground_truth: perm.ground_truth(),
        prompt: render_prompt(&cfg.prompt_kind())?,
        plan,
        perm,
        frame_dims: (h, w),
        shuffled_clips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::task_rng;

    fn cfg() -> VideoClipConfig {
        VideoClipConfig::default()
    }

    #[test]
    fn six_hundred_frames() {
        let plan = plan_clips(600, 10.0, &cfg()).unwrap();
        assert_eq!(plan.spans.len(), 6);
        for (i, s) in plan.spans.iter().enumerate() {
            assert_eq!((s.start, s.end), (i * 100, (i + 1) * 100));
            assert_eq!(s.frames.len(), 12);
            assert_eq!(*s.frames.first().unwrap(), s.start + 5);
            assert_eq!(*s.frames.last().unwrap(), s.start + 94);
        }
    }

    #[test]
    fn too_short_filtered() {
        // 20 s at 30 fps
        let err = plan_clips(600, 30.0, &cfg()).unwrap_err();
        assert_eq!(err.filter_reason(), Some(FilterReason::TooShort));
    }

    #[test]
    fn tiny_spans_not_trimmed() {
        // 12 frames at 0.5 fps = 24 s
        let plan = plan_clips(12, 0.5, &cfg()).unwrap();
        for (i, s) in plan.spans.iter().enumerate() {
            assert_eq!((s.start, s.end), (2 * i, 2 * i + 2));
            assert_eq!(s.frames, vec![2 * i, 2 * i + 1]);
        }
    }

    #[test]
    fn fewer_frames_than_clips() {
        let err = plan_clips(5, 0.1, &cfg()).unwrap_err();
        assert_eq!(err.filter_reason(), Some(FilterReason::TooFewFrames));
    }

    #[test]
    fn trim_keeps_one_frame() {
        let c = VideoClipConfig { trim_frac: 0.49, ..cfg() };
        let plan = plan_clips(18, 0.5, &c).unwrap();
        // spans of 3 frames: floor(0.49 * 3) = 1 per side leaves the middle frame
        for s in &plan.spans {
            assert_eq!(s.frames, vec![s.start + 1]);
        }
        // 2-frame spans: floor(0.98) = 0
        let plan = plan_clips(12, 0.5, &c).unwrap();
        assert!(plan.spans.iter().all(|s| s.frames.len() == 2));
    }

    #[test]
    fn exact_trim_arithmetic() {
        // 0.29 * 100 is 28.999999999999996 in binary floating point
        let c = VideoClipConfig { trim_frac: 0.29, ..cfg() };
        let plan = plan_clips(600, 10.0, &c).unwrap();
        assert_eq!(plan.spans[0].frames[0], 29);
        assert_eq!(*plan.spans[0].frames.last().unwrap(), 70);
    }

    #[test]
    fn uniform_indices_cases() {
        assert_eq!(uniform_indices(5, 95, 12).len(), 12);
        assert_eq!(uniform_indices(0, 3, 12), vec![0, 1, 2]);
        assert_eq!(uniform_indices(4, 5, 12), vec![4]);
        assert_eq!(uniform_indices(0, 10, 2), vec![0, 9]);
        let v = uniform_indices(0, 13, 12);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert_eq!((v[0], v[11]), (0, 12));
    }

    #[test]
    fn fit_1080p() {
        let (h, w) = fit_resolution(1080, 1920, &cfg());
        assert_eq!((h % 28, w % 28), (0, 0));
        assert!(h as u64 * w as u64 <= 100_352);
        // scale √(100352/2073600) ≈ 0.22: 1920·s ≈ 422.4 → 420, 1080·s ≈ 237.6 → 224
        assert_eq!((h, w), (224, 420));
        let ideal_w = h as f64 * 1920.0 / 1080.0;
        assert!((w as f64 - ideal_w).abs() <= 28.0 + 1e-9);
    }

    #[test]
    fn fit_unchanged_and_minimum() {
        assert_eq!(fit_resolution(280, 280, &cfg()), (280, 280));
        assert_eq!(fit_resolution(10, 10, &cfg()), (28, 28));
        let (h, w) = fit_resolution(1, 100_000, &cfg());
        assert_eq!(h, 28);
        assert!(h as u64 * w as u64 <= 100_352);
    }

    #[test]
    fn config_validation() {
        assert!(VideoClipConfig { trim_frac: 0.5, ..cfg() }.validate().is_err());
        assert!(VideoClipConfig { clips: 1, ..cfg() }.validate().is_err());
        assert!(VideoClipConfig { max_pixels_per_frame: 700, ..cfg() }.validate().is_err());
        assert!(VideoClipConfig { dim_multiple: 0, ..cfg() }.validate().is_err());
        assert!(cfg().validate().is_ok());
    }

    struct Synthetic {
        frames: usize,
        fps: f64,
    }

    impl FrameSource for Synthetic {
        fn probe(&self) -> Result<VideoInfo> {
            Ok(VideoInfo { frames: self.frames, fps: self.fps, width: 64, height: 48 })
        }

        fn extract(&self, indices: &[usize], width: u32, height: u32) -> Result<Vec<RgbImage>> {
            Ok(indices
                .iter()
                .map(|&i| RgbImage::from_pixel(width, height, image::Rgb([(i % 256) as u8, (i / 256) as u8, 0])))
                .collect())
        }
    }

    #[test]
    fn generate_and_restore_order() {
        let src = Synthetic { frames: 1800, fps: 30.0 };
        let task = generate_video_task(&src, &cfg(), &mut task_rng(11)).unwrap();
        assert_eq!(task.shuffled_clips.len(), 6);
        assert!(task.shuffled_clips.iter().all(|c| c.len() <= 12));
        let (h, w) = task.frame_dims;
        assert!(h as u64 * w as u64 <= 100_352);
        let restored = task.ground_truth.reassemble(&task.shuffled_spans()).unwrap();
        let indices: Vec<usize> = restored.iter().flat_map(|s| s.frames.clone()).collect();
        assert!(indices.windows(2).all(|p| p[0] < p[1]));
        // pixel payload agrees with the span bookkeeping
        let clips = task.ground_truth.reassemble(&task.shuffled_clips).unwrap();
        for (clip, span) in clips.iter().zip(&task.plan.spans) {
            for (frame, &idx) in clip.iter().zip(&span.frames) {
                assert_eq!(frame.get_pixel(0, 0)[0], (idx % 256) as u8);
            }
        }
    }

    #[test]
    fn four_clip_config() {
        let src = Synthetic { frames: 600, fps: 10.0 };
        let c = VideoClipConfig { clips: 4, ..cfg() };
        let task = generate_video_task(&src, &c, &mut task_rng(1)).unwrap();
        assert_eq!(task.ground_truth.k(), 4);
        assert!(task.prompt.starts_with("You are given four **shuffled** video clips"));
    }

    #[test]
    fn frame_file_names() {
        assert!(is_frame_file(Path::new("a/frame_000001.png")));
        assert!(!is_frame_file(Path::new("a/frame_.png")));
        assert!(!is_frame_file(Path::new("a/frame_0001.jpg")));
        assert!(!is_frame_file(Path::new("a/fps.txt")));
    }
}
