//! Task prompt templates.
//!
//! Rendering is pure: a fixed [`PromptKind`] always yields the same bytes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permutation::{format_answer, MAX_K, MIN_K};

const FORMAT_INSTRUCTION: &str = "You FIRST think about the reasoning process as an internal monologue and then provide the final answer. The reasoning process MUST BE enclosed within <think> </think> tags. The final answer MUST BE put within <answer> </answer> tags.";

pub const IMAGE_PLACEHOLDER: &str = "<image>";
pub const VIDEO_PLACEHOLDER: &str = "<video>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Video,
    Rgbd,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Video => "video",
            Modality::Rgbd => "rgbd",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Modality::Image),
            "video" => Ok(Modality::Video),
            "rgbd" | "3d" => Ok(Modality::Rgbd),
            other => Err(Error::invalid(format!("unknown modality {other:?}"))),
        }
    }
}

/// Everything needed to parameterize one of the three templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Image { rows: usize, cols: usize },
    Video { clips: usize },
    Rgbd { points: usize },
}

impl PromptKind {
    pub fn modality(&self) -> Modality {
        match self {
            PromptKind::Image { .. } => Modality::Image,
            PromptKind::Video { .. } => Modality::Video,
            PromptKind::Rgbd { .. } => Modality::Rgbd,
        }
    }

    pub fn k(&self) -> usize {
        match *self {
            PromptKind::Image { rows, cols } => rows * cols,
            PromptKind::Video { clips } => clips,
            PromptKind::Rgbd { points } => points,
        }
    }

    /// Media placeholders in the rendered text: one per piece, or a single
    /// annotated image for RGB-D.
    pub fn placeholder_count(&self) -> usize {
        match self {
            PromptKind::Rgbd { .. } => 1,
            _ => self.k(),
        }
    }
}

/// English count word for 1..=12, numerals beyond.
pub fn count_word(n: usize) -> String {
    const WORDS: [&str; 12] = [
        "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
        "twelve",
    ];
    match n {
        1..=12 => WORDS[n - 1].to_string(),
        _ => n.to_string(),
    }
}

fn capitalized(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// A fixed sample answer for the "Answer format example" line. The 9-tile
/// and 6-clip defaults keep their canonical examples.
fn answer_example(k: usize) -> String {
    match k {
        9 => "5, 1, 3, 7, 9, 2, 4, 8, 6".to_string(),
        6 => "2, 3, 1, 4, 6, 5".to_string(),
        _ => {
            // stride walk with a stride coprime to k
            let stride = (k / 2 + 1..k).find(|s| gcd(*s, k) == 1).unwrap_or(1);
            format_answer((0..k).map(|i| ((1 + i * stride) % k + 1) as i64))
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn render_prompt(kind: &PromptKind) -> Result<String> {
    let k = kind.k();
    if !(MIN_K..=MAX_K).contains(&k) {
        return Err(Error::invalid(format!(
            "{} prompt with {k} pieces is unsupported",
            kind.modality()
        )));
    }
    let mut out = String::new();
    match *kind {
        PromptKind::Image { rows, cols } => {
            if rows == 0 || cols == 0 {
                return Err(Error::invalid("image grid dimensions must be positive"));
            }
            let grid = format!("{rows}*{cols}");
            out.push_str(&format!(
                "You are given {} shuffled image tiles that were created by slicing one image into a {grid} grid.\n\n",
                count_word(k)
            ));
            out.push_str("Here are the tiles, each tagged with an index reflecting the current (shuffled) order in which they are shown:\n\n");
            for j in 1..=k {
                out.push_str(&format!("Tile {j}: {IMAGE_PLACEHOLDER}\n"));
            }
            out.push_str("\nTask:\n");
            out.push_str(&format!(
                "Mentally reassemble the original image, arranging the tiles into the correct {grid} layout and provide the tile indices in raster-scan order (left-to-right, top-to-bottom), separated by commas.\n\n"
            ));
            out.push_str("Answer format example:\n");
            out.push_str(&answer_example(k));
            out.push('\n');
        }
        PromptKind::Video { clips } => {
            out.push_str(&format!(
                "You are given {} **shuffled** video clips that were created by slicing one original video into {clips} equal-length temporal segments.\n\n",
                count_word(clips)
            ));
            out.push_str("Here are the clips, each tagged with an index reflecting the current (shuffled) order in which they are shown:\n\n");
            for j in 1..=clips {
                out.push_str(&format!("Clip {j}: {VIDEO_PLACEHOLDER}\n"));
            }
            out.push_str("\nTask:\n");
            out.push_str("1. Mentally reassemble the original video by arranging the clips in their correct chronological order (earliest segment first, latest segment last).\n");
            out.push_str("2. Output the clip indices in that order, separated by commas.\n\n");
            out.push_str("Answer format example:\n");
            out.push_str(&answer_example(clips));
            out.push('\n');
        }
        PromptKind::Rgbd { points } => {
            out.push_str(IMAGE_PLACEHOLDER);
            out.push('\n');
            out.push_str(&format!(
                "You are given an indoor RGB image. {} points are marked on the image with red circular labels (1, 2, 3, …).\n\n",
                capitalized(&count_word(points))
            ));
            out.push_str("Your task is to order the points from closest to farthest relative to the camera, judging the distance based on the center of the red circular marker.\n\n");
            out.push_str("Answer with the ordered sequence of point numbers.\n");
        }
    }
    out.push_str(FORMAT_INSTRUCTION);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::permutation::is_valid_permutation;

    #[test]
    fn image_default() {
        let p = render_prompt(&PromptKind::Image { rows: 3, cols: 3 }).unwrap();
        assert!(p.contains("nine shuffled image tiles"));
        assert!(p.contains("3*3 grid"));
        assert_eq!(p.matches("Tile ").count(), 9);
        assert_eq!(p.matches(IMAGE_PLACEHOLDER).count(), 9);
        assert!(p.contains("5, 1, 3, 7, 9, 2, 4, 8, 6\n"));
        assert!(p.contains("The reasoning process MUST BE enclosed within"));
    }

    #[test]
    fn video_default() {
        let p = render_prompt(&PromptKind::Video { clips: 6 }).unwrap();
        assert!(p.starts_with("You are given six **shuffled** video clips"));
        for j in 1..=6 {
            assert!(p.contains(&format!("Clip {j}: <video>\n")));
        }
        assert!(!p.contains("Clip 7"));
        assert!(p.contains("correct chronological order"));
    }

    #[test]
    fn image_2x2() {
        let p = render_prompt(&PromptKind::Image { rows: 2, cols: 2 }).unwrap();
        assert!(p.contains("four shuffled image tiles"));
        assert!(p.contains("2*2 grid"));
        assert_eq!(p.matches(IMAGE_PLACEHOLDER).count(), 4);
    }

    #[test]
    fn rgbd_single_placeholder() {
        let p = render_prompt(&PromptKind::Rgbd { points: 6 }).unwrap();
        assert!(p.starts_with("<image>\nYou are given an indoor RGB image. Six points"));
        assert_eq!(p.matches(IMAGE_PLACEHOLDER).count(), 1);
        assert!(p.contains("ordered sequence of point numbers"));
    }

    #[test]
    fn unsupported_counts() {
        assert!(render_prompt(&PromptKind::Video { clips: 1 }).is_err());
        assert!(render_prompt(&PromptKind::Image { rows: 9, cols: 9 }).is_err());
        assert!(render_prompt(&PromptKind::Rgbd { points: 0 }).is_err());
    }

    #[test]
    fn count_words() {
        assert_eq!(count_word(4), "four");
        assert_eq!(count_word(12), "twelve");
        assert_eq!(count_word(13), "13");
        assert_eq!(capitalized(&count_word(13)), "13");
    }

    #[test]
    fn examples_are_valid_answers() {
        for k in MIN_K..=MAX_K {
            let ex: Vec<i64> = answer_example(k)
                .split(", ")
                .map(|t| t.parse().unwrap())
                .collect();
            assert!(is_valid_permutation(&ex, k), "k={k}: {ex:?}");
        }
    }

    #[test]
    fn placeholder_count_matches_kind() {
        for kind in [
            PromptKind::Image { rows: 2, cols: 3 },
            PromptKind::Video { clips: 4 },
            PromptKind::Rgbd { points: 5 },
        ] {
            let p = render_prompt(&kind).unwrap();
            let n = p.matches(IMAGE_PLACEHOLDER).count() + p.matches(VIDEO_PLACEHOLDER).count();
            assert_eq!(n, kind.placeholder_count());
        }
    }
}
