//! JSONL dataset manifests.
//!
//! One compact JSON object per line, keys in a fixed order, LF terminated.
//! Unknown keys survive a read/write round trip. Datasets may be split into
//! shards named `manifest-{shard:05}.jsonl`; sources skipped during
//! generation are logged to `filtered.jsonl` next to them.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, FilterReason, Result};
use crate::permutation::{GroundTruth, Permutation};
use crate::prompts::Modality;

pub const FILTERED_LOG: &str = "filtered.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub task_id: String,
    pub modality: Modality,
    pub k: usize,
    pub prompt: String,
    /// Media paths relative to the dataset root, in prompt order.
    pub media: Vec<String>,
    /// 1-based answer `[π(1), …, π(K)]`.
    pub ground_truth: Vec<usize>,
    /// 0-based internal mapping.
    pub perm: Vec<usize>,
    pub seed: u64,
    pub source_ref: String,
    pub config_digest: String,
    pub created_unix_s: u64,
    /// SHA-256 of each media entry (for directories, of their sorted file listing and contents).
    #[serde(default)]
    pub media_sha256: Vec<String>,
    /// Modality-specific generation facts used by `verify`.
    #[serde(default)]
    pub detail: Value,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ManifestRecord {
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        GroundTruth::new(self.ground_truth.clone())
    }

    pub fn permutation(&self) -> Result<Permutation> {
        Permutation::from_mapping(self.perm.clone())
    }

    /// Expected number of media entries.
    pub fn expected_media(&self) -> usize {
        match self.modality {
            Modality::Rgbd => 1,
            _ => self.k,
        }
    }

    /// Record-level invariants that need no file access.
    pub fn check(&self) -> Result<()> {
        let perm = self.permutation()?;
        let g = self.ground_truth()?;
        if perm.k() != self.k || g.k() != self.k {
            return Err(Error::invalid(format!(
                "k = {} but perm has {} and ground_truth {} entries",
                self.k,
                perm.k(),
                g.k()
            )));
        }
        if perm.ground_truth() != g {
            return Err(Error::invalid("ground_truth disagrees with perm"));
        }
        if self.media.len() != self.expected_media() {
            return Err(Error::invalid(format!(
                "{} media entries, expected {}",
                self.media.len(),
                self.expected_media()
            )));
        }
        if !self.media_sha256.is_empty() && self.media_sha256.len() != self.media.len() {
            return Err(Error::invalid("media_sha256 length differs from media"));
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("manifest records serialize")
    }
}

/// A source skipped during generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredEntry {
    pub source_ref: String,
    pub modality: Modality,
    pub reason: FilterReason,
    pub detail: String,
}

pub fn shard_path(dir: &Path, shard: usize) -> PathBuf {
    dir.join(format!("manifest-{shard:05}.jsonl"))
}

fn is_shard_name(name: &str) -> bool {
    name.strip_prefix("manifest-")
        .and_then(|n| n.strip_suffix(".jsonl"))
        .is_some_and(|d| d.len() >= 5 && d.bytes().all(|b| b.is_ascii_digit()))
}

/// Shard files of a dataset directory in shard order.
pub fn list_shards(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut shards: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(is_shard_name)
        })
        .collect();
    shards.sort();
    Ok(shards)
}

fn write_line(out: &mut impl Write, line: &str, path: &Path) -> Result<()> {
    out.write_all(line.as_bytes())
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}

/// Writes `records` to `path`, replacing any existing file.
pub fn write_manifest<'a>(
    records: impl IntoIterator<Item = &'a ManifestRecord>,
    path: &Path,
) -> Result<usize> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut count = 0;
    for r in records {
        write_line(&mut out, &r.to_line(), path)?;
        count += 1;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(count)
}

/// Streams records from one manifest file; the first malformed line yields
/// a parse error carrying its 1-based line number.
pub struct ManifestReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl ManifestReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(ManifestReader {
            path: path.to_path_buf(),
            lines: BufReader::new(file).lines(),
            line_no: 0,
        })
    }
}

impl Iterator for ManifestReader {
    type Item = Result<ManifestRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: self.path.clone(),
                line: self.line_no,
                message: e.to_string(),
            }));
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    ManifestReader::open(path)?.collect()
}

/// Reads a manifest file, or every shard of a dataset directory in order.
pub fn read_dataset(path: &Path) -> Result<Vec<ManifestRecord>> {
    if path.is_dir() {
        let mut all = Vec::new();
        for shard in list_shards(path)? {
            all.extend(read_manifest(&shard)?);
        }
        Ok(all)
    } else {
        read_manifest(path)
    }
}

/// Directory holding a manifest path (the path itself when it is a directory).
pub fn dataset_root(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

/// Single appender over a sharded dataset. Reopening an existing dataset
/// continues in its last shard.
pub struct ShardedWriter {
    dir: PathBuf,
    shard_size: usize,
    shard: usize,
    in_shard: usize,
    out: Option<BufWriter<File>>,
}

impl ShardedWriter {
    pub fn open(dir: &Path, shard_size: usize) -> Result<Self> {
        if shard_size == 0 {
            return Err(Error::invalid("shard size must be >= 1"));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let shards = list_shards(dir)?;
        let (shard, in_shard) = match shards.last() {
            Some(last) => {
                let n = ManifestReader::open(last)?.count();
                (shards.len() - 1, n)
            }
            None => (0, 0),
        };
        Ok(ShardedWriter {
            dir: dir.to_path_buf(),
            shard_size,
            shard,
            in_shard,
            out: None,
        })
    }

    pub fn append(&mut self, record: &ManifestRecord) -> Result<()> {
        if self.in_shard >= self.shard_size {
            self.flush()?;
            self.out = None;
            self.shard += 1;
            self.in_shard = 0;
        }
        let path = shard_path(&self.dir, self.shard);
        if self.out.is_none() {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            self.out = Some(BufWriter::new(file));
        }
        let out = self.out.as_mut().expect("opened above");
        write_line(out, &record.to_line(), &path)?;
        self.in_shard += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(out) = self.out.as_mut() {
            out.flush()
                .map_err(|e| Error::io(shard_path(&self.dir, self.shard), e))?;
        }
        Ok(())
    }

    /// Makes sure shard 0 exists even when nothing was appended.
    pub fn touch(&mut self) -> Result<()> {
        let path = shard_path(&self.dir, self.shard);
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

impl Drop for ShardedWriter {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

pub fn append_filtered(dir: &Path, entries: &[FilteredEntry]) -> Result<()> {
    if entries.is_empty() {
        return Ok(());
    }
    let path = dir.join(FILTERED_LOG);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    for e in entries {
        write_line(
            &mut out,
            &serde_json::to_string(e).expect("filtered entries serialize"),
            &path,
        )?;
    }
    out.flush().map_err(|e| Error::io(&path, e))
}

pub fn read_filtered(dir: &Path) -> Result<Vec<FilteredEntry>> {
    let path = dir.join(FILTERED_LOG);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    pub by_modality: BTreeMap<String, usize>,
    pub k_histogram: BTreeMap<usize, usize>,
    pub filtered: BTreeMap<String, usize>,
}

/// Summarizes a manifest file or dataset directory together with its
/// `filtered.jsonl` log.
pub fn stats(path: &Path) -> Result<Stats> {
    let records = read_dataset(path)?;
    let mut s = Stats {
        total: records.len(),
        ..Default::default()
    };
    for r in &records {
        *s.by_modality.entry(r.modality.to_string()).or_default() += 1;
        *s.k_histogram.entry(r.k).or_default() += 1;
    }
    for e in read_filtered(&dataset_root(path))? {
        *s.filtered.entry(e.reason.to_string()).or_default() += 1;
    }
    Ok(s)
}
