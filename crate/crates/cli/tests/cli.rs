use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jigsaw_core::image_jigsaw::ImageGridConfig;
use jigsaw_core::manifest::{read_dataset, shard_path};
use jigsaw_core::pipeline::{generate_images, RunOptions};
use jigsaw_core::permutation::format_answer;
use jigsaw_core::synth::gradient_image;

fn jigsaw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jigsaw"))
        .args(args)
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn corpus() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..6u32 {
        gradient_image(120 + 17 * i, 96 + 11 * i, i).save(dir.path().join(format!("img{i}.png"))).unwrap();
    }
    image::RgbImage::new(50, 50).save(dir.path().join("tiny.png")).unwrap();
    dir
}

fn exact_responses(dataset: &Path, out: &Path) {
    let lines: Vec<String> = read_dataset(dataset)
        .unwrap()
        .iter()
        .map(|r| {
            let answer = format_answer(r.ground_truth.iter().map(|&a| a as i64));
            serde_json::json!({
                "task_id": r.task_id,
                "response_text": format!("<think>ok</think><answer>{answer}</answer>"),
            })
            .to_string()
        })
        .collect();
    fs::write(out, lines.join("\n") + "\n").unwrap();
}

#[test]
fn gen_image_twice_is_identical_and_matches_library() {
    let input = corpus();
    let work = tempfile::tempdir().unwrap();
    let (a, b, lib) = (work.path().join("a"), work.path().join("b"), work.path().join("lib"));
    for out in [&a, &b] {
        let o = jigsaw(&["gen-image", "--input", p(input.path()), "--out", p(out), "--seed", "7", "--jobs", "3"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let manifest = |d: &PathBuf| fs::read(shard_path(d, 0)).unwrap();
    assert_eq!(manifest(&a), manifest(&b));

    let opts = RunOptions { global_seed: 7, jobs: 1, ..Default::default() };
    generate_images(input.path(), &lib, &ImageGridConfig::default(), &opts).unwrap();
    assert_eq!(manifest(&a), manifest(&lib));
    assert_eq!(read_dataset(&a).unwrap().len(), 6);
}

#[test]
fn score_all_exact_means_one_point_two() {
    let input = corpus();
    let work = tempfile::tempdir().unwrap();
    let ds = work.path().join("ds");
    assert!(jigsaw(&["gen-image", "--input", p(input.path()), "--out", p(&ds), "--grid", "2x3"]).status.success());
    let responses = work.path().join("r.jsonl");
    exact_responses(&ds, &responses);
    let out = work.path().join("scores.jsonl");
    let summary = work.path().join("summary.json");
    let o = jigsaw(&[
        "score", "--manifest", p(&ds), "--responses", p(&responses), "--out", p(&out), "--summary", p(&summary),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg: serde_json::Value = serde_json::from_slice(&fs::read(&summary).unwrap()).unwrap();
    assert_eq!(agg["mean_total"], 1.2);
    assert_eq!(agg["count"], 6);
    assert_eq!(agg["exact_rate"], 1.0);
    let stdout: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stdout, agg);
    for line in fs::read_to_string(&out).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["task_id", "format_reward", "accuracy_reward", "total", "validity"]);
        assert_eq!(v["validity"], "exact");
    }

    // breakdowns on stdout when --out is omitted
    let o = jigsaw(&["score", "--manifest", p(&ds), "--responses", p(&responses), "--gamma", "0.5"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 6);
}

#[test]
fn verify_flags_corrupted_tile() {
    let input = corpus();
    let work = tempfile::tempdir().unwrap();
    let ds = work.path().join("ds");
    assert!(jigsaw(&["gen-image", "--input", p(input.path()), "--out", p(&ds)]).status.success());
    let o = jigsaw(&["verify", p(&ds), "--render", "--input", p(input.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));

    let victim = read_dataset(&ds).unwrap().remove(2);
    let tile = ds.join(&victim.media[0]);
    let mut bytes = fs::read(&tile).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0xff;
    fs::write(&tile, bytes).unwrap();
    let o = jigsaw(&["verify", p(&ds)]);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains(&format!("FAIL {}", victim.task_id)), "{stdout}");
    assert_eq!(stdout.matches("FAIL").count(), 1);
}

#[test]
fn stats_reports_filtered_sources() {
    let input = corpus();
    let work = tempfile::tempdir().unwrap();
    let ds = work.path().join("ds");
    assert!(jigsaw(&["gen-image", "--input", p(input.path()), "--out", p(&ds)]).status.success());
    let o = jigsaw(&["stats", p(&ds)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["total"], 6);
    assert_eq!(v["filtered"]["too_small"], 1);
    assert_eq!(v["k_histogram"]["9"], 6);
}

#[test]
fn config_errors_exit_two_and_name_the_field() {
    let input = corpus();
    let work = tempfile::tempdir().unwrap();
    let ds = work.path().join("ds");
    let cfg = work.path().join("bad.toml");
    fs::write(&cfg, "[video]\ntrim_frac = 0.7\n").unwrap();
    let o = jigsaw(&["gen-video", "--input", p(input.path()), "--out", p(&ds), "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("video.trim_frac"));

    let o = jigsaw(&["gen-image", "--input", p(input.path()), "--out", p(&ds), "--grid", "1x1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = jigsaw(&["gen-image", "--input", p(input.path()), "--out", p(&ds), "--grid", "three"]);
    assert_eq!(o.status.code(), Some(2));
    let o = jigsaw(&["score", "--manifest", "m", "--responses", "r", "--gamma", "1.0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
    let o = jigsaw(&["gen-image", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!ds.exists());
}

#[test]
fn config_file_sets_grid_and_flags_win() {
    let input = corpus();
    let work = tempfile::tempdir().unwrap();
    let cfg = work.path().join("c.toml");
    fs::write(&cfg, "[image]\nrows = 2\ncols = 2\n[run]\nseed = 3\n").unwrap();
    let a = work.path().join("a");
    assert!(jigsaw(&["gen-image", "--input", p(input.path()), "--out", p(&a), "--config", p(&cfg)]).status.success());
    assert!(read_dataset(&a).unwrap().iter().all(|r| r.k == 4 && r.seed != 0));
    let b = work.path().join("b");
    assert!(jigsaw(&["gen-image", "--input", p(input.path()), "--out", p(&b), "--config", p(&cfg), "--grid", "3x2"])
        .status
        .success());
    assert!(read_dataset(&b).unwrap().iter().all(|r| r.k == 6));
}

#[test]
fn missing_input_is_a_config_error() {
    let work = tempfile::tempdir().unwrap();
    let o = jigsaw(&["gen-3d", "--input", p(&work.path().join("nope")), "--out", p(&work.path().join("ds"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_task_in_responses_is_runtime_error() {
    let input = corpus();
    let work = tempfile::tempdir().unwrap();
    let ds = work.path().join("ds");
    assert!(jigsaw(&["gen-image", "--input", p(input.path()), "--out", p(&ds)]).status.success());
    let r = work.path().join("r.jsonl");
    fs::write(&r, "{\"task_id\":\"feedfacefeedface\",\"response_text\":\"x\"}\n").unwrap();
    let o = jigsaw(&["score", "--manifest", p(&ds), "--responses", p(&r)]);
    assert_eq!(o.status.code(), Some(1));
}
