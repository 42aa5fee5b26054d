//! Oracles and fixtures shared by the integration and acceptance tests.
//!
//! Every oracle here is written independently of the library code it checks:
//! exhaustive enumeration instead of the Hungarian solver, hand-rolled text
//! parsing instead of the MOT readers.
#![allow(dead_code)]

use adaptrack::mosaic::MosaicConfig;
use adaptrack::pipeline::{PipelineConfig, SoupStageConfig};
use adaptrack::pseudo_label::PseudoLabelConfig;
use adaptrack::soup::TensorArchive;
use adaptrack::{BBox, TrackRecord};
use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// Minimum total cost over all assignments of size `min(rows, cols)`.
pub fn brute_force_min_cost(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect();
        return brute_force_min_cost(&t);
    }
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cols], 0.0, &mut best);
    best
}

/// Best summed weight over all partial matchings using only allowed pairs.
pub fn brute_force_max_weight(weights: &[Vec<Option<f64>>]) -> f64 {
    fn go(w: &[Vec<Option<f64>>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        let mut best = go(w, row + 1, used);
        for j in 0..used.len() {
            if let (false, Some(v)) = (used[j], w[row][j]) {
                used[j] = true;
                best = best.max(v + go(w, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    let cols = weights.first().map_or(0, |r| r.len());
    go(weights, 0, &mut vec![false; cols])
}

/// Plain IoU written out from corner coordinates.
pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.w * a.h + b.w * b.h - inter)
}

pub fn record(frame: u32, id: u32, bbox: BBox) -> TrackRecord {
    TrackRecord {
        frame,
        track_id: id,
        bbox,
        confidence: 1.0,
        class_id: 1,
        visibility: 1.0,
    }
}

/// Random well-separated linear tracks, possibly entering late or leaving early.
pub fn synthetic_sequence(rng: &mut ChaCha8Rng, objects: u32, frames: u32) -> Vec<TrackRecord> {
    let mut out = Vec::new();
    for id in 1..=objects {
        let x0 = 10.0 + 120.0 * (id - 1) as f64;
        let y0 = rng.random_range(0.0..200.0);
        let (vx, vy) = (rng.random_range(-0.3..0.3), rng.random_range(-2.0..2.0));
        let (w, h) = (rng.random_range(20.0..60.0), rng.random_range(40.0..120.0));
        let start = rng.random_range(1..=frames.div_ceil(3));
        let end = rng.random_range((2 * frames / 3).max(start)..=frames);
        for f in start..=end {
            let t = (f - start) as f64;
            out.push(record(f, id, BBox::new(x0 + vx * t, y0 + vy * t, w, h)));
        }
    }
    out
}

/// A 9-field MOT line split by hand: `(frame, id, box, conf)`.
pub fn parse_line(line: &str) -> (u32, i64, BBox, f64) {
    let f: Vec<&str> = line.split(',').map(str::trim).collect();
    let n = |i: usize| f[i].parse::<f64>().unwrap();
    (
        f[0].parse().unwrap(),
        f[1].parse::<f64>().unwrap() as i64,
        BBox::new(n(2), n(3), n(4), n(5)),
        n(6),
    )
}

pub fn parse_lines(text: &str) -> Vec<(u32, i64, BBox, f64)> {
    text.lines().filter(|l| !l.trim().is_empty()).map(parse_line).collect()
}

pub fn write_png(path: &Path, w: u32, h: u32, shade: u8) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let img = RgbImage::from_fn(w, h, |x, y| Rgb([shade, (x * 7) as u8, (y * 11) as u8]));
    img.save(path).unwrap();
}

/// A MOT sequence directory with PNG frames and, optionally, ground truth.
pub fn write_sequence(root: &Path, name: &str, frames: u32, w: u32, h: u32, gt: Option<&[TrackRecord]>) -> PathBuf {
    let dir = root.join(name);
    fs::create_dir_all(dir.join("img1")).unwrap();
    fs::write(
        dir.join("seqinfo.ini"),
        format!(
            "[Sequence]\nname={name}\nimDir=img1\nframeRate=30\nseqLength={frames}\nimWidth={w}\nimHeight={h}\nimExt=.png\n"
        ),
    )
    .unwrap();
    for f in 1..=frames {
        write_png(&dir.join("img1").join(format!("{f:06}.png")), w, h, (f * 40) as u8);
    }
    if let Some(gt) = gt {
        let mut text = String::new();
        for r in gt {
            text.push_str(&format!(
                "{},{},{},{},{},{},1,1,1\n",
                r.frame, r.track_id, r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h
            ));
        }
        fs::create_dir_all(dir.join("gt")).unwrap();
        fs::write(dir.join("gt").join("gt.txt"), text).unwrap();
    }
    dir
}

pub fn vector_archive(values: &[f32]) -> TensorArchive {
    let mut a = TensorArchive::new();
    a.insert("w", vec![values.len() as u64], values.to_vec()).unwrap();
    a
}

pub fn write_script(path: &Path, body: &str) {
    fs::write(path, format!("#!/bin/sh\nset -e\n{body}\n")).unwrap();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(path, fs::Permissions::from_mode(0o755)).unwrap();
    }
}

/// Datasets, stub commands and a config for pipeline runs.
pub struct PipelineFixture {
    pub root: PathBuf,
    pub config: PipelineConfig,
    /// Detection text each stub inference call emits, keyed by sequence.
    pub detections: BTreeMap<String, String>,
    /// While this file exists the stub trainer fails in round 2.
    pub fail_marker: PathBuf,
}

/// Fixed detections for a target sequence: confidences straddle 0.7.
fn stub_detections(seq_index: u32) -> String {
    let confs = [0.95, 0.7, 0.69, 0.3, 0.85, 0.71];
    let mut text = String::new();
    for frame in 1..=3u32 {
        for (k, c) in confs.iter().enumerate() {
            let x = 2.0 + 4.5 * k as f64 + frame as f64 * 0.25 + seq_index as f64;
            text.push_str(&format!("{frame},-1,{x},3.5,6,12,{c},-1,-1,-1\n"));
        }
    }
    text
}

pub fn pipeline_fixture(root: &Path, trainer: &str) -> PipelineFixture {
    let source = root.join("source");
    let target = root.join("target");
    let stubs = root.join("stubs");
    fs::create_dir_all(stubs.join("dets")).unwrap();
    let source_gt: Vec<TrackRecord> = (1..=3).map(|f| record(f, 1, BBox::new(4.0, 4.0, 10.0, 14.0))).collect();
    write_sequence(&source, "SRC-01", 3, 40, 30, Some(&source_gt));
    let mut detections = BTreeMap::new();
    for (i, name) in ["TGT-01", "TGT-02"].iter().enumerate() {
        write_sequence(&target, name, 3, 36, 28, None);
        let text = stub_detections(i as u32);
        fs::write(stubs.join("dets").join(format!("{name}.txt")), &text).unwrap();
        detections.insert(name.to_string(), text);
    }
    let g1 = root.join("g1.tarc");
    adaptrack::soup::write_archive_file(&g1, &vector_archive(&[1.0, 2.0, 3.0])).unwrap();
    for round in 1..=3 {
        let c = vector_archive(&[round as f32, -(round as f32), 0.5]);
        adaptrack::soup::write_archive_file(&stubs.join(format!("cand_r{round}.tarc")), &c).unwrap();
    }
    let infer = stubs.join("infer.sh");
    write_script(&infer, &format!("cp \"{}/dets/$(basename \"$2\").txt\" \"$3\"", stubs.display()));
    let fail_marker = root.join("fail_round_2");
    let train = stubs.join("train.sh");
    let body = match trainer {
        "copy" => "cp \"$1\" \"$3/copy.tarc\"".to_string(),
        _ => format!(
            "if [ \"$ADAPTRACK_ROUND\" = 2 ] && [ -f \"{}\" ]; then echo forced failure >&2; exit 7; fi\n\
             cp \"{}/cand_r$ADAPTRACK_ROUND.tarc\" \"$3/\"",
            fail_marker.display(),
            stubs.display()
        ),
    };
    write_script(&train, &body);
    let config = PipelineConfig {
        rounds: 3,
        source_dataset: source,
        target_dataset: target,
        warmup_checkpoint: g1,
        inference_command: infer.display().to_string(),
        trainer_command: train.display().to_string(),
        pseudo: PseudoLabelConfig::default(),
        mosaic: MosaicConfig {
            canvas_w: 32,
            canvas_h: 32,
            ..Default::default()
        },
        mosaic_count: 4,
        mosaic_seed: 7,
        soup: SoupStageConfig::default(),
        include_source_after_first_round: false,
        round_overrides: BTreeMap::new(),
        validation: None,
    };
    PipelineFixture {
        root: root.to_path_buf(),
        config,
        detections,
        fail_marker,
    }
}

/// Pseudo labels the stub detections must produce at `threshold`: the
/// `(frame, box)` rows whose confidence is at least the threshold.
pub fn expected_pseudo_rows(det_text: &str, threshold: f64) -> Vec<(u32, [u64; 4])> {
    let mut rows: Vec<(u32, [u64; 4])> = parse_lines(det_text)
        .into_iter()
        .filter(|(_, _, _, c)| *c >= threshold)
        .map(|(f, _, b, _)| (f, [b.x.to_bits(), b.y.to_bits(), b.w.to_bits(), b.h.to_bits()]))
        .collect();
    rows.sort();
    rows
}

pub fn pseudo_rows(file_text: &str) -> Vec<(u32, [u64; 4])> {
    let mut rows: Vec<(u32, [u64; 4])> = parse_lines(file_text)
        .into_iter()
        .map(|(f, _, b, _)| (f, [b.x.to_bits(), b.y.to_bits(), b.w.to_bits(), b.h.to_bits()]))
        .collect();
    rows.sort();
    rows
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
