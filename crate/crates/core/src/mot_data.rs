//! MOTChallenge text formats and box geometry.
//!
//! Three file kinds are handled:
//!
//! - detection files, `frame,-1,x,y,w,h,conf[,...]`
//! - ground-truth and tracker result files, `frame,id,x,y,w,h,flag_or_conf,class,visibility`
//! - `seqinfo.ini`, an INI body with a `[Sequence]` section
//!
//! Coordinates are continuous pixels with `(x, y)` the top-left corner. Frame
//! indices are 1-based everywhere.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum MotError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(
        "duplicate (frame, id) = ({frame}, {track_id}) on lines {first_line} and {second_line}"
    )]
    DuplicateKey {
        frame: u32,
        track_id: u32,
        first_line: usize,
        second_line: usize,
    },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("invalid value for `{key}`: {value:?}")]
    InvalidValue { key: String, value: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<MotError>,
    },
    #[error(transparent)]
    Stream(#[from] io::Error),
}

impl MotError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        MotError::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        MotError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Axis-aligned box, top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    /// Finite fields and strictly positive size.
    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Overlap rectangle, or `None` when the boxes share no positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }
}

/// Intersection over union of two rectangles; 0 when they are disjoint.
///
/// Widths are taken from the corner differences so that `iou(b, b)` is exactly 1
/// and the result is exactly symmetric.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ar, ab) = (a.right(), a.bottom());
    let (br, bb) = (b.right(), b.bottom());
    let iw = ar.min(br) - a.x.max(b.x);
    let ih = ab.min(bb) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let area_a = (ar - a.x) * (ab - a.y);
    let area_b = (br - b.x) * (bb - b.y);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// One detector output box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: u32,
    pub bbox: BBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(frame: u32, bbox: BBox, confidence: f64) -> Self {
        Self {
            frame,
            bbox,
            confidence,
        }
    }

    pub fn validate(&self) -> Result<(), MotError> {
        if self.frame < 1 {
            return Err(MotError::Invariant("detection frame must be >= 1".into()));
        }
        if !self.bbox.is_valid() {
            return Err(MotError::Invariant(format!(
                "detection box {:?} must be finite with positive size",
                self.bbox
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(MotError::Invariant(format!(
                "detection confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// An identity-bearing record: ground truth, tracker output or pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub frame: u32,
    pub track_id: u32,
    pub bbox: BBox,
    pub confidence: f64,
    pub class_id: i32,
    pub visibility: f64,
}

impl TrackRecord {
    pub fn validate(&self) -> Result<(), MotError> {
        if self.frame < 1 || self.track_id < 1 {
            return Err(MotError::Invariant(format!(
                "record frame {} / id {} must both be >= 1",
                self.frame, self.track_id
            )));
        }
        if !self.bbox.is_valid() {
            return Err(MotError::Invariant(format!(
                "record box {:?} must be finite with positive size",
                self.bbox
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) || !(0.0..=1.0).contains(&self.visibility) {
            return Err(MotError::Invariant(format!(
                "record confidence {} / visibility {} outside [0, 1]",
                self.confidence, self.visibility
            )));
        }
        Ok(())
    }
}

/// Contents of `seqinfo.ini`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub name: String,
    pub frame_count: u32,
    pub width: u32,
    pub height: u32,
    pub frame_rate: f64,
    pub image_dir: String,
    pub image_ext: String,
}

impl SequenceInfo {
    /// Relative path of a frame image, e.g. `img1/000042.jpg`.
    pub fn frame_image(&self, frame: u32) -> PathBuf {
        Path::new(&self.image_dir).join(format!("{frame:06}{}", self.image_ext))
    }
}

/// Parsed detection file plus the per-file data-quality counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionFile {
    pub detections: Vec<Detection>,
    /// Records dropped for a non-positive width or height.
    pub rejected: usize,
    /// Records whose confidence was clamped into [0, 1].
    pub clamped: usize,
}

impl DetectionFile {
    /// Detections keyed by frame; file order is kept within a frame.
    pub fn by_frame(&self) -> BTreeMap<u32, Vec<Detection>> {
        let mut frames: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
        for det in &self.detections {
            frames.entry(det.frame).or_default().push(*det);
        }
        frames
    }

    pub fn frame(&self, frame: u32) -> Vec<Detection> {
        self.detections
            .iter()
            .filter(|d| d.frame == frame)
            .copied()
            .collect()
    }

    pub fn max_frame(&self) -> u32 {
        self.detections.iter().map(|d| d.frame).max().unwrap_or(0)
    }
}

/// MOT17 evaluates pedestrians only.
pub fn default_keep_classes() -> BTreeSet<i32> {
    BTreeSet::from([1])
}

fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = (usize, io::Result<String>)> {
    reader
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line))
        .filter(|(_, line)| match line {
            Ok(l) => {
                let t = l.trim();
                !t.is_empty() && !t.starts_with('#')
            }
            Err(_) => true,
        })
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn parse_real(field: &str, line: usize, name: &str) -> Result<f64, MotError> {
    let v: f64 = field
        .parse()
        .map_err(|_| MotError::parse(line, format!("{name}: not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(MotError::parse(line, format!("{name}: not finite: {field:?}")));
    }
    Ok(v)
}

/// Integer field; tolerates an integral float such as `3.0`.
fn parse_int(field: &str, line: usize, name: &str) -> Result<i64, MotError> {
    if let Ok(v) = field.parse::<i64>() {
        return Ok(v);
    }
    let v = parse_real(field, line, name)?;
    if v.fract() != 0.0 || v.abs() > i64::MAX as f64 {
        return Err(MotError::parse(line, format!("{name}: not an integer: {field:?}")));
    }
    Ok(v as i64)
}

fn parse_positive_u32(field: &str, line: usize, name: &str) -> Result<u32, MotError> {
    let v = parse_int(field, line, name)?;
    if v < 1 || v > u32::MAX as i64 {
        return Err(MotError::parse(line, format!("{name} must be >= 1, got {v}")));
    }
    Ok(v as u32)
}

fn parse_box(fields: &[&str], line: usize) -> Result<BBox, MotError> {
    Ok(BBox::new(
        parse_real(fields[2], line, "x")?,
        parse_real(fields[3], line, "y")?,
        parse_real(fields[4], line, "w")?,
        parse_real(fields[5], line, "h")?,
    ))
}

fn clamp_unit(v: f64, counter: &mut usize) -> f64 {
    if (0.0..=1.0).contains(&v) {
        v
    } else {
        *counter += 1;
        v.clamp(0.0, 1.0)
    }
}

/// Parse a detection file body.
pub fn parse_detections<R: BufRead>(reader: R) -> Result<DetectionFile, MotError> {
    let mut out = DetectionFile::default();
    for (line_no, line) in data_lines(reader) {
        let line = line?;
        let fields = split_fields(&line);
        if fields.len() < 7 {
            return Err(MotError::parse(
                line_no,
                format!("expected at least 7 fields, found {}", fields.len()),
            ));
        }
        let frame = parse_positive_u32(fields[0], line_no, "frame")?;
        let bbox = parse_box(&fields, line_no)?;
        let conf = parse_real(fields[6], line_no, "confidence")?;
        if bbox.w <= 0.0 || bbox.h <= 0.0 {
            out.rejected += 1;
            continue;
        }
        let confidence = clamp_unit(conf, &mut out.clamped);
        out.detections.push(Detection::new(frame, bbox, confidence));
    }
    if out.clamped > 0 {
        log::warn!("{} detection confidences clamped into [0, 1]", out.clamped);
    }
    if out.rejected > 0 {
        log::warn!("{} detections rejected for non-positive size", out.rejected);
    }
    Ok(out)
}

struct UniqueKeys(HashMap<(u32, u32), usize>);

impl UniqueKeys {
    fn new() -> Self {
        Self(HashMap::new())
    }

    fn insert(&mut self, frame: u32, track_id: u32, line: usize) -> Result<(), MotError> {
        if let Some(&first_line) = self.0.get(&(frame, track_id)) {
            return Err(MotError::DuplicateKey {
                frame,
                track_id,
                first_line,
                second_line: line,
            });
        }
        self.0.insert((frame, track_id), line);
        Ok(())
    }
}

/// Parse a ground-truth body, keeping `keep_classes` and non-zero flags.
pub fn parse_ground_truth<R: BufRead>(
    reader: R,
    keep_classes: &BTreeSet<i32>,
) -> Result<Vec<TrackRecord>, MotError> {
    let mut out = Vec::new();
    let mut keys = UniqueKeys::new();
    let mut clamped = 0usize;
    for (line_no, line) in data_lines(reader) {
        let line = line?;
        let fields = split_fields(&line);
        if fields.len() < 9 {
            return Err(MotError::parse(
                line_no,
                format!("expected at least 9 fields, found {}", fields.len()),
            ));
        }
        let frame = parse_positive_u32(fields[0], line_no, "frame")?;
        let track_id = parse_positive_u32(fields[1], line_no, "id")?;
        let bbox = parse_box(&fields, line_no)?;
        let flag = parse_real(fields[6], line_no, "flag")?;
        let class_id = parse_int(fields[7], line_no, "class")?;
        let visibility = parse_real(fields[8], line_no, "visibility")?;
        if flag == 0.0 || !keep_classes.contains(&(class_id as i32)) {
            continue;
        }
        if !bbox.is_valid() {
            log::warn!("line {line_no}: ground-truth box with non-positive size skipped");
            continue;
        }
        keys.insert(frame, track_id, line_no)?;
        out.push(TrackRecord {
            frame,
            track_id,
            bbox,
            confidence: clamp_unit(flag, &mut clamped),
            class_id: class_id as i32,
            visibility: clamp_unit(visibility, &mut clamped),
        });
    }
    Ok(out)
}

/// Parse a tracker result (or pseudo-label) body.
///
/// At least 7 fields are required. Field 8 is read as the class (default -1)
/// and field 9 as visibility when it lies in [0, 1] (default 1); MOTChallenge
/// result files put `-1` placeholders there.
pub fn parse_results<R: BufRead>(reader: R) -> Result<Vec<TrackRecord>, MotError> {
    let mut out = Vec::new();
    let mut keys = UniqueKeys::new();
    let mut clamped = 0usize;
    for (line_no, line) in data_lines(reader) {
        let line = line?;
        let fields = split_fields(&line);
        if fields.len() < 7 {
            return Err(MotError::parse(
                line_no,
                format!("expected at least 7 fields, found {}", fields.len()),
            ));
        }
        let frame = parse_positive_u32(fields[0], line_no, "frame")?;
        let track_id = parse_positive_u32(fields[1], line_no, "id")?;
        let bbox = parse_box(&fields, line_no)?;
        if !bbox.is_valid() {
            log::warn!("line {line_no}: result box with non-positive size skipped");
            continue;
        }
        let conf = parse_real(fields[6], line_no, "confidence")?;
        let class_id = match fields.get(7) {
            Some(f) => parse_int(f, line_no, "class")? as i32,
            None => -1,
        };
        let visibility = match fields.get(8) {
            Some(f) => {
                let v = parse_real(f, line_no, "visibility")?;
                if (0.0..=1.0).contains(&v) {
                    v
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        keys.insert(frame, track_id, line_no)?;
        out.push(TrackRecord {
            frame,
            track_id,
            bbox,
            confidence: clamp_unit(conf, &mut clamped),
            class_id,
            visibility,
        });
    }
    Ok(out)
}

/// Write records as `frame,id,x,y,w,h,conf,class,visibility` lines sorted by
/// `(frame, track_id)`. Returns the number of bytes written.
///
/// Reals use the shortest representation that parses back to the same `f64`,
/// so a write/parse cycle is exact.
pub fn write_annotations<W: Write>(records: &[TrackRecord], mut writer: W) -> io::Result<usize> {
    let mut sorted: Vec<&TrackRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.track_id));
    let mut written = 0;
    for r in sorted {
        debug_assert!(r.validate().is_ok(), "invalid record {r:?}");
        let line = format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.frame,
            r.track_id,
            r.bbox.x,
            r.bbox.y,
            r.bbox.w,
            r.bbox.h,
            r.confidence,
            r.class_id,
            r.visibility
        );
        writer.write_all(line.as_bytes())?;
        written += line.len();
    }
    writer.flush()?;
    Ok(written)
}

/// Write records to `path`, creating parent directories.
pub fn write_annotations_file(path: &Path, records: &[TrackRecord]) -> Result<usize, MotError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| MotError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| MotError::io(path, e))?;
    write_annotations(records, BufWriter::new(file)).map_err(|e| MotError::io(path, e))
}

const SEQINFO_KEYS: [&str; 7] = [
    "name",
    "seqLength",
    "imWidth",
    "imHeight",
    "frameRate",
    "imDir",
    "imExt",
];

/// Parse a `seqinfo.ini` body. Keys outside `[Sequence]` and unknown keys are ignored.
pub fn parse_seqinfo<R: BufRead>(reader: R) -> Result<SequenceInfo, MotError> {
    let mut values: HashMap<String, String> = HashMap::new();
    let mut in_sequence = false;
    for line in reader.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with(';') || t.starts_with('#') {
            continue;
        }
        if t.starts_with('[') && t.ends_with(']') {
            in_sequence = t[1..t.len() - 1].trim().eq_ignore_ascii_case("sequence");
            continue;
        }
        if !in_sequence {
            continue;
        }
        if let Some((k, v)) = t.split_once('=') {
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |key: &str| -> Result<&str, MotError> {
        values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| MotError::MissingKey(key.to_string()))
    };
    for key in SEQINFO_KEYS {
        get(key)?;
    }
    let uint = |key: &str| -> Result<u32, MotError> {
        let raw = get(key)?;
        raw.parse::<u32>().map_err(|_| MotError::InvalidValue {
            key: key.to_string(),
            value: raw.to_string(),
        })
    };
    let info = SequenceInfo {
        name: get("name")?.to_string(),
        frame_count: uint("seqLength")?,
        width: uint("imWidth")?,
        height: uint("imHeight")?,
        frame_rate: {
            let raw = get("frameRate")?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| MotError::InvalidValue {
                    key: "frameRate".into(),
                    value: raw.to_string(),
                })?
        },
        image_dir: get("imDir")?.to_string(),
        image_ext: get("imExt")?.to_string(),
    };
    if info.frame_count < 1 {
        return Err(MotError::Invariant("seqLength must be >= 1".into()));
    }
    if info.width < 1 || info.height < 1 {
        return Err(MotError::Invariant("imWidth and imHeight must be >= 1".into()));
    }
    Ok(info)
}

fn open(path: &Path) -> Result<BufReader<File>, MotError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| MotError::io(path, e))
}

fn with_path<T>(path: &Path, r: Result<T, MotError>) -> Result<T, MotError> {
    r.map_err(|e| match e {
        MotError::Stream(source) => MotError::io(path, source),
        e @ (MotError::Io { .. } | MotError::File { .. }) => e,
        other => MotError::File {
            path: path.to_path_buf(),
            source: Box::new(other),
        },
    })
}

pub fn read_detections_file(path: &Path) -> Result<DetectionFile, MotError> {
    with_path(path, parse_detections(open(path)?))
}

pub fn read_ground_truth_file(
    path: &Path,
    keep_classes: &BTreeSet<i32>,
) -> Result<Vec<TrackRecord>, MotError> {
    with_path(path, parse_ground_truth(open(path)?, keep_classes))
}

pub fn read_results_file(path: &Path) -> Result<Vec<TrackRecord>, MotError> {
    with_path(path, parse_results(open(path)?))
}

pub fn read_seqinfo_file(path: &Path) -> Result<SequenceInfo, MotError> {
    with_path(path, parse_seqinfo(open(path)?))
}

/// Subdirectories of `root` that carry a `seqinfo.ini`, sorted by name.
pub fn sequence_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>, MotError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| MotError::io(root, e))? {
        let entry = entry.map_err(|e| MotError::io(root, e))?;
        let path = entry.path();
        if path.is_dir() && path.join("seqinfo.ini").is_file() {
            out.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    Ok(out)
}

/// `*.txt` files directly under `root`, keyed by file stem, sorted.
pub fn flat_text_files(root: &Path) -> Result<Vec<(String, PathBuf)>, MotError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| MotError::io(root, e))? {
        let path = entry.map_err(|e| MotError::io(root, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem() {
                out.push((stem.to_string_lossy().into_owned(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_detection() {
        let f = parse_detections("1,-1,10,20,30,40,0.9,-1,-1,-1\n".as_bytes()).unwrap();
        assert_eq!(
            f.detections,
            vec![Detection::new(1, BBox::new(10.0, 20.0, 30.0, 40.0), 0.9)]
        );
        assert_eq!((f.rejected, f.clamped), (0, 0));
    }

    #[test]
    fn empty_stream_is_empty() {
        let f = parse_detections("".as_bytes()).unwrap();
        assert!(f.detections.is_empty());
    }

    #[test]
    fn zero_width_detection_rejected() {
        let f = parse_detections("1,-1,10,20,0,40,0.9,-1,-1,-1\n".as_bytes()).unwrap();
        assert!(f.detections.is_empty());
        assert_eq!(f.rejected, 1);
    }

    #[test]
    fn unnormalized_confidence_clamped() {
        let body = "1,-1,0,0,5,5,37.5\n2,-1,0,0,5,5,-3\n";
        let f = parse_detections(body.as_bytes()).unwrap();
        assert_eq!(f.clamped, 2);
        assert_eq!(f.detections[0].confidence, 1.0);
        assert_eq!(f.detections[1].confidence, 0.0);
    }

    #[test]
    fn malformed_detection_reports_line() {
        let body = "1,-1,0,0,5,5,0.5\n\n2,-1,abc,0,5,5,0.5\n";
        match parse_detections(body.as_bytes()) {
            Err(MotError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse_detections("1,-1,0,0,5,5\n".as_bytes()) {
            Err(MotError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn detections_grouped_by_frame_in_file_order() {
        let body = "2,-1,0,0,5,5,0.1\n1,-1,1,0,5,5,0.2\n2,-1,2,0,5,5,0.3\n";
        let f = parse_detections(body.as_bytes()).unwrap();
        let frames = f.by_frame();
        assert_eq!(frames[&1].len(), 1);
        let xs: Vec<f64> = frames[&2].iter().map(|d| d.bbox.x).collect();
        assert_eq!(xs, vec![0.0, 2.0]);
    }

    #[test]
    fn ground_truth_filtering() {
        let keep = default_keep_classes();
        let gt = parse_ground_truth("1,2,10,20,30,40,1,1,1.0\n".as_bytes(), &keep).unwrap();
        assert_eq!(gt.len(), 1);
        assert_eq!((gt[0].frame, gt[0].track_id), (1, 2));

        let gt = parse_ground_truth("1,2,10,20,30,40,0,1,1.0\n".as_bytes(), &keep).unwrap();
        assert!(gt.is_empty());

        let gt = parse_ground_truth("1,2,10,20,30,40,1,7,1.0\n".as_bytes(), &keep).unwrap();
        assert!(gt.is_empty());
    }

    #[test]
    fn ground_truth_duplicate_key() {
        let body = "1,2,10,20,30,40,1,1,1.0\n1,2,11,20,30,40,1,1,0.5\n";
        match parse_ground_truth(body.as_bytes(), &default_keep_classes()) {
            Err(MotError::DuplicateKey {
                frame,
                track_id,
                first_line,
                second_line,
            }) => assert_eq!((frame, track_id, first_line, second_line), (1, 2, 1, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ground_truth_short_line() {
        let r = parse_ground_truth("1,2,10,20,30,40,1,1\n".as_bytes(), &default_keep_classes());
        assert!(matches!(r, Err(MotError::Parse { line: 1, .. })));
    }

    fn record(frame: u32, id: u32) -> TrackRecord {
        TrackRecord {
            frame,
            track_id: id,
            bbox: BBox::new(1.25, 2.5, 10.0, 20.75),
            confidence: 0.85,
            class_id: 1,
            visibility: 0.33,
        }
    }

    #[test]
    fn write_sorts_by_frame_then_id() {
        let mut buf = Vec::new();
        write_annotations(&[record(2, 1), record(1, 5), record(1, 3)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let keys: Vec<&str> = text.lines().map(|l| &l[..3]).collect();
        assert_eq!(keys, vec!["1,3", "1,5", "2,1"]);
    }

    #[test]
    fn write_empty_is_zero_bytes() {
        let mut buf = Vec::new();
        assert_eq!(write_annotations(&[], &mut buf).unwrap(), 0);
        assert!(buf.is_empty());
    }

    #[test]
    fn write_reports_byte_count() {
        let mut buf = Vec::new();
        let n = write_annotations(&[record(1, 1)], &mut buf).unwrap();
        assert_eq!(n, buf.len());
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "1,1,1.25,2.5,10,20.75,0.85,1,0.33\n"
        );
    }

    #[test]
    fn write_file_error_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("blocker");
        fs::write(&blocker, b"x").unwrap();
        let err = write_annotations_file(&blocker.join("out.txt"), &[record(1, 1)]).unwrap_err();
        assert!(err.to_string().contains("blocker"), "{err}");
    }

    const SEQINFO: &str = "[Sequence]\nname=MOT17-02-FRCNN\nimDir=img1\nframeRate=30\nseqLength=600\nimWidth=1920\nimHeight=1080\nimExt=.jpg\n";

    #[test]
    fn parses_standard_seqinfo() {
        let info = parse_seqinfo(SEQINFO.as_bytes()).unwrap();
        assert_eq!(info.frame_count, 600);
        assert_eq!((info.width, info.height), (1920, 1080));
        assert_eq!(info.name, "MOT17-02-FRCNN");
        assert_eq!(info.frame_image(7), PathBuf::from("img1/000007.jpg"));
    }

    #[test]
    fn file_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.txt");
        fs::write(&path, "1,-1,0,0,5,5,0.5\n2,-1,x,0,5,5,0.5\n").unwrap();
        let err = read_detections_file(&path).unwrap_err();
        assert!(matches!(&err, MotError::File { source, .. } if matches!(**source, MotError::Parse { line: 2, .. })));
        assert!(err.to_string().starts_with(&path.display().to_string()), "{err}");
    }

    #[test]
    fn seqinfo_missing_key_is_named() {
        let body = SEQINFO.replace("imWidth=1920\n", "");
        let err = parse_seqinfo(body.as_bytes()).unwrap_err();
        assert!(matches!(&err, MotError::MissingKey(k) if k == "imWidth"));
        assert!(err.to_string().contains("imWidth"));
    }

    #[test]
    fn seqinfo_zero_length_rejected() {
        let body = SEQINFO.replace("seqLength=600", "seqLength=0");
        assert!(matches!(
            parse_seqinfo(body.as_bytes()),
            Err(MotError::Invariant(_))
        ));
        let body = SEQINFO.replace("seqLength=600", "seqLength=abc");
        assert!(matches!(
            parse_seqinfo(body.as_bytes()),
            Err(MotError::InvalidValue { key, .. }) if key == "seqLength"
        ));
    }

    #[test]
    fn seqinfo_ignores_unknown_keys_and_other_sections() {
        let body = format!("[Other]\nseqLength=1\n{SEQINFO}extra=1\n");
        assert_eq!(parse_seqinfo(body.as_bytes()).unwrap().frame_count, 600);
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 5.0, 5.0)), 0.0);
        let b = BBox::new(5.0, 5.0, 10.0, 10.0);
        assert!((iou(&a, &b) - 25.0 / 175.0).abs() < 1e-15);
        // touching edges share no area
        assert_eq!(iou(&a, &BBox::new(10.0, 0.0, 10.0, 10.0)), 0.0);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-500.0..500.0f64, -500.0..500.0f64, 0.5..300.0f64, 0.5..300.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    fn arb_record() -> impl Strategy<Value = TrackRecord> {
        (
            1u32..50,
            1u32..50,
            (-1000i32..1000, -1000i32..1000, 1i32..500, 1i32..500),
            0u32..=100,
            -1i32..12,
            0u32..=100,
        )
            .prop_map(|(frame, track_id, (x, y, w, h), c, class_id, v)| TrackRecord {
                frame,
                track_id,
                bbox: BBox::new(
                    x as f64 / 100.0,
                    y as f64 / 100.0,
                    w as f64 / 100.0,
                    h as f64 / 100.0,
                ),
                confidence: c as f64 / 100.0,
                class_id,
                visibility: v as f64 / 100.0,
            })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn iou_translation_and_scale_invariant(
            a in arb_box(), b in arb_box(),
            dx in -1000.0..1000.0f64, dy in -1000.0..1000.0f64, s in 0.1..10.0f64,
        ) {
            let base = iou(&a, &b);
            let moved = iou(&a.translate(dx, dy), &b.translate(dx, dy));
            let scale = |r: &BBox| BBox::new(r.x * s, r.y * s, r.w * s, r.h * s);
            let scaled = iou(&scale(&a), &scale(&b));
            // translation perturbs corner arithmetic by a few ulps of the offset
            prop_assert!((base - moved).abs() <= 1e-9, "{} vs {}", base, moved);
            prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1e-300) || (base - scaled).abs() < 1e-12);
        }

        #[test]
        fn write_parse_round_trip(records in proptest::collection::vec(arb_record(), 0..40)) {
            let mut uniq = BTreeMap::new();
            for r in records {
                uniq.insert((r.frame, r.track_id), r);
            }
            let records: Vec<TrackRecord> = uniq.into_values().collect();
            let mut buf = Vec::new();
            write_annotations(&records, &mut buf).unwrap();
            let back = parse_results(buf.as_slice()).unwrap();
            prop_assert_eq!(back, records);
        }

        #[test]
        fn parsed_detections_satisfy_invariants(
            rows in proptest::collection::vec(
                (1u32..20, -100.0..100.0f64, -100.0..100.0f64, -5.0..50.0f64, -5.0..50.0f64, -2.0..3.0f64),
                0..50,
            )
        ) {
            let body: String = rows
                .iter()
                .map(|(f, x, y, w, h, c)| format!("{f},-1,{x},{y},{w},{h},{c},-1,-1,-1\n"))
                .collect();
            let parsed = parse_detections(body.as_bytes()).unwrap();
            prop_assert_eq!(parsed.detections.len() + parsed.rejected, rows.len());
            for d in &parsed.detections {
                prop_assert!(d.validate().is_ok());
            }
        }
    }
}
