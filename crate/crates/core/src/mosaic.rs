//! Cross-domain 2×2 mosaics mixing labeled source images with pseudo-labeled
//! target images.
//!
//! A [`MosaicSpec`] is planned from a seed alone; composition then copies a
//! scaled crop of each chosen image into its canvas quadrant and remaps the
//! boxes with the same affine map, clipping them to the quadrant.

use crate::mot_data::{self, BBox, MotError, TrackRecord};
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MosaicError {
    #[error("{0} pool is empty")]
    EmptyPool(Domain),
    #[error("mix must place exactly 4 tiles, got {source_tiles} source + {target_tiles} target")]
    InvalidMix { source_tiles: u8, target_tiles: u8 },
    #[error("jitter range must satisfy 0 < lo <= hi < 1, got ({lo}, {hi})")]
    InvalidJitter { lo: f64, hi: f64 },
    #[error("canvas must be at least 2x2, got {w}x{h}")]
    InvalidCanvas { w: u32, h: u32 },
    #[error("min_size must be finite and >= 0, got {0}")]
    InvalidMinSize(f64),
    #[error("spec must have 4 tiles, got {0}")]
    TileCount(usize),
    #[error("{domain} sample {index} is out of range for a pool of {len}")]
    SampleIndex { domain: Domain, index: usize, len: usize },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{}: image is {found:?}, spec expects {expected:?}", path.display())]
    DimensionMismatch {
        path: PathBuf,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error(transparent)]
    Mot(#[from] MotError),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MosaicConfig {
    pub canvas_w: u32,
    pub canvas_h: u32,
    /// Tiles drawn from the source and target pools; must sum to 4.
    pub mix: (u8, u8),
    /// Center range as fractions of the canvas size.
    pub jitter: (f64, f64),
    /// Remapped boxes narrower or shorter than this are dropped.
    pub min_size: f64,
    pub interpolation: Interpolation,
}

impl Default for MosaicConfig {
    fn default() -> Self {
        Self {
            canvas_w: 1280,
            canvas_h: 1280,
            mix: (2, 2),
            jitter: (0.25, 0.75),
            min_size: 2.0,
            interpolation: Interpolation::Nearest,
        }
    }
}

impl MosaicConfig {
    pub fn validate(&self) -> Result<(), MosaicError> {
        let (s, t) = self.mix;
        if s as u32 + t as u32 != 4 {
            return Err(MosaicError::InvalidMix {
                source_tiles: s,
                target_tiles: t,
            });
        }
        let (lo, hi) = self.jitter;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(MosaicError::InvalidJitter { lo, hi });
        }
        if self.canvas_w < 2 || self.canvas_h < 2 {
            return Err(MosaicError::InvalidCanvas {
                w: self.canvas_w,
                h: self.canvas_h,
            });
        }
        if !(self.min_size.is_finite() && self.min_size >= 0.0) {
            return Err(MosaicError::InvalidMinSize(self.min_size));
        }
        Ok(())
    }
}

/// Integer pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn to_bbox(&self) -> BBox {
        BBox::new(self.x as f64, self.y as f64, self.w as f64, self.h as f64)
    }

    pub fn contains_point(&self, px: u32, py: u32) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }
}

/// One image annotated with boxes, from either domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub image_ref: PathBuf,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<(BBox, i32)>,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub image_ref: PathBuf,
    pub domain: Domain,
    /// Index of the sample within its domain's pool.
    pub sample_index: usize,
    pub image_w: u32,
    pub image_h: u32,
    pub scale: f64,
    pub scaled_w: u32,
    pub scaled_h: u32,
    pub placement: Rect,
    /// Window of the scaled image copied into `placement`; same size.
    pub crop: Rect,
}

impl Tile {
    /// Translation taking scaled-image coordinates to canvas coordinates.
    pub fn offset(&self) -> (f64, f64) {
        (
            self.placement.x as f64 - self.crop.x as f64,
            self.placement.y as f64 - self.crop.y as f64,
        )
    }
}

/// Tiles are listed top-left, top-right, bottom-left, bottom-right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosaicSpec {
    pub canvas_w: u32,
    pub canvas_h: u32,
    pub center: (u32, u32),
    pub tiles: Vec<Tile>,
    pub seed: u64,
}

impl MosaicSpec {
    pub fn domain_count(&self, domain: Domain) -> usize {
        self.tiles.iter().filter(|t| t.domain == domain).count()
    }
}

/// The four quadrants around `(cx, cy)`, in tile order.
pub fn quadrants(canvas_w: u32, canvas_h: u32, cx: u32, cy: u32) -> [Rect; 4] {
    [
        Rect::new(0, 0, cx, cy),
        Rect::new(cx, 0, canvas_w - cx, cy),
        Rect::new(0, cy, cx, canvas_h - cy),
        Rect::new(cx, cy, canvas_w - cx, canvas_h - cy),
    ]
}

fn jittered(rng: &mut ChaCha8Rng, lo: f64, hi: f64, size: u32) -> u32 {
    let f = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    ((f * size as f64).round() as u32).clamp(1, size - 1)
}

/// Scale, scaled size and crop window so that the image covers `quadrant`,
/// with the image corner nearest the mosaic center pinned to that center.
fn fit_tile(quadrant_index: usize, q: Rect, image_w: u32, image_h: u32) -> (f64, u32, u32, Rect) {
    let scale = (q.w as f64 / image_w as f64).max(q.h as f64 / image_h as f64);
    let sw = ((image_w as f64 * scale).ceil() as u32).max(q.w);
    let sh = ((image_h as f64 * scale).ceil() as u32).max(q.h);
    let (cx, cy) = match quadrant_index {
        0 => (sw - q.w, sh - q.h),
        1 => (0, sh - q.h),
        2 => (sw - q.w, 0),
        _ => (0, 0),
    };
    (scale, sw, sh, Rect::new(cx, cy, q.w, q.h))
}

/// Plan one mosaic. Deterministic in `(pools, config, seed)`.
pub fn plan_mosaic(
    source_pool: &[LabeledSample],
    target_pool: &[LabeledSample],
    config: &MosaicConfig,
    seed: u64,
) -> Result<MosaicSpec, MosaicError> {
    config.validate()?;
    let (n_source, n_target) = config.mix;
    if n_source > 0 && source_pool.is_empty() {
        return Err(MosaicError::EmptyPool(Domain::Source));
    }
    if n_target > 0 && target_pool.is_empty() {
        return Err(MosaicError::EmptyPool(Domain::Target));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (config.canvas_w, config.canvas_h);
    let cx = jittered(&mut rng, config.jitter.0, config.jitter.1, w);
    let cy = jittered(&mut rng, config.jitter.0, config.jitter.1, h);

    let mut domains: Vec<Domain> = std::iter::repeat_n(Domain::Source, n_source as usize)
        .chain(std::iter::repeat_n(Domain::Target, n_target as usize))
        .collect();
    domains.shuffle(&mut rng);

    let tiles = quadrants(w, h, cx, cy)
        .into_iter()
        .zip(domains)
        .enumerate()
        .map(|(qi, (q, domain))| {
            let pool = match domain {
                Domain::Source => source_pool,
                Domain::Target => target_pool,
            };
            let sample_index = rng.random_range(0..pool.len());
            let sample = &pool[sample_index];
            let (scale, scaled_w, scaled_h, crop) = fit_tile(qi, q, sample.width, sample.height);
            Tile {
                image_ref: sample.image_ref.clone(),
                domain,
                sample_index,
                image_w: sample.width,
                image_h: sample.height,
                scale,
                scaled_w,
                scaled_h,
                placement: q,
                crop,
            }
        })
        .collect();
    Ok(MosaicSpec {
        canvas_w: w,
        canvas_h: h,
        center: (cx, cy),
        tiles,
        seed,
    })
}

/// Scale `b`, shift it by `offset`, and clip it to `clip`. Returns `None`
/// when the clipped box is narrower or shorter than `min_size` or empty.
pub fn remap_bbox(b: &BBox, scale: f64, offset: (f64, f64), clip: &BBox, min_size: f64) -> Option<BBox> {
    let moved = BBox::new(b.x * scale + offset.0, b.y * scale + offset.1, b.w * scale, b.h * scale);
    let cut = moved.intersection(clip)?;
    // Keep the right and bottom edges inside the clip after re-adding x / y.
    let (mut w, mut h) = (cut.w, cut.h);
    while cut.x + w > clip.right() {
        w = w.next_down();
    }
    while cut.y + h > clip.bottom() {
        h = h.next_down();
    }
    (w >= min_size && h >= min_size && w > 0.0 && h > 0.0).then(|| BBox::new(cut.x, cut.y, w, h))
}

/// A box on the mosaic canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosaicBox {
    pub bbox: BBox,
    pub class_id: i32,
    pub domain: Domain,
    /// Tile (quadrant) the box came from.
    pub tile: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub image: RgbImage,
    pub boxes: Vec<MosaicBox>,
}

/// Source index for a scaled coordinate under nearest-neighbour sampling.
pub fn nearest_source_index(scaled: u32, scale: f64, len: u32) -> u32 {
    (((scaled as f64 + 0.5) / scale).floor() as u32).min(len - 1)
}

fn sample_pixel(image: &RgbImage, sx: u32, sy: u32, scale: f64, mode: Interpolation) -> Rgb<u8> {
    let (w, h) = image.dimensions();
    match mode {
        Interpolation::Nearest => *image.get_pixel(nearest_source_index(sx, scale, w), nearest_source_index(sy, scale, h)),
        Interpolation::Bilinear => {
            let fx = ((sx as f64 + 0.5) / scale - 0.5).clamp(0.0, (w - 1) as f64);
            let fy = ((sy as f64 + 0.5) / scale - 0.5).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let p = |x, y| image.get_pixel(x, y).0;
            let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
            Rgb(std::array::from_fn(|k| {
                let top = a[k] as f64 * (1.0 - tx) + b[k] as f64 * tx;
                let bottom = c[k] as f64 * (1.0 - tx) + d[k] as f64 * tx;
                (top * (1.0 - ty) + bottom * ty).round().clamp(0.0, 255.0) as u8
            }))
        }
    }
}

/// Build the canvas from four decoded images, one per tile, and their samples.
pub fn compose(
    spec: &MosaicSpec,
    inputs: &[(&LabeledSample, &RgbImage)],
    interpolation: Interpolation,
    min_size: f64,
) -> Result<Composite, MosaicError> {
    if spec.tiles.len() != 4 || inputs.len() != 4 {
        return Err(MosaicError::TileCount(spec.tiles.len().min(inputs.len())));
    }
    let mut canvas = RgbImage::new(spec.canvas_w, spec.canvas_h);
    let mut boxes = Vec::new();
    for (ti, (tile, (sample, image))) in spec.tiles.iter().zip(inputs).enumerate() {
        if image.dimensions() != (tile.image_w, tile.image_h) {
            return Err(MosaicError::DimensionMismatch {
                path: tile.image_ref.clone(),
                expected: (tile.image_w, tile.image_h),
                found: image.dimensions(),
            });
        }
        let p = tile.placement;
        for dy in 0..p.h {
            for dx in 0..p.w {
                let px = sample_pixel(image, tile.crop.x + dx, tile.crop.y + dy, tile.scale, interpolation);
                canvas.put_pixel(p.x + dx, p.y + dy, px);
            }
        }
        let clip = p.to_bbox();
        for (b, class_id) in &sample.boxes {
            if let Some(bbox) = remap_bbox(b, tile.scale, tile.offset(), &clip, min_size) {
                boxes.push(MosaicBox {
                    bbox,
                    class_id: *class_id,
                    domain: tile.domain,
                    tile: ti,
                });
            }
        }
    }
    Ok(Composite { image: canvas, boxes })
}

pub fn load_image(path: &Path) -> Result<RgbImage, MosaicError> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|source| MosaicError::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn sample_for<'a>(
    tile: &Tile,
    source_pool: &'a [LabeledSample],
    target_pool: &'a [LabeledSample],
) -> Result<&'a LabeledSample, MosaicError> {
    let pool = match tile.domain {
        Domain::Source => source_pool,
        Domain::Target => target_pool,
    };
    pool.get(tile.sample_index).ok_or(MosaicError::SampleIndex {
        domain: tile.domain,
        index: tile.sample_index,
        len: pool.len(),
    })
}

/// Decode the four tile images from disk and compose.
pub fn compose_from_pools(
    spec: &MosaicSpec,
    source_pool: &[LabeledSample],
    target_pool: &[LabeledSample],
    config: &MosaicConfig,
) -> Result<Composite, MosaicError> {
    let samples = spec
        .tiles
        .iter()
        .map(|t| sample_for(t, source_pool, target_pool))
        .collect::<Result<Vec<_>, _>>()?;
    let images = samples
        .iter()
        .map(|s| load_image(&s.image_ref))
        .collect::<Result<Vec<_>, _>>()?;
    let inputs: Vec<(&LabeledSample, &RgbImage)> = samples.iter().copied().zip(images.iter()).collect();
    compose(spec, &inputs, config.interpolation, config.min_size)
}

fn clip_to_image(b: &BBox, w: u32, h: u32) -> Option<BBox> {
    let bounds = BBox::new(0.0, 0.0, w as f64, h as f64);
    remap_bbox(b, 1.0, (0.0, 0.0), &bounds, 0.0)
}

fn group_boxes(records: &[TrackRecord], w: u32, h: u32) -> BTreeMap<u32, Vec<(BBox, i32)>> {
    let mut by_frame: BTreeMap<u32, Vec<(BBox, i32)>> = BTreeMap::new();
    for r in records {
        if let Some(b) = clip_to_image(&r.bbox, w, h) {
            by_frame.entry(r.frame).or_default().push((b, r.class_id));
        }
    }
    by_frame
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Load a sample pool.
///
/// `root` holds either MOT sequence directories (one sample per frame, boxes
/// from `gt/gt.txt`, or from `<labels>/<seq>.txt` when `labels` is given) or
/// flat image files with optional sibling `<stem>.txt` annotations. Boxes
/// are clipped to the image.
pub fn load_pool(root: &Path, labels: Option<&Path>, domain: Domain) -> Result<Vec<LabeledSample>, MosaicError> {
    let keep = mot_data::default_keep_classes();
    let mut pool = Vec::new();
    let sequences = mot_data::sequence_dirs(root)?;
    for (name, dir) in &sequences {
        let info = mot_data::read_seqinfo_file(&dir.join("seqinfo.ini"))?;
        let ann = match labels {
            Some(l) => l.join(format!("{name}.txt")),
            None => dir.join("gt").join("gt.txt"),
        };
        let records = mot_data::read_ground_truth_file(&ann, &keep)?;
        let mut by_frame = group_boxes(&records, info.width, info.height);
        for frame in 1..=info.frame_count {
            pool.push(LabeledSample {
                image_ref: dir.join(info.frame_image(frame)),
                width: info.width,
                height: info.height,
                boxes: by_frame.remove(&frame).unwrap_or_default(),
                domain,
            });
        }
    }
    if !sequences.is_empty() {
        return Ok(pool);
    }
    let mut images: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| MotError::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    images.sort();
    for path in images {
        let (width, height) = image::image_dimensions(&path).map_err(|source| MosaicError::Image {
            path: path.clone(),
            source,
        })?;
        let ann = path.with_extension("txt");
        let boxes = if ann.is_file() {
            let records = mot_data::read_ground_truth_file(&ann, &keep)?;
            group_boxes(&records, width, height).into_values().flatten().collect()
        } else {
            Vec::new()
        };
        pool.push(LabeledSample {
            image_ref: path,
            width,
            height,
            boxes,
            domain,
        });
    }
    Ok(pool)
}

/// One generated mosaic as recorded in `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub image: String,
    pub annotations: String,
    pub boxes: usize,
    #[serde(flatten)]
    pub spec: MosaicSpec,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Seed for item `index` of a batch.
pub fn item_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

fn annotation_records(boxes: &[MosaicBox]) -> Vec<TrackRecord> {
    boxes
        .iter()
        .enumerate()
        .map(|(i, b)| TrackRecord {
            frame: 1,
            track_id: i as u32 + 1,
            bbox: b.bbox,
            confidence: 1.0,
            class_id: b.class_id,
            visibility: 1.0,
        })
        .collect()
}

/// Write `count` mosaics as `mosaic_NNNNNN.png` / `.txt` plus `manifest.json`.
pub fn sample_batch(
    source_pool: &[LabeledSample],
    target_pool: &[LabeledSample],
    count: usize,
    config: &MosaicConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>, MosaicError> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| MotError::io(out_dir, e))?;
    let entries = (0..count)
        .into_par_iter()
        .map(|index| {
            let spec = plan_mosaic(source_pool, target_pool, config, item_seed(seed, index))?;
            let composite = compose_from_pools(&spec, source_pool, target_pool, config)?;
            let image = format!("mosaic_{index:06}.png");
            let annotations = format!("mosaic_{index:06}.txt");
            let image_path = out_dir.join(&image);
            composite
                .image
                .save_with_format(&image_path, image::ImageFormat::Png)
                .map_err(|source| MosaicError::Image {
                    path: image_path,
                    source,
                })?;
            mot_data::write_annotations_file(&out_dir.join(&annotations), &annotation_records(&composite.boxes))?;
            Ok(ManifestEntry {
                index,
                image,
                annotations,
                boxes: composite.boxes.len(),
                spec,
            })
        })
        .collect::<Result<Vec<_>, MosaicError>>()?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&entries)?;
    fs::write(&manifest_path, json).map_err(|e| MotError::io(&manifest_path, e))?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(domain: Domain, i: usize, w: u32, h: u32) -> LabeledSample {
        LabeledSample {
            image_ref: PathBuf::from(format!("{domain}_{i}.png")),
            width: w,
            height: h,
            boxes: vec![(BBox::new(1.0, 1.0, w as f64 / 2.0, h as f64 / 2.0), 1)],
            domain,
        }
    }

    fn pools() -> (Vec<LabeledSample>, Vec<LabeledSample>) {
        (
            (0..3).map(|i| sample(Domain::Source, i, 40, 30)).collect(),
            (0..3).map(|i| sample(Domain::Target, i, 30, 40)).collect(),
        )
    }

    fn small() -> MosaicConfig {
        MosaicConfig {
            canvas_w: 64,
            canvas_h: 48,
            ..Default::default()
        }
    }

    #[test]
    fn remap_example() {
        let b = BBox::new(10.0, 10.0, 20.0, 20.0);
        let clip = BBox::new(0.0, 0.0, 1e6, 1e6);
        assert_eq!(remap_bbox(&b, 0.5, (320.0, 0.0), &clip, 0.0), Some(BBox::new(325.0, 5.0, 10.0, 10.0)));
    }

    #[test]
    fn remap_identity_and_outside() {
        let b = BBox::new(3.5, 7.25, 11.0, 4.0);
        let clip = BBox::new(0.0, 0.0, 100.0, 100.0);
        assert_eq!(remap_bbox(&b, 1.0, (0.0, 0.0), &clip, 2.0), Some(b));
        assert_eq!(remap_bbox(&BBox::new(200.0, 0.0, 5.0, 5.0), 1.0, (0.0, 0.0), &clip, 0.0), None);
    }

    #[test]
    fn remap_drops_slivers() {
        let clip = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(remap_bbox(&BBox::new(9.0, 0.0, 5.0, 5.0), 1.0, (0.0, 0.0), &clip, 2.0), None);
        assert!(remap_bbox(&BBox::new(8.0, 0.0, 5.0, 5.0), 1.0, (0.0, 0.0), &clip, 2.0).is_some());
    }

    #[test]
    fn straddling_box_is_clipped_smaller() {
        let b = BBox::new(5.0, 5.0, 10.0, 10.0);
        let clip = BBox::new(0.0, 0.0, 10.0, 10.0);
        let r = remap_bbox(&b, 1.0, (0.0, 0.0), &clip, 0.0).unwrap();
        assert!(r.area() < b.area());
        assert!(clip.contains(&r));
    }

    #[test]
    fn all_source_mix() {
        let (s, t) = pools();
        let config = MosaicConfig { mix: (4, 0), ..small() };
        let spec = plan_mosaic(&s, &t, &config, 3).unwrap();
        assert_eq!(spec.domain_count(Domain::Source), 4);
        let spec = plan_mosaic(&s, &[], &config, 3).unwrap();
        assert_eq!(spec.domain_count(Domain::Source), 4);
    }

    #[test]
    fn empty_required_pool_is_named() {
        let (s, _) = pools();
        let err = plan_mosaic(&s, &[], &small(), 1).unwrap_err();
        assert!(err.to_string().contains("target"), "{err}");
    }

    #[test]
    fn fixed_center() {
        let (s, t) = pools();
        let config = MosaicConfig { jitter: (0.5, 0.5), ..small() };
        for seed in 0..10 {
            assert_eq!(plan_mosaic(&s, &t, &config, seed).unwrap().center, (32, 24));
        }
    }

    #[test]
    fn same_seed_same_spec() {
        let (s, t) = pools();
        assert_eq!(plan_mosaic(&s, &t, &small(), 9).unwrap(), plan_mosaic(&s, &t, &small(), 9).unwrap());
    }

    #[test]
    fn invalid_mix_rejected() {
        let (s, t) = pools();
        let config = MosaicConfig { mix: (3, 2), ..small() };
        assert!(matches!(plan_mosaic(&s, &t, &config, 0), Err(MosaicError::InvalidMix { .. })));
    }

    #[test]
    fn crops_fit_scaled_images() {
        let (s, t) = pools();
        for seed in 0..50 {
            let spec = plan_mosaic(&s, &t, &small(), seed).unwrap();
            for tile in &spec.tiles {
                assert_eq!((tile.crop.w, tile.crop.h), (tile.placement.w, tile.placement.h));
                assert!(tile.crop.right() <= tile.scaled_w && tile.crop.bottom() <= tile.scaled_h);
            }
        }
    }

    #[test]
    fn one_box_per_quadrant_on_blank_images() {
        let (s, t) = pools();
        let spec = plan_mosaic(&s, &t, &MosaicConfig { jitter: (0.5, 0.5), ..small() }, 5).unwrap();
        let images: Vec<RgbImage> = spec.tiles.iter().map(|t| RgbImage::new(t.image_w, t.image_h)).collect();
        let samples: Vec<LabeledSample> = spec
            .tiles
            .iter()
            .map(|t| LabeledSample {
                boxes: vec![(
                    BBox::new(
                        t.image_w as f64 * 0.25,
                        t.image_h as f64 * 0.25,
                        t.image_w as f64 * 0.5,
                        t.image_h as f64 * 0.5,
                    ),
                    1,
                )],
                ..sample(t.domain, 0, t.image_w, t.image_h)
            })
            .collect();
        let inputs: Vec<_> = samples.iter().zip(images.iter()).collect();
        let out = compose(&spec, &inputs, Interpolation::Nearest, 0.0).unwrap();
        let mut tiles: Vec<usize> = out.boxes.iter().map(|b| b.tile).collect();
        tiles.sort();
        assert_eq!(tiles, vec![0, 1, 2, 3]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (s, t) = pools();
        let spec = plan_mosaic(&s, &t, &small(), 1).unwrap();
        let wrong = RgbImage::new(3, 3);
        let sm = sample(Domain::Source, 0, 3, 3);
        let inputs = vec![(&sm, &wrong); 4];
        assert!(matches!(
            compose(&spec, &inputs, Interpolation::Nearest, 0.0),
            Err(MosaicError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bilinear_on_constant_image_is_constant() {
        let mut img = RgbImage::new(5, 7);
        for p in img.pixels_mut() {
            *p = Rgb([10, 20, 30]);
        }
        for sx in 0..12 {
            assert_eq!(sample_pixel(&img, sx, sx, 2.3, Interpolation::Bilinear), Rgb([10, 20, 30]));
        }
    }
}
