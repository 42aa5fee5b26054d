//! MOT evaluation: CLEAR (MOTA, IDSW), identity (IDF1) and HOTA with its
//! DetA / AssA decomposition.
//!
//! All three metric families reduce to per-sequence integer counts plus, for
//! HOTA, a per-threshold association sum. Aggregation over sequences pools
//! those counts; scores are only formed at the end.

use crate::mot_data::{self, BBox, MotError, TrackRecord};
use crate::tracker::assignment::{solve_assignment, CostMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

pub const ALPHA_COUNT: usize = 19;

/// IoU thresholds 0.05, 0.10, …, 0.95.
pub fn alpha_grid() -> [f64; ALPHA_COUNT] {
    std::array::from_fn(|k| (k + 1) as f64 / 20.0)
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("empty ground truth")]
    EmptyGroundTruth,
    #[error("sequence {name}: {source}")]
    Sequence {
        name: String,
        #[source]
        source: Box<MetricsError>,
    },
    #[error(transparent)]
    Mot(#[from] MotError),
    #[error("sequence {name}: missing result file {}", path.display())]
    MissingResults { name: String, path: PathBuf },
    #[error("no sequences to evaluate under {}", .0.display())]
    NoSequences(PathBuf),
}

impl MetricsError {
    fn in_sequence(self, name: &str) -> Self {
        MetricsError::Sequence {
            name: name.to_string(),
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub gt_id: u32,
    pub pred_id: u32,
    pub iou: f64,
}

/// Result of matching one frame's ground truth against its predictions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMatching {
    pub frame: u32,
    pub pairs: Vec<MatchedPair>,
    pub unmatched_gt: Vec<u32>,
    pub unmatched_pred: Vec<u32>,
}

/// Maximum-weight bipartite matching over positive-weight edges.
///
/// The edge graph is split into connected components and each component is
/// solved as a dense assignment, so sparse overlap patterns stay cheap.
fn max_weight_matching(rows: usize, cols: usize, edges: &[(usize, usize, f64)]) -> Vec<(usize, usize)> {
    let mut parent: Vec<usize> = (0..rows + cols).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(r, c, _) in edges {
        let (a, b) = (find(&mut parent, r), find(&mut parent, rows + c));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut components: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for &(r, c, _) in edges {
        let root = find(&mut parent, r);
        let entry = components.entry(root).or_default();
        if !entry.0.contains(&r) {
            entry.0.push(r);
        }
        if !entry.1.contains(&c) {
            entry.1.push(c);
        }
    }
    let weights: HashMap<(usize, usize), f64> = edges.iter().map(|&(r, c, w)| ((r, c), w)).collect();

    let mut out = Vec::new();
    for (_, (mut comp_rows, mut comp_cols)) in components {
        comp_rows.sort_unstable();
        comp_cols.sort_unstable();
        let cost = CostMatrix::from_fn(comp_rows.len(), comp_cols.len(), |i, j| {
            -weights.get(&(comp_rows[i], comp_cols[j])).copied().unwrap_or(0.0)
        });
        let assignment =
            solve_assignment(&cost, f64::INFINITY).expect("edge weights are finite by construction");
        for (i, j) in assignment.matches {
            let key = (comp_rows[i], comp_cols[j]);
            if weights.contains_key(&key) {
                out.push(key);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Dense IoU table for one frame.
struct FrameBoxes {
    frame: u32,
    gt: Vec<(u32, BBox)>,
    pred: Vec<(u32, BBox)>,
    ious: Vec<f64>,
}

impl FrameBoxes {
    fn new(frame: u32, gt: Vec<(u32, BBox)>, pred: Vec<(u32, BBox)>) -> Self {
        let mut ious = Vec::with_capacity(gt.len() * pred.len());
        for (_, g) in &gt {
            for (_, p) in &pred {
                ious.push(g.iou(p));
            }
        }
        Self {
            frame,
            gt,
            pred,
            ious,
        }
    }

    fn iou(&self, g: usize, p: usize) -> f64 {
        self.ious[g * self.pred.len() + p]
    }

    /// Match, among pairs with IoU >= `min_iou`, maximising the summed
    /// `weight(gt_id, pred_id) * IoU`. Rows/columns flagged in `skip_gt` /
    /// `skip_pred` take no part.
    fn matching(
        &self,
        min_iou: f64,
        skip_gt: &[bool],
        skip_pred: &[bool],
        weight: impl Fn(u32, u32) -> f64,
    ) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for g in 0..self.gt.len() {
            if skip_gt.get(g).copied().unwrap_or(false) {
                continue;
            }
            for p in 0..self.pred.len() {
                if skip_pred.get(p).copied().unwrap_or(false) {
                    continue;
                }
                let iou = self.iou(g, p);
                if iou >= min_iou && iou > 0.0 {
                    let w = weight(self.gt[g].0, self.pred[p].0) * iou;
                    if w > 0.0 {
                        edges.push((g, p, w));
                    }
                }
            }
        }
        max_weight_matching(self.gt.len(), self.pred.len(), &edges)
    }

    fn to_matching(&self, pairs: &[(usize, usize)]) -> FrameMatching {
        let mut gt_used = vec![false; self.gt.len()];
        let mut pred_used = vec![false; self.pred.len()];
        let mut out = FrameMatching {
            frame: self.frame,
            ..Default::default()
        };
        for &(g, p) in pairs {
            gt_used[g] = true;
            pred_used[p] = true;
            out.pairs.push(MatchedPair {
                gt_id: self.gt[g].0,
                pred_id: self.pred[p].0,
                iou: self.iou(g, p),
            });
        }
        out.unmatched_gt = (0..self.gt.len()).filter(|&g| !gt_used[g]).map(|g| self.gt[g].0).collect();
        out.unmatched_pred = (0..self.pred.len())
            .filter(|&p| !pred_used[p])
            .map(|p| self.pred[p].0)
            .collect();
        out
    }
}

/// Match one frame: the pairing maximising total IoU among pairings whose
/// pairs all reach `min_iou`.
pub fn match_frame(frame: u32, gt: &[(u32, BBox)], pred: &[(u32, BBox)], min_iou: f64) -> FrameMatching {
    let boxes = FrameBoxes::new(frame, gt.to_vec(), pred.to_vec());
    let pairs = boxes.matching(min_iou, &[], &[], |_, _| 1.0);
    boxes.to_matching(&pairs)
}

type IdBoxes = Vec<(u32, BBox)>;

/// Per-frame boxes for the union of GT and prediction frames, in frame order.
fn frames(gt: &[TrackRecord], pred: &[TrackRecord]) -> Vec<FrameBoxes> {
    let mut by_frame: BTreeMap<u32, (IdBoxes, IdBoxes)> = BTreeMap::new();
    for r in gt {
        by_frame.entry(r.frame).or_default().0.push((r.track_id, r.bbox));
    }
    for r in pred {
        by_frame.entry(r.frame).or_default().1.push((r.track_id, r.bbox));
    }
    by_frame
        .into_iter()
        .map(|(frame, (mut g, mut p))| {
            g.sort_by_key(|x| x.0);
            p.sort_by_key(|x| x.0);
            FrameBoxes::new(frame, g, p)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClearCounts {
    pub num_gt: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub idsw: u64,
}

impl ClearCounts {
    pub fn mota(&self) -> f64 {
        if self.num_gt == 0 {
            return 0.0;
        }
        1.0 - (self.fn_ + self.fp + self.idsw) as f64 / self.num_gt as f64
    }

    pub fn merge(&mut self, o: &ClearCounts) {
        self.num_gt += o.num_gt;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.idsw += o.idsw;
    }
}

/// CLEAR-MOT counts with the continuity rule: a pair matched in the previous
/// frame is kept while its IoU stays at or above `min_iou`, and the remaining
/// boxes are matched for maximum total IoU.
pub fn clear_mot(gt: &[TrackRecord], pred: &[TrackRecord], min_iou: f64) -> Result<ClearCounts, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    Ok(clear_counts(&frames(gt, pred), min_iou))
}

fn clear_counts(frames: &[FrameBoxes], min_iou: f64) -> ClearCounts {
    let mut counts = ClearCounts::default();
    let mut last_match: HashMap<u32, u32> = HashMap::new();
    let mut prev: (u32, HashMap<u32, u32>) = (0, HashMap::new());
    for fb in frames {
        let previous = if prev.0 + 1 == fb.frame { Some(&prev.1) } else { None };
        let mut skip_gt = vec![false; fb.gt.len()];
        let mut skip_pred = vec![false; fb.pred.len()];
        let mut pairs = Vec::new();
        if let Some(previous) = previous {
            for (g, (gid, _)) in fb.gt.iter().enumerate() {
                let Some(&pid) = previous.get(gid) else { continue };
                if let Some(p) = fb.pred.iter().position(|(id, _)| *id == pid) {
                    if fb.iou(g, p) >= min_iou && fb.iou(g, p) > 0.0 {
                        skip_gt[g] = true;
                        skip_pred[p] = true;
                        pairs.push((g, p));
                    }
                }
            }
        }
        pairs.extend(fb.matching(min_iou, &skip_gt, &skip_pred, |_, _| 1.0));

        let mut current = HashMap::with_capacity(pairs.len());
        for &(g, p) in &pairs {
            let (gid, pid) = (fb.gt[g].0, fb.pred[p].0);
            if let Some(&before) = last_match.get(&gid) {
                if before != pid {
                    counts.idsw += 1;
                }
            }
            last_match.insert(gid, pid);
            current.insert(gid, pid);
        }
        let tp = pairs.len() as u64;
        counts.num_gt += fb.gt.len() as u64;
        counts.tp += tp;
        counts.fn_ += fb.gt.len() as u64 - tp;
        counts.fp += fb.pred.len() as u64 - tp;
        prev = (fb.frame, current);
    }
    counts
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityCounts {
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

impl IdentityCounts {
    pub fn idf1(&self) -> f64 {
        let denom = 2 * self.idtp + self.idfp + self.idfn;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.idtp as f64 / denom as f64
        }
    }

    pub fn merge(&mut self, o: &IdentityCounts) {
        self.idtp += o.idtp;
        self.idfp += o.idfp;
        self.idfn += o.idfn;
    }
}

/// IDF1 under one global GT-id / pred-id correspondence chosen to maximise
/// the number of frames in which paired boxes overlap by at least `min_iou`.
pub fn idf1(gt: &[TrackRecord], pred: &[TrackRecord], min_iou: f64) -> Result<f64, MetricsError> {
    Ok(identity_counts_checked(gt, pred, min_iou)?.idf1())
}

pub fn identity_counts_checked(
    gt: &[TrackRecord],
    pred: &[TrackRecord],
    min_iou: f64,
) -> Result<IdentityCounts, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    Ok(identity_counts(&frames(gt, pred), min_iou))
}

fn identity_counts(frames: &[FrameBoxes], min_iou: f64) -> IdentityCounts {
    let mut gt_ids: BTreeMap<u32, usize> = BTreeMap::new();
    let mut pred_ids: BTreeMap<u32, usize> = BTreeMap::new();
    for fb in frames {
        for (id, _) in &fb.gt {
            *gt_ids.entry(*id).or_default() += 1;
        }
        for (id, _) in &fb.pred {
            *pred_ids.entry(*id).or_default() += 1;
        }
    }
    let gt_index: HashMap<u32, usize> = gt_ids.keys().enumerate().map(|(i, id)| (*id, i)).collect();
    let pred_index: HashMap<u32, usize> = pred_ids.keys().enumerate().map(|(i, id)| (*id, i)).collect();

    let mut overlap: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for fb in frames {
        for (g, (gid, _)) in fb.gt.iter().enumerate() {
            for (p, (pid, _)) in fb.pred.iter().enumerate() {
                if fb.iou(g, p) >= min_iou && fb.iou(g, p) > 0.0 {
                    *overlap.entry((gt_index[gid], pred_index[pid])).or_default() += 1;
                }
            }
        }
    }
    let edges: Vec<(usize, usize, f64)> = overlap.iter().map(|(&(g, p), &n)| (g, p, n as f64)).collect();
    let matched = max_weight_matching(gt_ids.len(), pred_ids.len(), &edges);
    let idtp: u64 = matched.iter().map(|k| overlap[k]).sum();
    let total_gt: u64 = gt_ids.values().map(|&n| n as u64).sum();
    let total_pred: u64 = pred_ids.values().map(|&n| n as u64).sum();
    IdentityCounts {
        idtp,
        idfp: total_pred - idtp,
        idfn: total_gt - idtp,
    }
}

/// HOTA counts at one IoU threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AlphaCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    /// Sum over true positives of the association score of their id pair.
    pub assoc_sum: f64,
}

impl AlphaCounts {
    pub fn deta(&self) -> f64 {
        let denom = self.tp + self.fn_ + self.fp;
        if denom == 0 {
            0.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    pub fn assa(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.assoc_sum / self.tp as f64
        }
    }

    pub fn hota(&self) -> f64 {
        (self.deta() * self.assa()).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotaCounts {
    pub alphas: Vec<AlphaCounts>,
}

impl Default for HotaCounts {
    fn default() -> Self {
        Self {
            alphas: vec![AlphaCounts::default(); ALPHA_COUNT],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotaResult {
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub per_alpha: Vec<AlphaRow>,
}

impl HotaCounts {
    pub fn merge(&mut self, o: &HotaCounts) {
        for (a, b) in self.alphas.iter_mut().zip(&o.alphas) {
            a.tp += b.tp;
            a.fn_ += b.fn_;
            a.fp += b.fp;
            a.assoc_sum += b.assoc_sum;
        }
    }

    pub fn result(&self) -> HotaResult {
        let per_alpha: Vec<AlphaRow> = alpha_grid()
            .iter()
            .zip(&self.alphas)
            .map(|(&alpha, c)| AlphaRow {
                alpha,
                hota: c.hota(),
                deta: c.deta(),
                assa: c.assa(),
            })
            .collect();
        let mean = |f: fn(&AlphaRow) -> f64| per_alpha.iter().map(f).sum::<f64>() / per_alpha.len() as f64;
        HotaResult {
            hota: mean(|r| r.hota),
            deta: mean(|r| r.deta),
            assa: mean(|r| r.assa),
            per_alpha,
        }
    }
}

/// HOTA, DetA and AssA averaged over the 19-value IoU threshold grid.
pub fn hota(gt: &[TrackRecord], pred: &[TrackRecord]) -> Result<HotaResult, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    Ok(hota_counts(&frames(gt, pred)).result())
}

fn hota_counts(frames: &[FrameBoxes]) -> HotaCounts {
    let mut gt_count: HashMap<u32, f64> = HashMap::new();
    let mut pred_count: HashMap<u32, f64> = HashMap::new();
    let mut potential: HashMap<(u32, u32), f64> = HashMap::new();
    for fb in frames {
        for (id, _) in &fb.gt {
            *gt_count.entry(*id).or_default() += 1.0;
        }
        for (id, _) in &fb.pred {
            *pred_count.entry(*id).or_default() += 1.0;
        }
        let row_sum: Vec<f64> = (0..fb.gt.len()).map(|g| (0..fb.pred.len()).map(|p| fb.iou(g, p)).sum()).collect();
        let col_sum: Vec<f64> = (0..fb.pred.len()).map(|p| (0..fb.gt.len()).map(|g| fb.iou(g, p)).sum()).collect();
        for (g, (gt_id, _)) in fb.gt.iter().enumerate() {
            for (p, (pred_id, _)) in fb.pred.iter().enumerate() {
                let s = fb.iou(g, p);
                if s > 0.0 {
                    *potential.entry((*gt_id, *pred_id)).or_default() += s / (row_sum[g] + col_sum[p] - s);
                }
            }
        }
    }
    // Global alignment score between each GT id and pred id.
    let alignment: HashMap<(u32, u32), f64> = potential
        .iter()
        .map(|(&(g, p), &m)| ((g, p), m / (gt_count[&g] + pred_count[&p] - m)))
        .collect();

    let total_gt: u64 = frames.iter().map(|f| f.gt.len() as u64).sum();
    let total_pred: u64 = frames.iter().map(|f| f.pred.len() as u64).sum();
    let mut out = HotaCounts::default();
    for (a, alpha) in alpha_grid().into_iter().enumerate() {
        let mut matches: HashMap<(u32, u32), f64> = HashMap::new();
        let mut tp = 0u64;
        for fb in frames {
            let pairs = fb.matching(alpha, &[], &[], |g, p| alignment.get(&(g, p)).copied().unwrap_or(0.0));
            tp += pairs.len() as u64;
            for (g, p) in pairs {
                *matches.entry((fb.gt[g].0, fb.pred[p].0)).or_default() += 1.0;
            }
        }
        let mut assoc_sum = 0.0;
        let mut keys: Vec<&(u32, u32)> = matches.keys().collect();
        keys.sort_unstable();
        for key in keys {
            let n = matches[key];
            let score = n / (gt_count[&key.0] + pred_count[&key.1] - n);
            assoc_sum += n * score;
        }
        out.alphas[a] = AlphaCounts {
            tp,
            fn_: total_gt - tp,
            fp: total_pred - tp,
            assoc_sum,
        };
    }
    out
}

/// Poolable counts for one or more sequences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceCounts {
    pub clear: ClearCounts,
    pub identity: IdentityCounts,
    pub hota: HotaCounts,
}

impl SequenceCounts {
    pub fn merge(&mut self, o: &SequenceCounts) {
        self.clear.merge(&o.clear);
        self.identity.merge(&o.identity);
        self.hota.merge(&o.hota);
    }

    pub fn scores(&self) -> Scores {
        let h = self.hota.result();
        Scores {
            hota: h.hota,
            deta: h.deta,
            assa: h.assa,
            mota: self.clear.mota(),
            idf1: self.identity.idf1(),
            fp: self.clear.fp,
            fn_: self.clear.fn_,
            idsw: self.clear.idsw,
            num_gt: self.clear.num_gt,
            idtp: self.identity.idtp,
            idfp: self.identity.idfp,
            idfn: self.identity.idfn,
            per_alpha: h.per_alpha,
        }
    }
}

/// CLEAR / identity threshold used by the benchmark.
pub const CLEAR_MIN_IOU: f64 = 0.5;

pub fn evaluate_sequence(gt: &[TrackRecord], pred: &[TrackRecord]) -> Result<SequenceCounts, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let frames = frames(gt, pred);
    Ok(SequenceCounts {
        clear: clear_counts(&frames, CLEAR_MIN_IOU),
        identity: identity_counts(&frames, CLEAR_MIN_IOU),
        hota: hota_counts(&frames),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub mota: f64,
    pub idf1: f64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub idsw: u64,
    pub num_gt: u64,
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
    pub per_alpha: Vec<AlphaRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub combined: Scores,
    pub per_sequence: BTreeMap<String, Scores>,
}

#[derive(Debug, Clone)]
pub struct SequenceData {
    pub name: String,
    pub gt: Vec<TrackRecord>,
    pub pred: Vec<TrackRecord>,
}

/// Evaluate sequences in parallel and pool their counts.
pub fn evaluate(sequences: &[SequenceData]) -> Result<MetricsReport, MetricsError> {
    let counts: Vec<SequenceCounts> = sequences
        .par_iter()
        .map(|s| evaluate_sequence(&s.gt, &s.pred).map_err(|e| e.in_sequence(&s.name)))
        .collect::<Result<_, _>>()?;
    let mut pooled = SequenceCounts::default();
    let mut per_sequence = BTreeMap::new();
    for (s, c) in sequences.iter().zip(&counts) {
        pooled.merge(c);
        per_sequence.insert(s.name.clone(), c.scores());
    }
    Ok(MetricsReport {
        combined: pooled.scores(),
        per_sequence,
    })
}

/// Files for one sequence to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePaths {
    pub name: String,
    pub gt: PathBuf,
    pub results: PathBuf,
    pub seqinfo: Option<PathBuf>,
}

fn read_seqmap(path: &Path) -> Result<Vec<String>, MetricsError> {
    let text = fs::read_to_string(path).map_err(|e| MotError::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split(',').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty() && *l != "name" && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Pair ground truth with result files.
///
/// `gt_dir` holds either MOT sequence directories (`<seq>/gt/gt.txt` next to
/// `<seq>/seqinfo.ini`) or flat `<seq>.txt` files. Results are `<seq>.txt`
/// under `results_dir`. A seqmap restricts and orders the sequences.
pub fn discover_sequences(
    gt_dir: &Path,
    results_dir: &Path,
    seqmap: Option<&Path>,
) -> Result<Vec<SequencePaths>, MetricsError> {
    let mut found: BTreeMap<String, (PathBuf, Option<PathBuf>)> = BTreeMap::new();
    for (name, dir) in mot_data::sequence_dirs(gt_dir)? {
        let gt = dir.join("gt").join("gt.txt");
        if gt.is_file() {
            found.insert(name, (gt, Some(dir.join("seqinfo.ini"))));
        }
    }
    if found.is_empty() {
        for (name, path) in mot_data::flat_text_files(gt_dir)? {
            found.insert(name, (path, None));
        }
    }
    let names: Vec<String> = match seqmap {
        Some(p) => read_seqmap(p)?,
        None => found.keys().cloned().collect(),
    };
    if names.is_empty() {
        return Err(MetricsError::NoSequences(gt_dir.to_path_buf()));
    }
    names
        .into_iter()
        .map(|name| {
            let (gt, seqinfo) = found.get(&name).cloned().ok_or_else(|| {
                MetricsError::Mot(MotError::MissingKey(format!("ground truth for sequence {name}")))
            })?;
            let results = results_dir.join(format!("{name}.txt"));
            if !results.is_file() {
                return Err(MetricsError::MissingResults { name, path: results });
            }
            Ok(SequencePaths {
                name,
                gt,
                results,
                seqinfo,
            })
        })
        .collect()
}

fn load_sequence(paths: &SequencePaths, keep_classes: &BTreeSet<i32>) -> Result<SequenceData, MetricsError> {
    let gt = mot_data::read_ground_truth_file(&paths.gt, keep_classes)?;
    let mut pred = mot_data::read_results_file(&paths.results)?;
    if let Some(seqinfo) = &paths.seqinfo {
        let info = mot_data::read_seqinfo_file(seqinfo)?;
        let before = pred.len();
        pred.retain(|r| r.frame <= info.frame_count);
        if pred.len() != before {
            log::warn!(
                "{}: dropped {} results beyond frame {}",
                paths.name,
                before - pred.len(),
                info.frame_count
            );
        }
    }
    Ok(SequenceData {
        name: paths.name.clone(),
        gt,
        pred,
    })
}

/// Parse and evaluate every sequence; any failure names its sequence.
pub fn evaluate_files(paths: &[SequencePaths], keep_classes: &BTreeSet<i32>) -> Result<MetricsReport, MetricsError> {
    let data: Vec<SequenceData> = paths
        .par_iter()
        .map(|p| load_sequence(p, keep_classes).map_err(|e| e.in_sequence(&p.name)))
        .collect::<Result<_, _>>()?;
    evaluate(&data)
}
