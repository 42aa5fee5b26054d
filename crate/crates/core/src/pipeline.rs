//! Iterative pseudo-labeling rounds.
//!
//! A work directory holds everything a run produces:
//!
//! ```text
//! config.json                  copy of the pipeline config
//! bootstrap.json               the registered warm-up checkpoint G_1
//! manifests/round_0001.json    latest manifest of each round
//! rounds/round_0001[-aN]/      artifacts of one attempt
//!     detections/ pseudo_labels/ mosaics/ candidates/ soup.json manifest.json
//! store/<sha256>.tarc          content-addressed checkpoints
//! ```
//!
//! Round `t` reads `G_t` (the previous round's output, or the warm-up model
//! for round 1) and runs inference, pseudo-labeling, mosaic sampling,
//! external fine-tuning and a greedy soup to produce `G_{t+1}`. Artifacts of
//! an attempt are never rewritten; a retry gets a fresh attempt directory.

use crate::metrics::{self, MetricsReport, SequenceData};
use crate::mosaic::{self, Domain, MosaicConfig};
use crate::mot_data;
use crate::pseudo_label::{self, PseudoLabelConfig};
use crate::soup::{self, Candidate, CommandEvaluator, Evaluator, SoupLog, TensorArchive};
use crate::tracker::{self, TrackerConfig};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Inference,
    PseudoLabels,
    Mosaics,
    Training,
    Soup,
    Validation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Inference => "inference",
            Stage::PseudoLabels => "pseudo_labels",
            Stage::Mosaics => "mosaics",
            Stage::Training => "training",
            Stage::Soup => "soup",
            Stage::Validation => "validation",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("round {round}, stage {stage}: {message}")]
    Stage {
        round: u32,
        stage: Stage,
        message: String,
        /// The failure came from an external command.
        external: bool,
    },
    #[error("lineage broken: {0}")]
    Lineage(String),
    #[error("{0}")]
    NotReady(String),
    #[error(transparent)]
    Archive(#[from] soup::ArchiveError),
}

impl PipelineError {
    pub fn is_external(&self) -> bool {
        matches!(self, PipelineError::Stage { external: true, .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoupStageConfig {
    /// Scores an archive: run as `<command> <archive-path>`, prints a number.
    /// Without one every candidate scores 0, so all are averaged (or, with
    /// `strict`, only the first is kept).
    pub eval_command: Option<String>,
    pub strict: bool,
}

/// Evaluate each new checkpoint on a labeled split after the soup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    /// MOT sequence directories with `gt/gt.txt`.
    pub dataset: PathBuf,
    #[serde(default)]
    pub tracker: TrackerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundOverride {
    pub threshold: Option<f64>,
    pub include_source: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub rounds: u32,
    pub source_dataset: PathBuf,
    pub target_dataset: PathBuf,
    /// The warm-up model G_1 trained on the source data only.
    pub warmup_checkpoint: PathBuf,
    /// Run as `<command> <checkpoint> <sequence-dir> <out-det-file>`.
    pub inference_command: String,
    /// Run as `<command> <checkpoint-in> <mosaic-dir> <out-dir>`; every
    /// `*.tarc` left in `<out-dir>` becomes a soup candidate.
    pub trainer_command: String,
    #[serde(default)]
    pub pseudo: PseudoLabelConfig,
    #[serde(default)]
    pub mosaic: MosaicConfig,
    #[serde(default = "default_mosaic_count")]
    pub mosaic_count: usize,
    #[serde(default)]
    pub mosaic_seed: u64,
    #[serde(default)]
    pub soup: SoupStageConfig,
    /// Source images stay in the mosaics after round 1 only when set.
    #[serde(default)]
    pub include_source_after_first_round: bool,
    #[serde(default)]
    pub round_overrides: BTreeMap<u32, RoundOverride>,
    #[serde(default)]
    pub validation: Option<ValidationConfig>,
}

fn default_mosaic_count() -> usize {
    16
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.rounds < 1 {
            return bad("rounds must be >= 1".into());
        }
        if self.inference_command.trim().is_empty() || self.trainer_command.trim().is_empty() {
            return bad("inference_command and trainer_command must be non-empty".into());
        }
        self.pseudo.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.mosaic.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        for (round, o) in &self.round_overrides {
            if let Some(t) = o.threshold {
                if !(0.0..=1.0).contains(&t) {
                    return bad(format!("round {round}: threshold {t} outside [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn threshold(&self, round: u32) -> f64 {
        self.round_overrides
            .get(&round)
            .and_then(|o| o.threshold)
            .unwrap_or(self.pseudo.confidence_threshold)
    }

    pub fn include_source(&self, round: u32) -> bool {
        self.round_overrides
            .get(&round)
            .and_then(|o| o.include_source)
            .unwrap_or(round <= 1 || self.include_source_after_first_round)
    }

    pub fn mosaic_seed(&self, round: u32) -> u64 {
        self.mosaic_seed.wrapping_add(round as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundManifest {
    pub round: u32,
    pub attempt: u32,
    pub status: RoundStatus,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub source_dataset: PathBuf,
    pub target_dataset: PathBuf,
    pub include_source: bool,
    pub round_dir: PathBuf,
    pub detections: Option<PathBuf>,
    pub pseudo_labels: Option<PathBuf>,
    pub mosaics: Option<PathBuf>,
    pub candidates: Vec<String>,
    pub soup_log: Option<PathBuf>,
    pub checkpoint_in: String,
    pub checkpoint_out: Option<String>,
    pub threshold: f64,
    pub mosaic_seed: u64,
    pub metrics: Option<MetricsReport>,
    pub started_at: String,
    pub finished_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub checkpoint: String,
    pub imported_from: PathBuf,
    pub created_at: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| PipelineError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("json.partial");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Content-addressed checkpoint store under `<workdir>/store`.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.tarc"))
    }

    pub fn put(&self, archive: &TensorArchive) -> Result<String, PipelineError> {
        let bytes = archive.to_bytes()?;
        let id = soup::content_id(&bytes);
        let path = self.path(&id);
        if !path.exists() {
            fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
            soup::write_archive_file(&path, archive)?;
        }
        Ok(id)
    }

    pub fn put_file(&self, path: &Path) -> Result<String, PipelineError> {
        self.put(&soup::read_archive_file(path)?)
    }

    pub fn get(&self, id: &str) -> Result<TensorArchive, PipelineError> {
        let archive = soup::read_archive_file(&self.path(id))?;
        let found = archive.id()?;
        if found != id {
            return Err(PipelineError::Lineage(format!("store entry {id} hashes to {found}")));
        }
        Ok(archive)
    }
}

pub const CONFIG_FILE: &str = "config.json";
pub const BOOTSTRAP_FILE: &str = "bootstrap.json";

pub fn manifest_path(workdir: &Path, round: u32) -> PathBuf {
    workdir.join("manifests").join(format!("round_{round:04}.json"))
}

/// All round manifests in the work directory, ordered by round.
pub fn load_manifests(workdir: &Path) -> Result<Vec<RoundManifest>, PipelineError> {
    let dir = workdir.join("manifests");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let m: RoundManifest = read_json(&path)?;
        if path != manifest_path(workdir, m.round) {
            return Err(PipelineError::Manifest {
                path,
                message: format!("file name does not match round {}", m.round),
            });
        }
        out.push(m);
    }
    Ok(out)
}

/// The next round to execute: 0 before bootstrap, otherwise the first round
/// that is missing, failed or was interrupted.
pub fn resume(workdir: &Path) -> Result<u32, PipelineError> {
    if !workdir.join(BOOTSTRAP_FILE).is_file() {
        return Ok(0);
    }
    let manifests = load_manifests(workdir)?;
    let mut expected = 1;
    for m in &manifests {
        if m.round != expected || m.status != RoundStatus::Completed {
            return Ok(expected);
        }
        expected += 1;
    }
    Ok(expected)
}

/// Check that each round consumed exactly what the previous one produced
/// and that every recorded checkpoint is present in the store.
pub fn verify_lineage(workdir: &Path) -> Result<(), PipelineError> {
    let bootstrap: Bootstrap = read_json(&workdir.join(BOOTSTRAP_FILE))?;
    let store = Store::new(workdir.join("store"));
    store.get(&bootstrap.checkpoint)?;
    let mut previous = Some(bootstrap.checkpoint);
    let mut last_round = 0;
    for m in load_manifests(workdir)? {
        if m.round <= last_round {
            return Err(PipelineError::Lineage(format!("round {} follows round {last_round}", m.round)));
        }
        match &previous {
            Some(p) if *p == m.checkpoint_in => {}
            Some(p) => {
                return Err(PipelineError::Lineage(format!(
                    "round {} consumed {} but the previous output is {p}",
                    m.round, m.checkpoint_in
                )))
            }
            None => return Err(PipelineError::Lineage(format!("round {} follows an unfinished round", m.round))),
        }
        store.get(&m.checkpoint_in)?;
        if let Some(out) = &m.checkpoint_out {
            store.get(out)?;
        }
        previous = (m.status == RoundStatus::Completed).then(|| m.checkpoint_out.clone()).flatten();
        last_round = m.round;
    }
    Ok(())
}

fn run_command(
    round: u32,
    stage: Stage,
    command: &str,
    args: &[&Path],
    env: &[(&str, String)],
) -> Result<(), PipelineError> {
    let quoted: String = (1..=args.len()).map(|i| format!(" \"${i}\"")).collect();
    let mut cmd = Command::new("sh");
    cmd.arg("-c").arg(format!("{command}{quoted}")).arg("adaptrack");
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let output = cmd.output().map_err(|e| PipelineError::Stage {
        round,
        stage,
        message: format!("could not run `{command}`: {e}"),
        external: true,
    })?;
    if !output.status.success() {
        return Err(PipelineError::Stage {
            round,
            stage,
            message: format!(
                "`{command}` exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            ),
            external: true,
        });
    }
    Ok(())
}

fn stage_err(round: u32, stage: Stage) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage {
        round,
        stage,
        message,
        external: false,
    }
}

struct ConstantEvaluator;

impl Evaluator for ConstantEvaluator {
    fn score(&mut self, _: &TensorArchive) -> Result<f64, soup::EvalError> {
        Ok(0.0)
    }
}

/// Driver for one work directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub workdir: PathBuf,
    pub config: PipelineConfig,
    store: Store,
}

impl Pipeline {
    /// Create or reopen a work directory with `config`, registering the
    /// warm-up checkpoint on first use.
    pub fn init(workdir: &Path, config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        fs::create_dir_all(workdir).map_err(io_err(workdir))?;
        let pipeline = Self {
            workdir: workdir.to_path_buf(),
            store: Store::new(workdir.join("store")),
            config,
        };
        write_json_atomic(&workdir.join(CONFIG_FILE), &pipeline.config)?;
        let bootstrap_path = workdir.join(BOOTSTRAP_FILE);
        if !bootstrap_path.is_file() {
            let checkpoint = pipeline.store.put_file(&pipeline.config.warmup_checkpoint)?;
            write_json_atomic(
                &bootstrap_path,
                &Bootstrap {
                    checkpoint,
                    imported_from: pipeline.config.warmup_checkpoint.clone(),
                    created_at: now(),
                },
            )?;
        }
        Ok(pipeline)
    }

    /// Reopen a work directory using its stored config.
    pub fn open(workdir: &Path) -> Result<Self, PipelineError> {
        let config_path = workdir.join(CONFIG_FILE);
        if !config_path.is_file() {
            return Err(PipelineError::NotReady(format!("{} has no {CONFIG_FILE}", workdir.display())));
        }
        let config: PipelineConfig = read_json(&config_path)?;
        Self::init(workdir, config)
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn status(&self) -> Result<Vec<RoundManifest>, PipelineError> {
        load_manifests(&self.workdir)
    }

    /// Run rounds from the resume point through `config.rounds`.
    pub fn run(&self) -> Result<Vec<RoundManifest>, PipelineError> {
        let mut done = Vec::new();
        let mut next = resume(&self.workdir)?.max(1);
        while next <= self.config.rounds {
            done.push(self.run_round(next)?);
            next += 1;
        }
        Ok(done)
    }

    fn input_checkpoint(&self, round: u32) -> Result<String, PipelineError> {
        if round == 1 {
            let b: Bootstrap = read_json(&self.workdir.join(BOOTSTRAP_FILE))?;
            return Ok(b.checkpoint);
        }
        let prev_path = manifest_path(&self.workdir, round - 1);
        if !prev_path.is_file() {
            return Err(PipelineError::NotReady(format!("round {} has not run", round - 1)));
        }
        let prev: RoundManifest = read_json(&prev_path)?;
        match (prev.status, prev.checkpoint_out) {
            (RoundStatus::Completed, Some(out)) => Ok(out),
            _ => Err(PipelineError::NotReady(format!("round {} is not complete", round - 1))),
        }
    }

    fn attempt_dir(&self, round: u32) -> (u32, PathBuf) {
        let rounds = self.workdir.join("rounds");
        let mut attempt = 1;
        loop {
            let name = if attempt == 1 {
                format!("round_{round:04}")
            } else {
                format!("round_{round:04}-a{attempt}")
            };
            let dir = rounds.join(name);
            if !dir.exists() {
                return (attempt, dir);
            }
            attempt += 1;
        }
    }

    /// Execute one round. On failure the manifest is written with status
    /// `failed` and the failing stage before the error is returned.
    pub fn run_round(&self, round: u32) -> Result<RoundManifest, PipelineError> {
        if round == 0 {
            return Err(PipelineError::NotReady("round 0 is the warm-up bootstrap".into()));
        }
        let existing = manifest_path(&self.workdir, round);
        if existing.is_file() {
            let m: RoundManifest = read_json(&existing)?;
            if m.status == RoundStatus::Completed {
                return Err(PipelineError::NotReady(format!("round {round} is already complete")));
            }
        }
        let checkpoint_in = self.input_checkpoint(round)?;
        let (attempt, round_dir) = self.attempt_dir(round);
        fs::create_dir_all(&round_dir).map_err(io_err(&round_dir))?;
        let include_source = self.config.include_source(round);
        let mut manifest = RoundManifest {
            round,
            attempt,
            status: RoundStatus::Running,
            failed_stage: None,
            error: None,
            source_dataset: self.config.source_dataset.clone(),
            target_dataset: self.config.target_dataset.clone(),
            include_source,
            round_dir: round_dir.clone(),
            detections: None,
            pseudo_labels: None,
            mosaics: None,
            candidates: Vec::new(),
            soup_log: None,
            checkpoint_in,
            checkpoint_out: None,
            threshold: self.config.threshold(round),
            mosaic_seed: self.config.mosaic_seed(round),
            metrics: None,
            started_at: now(),
            finished_at: None,
        };
        self.save(&manifest)?;
        log::info!("round {round} attempt {attempt} in {}", round_dir.display());
        match self.execute(&mut manifest) {
            Ok(()) => {
                manifest.status = RoundStatus::Completed;
                manifest.finished_at = Some(now());
                self.save(&manifest)?;
                Ok(manifest)
            }
            Err(e) => {
                manifest.status = RoundStatus::Failed;
                manifest.failed_stage = match &e {
                    PipelineError::Stage { stage, .. } => Some(*stage),
                    _ => None,
                };
                manifest.error = Some(e.to_string());
                manifest.finished_at = Some(now());
                self.save(&manifest)?;
                Err(e)
            }
        }
    }

    fn save(&self, manifest: &RoundManifest) -> Result<(), PipelineError> {
        write_json_atomic(&manifest.round_dir.join("manifest.json"), manifest)?;
        write_json_atomic(&manifest_path(&self.workdir, manifest.round), manifest)
    }

    fn execute(&self, m: &mut RoundManifest) -> Result<(), PipelineError> {
        let round = m.round;
        let checkpoint_path = self.store.path(&m.checkpoint_in);
        self.store.get(&m.checkpoint_in)?;

        // Inference of G_t over the target sequences.
        let det_dir = m.round_dir.join("detections");
        self.infer(round, Stage::Inference, &checkpoint_path, &self.config.target_dataset, &det_dir)?;
        m.detections = Some(det_dir.clone());
        self.save(m)?;

        let pseudo_dir = m.round_dir.join("pseudo_labels");
        let pseudo_config = PseudoLabelConfig {
            confidence_threshold: m.threshold,
            ..self.config.pseudo
        };
        pseudo_label::generate_directory(&det_dir, &pseudo_dir, &pseudo_config)
            .map_err(|e| stage_err(round, Stage::PseudoLabels)(e.to_string()))?;
        m.pseudo_labels = Some(pseudo_dir.clone());
        self.save(m)?;

        let mosaic_dir = m.round_dir.join("mosaics");
        self.mosaics(m, &pseudo_dir, &mosaic_dir)
            .map_err(|e| stage_err(round, Stage::Mosaics)(e.to_string()))?;
        m.mosaics = Some(mosaic_dir.clone());
        self.save(m)?;

        let candidate_dir = m.round_dir.join("candidates");
        fs::create_dir_all(&candidate_dir).map_err(io_err(&candidate_dir))?;
        let source_env = if m.include_source {
            self.config.source_dataset.display().to_string()
        } else {
            String::new()
        };
        run_command(
            round,
            Stage::Training,
            &self.config.trainer_command,
            &[&checkpoint_path, &mosaic_dir, &candidate_dir],
            &[
                ("ADAPTRACK_ROUND", round.to_string()),
                ("ADAPTRACK_SOURCE", source_env),
                ("ADAPTRACK_TARGET", self.config.target_dataset.display().to_string()),
                ("ADAPTRACK_PSEUDO", pseudo_dir.display().to_string()),
            ],
        )?;
        m.candidates = self.register_candidates(round, &candidate_dir)?;
        self.save(m)?;

        let (out, log) = self.soup(m)?;
        let soup_path = m.round_dir.join("soup.json");
        write_json_atomic(&soup_path, &log)?;
        m.soup_log = Some(soup_path);
        m.checkpoint_out = Some(out.clone());
        self.save(m)?;

        if let Some(validation) = &self.config.validation {
            m.metrics = Some(self.validate(round, &out, validation, &m.round_dir.join("validation"))?);
        }
        Ok(())
    }

    fn infer(&self, round: u32, stage: Stage, checkpoint: &Path, dataset: &Path, out: &Path) -> Result<(), PipelineError> {
        use rayon::prelude::*;
        let sequences = mot_data::sequence_dirs(dataset).map_err(|e| stage_err(round, stage)(e.to_string()))?;
        if sequences.is_empty() {
            return Err(stage_err(round, stage)(format!("no sequences under {}", dataset.display())));
        }
        fs::create_dir_all(out).map_err(io_err(out))?;
        sequences.par_iter().try_for_each(|(name, dir)| {
            let det = out.join(format!("{name}.txt"));
            run_command(round, stage, &self.config.inference_command, &[checkpoint, dir, &det], &[])?;
            if !det.is_file() {
                return Err(stage_err(round, stage)(format!("inference wrote no {}", det.display())));
            }
            Ok(())
        })
    }

    fn mosaics(&self, m: &RoundManifest, pseudo_dir: &Path, out: &Path) -> Result<(), mosaic::MosaicError> {
        let target = mosaic::load_pool(&self.config.target_dataset, Some(pseudo_dir), Domain::Target)?;
        let (source, config) = if m.include_source {
            (mosaic::load_pool(&self.config.source_dataset, None, Domain::Source)?, self.config.mosaic)
        } else {
            (Vec::new(), MosaicConfig { mix: (0, 4), ..self.config.mosaic })
        };
        mosaic::sample_batch(&source, &target, self.config.mosaic_count, &config, m.mosaic_seed, out)?;
        Ok(())
    }

    fn register_candidates(&self, round: u32, dir: &Path) -> Result<Vec<String>, PipelineError> {
        let err = stage_err(round, Stage::Training);
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "tarc"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(err(format!("trainer produced no .tarc files in {}", dir.display())));
        }
        files
            .iter()
            .map(|f| self.store.put_file(f).map_err(|e| err(e.to_string())))
            .collect()
    }

    fn soup(&self, m: &RoundManifest) -> Result<(String, SoupLog), PipelineError> {
        let err = stage_err(m.round, Stage::Soup);
        let mut seen = BTreeSet::new();
        let ids: Vec<&String> = std::iter::once(&m.checkpoint_in)
            .chain(&m.candidates)
            .filter(|id| seen.insert(id.as_str()))
            .collect();
        let mut evaluator: Box<dyn Evaluator> = match &self.config.soup.eval_command {
            Some(cmd) => {
                let scratch = m.round_dir.join("soup_trials");
                fs::create_dir_all(&scratch).map_err(io_err(&scratch))?;
                Box::new(CommandEvaluator::new(cmd.clone(), scratch))
            }
            None => Box::new(ConstantEvaluator),
        };
        let mut candidates = Vec::with_capacity(ids.len());
        for id in ids {
            let archive = self.store.get(id)?;
            let val_score = evaluator.score(&archive).map_err(|e| PipelineError::Stage {
                round: m.round,
                stage: Stage::Soup,
                message: format!("evaluating {id}: {e}"),
                external: matches!(e, soup::EvalError::Failed { .. } | soup::EvalError::Spawn { .. }),
            })?;
            candidates.push(Candidate {
                id: id.clone(),
                archive,
                val_score,
            });
        }
        let result = soup::greedy_soup(candidates, evaluator.as_mut(), self.config.soup.strict).map_err(|e| match e {
            soup::SoupError::Evaluator { source, ingredient } => PipelineError::Stage {
                round: m.round,
                stage: Stage::Soup,
                external: matches!(source, soup::EvalError::Failed { .. } | soup::EvalError::Spawn { .. }),
                message: format!("evaluating {ingredient}: {source}"),
            },
            other => err(other.to_string()),
        })?;
        let mut archive = result.archive;
        if result.log.ingredients.iter().filter(|i| i.accepted).count() > 1 {
            archive.metadata.insert("round".into(), m.round.to_string());
            archive.metadata.insert("lineage.parent".into(), m.checkpoint_in.clone());
        }
        Ok((self.store.put(&archive)?, result.log))
    }

    fn validate(&self, round: u32, checkpoint: &str, v: &ValidationConfig, dir: &Path) -> Result<MetricsReport, PipelineError> {
        let err = stage_err(round, Stage::Validation);
        let det_dir = dir.join("detections");
        self.infer(round, Stage::Validation, &self.store.path(checkpoint), &v.dataset, &det_dir)?;
        let keep = mot_data::default_keep_classes();
        let mut data = Vec::new();
        for (name, seq) in mot_data::sequence_dirs(&v.dataset).map_err(|e| err(e.to_string()))? {
            let run = || -> Result<SequenceData, String> {
                let info = mot_data::read_seqinfo_file(&seq.join("seqinfo.ini")).map_err(|e| e.to_string())?;
                let gt = mot_data::read_ground_truth_file(&seq.join("gt").join("gt.txt"), &keep).map_err(|e| e.to_string())?;
                let dets = mot_data::read_detections_file(&det_dir.join(format!("{name}.txt"))).map_err(|e| e.to_string())?;
                let pred = tracker::track_detections(v.tracker, &dets, Some(info.frame_count)).map_err(|e| e.to_string())?;
                mot_data::write_annotations_file(&dir.join("results").join(format!("{name}.txt")), &pred)
                    .map_err(|e| e.to_string())?;
                Ok(SequenceData { name: name.clone(), gt, pred })
            };
            data.push(run().map_err(|e| err(format!("{name}: {e}")))?);
        }
        metrics::evaluate(&data).map_err(|e| err(e.to_string()))
    }
}
