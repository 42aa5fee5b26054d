//! `adaptrack` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 external command failure.

use adaptrack::metrics::{self, MetricsReport, Scores};
use adaptrack::mosaic::{self, Domain, Interpolation, MosaicConfig};
use adaptrack::mot_data;
use adaptrack::pipeline::{self, Pipeline, PipelineConfig, PipelineError, RoundManifest};
use adaptrack::pseudo_label::{self, PseudoLabelConfig};
use adaptrack::soup::{self, Candidate, CommandEvaluator, EvalError, SoupError, TensorArchive};
use adaptrack::tracker::{self, TrackerConfig};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "adaptrack", version, about = "Tracking-by-detection and synthetic-to-real adaptation toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON config. For `pipeline run` this is the pipeline config; for other
    /// commands an object with optional `tracker`, `pseudo` and `mosaic` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Human)]
    output: OutputFormat,
    /// Worker threads for per-sequence and per-item stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Human,
    Json,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the online tracker over detection files.
    Track(TrackArgs),
    /// Compute HOTA, CLEAR and identity metrics.
    Eval(EvalArgs),
    /// Turn detections into pseudo ground truth.
    Pseudo(PseudoArgs),
    /// Write a batch of cross-domain mosaics.
    Mosaic(MosaicArgs),
    /// Average checkpoints.
    #[command(subcommand)]
    Soup(SoupCmd),
    /// Iterative pseudo-labeling rounds.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Args, Debug)]
struct TrackArgs {
    /// A detection file, or a directory of `<seq>.txt` files or MOT sequences.
    #[arg(long)]
    det: PathBuf,
    /// Output file (for a file input) or directory.
    #[arg(long)]
    out: PathBuf,
    /// seqinfo.ini giving the frame count for a single-file input.
    #[arg(long)]
    seqinfo: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// MOT sequence directories or flat `<seq>.txt` ground truth.
    #[arg(long)]
    gt: PathBuf,
    /// Directory of `<seq>.txt` tracker results.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    seqmap: Option<PathBuf>,
    /// Write the full JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Ground-truth classes to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    classes: Vec<i32>,
}

#[derive(Args, Debug)]
struct PseudoArgs {
    #[arg(long)]
    det: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    /// Take ids from the tracker.
    #[arg(long)]
    track: bool,
    #[arg(long)]
    min_box_area: Option<f64>,
}

#[derive(Args, Debug)]
struct MosaicArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Pseudo-label directory (`<seq>.txt`) for target sequences.
    #[arg(long)]
    target_labels: Option<PathBuf>,
    #[arg(long)]
    count: usize,
    /// Source and target tiles per mosaic, e.g. `2,2`.
    #[arg(long, value_parser = parse_pair::<u8>)]
    mix: Option<(u8, u8)>,
    /// Canvas size, e.g. `1280x1280`.
    #[arg(long, value_parser = parse_size)]
    size: Option<(u32, u32)>,
    /// Center range as canvas fractions, e.g. `0.25,0.75`.
    #[arg(long, value_parser = parse_pair::<f64>)]
    jitter: Option<(f64, f64)>,
    #[arg(long)]
    min_size: Option<f64>,
    #[arg(long)]
    bilinear: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum SoupCmd {
    /// Elementwise mean of archives.
    Uniform {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy soup scored by an external command.
    Greedy {
        /// Lines of `<archive-path> <val-score>`.
        #[arg(long)]
        candidates: PathBuf,
        /// Invoked as `<command> <archive-path>`; prints one number.
        #[arg(long)]
        eval_cmd: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Require a strict improvement to accept an ingredient.
        #[arg(long)]
        strict: bool,
    },
    /// `decay * running + (1 - decay) * new`.
    Ema {
        #[arg(long)]
        running: PathBuf,
        #[arg(long)]
        new: PathBuf,
        #[arg(long)]
        decay: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum PipelineCmd {
    /// Start or continue a run with the config given by `--config`.
    Run {
        #[arg(long, env = "ADAPTRACK_WORKDIR")]
        workdir: PathBuf,
    },
    /// Continue a run with the config stored in the work directory.
    Resume {
        #[arg(long, env = "ADAPTRACK_WORKDIR")]
        workdir: PathBuf,
    },
    /// Show round manifests and the next runnable round.
    Status {
        #[arg(long, env = "ADAPTRACK_WORKDIR")]
        workdir: PathBuf,
    },
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<(T, T), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("bad number {v:?}"));
    Ok((p(a)?, p(b)?))
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected `WxH`, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<u32>().map_err(|_| format!("bad size {v:?}"));
    Ok((p(w)?, p(h)?))
}

/// An error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

/// The cause chain joined with `: `, skipping causes a parent message
/// already spells out.
fn describe(error: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn exit_code(error: &anyhow::Error) -> u8 {
    for cause in error.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            if e.is_external() {
                return 3;
            }
        }
        if let Some(SoupError::Evaluator { source, .. }) = cause.downcast_ref::<SoupError>() {
            if matches!(source, EvalError::Failed { .. } | EvalError::Spawn { .. }) {
                return 3;
            }
        }
    }
    2
}

struct Ctx {
    global: Global,
    settings: Value,
}

impl Ctx {
    fn section<T: serde::de::DeserializeOwned + Default>(&self, key: &str) -> Result<T> {
        match self.settings.get(key) {
            Some(v) => serde_json::from_value(v.clone()).with_context(|| format!("config section `{key}`")),
            None => Ok(T::default()),
        }
    }

    fn emit(&self, human: impl FnOnce() -> String, machine: Value) {
        match self.global.output {
            OutputFormat::Human => println!("{}", human()),
            OutputFormat::Json => println!("{machine}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let format = cli.global.output;
    env_logger::Builder::new()
        .filter_level(match cli.global.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .format_target(false)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            match format {
                OutputFormat::Human => eprintln!("error: {}", describe(&error)),
                OutputFormat::Json => eprintln!("{}", json!({"error": describe(&error), "exit_code": code})),
            }
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            return Err(Failure {
                code: 1,
                error: anyhow!("--jobs must be at least 1"),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure { code: 2, error: e.into() })?;
    }
    let is_pipeline_run = matches!(cli.command, Cmd::Pipeline(PipelineCmd::Run { .. }));
    let settings = match (&cli.global.config, is_pipeline_run) {
        (Some(path), false) => load_settings(path).map_err(|error| Failure { code: 2, error })?,
        _ => Value::Null,
    };
    let ctx = Ctx {
        global: cli.global,
        settings,
    };
    let result = match cli.command {
        Cmd::Track(a) => track(&ctx, a),
        Cmd::Eval(a) => eval(&ctx, a),
        Cmd::Pseudo(a) => pseudo(&ctx, a),
        Cmd::Mosaic(a) => mosaic_cmd(&ctx, a),
        Cmd::Soup(c) => soup_cmd(&ctx, c),
        Cmd::Pipeline(c) => pipeline_cmd(&ctx, c),
    };
    result.map_err(|error| Failure {
        code: exit_code(&error),
        error,
    })
}

fn load_settings(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if !value.is_object() {
        bail!("{}: config must be a JSON object", path.display());
    }
    Ok(value)
}

fn track(ctx: &Ctx, a: TrackArgs) -> Result<()> {
    let config: TrackerConfig = ctx.section("tracker")?;
    config.validate()?;
    let mut written = Vec::new();
    if a.det.is_file() {
        let frames = match &a.seqinfo {
            Some(p) => Some(mot_data::read_seqinfo_file(p)?.frame_count),
            None => None,
        };
        let dets = mot_data::read_detections_file(&a.det)?;
        let records = tracker::track_detections(config, &dets, frames)?;
        mot_data::write_annotations_file(&a.out, &records)?;
        written.push(json!({"input": a.det, "output": a.out, "records": records.len()}));
    } else {
        for (name, path, frames) in pseudo_label::detection_inputs(&a.det)? {
            let dets = mot_data::read_detections_file(&path)?;
            let records = tracker::track_detections(config, &dets, frames).with_context(|| format!("sequence {name}"))?;
            let out = a.out.join(format!("{name}.txt"));
            mot_data::write_annotations_file(&out, &records)?;
            written.push(json!({"sequence": name, "output": out, "records": records.len()}));
        }
    }
    ctx.emit(
        || {
            written
                .iter()
                .map(|w| format!("{} records -> {}", w["records"], w["output"].as_str().unwrap_or_default()))
                .collect::<Vec<_>>()
                .join("\n")
        },
        json!({"tracked": written}),
    );
    Ok(())
}

fn score_row(name: &str, s: &Scores) -> String {
    format!(
        "{name:<20} {:>6.2} {:>6.2} {:>6.2} {:>7.2} {:>6.2} {:>7} {:>7} {:>6}",
        100.0 * s.hota,
        100.0 * s.deta,
        100.0 * s.assa,
        100.0 * s.mota,
        100.0 * s.idf1,
        s.fp,
        s.fn_,
        s.idsw
    )
}

fn report_table(report: &MetricsReport) -> String {
    let mut lines = vec![format!(
        "{:<20} {:>6} {:>6} {:>6} {:>7} {:>6} {:>7} {:>7} {:>6}",
        "sequence", "HOTA", "DetA", "AssA", "MOTA", "IDF1", "FP", "FN", "IDSW"
    )];
    for (name, s) in &report.per_sequence {
        lines.push(score_row(name, s));
    }
    lines.push(score_row("COMBINED", &report.combined));
    lines.join("\n")
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let paths = metrics::discover_sequences(&a.gt, &a.results, a.seqmap.as_deref())?;
    let classes: BTreeSet<i32> = a.classes.into_iter().collect();
    let report = metrics::evaluate_files(&paths, &classes)?;
    if let Some(path) = &a.report {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_vec_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    }
    ctx.emit(|| report_table(&report), serde_json::to_value(&report)?);
    Ok(())
}

fn pseudo(ctx: &Ctx, a: PseudoArgs) -> Result<()> {
    let mut config: PseudoLabelConfig = ctx.section("pseudo")?;
    if let Some(t) = a.threshold {
        config.confidence_threshold = t;
    }
    if let Some(m) = a.min_box_area {
        config.min_box_area = m;
    }
    if a.track {
        config.assign_ids = true;
        if ctx.settings.get("tracker").is_some() {
            config.tracker = ctx.section("tracker")?;
        }
    }
    let outputs = pseudo_label::generate_directory(&a.det, &a.out, &config)?;
    ctx.emit(
        || {
            outputs
                .iter()
                .map(|o| format!("{}: {} of {} detections kept", o.sequence, o.labels, o.input_detections))
                .collect::<Vec<_>>()
                .join("\n")
        },
        json!({"threshold": config.confidence_threshold, "sequences": outputs}),
    );
    Ok(())
}

fn mosaic_cmd(ctx: &Ctx, a: MosaicArgs) -> Result<()> {
    let mut config: MosaicConfig = ctx.section("mosaic")?;
    if let Some(mix) = a.mix {
        config.mix = mix;
    }
    if let Some((w, h)) = a.size {
        config.canvas_w = w;
        config.canvas_h = h;
    }
    if let Some(j) = a.jitter {
        config.jitter = j;
    }
    if let Some(m) = a.min_size {
        config.min_size = m;
    }
    if a.bilinear {
        config.interpolation = Interpolation::Bilinear;
    }
    config.validate()?;
    let source = if config.mix.0 > 0 {
        mosaic::load_pool(&a.source, None, Domain::Source)?
    } else {
        Vec::new()
    };
    let target = if config.mix.1 > 0 {
        mosaic::load_pool(&a.target, a.target_labels.as_deref(), Domain::Target)?
    } else {
        Vec::new()
    };
    let seed = ctx.global.seed.unwrap_or(0);
    let entries = mosaic::sample_batch(&source, &target, a.count, &config, seed, &a.out)?;
    let manifest = a.out.join(mosaic::MANIFEST_FILE);
    ctx.emit(
        || format!("{} mosaics written to {} (seed {seed})", entries.len(), a.out.display()),
        json!({"count": entries.len(), "seed": seed, "manifest": manifest}),
    );
    Ok(())
}

fn read(path: &Path) -> Result<TensorArchive> {
    Ok(soup::read_archive_file(path)?)
}

fn soup_cmd(ctx: &Ctx, c: SoupCmd) -> Result<()> {
    match c {
        SoupCmd::Uniform { inputs, out } => {
            let archives = inputs.iter().map(|p| read(p)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&TensorArchive> = archives.iter().collect();
            let id = soup::write_archive_file(&out, &soup::uniform_soup(&refs)?)?;
            ctx.emit(
                || format!("uniform soup of {} archives -> {} ({id})", inputs.len(), out.display()),
                json!({"out": out, "id": id, "ingredients": inputs.len()}),
            );
        }
        SoupCmd::Greedy {
            candidates,
            eval_cmd,
            out,
            log,
            strict,
        } => {
            let list = soup::read_candidate_list(&candidates)?;
            if list.is_empty() {
                bail!("{}: no candidates", candidates.display());
            }
            let parsed = list
                .iter()
                .map(|(path, val_score)| {
                    let archive = read(path)?;
                    Ok(Candidate {
                        id: archive.id()?,
                        archive,
                        val_score: *val_score,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let scratch = out.with_extension("trials");
            fs::create_dir_all(&scratch).with_context(|| format!("creating {}", scratch.display()))?;
            let mut evaluator = CommandEvaluator::new(eval_cmd, &scratch);
            let result = soup::greedy_soup(parsed, &mut evaluator, strict)?;
            let _ = fs::remove_dir_all(&scratch);
            let id = soup::write_archive_file(&out, &result.archive)?;
            if let Some(log) = &log {
                fs::write(log, serde_json::to_vec_pretty(&result.log)?).with_context(|| format!("writing {}", log.display()))?;
            }
            let accepted = result.log.ingredients.iter().filter(|i| i.accepted).count();
            ctx.emit(
                || {
                    format!(
                        "greedy soup: {accepted} of {} accepted, score {} -> {} ({id})",
                        result.log.ingredients.len(),
                        result.log.final_score,
                        out.display()
                    )
                },
                json!({"out": out, "id": id, "log": result.log}),
            );
        }
        SoupCmd::Ema { running, new, decay, out } => {
            let id = soup::write_archive_file(&out, &soup::ema_update(&read(&running)?, &read(&new)?, decay)?)?;
            ctx.emit(|| format!("ema (decay {decay}) -> {} ({id})", out.display()), json!({"out": out, "id": id}));
        }
    }
    Ok(())
}

fn manifest_line(m: &RoundManifest) -> String {
    let stage = m.failed_stage.map(|s| format!(" at {s}")).unwrap_or_default();
    format!(
        "round {} (attempt {}): {:?}{stage}, in {} out {}",
        m.round,
        m.attempt,
        m.status,
        &m.checkpoint_in[..12.min(m.checkpoint_in.len())],
        m.checkpoint_out.as_deref().map(|s| &s[..12.min(s.len())]).unwrap_or("-")
    )
}

fn pipeline_cmd(ctx: &Ctx, c: PipelineCmd) -> Result<()> {
    match c {
        PipelineCmd::Run { workdir } => {
            let path = ctx.global.config.as_ref().ok_or_else(|| anyhow!("pipeline run needs --config"))?;
            let mut config = PipelineConfig::from_json_file(path)?;
            if let Some(seed) = ctx.global.seed {
                config.mosaic_seed = seed;
            }
            let done = Pipeline::init(&workdir, config)?.run()?;
            report_rounds(ctx, &workdir, &done)
        }
        PipelineCmd::Resume { workdir } => {
            let done = Pipeline::open(&workdir)?.run()?;
            report_rounds(ctx, &workdir, &done)
        }
        PipelineCmd::Status { workdir } => {
            let manifests = pipeline::load_manifests(&workdir)?;
            let next = pipeline::resume(&workdir)?;
            let lineage = if next == 0 {
                None
            } else {
                Some(pipeline::verify_lineage(&workdir).map_err(|e| e.to_string()))
            };
            ctx.emit(
                || {
                    let mut lines: Vec<String> = manifests.iter().map(manifest_line).collect();
                    lines.push(format!("next round: {next}"));
                    if let Some(Err(e)) = &lineage {
                        lines.push(format!("lineage: {e}"));
                    }
                    lines.join("\n")
                },
                json!({
                    "next_round": next,
                    "rounds": manifests,
                    "lineage_ok": lineage.as_ref().map(|l| l.is_ok()),
                }),
            );
            Ok(())
        }
    }
}

fn report_rounds(ctx: &Ctx, workdir: &Path, done: &[RoundManifest]) -> Result<()> {
    pipeline::verify_lineage(workdir)?;
    ctx.emit(
        || {
            if done.is_empty() {
                "nothing to do: all rounds complete".to_string()
            } else {
                done.iter().map(manifest_line).collect::<Vec<_>>().join("\n")
            }
        },
        json!({"rounds": done, "next_round": pipeline::resume(workdir)?}),
    );
    Ok(())
}
