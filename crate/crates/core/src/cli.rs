//! Command-line driver. Each subcommand reads and writes files, embedding
//! the resolved [`PipelineConfig`] in every artifact it writes; passing an
//! artifact back through `--config` re-runs the command that produced it.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::annotation::{load_labels, mechanical_annotate, save_labels, SegLevelLabelSet};
use crate::artifact::{read_json, write_json};
use crate::config::{PathsConfig, PipelineConfig};
use crate::error::Error;
use crate::eval::{instance_iou, report_csv, report_json, semantic_iou, stage_report, IoUReport};
use crate::network::NetworkParams;
use crate::overseg::{oversegment, segmentation_from_json, segmentation_to_json};
use crate::pipeline::{
    derive_pseudo_labels, seggroup_forward, snapshots_from_json, snapshots_to_json, PseudoLabels, SceneInput,
    FINAL_STAGE, NUM_STAGES,
};
use crate::scene::{
    generate_synthetic, load_ground_truth, load_scene, save_ground_truth_with_config, save_scene_with_config,
    RoomSpec, SceneFormat, Segmentation,
};
use crate::train::{load_checkpoint, loss_log_csv, save_checkpoint, train};

const DEFAULT_INSTANCES: usize = 4;

#[derive(Debug, Parser)]
#[command(name = "seggroup", version, about = "Dense pseudo labels from one click per instance")]
pub struct Cli {
    /// Report errors as JSON on stderr.
    #[arg(long, global = true)]
    pub json: bool,
    /// Start from the configuration embedded in an artifact (or a bare
    /// config JSON); explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic room with ground truth.
    Gen(GenArgs),
    /// Over-segment a scene.
    Overseg(OversegArgs),
    /// Synthesize one click per ground-truth instance.
    AnnotateMech(AnnotateArgs),
    /// Group segments into labeled instances.
    Group(GroupArgs),
    /// Train the grouping network.
    Train(TrainArgs),
    /// Score pseudo labels against ground truth.
    Eval(EvalArgs),
    /// Dump the segment graph of one grouping stage.
    Inspect(InspectArgs),
    /// Serve scenes and labels to the annotation tool.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Instance count including the floor.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Output scene (.ply or .json).
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output ground truth JSON.
    #[arg(long)]
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OversegArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub min_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub segments: Option<PathBuf>,
    #[arg(long, value_parser = parse_top_n)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GroupArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub segments: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Output pseudo labels JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output per-stage graph snapshots JSON.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    /// Trained parameters; without one the network is freshly initialized.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with scene.ply or scene.json, segments.json and labels.json.
    /// Repeat for several scenes.
    #[arg(long)]
    pub scene_dir: Vec<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output checkpoint JSON.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Pseudo labels JSON.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Per-stage snapshots; adds one report row per stage.
    #[arg(long, requires = "segments")]
    pub snapshots: Option<PathBuf>,
    #[arg(long)]
    pub segments: Option<PathBuf>,
    /// Output CSV report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub segments: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Stage 0 (input graph) to 4 (final).
    #[arg(long, value_parser = clap::value_parser!(u64).range(0..NUM_STAGES as u64))]
    pub stage: Option<u64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

fn parse_top_n(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n @ 1..=3) => Ok(n),
        _ => Err("top-n must be 1, 2, or 3".into()),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(e) if e.is_data_error() => 2,
            CliError::Lib(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "usage",
            2 => "data",
            _ => "runtime",
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            if args.iter().any(|a| a == "--json") {
                report(&CliError::Usage(e.render().to_string().trim().to_string()), true);
            } else {
                let _ = e.print();
            }
            return 1;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            report(&e, cli.json);
            e.exit_code()
        }
    }
}

fn report(e: &CliError, as_json: bool) {
    if as_json {
        let v = json!({ "error": { "kind": e.kind(), "code": e.exit_code(), "message": e.to_string() } });
        eprintln!("{v}");
    } else {
        eprintln!("error: {e}");
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let name = match &cli.command {
        Command::Gen(_) => "gen",
        Command::Overseg(_) => "overseg",
        Command::AnnotateMech(_) => "annotate-mech",
        Command::Group(_) => "group",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Inspect(_) => "inspect",
        Command::Serve(_) => "serve",
    };
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_artifact(p)?,
        None => PipelineConfig::default(),
    };
    if cfg.command.as_deref() != Some(name) {
        cfg.paths = PathsConfig::default();
    }
    cfg.command = Some(name.to_string());
    match &cli.command {
        Command::Gen(a) => gen(a, cfg),
        Command::Overseg(a) => overseg(a, cfg),
        Command::AnnotateMech(a) => annotate(a, cfg),
        Command::Group(a) => group(a, cfg),
        Command::Train(a) => train_cmd(a, cfg),
        Command::Eval(a) => eval(a, cfg),
        Command::Inspect(a) => inspect(a, cfg),
        Command::Serve(a) => serve(a, cfg),
    }
}

/// Takes the flag if given, else the path recorded in the config.
fn path_arg(flag: &Option<PathBuf>, slot: &mut Option<String>, name: &str) -> CliResult<PathBuf> {
    if let Some(p) = flag {
        *slot = Some(p.display().to_string());
    }
    slot.as_ref()
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage(format!("missing required flag --{name}")))
}

fn optional_path(flag: &Option<PathBuf>, slot: &mut Option<String>) -> Option<PathBuf> {
    if let Some(p) = flag {
        *slot = Some(p.display().to_string());
    }
    slot.as_ref().map(PathBuf::from)
}

fn load_scene_any(path: &Path) -> crate::Result<crate::scene::Scene> {
    load_scene(path, SceneFormat::from_path(path)?)
}

fn load_segments(path: &Path) -> crate::Result<Segmentation> {
    segmentation_from_json(&read_json(path)?)
}

fn labels_num_classes(labels: &SegLevelLabelSet) -> usize {
    let from_labels = labels.labels.iter().map(|l| l.semantic_class as usize + 1).max().unwrap_or(0);
    let from_names = labels.classes.keys().next_back().map_or(0, |&c| c as usize + 1);
    from_labels.max(from_names).max(1)
}

fn gen(a: &GenArgs, mut cfg: PipelineConfig) -> CliResult<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.seed.is_some() || a.instances.is_some() || cfg.room.is_none() {
        let total = a
            .instances
            .or_else(|| cfg.room.as_ref().map(|r| r.instances.iter().map(|i| i.count).sum()))
            .unwrap_or(DEFAULT_INSTANCES);
        if total < 2 {
            return Err(CliError::Usage("--instances must be at least 2 (floor plus furniture)".into()));
        }
        cfg.room = Some(RoomSpec::random(cfg.seed, total - 1));
    }
    let scene_path = path_arg(&a.scene, &mut cfg.paths.scene, "scene")?;
    let gt_path = path_arg(&a.gt, &mut cfg.paths.ground_truth, "gt")?;
    let room = cfg.room.clone().expect("room set above");
    let (scene, gt) = generate_synthetic(&room)?;
    save_scene_with_config(&scene, &scene_path, SceneFormat::from_path(&scene_path)?, Some(&cfg))?;
    save_ground_truth_with_config(&gt, &gt_path, Some(&cfg))?;
    println!("generated {} points, {} instances", scene.len(), gt.instances().len());
    Ok(())
}

fn overseg(a: &OversegArgs, mut cfg: PipelineConfig) -> CliResult<()> {
    let scene_path = path_arg(&a.scene, &mut cfg.paths.scene, "scene")?;
    let out = path_arg(&a.out, &mut cfg.paths.out, "out")?;
    let o = &mut cfg.overseg;
    o.k = a.k.unwrap_or(o.k);
    o.kappa = a.kappa.unwrap_or(o.kappa);
    o.min_size = a.min_size.unwrap_or(o.min_size);
    let scene = load_scene_any(&scene_path)?;
    let result = oversegment(&scene, cfg.overseg.k, cfg.overseg.kappa, cfg.overseg.min_size)?;
    write_json(&out, segmentation_to_json(&result.segmentation), Some(&cfg))?;
    println!("{} segments", result.segmentation.num_segments());
    Ok(())
}

fn annotate(a: &AnnotateArgs, mut cfg: PipelineConfig) -> CliResult<()> {
    let gt_path = path_arg(&a.gt, &mut cfg.paths.ground_truth, "gt")?;
    let seg_path = path_arg(&a.segments, &mut cfg.paths.segments, "segments")?;
    let out = path_arg(&a.out, &mut cfg.paths.out, "out")?;
    cfg.top_n = a.top_n.unwrap_or(cfg.top_n);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let gt = load_ground_truth(&gt_path)?;
    let seg = load_segments(&seg_path)?;
    let labels = mechanical_annotate(&gt, &seg, cfg.top_n, cfg.seed)?;
    save_labels(&labels, &out, Some(&cfg))?;
    println!("{} labels", labels.labels.len());
    Ok(())
}

struct GroupInputs {
    input: SceneInput,
    params: NetworkParams,
}

fn group_inputs(
    scene: &Option<PathBuf>,
    segments: &Option<PathBuf>,
    labels: &Option<PathBuf>,
    checkpoint: &Option<PathBuf>,
    cfg: &mut PipelineConfig,
) -> CliResult<GroupInputs> {
    let scene_path = path_arg(scene, &mut cfg.paths.scene, "scene")?;
    let seg_path = path_arg(segments, &mut cfg.paths.segments, "segments")?;
    let labels_path = path_arg(labels, &mut cfg.paths.labels, "labels")?;
    let checkpoint = optional_path(checkpoint, &mut cfg.paths.checkpoint);
    cfg.grouping.validate()?;
    let scene = load_scene_any(&scene_path)?;
    let seg = load_segments(&seg_path)?;
    let labels = load_labels(&labels_path, Some(&seg))?;
    let num_classes = labels_num_classes(&labels);
    let params = match checkpoint {
        Some(p) => {
            let params = load_checkpoint(&p)?;
            if params.num_classes() < num_classes {
                return Err(Error::validation(
                    "checkpoint",
                    format!("has {} classes, labels need {num_classes}", params.num_classes()),
                )
                .into());
            }
            params
        }
        None => NetworkParams::init(num_classes, cfg.grouping.k_points, cfg.grouping.lambda, cfg.train.seed)?,
    };
    let name = scene_path.display().to_string();
    let input = SceneInput::new(name, scene, seg, labels, &cfg.grouping)?;
    Ok(GroupInputs { input, params })
}

fn group(a: &GroupArgs, mut cfg: PipelineConfig) -> CliResult<()> {
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let out = path_arg(&a.out, &mut cfg.paths.out, "out")?;
    let snapshots = optional_path(&a.snapshots, &mut cfg.paths.snapshots);
    let g = group_inputs(&a.scene, &a.segments, &a.labels, &a.checkpoint, &mut cfg)?;
    let pass = seggroup_forward(&g.input, &g.params, &cfg.grouping, cfg.seed, None, false)?;
    let pseudo = derive_pseudo_labels(pass.final_graph(), &g.input.segmentation)?;
    let value = serde_json::to_value(&pseudo).map_err(|e| Error::json("pseudo labels", e))?;
    write_json(&out, value, Some(&cfg))?;
    if let Some(p) = snapshots {
        write_json(&p, snapshots_to_json(&pass.snapshots), Some(&cfg))?;
    }
    let counts: Vec<String> = pass.snapshots.iter().map(|s| s.len().to_string()).collect();
    println!("nodes per stage: {}; coverage {:.4}", counts.join(" -> "), pseudo.coverage());
    Ok(())
}

fn scene_dir_input(dir: &Path, grouping: &crate::pipeline::GroupingConfig) -> crate::Result<SceneInput> {
    let scene_path = ["scene.ply", "scene.json"]
        .iter()
        .map(|f| dir.join(f))
        .find(|p| p.exists())
        .ok_or_else(|| Error::validation(dir.display().to_string(), "no scene.ply or scene.json"))?;
    let scene = load_scene_any(&scene_path)?;
    let seg = load_segments(&dir.join("segments.json"))?;
    let labels = load_labels(&dir.join("labels.json"), Some(&seg))?;
    SceneInput::new(dir.display().to_string(), scene, seg, labels, grouping)
}

fn train_cmd(a: &TrainArgs, mut cfg: PipelineConfig) -> CliResult<()> {
    if !a.scene_dir.is_empty() {
        cfg.paths.scene_dirs = a.scene_dir.iter().map(|p| p.display().to_string()).collect();
    }
    if cfg.paths.scene_dirs.is_empty() {
        return Err(CliError::Usage("missing required flag --scene-dir".into()));
    }
    let checkpoint = path_arg(&a.checkpoint, &mut cfg.paths.checkpoint, "checkpoint")?;
    let loss_csv = optional_path(&a.loss_csv, &mut cfg.paths.loss_csv);
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.learning_rate = a.lr.unwrap_or(t.learning_rate);
    t.momentum = a.momentum.unwrap_or(t.momentum);
    t.seed = a.seed.unwrap_or(t.seed);
    cfg.train.validate()?;
    cfg.grouping.validate()?;
    let dataset: Vec<SceneInput> = cfg
        .paths
        .scene_dirs
        .iter()
        .map(|d| scene_dir_input(Path::new(d), &cfg.grouping))
        .collect::<crate::Result<_>>()?;
    let num_classes = dataset.iter().map(|s| labels_num_classes(&s.labels)).max().unwrap_or(1);
    let init = NetworkParams::init(num_classes, cfg.grouping.k_points, cfg.grouping.lambda, cfg.train.seed)?;
    let outcome = train(&dataset, init, &cfg.train, &cfg.grouping, |e| {
        log::info!("epoch {} loss {:.6}", e.epoch, e.mean_loss)
    })?;
    save_checkpoint(&outcome.params, &checkpoint, Some(&cfg))?;
    if let Some(p) = loss_csv {
        crate::scene::io::write_bytes(&p, loss_log_csv(&outcome.losses, Some(&cfg))?.as_bytes())?;
    }
    if let (Some(first), Some(last)) = (outcome.losses.first(), outcome.losses.last()) {
        println!(
            "trained {} epochs on {} scenes; loss {:.6} -> {:.6}",
            outcome.losses.len(),
            dataset.len(),
            first.mean_loss,
            last.mean_loss
        );
    }
    Ok(())
}

fn eval(a: &EvalArgs, mut cfg: PipelineConfig) -> CliResult<()> {
    let pred_path = path_arg(&a.pred, &mut cfg.paths.pred, "pred")?;
    let gt_path = path_arg(&a.gt, &mut cfg.paths.ground_truth, "gt")?;
    let out = path_arg(&a.out, &mut cfg.paths.out, "out")?;
    let snapshots = optional_path(&a.snapshots, &mut cfg.paths.snapshots);
    let segments = optional_path(&a.segments, &mut cfg.paths.segments);
    let json_out = optional_path(&a.json_out, &mut cfg.paths.json_out);
    let gt = load_ground_truth(&gt_path)?;
    let pred: PseudoLabels = serde_json::from_value(read_json(&pred_path)?)
        .map_err(|e| Error::json(pred_path.display().to_string(), e))?;
    let final_report = semantic_iou(&pred.semantic, &gt)?;
    let mut rows: Vec<(String, IoUReport)> = Vec::new();
    if let Some(snap_path) = snapshots {
        let seg_path = segments.ok_or_else(|| CliError::Usage("--snapshots requires --segments".into()))?;
        let graphs = snapshots_from_json(&read_json(&snap_path)?)?;
        let seg = load_segments(&seg_path)?;
        for (i, r) in stage_report(&graphs, &seg, &gt)?.into_iter().enumerate() {
            let name = if i == FINAL_STAGE { "final".to_string() } else { format!("layer{i}") };
            rows.push((name, r));
        }
    } else {
        rows.push(("final".to_string(), final_report.clone()));
    }
    let instance = instance_iou(&pred, &gt)?;
    let num_classes = gt
        .num_classes()
        .max(pred.semantic.iter().map(|&c| c + 1).max().unwrap_or(0).max(0) as usize);
    let csv = report_csv(&rows, num_classes, &gt.classes, Some(&cfg))?;
    crate::scene::io::write_bytes(&out, csv.as_bytes())?;
    if let Some(p) = json_out {
        write_json(&p, report_json(&rows, Some(&instance)), Some(&cfg))?;
    }
    println!(
        "mean IoU: {:.4} (instance {:.4}, coverage {:.4})",
        final_report.mean, instance.mean, final_report.coverage
    );
    Ok(())
}

fn inspect(a: &InspectArgs, mut cfg: PipelineConfig) -> CliResult<()> {
    let out = path_arg(&a.out, &mut cfg.paths.out, "out")?;
    let g = group_inputs(&a.scene, &a.segments, &a.labels, &a.checkpoint, &mut cfg)?;
    if let Some(s) = a.stage {
        cfg.inspect_stage = Some(s as usize);
    }
    let stage = cfg.inspect_stage.unwrap_or(FINAL_STAGE);
    if stage > FINAL_STAGE {
        return Err(Error::validation("inspect_stage", format!("must be at most {FINAL_STAGE}")).into());
    }
    let pass = seggroup_forward(&g.input, &g.params, &cfg.grouping, cfg.seed, None, false)?;
    let graph = &pass.snapshots[stage];
    let mut dump = graph.to_dump_json();
    dump["stage"] = json!(stage);
    write_json(&out, dump, Some(&cfg))?;
    println!(
        "stage {stage}: {} nodes ({} labeled), {} edges",
        graph.len(),
        graph.labeled_count(),
        graph.edges().len()
    );
    Ok(())
}

fn serve(a: &ServeArgs, mut cfg: PipelineConfig) -> CliResult<()> {
    let dir = path_arg(&a.data_dir, &mut cfg.paths.data_dir, "data-dir")?;
    let state = crate::server::AppState::load_data_dir(&dir)?;
    println!("serving {} scenes on port {}", state.scene_ids().len(), a.port);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io(&dir, e))?;
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], a.port));
    runtime.block_on(crate::server::serve(state, addr))?;
    Ok(())
}
