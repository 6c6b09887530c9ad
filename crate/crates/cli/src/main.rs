//! `occlude`: generate the synthetic occlusion challenge, train models,
//! segment scenes, evaluate predictions and run the oracle suites.
//!
//! Failures print one line, `error <CODE>: <message>`, and exit nonzero.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use occlusion_core::eval::{
    miou_by_level, order_accuracy, render, run_ablation, MaskMode, ScenePrediction, Variant,
};
use occlusion_core::format::{
    load_challenge, load_predictions, load_scene, read_feature_map, read_model, save_challenge, save_model,
    save_prediction, write_atomic, Manifest, SCENE_DIR,
};
use occlusion_core::learning::{train, AnnotatedMap, AnnotatedObject, TrainConfig, TrainingSet};
use occlusion_core::model::LogPdfCache;
use occlusion_core::oracle::{run_all, Scale};
use occlusion_core::orm::{segment_scene, OccMerge, OrmConfig};
use occlusion_core::synth::{
    generate_challenge, ChallengeConfig, ChallengeWorld, GeneratedScene, GroundTruth, OcclusionLevel, Scenario,
    Split, WorldConfig,
};
use occlusion_core::tensor::BoundingBox;
use occlusion_core::Error;

#[derive(Parser)]
#[command(name = "occlude", version, about = "Occlusion-aware compositional segmentation")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic challenge dataset.
    Generate(GenerateArgs),
    /// Train a model from the training split of a manifest.
    Train(TrainArgs),
    /// Segment one scene, or every scene of a manifest split.
    Segment(SegmentArgs),
    /// Score a prediction directory against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the baseline / NOD / OD ablation over the test split.
    Ablate(AblateArgs),
    /// Run the brute-force equivalence suites.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Comma-separated: two, four, unknown.
    #[arg(long, value_delimiter = ',', default_value = "two,four,unknown")]
    scenarios: Vec<Scenario>,
    /// Scenes per scenario and level, for both splits.
    #[arg(long, default_value_t = 25)]
    per_level: usize,
    /// Overrides --per-level for the training split.
    #[arg(long)]
    train_per_level: Option<usize>,
    /// Overrides --per-level for the test split.
    #[arg(long)]
    test_per_level: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the planted templates and feature components.
    #[arg(long)]
    world_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated class labels (defaults to every class in the manifest).
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    #[arg(long, default_value_t = 64)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 30.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReasoningArgs {
    /// Self-correction passes; 0 is the independent feed-forward baseline.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=2))]
    iters: u8,
    /// Competition without order-based reassignment.
    #[arg(long)]
    no_order: bool,
    /// max or per-object.
    #[arg(long, default_value = "max")]
    occ_merge: OccMerge,
}

impl ReasoningArgs {
    fn config(&self) -> OrmConfig {
        OrmConfig {
            iters: self.iters as usize,
            use_order: !self.no_order,
            occ_merge: self.occ_merge,
            ..OrmConfig::default()
        }
    }
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    model: PathBuf,
    /// Scene annotation (JSON) or bare feature map (FMAP, with --boxes).
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    scene: Option<PathBuf>,
    /// Boxes for a bare feature map: `x0,y0,x1,y1;...`.
    #[arg(long)]
    boxes: Option<String>,
    /// Segment every scene of a manifest split instead of one scene.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[command(flatten)]
    reasoning: ReasoningArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Dataset directory, or a directory of scene annotations.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value = "modal")]
    mode: MaskMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "max")]
    occ_merge: OccMerge,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value = "tiny")]
    scale: Scale,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Usage(String),
    OracleMismatch(String),
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Usage(_) => "E_USAGE",
            CliError::OracleMismatch(_) => "E_ORACLE_MISMATCH",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::OracleMismatch(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error E_USAGE: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error {}: {msg}", e.code());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Segment(a) => segment(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::OracleCheck(a) => oracle_check(a),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(write_atomic(path, s.as_bytes())?)
}

fn generate(a: GenerateArgs) -> CliResult<()> {
    let mut world_config = WorldConfig::default();
    if let Some(s) = a.world_seed {
        world_config.seed = s;
    }
    let world = ChallengeWorld::new(world_config.clone())?;
    let mut scenarios = a.scenarios.clone();
    scenarios.sort_unstable();
    scenarios.dedup();
    let config = ChallengeConfig {
        scenarios,
        train_per_level: a.train_per_level.unwrap_or(a.per_level),
        test_per_level: a.test_per_level.unwrap_or(a.per_level),
        seed: a.seed,
    };
    let scenes = generate_challenge(&world, &config)?;
    let manifest = Manifest::new(a.seed, world_config, world.class_labels.clone());
    let path = save_challenge(&a.out, manifest, &scenes)?;
    let train = scenes.iter().filter(|s| s.split == Split::Train).count();
    println!(
        "generated {} scenes ({train} train, {} test) -> {}",
        scenes.len(),
        scenes.len() - train,
        path.display()
    );
    Ok(())
}

/// Training set restricted to `classes`; objects of other classes stay in
/// the set as occluded boxes so their cells never count as background.
fn training_set_for(labels: &[String], classes: &[String], scenes: &[GeneratedScene]) -> CliResult<TrainingSet> {
    let selected: Vec<String> = if classes.is_empty() {
        labels.to_vec()
    } else {
        classes.to_vec()
    };
    let mut remap = vec![None; labels.len()];
    for (new, name) in selected.iter().enumerate() {
        let old = labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| CliError::Usage(format!("class `{name}` is not in the manifest")))?;
        remap[old] = Some(new);
    }
    let maps = scenes
        .iter()
        .map(|s| AnnotatedMap {
            features: s.features.clone(),
            objects: s
                .truth
                .objects
                .iter()
                .map(|o| {
                    let class = remap.get(o.class).copied().flatten();
                    AnnotatedObject {
                        class: class.unwrap_or(0),
                        bbox: o.bbox,
                        occluded: class.is_none() || o.level != Some(OcclusionLevel::L0),
                    }
                })
                .collect(),
        })
        .collect();
    Ok(TrainingSet {
        class_labels: selected,
        maps,
    })
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let (manifest, scenes) = load_challenge(&a.manifest, Some(Split::Train))?;
    let set = training_set_for(&manifest.class_labels, &a.classes, &scenes)?;
    let config = TrainConfig {
        k: a.k,
        m: a.m,
        sigma: a.sigma,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let report = train(&set, &config)?;
    save_model(&a.out, &report.model)?;
    println!(
        "trained {} classes x {} mixtures, K={} on {} scenes -> {}",
        report.model.classes.len(),
        a.m,
        a.k,
        scenes.len(),
        a.out.display()
    );
    Ok(())
}

fn parse_boxes(spec: &str) -> CliResult<Vec<BoundingBox>> {
    spec.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|b| {
            let v: Vec<i64> = b
                .split(',')
                .map(|x| x.trim().parse::<i64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::Usage(format!("bad box `{b}`")))?;
            match v[..] {
                [x0, y0, x1, y1] => Ok(BoundingBox::new(x0, y0, x1, y1)?),
                _ => Err(CliError::Usage(format!("box `{b}` needs four integers"))),
            }
        })
        .collect()
}

fn segment(a: SegmentArgs) -> CliResult<()> {
    let model = read_model(&a.model)?;
    let labels: Vec<String> = model.classes.iter().map(|c| c.label.clone()).collect();
    let config = a.reasoning.config();
    std::fs::create_dir_all(&a.out)?;

    // (scene id, features, boxes)
    let mut jobs = Vec::new();
    if let Some(manifest) = &a.manifest {
        let (_, scenes) = load_challenge(manifest, Some(a.split))?;
        for s in scenes {
            let boxes = s.truth.objects.iter().map(|o| o.bbox).collect();
            jobs.push((s.id, s.features, boxes));
        }
    } else if let Some(scene) = &a.scene {
        if scene.extension().is_some_and(|e| e == "fmap") {
            let boxes = a
                .boxes
                .as_deref()
                .ok_or_else(|| CliError::Usage("a bare feature map needs --boxes".into()))?;
            let id = scene
                .file_stem()
                .map_or_else(|| "scene".to_string(), |s| s.to_string_lossy().into_owned());
            jobs.push((id, read_feature_map(scene)?, parse_boxes(boxes)?));
        } else {
            let s = load_scene(scene)?;
            let boxes = match &a.boxes {
                Some(b) => parse_boxes(b)?,
                None => s.truth.objects.iter().map(|o| o.bbox).collect(),
            };
            jobs.push((s.id, s.features, boxes));
        }
    }

    for (id, features, boxes) in &jobs {
        let cache = LogPdfCache::new(features, &model.dictionary, &model.occluder)?;
        let result = segment_scene(&cache, boxes, &model.classes, &config)?;
        save_prediction(&a.out, id, &result, &labels)?;
    }
    println!("segmented {} scenes -> {}", jobs.len(), a.out.display());
    Ok(())
}

/// Ground truth for a scene id under a dataset or annotation directory.
fn find_truth(dir: &Path, id: &str) -> CliResult<GroundTruth> {
    for candidate in [dir.join(format!("{id}.json")), dir.join(SCENE_DIR).join(format!("{id}.json"))] {
        if candidate.is_file() {
            return Ok(load_scene(&candidate)?.truth);
        }
    }
    Err(CliError::Core(Error::Malformed(format!(
        "no ground truth for scene `{id}` under {}",
        dir.display()
    ))))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"))
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let predictions = load_predictions(&a.pred)?;
    if predictions.is_empty() {
        return Err(CliError::Core(Error::EmptyDataset(format!(
            "no predictions in {}",
            a.pred.display()
        ))));
    }
    let mut preds: Vec<ScenePrediction> = Vec::with_capacity(predictions.len());
    let mut truths = Vec::with_capacity(predictions.len());
    for (id, p) in predictions {
        truths.push(find_truth(&a.truth, &id)?);
        preds.push(p);
    }
    let table = miou_by_level(&preds, &truths, a.mode)?;
    let accs: Vec<f64> = preds
        .iter()
        .zip(&truths)
        .filter_map(|(p, t)| order_accuracy(&p.graph, &t.order))
        .collect();
    let order = (!accs.is_empty()).then(|| 100.0 * accs.iter().sum::<f64>() / accs.len() as f64);

    let mut header = vec![format!("{} mIoU", match a.mode {
        MaskMode::Modal => "Modal",
        MaskMode::Amodal => "Amodal",
    })];
    header.extend(OcclusionLevel::ALL.iter().map(|l| l.name().to_string()));
    header.push("Mean".into());
    let mut row = vec!["prediction".to_string()];
    row.extend(table.cells());
    let text = format!("{}order accuracy: {}\n", render(&[header, row]), fmt_opt(order));
    print!("{text}");
    write_json(
        &a.out,
        &json!({
            "mode": a.mode,
            "scenes": preds.len(),
            "levels": table,
            "order_accuracy": order,
            "table": text,
        }),
    )
}

fn ablate(a: AblateArgs) -> CliResult<()> {
    let model = read_model(&a.model)?;
    let (_, scenes) = load_challenge(&a.manifest, Some(Split::Test))?;
    if scenes.is_empty() {
        return Err(CliError::Core(Error::EmptyDataset("manifest has no test scenes".into())));
    }
    let base = OrmConfig {
        occ_merge: a.occ_merge,
        ..OrmConfig::default()
    };
    let report = run_ablation(&scenes, &model, &base, &Variant::ALL)?;
    let text = format!(
        "Modal mIoU\n{}\nAmodal mIoU\n{}\nOrder recovery ablation (mean mIoU)\n{}",
        report.level_table(MaskMode::Modal),
        report.level_table(MaskMode::Amodal),
        report.order_ablation_table()
    );
    print!("{text}");
    write_json(
        &a.out,
        &json!({
            "scenes": scenes.len(),
            "report": report,
            "table": text,
        }),
    )
}

fn oracle_check(a: OracleArgs) -> CliResult<()> {
    let outcomes = run_all(a.scale, a.seed)?;
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::OracleMismatch(format!("suites failed: {}", failed.join(", "))))
    }
}
