//! Batch front end for the scenetext pipeline.
//!
//! Every command reads only its declared inputs, writes only to its output
//! path (or stdout), and produces byte-identical output for identical inputs
//! and seeds. Exit codes: 0 success, 1 validation error, 2 I/O error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use scenetext::complexity::write_complexity_csv;
use scenetext::error::{Error, Result};
use scenetext::explain::{AdvisoryRuleSet, ExplainConfig, Explainer, FrameInput};
use scenetext::features::{extract_features, feature_names, rfe_select, LabeledDataset};
use scenetext::gbdt::{train, BoostedEnsemble, TrainConfig};
use scenetext::labelmap::{
    gray_to_labelmap, load_labelmap, load_rgb, migrate, rgb_to_gray, save_gray, save_labelmap, ClassMigrationMap,
    ClassTaxonomy, GrayMode, LabelMap, RgbImage,
};
use scenetext::metrics::{confusion, cross_entropy, AbsentPolicy, ConfusionMatrix, ProbabilityField, SegmentationReport};
use scenetext::motion::{self, DbscanParams, TrackParams};
use scenetext::scenario::{cross_validate, RoadRuleSet, ScenarioLabel};
use scenetext::synth::{generate_corpus, write_sequence, SceneSpec};

#[derive(Debug, Parser)]
#[command(name = "scenetext", version, about = "Driving scene understanding from semantic label maps")]
pub struct Cli {
    /// JSON run configuration; flags override keys of the same name.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for frame-level parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert RGB images (PPM or PNG) to gray PGM.
    Gray {
        input: PathBuf,
        output: PathBuf,
        /// normalized or literal
        #[arg(long)]
        mode: Option<String>,
        /// Write class label maps instead of gray levels.
        #[arg(long)]
        labels: bool,
        /// Class taxonomy JSON; defaults to the built-in 23-class driving taxonomy.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Confusion matrix, mIoU, cross-entropy and F1 of predicted label maps.
    EvalSeg {
        pred_dir: PathBuf,
        truth_dir: PathBuf,
        /// exclude-absent or include-absent
        #[arg(long)]
        policy: Option<String>,
        /// Class taxonomy JSON; defaults to the built-in 23-class driving taxonomy.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Write output here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Remap label maps from a source taxonomy onto a target taxonomy.
    Migrate {
        input: PathBuf,
        rules: PathBuf,
        output: PathBuf,
        /// Source taxonomy; defaults to the 19 Cityscapes train classes.
        #[arg(long)]
        source_taxonomy: Option<PathBuf>,
        /// Class taxonomy JSON; defaults to the built-in 23-class driving taxonomy.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Per-class feature matrix of labelled frames.
    Extract {
        frames: PathBuf,
        output: PathBuf,
        /// `frame_id,label` CSV; defaults to labels.csv beside the frames.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Class taxonomy JSON; defaults to the built-in 23-class driving taxonomy.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Train the scenario classifier.
    Train {
        features: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        params: TrainArgs,
    },
    /// Recursive feature elimination report.
    Select {
        features: PathBuf,
        /// Cross-validation folds [default: 5].
        #[arg(long)]
        folds: Option<usize>,
        /// Stop eliminating at this many features [default: 4].
        #[arg(long)]
        target_size: Option<usize>,
        #[command(flatten)]
        params: TrainArgs,
        /// Write output here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Conflict-object trajectories, kinematics and TTC as CSV.
    Track {
        frames: PathBuf,
        #[command(flatten)]
        motion: MotionArgs,
        /// Class taxonomy JSON; defaults to the built-in 23-class driving taxonomy.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Write output here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-frame explanation reports as NDJSON.
    Explain {
        frames: PathBuf,
        /// Directory of RGB frames (PPM or PNG) matched by stem, for light colors.
        #[arg(long)]
        rgb_dir: Option<PathBuf>,
        /// Trained scenario model JSON.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Advisory rule file.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Road-type rule file; defaults to the built-in rules.
        #[arg(long)]
        road_rules: Option<PathBuf>,
        #[command(flatten)]
        motion: MotionArgs,
        /// Segmentation accuracy in percent used for complexity.
        #[arg(long)]
        variety_m: Option<f64>,
        /// Normalizer for the element count; defaults to the taxonomy size minus background.
        #[arg(long)]
        n_max: Option<usize>,
        /// Class taxonomy JSON; defaults to the built-in 23-class driving taxonomy.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Human-readable blocks instead of NDJSON.
        #[arg(long)]
        text: bool,
        /// Also write per-frame complexity rows here.
        #[arg(long)]
        complexity_csv: Option<PathBuf>,
        /// Write output here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic scene sequence or a labelled corpus.
    Synth {
        output: PathBuf,
        /// Scene spec JSON; renders one sequence.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Corpus size when no spec is given [default: 400].
        #[arg(long)]
        count: Option<usize>,
        /// Random seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Stratified cross-validation confusion matrix and macro F1.
    Cv {
        features: PathBuf,
        /// Cross-validation folds [default: 5].
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        params: TrainArgs,
        /// Write output here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainArgs {
    /// Boosting rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Maximum tree depth.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Minimum split gain.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// L2 regularization on leaf weights.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Minimum hessian sum per child.
    #[arg(long)]
    pub min_child_weight: Option<f64>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct MotionArgs {
    /// Comma-separated conflict class names.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// DBSCAN radius in pixels; defaults to 2% of the frame diagonal.
    #[arg(long)]
    pub eps: Option<f64>,
    /// DBSCAN core-point threshold [default: 8].
    #[arg(long)]
    pub min_pts: Option<usize>,
    /// Frame rate [default: 25].
    #[arg(long)]
    pub fps: Option<f64>,
    /// Largest per-frame displacement a track may make; defaults to 10% of the diagonal.
    #[arg(long)]
    pub max_jump: Option<f64>,
    /// Image row of the ego vehicle; defaults to the frame height.
    #[arg(long)]
    pub ego_row: Option<f64>,
}

/// Keys shared by all commands. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub taxonomy: Option<PathBuf>,
    pub source_taxonomy: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub road_rules: Option<PathBuf>,
    pub rgb_dir: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub classes: Option<Vec<String>>,
    pub eps: Option<f64>,
    pub min_pts: Option<usize>,
    pub fps: Option<f64>,
    pub max_jump: Option<f64>,
    pub ego_row: Option<f64>,
    pub variety_m: Option<f64>,
    pub n_max: Option<usize>,
    pub mode: Option<String>,
    pub policy: Option<String>,
    pub folds: Option<usize>,
    pub target_size: Option<usize>,
    pub rounds: Option<usize>,
    pub depth: Option<usize>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub eta: Option<f64>,
    pub min_child_weight: Option<f64>,
    pub seed: Option<u64>,
    pub count: Option<usize>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.taxonomy,
            &mut cfg.source_taxonomy,
            &mut cfg.model,
            &mut cfg.rules,
            &mut cfg.road_rules,
            &mut cfg.rgb_dir,
            &mut cfg.labels,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(Error::invalid(format!("config {}: {} does not exist", path.display(), p.display())));
            }
        }
        Ok(cfg)
    }

    fn train_config(&self, args: &TrainArgs) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            rounds: args.rounds.or(self.rounds).unwrap_or(d.rounds),
            max_depth: args.depth.or(self.depth).unwrap_or(d.max_depth),
            gamma: args.gamma.or(self.gamma).unwrap_or(d.gamma),
            lambda: args.lambda.or(self.lambda).unwrap_or(d.lambda),
            learning_rate: args.eta.or(self.eta).unwrap_or(d.learning_rate),
            min_child_weight: args.min_child_weight.or(self.min_child_weight).unwrap_or(d.min_child_weight),
            seed: args.seed.or(self.seed).unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn taxonomy(&self, flag: &Option<PathBuf>) -> Result<ClassTaxonomy> {
        match flag.as_ref().or(self.taxonomy.as_ref()) {
            Some(p) => ClassTaxonomy::load(p),
            None => Ok(ClassTaxonomy::driving_default()),
        }
    }

    /// Clustering parameters, with unset keys taken from the frame-size defaults.
    fn dbscan_params(&self, m: &MotionArgs, width: usize, height: usize) -> DbscanParams {
        let d = DbscanParams::for_frame(width, height);
        DbscanParams {
            eps: m.eps.or(self.eps).unwrap_or(d.eps),
            min_pts: m.min_pts.or(self.min_pts).unwrap_or(d.min_pts),
        }
    }

    fn explain_config(&self, m: &MotionArgs, variety_m: Option<f64>, n_max: Option<usize>) -> ExplainConfig {
        let d = ExplainConfig::default();
        ExplainConfig {
            conflict_classes: m.classes.clone().or(self.classes.clone()).unwrap_or(d.conflict_classes),
            dbscan: None,
            fps: m.fps.or(self.fps).unwrap_or(d.fps),
            max_jump: m.max_jump.or(self.max_jump),
            ego_row: m.ego_row.or(self.ego_row),
            variety_m: variety_m.or(self.variety_m).unwrap_or(d.variety_m),
            n_max: n_max.or(self.n_max),
            ..d
        }
    }
}

/// 1 for validation errors, 2 for I/O errors.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing primary output to `out`.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::invalid(e.to_string()))?;
    run(cli, out)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let jobs = cli.jobs.or(cfg.jobs);
    match jobs {
        Some(0) => Err(Error::invalid("--jobs must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(e.to_string()))?;
            let mut buf = Vec::new();
            let result = pool.install(|| dispatch(cli.command, &cfg, &mut buf));
            out.write_all(&buf).map_err(|e| Error::io("<output>", e))?;
            result
        }
        None => dispatch(cli.command, &cfg, out),
    }
}

fn dispatch(command: Command, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Gray {
            input,
            output,
            mode,
            labels,
            taxonomy,
        } => cmd_gray(cfg, &input, &output, mode, labels, &taxonomy).map_err(|e| e.at_stage("gray")),
        Command::EvalSeg {
            pred_dir,
            truth_dir,
            policy,
            taxonomy,
            out: path,
        } => emit(out, &path, |w| cmd_eval_seg(cfg, &pred_dir, &truth_dir, policy, &taxonomy, w))
            .map_err(|e| e.at_stage("eval-seg")),
        Command::Migrate {
            input,
            rules,
            output,
            source_taxonomy,
            taxonomy,
        } => cmd_migrate(cfg, &input, &rules, &output, &source_taxonomy, &taxonomy).map_err(|e| e.at_stage("migrate")),
        Command::Extract {
            frames,
            output,
            labels,
            taxonomy,
        } => cmd_extract(cfg, &frames, &output, labels, &taxonomy).map_err(|e| e.at_stage("extract")),
        Command::Train {
            features,
            output,
            params,
        } => cmd_train(cfg, &features, &output, &params, out).map_err(|e| e.at_stage("train")),
        Command::Select {
            features,
            folds,
            target_size,
            params,
            out: path,
        } => emit(out, &path, |w| cmd_select(cfg, &features, folds, target_size, &params, w))
            .map_err(|e| e.at_stage("select")),
        Command::Track {
            frames,
            motion,
            taxonomy,
            out: path,
        } => emit(out, &path, |w| cmd_track(cfg, &frames, &motion, &taxonomy, w)).map_err(|e| e.at_stage("track")),
        Command::Explain {
            frames,
            rgb_dir,
            model,
            rules,
            road_rules,
            motion,
            variety_m,
            n_max,
            taxonomy,
            text,
            complexity_csv,
            out: path,
        } => {
            let opts = ExplainOptions {
                rgb_dir: rgb_dir.or(cfg.rgb_dir.clone()),
                model: model.or(cfg.model.clone()),
                rules: rules.or(cfg.rules.clone()),
                road_rules: road_rules.or(cfg.road_rules.clone()),
                config: cfg.explain_config(&motion, variety_m, n_max),
                taxonomy: cfg.taxonomy(&taxonomy)?,
                text,
                complexity_csv,
            };
            emit(out, &path, |w| cmd_explain(&frames, cfg, &motion, opts, w)).map_err(|e| e.at_stage("explain"))
        }
        Command::Synth {
            output,
            spec,
            count,
            seed,
        } => cmd_synth(cfg, &output, spec, count, seed).map_err(|e| e.at_stage("synth")),
        Command::Cv {
            features,
            folds,
            params,
            out: path,
        } => emit(out, &path, |w| cmd_cv(cfg, &features, folds, &params, w)).map_err(|e| e.at_stage("cv")),
    }
}

/// Runs `f` against `--out` when given, else against stdout.
fn emit(out: &mut dyn Write, path: &Option<PathBuf>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut buf = Vec::new();
            f(&mut buf)?;
            write_file(p, &buf)
        }
        None => f(out),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format("output", e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| Error::io("<output>", e))
}

/// Image files in a directory (or a single file), sorted by name, paired with
/// their stems.
pub fn list_images(path: &Path, extensions: &[&str]) -> Result<Vec<(String, PathBuf)>> {
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if path.is_file() {
        return Ok(vec![(stem(path), path.to_path_buf())]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(path, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| extensions.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no {} files in {}", extensions.join("/"), path.display())));
    }
    Ok(files.into_iter().map(|p| (stem(&p), p)).collect())
}

const LABEL_EXT: &[&str] = &["pgm", "png"];
const RGB_EXT: &[&str] = &["ppm", "png"];

fn load_frames(dir: &Path, tax: &ClassTaxonomy) -> Result<Vec<(String, LabelMap)>> {
    list_images(dir, LABEL_EXT)?
        .into_par_iter()
        .map(|(id, p)| Ok((id, load_labelmap(&p, tax)?)))
        .collect()
}

fn cmd_gray(
    cfg: &RunConfig,
    input: &Path,
    output: &Path,
    mode: Option<String>,
    labels: bool,
    taxonomy: &Option<PathBuf>,
) -> Result<()> {
    let mode: GrayMode = mode.or(cfg.mode.clone()).map_or(Ok(GrayMode::default()), |m| m.parse())?;
    let tax = cfg.taxonomy(taxonomy)?;
    let single = input.is_file();
    let jobs = list_images(input, RGB_EXT)?;
    if !single {
        fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    }
    jobs.par_iter()
        .map(|(id, path)| {
            let gray = rgb_to_gray(&load_rgb(path)?, mode);
            let target = if single { output.to_path_buf() } else { output.join(format!("{id}.pgm")) };
            if labels {
                save_labelmap(&gray_to_labelmap(&gray, &tax), target)
            } else {
                save_gray(&gray, target)
            }
        })
        .collect()
}

#[derive(Serialize)]
struct EvalReport {
    frames: usize,
    policy: AbsentPolicy,
    classes: Vec<String>,
    #[serde(flatten)]
    report: SegmentationReport,
    confusion: ConfusionMatrix,
}

fn cmd_eval_seg(
    cfg: &RunConfig,
    pred_dir: &Path,
    truth_dir: &Path,
    policy: Option<String>,
    taxonomy: &Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<()> {
    let policy: AbsentPolicy = policy.or(cfg.policy.clone()).map_or(Ok(AbsentPolicy::default()), |p| p.parse())?;
    let tax = cfg.taxonomy(taxonomy)?;
    let k = tax.len();
    let truth = list_images(truth_dir, LABEL_EXT)?;
    let pred: std::collections::BTreeMap<String, PathBuf> = list_images(pred_dir, LABEL_EXT)?.into_iter().collect();
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} ground-truth frames",
            pred.len(),
            truth.len()
        )));
    }
    let per_frame: Vec<(ConfusionMatrix, f64, usize)> = truth
        .par_iter()
        .map(|(id, truth_path)| {
            let pred_path = pred
                .get(id)
                .ok_or_else(|| Error::invalid(format!("no prediction for frame {id}")))?;
            let t = load_labelmap(truth_path, &tax)?;
            let p = load_labelmap(pred_path, &tax)?;
            let cm = confusion(&p, &t, k)?;
            let ce = cross_entropy(&ProbabilityField::one_hot(&p, k)?, &t)?;
            Ok((cm, ce * t.len() as f64, t.len()))
        })
        .collect::<Result<_>>()?;
    let mut cm = ConfusionMatrix::new(k);
    let (mut ce_sum, mut pixels) = (0.0, 0usize);
    for (m, ce, n) in &per_frame {
        cm.merge(m)?;
        ce_sum += ce;
        pixels += n;
    }
    let report = SegmentationReport::from_confusion(&cm, policy, Some(ce_sum / pixels as f64))?;
    write_json(
        out,
        &EvalReport {
            frames: per_frame.len(),
            policy,
            classes: tax.entries().iter().map(|e| e.name.clone()).collect(),
            report,
            confusion: cm,
        },
    )
}

fn cmd_migrate(
    cfg: &RunConfig,
    input: &Path,
    rules: &Path,
    output: &Path,
    source: &Option<PathBuf>,
    target: &Option<PathBuf>,
) -> Result<()> {
    let source = match source.as_ref().or(cfg.source_taxonomy.as_ref()) {
        Some(p) => ClassTaxonomy::load(p)?,
        None => ClassTaxonomy::cityscapes_train(),
    };
    let target = cfg.taxonomy(target)?;
    let rules = ClassMigrationMap::load(rules)?;
    rules.validate(&source, &target)?;
    let single = input.is_file();
    let frames = list_images(input, LABEL_EXT)?;
    if !single {
        fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    }
    frames
        .par_iter()
        .map(|(id, path)| {
            let map = migrate(&load_labelmap(path, &source)?, &rules, &target)?;
            save_labelmap(&map, if single { output.to_path_buf() } else { output.join(format!("{id}.pgm")) })
        })
        .collect()
}

fn read_labels(path: &Path) -> Result<std::collections::HashMap<String, ScenarioLabel>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), format!("{other:?}")),
    })?;
    let mut labels = std::collections::HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        let (id, name) = (record.get(0).unwrap_or(""), record.get(1).unwrap_or(""));
        let label = ScenarioLabel::from_name(name)
            .ok_or_else(|| Error::format(path.display().to_string(), format!("unknown scenario label {name:?}")))?;
        labels.insert(id.to_string(), label);
    }
    Ok(labels)
}

fn cmd_extract(
    cfg: &RunConfig,
    frames: &Path,
    output: &Path,
    labels: Option<PathBuf>,
    taxonomy: &Option<PathBuf>,
) -> Result<()> {
    let tax = cfg.taxonomy(taxonomy)?;
    let labels_path = labels.or(cfg.labels.clone()).unwrap_or_else(|| {
        let dir = if frames.is_file() { frames.parent().unwrap_or(Path::new(".")) } else { frames };
        dir.join("labels.csv")
    });
    let labels = read_labels(&labels_path)?;
    let maps = load_frames(frames, &tax)?;
    let mut rows = Vec::with_capacity(maps.len());
    let mut y = Vec::with_capacity(maps.len());
    for (id, map) in &maps {
        let label = labels
            .get(id)
            .ok_or_else(|| Error::invalid(format!("frame {id} has no label in {}", labels_path.display())))?;
        rows.push(extract_features(map, &tax).values());
        y.push(*label);
    }
    LabeledDataset::scenarios(feature_names(&tax), rows, &y)?.save_csv(output)
}

#[derive(Serialize)]
struct TrainSummary {
    rows: usize,
    rounds: usize,
    training_accuracy: f64,
    training_log_loss: f64,
}

fn cmd_train(cfg: &RunConfig, features: &Path, output: &Path, args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let data = LabeledDataset::load_csv(features)?;
    let tc = cfg.train_config(args)?;
    let model = train(&data, &tc)?;
    model.save(output)?;
    let correct = data
        .rows()
        .iter()
        .zip(data.labels())
        .map(|(r, &y)| model.predict(r).map(|p| (p == y) as usize))
        .sum::<Result<usize>>()?;
    write_json(
        out,
        &TrainSummary {
            rows: data.n_rows(),
            rounds: model.n_rounds(),
            training_accuracy: correct as f64 / data.n_rows() as f64,
            training_log_loss: model.log_loss(&data)?,
        },
    )
}

fn cmd_select(
    cfg: &RunConfig,
    features: &Path,
    folds: Option<usize>,
    target: Option<usize>,
    args: &TrainArgs,
    out: &mut dyn Write,
) -> Result<()> {
    let data = LabeledDataset::load_csv(features)?;
    let tc = cfg.train_config(args)?;
    let selection = rfe_select(
        &data,
        folds.or(cfg.folds).unwrap_or(5),
        target.or(cfg.target_size).unwrap_or(4),
        &tc,
    )?;
    write_json(out, &selection)
}

fn cmd_cv(cfg: &RunConfig, features: &Path, folds: Option<usize>, args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let data = LabeledDataset::load_csv(features)?;
    let tc = cfg.train_config(args)?;
    write_json(out, &cross_validate(&data, folds.or(cfg.folds).unwrap_or(5), &tc)?)
}

fn resolve_classes(tax: &ClassTaxonomy, names: &[String]) -> Result<Vec<u8>> {
    names
        .iter()
        .map(|n| tax.id_of(n).ok_or_else(|| Error::invalid(format!("unknown class {n:?}"))))
        .collect()
}

fn cmd_track(cfg: &RunConfig, frames: &Path, m: &MotionArgs, taxonomy: &Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let tax = cfg.taxonomy(taxonomy)?;
    let ec = cfg.explain_config(m, None, None);
    let classes = resolve_classes(&tax, &ec.conflict_classes)?;
    let maps = load_frames(frames, &tax)?;
    let (w, h) = (maps[0].1.width(), maps[0].1.height());
    let params = cfg.dbscan_params(m, w, h);
    params.validate()?;
    let centers: Vec<_> = maps
        .par_iter()
        .map(|(_, map)| motion::detect_centers(map, &classes, &params))
        .collect::<Result<_>>()?;
    let tp = TrackParams {
        fps: ec.fps,
        max_jump: ec.max_jump.unwrap_or(0.1 * (w as f64).hypot(h as f64)),
        ego_row: ec.ego_row.unwrap_or(h as f64),
    };
    let tracks = motion::track(&centers, &tp)?;
    let rows: Vec<_> = tracks
        .into_iter()
        .map(|t| {
            let states = motion::track_states(&t.trajectory)?;
            Ok((t, states))
        })
        .collect::<Result<_>>()?;
    motion::write_trajectory_csv(&rows, out)
}

struct ExplainOptions {
    rgb_dir: Option<PathBuf>,
    model: Option<PathBuf>,
    rules: Option<PathBuf>,
    road_rules: Option<PathBuf>,
    config: ExplainConfig,
    taxonomy: ClassTaxonomy,
    text: bool,
    complexity_csv: Option<PathBuf>,
}

fn cmd_explain(frames: &Path, cfg: &RunConfig, m: &MotionArgs, mut o: ExplainOptions, out: &mut dyn Write) -> Result<()> {
    let model_path = o.model.as_ref().ok_or_else(|| Error::invalid("explain needs --model"))?;
    let model = BoostedEnsemble::load(model_path)?;
    let advisories = match &o.rules {
        Some(p) => AdvisoryRuleSet::load(p)?,
        None => AdvisoryRuleSet::default(),
    };
    let road_rules = match &o.road_rules {
        Some(p) => RoadRuleSet::load(p)?,
        None => RoadRuleSet::default(),
    };
    road_rules.validate(&o.taxonomy)?;
    let maps = load_frames(frames, &o.taxonomy)?;
    let dbscan = cfg.dbscan_params(m, maps[0].1.width(), maps[0].1.height());
    dbscan.validate()?;
    o.config.dbscan = Some(dbscan);
    let inputs: Vec<FrameInput> = maps
        .into_par_iter()
        .map(|(id, labelmap)| {
            let rgb: Option<RgbImage> = match &o.rgb_dir {
                Some(dir) => Some(load_rgb(find_rgb(dir, &id)?)?),
                None => None,
            };
            Ok(FrameInput { frame_id: id, labelmap, rgb })
        })
        .collect::<Result<_>>()?;
    let explainer = Explainer {
        taxonomy: &o.taxonomy,
        model: &model,
        road_rules: &road_rules,
        advisories: &advisories,
        config: &o.config,
    };
    let reports = explainer.explain_sequence(&inputs)?;

    let mut buf = String::new();
    for r in &reports {
        if o.text {
            buf.push_str(&r.render_text());
            buf.push('\n');
        } else {
            buf.push_str(&r.to_json());
            buf.push('\n');
        }
    }
    out.write_all(buf.as_bytes()).map_err(|e| Error::io("<output>", e))?;

    if let Some(path) = &o.complexity_csv {
        let rows: Vec<_> = reports.iter().map(|r| (r.frame_id.clone(), r.complexity.clone())).collect();
        let mut bytes = Vec::new();
        write_complexity_csv(&rows, &mut bytes)?;
        write_file(path, &bytes)?;
    }
    Ok(())
}

fn find_rgb(dir: &Path, id: &str) -> Result<PathBuf> {
    RGB_EXT
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            Error::io(
                dir.join(format!("{id}.ppm")),
                std::io::Error::new(std::io::ErrorKind::NotFound, "no RGB image for frame"),
            )
        })
}

fn cmd_synth(cfg: &RunConfig, output: &Path, spec: Option<PathBuf>, count: Option<usize>, seed: Option<u64>) -> Result<()> {
    match spec {
        Some(path) => {
            if count.is_some() {
                return Err(Error::invalid("--spec and --count are mutually exclusive"));
            }
            let mut spec = SceneSpec::load(&path)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let frames = write_sequence(&spec, output)?;
            eprintln!("wrote {} frames to {}", frames.len(), output.display());
        }
        None => {
            let corpus = generate_corpus(
                count.or(cfg.count).unwrap_or(400),
                seed.or(cfg.seed).unwrap_or(0),
            )?;
            corpus.write(output)?;
            eprintln!("wrote {} frames to {}", corpus.frames.len(), output.display());
        }
    }
    Ok(())
}
