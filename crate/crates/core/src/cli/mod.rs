//! Command-line entry points: `gen`, `train`, `eval`, `detect`, `viz`.

pub mod checkpoint;
pub mod config;
pub mod formats;
pub mod viz;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::chartgen::{write_dataset, GenSpec};
use crate::geometry::{ChartAnnotation, Shape, ShapeKind};
use crate::metrics::{evaluate, EvalInput};
use crate::model::{infer, init_params, predict_shapes};
use crate::training::{fit, Sample, TrainState};
use checkpoint::Checkpoint;
use config::read_config;
use formats::{read_annotation, read_image, AnnotationFile, Manifest, MANIFEST_NAME};

/// A dataset sample with the name of its annotation file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub name: String,
    pub chart_kind: ShapeKind,
    pub sample: Sample,
}

/// Loads every sample listed in `dir/manifest.json`.
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledSample>, String> {
    let manifest = Manifest::read(&dir.join(MANIFEST_NAME))?;
    manifest
        .samples
        .iter()
        .map(|entry| {
            let raster = read_image(&dir.join(&entry.image))?;
            let annotation = read_annotation(&dir.join(&entry.annotation))?;
            Ok(LabeledSample {
                name: entry.annotation.clone(),
                chart_kind: annotation.chart_kind,
                sample: Sample {
                    raster,
                    shapes: annotation.shapes,
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Bar,
    Line,
    Pie,
}

impl From<KindArg> for ShapeKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Bar => ShapeKind::Bar,
            KindArg::Line => ShapeKind::Line,
            KindArg::Pie => ShapeKind::Pie,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    /// Score each sample with the metric of its chart kind.
    Auto,
    Line,
    Bar,
    Pie,
}

#[derive(Debug, Parser)]
#[command(name = "chartdetr", version, about = "Chart data element detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        #[arg(long)]
        min_shapes: Option<usize>,
        #[arg(long)]
        max_shapes: Option<usize>,
        /// Knee points per line, lower bound.
        #[arg(long)]
        min_keypoints: Option<usize>,
        #[arg(long)]
        max_keypoints: Option<usize>,
        #[arg(long)]
        donut_hole: Option<f64>,
        #[arg(long)]
        no_axes: bool,
    },
    /// Train a model; writes line-delimited JSON log records to stdout.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the dataset named in the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint path, rewritten at every checkpoint step and at the end.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score predictions against a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Directory of prediction annotation files named like the dataset's.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "auto")]
        metric: MetricArg,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the shapes in one image.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw an annotation over its image as SVG.
    Viz {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Failures print one `error:` line to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", if line.starts_with("error:") { line.to_string() } else { format!("error: {line}") });
            return 2;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(message) => {
            eprintln!("error: {}", message.replace('\n', " "));
            1
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| e.to_string()),
    }
}

fn execute(command: Command) -> Result<(), String> {
    match command {
        Command::Gen {
            kind,
            count,
            seed,
            out,
            width,
            height,
            min_shapes,
            max_shapes,
            min_keypoints,
            max_keypoints,
            donut_hole,
            no_axes,
        } => {
            let mut spec = GenSpec::preset(kind.into(), seed);
            spec.width = width.unwrap_or(spec.width);
            spec.height = height.unwrap_or(spec.height);
            spec.shape_count = (min_shapes.unwrap_or(spec.shape_count.0), max_shapes.unwrap_or(spec.shape_count.1));
            spec.keypoint_count = (
                min_keypoints.unwrap_or(spec.keypoint_count.0),
                max_keypoints.unwrap_or(spec.keypoint_count.1),
            );
            spec.donut_hole = donut_hole.unwrap_or(spec.donut_hole);
            spec.draw_axes = !no_axes;
            write_dataset(&spec, count, &out).map_err(|e| e.to_string())?;
            Ok(())
        }
        Command::Train {
            config,
            dataset,
            out,
            resume,
        } => train(&config, dataset, &out, resume.as_deref()),
        Command::Eval {
            dataset,
            checkpoint,
            predictions,
            metric,
            out,
        } => {
            let data = load_dataset(&dataset)?;
            let wanted = match metric {
                MetricArg::Auto => None,
                MetricArg::Line => Some(ShapeKind::Line),
                MetricArg::Bar => Some(ShapeKind::Bar),
                MetricArg::Pie => Some(ShapeKind::Pie),
            };
            let data: Vec<&LabeledSample> = data
                .iter()
                .filter(|s| wanted.is_none_or(|k| k == s.chart_kind))
                .collect();
            if data.is_empty() {
                return Err(format!("{}: no samples to evaluate", dataset.display()));
            }
            let predicted: Vec<Vec<Shape>> = match (&checkpoint, &predictions) {
                (Some(path), _) => {
                    let ckpt = Checkpoint::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
                    data.iter()
                        .map(|s| {
                            let pred = infer(&ckpt.state.params, &ckpt.model, &s.sample.raster)
                                .map_err(|e| format!("{}: {e}", s.name))?;
                            Ok(predict_shapes(&pred, &ckpt.model))
                        })
                        .collect::<Result<_, String>>()?
                }
                (None, Some(dir)) => data
                    .iter()
                    .map(|s| read_prediction(&dir.join(&s.name)).map(|a| a.shapes))
                    .collect::<Result<_, String>>()?,
                (None, None) => return Err("eval needs --checkpoint or --predictions".into()),
            };
            let inputs: Vec<EvalInput<'_>> = data
                .iter()
                .zip(&predicted)
                .map(|(s, p)| EvalInput {
                    name: s.name.clone(),
                    chart_kind: s.chart_kind,
                    predictions: p,
                    targets: &s.sample.shapes,
                })
                .collect();
            write_output(out.as_deref(), &evaluate(&inputs).to_json())
        }
        Command::Detect { checkpoint, image, out } => {
            let ckpt = Checkpoint::load(&checkpoint).map_err(|e| format!("{}: {e}", checkpoint.display()))?;
            let raster = read_image(&image)?;
            let pred = infer(&ckpt.state.params, &ckpt.model, &raster).map_err(|e| format!("{}: {e}", image.display()))?;
            let shapes = predict_shapes(&pred, &ckpt.model);
            let chart_kind = majority_kind(&shapes).unwrap_or(ckpt.chart_kind);
            let annotation = ChartAnnotation {
                width: raster.width(),
                height: raster.height(),
                chart_kind,
                shapes: shapes.into_iter().filter(|s| s.kind == chart_kind).collect(),
            };
            write_output(out.as_deref(), &AnnotationFile::from(&annotation).to_json())
        }
        Command::Viz { image, annotation, out } => {
            let raster = read_image(&image)?;
            let ann = read_prediction(&annotation)?;
            let svg = viz::render_svg(&raster, &ann.shapes);
            std::fs::write(&out, svg).map_err(|e| format!("{}: {e}", out.display()))
        }
    }
}

/// Reads an annotation file without the ground-truth validity checks, so
/// that imperfect predictions load too.
fn read_prediction(path: &Path) -> Result<ChartAnnotation, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    AnnotationFile::from_json(&text)
        .and_then(|f| f.to_annotation_unchecked())
        .map_err(|e| format!("{}: {e}", path.display()))
}

/// Most frequent kind among `shapes`; ties go to the lower class index.
fn majority_kind(shapes: &[Shape]) -> Option<ShapeKind> {
    ShapeKind::CLASSES
        .iter()
        .map(|&k| (shapes.iter().filter(|s| s.kind == k).count(), k))
        .filter(|&(n, _)| n > 0)
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.class_index().cmp(&a.1.class_index())))
        .map(|(_, k)| k)
}

fn train(config_path: &Path, dataset: Option<PathBuf>, out: &Path, resume: Option<&Path>) -> Result<(), String> {
    let file = read_config(config_path)?;
    let dataset = dataset
        .or_else(|| file.train.dataset.clone())
        .ok_or_else(|| format!("{}: no dataset given (set train.dataset or pass --dataset)", config_path.display()))?;
    let data = load_dataset(&dataset)?;
    let default_kind = majority_kind(&data.iter().flat_map(|s| s.sample.shapes.iter().cloned()).collect::<Vec<_>>())
        .unwrap_or(ShapeKind::Line);
    let run = file
        .resolve(default_kind)
        .map_err(|e| format!("{}: {e}", config_path.display()))?;
    let mut state = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
            if ckpt.model != run.model {
                return Err(format!("{}: model config differs from {}", path.display(), config_path.display()));
            }
            ckpt.state
        }
        None => TrainState::new(init_params(&run.model, run.train.seed).map_err(|e| e.to_string())?),
    };
    let samples: Vec<Sample> = data.iter().map(|s| s.sample.clone()).collect();
    let save = |state: &TrainState| {
        Checkpoint {
            chart_kind: run.chart_kind,
            model: run.model.clone(),
            train: run.train.clone(),
            state: state.clone(),
        }
        .save(out)
        .map_err(|e| e.to_string())
    };
    let mut stdout = std::io::stdout().lock();
    fit(
        &mut state,
        &samples,
        &run.model,
        &run.train,
        |entry| {
            let _ = writeln!(stdout, "{}", entry.to_json());
        },
        save,
    )
    .map_err(|e| match e {
        crate::training::TrainError::Capacity { index, source } => format!("{}: {source}", data[index].name),
        other => other.to_string(),
    })?;
    save(&state)
}
