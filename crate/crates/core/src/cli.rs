use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use closer_surfaces::dataio::{self, read_records, DataError, RangeFilter};
use closer_surfaces::edgehead::{control_group_targets, encode_targets};
use closer_surfaces::matching::{evaluate, matched_gaps, EvalLevel, EvalOptions};
use closer_surfaces::metrics::{MatchStrategy, MetricConfig, MetricKind, RecallMode};
use closer_surfaces::reports::{
    compare_reports, gcs_histogram, proportion_difference, render_svg, write_comparison_csv, write_histogram_csv,
    Histogram, SvgStyle,
};
use closer_surfaces::synth::{generate_scenario, Dims, SynthConfig};
use closer_surfaces::Dataset;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cs-eval", version, about = "Closer-surfaces BEV detection evaluation")]
pub struct Cli {
    /// Worker threads for frame-parallel work; defaults to all cores.
    #[arg(long, global = true, env = "CS_EVAL_JOBS")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the per-class, per-metric AP report as CSV.
    Evaluate {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        metrics: MetricArgs,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two prediction sets: APs, improvement % and the gap
    /// proportion difference (B minus A).
    Compare {
        #[command(flatten)]
        input: Input,
        /// Second prediction set (model B).
        #[arg(long = "pred-b")]
        pred_b: PathBuf,
        #[command(flatten)]
        metrics: MetricArgs,
        #[command(flatten)]
        hist: HistArgs,
        /// Comparison CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Proportion-difference chart; a CSV with the same stem is written next to it.
        #[arg(long = "svg-out")]
        svg_out: Option<PathBuf>,
    },
    /// Histogram of closer-surfaces gaps for one prediction set.
    GcsHist {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        metrics: MetricArgs,
        #[command(flatten)]
        hist: HistArgs,
        /// Histogram CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Histogram chart as SVG.
        #[arg(long = "svg-out")]
        svg_out: Option<PathBuf>,
    },
    /// Regression targets for anchor/ground-truth pairs, paired by line order.
    Encode {
        /// Ground-truth boxes (JSONL).
        #[arg(long)]
        gt: PathBuf,
        /// Anchor boxes (JSONL), one per ground-truth line.
        #[arg(long)]
        pred: PathBuf,
        /// Emit center-based targets instead of closest-vertex targets.
        #[arg(long)]
        control: bool,
        /// Output JSONL; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a seeded scene with center- and vertex-anchored predictions.
    Synth {
        /// Output directory for gt.jsonl, pred_center.jsonl and pred_vertex.jsonl.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long, default_value_t = 8)]
        objects: usize,
        /// Inner radius of the placement annulus (m).
        #[arg(long = "r-min", default_value_t = 5.0)]
        r_min: f64,
        /// Outer radius of the placement annulus (m).
        #[arg(long = "r-max", default_value_t = 60.0)]
        r_max: f64,
        /// Mean size as L,W,H (m).
        #[arg(long = "size-mean", value_delimiter = ',', num_args = 3, default_values_t = [3.9, 1.6, 1.56])]
        size_mean: Vec<f64>,
        /// Size standard deviation as L,W,H (m).
        #[arg(long = "size-sd", value_delimiter = ',', num_args = 3, default_values_t = [0.2, 0.1, 0.1])]
        size_sd: Vec<f64>,
        /// Ratio of predicted to true length and width.
        #[arg(long, default_value_t = 0.8)]
        scale: f64,
        /// Position noise standard deviation (m).
        #[arg(long = "pos-noise", default_value_t = 0.05)]
        pos_noise: f64,
        /// Heading noise standard deviation (rad).
        #[arg(long = "heading-noise", default_value_t = 0.01)]
        heading_noise: f64,
        #[arg(long, default_value = "Car")]
        class: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Jsonl,
    Kitti,
}

#[derive(Debug, Args)]
pub struct Input {
    /// Ground truth: JSONL file, or KITTI label directory.
    #[arg(long)]
    gt: PathBuf,
    /// Predictions: JSONL file, or KITTI label directory with scores.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
    /// Drop objects centered outside [-75.2, 75.2] x [-75.2, 75.2] x [-2, 4].
    #[arg(long = "range-filter")]
    range_filter: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecallArg {
    #[value(name = "11")]
    R11,
    #[value(name = "40")]
    R40,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatchBy {
    /// Pair by the evaluated metric.
    Metric,
    /// Pair by BEV IoU, judge by the evaluated metric.
    Bev,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// Metric to evaluate (bev, 3d, cs-bev, cs-abs); repeatable. All four by default.
    #[arg(long = "metric")]
    metric: Vec<MetricKind>,
    /// Closer-surfaces penalty ratio.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Threshold for every selected metric; per-metric defaults when omitted (0.7, 0.5 for cs-bev).
    #[arg(long = "iou-thresh")]
    iou_thresh: Option<f64>,
    #[arg(long, value_enum, default_value_t = RecallArg::R40)]
    recall: RecallArg,
    /// Minimum BEV IoU for pairs entering gap histograms.
    #[arg(long = "match-floor", default_value_t = 0.1)]
    match_floor: f64,
    #[arg(long = "match-by", value_enum, default_value_t = MatchBy::Metric)]
    match_by: MatchBy,
    /// Difficulty level; `moderate` when labels carry difficulty attributes, else `all`.
    #[arg(long)]
    difficulty: Option<EvalLevel>,
    /// Restrict to a class; repeatable.
    #[arg(long)]
    class: Vec<String>,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    #[arg(long, default_value_t = 40)]
    bins: usize,
    /// Histogram interval as LO,HI (m).
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.0, 2.0])]
    interval: Vec<f64>,
}

impl MetricArgs {
    fn configs(&self) -> Result<Vec<MetricConfig>> {
        let kinds = if self.metric.is_empty() {
            MetricKind::ALL.to_vec()
        } else {
            self.metric.clone()
        };
        let mut cfgs = Vec::new();
        for kind in kinds {
            let cfg = self.apply(MetricConfig::new(kind));
            cfg.validate()?;
            if !cfgs.contains(&cfg) {
                cfgs.push(cfg);
            }
        }
        Ok(cfgs)
    }

    fn apply(&self, mut cfg: MetricConfig) -> MetricConfig {
        cfg = cfg
            .with_alpha(self.alpha)
            .with_match_floor(self.match_floor)
            .with_recall(match self.recall {
                RecallArg::R11 => RecallMode::R11,
                RecallArg::R40 => RecallMode::R40,
            })
            .with_strategy(match self.match_by {
                MatchBy::Metric => MatchStrategy::SameMetric,
                MatchBy::Bev => MatchStrategy::BevThenScore,
            });
        if let Some(t) = self.iou_thresh {
            cfg = cfg.with_threshold(t);
        }
        cfg
    }

    fn level(&self, ds: &Dataset) -> EvalLevel {
        self.difficulty.unwrap_or(if ds.has_difficulty_attrs() {
            EvalLevel::Moderate
        } else {
            EvalLevel::All
        })
    }

    fn options(&self, ds: &Dataset) -> EvalOptions {
        EvalOptions {
            levels: vec![self.level(ds)],
            classes: if self.class.is_empty() {
                None
            } else {
                Some(self.class.clone())
            },
        }
    }

    fn classes(&self, ds: &Dataset) -> Vec<String> {
        if self.class.is_empty() {
            ds.classes().into_iter().collect()
        } else {
            self.class.clone()
        }
    }
}

impl HistArgs {
    fn interval(&self) -> (f64, f64) {
        (self.interval[0], self.interval[1])
    }
}

fn load(input: &Input, pred: &Path) -> Result<Dataset> {
    let mut ds = match input.format {
        Format::Jsonl => {
            let mut ds = dataio::read_jsonl(&input.gt)?.ground_truths_only();
            ds.merge(dataio::read_jsonl(pred)?.detections_only());
            ds
        }
        Format::Kitti => {
            for dir in [input.gt.as_path(), pred] {
                if !dir.is_dir() {
                    return Err(DataError::io(
                        dir,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "not a label directory"),
                    )
                    .into());
                }
            }
            dataio::read_kitti_labels(&input.gt, Some(pred))?
        }
    };
    if input.range_filter {
        ds.retain_in_range(&RangeFilter::default());
    }
    Ok(ds)
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| DataError::io(p, e))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| DataError::io("<stdout>", e))?;
        }
    }
    Ok(())
}

fn gap_histogram(ds: &Dataset, metrics: &MetricArgs, hist: &HistArgs) -> Result<Histogram> {
    let cfg = metrics.apply(MetricConfig::new(MetricKind::Bev));
    cfg.validate()?;
    let level = metrics.level(ds);
    let mut gaps = Vec::new();
    for class in metrics.classes(ds) {
        gaps.extend(matched_gaps(ds, &class, &cfg, level)?);
    }
    Ok(gcs_histogram(&gaps, hist.interval(), hist.bins)?)
}

#[derive(Serialize)]
struct EdgeLine<'a> {
    frame: &'a str,
    class: &'a str,
    dx_cv: f64,
    dy_cv: f64,
    dtheta: f64,
}

#[derive(Serialize)]
struct CenterLine<'a> {
    frame: &'a str,
    class: &'a str,
    dx_c: f64,
    dy_c: f64,
    dtheta: f64,
}

fn encode(gt: &Path, pred: &Path, control: bool) -> Result<Vec<u8>> {
    let gts = read_records(gt)?;
    let anchors = read_records(pred)?;
    if gts.len() != anchors.len() {
        bail!(
            "{} ground-truth records but {} anchors; encode pairs them by line order",
            gts.len(),
            anchors.len()
        );
    }
    let mut out = Vec::new();
    for ((gl, g), (al, a)) in gts.iter().zip(&anchors) {
        let gbox = g.bbox.to_box().with_context(|| format!("{}:{gl}", gt.display()))?;
        let abox = a.bbox.to_box().with_context(|| format!("{}:{al}", pred.display()))?;
        if control {
            let t = control_group_targets(&abox, &gbox);
            let line = CenterLine {
                frame: &g.frame,
                class: &g.class,
                dx_c: t.dx_c,
                dy_c: t.dy_c,
                dtheta: t.dtheta,
            };
            serde_json::to_writer(&mut out, &line)?;
        } else {
            let t = encode_targets(&abox, &gbox);
            let line = EdgeLine {
                frame: &g.frame,
                class: &g.class,
                dx_cv: t.dx_cv,
                dy_cv: t.dy_cv,
                dtheta: t.dtheta,
            };
            serde_json::to_writer(&mut out, &line)?;
        }
        out.push(b'\n');
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match cli.command {
        Command::Evaluate { input, metrics, out } => {
            let cfgs = metrics.configs()?;
            let ds = load(&input, &input.pred)?;
            let report = evaluate(&ds, &cfgs, &metrics.options(&ds))?;
            let mut buf = Vec::new();
            dataio::write_report_csv(&report, &mut buf)?;
            emit(out.as_deref(), &buf)
        }
        Command::Compare {
            input,
            pred_b,
            metrics,
            hist,
            out,
            svg_out,
        } => {
            let cfgs = metrics.configs()?;
            let ds_a = load(&input, &input.pred)?;
            let ds_b = load(&input, &pred_b)?;
            let opts = metrics.options(&ds_a);
            let rows = compare_reports(&evaluate(&ds_a, &cfgs, &opts)?, &evaluate(&ds_b, &cfgs, &opts)?);
            let mut buf = Vec::new();
            write_comparison_csv(&rows, &mut buf)?;
            emit(out.as_deref(), &buf)?;
            if let Some(svg) = svg_out {
                let diff = proportion_difference(
                    &gap_histogram(&ds_a, &metrics, &hist)?,
                    &gap_histogram(&ds_b, &metrics, &hist)?,
                )?;
                let style = SvgStyle {
                    title: "Proportion difference (B - A)".into(),
                    y_label: "P_B - P_A".into(),
                    ..SvgStyle::default()
                };
                emit(Some(&svg), render_svg(&diff, &style).as_bytes())?;
                let mut csv = Vec::new();
                diff.write_csv(&mut csv)?;
                emit(Some(&svg.with_extension("csv")), &csv)?;
            }
            Ok(())
        }
        Command::GcsHist {
            input,
            metrics,
            hist,
            out,
            svg_out,
        } => {
            let ds = load(&input, &input.pred)?;
            let h = gap_histogram(&ds, &metrics, &hist)?;
            let mut buf = Vec::new();
            write_histogram_csv(&h, &mut buf)?;
            emit(out.as_deref(), &buf)?;
            if let Some(svg) = svg_out {
                let style = SvgStyle {
                    title: "Closer-surfaces gap".into(),
                    ..SvgStyle::default()
                };
                emit(Some(&svg), render_svg(&h, &style).as_bytes())?;
            }
            Ok(())
        }
        Command::Encode { gt, pred, control, out } => emit(out.as_deref(), &encode(&gt, &pred, control)?),
        Command::Synth {
            out,
            seed,
            frames,
            objects,
            r_min,
            r_max,
            size_mean,
            size_sd,
            scale,
            pos_noise,
            heading_noise,
            class,
        } => {
            let cfg = SynthConfig {
                n_frames: frames,
                objects_per_frame: objects,
                range_annulus: (r_min, r_max),
                size_mean: Dims {
                    l: size_mean[0],
                    w: size_mean[1],
                    h: size_mean[2],
                },
                size_sd: Dims {
                    l: size_sd[0],
                    w: size_sd[1],
                    h: size_sd[2],
                },
                scale_factor: scale,
                position_noise_sd: pos_noise,
                heading_noise_sd: heading_noise,
                class_label: class,
                seed,
            };
            let scenario = generate_scenario(&cfg)?;
            fs::create_dir_all(&out).map_err(|e| DataError::io(&out, e))?;
            dataio::write_jsonl_file(&scenario.ground_truth, &out.join("gt.jsonl"))?;
            dataio::write_jsonl_file(&scenario.center_anchored, &out.join("pred_center.jsonl"))?;
            dataio::write_jsonl_file(&scenario.vertex_anchored, &out.join("pred_vertex.jsonl"))?;
            Ok(())
        }
    }
}

/// Error chain joined with `: `, skipping causes already spelled out by the
/// message above them.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn exit_code(err: &anyhow::Error) -> i32 {
    let io = err.chain().any(|c| {
        c.downcast_ref::<DataError>().is_some_and(DataError::is_io) || c.downcast_ref::<std::io::Error>().is_some()
    });
    if io {
        EXIT_IO
    } else {
        EXIT_USAGE
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            exit_code(&e)
        }
    }
}
