use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rotdet::angle::AngleGranularity;
use rotdet::assign::{GroundTruth, TargetSet};
use rotdet::bench::{bench_iou, to_csv, BenchSpec, PairMode};
use rotdet::config::DetectorConfig;
use rotdet::eval::{evaluate, ImagePair};
use rotdet::geometry::{ciou_horizontal, iou_exact, iou_horizontal, RotatedBox};
use rotdet::head::decode_batch;
use rotdet::io::{read_detections, read_labels, write_detections, write_labels, ImageDetections, TensorFile};
use rotdet::loss::{compute_losses, BoxMetric};
use rotdet::mask::{iou_ro, UnionMode};
use rotdet::nms::{filter_conf, nms, NmsMode};
use rotdet::overlap::OverlapBackend;
use rotdet::synth::{generate, render_scene, SceneSpec};

#[derive(Parser)]
#[command(name = "rotdet", version, about = "Rotated-box detector post-processing toolkit")]
struct Cli {
    /// TOML or JSON configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic labelled scenes as JSON lines.
    Gen(GenArgs),
    /// Decode raw head tensors into detections.
    Decode(DecodeArgs),
    /// Compute training losses for tensors against labels.
    Loss(LossArgs),
    /// Confidence gate and non-maximum suppression.
    Nms(NmsArgs),
    /// Score detections against labels.
    Eval(EvalArgs),
    /// Overlap of a single box pair.
    Iou(IouArgs),
    /// Mask-size accuracy and throughput sweep, as CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Scene spec (TOML/JSON); defaults to the config's `synth` section.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(short = 'n', long, default_value_t = 10)]
    images: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write flat-colour PNG renderings here.
    #[arg(long)]
    png_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    tensors: PathBuf,
    #[arg(long)]
    conf_thresh: Option<f64>,
    /// Image id assigned to the first batch entry.
    #[arg(long, default_value_t = 0)]
    first_id: u64,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Iou,
    Ciou,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    tensors: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(alias = "h")]
    Horizontal,
    #[value(alias = "ro")]
    Rotated,
}

#[derive(Clone, Copy, ValueEnum)]
enum UnionArg {
    Corrected,
    #[value(alias = "paper_literal")]
    Paper,
}

impl From<UnionArg> for UnionMode {
    fn from(u: UnionArg) -> Self {
        match u {
            UnionArg::Corrected => UnionMode::Corrected,
            UnionArg::Paper => UnionMode::PaperLiteral,
        }
    }
}

#[derive(Args)]
struct NmsArgs {
    #[arg(long)]
    dets: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    iou_thresh: Option<f64>,
    #[arg(long)]
    conf_thresh: Option<f64>,
    #[arg(long, value_enum)]
    union: Option<UnionArg>,
    /// Square mask side in cells.
    #[arg(long)]
    mask_size: Option<usize>,
    /// Suppress across classes.
    #[arg(long)]
    class_agnostic: bool,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// `h` matches on axis-aligned boxes, `ro` on rotated ones.
    #[arg(long, value_enum, default_value = "ro")]
    mode: ModeArg,
    /// Use mask IoU instead of polygon clipping in rotated mode.
    #[arg(long)]
    masked: bool,
    /// Write per-class precision/recall curves here.
    #[arg(long)]
    pr_csv: Option<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IouArgs {
    /// First box as `x,y,w,h,theta`.
    #[arg(long, allow_hyphen_values = true)]
    a: String,
    #[arg(long, allow_hyphen_values = true)]
    b: String,
    #[arg(long)]
    mask_size: Option<usize>,
    #[arg(long, value_enum)]
    union: Option<UnionArg>,
}

#[derive(Args)]
struct BenchArgs {
    /// Bench spec (TOML/JSON); flags override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Comma-separated square mask sizes.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    nms_images: Option<usize>,
    #[arg(long, value_enum)]
    union: Option<UnionArg>,
    /// Pair every box with itself.
    #[arg(long)]
    identity: bool,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Marks failures caused by configuration rather than input data.
#[derive(Debug)]
struct ConfigFailure(String);

impl std::fmt::Display for ConfigFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigFailure {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigFailure(msg.into()).into()
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<ConfigFailure>() || matches!(c.downcast_ref::<rotdet::Error>(), Some(rotdet::Error::Config(_)))
    })
}

fn load_config(path: Option<&Path>) -> Result<DetectorConfig> {
    match path {
        Some(p) => DetectorConfig::load(p).map_err(|e| config_err(e.to_string())),
        None => Ok(DetectorConfig::default()),
    }
}

/// Parses a standalone TOML or JSON document for a section type.
fn load_doc<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let parsed = if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_labels(path: &Path) -> Result<Vec<rotdet::synth::LabeledScene>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_labels(BufReader::new(f))?)
}

fn check_unit(name: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(t) if !(0.0..=1.0).contains(&t) => Err(config_err(format!("{name} {t} outside [0, 1]"))),
        _ => Ok(()),
    }
}

fn parse_box(s: &str) -> Result<RotatedBox> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("box {s:?}"))?;
    let [x, y, w, h, theta] = v[..] else {
        bail!("box {s:?}: expected x,y,w,h,theta");
    };
    Ok(RotatedBox::new(x, y, w, h, theta)?)
}

fn cmd_gen(cfg: &DetectorConfig, a: &GenArgs) -> Result<()> {
    let mut spec: SceneSpec = match &a.spec {
        Some(p) => load_doc(p)?,
        None => cfg.synth.clone(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| config_err(e.to_string()))?;
    let scenes = generate(&spec, a.images)?;
    let mut buf = Vec::new();
    write_labels(&mut buf, &scenes)?;
    write_output(a.out.as_deref(), std::str::from_utf8(&buf)?)?;
    if let Some(dir) = &a.png_dir {
        fs::create_dir_all(dir)?;
        for s in &scenes {
            let r = render_scene(s, spec.seed);
            let img = image::RgbImage::from_raw(r.width, r.height, r.rgb).context("raster size")?;
            img.save(dir.join(format!("{:06}.png", s.image_id)))?;
        }
    }
    Ok(())
}

fn cmd_decode(cfg: &DetectorConfig, a: &DecodeArgs) -> Result<()> {
    check_unit("confidence threshold", a.conf_thresh)?;
    let file = TensorFile::parse(&read_text(&a.tensors)?, &cfg.head)?;
    let conf = a.conf_thresh.unwrap_or(cfg.nms.conf_thresh);
    let per_image = decode_batch(&file.tensors, &cfg.head, conf)?;
    let out: Vec<ImageDetections> = per_image
        .into_iter()
        .enumerate()
        .map(|(i, detections)| ImageDetections {
            image_id: a.first_id + i as u64,
            detections,
        })
        .collect();
    let mut buf = Vec::new();
    write_detections(&mut buf, &out)?;
    write_output(a.out.as_deref(), std::str::from_utf8(&buf)?)
}

fn cmd_loss(cfg: &DetectorConfig, a: &LossArgs) -> Result<()> {
    let file = TensorFile::parse(&read_text(&a.tensors)?, &cfg.head)?;
    let labels = load_labels(&a.gt)?;
    let targets = TargetSet::new(labels.into_iter().map(|s| s.objects).collect());
    let mut opts = cfg.loss_options;
    if let Some(m) = a.metric {
        opts.metric = match m {
            MetricArg::Iou => BoxMetric::Iou,
            MetricArg::Ciou => BoxMetric::Ciou,
        };
    }
    let report = compute_losses(&file.tensors, &targets, &cfg.head, &cfg.loss, opts)?;
    write_output(a.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn cmd_nms(cfg: &DetectorConfig, a: &NmsArgs) -> Result<()> {
    check_unit("IoU threshold", a.iou_thresh)?;
    check_unit("confidence threshold", a.conf_thresh)?;
    let mut nc = cfg.nms.clone();
    if let Some(m) = a.mode {
        nc.mode = match m {
            ModeArg::Horizontal => NmsMode::Horizontal,
            ModeArg::Rotated => NmsMode::Rotated,
        };
    }
    if a.iou_thresh.is_some() {
        nc.iou_thresh = a.iou_thresh;
    }
    if let Some(c) = a.conf_thresh {
        nc.conf_thresh = c;
    }
    if let Some(u) = a.union {
        nc.mask.union_mode = u.into();
    }
    if let Some(s) = a.mask_size {
        nc.mask.mask_w = s;
        nc.mask.mask_h = s;
    }
    if a.class_agnostic {
        nc.class_aware = false;
    }
    nc.validate().map_err(|e| config_err(e.to_string()))?;
    let images = read_detections(&read_text(&a.dets)?)?;
    let kept: Vec<ImageDetections> = images
        .into_iter()
        .map(|im| ImageDetections {
            image_id: im.image_id,
            detections: nms(&filter_conf(&im.detections, nc.conf_thresh), &nc),
        })
        .collect();
    let mut buf = Vec::new();
    write_detections(&mut buf, &kept)?;
    write_output(a.out.as_deref(), std::str::from_utf8(&buf)?)
}

fn cmd_eval(cfg: &DetectorConfig, a: &EvalArgs) -> Result<()> {
    let dets = read_detections(&read_text(&a.dets)?)?;
    let labels = load_labels(&a.gt)?;
    let mut ec = cfg.eval.clone();
    ec.backend = match (a.mode, a.masked) {
        (ModeArg::Horizontal, _) => OverlapBackend::Horizontal,
        (ModeArg::Rotated, false) => OverlapBackend::Exact,
        (ModeArg::Rotated, true) => OverlapBackend::Masked,
    };
    let empty = Vec::new();
    let truths: Vec<&Vec<GroundTruth>> = labels.iter().map(|s| &s.objects).collect();
    let mut known = std::collections::HashSet::new();
    for s in &labels {
        if !known.insert(s.image_id) {
            bail!("duplicate image id {} in labels", s.image_id);
        }
    }
    if let Some(d) = dets.iter().find(|d| !known.contains(&d.image_id)) {
        bail!("detections for image {} which has no labels", d.image_id);
    }
    let pairs: Vec<ImagePair<'_>> = labels
        .iter()
        .zip(&truths)
        .map(|(s, t)| ImagePair {
            dets: dets
                .iter()
                .find(|d| d.image_id == s.image_id)
                .map_or(&empty[..], |d| &d.detections[..]),
            truths: t,
        })
        .collect();
    let report = evaluate(&pairs, &ec)?;
    if let Some(p) = &a.pr_csv {
        fs::write(p, report.pr_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    write_output(a.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn cmd_iou(cfg: &DetectorConfig, a: &IouArgs) -> Result<()> {
    let (ba, bb) = (parse_box(&a.a)?, parse_box(&a.b)?);
    let mut mask = cfg.mask;
    if let Some(s) = a.mask_size {
        mask.mask_w = s;
        mask.mask_h = s;
    }
    if let Some(u) = a.union {
        mask.union_mode = u.into();
    }
    mask.validate().map_err(|e| config_err(e.to_string()))?;
    let (ha, hb) = (ba.horizontal(), bb.horizontal());
    let out = serde_json::json!({
        "exact": iou_exact(&ba, &bb),
        "masked": iou_ro(&ba, &bb, &mask),
        "horizontal": iou_horizontal(&ha, &hb),
        "ciou_horizontal": ciou_horizontal(&ha, &hb),
        "mask": mask,
    });
    write_output(None, &(serde_json::to_string_pretty(&out)? + "\n"))
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let mut spec: BenchSpec = match &a.spec {
        Some(p) => load_doc(p)?,
        None => BenchSpec::default(),
    };
    if let Some(s) = &a.sizes {
        spec.mask_sizes = s.clone();
    }
    if let Some(n) = a.pairs {
        spec.pairs.count = n;
    }
    if let Some(s) = a.seed {
        spec.pairs.seed = s;
        spec.scene.seed = s;
    }
    if let Some(r) = a.repetitions {
        spec.repetitions = r;
    }
    if let Some(w) = a.warmup {
        spec.warmup = w;
    }
    if let Some(t) = a.threads {
        spec.threads = t;
    }
    if let Some(n) = a.nms_images {
        spec.nms_images = n;
    }
    if let Some(u) = a.union {
        spec.union_mode = u.into();
    }
    if a.identity {
        spec.pair_mode = PairMode::Identity;
    }
    spec.validate().map_err(|e| config_err(e.to_string()))?;
    let rows = bench_iou(&spec)?;
    write_output(a.out.as_deref(), &to_csv(&spec, &rows))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    // make sure the angle layout in the config is usable before any command
    if cfg.head.is_rotated() {
        AngleGranularity::new(cfg.head.angle_granularity).map_err(|e| config_err(e.to_string()))?;
    }
    match &cli.cmd {
        Cmd::Gen(a) => cmd_gen(&cfg, a),
        Cmd::Decode(a) => cmd_decode(&cfg, a),
        Cmd::Loss(a) => cmd_loss(&cfg, a),
        Cmd::Nms(a) => cmd_nms(&cfg, a),
        Cmd::Eval(a) => cmd_eval(&cfg, a),
        Cmd::Iou(a) => cmd_iou(&cfg, a),
        Cmd::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
