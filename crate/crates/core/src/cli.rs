//! Command-line front end.
//!
//! Exit codes: 0 success, 2 missing input file, 3 invalid configuration or
//! refused overwrite, 4 numeric failure, 1 anything else. Failures print
//! one JSON object on stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::eval::{evaluate, fit_depth_probe, sweep_tau, sweep_to_csv};
use crate::fusion::{FusedOutput, FusionConfig, MaskMode, PairingMode, StyleMask};
use crate::grad::{GradReport, MicroInstance, DEFAULT_FD_STEP};
use crate::metrics::{reports_to_csv, reports_to_json};
use crate::model::{cfg_combine, Model, ModelSpec};
use crate::pgm::{normalize_to_gray, GrayImage};
use crate::synth::{write_dataset, DatasetDir, RenderSettings, SampleSource, SynthConfig, SyntheticDataset};
use crate::tensor::{read_feature_map, write_feature_map, FeatureMap};
use crate::trainer::{train_style_path, Checkpoint, TrainConfig};

const DATA_ENV: &str = "SFA_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "sfa", version, about = "Style fusion attention on multi-view feature maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset directory.
    GenData(GenDataArgs),
    /// Fine-tune the style path and write a checkpoint.
    Train(TrainArgs),
    /// Stylize content views with one style.
    Fuse(FuseArgs),
    /// Stylize with a blend of two styles.
    Interpolate(InterpolateArgs),
    /// Stylize masked regions only.
    Localize(LocalizeArgs),
    /// Write metric reports for a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Evaluate over a list of key scales.
    SweepTau(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory [default: $SFA_DATA_DIR]
    #[arg(long, env = DATA_ENV)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub views: usize,
    #[arg(long, default_value_t = 150)]
    pub identities: usize,
    #[arg(long, default_value_t = 6)]
    pub styles: usize,
    #[arg(long, default_value_t = 150)]
    pub samples_per_style: usize,
    #[arg(long, default_value_t = 8)]
    pub height: usize,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    #[arg(long, default_value_t = 16.0)]
    pub amplitude: f64,
    #[arg(long)]
    pub force: bool,
}

/// Fusion controls shared by every inference command.
#[derive(Debug, Args, Clone, Default)]
pub struct FusionArgs {
    /// JSON file with any of: tau, alpha, mask_path, mask_mode,
    /// pairing_mode, heads, eps. Flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Style key scale [default: 1.05]
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    /// paper_literal or exclusion [default: exclusion]
    #[arg(long)]
    pub mask_mode: Option<String>,
    /// as_written or aligned [default: aligned]
    #[arg(long)]
    pub pairing_mode: Option<String>,
    /// Heads for a fresh model when no checkpoint is given [default: 2]
    #[arg(long)]
    pub heads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory [default: $SFA_DATA_DIR]
    #[arg(long, env = DATA_ENV)]
    pub data: Option<PathBuf>,
    /// Checkpoint path; the loss history goes to `<out>.loss.csv`
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 800)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-5, allow_negative_numbers = true)]
    pub lr: f64,
    #[arg(long, default_value_t = 3.0)]
    pub cfg_weight: f64,
    #[arg(long, default_value_t = 0.1)]
    pub cfg_dropout: f64,
    /// Views per sample expected in the dataset
    #[arg(long, default_value_t = 16)]
    pub views: usize,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct InferenceArgs {
    /// Content views (front and back streams)
    #[arg(long)]
    pub content: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Trained checkpoint; without one a fresh model is seeded from --seed
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Guidance weight; 1 gives the conditional output
    #[arg(long, default_value_t = 3.0)]
    pub cfg_weight: f64,
    /// Channel shown in the PGM previews
    #[arg(long, default_value_t = 0)]
    pub preview_channel: usize,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub common: InferenceArgs,
    /// Style reference views
    #[arg(long)]
    pub style: PathBuf,
    /// Optional style mask (PGM); same as `localize`
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Plain fusion: no key scaling, mask or blending
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[command(flatten)]
    pub common: InferenceArgs,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub style2: PathBuf,
    /// Weight of the second style
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub common: InferenceArgs,
    #[arg(long)]
    pub style: PathBuf,
    /// Region for `--style` (PGM, on at >= 128)
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Second style for a disjoint second region
    #[arg(long, requires = "mask2")]
    pub style2: Option<PathBuf>,
    #[arg(long, requires = "style2")]
    pub mask2: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = DATA_ENV)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for metrics.csv and metrics.json
    #[arg(long)]
    pub out: PathBuf,
    /// Leading dataset samples to evaluate
    #[arg(long, default_value_t = 6)]
    pub samples: usize,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub instances: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// CSV report path
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, env = DATA_ENV)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV output path
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1.0,1.05,1.10")]
    pub taus: Vec<f64>,
    #[arg(long, default_value_t = 6)]
    pub samples: usize,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    tau: Option<f64>,
    alpha: Option<f64>,
    mask_path: Option<PathBuf>,
    mask_mode: Option<MaskMode>,
    pairing_mode: Option<PairingMode>,
    heads: Option<usize>,
    eps: Option<f64>,
}

/// Fusion settings after merging the config file and flags.
struct Resolved {
    fusion: FusionConfig,
    heads: Option<usize>,
    mask_path: Option<PathBuf>,
}

fn require_file(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(())
}

impl FusionArgs {
    fn resolve(&self, alpha: Option<f64>) -> Result<Resolved> {
        let file = match &self.config {
            Some(p) => {
                require_file(p)?;
                serde_json::from_str::<ConfigFile>(&fs::read_to_string(p)?)?
            }
            None => ConfigFile::default(),
        };
        let mut fusion = FusionConfig::default();
        if let Some(t) = self.tau.or(file.tau) {
            fusion.tau = t;
        }
        fusion.alpha = alpha.or(file.alpha);
        if let Some(m) = &self.mask_mode {
            fusion.mask_mode = m.parse()?;
        } else if let Some(m) = file.mask_mode {
            fusion.mask_mode = m;
        }
        if let Some(p) = &self.pairing_mode {
            fusion.pairing_mode = p.parse()?;
        } else if let Some(p) = file.pairing_mode {
            fusion.pairing_mode = p;
        }
        if let Some(e) = file.eps {
            fusion.eps = e;
        }
        fusion.validate()?;
        Ok(Resolved {
            fusion,
            heads: self.heads.or(file.heads),
            mask_path: file.mask_path,
        })
    }
}

fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::WouldOverwrite(path.to_path_buf()));
    }
    Ok(())
}

fn data_dir(arg: &Option<PathBuf>) -> Result<PathBuf> {
    arg.clone()
        .ok_or_else(|| Error::domain(format!("no dataset directory: pass --data or set {DATA_ENV}")))
}

fn read_mask(path: &Path) -> Result<StyleMask> {
    Ok(StyleMask::from_image(&GrayImage::read(path)?))
}

fn load_model(checkpoint: Option<&Path>, seed: u64, channels: usize, heads: Option<usize>) -> Result<Model> {
    match checkpoint {
        Some(p) => {
            let model = Checkpoint::read(p)?.to_model()?;
            if let Some(h) = heads {
                if h != model.frozen.heads {
                    return Err(Error::domain(format!(
                        "checkpoint has {} heads, config asks for {h}",
                        model.frozen.heads
                    )));
                }
            }
            Ok(model)
        }
        None => Model::seeded(&ModelSpec {
            channels,
            heads: heads.unwrap_or(if channels.is_multiple_of(2) { 2 } else { 1 }),
            seed,
            ..ModelSpec::default()
        }),
    }
}

/// Files written by an inference command.
fn write_inference(dir: &Path, output: &FeatureMap, cond: &FusedOutput, preview_channel: usize) -> Result<Vec<PathBuf>> {
    let s = output.shape();
    if preview_channel >= s.channels {
        return Err(Error::domain(format!(
            "preview channel {preview_channel} out of range for {} channels",
            s.channels
        )));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join("fused.sfa");
    write_feature_map(&path, output)?;
    written.push(path);
    for n in 0..s.views {
        let view = output.view(n)?;
        let path = dir.join(format!("view_{n:02}.sfa"));
        write_feature_map(&path, &view)?;
        written.push(path);
        let values: Vec<f64> = view
            .data()
            .iter()
            .skip(preview_channel)
            .step_by(s.channels)
            .copied()
            .collect();
        let path = dir.join(format!("view_{n:02}.pgm"));
        normalize_to_gray(s.width, s.height, &values)?.write(&path)?;
        written.push(path);
    }
    let mut csv = String::from("head,query,latent,normalized_style,scaled_style\n");
    for h in 0..cond.heads() {
        for q in 0..cond.queries() {
            let m = cond.query_mass(h, q);
            writeln!(csv, "{h},{q},{:e},{:e},{:e}", m.latent, m.normalized_style, m.scaled_style)
                .expect("string write");
        }
    }
    let path = dir.join("attention_mass.csv");
    fs::write(&path, csv)?;
    written.push(path);
    Ok(written)
}

struct Inference {
    content: FeatureMap,
    model: Model,
    resolved: Resolved,
}

impl InferenceArgs {
    fn prepare(&self, alpha: Option<f64>) -> Result<Inference> {
        let resolved = self.fusion.resolve(alpha)?;
        let content = read_feature_map(&self.content)?;
        if let Some(p) = &self.checkpoint {
            require_file(p)?;
        }
        guard(&self.out.join("fused.sfa"), self.force)?;
        let model = load_model(self.checkpoint.as_deref(), self.seed, content.shape().channels, resolved.heads)?;
        Ok(Inference {
            content,
            model,
            resolved,
        })
    }

    fn finish(&self, uncond: FusedOutput, cond: FusedOutput) -> Result<serde_json::Value> {
        let guided = cfg_combine(&uncond.features, &cond.features, self.cfg_weight)?;
        if !guided.is_finite() {
            return Err(Error::numeric("guidance", "non-finite output"));
        }
        let files = write_inference(&self.out, &guided, &cond, self.preview_channel)?;
        let mass = cond.mean_block_mass();
        Ok(json!({
            "files": files.len(),
            "out": self.out,
            "mean_block_mass": [mass.latent, mass.normalized_style, mass.scaled_style],
        }))
    }
}

fn gen_data(a: &GenDataArgs) -> Result<serde_json::Value> {
    let out = data_dir(&a.out)?;
    let dataset = SyntheticDataset::new(SynthConfig {
        n_identities: a.identities,
        n_styles: a.styles,
        samples_per_style: a.samples_per_style,
        n_views: a.views,
        render: RenderSettings {
            height: a.height,
            width: a.width,
            channels: a.channels,
            amplitude: a.amplitude,
        },
        seed: a.seed,
    })?;
    let manifest = write_dataset(&dataset, &out, a.force)?;
    Ok(json!({ "samples": manifest.samples.len(), "out": out }))
}

fn train(a: &TrainArgs) -> Result<serde_json::Value> {
    let resolved = a.fusion.resolve(None)?;
    let data = DatasetDir::open(&data_dir(&a.data)?)?;
    guard(&a.out, a.force)?;
    guard(&Checkpoint::loss_csv_path(&a.out), a.force)?;
    let render = data.config().render;
    let spec = ModelSpec {
        channels: render.channels,
        heads: resolved.heads.unwrap_or(ModelSpec::default().heads),
        amplitude: render.amplitude,
        seed: a.seed,
    };
    let cfg = TrainConfig {
        learning_rate: a.lr,
        steps: a.steps,
        cfg_weight: a.cfg_weight,
        views_per_batch: a.views,
        cfg_dropout_prob: a.cfg_dropout,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let model = Model::seeded(&spec)?;
    let state = train_style_path(&model, &data, &cfg, &resolved.fusion)?;
    Checkpoint::from_state(spec, cfg, &resolved.fusion, &state).write(&a.out, a.force)?;
    Ok(json!({
        "steps": state.step,
        "initial_probe_loss": state.initial_probe_loss,
        "final_probe_loss": state.final_probe_loss,
        "frozen_checksum": state.frozen_checksum,
        "out": a.out,
    }))
}

fn fuse(a: &FuseArgs) -> Result<serde_json::Value> {
    let mut inf = a.common.prepare(None)?;
    let style = read_feature_map(&a.style)?;
    let mask_path = a.mask.clone().or(inf.resolved.mask_path.take());
    if let Some(p) = mask_path {
        inf.resolved.fusion.mask = Some(read_mask(&p)?);
    }
    let (m, c, f) = (&inf.model, &inf.content, &inf.resolved.fusion);
    let zeros = style.zeros_like();
    let (uncond, cond) = if a.baseline {
        (m.fuse_baseline(c, &zeros, f)?, m.fuse_baseline(c, &style, f)?)
    } else {
        (m.fuse(c, &zeros, f)?, m.fuse(c, &style, f)?)
    };
    a.common.finish(uncond, cond)
}

fn interpolate(a: &InterpolateArgs) -> Result<serde_json::Value> {
    let inf = a.common.prepare(a.alpha)?;
    let first = read_feature_map(&a.style)?;
    let second = read_feature_map(&a.style2)?;
    let f = &inf.resolved.fusion;
    if f.alpha.is_none() {
        return Err(Error::domain("interpolate needs --alpha or alpha in --config"));
    }
    let zeros = first.zeros_like();
    let uncond = inf.model.fuse_blend(&inf.content, &zeros, &zeros, f)?;
    let cond = inf.model.fuse_blend(&inf.content, &first, &second, f)?;
    a.common.finish(uncond, cond)
}

fn localize(a: &LocalizeArgs) -> Result<serde_json::Value> {
    let mut inf = a.common.prepare(None)?;
    let style = read_feature_map(&a.style)?;
    let mask_path = a
        .mask
        .clone()
        .or(inf.resolved.mask_path.take())
        .ok_or_else(|| Error::domain("localize needs --mask or mask_path in --config"))?;
    let mut regions = vec![(style, read_mask(&mask_path)?)];
    if let (Some(s2), Some(m2)) = (&a.style2, &a.mask2) {
        regions.push((read_feature_map(s2)?, read_mask(m2)?));
    }
    let (m, c, f) = (&inf.model, &inf.content, &inf.resolved.fusion);
    let zeros: Vec<(FeatureMap, StyleMask)> = regions.iter().map(|(s, k)| (s.zeros_like(), k.clone())).collect();
    let uncond = m.fuse_regions(c, &borrow_regions(&zeros), f)?;
    let cond = m.fuse_regions(c, &borrow_regions(&regions), f)?;
    a.common.finish(uncond, cond)
}

fn borrow_regions(regions: &[(FeatureMap, StyleMask)]) -> Vec<(&FeatureMap, StyleMask)> {
    regions.iter().map(|(s, k)| (s, k.clone())).collect()
}

fn leading_samples(data: &DatasetDir, n: usize) -> Result<Vec<crate::synth::StylePairSample>> {
    (0..n.clamp(1, data.len())).map(|i| data.sample(i)).collect()
}

fn eval_cmd(a: &EvalArgs) -> Result<serde_json::Value> {
    let resolved = a.fusion.resolve(None)?;
    let data = DatasetDir::open(&data_dir(&a.data)?)?;
    let model = Checkpoint::read(&a.checkpoint)?.to_model()?;
    let (csv_path, json_path) = (a.out.join("metrics.csv"), a.out.join("metrics.json"));
    guard(&csv_path, a.force)?;
    guard(&json_path, a.force)?;
    let samples = leading_samples(&data, a.samples)?;
    let probe = fit_depth_probe(&samples)?;
    let summary = evaluate(&model, &samples, &resolved.fusion, &probe)?;
    fs::create_dir_all(&a.out)?;
    fs::write(&csv_path, reports_to_csv(&summary.reports))?;
    fs::write(&json_path, reports_to_json(&summary.reports)?)?;
    let aggregates: serde_json::Map<String, serde_json::Value> = summary
        .reports
        .iter()
        .map(|r| (r.name.clone(), json!(r.aggregate)))
        .collect();
    Ok(json!({ "metrics": aggregates, "content_error": summary.content_error, "out": a.out }))
}

fn gradcheck(a: &GradcheckArgs) -> Result<serde_json::Value> {
    if let Some(p) = &a.out {
        guard(p, a.force)?;
    }
    let reports = (0..a.instances)
        .map(|i| MicroInstance::seeded(a.seed + i)?.check(DEFAULT_FD_STEP, a.tol))
        .collect::<Result<Vec<_>>>()?;
    let report = GradReport::combine(reports, a.tol);
    if let Some(p) = &a.out {
        fs::write(p, report.to_csv())?;
    }
    Ok(json!({
        "instances": a.instances,
        "max_rel_err": report.max_rel_err,
        "tol": a.tol,
        "passed": report.passed,
    }))
}

fn sweep(a: &SweepArgs) -> Result<serde_json::Value> {
    let resolved = a.fusion.resolve(None)?;
    if a.taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::domain("every tau must be positive"));
    }
    let data = DatasetDir::open(&data_dir(&a.data)?)?;
    let model = Checkpoint::read(&a.checkpoint)?.to_model()?;
    guard(&a.out, a.force)?;
    let samples = leading_samples(&data, a.samples)?;
    let probe = fit_depth_probe(&samples)?;
    let rows = sweep_tau(&model, &samples, &resolved.fusion, &probe, &a.taus)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, sweep_to_csv(&rows))?;
    Ok(json!({ "rows": rows, "out": a.out }))
}

/// Executes one parsed command and returns its JSON summary.
pub fn run(cli: &Cli) -> Result<serde_json::Value> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Fuse(a) => fuse(a),
        Command::Interpolate(a) => interpolate(a),
        Command::Localize(a) => localize(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::SweepTau(a) => sweep(a),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingFile(_) => 2,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Shape(_) | Error::Domain(_) | Error::Format(_) | Error::WouldOverwrite(_) | Error::Json(_) => 3,
        Error::Numeric { .. } | Error::Diverged { .. } => 4,
        Error::FrozenPathChanged(_) | Error::Io(_) => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Shape(_) => "shape",
        Error::Numeric { .. } => "numeric",
        Error::Domain(_) => "invalid_value",
        Error::Format(_) => "format",
        Error::MissingFile(_) => "missing_file",
        Error::WouldOverwrite(_) => "would_overwrite",
        Error::Diverged { .. } => "diverged",
        Error::FrozenPathChanged(_) => "frozen_path_changed",
        Error::Io(_) => "io",
        Error::Json(_) => "config",
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let line = json!({ "error": "usage", "message": e.to_string().trim(), "exit_code": 3 });
            eprintln!("{line}");
            return 3;
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!(
                "{}",
                json!({ "error": error_kind(&e), "message": e.to_string(), "exit_code": code })
            );
            code
        }
    }
}
