//! The `fsr` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fsr_core::eval::{self, Baseline, EvalProtocol, Method};
use fsr_core::trainer::{Degradation, Trainer};
use fsr_core::{gradcheck, synthetic, Model, Variant};

use crate::error::{Error, Result};
use crate::{checkpoint, config, data, imageio, report};

#[derive(Debug, Parser)]
#[command(name = "fsr", version, about = "Arbitrary-scale face super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a folder of face images
    Train(TrainArgs),
    /// Super-resolve one image
    Infer(InferArgs),
    /// Score a checkpoint or a baseline on held-out images
    Eval(EvalArgs),
    /// Score several variants side by side and write difference maps
    Ablate(AblateArgs),
    /// Compare analytic gradients with finite differences
    Gradcheck(GradcheckArgs),
    /// Generate a procedural face corpus
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON or key = value run configuration; defaults if omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Output folder for `checkpoint.ckpt` and `loss.csv`
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint; its stored configuration wins
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Vertical scale, and horizontal too unless --scale-x is given
    #[arg(long)]
    pub scale: f64,
    #[arg(long)]
    pub scale_x: Option<f64>,
    /// .png or .ppm
    #[arg(long)]
    pub out: PathBuf,
    /// Run a different path configuration than the checkpoint's (full, -L, -G, -S)
    #[arg(long, allow_hyphen_values = true)]
    pub variant: Option<String>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// Side of the square LR inputs
    #[arg(long, default_value_t = 32)]
    pub lr_size: usize,
    /// Downsampling that produces the LR inputs: bicubic or nearest
    #[arg(long, default_value = "bicubic")]
    pub degradation: String,
}

impl ProtocolArgs {
    fn protocol(&self) -> Result<EvalProtocol> {
        let degradation = match self.degradation.as_str() {
            "bicubic" => Degradation::Bicubic,
            "nearest" => Degradation::Nearest,
            other => return Err(Error::Usage(format!("unknown degradation {other:?}"))),
        };
        Ok(EvalProtocol {
            lr_size: self.lr_size,
            degradation,
        })
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
    pub ckpt: Option<PathBuf>,
    /// Score an interpolation baseline instead: bicubic, bilinear or nearest
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub scales: Vec<f64>,
    /// CSV output; stdout if omitted
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// `label=path`, repeated or comma separated, e.g. `full=a.ckpt,-L=b.ckpt`
    #[arg(long = "ckpts", value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub ckpts: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub scales: Vec<f64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Folder for |SR − bicubic| images
    #[arg(long)]
    pub diffmaps: Option<PathBuf>,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 25)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 120)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

fn parse_variant(label: &str) -> Result<Variant> {
    Variant::from_label(label)
        .ok_or_else(|| Error::Usage(format!("unknown variant {label:?}; expected full, -L, -G or -S")))
}

fn parse_baseline(label: &str) -> Result<Baseline> {
    [Baseline::Bicubic, Baseline::Bilinear, Baseline::Nearest]
        .into_iter()
        .find(|b| b.label() == label)
        .ok_or_else(|| Error::Usage(format!("unknown baseline {label:?}")))
}

fn load_model(path: &Path) -> Result<(Model, Variant)> {
    let ckpt = checkpoint::load(path)?;
    Ok((ckpt.to_model()?, ckpt.variant))
}

fn write_csv_to(path: Option<&Path>, out: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => report::write_file(p, |file| f(file)),
        None => f(out),
    }
}

/// Runs one command, writing human-readable progress to `out`. Returns
/// whether the command succeeded; only `gradcheck` can report failure
/// without an error.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<bool> {
    match cli.command {
        Command::Train(a) => train(a, out).map(|_| true),
        Command::Infer(a) => infer(a, out).map(|_| true),
        Command::Eval(a) => evaluate(a, out).map(|_| true),
        Command::Ablate(a) => ablate(a, out).map(|_| true),
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
        Command::Synth(a) => synth(a, out).map(|_| true),
    }
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{msg}").map_err(|e| Error::io("<output>", e))
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let ckpt_path = a.out.join("checkpoint.ckpt");
    let log_path = a.out.join("loss.csv");

    let mut trainer = match &a.resume {
        Some(p) => {
            if a.config.is_some() {
                return Err(Error::Usage("--config and --resume are exclusive".into()));
            }
            Trainer::resume(&checkpoint::load(p)?)?
        }
        None => {
            let cfg = match &a.config {
                Some(p) => config::load(p)?,
                None => config::RunConfig::default(),
            };
            Trainer::new(cfg.train, cfg.model, cfg.variant)?
        }
    };
    let corpus: Vec<_> = data::load_dir(&a.data)?.into_iter().map(|(_, img)| img).collect();
    let mut log = report::LossLog::create(&log_path, a.resume.is_some())?;
    let mut last = f64::NAN;
    while trainer.epoch() < trainer.config().epochs {
        let mut log_err = None;
        trainer.run_epoch(&corpus, &mut |r| {
            last = r.loss;
            if let Err(e) = log.record(r) {
                log_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = log_err {
            return Err(e);
        }
        checkpoint::save(&ckpt_path, &trainer.checkpoint())?;
        say(out, format_args!("epoch {} loss {last:.6}", trainer.epoch()))?;
    }
    say(
        out,
        format_args!(
            "trained {} epochs, {} iterations, final loss {last:.6}; checkpoint {}",
            trainer.epoch(),
            trainer.iteration(),
            ckpt_path.display()
        ),
    )
}

fn infer(a: InferArgs, out: &mut dyn Write) -> Result<()> {
    let (model, stored) = load_model(&a.ckpt)?;
    let variant = a.variant.as_deref().map(parse_variant).transpose()?.unwrap_or(stored);
    let lr = imageio::read_image(&a.input)?;
    let sr = eval::infer(&model, &lr, a.scale, a.scale_x.unwrap_or(a.scale), &variant)?;
    imageio::write_image(&a.out, &sr)?;
    say(
        out,
        format_args!(
            "{}x{} -> {}x{} ({})",
            lr.height(),
            lr.width(),
            sr.height(),
            sr.width(),
            a.out.display()
        ),
    )
}

fn summarize(out: &mut dyn Write, r: &eval::EvalReport) -> Result<()> {
    for s in r.scales() {
        if let Some((p, q)) = r.mean_at(s) {
            say(out, format_args!("{:>8} x{s:<5} PSNR {p:8.4} dB  SSIM {q:.4}", r.label))?;
        }
    }
    Ok(())
}

fn evaluate(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let corpus = data::load_dir(&a.data)?;
    let protocol = a.protocol.protocol()?;
    let loaded;
    let method = match (&a.ckpt, &a.baseline) {
        (Some(p), _) => {
            loaded = load_model(p)?;
            Method::Model(&loaded.0, loaded.1)
        }
        (None, Some(b)) => Method::Baseline(parse_baseline(b)?),
        (None, None) => return Err(Error::Usage("need --ckpt or --baseline".into())),
    };
    let rep = eval::evaluate(&method, &corpus, &a.scales, &protocol)?;
    match &a.report {
        Some(p) => {
            report::write_file(p, |f| report::write_eval(f, &rep))?;
            summarize(out, &rep)
        }
        None => write_csv_to(None, out, |w| report::write_eval(w, &rep)),
    }
}

fn ablate(a: AblateArgs, out: &mut dyn Write) -> Result<()> {
    let corpus = data::load_dir(&a.data)?;
    let protocol = a.protocol.protocol()?;
    let mut loaded = Vec::new();
    for entry in &a.ckpts {
        let (label, path) = entry
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("expected label=path, got {entry:?}")))?;
        let variant = parse_variant(label)?;
        let (model, _) = load_model(Path::new(path))?;
        loaded.push((variant, model));
    }
    let models: Vec<(Variant, &Model)> = loaded.iter().map(|(v, m)| (*v, m)).collect();
    let requested: Vec<Variant> = loaded.iter().map(|(v, _)| *v).collect();
    let (reports, maps) = eval::ablate(&models, &requested, &corpus, &a.scales, &protocol)?;
    if let Some(dir) = &a.diffmaps {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for m in &maps {
            let stem = Path::new(&m.image)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            imageio::write_image(dir.join(format!("{}_{stem}_x{}.png", m.variant, m.scale)), &m.map)?;
        }
    }
    match &a.report {
        Some(p) => {
            report::write_file(p, |f| report::write_ablation(f, &reports))?;
            reports.iter().try_for_each(|r| summarize(out, r))
        }
        None => write_csv_to(None, out, |w| report::write_ablation(w, &reports)),
    }
}

fn gradcheck_cmd(a: GradcheckArgs, out: &mut dyn Write) -> Result<bool> {
    let outcomes = gradcheck::run_suite(a.trials, a.seed)?;
    let mut ok = true;
    for o in &outcomes {
        ok &= o.passed();
        say(
            out,
            format_args!(
                "{} {:<16} max rel err {:.3e} over {} components ({} skipped)",
                if o.passed() { "PASS" } else { "FAIL" },
                o.name,
                o.max_rel_error,
                o.compared,
                o.skipped
            ),
        )?;
    }
    Ok(ok)
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let faces = synthetic::face_corpus(a.count, a.size, a.seed)?;
    data::save_dir(&a.out, "face", &faces)?;
    say(
        out,
        format_args!(
            "wrote {} faces of {}x{} to {}",
            a.count,
            a.size,
            a.size,
            a.out.display()
        ),
    )
}
