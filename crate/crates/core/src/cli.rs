//! Command-line entry point.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::channelrep::{split_rgb, Domain};
use crate::covers::{textured_cover, CoverStyle};
use crate::filterbank::{full_bank, FilterBank, PadMode};
use crate::jpeg::{encode_jpeg, parse_jpeg, write_jpeg, JpegError};
use crate::model::{
    load_checkpoint, read_container, save_checkpoint, write_container, CheckpointError, Container,
    ModelError, NamedTensor, UcnetConfig,
};
use crate::ppm::{read_ppm, write_ppm, PpmError};
use crate::stegosim::{jpeg_embed, lsbm_embed, nonzero_ac_count, EmbedSpec, StegoError};
use crate::train::{
    evaluate, format_manifest, load_image, read_manifest, train, PairRecord, TrainConfig,
    TrainError,
};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  usage error (bad or unknown flags)
  3  file system error
  4  manifest error (missing, empty or malformed)
  5  image decode error (PPM or JPEG)
  6  checkpoint error (bad magic, version, digest)
  7  configuration error (model or training settings)
  8  embedding parameter error
  9  metrics error

Errors are printed to stderr as one line:
  error code=<n> kind=<kind> msg=\"<message>\"";

#[derive(Debug, Parser)]
#[command(name = "ucnet", version, about = "Color image steganalysis toolkit", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the fixed 62-kernel residual bank as text.
    GenFilters {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate seeded synthetic textured covers.
    GenCovers {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write JPEG covers at this quality instead of PPM.
        #[arg(long)]
        jpeg_quality: Option<u8>,
    },
    /// Embed into every cover of a directory and write a manifest.
    Simulate(SimulateArgs),
    /// Compute the 186-plane channel representation of one image.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        domain: Domain,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        truncation: f64,
        #[arg(long, value_parser = ["zero", "reflect"], default_value = "zero")]
        pad: String,
    },
    /// Train a detector on a cover/stego manifest.
    Train(TrainArgs),
    /// Score a manifest with a trained model.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Describe a JPEG file or a checkpoint.
    Info(InfoArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    cover_dir: PathBuf,
    #[arg(long)]
    domain: Domain,
    /// Payload in bits per site; the change rate follows from ternary entropy.
    #[arg(long, conflicts_with = "beta", required_unless_present = "beta")]
    alpha: Option<f64>,
    /// Change rate per site, as an alternative to --alpha.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    epochs: usize,
    #[arg(long)]
    batch_pairs: usize,
    #[arg(long)]
    lr: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    lr_decay: f64,
    #[arg(long, default_value_t = 8)]
    lr_step: usize,
    #[arg(long, default_value_t = 0.2)]
    eval_fraction: f64,
    #[arg(long)]
    augment: bool,
    /// Batches used to re-estimate BN statistics after each epoch (0 = off).
    #[arg(long, default_value_t = 8)]
    bn_recalibration_batches: usize,
    /// Architecture preset.
    #[arg(long, value_parser = ["desk", "tiny"], default_value = "desk")]
    arch: String,
    /// Optional JSON file receiving the per-epoch history.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct InfoArgs {
    #[arg(long)]
    jpeg: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Internal,
    Usage,
    Io,
    Manifest,
    Decode,
    Checkpoint,
    Config,
    Embed,
    Metrics,
}

impl ErrorKind {
    pub fn code(self) -> i32 {
        match self {
            ErrorKind::Internal => 1,
            ErrorKind::Usage => 2,
            ErrorKind::Io => 3,
            ErrorKind::Manifest => 4,
            ErrorKind::Decode => 5,
            ErrorKind::Checkpoint => 6,
            ErrorKind::Config => 7,
            ErrorKind::Embed => 8,
            ErrorKind::Metrics => 9,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Internal => "internal",
            ErrorKind::Usage => "usage",
            ErrorKind::Io => "io",
            ErrorKind::Manifest => "manifest",
            ErrorKind::Decode => "decode",
            ErrorKind::Checkpoint => "checkpoint",
            ErrorKind::Config => "config",
            ErrorKind::Embed => "embed",
            ErrorKind::Metrics => "metrics",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub msg: String,
}

impl CliError {
    fn new(kind: ErrorKind, msg: impl Into<String>) -> Self {
        Self {
            kind,
            msg: msg.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.msg.replace('\n', " ").replace('"', "'");
        write!(
            f,
            "error code={} kind={} msg=\"{}\"",
            self.kind.code(),
            self.kind.name(),
            msg
        )
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let kind = match &e {
            TrainError::EmptyManifest(_) | TrainError::Manifest { .. } => ErrorKind::Manifest,
            TrainError::Image { .. } => ErrorKind::Decode,
            TrainError::Io { .. } => ErrorKind::Io,
            TrainError::Config(_) | TrainError::Model(_) => ErrorKind::Config,
            TrainError::Metrics(_) => ErrorKind::Metrics,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        let kind = match &e {
            CheckpointError::Io(_) => ErrorKind::Io,
            CheckpointError::Model(_) => ErrorKind::Config,
            _ => ErrorKind::Checkpoint,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::new(ErrorKind::Config, e.to_string())
    }
}

impl From<StegoError> for CliError {
    fn from(e: StegoError) -> Self {
        Self::new(ErrorKind::Embed, e.to_string())
    }
}

fn decode_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::new(ErrorKind::Decode, format!("{}: {e}", path.display()))
}

fn ppm_err(path: &Path, e: PpmError) -> CliError {
    match e {
        PpmError::Io(io) => CliError::io(path, io),
        other => decode_err(path, other),
    }
}

fn jpeg_err(path: &Path, e: JpegError) -> CliError {
    decode_err(path, e)
}

fn show_config<K: AsRef<str>>(pairs: &[(K, String)]) {
    let mut out = std::io::stdout().lock();
    for (k, v) in pairs {
        let _ = writeln!(out, "config {}={v}", k.as_ref());
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Cover files of `domain` in `dir`, sorted by name.
fn list_covers(dir: &Path, domain: Domain) -> Result<Vec<PathBuf>, CliError> {
    let exts: &[&str] = match domain {
        Domain::SpatialRgb => &["ppm"],
        Domain::JpegYcbcr => &["jpg", "jpeg"],
    };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        let ok = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| exts.contains(&e.to_ascii_lowercase().as_str()));
        if ok && p.is_file() {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::io(p, e))
}

fn gen_filters(out: &Path) -> Result<(), CliError> {
    let bank = full_bank();
    show_config(&[("out", out.display().to_string()), ("kernels", bank.len().to_string())]);
    write_file(out, bank.to_text().as_bytes())?;
    println!("wrote {} kernels to {}", bank.len(), out.display());
    Ok(())
}

fn gen_covers(
    out_dir: &Path,
    count: usize,
    size: usize,
    seed: u64,
    quality: Option<u8>,
) -> Result<(), CliError> {
    if size < 8 {
        return Err(CliError::new(ErrorKind::Config, "cover size must be at least 8"));
    }
    show_config(&[
        ("out_dir", out_dir.display().to_string()),
        ("count", count.to_string()),
        ("size", size.to_string()),
        ("seed", seed.to_string()),
        ("format", quality.map_or("ppm".into(), |q| format!("jpeg q={q}"))),
    ]);
    create_dir(out_dir)?;
    let style = CoverStyle::default();
    for i in 0..count {
        let img = textured_cover(size, size, seed.wrapping_add(i as u64), &style);
        match quality {
            None => {
                let p = out_dir.join(format!("cover_{i:05}.ppm"));
                write_ppm(&img, &p).map_err(|e| ppm_err(&p, e))?;
            }
            Some(q) => {
                let p = out_dir.join(format!("cover_{i:05}.jpg"));
                let planes = split_rgb(&img).map_err(|e| CliError::new(ErrorKind::Internal, e.to_string()))?;
                let (bytes, _) = encode_jpeg(&planes, q).map_err(|e| CliError::new(ErrorKind::Config, e.to_string()))?;
                write_file(&p, &bytes)?;
            }
        }
    }
    println!("wrote {count} covers to {}", out_dir.display());
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let base = match (a.alpha, a.beta) {
        (Some(alpha), None) => EmbedSpec::from_alpha(alpha, a.seed)?,
        (None, Some(beta)) => EmbedSpec::from_beta(beta, a.seed)?,
        _ => return Err(CliError::new(ErrorKind::Usage, "give exactly one of --alpha and --beta")),
    };
    show_config(&[
        ("cover_dir", a.cover_dir.display().to_string()),
        ("domain", a.domain.to_string()),
        ("alpha", format!("{:?}", base.payload_alpha)),
        ("beta", format!("{:?}", base.change_rate_beta)),
        ("seed", a.seed.to_string()),
        ("out_dir", a.out_dir.display().to_string()),
        ("manifest", a.manifest.display().to_string()),
    ]);
    let covers = list_covers(&a.cover_dir, a.domain)?;
    if covers.is_empty() {
        return Err(CliError::new(
            ErrorKind::Io,
            format!("no {} covers in {}", a.domain, a.cover_dir.display()),
        ));
    }
    create_dir(&a.out_dir)?;
    let mut records = Vec::with_capacity(covers.len());
    for (i, cover) in covers.iter().enumerate() {
        let spec = base.for_item(i as u64);
        let name = cover.file_name().expect("listed files have names");
        let stego = a.out_dir.join(name);
        if absolute(&stego)? == absolute(cover)? {
            return Err(CliError::new(ErrorKind::Config, "--out-dir must differ from --cover-dir"));
        }
        match a.domain {
            Domain::SpatialRgb => {
                let img = read_ppm(cover).map_err(|e| ppm_err(cover, e))?;
                let planes = split_rgb(&img).map_err(|e| decode_err(cover, e))?;
                let s = lsbm_embed(&planes, &spec)?;
                write_ppm(&s.to_image8(), &stego).map_err(|e| ppm_err(&stego, e))?;
            }
            Domain::JpegYcbcr => {
                let bytes = std::fs::read(cover).map_err(|e| CliError::io(cover, e))?;
                let j = parse_jpeg(&bytes).map_err(|e| jpeg_err(cover, e))?;
                let s = jpeg_embed(&j, &spec)?;
                let out = write_jpeg(&s).map_err(|e| jpeg_err(cover, e))?;
                write_file(&stego, &out)?;
            }
        }
        records.push(PairRecord {
            cover_path: absolute(cover)?,
            stego_path: absolute(&stego)?,
            domain: a.domain,
            alpha: spec.payload_alpha,
            seed: spec.seed,
        });
    }
    write_file(&a.manifest, format_manifest(&records).as_bytes())?;
    println!("embedded {} covers; manifest {}", records.len(), a.manifest.display());
    Ok(())
}

fn preprocess(
    input: &Path,
    domain: Domain,
    out: &Path,
    truncation: f64,
    pad: &str,
) -> Result<(), CliError> {
    let pad_mode = if pad == "reflect" { PadMode::Reflect } else { PadMode::Zero };
    let mut cfg = UcnetConfig::tiny(domain);
    cfg.truncation_t = truncation;
    cfg.pad_mode = pad_mode;
    cfg.validate()?;
    show_config(&[
        ("in", input.display().to_string()),
        ("domain", domain.to_string()),
        ("out", out.display().to_string()),
        ("truncation_t", format!("{truncation:?}")),
        ("pad_mode", pad.to_string()),
    ]);
    let planes = load_image(input, domain).map_err(CliError::from)?;
    let model = crate::model::Model::<f32>::zeroed(&cfg)?;
    let rep = model.preprocess(&planes)?;
    let container = Container {
        meta: vec![
            ("kind".into(), "rep".into()),
            ("domain".into(), domain.to_string()),
            ("truncation_t".into(), format!("{truncation:?}")),
            ("pad_mode".into(), pad.to_string()),
        ],
        tensors: vec![NamedTensor {
            name: "rep".into(),
            dims: vec![rep.planes(), rep.height, rep.width],
            values: rep.maps,
        }],
    };
    write_file(out, &write_container(&container)?)?;
    let d = &container.tensors[0].dims;
    println!("wrote {}x{}x{} representation to {}", d[0], d[1], d[2], out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_pairs: a.batch_pairs,
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        lr_decay: a.lr_decay,
        lr_step: a.lr_step,
        seed: a.seed,
        eval_fraction: a.eval_fraction,
        workers: a.workers,
        augment: a.augment,
        bn_recalibration_batches: a.bn_recalibration_batches,
    };
    cfg.validate()?;
    let records = read_manifest(&a.manifest)?;
    let domain = records[0].domain;
    if let Some(r) = records.iter().find(|r| r.domain != domain) {
        return Err(CliError::new(
            ErrorKind::Manifest,
            format!("{}: mixes {} and {} pairs", a.manifest.display(), domain, r.domain),
        ));
    }
    let model_cfg = if a.arch == "tiny" {
        UcnetConfig::tiny(domain)
    } else {
        UcnetConfig::desk(domain)
    };
    let mut shown: Vec<(String, String)> = [
        ("manifest", a.manifest.display().to_string()),
        ("pairs", records.len().to_string()),
        ("model_out", a.model_out.display().to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("batch_pairs", cfg.batch_pairs.to_string()),
        ("lr", format!("{:?}", cfg.lr)),
        ("momentum", format!("{:?}", cfg.momentum)),
        ("weight_decay", format!("{:?}", cfg.weight_decay)),
        ("lr_decay", format!("{:?}", cfg.lr_decay)),
        ("lr_step", cfg.lr_step.to_string()),
        ("eval_fraction", format!("{:?}", cfg.eval_fraction)),
        ("seed", cfg.seed.to_string()),
        ("workers", cfg.workers.to_string()),
        ("augment", cfg.augment.to_string()),
        ("bn_recalibration_batches", cfg.bn_recalibration_batches.to_string()),
        ("arch", a.arch.clone()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    shown.extend(model_cfg.to_pairs());
    show_config(&shown);
    let outcome = train(&a.manifest, &cfg, &model_cfg, |r| {
        println!(
            "epoch {} lr={:.3e} train_loss={:.6} val_accuracy={:.4} val_p_e={:.4}",
            r.epoch, r.lr, r.train_loss, r.val_accuracy, r.val_p_e
        );
    })?;
    save_checkpoint(&outcome.model, &a.model_out)?;
    if let Some(h) = &a.history {
        let rows: Vec<serde_json::Value> = outcome
            .history
            .iter()
            .map(|r| {
                serde_json::json!({
                    "epoch": r.epoch,
                    "lr": r.lr,
                    "train_loss": r.train_loss,
                    "val_accuracy": r.val_accuracy,
                    "val_p_e": r.val_p_e,
                })
            })
            .collect();
        let doc = serde_json::json!({ "best_epoch": outcome.best_epoch, "history": rows });
        write_file(h, serde_json::to_string_pretty(&doc).expect("json").as_bytes())?;
    }
    println!(
        "best epoch {} val_p_e={:.4}; saved {}",
        outcome.best_epoch,
        outcome.history[outcome.best_epoch - 1].val_p_e,
        a.model_out.display()
    );
    Ok(())
}

fn eval_cmd(manifest: &Path, model: &Path, report: &Path, workers: usize) -> Result<(), CliError> {
    show_config(&[
        ("manifest", manifest.display().to_string()),
        ("model", model.display().to_string()),
        ("report", report.display().to_string()),
        ("workers", workers.to_string()),
    ]);
    let m = load_checkpoint::<f32>(model)?;
    let records = read_manifest(manifest)?;
    let metrics = evaluate(&m, &records, workers.max(1))?;
    write_file(report, metrics.to_json().as_bytes())?;
    println!(
        "accuracy={:.4} p_e={:.4} tp={} fp={} tn={} fn={}",
        metrics.accuracy, metrics.p_e, metrics.tp, metrics.fp, metrics.tn, metrics.fn_
    );
    Ok(())
}

fn info_cmd(a: &InfoArgs) -> Result<(), CliError> {
    if let Some(path) = &a.jpeg {
        show_config(&[("jpeg", path.display().to_string())]);
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let j = parse_jpeg(&bytes).map_err(|e| jpeg_err(path, e))?;
        println!("size {}x{}", j.width, j.height);
        println!("components {}", j.components.len());
        println!("sampling {}", j.sampling_summary());
        for (ci, c) in j.components.iter().enumerate() {
            println!(
                "component {ci} id={} blocks={}x{} quant_table={}",
                c.id, c.blocks_w, c.blocks_h, c.quant_index
            );
        }
        for (i, t) in j.quant_tables.iter().enumerate() {
            if let Some(t) = t {
                let row: Vec<String> = t.iter().map(|v| v.to_string()).collect();
                println!("quant_table {i} zigzag {}", row.join(" "));
            }
        }
        println!("nonzero_ac {}", nonzero_ac_count(&j));
    }
    if let Some(path) = &a.model {
        show_config(&[("model", path.display().to_string())]);
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let c = read_container(&bytes)?;
        for (k, v) in &c.meta {
            println!("meta {k}={v}");
        }
        let mut total = 0usize;
        for t in &c.tensors {
            println!("tensor {} {:?}", t.name, t.dims);
            if !t.name.contains("running_") {
                total += t.values.len();
            }
        }
        if c.meta("kind") == Some("model") {
            let m = load_checkpoint::<f32>(path)?;
            println!("param_count {}", m.param_count());
            debug_assert_eq!(total, m.param_count());
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenFilters { out } => gen_filters(&out),
        Command::GenCovers {
            out_dir,
            count,
            size,
            seed,
            jpeg_quality,
        } => gen_covers(&out_dir, count, size, seed, jpeg_quality),
        Command::Simulate(a) => simulate(&a),
        Command::Preprocess {
            input,
            domain,
            out,
            truncation,
            pad,
        } => preprocess(&input, domain, &out, truncation, &pad),
        Command::Train(a) => train_cmd(&a),
        Command::Eval {
            manifest,
            model,
            report,
            workers,
        } => eval_cmd(&manifest, &model, &report, workers),
        Command::Info(a) => info_cmd(&a),
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::new(ErrorKind::Usage, first));
            return ErrorKind::Usage.code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.kind.code()
        }
    }
}

/// Reads a filter file written by `gen-filters`.
pub fn read_filter_file(path: &Path) -> Result<FilterBank, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    FilterBank::from_text(&text).map_err(|e| decode_err(path, e))
}
