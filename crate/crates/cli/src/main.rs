use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lesionforge::config::preset_names;
use lesionforge::dataset::{load_normals, synthesize_dataset};
use lesionforge::eval::{evaluate, read_score_csv, roc_curve, scored_set_from_rows};
use lesionforge::montage::build_montage;
use lesionforge::{
    extract_patches, validate_config, BinaryMask, Connectivity, Image, LesionBank, LesionType,
    PreprocessOptions, RunConfig, WindowSpec,
};

#[derive(Parser)]
#[command(
    name = "lesionforge",
    version,
    about = "One-shot lesion synthesis for anomaly detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a lesion bank from one annotated image.
    Extract(ExtractArgs),
    /// Synthesize an anomalous counterpart for every normal image.
    Synth(SynthArgs),
    /// AUC and (with two score files) the DeLong test.
    Eval(EvalArgs),
    /// Tile synthetic samples beside their normals.
    Montage(MontageArgs),
    /// Print a named run configuration.
    Preset(PresetArgs),
    /// Check a run configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasePreprocess {
    None,
    Fundus,
    Ct,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Starting recipe; the flags below override it.
    #[arg(long, value_enum, default_value = "none")]
    preprocess: BasePreprocess,
    #[arg(long, requires = "window_width", allow_negative_numbers = true)]
    window_level: Option<f64>,
    #[arg(long, requires = "window_level")]
    window_width: Option<f64>,
    #[arg(long, value_enum)]
    fov_crop: Option<Switch>,
    #[arg(long)]
    size: Option<usize>,
}

impl PreprocessArgs {
    fn options(&self) -> Result<PreprocessOptions> {
        let mut opts = match self.preprocess {
            BasePreprocess::None => PreprocessOptions::default(),
            BasePreprocess::Fundus => PreprocessOptions::fundus(),
            BasePreprocess::Ct => PreprocessOptions::ct(),
        };
        if let (Some(level), Some(width)) = (self.window_level, self.window_width) {
            opts.ct_window = Some(WindowSpec::new(level, width)?);
        }
        if let Some(s) = self.fov_crop {
            opts.fov_crop = matches!(s, Switch::On);
        }
        if self.size.is_some() {
            opts.size = self.size;
        }
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask_ma: Option<PathBuf>,
    #[arg(long)]
    mask_he: Option<PathBuf>,
    #[arg(long)]
    mask_se: Option<PathBuf>,
    #[arg(long)]
    mask_ex: Option<PathBuf>,
    #[arg(long)]
    mask_covid: Option<PathBuf>,
    #[arg(long)]
    mask_other: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8, value_parser = parse_connectivity)]
    connectivity: u8,
    /// Provenance tag; defaults to the image file stem.
    #[arg(long)]
    source_id: Option<String>,
    #[command(flatten)]
    preprocess: PreprocessArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    normals: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    scores_b: Option<PathBuf>,
    /// Write the ROC polyline of `--scores` as CSV.
    #[arg(long)]
    roc: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct MontageArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PresetArgs {
    /// Preset name; `--list` shows them all.
    #[arg(required_unless_present = "list")]
    name: Option<String>,
    #[arg(long, required_unless_present = "list")]
    seed: Option<u64>,
    #[arg(long)]
    list: bool,
}

fn parse_connectivity(s: &str) -> Result<u8, String> {
    match s {
        "4" => Ok(4),
        "8" => Ok(8),
        _ => Err("must be 4 or 8".into()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract(a) => extract(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::Montage(a) => {
            let img = build_montage(&a.dataset, a.k)?;
            img.write_png(&a.out)?;
            Ok(())
        }
        Command::Preset(a) => preset(a),
        Command::Validate { config } => {
            load_config(&config)?;
            println!("{}: ok", config.display());
            Ok(())
        }
    }
}

fn extract(a: ExtractArgs) -> Result<()> {
    let opts = a.preprocess.options()?;
    let img = Image::read_png(&a.image)?;
    let inputs = [
        (LesionType::Ma, &a.mask_ma),
        (LesionType::He, &a.mask_he),
        (LesionType::Se, &a.mask_se),
        (LesionType::Ex, &a.mask_ex),
        (LesionType::Covid, &a.mask_covid),
        (LesionType::Other, &a.mask_other),
    ];
    let mut types = Vec::new();
    let mut masks = Vec::new();
    for (t, path) in inputs {
        if let Some(p) = path {
            types.push(t);
            masks.push(BinaryMask::read_png(p)?);
        }
    }
    if masks.is_empty() {
        bail!("at least one --mask-* is required");
    }
    let (img, masks) = opts.apply(&img, &masks)?;
    let annotations: Vec<_> = types.into_iter().zip(masks).collect();
    let source_id = match a.source_id {
        Some(s) => s,
        None => a
            .image
            .file_stem()
            .and_then(|s| s.to_str())
            .context("cannot derive --source-id from the image path")?
            .to_owned(),
    };
    let connectivity = Connectivity::from_count(a.connectivity).expect("checked by clap");
    let bank = extract_patches(&img, &annotations, connectivity, &source_id)?;
    bank.save(&a.out)?;
    eprintln!("{} patches, n_l = {}", bank.len(), bank.n_l);
    Ok(())
}

fn load_config(path: &Path) -> Result<(RunConfig, String)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg =
        validate_config(&text).with_context(|| format!("invalid config {}", path.display()))?;
    Ok((cfg, text))
}

fn pick(cli: Option<PathBuf>, config: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    cli.or_else(|| config.clone())
        .with_context(|| format!("--{flag} not given and paths.{flag} absent from config"))
}

fn synth(a: SynthArgs) -> Result<()> {
    let (cfg, text) = load_config(&a.config)?;
    let bank_dir = pick(a.bank, &cfg.paths.bank, "bank")?;
    let normals_path = pick(a.normals, &cfg.paths.normals, "normals")?;
    let out = pick(a.out, &cfg.paths.out, "out")?;
    let bank = LesionBank::load(&bank_dir)?;
    let normals = load_normals(&normals_path)?;
    let records = synthesize_dataset(&normals, &bank, &cfg, &text, &out, a.threads)?;
    eprintln!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<lesionforge::eval::ScoreRow>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_score_csv(f, &path.display().to_string())?)
}

fn eval(a: EvalArgs) -> Result<()> {
    let rows_a = read_scores(&a.scores)?;
    let rows_b = a.scores_b.as_deref().map(read_scores).transpose()?;
    let report = evaluate(&rows_a, rows_b.as_deref())?;
    if let Some(path) = &a.roc {
        let roc = roc_curve(&scored_set_from_rows(&rows_a)?)?;
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "fpr,tpr")?;
        for p in roc {
            writeln!(w, "{},{}", p.fpr, p.tpr)?;
        }
        w.flush()?;
    }
    let json = serde_json::to_string_pretty(&report)?;
    match &a.report {
        Some(path) => {
            fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn preset(a: PresetArgs) -> Result<()> {
    if a.list {
        let stdout = io::stdout();
        let mut out = stdout.lock();
        for n in preset_names() {
            writeln!(out, "{n}")?;
        }
        return Ok(());
    }
    let name = a.name.expect("required by clap");
    let mut cfg = RunConfig::preset(&name)?;
    cfg.seed = a.seed.expect("required by clap");
    print!("{}", cfg.to_json());
    Ok(())
}
