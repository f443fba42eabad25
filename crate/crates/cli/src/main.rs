mod config;

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hybridgan::data::synthetic::{generate_synthetic, SyntheticTask, SyntheticTaskSpec};
use hybridgan::data::{batch_to_image, image_to_batch, load_manifest, load_rgb, preprocess_eval, Interpolation};
use hybridgan::eval::{evaluate_translation, Direction, EvalMode, EvalOptions, ExternalSegmenter, Segmenter};
use hybridgan::training::{load_checkpoint, resume, train, TrainHooks};
use hybridgan::{DatasetManifest, Domain, Error, LabelPalette, PreprocessConfig};

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "hybridgan", version, about = "Image-to-image translation from mixed paired and unpaired data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train G1, G2 and D1..D4 on a dataset manifest.
    Train(TrainArgs),
    /// Translate every PNG in a directory with one generator of a checkpoint.
    Translate(TranslateArgs),
    /// Score a checkpoint on the aligned pairs of a manifest.
    Evaluate(EvaluateArgs),
    /// Write a procedural benchmark dataset and its manifest.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Continue from `checkpoints/latest.ckpt` in the run directory if present.
    #[arg(long)]
    resume: bool,
    /// Dotted overrides such as `train.total_epochs=2` or `manifest=data/manifest.txt`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dir {
    X2y,
    Y2x,
}

impl From<Dir> for Direction {
    fn from(d: Dir) -> Self {
        match d {
            Dir::X2y => Direction::XToY,
            Dir::Y2x => Direction::YToX,
        }
    }
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum)]
    direction: Dir,
    /// Square working resolution; defaults to each image's shorter side rounded down to a multiple of 4.
    #[arg(long)]
    size: Option<u32>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    PhotoToLabel,
    LabelToPhoto,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    direction: Dir,
    #[arg(long, value_enum, default_value = "photo-to-label")]
    mode: Mode,
    /// Manifest-format file whose palette section defines the classes. Defaults to the manifest's own palette.
    #[arg(long)]
    palette: Option<PathBuf>,
    /// External segmentation program for label-to-photo scoring, called as `PROGRAM IN_DIR OUT_DIR`.
    #[arg(long)]
    segmenter: Option<PathBuf>,
    /// Directory for the report and image grids.
    #[arg(long)]
    output: PathBuf,
    /// Square evaluation resolution.
    #[arg(long, default_value_t = 256)]
    size: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    ColorInversion,
    RegionTexture,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "color-inversion")]
    task: Task,
    #[arg(long, default_value_t = 32)]
    resolution: u32,
    #[arg(long, default_value_t = 10)]
    paired: usize,
    #[arg(long, default_value_t = 190)]
    unpaired: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

enum Failure {
    Config(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read(path, source) => Failure::Core(Error::Io { path, source }),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Failure {
    Failure::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Core(e) => match e {
                Error::Io { .. } | Error::Image { .. } | Error::Compatibility { .. } | Error::Integrity(_) => 3,
                Error::NonFinite { .. } => 4,
                _ => 2,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let config = RunConfig::resolve(args.config.as_deref(), &args.overrides)?;
    let manifest_path = config
        .manifest
        .clone()
        .ok_or_else(|| Failure::Config("no manifest configured (set `manifest = \"...\"` or pass manifest=PATH)".into()))?;
    config.train.validate()?;
    let manifest = load_manifest(&manifest_path)?;
    let dir = config.run_dir();
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let resolved = dir.join("config.toml");
    std::fs::write(&resolved, config.to_toml()).map_err(|e| io_err(&resolved, e))?;
    log::info!("run directory {}", dir.display());

    let log_path = dir.join("train.log");
    let latest = dir.join("checkpoints").join("latest.ckpt");
    let resuming = args.resume && latest.is_file();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(resuming)
        .write(true)
        .truncate(!resuming)
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let hooks = TrainHooks {
        checkpoint_dir: Some(dir.join("checkpoints")),
        log: Some(&mut log),
        on_epoch: None,
    };
    let state = if resuming {
        let state = load_checkpoint(&latest)?;
        log::info!("resuming after epoch {}", state.completed_epochs);
        resume(state, &manifest, &config.train, hooks)?
    } else {
        train(&manifest, &config.train, hooks)?
    };
    log.flush().map_err(|e| io_err(&log_path, e))?;
    println!(
        "trained {} epochs ({} steps); checkpoints in {}",
        state.completed_epochs,
        state.global_step,
        dir.join("checkpoints").display()
    );
    Ok(())
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_translate(args: TranslateArgs) -> Result<(), Failure> {
    let state = load_checkpoint(&args.checkpoint)?;
    let (net, domain) = match args.direction {
        Dir::X2y => (&state.networks.g1, Domain::X),
        Dir::Y2x => (&state.networks.g2, Domain::Y),
    };
    let inputs = png_files(&args.input)?;
    if inputs.is_empty() {
        log::warn!("no PNG files in {}", args.input.display());
        return Ok(());
    }
    std::fs::create_dir_all(&args.output).map_err(|e| io_err(&args.output, e))?;
    for path in &inputs {
        let img = load_rgb(path)?;
        let size = args.size.unwrap_or_else(|| img.width().min(img.height()) / 4 * 4);
        let pre = PreprocessConfig::fixed(size);
        let img = preprocess_eval(&img, &pre, pre.interpolation)?;
        let input = image_to_batch(&img, domain, pre.normalize_to)?;
        let out = hybridgan::generator_forward(net, &input)?;
        let dest = args.output.join(path.file_name().expect("listed files have names"));
        batch_to_image(&out, 0)
            .save(&dest)
            .map_err(|e| Failure::Core(Error::Image { path: dest.clone(), source: e }))?;
    }
    println!("translated {} images into {}", inputs.len(), args.output.display());
    Ok(())
}

fn load_palette(path: &Path) -> Result<LabelPalette, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let parsed = DatasetManifest::parse(&text, path.parent().unwrap_or(Path::new(".")))?;
    parsed
        .palette
        .ok_or_else(|| Failure::Config(format!("{} has no [palette x|y] section", path.display())))
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let state = load_checkpoint(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest)?;
    let palette = match &args.palette {
        Some(p) => Some(load_palette(p)?),
        None => manifest.palette.clone(),
    };
    std::fs::create_dir_all(&args.output).map_err(|e| io_err(&args.output, e))?;
    let external = args.segmenter.as_ref().map(|program| ExternalSegmenter {
        program: program.clone(),
        args: Vec::new(),
        work_dir: args.output.join("segmenter"),
    });
    let direction = Direction::from(args.direction);
    let translator = match direction {
        Direction::XToY => &state.networks.g1,
        Direction::YToX => &state.networks.g2,
    };
    let preprocess = PreprocessConfig {
        interpolation: Interpolation::Bicubic,
        ..PreprocessConfig::fixed(args.size)
    };
    let options = EvalOptions {
        direction,
        mode: match args.mode {
            Mode::PhotoToLabel => EvalMode::PhotoToLabel,
            Mode::LabelToPhoto => EvalMode::LabelToPhoto,
        },
        palette: palette.as_ref(),
        segmenter: external.as_ref().map(|s| s as &dyn Segmenter),
        preprocess,
        grid_dir: Some(args.output.join("grids")),
    };
    let report = evaluate_translation(translator, &manifest, &options)?;
    for (name, text) in [("metrics.txt", report.to_key_value()), ("metrics.md", report.to_table())] {
        let path = args.output.join(name);
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    let spec = SyntheticTaskSpec {
        resolution: args.resolution,
        num_paired: args.paired,
        num_unpaired: args.unpaired,
        task: match args.task {
            Task::ColorInversion => SyntheticTask::ColorInversion,
            Task::RegionTexture => SyntheticTask::RegionTexture,
        },
        seed: args.seed,
    };
    let manifest = generate_synthetic(&spec, &args.output)?;
    let c = manifest.counts();
    println!(
        "wrote {} paired, {} unpaired x, {} unpaired y to {}",
        c.paired,
        c.unpaired_x,
        c.unpaired_y,
        args.output.join("manifest.txt").display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Translate(a) => cmd_translate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
