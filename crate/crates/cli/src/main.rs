use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bimodal_segnet::autodiff::derive_seed;
use bimodal_segnet::harness::{
    evaluate, frames_from_sequences, generate_plan, load_checkpoint, load_sequences, run_grad_suite, run_suite,
    train, ConfigDoc, EvalReport, Frame, GradSuiteConfig, Precision, Split, SuiteConfig, TrainConfig,
};
use bimodal_segnet::model::Model;
use bimodal_segnet::synth::{generate_sequence, write_sequence, ConditionAxis, RenderConfig, SceneSpec};
use bimodal_segnet::{Element, Error, ErrorClass};

#[derive(Parser)]
#[command(name = "bseg", version, about = "Event + RGB segmentation: data, training and evaluation")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic sequences.
    GenData(GenDataArgs),
    /// Train one model from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint, optionally grouped by a condition axis.
    Eval(EvalArgs),
    /// Train and compare every architecture over several seeds.
    Ablate(AblateArgs),
    /// Run the finite-difference gradient suites.
    GradCheck(GradCheckArgs),
}

#[derive(clap::Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Generate the `[data]` plan of this config instead of one sequence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `section.key=value` override applied to the config.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 2)]
    objects: usize,
    #[arg(long, default_value = "normal")]
    light: String,
    #[arg(long, default_value = "rotational")]
    trajectory: String,
    #[arg(long, default_value = "slow")]
    speed: String,
    #[arg(long, default_value = "near")]
    distance: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    frames: usize,
    #[arg(long, default_value_t = 260)]
    height: usize,
    #[arg(long, default_value_t = 346)]
    width: usize,
    #[arg(long)]
    window_us: Option<u64>,
    #[arg(long)]
    subframes: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// INI-style config with [model], [train] and [data] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for metrics.csv, checkpoints and reports.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sequence directory or directory of sequences.
    #[arg(long)]
    data: PathBuf,
    /// Group rows by this condition.
    #[arg(long, value_parser = ["objects", "light", "trajectory", "speed", "distance"])]
    by: Option<String>,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = bimodal_segnet::events::DEFAULT_CLIP)]
    event_clip: u32,
}

#[derive(clap::Args)]
struct AblateArgs {
    /// Training config; an optional [suite] section sets kinds, seeds and
    /// test_scenes_per_cell.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 64)]
    coords: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_doc(path: Option<&Path>, overrides: &[String]) -> Result<ConfigDoc, Error> {
    let mut doc = match path {
        Some(p) => ConfigDoc::parse(&fs::read_to_string(p)?)?,
        None => ConfigDoc::default(),
    };
    for o in overrides {
        doc.apply_override(o)?;
    }
    Ok(doc)
}

fn gen_data(args: GenDataArgs) -> Result<(), Error> {
    if let Some(path) = &args.config {
        let cfg = TrainConfig::from_doc(&load_doc(Some(path), &args.overrides)?)?;
        let seqs = generate_plan(&cfg.data)?;
        for (i, seq) in seqs.iter().enumerate() {
            write_sequence(&args.out.join(format!("scene_{i:04}")), seq)?;
        }
        println!("wrote {} sequences to {}", seqs.len(), args.out.display());
        return Ok(());
    }
    if !args.overrides.is_empty() {
        return Err(Error::InvalidArgument("--set needs --config".into()));
    }
    let mut spec = SceneSpec::default();
    spec.set("objects", &args.objects.to_string())?;
    spec.set("light", &args.light)?;
    spec.set("trajectory", &args.trajectory)?;
    spec.set("speed", &args.speed)?;
    spec.set("distance", &args.distance)?;
    spec.set("seed", &args.seed.to_string())?;
    let mut render = RenderConfig::with_size(args.height, args.width);
    if let Some(v) = args.window_us {
        render.window_us = v;
    }
    if let Some(v) = args.subframes {
        render.subframes = v;
    }
    if let Some(v) = args.threshold {
        render.threshold = v;
    }
    let seq = generate_sequence(&spec, &render, args.frames)?;
    write_sequence(&args.out, &seq)?;
    println!("wrote {} frames and {} events to {}", seq.len(), seq.events.len(), args.out.display());
    Ok(())
}

fn load_frames(cfg: &TrainConfig) -> Result<Vec<Frame>, Error> {
    let seqs = match &cfg.data_path {
        Some(p) => load_sequences(p)?,
        None => generate_plan(&cfg.data)?,
    };
    frames_from_sequences(&seqs, cfg.data.event_clip)
}

fn train_as<T: Element>(cfg: &TrainConfig, frames: &[Frame], out: &Path) -> Result<(), Error> {
    let n_scenes = frames.last().map_or(0, |f| f.scene + 1);
    let split = Split::by_scene(n_scenes, derive_seed(cfg.data.seed, 0x5011));
    let run = train::<T>(cfg, frames, &split, Some(out))?;
    println!("trained {} for {} steps", cfg.kind, run.steps);
    let test = Split::select(frames, &split.test);
    if !test.is_empty() {
        let report = evaluate(&run.model, &test, None)?;
        fs::write(out.join("test_report.csv"), report.to_csv())?;
        print!("{}", report.to_table());
    }
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<(), Error> {
    let cfg = TrainConfig::from_doc(&load_doc(args.config.as_deref(), &args.overrides)?)?;
    let frames = load_frames(&cfg)?;
    log::info!("{} frames from {} scenes", frames.len(), frames.last().map_or(0, |f| f.scene + 1));
    match cfg.precision {
        Precision::F32 => train_as::<f32>(&cfg, &frames, &args.out),
        Precision::F64 => train_as::<f64>(&cfg, &frames, &args.out),
    }
}

fn eval_cmd(args: EvalArgs) -> Result<(), Error> {
    let model: Model<f32> = load_checkpoint(&args.checkpoint)?;
    let axis: Option<ConditionAxis> = args.by.as_deref().map(str::parse).transpose()?;
    let frames = frames_from_sequences(&load_sequences(&args.data)?, args.event_clip)?;
    log::info!("evaluating {} ({} parameters) on {} frames", model.kind, model.param_count(), frames.len());
    let refs: Vec<&Frame> = frames.iter().collect();
    let report: EvalReport = evaluate(&model, &refs, axis)?;
    print!("{}", report.to_table());
    if let Some(p) = &args.csv {
        fs::write(p, report.to_csv())?;
    }
    if report.is_empty() {
        return Err(Error::Dataset(format!("no frames found under {}", args.data.display())));
    }
    Ok(())
}

fn ablate_cmd(args: AblateArgs) -> Result<(), Error> {
    let doc = load_doc(args.config.as_deref(), &args.overrides)?;
    let cfg = SuiteConfig::from_doc(&doc)?;
    let run = run_suite(&cfg, args.out.as_deref())?;
    print!("{}", run.report.to_table());
    match run.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn grad_check_cmd(args: GradCheckArgs) -> Result<(), Error> {
    if !(args.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("--tol must be positive, got {}", args.tol)));
    }
    let cfg = GradSuiteConfig {
        instances: args.instances,
        arch_coords: args.coords,
        tol: args.tol,
        seed: args.seed,
        ..GradSuiteConfig::default()
    };
    let reports = run_grad_suite(&cfg)?;
    for r in &reports {
        println!("{r}");
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.label.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheck(format!("failed: {}", failed.join(", "))))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::GradCheck(a) => grad_check_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
