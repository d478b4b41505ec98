use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stitch_core::config::{default_config_text, parse_config, RunConfig};
use stitch_core::correspond::parse_correspondences;
use stitch_core::eval::CropSide;
use stitch_core::image::{load_image, save_image};
use stitch_core::pipeline::{evaluate, run_pipeline};
use stitch_core::synth::{make_synthetic_scene, SceneKind, SceneSpec};
use stitch_core::StitchError;

/// Stitch two overlapping photographs into a panorama.
#[derive(Parser, Debug)]
#[command(name = "stitch", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic scene with exact correspondences.
    Synth(SynthArgs),
    /// Crop-based evaluation: hold out a band of the reference, stitch, score.
    Eval(RunArgs),
    /// Print the shipped default configuration.
    Defaults,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    #[arg(long, value_name = "PNG")]
    reference: Option<PathBuf>,
    #[arg(long, value_name = "PNG")]
    candidate: Option<PathBuf>,
    /// Match file ("x0 y0 x1 y1 [score]" per line); the built-in matcher runs without it.
    #[arg(long, value_name = "PATH")]
    correspondences: Option<PathBuf>,
    /// Flat "key = value" configuration; flags override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    dump_labels: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    energy_log: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    dump_candidates: Option<PathBuf>,
    /// Write the raw seam composite without Poisson blending.
    #[arg(long)]
    no_blend: bool,
    /// Width of the held-out reference band, px.
    #[arg(long, value_name = "PX")]
    eval_crop: Option<usize>,
    #[arg(long, value_name = "SIDE")]
    eval_side: Option<CropSide>,
    /// Dataset name for evaluation rows.
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// single-plane, two-plane, strips-translation or duplication-trap.
    #[arg(long)]
    scene: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, default_value_t = 480)]
    height: usize,
}

fn build_config(args: &RunArgs, eval: bool) -> Result<RunConfig, StitchError> {
    let mut cfg = match &args.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &args.reference {
        cfg.reference = Some(p.clone());
    }
    if let Some(p) = &args.candidate {
        cfg.candidate = Some(p.clone());
    }
    if let Some(p) = &args.correspondences {
        cfg.correspondences = Some(p.clone());
    }
    if let Some(p) = &args.out {
        cfg.out_dir = p.clone();
    }
    if let Some(s) = args.seed {
        cfg.rng_seed = s;
    }
    if args.no_blend {
        cfg.blend = false;
    }
    cfg.dump_labels = args.dump_labels.clone().or(cfg.dump_labels);
    cfg.energy_log = args.energy_log.clone().or(cfg.energy_log);
    cfg.dump_candidates = args.dump_candidates.clone().or(cfg.dump_candidates);
    if eval || args.eval_crop.is_some() || args.eval_side.is_some() || args.dataset.is_some() {
        let ev = cfg.eval.get_or_insert_with(Default::default);
        if let Some(px) = args.eval_crop {
            ev.crop_px = px;
        }
        if let Some(side) = args.eval_side {
            ev.side = side;
        }
        if let Some(name) = &args.dataset {
            ev.dataset = name.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &RunArgs) -> Result<(), StitchError> {
    let cfg = build_config(args, false)?;
    let report = run_pipeline(&cfg)?;
    println!("{}", report.to_text().trim_end());
    Ok(())
}

fn eval(args: &RunArgs) -> Result<(), StitchError> {
    let cfg = build_config(args, true)?;
    let missing = |key: &str| StitchError::Config {
        key: key.into(),
        line: None,
        reason: "input path is required".into(),
    };
    let reference = load_image(cfg.reference.as_ref().ok_or_else(|| missing("reference"))?)?;
    let candidate = load_image(cfg.candidate.as_ref().ok_or_else(|| missing("candidate"))?)?;
    let set = match &cfg.correspondences {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| StitchError::Io {
                path: path.clone(),
                source: e,
            })?;
            Some(parse_correspondences(std::io::BufReader::new(file))?)
        }
        None => None,
    };
    let report = evaluate(&reference, &candidate, set.as_ref(), &cfg)?;
    let csv = report.to_csv();
    create_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join("eval.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), StitchError> {
    let kind: SceneKind = args.scene.parse()?;
    let spec = SceneSpec::new(kind).with_size(args.width, args.height);
    let scene = make_synthetic_scene(&spec, args.seed)?;
    create_dir(&args.out)?;
    save_image(&scene.reference, args.out.join("reference.png"), false)?;
    save_image(&scene.candidate, args.out.join("candidate.png"), false)?;
    write(
        &args.out.join("correspondences.txt"),
        &scene.correspondences.to_text(),
    )?;
    write(&args.out.join("truth.txt"), &scene.truth_text())?;
    println!(
        "{kind} scene with {} correspondences written to {}",
        scene.correspondences.len(),
        args.out.display()
    );
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), StitchError> {
    std::fs::create_dir_all(dir).map_err(|e| StitchError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<(), StitchError> {
    std::fs::write(path, text).map_err(|e| StitchError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// 2 configuration, 3 no registration, 4 I/O, 1 anything else.
fn exit_code(err: &StitchError) -> u8 {
    match err.root() {
        StitchError::Config { .. } => 2,
        StitchError::NoRegistration(_) | StitchError::InsufficientMatches { .. } => 3,
        StitchError::Io { .. }
        | StitchError::Decode { .. }
        | StitchError::Encode { .. }
        | StitchError::Parse { .. }
        | StitchError::Validation { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        None => run(&cli.run),
        Some(Command::Eval(args)) => eval(args),
        Some(Command::Synth(args)) => synth(args),
        Some(Command::Defaults) => {
            print!("{}", default_config_text());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.stage() {
                Some(stage) => eprintln!("error [{stage}]: {}", e.root()),
                None => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
