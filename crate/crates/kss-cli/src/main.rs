//! `kss`: reconstruct 3D landmark shapes from single 2D projections.
//!
//! Machine-readable results go to stdout (or `--out`); diagnostics go to
//! stderr. Exit codes: 0 success, 1 self-check failure, 2 malformed or
//! degenerate input, 3 solver failure.

mod selfcheck;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use kss::io::{
    write_atomic, BasisFile, IoError, LandmarkFile, ReconstructionDocument, RotationDoc,
};
use kss::{
    asm_reconstruct, evaluate, make_test_projection, reconstruct, to_preshape, AsmOptions,
    Configuration, Error as KssError, ExperimentConfig, ShapePoint, SolverOptions, ViewSpec,
};

const EXIT_HELP: &str = "Exit codes:\n  \
    0  success\n  \
    1  self-check failure\n  \
    2  malformed or degenerate input\n  \
    3  solver failure\n\n\
    KSS_CONFIG names a default options file for `reconstruct` (overridden by --opts).";

#[derive(Parser)]
#[command(
    name = "kss",
    version,
    about = "3D landmark shape estimation from single 2D projections",
    after_help = EXIT_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a 3D shape from 2D landmarks and a basis file.
    Reconstruct(ReconstructArgs),
    /// Run the evaluation protocol over training/test landmark directories.
    Evaluate(EvaluateArgs),
    /// Project a 3D landmark file to 2D along a view direction.
    Project(ProjectArgs),
    /// Run the built-in numerical self checks.
    Selfcheck,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Kss,
    Asm,
}

#[derive(Args)]
struct ReconstructArgs {
    /// 2D landmark file (JSON, or points-only CSV with one `x,y` row per
    /// landmark).
    #[arg(long)]
    landmarks: PathBuf,
    /// Basis file with the 3D training shapes.
    #[arg(long)]
    basis: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Result file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Options file (JSON with optional `solver` and `asm` sections);
    /// defaults to $KSS_CONFIG when set.
    #[arg(long)]
    opts: Option<PathBuf>,
    /// Overrides the seed from the options file.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated landmark names for CSV input.
    #[arg(long)]
    names: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of 3D landmark JSON files used for training.
    #[arg(long)]
    train: PathBuf,
    /// Directory of 3D landmark JSON files used for testing.
    #[arg(long)]
    test: PathBuf,
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for per_instance.csv and summary.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads for independent test instances.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ProjectArgs {
    /// 3D landmark file.
    #[arg(long)]
    shape: PathBuf,
    /// View direction: `z`, `x`, `y`, or `vx,vy,vz` (normalized before use).
    #[arg(long)]
    view: String,
    /// Output 2D landmark file.
    #[arg(long)]
    out: PathBuf,
}

/// Failure carrying the process exit code.
struct CliFailure {
    code: u8,
    message: String,
}

type CliResult<T> = Result<T, CliFailure>;

fn input_error(message: impl Into<String>) -> CliFailure {
    CliFailure {
        code: 2,
        message: message.into(),
    }
}

impl From<IoError> for CliFailure {
    fn from(e: IoError) -> Self {
        input_error(e.to_string())
    }
}

impl From<KssError> for CliFailure {
    fn from(e: KssError) -> Self {
        let code = match &e {
            KssError::NoConvergence { .. } | KssError::AllRestartsFailed { .. } => 3,
            _ => 2,
        };
        CliFailure {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Reconstruct(args) => cmd_reconstruct(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Project(args) => cmd_project(&args),
        Command::Selfcheck => return selfcheck::run(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("kss: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Options file for `reconstruct`.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default)]
struct OptionsFile {
    solver: SolverOptions,
    asm: AsmOptions,
}

fn load_options(explicit: Option<&Path>) -> CliResult<OptionsFile> {
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os("KSS_CONFIG").map(PathBuf::from),
    };
    match path {
        None => Ok(OptionsFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| input_error(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| input_error(format!("{}: line {}: {e}", p.display(), e.line())))
        }
    }
}

fn load_2d_landmarks(args: &ReconstructArgs) -> CliResult<LandmarkFile> {
    let names = args.names.as_ref().map(|s| {
        s.split(',')
            .map(|n| n.trim().to_string())
            .collect::<Vec<_>>()
    });
    let file = if args.landmarks.extension().and_then(|e| e.to_str()) == Some("csv") {
        LandmarkFile::load_csv_2d(&args.landmarks, names)?
    } else {
        LandmarkFile::load(&args.landmarks)?
    };
    if file.dimension != 2 {
        return Err(input_error(format!(
            "{}: expected 2D landmarks, got dimension {}",
            args.landmarks.display(),
            file.dimension
        )));
    }
    Ok(file)
}

fn emit(doc: &ReconstructionDocument, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => write_atomic(path, doc.to_json().as_bytes()).map_err(CliFailure::from),
        None => {
            print!("{doc}");
            Ok(())
        }
    }
}

fn cmd_reconstruct(args: &ReconstructArgs) -> CliResult<()> {
    let landmarks = load_2d_landmarks(args)?;
    let basis_file = BasisFile::load(&args.basis)?;
    if landmarks.k != basis_file.shapes[0].k {
        return Err(input_error(format!(
            "landmark count mismatch: observation has {} landmarks, basis has {}",
            landmarks.k, basis_file.shapes[0].k
        )));
    }
    let mut options = load_options(args.opts.as_deref())?;
    if let Some(seed) = args.seed {
        options.solver.seed = seed;
        options.asm.seed = seed;
    }
    let names = basis_file.names().map(|n| n.to_vec());

    let doc = match args.method {
        MethodArg::Kss => {
            let observed_config = landmarks.to_configuration(&args.landmarks)?;
            let observed = ShapePoint::new(to_preshape(&observed_config)?);
            let basis = basis_file.to_basis_set(&args.basis)?;
            let res = reconstruct(&observed, &basis, &options.solver)?;
            let rep = res.shape3d.rep().matrix();
            ReconstructionDocument {
                method: "kss".into(),
                objective: res.objective,
                objective_trace: res.objective_trace,
                weights: Some(res.weights.weights().to_vec()),
                coefficients: None,
                rotation: RotationDoc::from_matrix(&res.rotation.to_rotation()),
                alpha: None,
                translation: None,
                names,
                points3d: (0..rep.ncols())
                    .map(|i| [rep[(0, i)], rep[(1, i)], rep[(2, i)]])
                    .collect(),
                iterations: res.iterations,
                restart_index: res.restart_index,
                warnings: res.warnings.iter().map(|w| w.to_string()).collect(),
                seed: options.solver.seed,
            }
        }
        MethodArg::Asm => {
            let observed = landmarks.to_configuration(&args.landmarks)?;
            let basis = basis_file.to_configurations(&args.basis)?;
            let res = asm_reconstruct(&observed, &basis, &options.asm)?;
            let x = res.shape3d.matrix();
            let iterations = res.trace.len().saturating_sub(1);
            ReconstructionDocument {
                method: "asm".into(),
                objective: res.residual,
                objective_trace: res.trace,
                weights: None,
                coefficients: Some(res.coefficients),
                rotation: RotationDoc::from_matrix(res.camera.rotation()),
                alpha: Some(res.camera.alpha()),
                translation: Some([res.camera.translation()[0], res.camera.translation()[1]]),
                names,
                points3d: (0..x.ncols())
                    .map(|i| [x[(0, i)], x[(1, i)], x[(2, i)]])
                    .collect(),
                iterations,
                restart_index: res.restart_index,
                warnings: res.warnings.iter().map(|w| w.to_string()).collect(),
                seed: options.asm.seed,
            }
        }
    };
    emit(&doc, args.out.as_deref())
}

fn load_landmark_dir(dir: &Path) -> CliResult<Vec<Configuration>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| input_error(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|x| x.to_str()) == Some("json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(input_error(format!(
            "{}: no landmark .json files found",
            dir.display()
        )));
    }
    let mut configs = Vec::with_capacity(paths.len());
    for p in &paths {
        let file = LandmarkFile::load(p)?;
        if file.dimension != 3 {
            return Err(input_error(format!(
                "{}: expected 3D landmarks, got dimension {}",
                p.display(),
                file.dimension
            )));
        }
        configs.push(file.to_configuration(p)?);
    }
    Ok(configs)
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| input_error(format!("thread pool: {e}")))?;
    }
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| input_error(format!("{}: {e}", args.config.display())))?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| input_error(format!("{}: line {}: {e}", args.config.display(), e.line())))?;

    let training = load_landmark_dir(&args.train)?;
    let testing = load_landmark_dir(&args.test)?;
    let output = evaluate(&training, &testing, &config)?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| input_error(format!("{}: {e}", args.out_dir.display())))?;
    write_atomic(
        &args.out_dir.join("per_instance.csv"),
        kss::pipeline::per_instance_csv(&output.per_instance).as_bytes(),
    )?;
    write_atomic(
        &args.out_dir.join("summary.csv"),
        kss::pipeline::summary_csv(&output.reports).as_bytes(),
    )?;
    let failures: usize = output.reports.iter().map(|r| r.failures).sum();
    eprintln!(
        "kss: evaluated {} report cells, {} per-instance records, {} failures",
        output.reports.len(),
        output.per_instance.len(),
        failures
    );
    Ok(())
}

fn parse_view(spec: &str) -> CliResult<ViewSpec> {
    match spec {
        "z" => Ok(ViewSpec::AxisZ),
        "x" => Ok(ViewSpec::Custom([1.0, 0.0, 0.0])),
        "y" => Ok(ViewSpec::Custom([0.0, 1.0, 0.0])),
        other => {
            let parts: Vec<&str> = other.split(',').collect();
            if parts.len() != 3 {
                return Err(input_error(format!(
                    "view must be z, x, y or vx,vy,vz; got `{other}`"
                )));
            }
            let mut v = [0.0f64; 3];
            for (i, p) in parts.iter().enumerate() {
                v[i] = p
                    .trim()
                    .parse()
                    .map_err(|_| input_error(format!("view component `{p}` is not a number")))?;
            }
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n < 1e-12 {
                return Err(input_error("view vector must be nonzero"));
            }
            Ok(ViewSpec::Custom([v[0] / n, v[1] / n, v[2] / n]))
        }
    }
}

fn cmd_project(args: &ProjectArgs) -> CliResult<()> {
    let file = LandmarkFile::load(&args.shape)?;
    if file.dimension != 3 {
        return Err(input_error(format!(
            "{}: expected 3D landmarks, got dimension {}",
            args.shape.display(),
            file.dimension
        )));
    }
    let view = parse_view(&args.view)?;
    let config = file.to_configuration(&args.shape)?;
    let shape = ShapePoint::new(to_preshape(&config)?);
    let projected = make_test_projection(&shape, &view)?;
    let out = LandmarkFile::from_configuration(
        &Configuration::new(projected.rep().matrix().clone())?,
        file.names.clone(),
        file.units.clone(),
    );
    out.save(&args.out)?;
    Ok(())
}
