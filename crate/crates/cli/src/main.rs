use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use degp_cli::config::{resolve, ExperimentKind, Overrides};
use degp_cli::error::{CliError, CliResult};
use degp_cli::experiments::{self, RunReport};
use degp_cli::output::{compare_runs, Manifest};

#[derive(Parser)]
#[command(name = "degp", version, about = "Deep-ensemble GP experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// 1-D regression with a perturbed training point.
    Regress1d(RunArgs),
    /// K-fold regression on tabular datasets.
    Uci(RunArgs),
    /// Synthetic multiclass classification with an OOD ring.
    ClassifySynth(RunArgs),
    /// Contextual bandits.
    Bandit(RunArgs),
    /// Numerical checks of the KL, log-det, sampling and prior kernels.
    KernelCheck(RunArgs),
    /// Run again from a manifest's stored configuration.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun into a temporary directory and compare every output byte for byte.
    Verify { manifest: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file merged over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset; see the README for the list.
    #[arg(long)]
    preset: Option<String>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to $DEGP_OUT_ROOT/<output_dir>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to one method.
    #[arg(long)]
    method: Option<String>,
}

fn out_root() -> PathBuf {
    std::env::var_os("DEGP_OUT_ROOT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results"))
}

fn run_kind(kind: ExperimentKind, a: RunArgs) -> CliResult<RunReport> {
    let ov = Overrides { seed: a.seed, method: a.method };
    let cfg = resolve(kind, a.preset.as_deref(), a.config.as_deref(), &ov)?;
    let out = a.out.unwrap_or_else(|| out_root().join(&cfg.output_dir));
    log::info!("{} ({}) -> {}", kind.name(), cfg.preset, out.display());
    experiments::run(&cfg, &out)
}

fn rerun(manifest: &Path, out: &Path) -> CliResult<RunReport> {
    let m = Manifest::load(manifest)?;
    degp_cli::config::validate(&m.config)?;
    experiments::run(&m.config, out)
}

fn dispatch(cmd: Command) -> CliResult<Vec<String>> {
    let report = match cmd {
        Command::Regress1d(a) => run_kind(ExperimentKind::Regress1d, a)?,
        Command::Uci(a) => run_kind(ExperimentKind::Uci, a)?,
        Command::ClassifySynth(a) => run_kind(ExperimentKind::ClassifySynth, a)?,
        Command::Bandit(a) => run_kind(ExperimentKind::Bandit, a)?,
        Command::KernelCheck(a) => run_kind(ExperimentKind::KernelCheck, a)?,
        Command::Rerun { manifest, out } => {
            let out = match out {
                Some(o) => o,
                None => {
                    let m = Manifest::load(&manifest)?;
                    out_root().join(format!("{}-rerun", m.config.output_dir))
                }
            };
            rerun(&manifest, &out)?
        }
        Command::Verify { manifest } => {
            let original = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
            let tmp = std::env::temp_dir().join(format!("degp-verify-{}", std::process::id()));
            let report = rerun(&manifest, &tmp)?;
            let differ = compare_runs(&report.manifest, &original, &tmp)?;
            std::fs::remove_dir_all(&tmp).map_err(|e| CliError::Io(tmp.clone(), e))?;
            if differ.is_empty() {
                println!("identical: {} files", report.manifest.files.len() + 1);
            }
            return Ok(differ.into_iter().map(|f| format!("{f} differs")).collect());
        }
    };
    println!("wrote {} files", report.manifest.files.len() + 1);
    Ok(report.failures)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in failures {
                eprintln!("FAIL {f}");
            }
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
