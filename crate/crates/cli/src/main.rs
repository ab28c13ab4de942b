use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use weightflow::metatrain::MetaKind;
use weightflow_cli::commands::{self, Outcome};
use weightflow_cli::config::{sha256_hex, RunConfig};
use weightflow_cli::error::{CliError, CliResult};
use weightflow_cli::report;
use weightflow_cli::workspace::{git_describe, resolve_root, under_root, write_json, Ctx, RunDir, RunLog};

#[derive(Parser, Debug)]
#[command(name = "weightflow", version, about = "Flow-matching meta-models over neural-network weights")]
struct Cli {
    /// Workspace root; defaults to $WEIGHTFLOW_WORKSPACE, then the current directory.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,

    /// Run configuration (TOML), relative to the workspace root.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for seed sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Cmd,
}

fn parse_kind(s: &str) -> Result<MetaKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "cfm" => Ok(MetaKind::Cfm),
        "mmfm" => Ok(MetaKind::Mmfm),
        "jko" => Ok(MetaKind::Jko),
        _ => Err(format!("unknown meta-model kind {s:?}; expected cfm, mmfm or jko")),
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train base classifiers and save their checkpoint trajectories.
    Pretrain,
    /// Train the weight VAE on every saved checkpoint.
    TrainVae,
    /// Train a CFM, MMFM or JKO meta-model on the trajectory zoo.
    TrainMeta {
        #[arg(long, value_parser = parse_kind)]
        kind: Option<MetaKind>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Sample classifiers from a meta-model and record the inference loss series.
    Generate {
        #[arg(long, value_parser = parse_kind)]
        kind: Option<MetaKind>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Evaluate weight containers (default: every generated batch) on the validation split.
    Eval {
        #[arg(long)]
        input: Vec<PathBuf>,
    },
    /// Reward fine-tune a velocity meta-model on a corrupted dataset.
    Finetune,
    /// Run the meta-detectron shift study.
    DetectShift {
        #[arg(long)]
        q_size: Option<usize>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Tabulate finished runs.
    Report {
        /// Run names under runs/ or paths to run directories.
        runs: Vec<PathBuf>,
        /// Output directory, relative to the workspace root.
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Pretrain => "pretrain",
            Cmd::TrainVae => "train-vae",
            Cmd::TrainMeta { .. } => "train-meta",
            Cmd::Generate { .. } => "generate",
            Cmd::Eval { .. } => "eval",
            Cmd::Finetune => "finetune",
            Cmd::DetectShift { .. } => "detect-shift",
            Cmd::Report { .. } => "report",
        }
    }
}

fn load_ctx(cli: &Cli) -> CliResult<Ctx> {
    let root = resolve_root(cli.workspace.as_deref());
    let (cfg, cfg_hash) = match &cli.config {
        Some(p) => RunConfig::load(&under_root(&root, p))?,
        None if matches!(cli.command, Cmd::Report { .. }) => (RunConfig::default(), sha256_hex(b"")),
        None => return Err(CliError::Config("--config is required".into())),
    };
    if cli.jobs == 0 {
        return Err(CliError::Config("--jobs must be positive".into()));
    }
    Ok(Ctx { root, cfg, cfg_hash, seed: cli.seed, jobs: cli.jobs })
}

fn run_report(ctx: &Ctx, runs: &[PathBuf], out: &std::path::Path) -> CliResult<Outcome> {
    let dirs: Vec<PathBuf> = if runs.is_empty() {
        vec![RunDir::new(&ctx.root, &ctx.cfg.name).0]
    } else {
        runs.iter()
            .map(|r| {
                let named = ctx.root.join("runs").join(r);
                if r.components().count() == 1 && named.is_dir() {
                    named
                } else {
                    under_root(&ctx.root, r)
                }
            })
            .collect()
    };
    let tables = report::collect(&dirs)?;
    let files = report::write_report(&tables, &under_root(&ctx.root, out))?;
    print!("{}", report::markdown(&tables));
    Ok(Outcome {
        artifacts: files,
        summary: serde_json::json!({
            "runs": dirs.len(),
            "accuracy_rows": tables.accuracy.len(),
            "shift_rows": tables.shift.len(),
        }),
    })
}

fn dispatch(cli: &Cli, ctx: &Ctx) -> CliResult<Outcome> {
    match &cli.command {
        Cmd::Pretrain => commands::pretrain(ctx),
        Cmd::TrainVae => commands::train_vae_cmd(ctx),
        Cmd::TrainMeta { kind, k } => commands::train_meta_cmd(ctx, *kind, *k),
        Cmd::Generate { kind, steps, n } => commands::generate(ctx, *kind, *steps, *n),
        Cmd::Eval { input } => commands::eval(ctx, input),
        Cmd::Finetune => commands::finetune(ctx),
        Cmd::DetectShift { q_size, seeds } => commands::detect_shift(ctx, *q_size, *seeds),
        Cmd::Report { runs, out } => run_report(ctx, runs, out),
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let ctx = load_ctx(cli)?;
    let start = Instant::now();
    let outcome = dispatch(cli, &ctx)?;
    let name = cli.command.name();
    let log = RunLog {
        command: name,
        git_describe: git_describe(),
        config_sha256: &ctx.cfg_hash,
        seed: ctx.seed,
        jobs: ctx.jobs,
        wall_time_s: start.elapsed().as_secs_f64(),
        artifacts: outcome.artifacts.iter().map(|p| p.display().to_string()).collect(),
        summary: &outcome.summary,
    };
    let log_path = match &cli.command {
        Cmd::Report { out, .. } => under_root(&ctx.root, out).join("report.log.json"),
        _ => ctx.run().log(name),
    };
    write_json(&log_path, &log)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
