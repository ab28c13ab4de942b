//! Workspace resolution, run directory layout and run logs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Serialize;
use weightflow::basezoo::{make_dataset, SynthDataset};
use weightflow::metatrain::MetaKind;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::store::Provenance;

pub const WORKSPACE_ENV: &str = "WEIGHTFLOW_WORKSPACE";

/// Explicit flag, then `WEIGHTFLOW_WORKSPACE`, then the current directory.
pub fn resolve_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(WORKSPACE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Relative paths are taken relative to the workspace root.
pub fn under_root(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

/// `runs/<name>/` and the fixed file names inside it.
#[derive(Clone, Debug)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn new(root: &Path, name: &str) -> Self {
        RunDir(root.join("runs").join(name))
    }

    pub fn base_run(&self, i: usize) -> PathBuf {
        self.0.join("base").join(format!("run_{i:03}.nmwt"))
    }

    pub fn vae(&self) -> PathBuf {
        self.0.join("vae").join("vae.nmwt")
    }

    pub fn meta(&self, kind: MetaKind) -> PathBuf {
        self.0.join("meta").join(format!("{}.nmwt", kind.as_str()))
    }

    pub fn generated(&self, kind: MetaKind) -> PathBuf {
        self.0.join("generated").join(format!("{}.nmwt", kind.as_str()))
    }

    pub fn traj_loss_csv(&self, kind: MetaKind) -> PathBuf {
        self.0.join("generated").join(format!("{}_traj_loss.csv", kind.as_str()))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.0.join("eval")
    }

    pub fn finetune_stem(&self, kind: MetaKind, level: u8) -> PathBuf {
        self.0.join("finetune").join(format!("{}_l{level}", kind.as_str()))
    }

    pub fn detect_stem(&self, q_size: usize) -> PathBuf {
        self.0.join("detect").join(format!("shift_q{q_size}"))
    }

    pub fn log(&self, command: &str) -> PathBuf {
        self.0.join("logs").join(format!("{command}.json"))
    }

    /// Sorted paths of every saved base trajectory.
    pub fn base_runs(&self) -> CliResult<Vec<PathBuf>> {
        let dir = self.0.join("base");
        let mut out: Vec<PathBuf> = match fs::read_dir(&dir) {
            Ok(rd) => rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "nmwt"))
                .collect(),
            Err(_) => Vec::new(),
        };
        if out.is_empty() {
            return Err(CliError::Data(format!("no base trajectories in {}; run `pretrain` first", dir.display())));
        }
        out.sort();
        Ok(out)
    }
}

/// Shared state of one command invocation.
#[derive(Clone, Debug)]
pub struct Ctx {
    pub root: PathBuf,
    pub cfg: RunConfig,
    pub cfg_hash: String,
    pub seed: u64,
    pub jobs: usize,
}

impl Ctx {
    pub fn run(&self) -> RunDir {
        RunDir::new(&self.root, &self.cfg.name)
    }

    pub fn dataset(&self) -> CliResult<SynthDataset> {
        Ok(make_dataset(&self.cfg.dataset)?)
    }

    pub fn provenance(&self, command: &str) -> Provenance {
        Provenance {
            command: command.into(),
            seed: self.seed,
            config_sha256: self.cfg_hash.clone(),
            dataset: self.cfg.dataset.name.clone(),
        }
    }

    /// Thread pool for seed sweeps; results are collected in seed order, so
    /// the job count never changes the output.
    pub fn pool(&self) -> CliResult<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunLog<'a> {
    pub command: &'a str,
    pub git_describe: String,
    pub config_sha256: &'a str,
    pub seed: u64,
    pub jobs: usize,
    pub wall_time_s: f64,
    pub artifacts: Vec<String>,
    pub summary: &'a serde_json::Value,
}

pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        None => Ok(()),
    }
}
