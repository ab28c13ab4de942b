use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use weightflow_cli::commands::EvalSummary;
use weightflow_cli::container::{sidecar_path, Container, Kind};

const TINY: &str = r#"
name = "tiny"

[dataset]
n_samples = 240

[base]
n_runs = 2

[base.train]
hidden = [4]
n_epochs = 6
save_epochs = 3
saves_per_epoch = 2
batch_size = 16

[meta]
k = 3
n_generate = 6
steps = 10

[meta.train]
hidden = [16]
epochs = 4
batch_size = 4

[vae.model]
latent_dim = 8
hidden = [16]

[vae.train]
steps = 20
batch_size = 4

[finetune.ft]
iterations = 2
traj_batch = 2

[finetune.reward]
batch_size = 16

[detect]
seeds = 3

[detect.ft]
iterations = 1
traj_batch = 2

[detect.cdc]
q_size = 10
n_draws = 2
p_batch = 16
"#;

struct Ws {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Ws {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("run.toml"), config).unwrap();
        Ws { _dir: dir, root }
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_weightflow"))
            .arg("--workspace")
            .arg(&self.root)
            .args(["--config", "run.toml"])
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn run_dir(&self) -> PathBuf {
        self.root.join("runs/tiny")
    }
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let ws = Ws::new(TINY);
    ws.ok(&["pretrain", "--seed", "7"]);
    let rd = ws.run_dir();
    let traj = rd.join("base/run_000.nmwt");
    assert_eq!(Container::read(&traj).unwrap().kind, Kind::Traj);
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(sidecar_path(&traj)).unwrap()).unwrap();
    for key in ["arch", "optimizer", "lr", "save_epochs", "saves_per_epoch", "iteration_indices", "final_val_acc"] {
        assert!(side.get(key).is_some(), "sidecar lacks {key}");
    }

    for kind in ["cfm", "mmfm", "jko"] {
        ws.ok(&["train-meta", "--kind", kind]);
        let out = ws.ok(&["generate", "--kind", kind, "--steps", "10"]);
        assert!(out.contains("mean val accuracy"), "{out}");
        assert_eq!(header(&rd.join(format!("generated/{kind}_traj_loss.csv"))), "step,t,val_loss,val_acc");
    }
    assert_eq!(Container::read(&rd.join("meta/mmfm.nmwt")).unwrap().kind, Kind::Mmfm);

    ws.ok(&["eval"]);
    let ev: EvalSummary = serde_json::from_str(&fs::read_to_string(rd.join("eval/cfm.json")).unwrap()).unwrap();
    assert_eq!(ev.n, 6);
    assert!((0.0..=1.0).contains(&ev.mean_acc));
    assert!(rd.join("eval/original.json").exists());

    ws.ok(&["finetune"]);
    assert_eq!(header(&rd.join("finetune/cfm_l2.reward.csv")), "iteration,mean_reward,am_loss");

    ws.ok(&["detect-shift", "--q-size", "10", "--seeds", "3"]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(rd.join("detect/shift_q10.json")).unwrap()).unwrap();
    assert!(report.get("tpr_at_5").is_some() && report.get("auroc").is_some());
    assert_eq!(header(&rd.join("detect/shift_q10.csv")), "statistic,q_size,tpr_at_5,auroc");

    let md = ws.ok(&["report", "tiny"]);
    assert!(md.contains("| cfm |") || md.contains("cfm"));
    let acc = fs::read_to_string(ws.root.join("reports/accuracy.csv")).unwrap();
    assert_eq!(acc.lines().next().unwrap(), "run,dataset,method,n,mean_acc,best_acc");
    assert_eq!(acc.lines().count(), 1 + 4);
    assert!(ws.root.join("reports/traj_losses.csv").exists());
    assert!(ws.root.join("reports/shift.csv").exists());

    for cmd in ["pretrain", "train-meta", "generate", "eval", "finetune", "detect-shift"] {
        let log: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(rd.join(format!("logs/{cmd}.json"))).unwrap()).unwrap();
        assert_eq!(log["config_sha256"].as_str().unwrap().len(), 64);
        assert!(log["wall_time_s"].as_f64().unwrap() >= 0.0);
        assert!(log["git_describe"].is_string());
    }
}

#[test]
fn reruns_reproduce_payload_bytes() {
    let a = Ws::new(TINY);
    let b = Ws::new(TINY);
    for ws in [&a, &b] {
        ws.ok(&["pretrain", "--seed", "3"]);
        ws.ok(&["train-meta", "--kind", "mmfm", "--seed", "3"]);
        ws.ok(&["generate", "--kind", "mmfm", "--seed", "3"]);
    }
    for rel in ["base/run_001.nmwt", "meta/mmfm.nmwt", "generated/mmfm.nmwt"] {
        let x = fs::read(a.run_dir().join(rel)).unwrap();
        let y = fs::read(b.run_dir().join(rel)).unwrap();
        assert_eq!(x, y, "{rel}");
        let sx = fs::read(sidecar_path(&a.run_dir().join(rel))).unwrap();
        let sy = fs::read(sidecar_path(&b.run_dir().join(rel))).unwrap();
        assert_eq!(sx, sy, "{rel} sidecar");
    }
}

#[test]
fn job_count_does_not_change_results() {
    let a = Ws::new(TINY);
    let b = Ws::new(TINY);
    a.ok(&["pretrain", "--jobs", "1"]);
    b.ok(&["pretrain", "--jobs", "2"]);
    for rel in ["base/run_000.nmwt", "base/run_001.nmwt"] {
        assert_eq!(fs::read(a.run_dir().join(rel)).unwrap(), fs::read(b.run_dir().join(rel)).unwrap());
    }
}

#[test]
fn latent_pipeline_decodes_samples() {
    let ws = Ws::new(&TINY.replace("[vae.model]", "[vae]\nenabled = true\n\n[vae.model]"));
    ws.ok(&["pretrain"]);
    ws.ok(&["train-vae"]);
    ws.ok(&["train-meta", "--kind", "cfm"]);
    ws.ok(&["generate", "--kind", "cfm"]);
    let rd = ws.run_dir();
    assert_eq!(Container::read(&rd.join("vae/vae.nmwt")).unwrap().kind, Kind::Vae);
    let gen = Container::read(&rd.join("generated/cfm.nmwt")).unwrap();
    let traj = Container::read(&rd.join("base/run_000.nmwt")).unwrap();
    assert_eq!(gen.dim, traj.dim);
    let out = ws.run(&["finetune"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_follow_error_class() {
    let ws = Ws::new(TINY);
    let code = |o: Output| o.status.code().unwrap();

    let no_config = Command::new(env!("CARGO_BIN_EXE_weightflow"))
        .arg("--workspace")
        .arg(&ws.root)
        .arg("pretrain")
        .output()
        .unwrap();
    assert_eq!(code(no_config), 2);

    let bad = Ws::new("[meta]\nkind = \"cfm\"\nwidth = 3\n");
    assert_eq!(code(bad.run(&["pretrain"])), 2);

    assert_eq!(code(ws.run(&["train-meta"])), 3);
    assert_eq!(code(ws.run(&["report", "missing"])), 3);

    ws.ok(&["pretrain"]);
    let path = ws.run_dir().join("base/run_000.nmwt");
    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&path, bytes).unwrap();
    assert_eq!(code(ws.run(&["train-meta"])), 3);

    let diverge = Ws::new(&TINY.replace("epochs = 4", "epochs = 4\nlr = 1e300"));
    diverge.ok(&["pretrain"]);
    assert_eq!(code(diverge.run(&["train-meta", "--kind", "cfm"])), 4);
}

#[test]
fn workspace_env_var_sets_root() {
    let ws = Ws::new(TINY);
    let out = Command::new(env!("CARGO_BIN_EXE_weightflow"))
        .env("WEIGHTFLOW_WORKSPACE", &ws.root)
        .args(["--config", "run.toml", "pretrain"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ws.run_dir().join("base/run_000.nmwt").exists());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            weightflow_cli::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n > 0);
}
