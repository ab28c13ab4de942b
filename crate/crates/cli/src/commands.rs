//! One function per subcommand. Each returns the artifacts it wrote and a JSON
//! summary; the binary adds the run log.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use weightflow::adjointft::{finetune as run_finetune, NegCeReward, RewardKind};
use weightflow::basezoo::{
    corrupt, evaluate_classifier, pretrain_and_checkpoint, CorruptionLevel, SynthDataset, TrajectoryTensor,
};
use weightflow::flowgen::{integrate_with_params, run_meta, trajectory_losses, TrajPoint};
use weightflow::metatrain::{train_meta, MetaKind, SourceKind, WeightZoo};
use weightflow::rng::seeded;
use weightflow::shiftdetect::{meta_detectron, summarize, DetectronSetup, ShiftReport};
use weightflow::weightcodec::{train_vae, VaeModel};
use weightflow::{MlpSpec, Tensor};

use crate::error::{CliError, CliResult};
use crate::store::{
    load_meta, load_trajectory, load_vae, load_weights, save_meta, save_trajectory, save_vae, save_weights,
    MetaModelMeta, StoredMeta, WeightsMeta,
};
use crate::workspace::{ensure_parent, write_json, Ctx};

pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

/// Accuracy summary of a batch of classifiers on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub origin: String,
    pub dataset: String,
    pub n: usize,
    pub mean_acc: f64,
    pub best_acc: f64,
    pub mean_loss: f64,
    pub accs: Vec<f64>,
}

/// Evaluates every row as a padded parameter vector of `arch`.
pub fn evaluate_rows(origin: &str, rows: &Tensor, arch: &MlpSpec, ds: &SynthDataset) -> CliResult<EvalSummary> {
    let p = arch.param_count();
    if rows.cols() < p {
        return Err(CliError::Data(format!("rows of width {} cannot hold {p} classifier parameters", rows.cols())));
    }
    let mut accs = Vec::with_capacity(rows.rows());
    let mut loss = 0.0;
    for r in rows.iter_rows() {
        let (a, l) = evaluate_classifier(arch, &r[..p], &ds.val)?;
        accs.push(a);
        loss += l;
    }
    let n = accs.len();
    if n == 0 {
        return Err(CliError::Data("nothing to evaluate".into()));
    }
    Ok(EvalSummary {
        origin: origin.into(),
        dataset: ds.name.clone(),
        n,
        mean_acc: accs.iter().sum::<f64>() / n as f64,
        best_acc: accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mean_loss: loss / n as f64,
        accs,
    })
}

fn load_all_trajectories(ctx: &Ctx) -> CliResult<Vec<TrajectoryTensor>> {
    ctx.run().base_runs()?.iter().map(|p| load_trajectory(p).map(|(t, _)| t)).collect()
}

fn corrupted(ds: &SynthDataset, level: u8, seed: u64) -> CliResult<SynthDataset> {
    Ok(corrupt(ds, &CorruptionLevel::preset(level)?, seed)?)
}

pub fn pretrain(ctx: &Ctx) -> CliResult<Outcome> {
    let ds = ctx.dataset()?;
    let cfg = &ctx.cfg.base.train;
    let seeds: Vec<u64> = (0..ctx.cfg.base.n_runs as u64).map(|i| ctx.seed + i).collect();
    let runs: CliResult<Vec<_>> = ctx
        .pool()?
        .install(|| seeds.par_iter().map(|&s| pretrain_and_checkpoint(&ds, cfg, s).map_err(CliError::from)).collect());
    let runs = runs?;
    let rd = ctx.run();
    let mut artifacts = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let path = rd.base_run(i);
        save_trajectory(&path, run, ctx.provenance("pretrain"))?;
        artifacts.push(path);
    }
    let accs: Vec<f64> = runs.iter().map(|r| r.final_val_acc).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    println!("pretrained {} runs, mean final val accuracy {mean:.4}", runs.len());
    Ok(Outcome {
        artifacts,
        summary: json!({ "n_runs": runs.len(), "final_val_acc": accs, "mean_final_val_acc": mean }),
    })
}

pub fn train_vae_cmd(ctx: &Ctx) -> CliResult<Outcome> {
    let trajs = load_all_trajectories(ctx)?;
    let d = trajs[0].dim();
    let mut rows = Vec::new();
    for t in &trajs {
        if t.dim() != d {
            return Err(CliError::Data("base trajectories differ in width".into()));
        }
        rows.extend_from_slice(t.init());
        rows.extend_from_slice(t.data().data());
    }
    let zoo = Tensor::new(vec![rows.len() / d, d], rows)?;
    let vcfg = &ctx.cfg.vae;
    let mut vae = VaeModel::new(d, &vcfg.model, ctx.seed)?;
    let losses = train_vae(&mut vae, &zoo, &vcfg.train, ctx.seed)?;
    let final_loss = losses.last().copied().unwrap_or(f64::NAN);
    let path = ctx.run().vae();
    save_vae(&path, &vae, &vcfg.model, final_loss, ctx.provenance("train-vae"))?;
    println!("trained VAE on {} rows, final loss {final_loss:.6}", zoo.rows());
    Ok(Outcome { artifacts: vec![path], summary: json!({ "rows": zoo.rows(), "final_loss": final_loss }) })
}

pub fn train_meta_cmd(ctx: &Ctx, kind: Option<MetaKind>, k: Option<usize>) -> CliResult<Outcome> {
    let ms = &ctx.cfg.meta;
    let kind = kind.unwrap_or(ms.kind);
    let k = if kind == MetaKind::Cfm { 1 } else { k.unwrap_or(ms.k) };
    if k == 0 {
        return Err(CliError::Config("--k must be positive".into()));
    }
    let mut mcfg = ms.train.clone();
    if mcfg.context_dim > 0 {
        return Err(CliError::Config(
            "conditional meta-models are library-only; set meta.train.context_dim = 0".into(),
        ));
    }
    let trajs = load_all_trajectories(ctx)?;
    let arch =
        trajs[0].arch().cloned().ok_or_else(|| CliError::Data("base trajectories carry no architecture".into()))?;
    let mut zoo = WeightZoo::from_trajectories(&trajs, k, ms.selection, ctx.seed)?;
    let latent = ctx.cfg.vae.enabled;
    if latent {
        let vae = load_vae(&ctx.run().vae())?;
        let knots = zoo.knots.iter().map(|t| vae.encode_mean(t)).collect::<weightflow::Result<Vec<_>>>()?;
        zoo = WeightZoo::new(knots, zoo.times.clone(), None, zoo.optimizer)?;
        mcfg.source = SourceKind::StdGauss;
    }
    let trained = train_meta(kind, &zoo, &mcfg, ctx.seed)?;
    let final_loss = trained.loss_curve.last().copied().unwrap_or(f64::NAN);
    let header = match &trained.model {
        weightflow::metatrain::MetaModel::Velocity(v) => v.header.clone(),
        weightflow::metatrain::MetaModel::Potential(p) => p.header.clone(),
    };
    let info = MetaModelMeta {
        kind,
        header,
        source: trained.source.kind,
        arch,
        latent,
        k,
        times: zoo.times.clone(),
        context_encoder: trained.context_encoder.as_ref().map(|e| e.spec.clone()),
        final_loss,
        provenance: ctx.provenance("train-meta"),
    };
    let path = ctx.run().meta(kind);
    save_meta(&path, &trained, &info)?;
    println!("trained {} (K = {k}) on {} zoo rows, final loss {final_loss:.6}", kind.as_str(), zoo.len());
    Ok(Outcome {
        artifacts: vec![path],
        summary: json!({ "kind": kind, "k": k, "zoo_rows": zoo.len(), "final_loss": final_loss, "loss_curve": trained.loss_curve }),
    })
}

fn load_meta_with_vae(ctx: &Ctx, kind: MetaKind) -> CliResult<(StoredMeta, Option<VaeModel>)> {
    let stored = load_meta(&ctx.run().meta(kind))?;
    let vae = if stored.info.latent { Some(load_vae(&ctx.run().vae())?) } else { None };
    Ok((stored, vae))
}

fn write_traj_csv(path: &Path, series: &[TrajPoint]) -> CliResult<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for p in series {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn generate(ctx: &Ctx, kind: Option<MetaKind>, steps: Option<usize>, n: Option<usize>) -> CliResult<Outcome> {
    let ms = &ctx.cfg.meta;
    let kind = kind.unwrap_or(ms.kind);
    let (stored, vae) = load_meta_with_vae(ctx, kind)?;
    // Potentials descend in exactly the K steps they were trained with.
    let steps = match kind {
        MetaKind::Jko => stored.info.k,
        _ => steps.unwrap_or(ms.steps),
    };
    let n = n.unwrap_or(ms.n_generate);
    if steps == 0 || n == 0 {
        return Err(CliError::Config("--steps and --n must be positive".into()));
    }
    let ds = ctx.dataset()?;
    let x0 = stored.meta.source.sample(&mut seeded(ctx.seed), n);
    let traj = run_meta(&stored.meta, &x0, None, steps)?;
    let series = trajectory_losses(&traj, &stored.info.arch, &ds, vae.as_ref(), ms.record_every)?;
    let weights = match &vae {
        Some(v) => v.decode(traj.endpoint())?,
        None => traj.endpoint().clone(),
    };
    let rd = ctx.run();
    let wpath = rd.generated(kind);
    save_weights(
        &wpath,
        &weights,
        &WeightsMeta {
            arch: stored.info.arch.clone(),
            origin: kind.as_str().into(),
            provenance: ctx.provenance("generate"),
        },
    )?;
    let cpath = rd.traj_loss_csv(kind);
    write_traj_csv(&cpath, &series)?;
    let ev = evaluate_rows(kind.as_str(), &weights, &stored.info.arch, &ds)?;
    println!(
        "generated {n} classifiers with {} in {steps} steps: mean val accuracy {:.4}, best {:.4}",
        kind.as_str(),
        ev.mean_acc,
        ev.best_acc
    );
    Ok(Outcome {
        artifacts: vec![wpath, cpath],
        summary: json!({ "kind": kind, "steps": steps, "n": n, "mean_acc": ev.mean_acc, "best_acc": ev.best_acc }),
    })
}

pub fn eval(ctx: &Ctx, inputs: &[PathBuf]) -> CliResult<Outcome> {
    let rd = ctx.run();
    let inputs: Vec<PathBuf> = if inputs.is_empty() {
        let dir = rd.0.join("generated");
        let mut found: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| CliError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "nmwt"))
            .collect();
        found.sort();
        found
    } else {
        inputs.iter().map(|p| crate::workspace::under_root(&ctx.root, p)).collect()
    };
    if inputs.is_empty() {
        return Err(CliError::Data("no weight containers to evaluate; run `generate` first".into()));
    }
    let ds = ctx.dataset()?;
    let mut artifacts = Vec::new();
    let mut summaries = Vec::new();
    if let Ok(paths) = rd.base_runs() {
        let mut rows = Vec::new();
        let mut arch = None;
        for p in &paths {
            let (t, _) = load_trajectory(p)?;
            rows.extend_from_slice(t.last());
            arch = arch.or(t.arch().cloned());
        }
        if let Some(a) = arch {
            let d = rows.len() / paths.len();
            let ev = evaluate_rows("original", &Tensor::new(vec![paths.len(), d], rows)?, &a, &ds)?;
            let out = rd.eval_dir().join("original.json");
            write_json(&out, &ev)?;
            artifacts.push(out);
            summaries.push(ev);
        }
    }
    for p in &inputs {
        let (rows, meta) = load_weights(p)?;
        let ev = evaluate_rows(&meta.origin, &rows, &meta.arch, &ds)?;
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("weights");
        let out = rd.eval_dir().join(format!("{stem}.json"));
        write_json(&out, &ev)?;
        artifacts.push(out);
        summaries.push(ev);
    }
    for ev in &summaries {
        println!(
            "{:<10} n = {:<4} mean acc {:.4}  best acc {:.4}  mean loss {:.4}",
            ev.origin, ev.n, ev.mean_acc, ev.best_acc, ev.mean_loss
        );
    }
    Ok(Outcome {
        artifacts,
        summary: serde_json::to_value(
            summaries
                .iter()
                .map(|e| json!({ "origin": e.origin, "mean_acc": e.mean_acc, "best_acc": e.best_acc }))
                .collect::<Vec<_>>(),
        )
        .expect("plain values"),
    })
}

/// Mean validation accuracy of `n` rollouts of a velocity field on `ds`.
fn rollout_accuracy(
    stored: &StoredMeta,
    params: &[f64],
    ds: &SynthDataset,
    n: usize,
    steps: usize,
    seed: u64,
) -> CliResult<f64> {
    let v = stored.meta.model.as_velocity().expect("checked by caller");
    let x0 = stored.meta.source.sample(&mut seeded(seed), n);
    let traj = integrate_with_params(v, params, &x0, None, steps)?;
    Ok(evaluate_rows("", traj.endpoint(), &stored.info.arch, ds)?.mean_acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSummary {
    pub base_kind: MetaKind,
    pub corruption_level: u8,
    pub acc_before: f64,
    pub acc_after: f64,
    pub final_reward: f64,
}

fn velocity_base(ctx: &Ctx, kind: MetaKind) -> CliResult<StoredMeta> {
    let (stored, vae) = load_meta_with_vae(ctx, kind)?;
    if stored.meta.model.as_velocity().is_none() {
        return Err(CliError::Config(format!("{} meta-models have no velocity field to fine-tune", kind.as_str())));
    }
    if vae.is_some() {
        return Err(CliError::Config("fine-tuning needs a meta-model trained on raw weights".into()));
    }
    Ok(stored)
}

pub fn finetune(ctx: &Ctx) -> CliResult<Outcome> {
    let fs = &ctx.cfg.finetune;
    if fs.reward.kind != RewardKind::NegCe {
        return Err(CliError::Config("finetune uses the neg_ce reward; neg_cdc belongs to detect-shift".into()));
    }
    let stored = velocity_base(ctx, fs.base_kind)?;
    let base = stored.meta.model.as_velocity().expect("checked");
    let ds = ctx.dataset()?;
    let target = corrupted(&ds, fs.corruption_level, fs.corruption_seed)?;
    let reward = NegCeReward::new(stored.info.arch.clone(), target.train.clone(), fs.reward.batch_size)?;
    let res = run_finetune(base, None, &stored.meta.source, &reward, &fs.reward, &fs.ft, ctx.seed)?;
    let steps = fs.ft.steps()?;
    let n = ctx.cfg.meta.n_generate;
    let eval_seed = weightflow::rng::derive_seed(ctx.seed, 77);
    let acc_before = rollout_accuracy(&stored, &base.params, &target, n, steps, eval_seed)?;
    let acc_after = rollout_accuracy(&stored, &res.model.params, &target, n, steps, eval_seed)?;
    let stem = ctx.run().finetune_stem(fs.base_kind, fs.corruption_level);
    let mpath = stem.with_extension("nmwt");
    let trained = weightflow::metatrain::TrainedMeta {
        model: weightflow::metatrain::MetaModel::Velocity(res.model.clone()),
        ..stored.meta.clone()
    };
    let mut info = stored.info.clone();
    info.provenance = ctx.provenance("finetune");
    save_meta(&mpath, &trained, &info)?;
    let cpath = stem.with_extension("reward.csv");
    ensure_parent(&cpath)?;
    let mut w = csv::Writer::from_path(&cpath)?;
    for row in &res.log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(&cpath, e))?;
    let summary = FinetuneSummary {
        base_kind: fs.base_kind,
        corruption_level: fs.corruption_level,
        acc_before,
        acc_after,
        final_reward: res.log.last().map(|r| r.mean_reward).unwrap_or(f64::NAN),
    };
    let jpath = stem.with_extension("summary.json");
    write_json(&jpath, &summary)?;
    println!(
        "fine-tuned {} on corruption level {}: target accuracy {acc_before:.4} -> {acc_after:.4}",
        fs.base_kind.as_str(),
        fs.corruption_level
    );
    Ok(Outcome { artifacts: vec![mpath, cpath, jpath], summary: serde_json::to_value(&summary).expect("plain values") })
}

pub fn detect_shift(ctx: &Ctx, q_size: Option<usize>, n_seeds: Option<usize>) -> CliResult<Outcome> {
    let dsec = &ctx.cfg.detect;
    let mut cdc = dsec.cdc.clone();
    if let Some(q) = q_size {
        cdc.q_size = q;
    }
    let n_seeds = n_seeds.unwrap_or(dsec.seeds);
    if n_seeds < 3 {
        return Err(CliError::Config("--seeds must be at least 3".into()));
    }
    let stored = velocity_base(ctx, dsec.base_kind)?;
    let ds_p = ctx.dataset()?;
    let ds_q = corrupted(&ds_p, dsec.shift_level, dsec.shift_seed)?;
    let setup = DetectronSetup {
        base: stored.meta.model.as_velocity().expect("checked"),
        source: &stored.meta.source,
        ctx: None,
        arch: &stored.info.arch,
        ds_p: &ds_p,
        ft: dsec.ft.clone(),
        reward: dsec.reward.clone(),
        cdc: cdc.clone(),
    };
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| ctx.seed + i).collect();
    let records: CliResult<Vec<_>> = ctx.pool()?.install(|| {
        seeds.par_iter().map(|&s| meta_detectron(&setup, Some(&ds_q), s).map_err(CliError::from)).collect()
    });
    let report = summarize(cdc, records?)?;
    let stem = ctx.run().detect_stem(report.q_size);
    let jpath = stem.with_extension("json");
    write_json(&jpath, &report)?;
    let cpath = stem.with_extension("csv");
    write_shift_rows(&cpath, &[&report])?;
    println!(
        "|Q| = {}: TPR@5 {:.3}, AUROC {:.3}, entropy KS TPR {:.3}, null rate {:.3}",
        report.q_size, report.tpr_at_5, report.auroc, report.ks_tpr, report.null_rate
    );
    Ok(Outcome {
        artifacts: vec![jpath, cpath],
        summary: json!({
            "q_size": report.q_size,
            "tpr_at_5": report.tpr_at_5,
            "auroc": report.auroc,
            "ks_tpr": report.ks_tpr,
            "null_rate": report.null_rate,
        }),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub statistic: String,
    pub q_size: usize,
    pub tpr_at_5: f64,
    pub auroc: Option<f64>,
}

pub fn shift_rows(report: &ShiftReport) -> [ShiftRow; 2] {
    [
        ShiftRow {
            statistic: "disagreement".into(),
            q_size: report.q_size,
            tpr_at_5: report.tpr_at_5,
            auroc: Some(report.auroc),
        },
        ShiftRow { statistic: "entropy_ks".into(), q_size: report.q_size, tpr_at_5: report.ks_tpr, auroc: None },
    ]
}

pub fn write_shift_rows(path: &Path, reports: &[&ShiftReport]) -> CliResult<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        for row in shift_rows(r) {
            w.serialize(row)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
