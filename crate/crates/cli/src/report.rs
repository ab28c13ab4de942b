//! Aggregates finished runs into CSV and Markdown tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use weightflow::flowgen::TrajPoint;
use weightflow::shiftdetect::ShiftReport;

use crate::commands::{shift_rows, EvalSummary, FinetuneSummary, ShiftRow};
use crate::error::{CliError, CliResult};
use crate::workspace::{ensure_parent, read_json};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub run: String,
    pub dataset: String,
    pub method: String,
    pub n: usize,
    pub mean_acc: f64,
    pub best_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajRow {
    pub run: String,
    pub method: String,
    pub step: usize,
    pub t: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinetuneRow {
    pub run: String,
    pub method: String,
    pub corruption_level: u8,
    pub acc_before: f64,
    pub acc_after: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tables {
    pub accuracy: Vec<AccuracyRow>,
    pub trajectories: Vec<TrajRow>,
    pub finetune: Vec<FinetuneRow>,
    pub shift: Vec<ShiftRow>,
}

fn files_with(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.to_string_lossy().ends_with(suffix)).collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

fn run_name(dir: &Path) -> String {
    dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string())
}

/// Collects every table from the given run directories.
pub fn collect(run_dirs: &[PathBuf]) -> CliResult<Tables> {
    if run_dirs.is_empty() {
        return Err(CliError::Data("no runs given".into()));
    }
    let mut t = Tables::default();
    for dir in run_dirs {
        if !dir.is_dir() {
            return Err(CliError::Data(format!("run directory {} does not exist", dir.display())));
        }
        let run = run_name(dir);
        let before = (t.accuracy.len(), t.trajectories.len(), t.finetune.len(), t.shift.len());
        for p in files_with(&dir.join("eval"), ".json") {
            let e: EvalSummary = read_json(&p)?;
            t.accuracy.push(AccuracyRow {
                run: run.clone(),
                dataset: e.dataset,
                method: e.origin,
                n: e.n,
                mean_acc: e.mean_acc,
                best_acc: e.best_acc,
            });
        }
        for p in files_with(&dir.join("generated"), "_traj_loss.csv") {
            let name = p.file_name().expect("file").to_string_lossy();
            let method = name.trim_end_matches("_traj_loss.csv").to_string();
            let mut r = csv::Reader::from_path(&p)?;
            for row in r.deserialize() {
                let pt: TrajPoint = row?;
                t.trajectories.push(TrajRow {
                    run: run.clone(),
                    method: method.clone(),
                    step: pt.step,
                    t: pt.t,
                    val_loss: pt.val_loss,
                    val_acc: pt.val_acc,
                });
            }
        }
        for p in files_with(&dir.join("finetune"), ".summary.json") {
            let f: FinetuneSummary = read_json(&p)?;
            t.finetune.push(FinetuneRow {
                run: run.clone(),
                method: f.base_kind.as_str().into(),
                corruption_level: f.corruption_level,
                acc_before: f.acc_before,
                acc_after: f.acc_after,
            });
        }
        let mut reports: Vec<ShiftReport> =
            files_with(&dir.join("detect"), ".json").iter().map(|p| read_json(p)).collect::<CliResult<_>>()?;
        reports.sort_by_key(|r| r.q_size);
        for r in &reports {
            t.shift.extend(shift_rows(r));
        }
        let after = (t.accuracy.len(), t.trajectories.len(), t.finetune.len(), t.shift.len());
        if before == after {
            return Err(CliError::Data(format!("run {} has no results yet", dir.display())));
        }
    }
    Ok(t)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn md_table(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
    s
}

pub fn markdown(t: &Tables) -> String {
    let mut out = String::from("# weightflow report\n");
    if !t.accuracy.is_empty() {
        out.push_str("\n## Validation accuracy\n\n");
        out.push_str(&md_table(
            &["run", "dataset", "method", "n", "mean acc", "best acc"],
            t.accuracy.iter().map(|r| {
                vec![
                    r.run.clone(),
                    r.dataset.clone(),
                    r.method.clone(),
                    r.n.to_string(),
                    format!("{:.2}", 100.0 * r.mean_acc),
                    format!("{:.2}", 100.0 * r.best_acc),
                ]
            }),
        ));
    }
    if !t.finetune.is_empty() {
        out.push_str("\n## Reward fine-tuning\n\n");
        out.push_str(&md_table(
            &["run", "method", "corruption", "acc before", "acc after"],
            t.finetune.iter().map(|r| {
                vec![
                    r.run.clone(),
                    r.method.clone(),
                    r.corruption_level.to_string(),
                    format!("{:.2}", 100.0 * r.acc_before),
                    format!("{:.2}", 100.0 * r.acc_after),
                ]
            }),
        ));
    }
    if !t.shift.is_empty() {
        out.push_str("\n## Shift detection\n\n");
        out.push_str(&md_table(
            &["statistic", "|Q|", "TPR@5", "AUROC"],
            t.shift.iter().map(|r| {
                vec![
                    r.statistic.clone(),
                    r.q_size.to_string(),
                    format!("{:.2}", r.tpr_at_5),
                    r.auroc.map(|a| format!("{a:.2}")).unwrap_or_else(|| "-".into()),
                ]
            }),
        ));
    }
    out
}

/// Writes every non-empty table to `out_dir` and returns the files written.
pub fn write_report(t: &Tables, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(&Path) -> CliResult<()>| -> CliResult<()> {
        let p = out_dir.join(name);
        f(&p)?;
        files.push(p);
        Ok(())
    };
    if !t.accuracy.is_empty() {
        emit("accuracy.csv", &|p| write_csv(p, &t.accuracy))?;
    }
    if !t.trajectories.is_empty() {
        emit("traj_losses.csv", &|p| write_csv(p, &t.trajectories))?;
    }
    if !t.finetune.is_empty() {
        emit("finetune.csv", &|p| write_csv(p, &t.finetune))?;
    }
    if !t.shift.is_empty() {
        emit("shift.csv", &|p| write_csv(p, &t.shift))?;
    }
    emit("report.md", &|p| {
        ensure_parent(p)?;
        fs::write(p, markdown(t)).map_err(|e| CliError::io(p, e))
    })?;
    Ok(files)
}
