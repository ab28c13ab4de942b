use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::losses::{disagreement_rate, entropy_stats, CdcReward};
use super::stats::{aggregate, ks_two_sample, leave_one_out_rate};
use crate::adjointft::{finetune, FtConfig, RewardSpec};
use crate::basezoo::{evaluate_classifier, SynthDataset};
use crate::error::{Error, Result};
use crate::flowgen::integrate_with_params;
use crate::metatrain::{SourceDist, VelocityModel};
use crate::ndcore::{MlpSpec, Tensor};
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdcConfig {
    /// Defaults to 32 at `|Q| = 20`, scaled linearly with `|Q|`.
    pub kappa: Option<f64>,
    pub q_size: usize,
    pub p_batch: usize,
    /// Generated classifiers drawn per fine-tuned model.
    pub n_draws: usize,
    pub alpha: f64,
}

impl Default for CdcConfig {
    fn default() -> Self {
        Self { kappa: None, q_size: 50, p_batch: 64, n_draws: 5, alpha: 0.05 }
    }
}

impl CdcConfig {
    pub fn kappa(&self) -> f64 {
        self.kappa.unwrap_or(32.0 * self.q_size as f64 / 20.0)
    }

    pub fn lambda(&self) -> f64 {
        self.kappa() / (self.q_size as f64 + 1.0)
    }
}

/// Everything a detection run shares across seeds.
#[derive(Clone, Debug)]
pub struct DetectronSetup<'a> {
    pub base: &'a VelocityModel,
    pub source: &'a SourceDist,
    pub ctx: Option<&'a Tensor>,
    pub arch: &'a MlpSpec,
    pub ds_p: &'a SynthDataset,
    pub ft: FtConfig,
    pub reward: RewardSpec,
    pub cdc: CdcConfig,
}

/// Statistics of one CDC fine-tuning run, averaged over the generated draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Disagreement with `f` on the suspect sample.
    pub phi: f64,
    /// Disagreement with `f` on the P validation split.
    pub phi_p_val: f64,
    pub entropies: Vec<f64>,
    /// Accuracy on the P validation split.
    pub acc_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub acc_before: f64,
    pub pstar: RunStats,
    pub q: Option<RunStats>,
    pub ks_d: Option<f64>,
    pub ks_p: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub q_size: usize,
    pub kappa: f64,
    pub lambda: f64,
    pub records: Vec<SeedRecord>,
    /// Leave-one-out significance rate among the null runs.
    pub null_rate: f64,
    pub tpr_at_5: f64,
    pub auroc: f64,
    /// Fraction of shifted seeds whose entropy KS p-value falls below α.
    pub ks_tpr: f64,
    pub acc_before: f64,
    pub acc_after: f64,
}

fn draw_classifiers(model: &VelocityModel, setup: &DetectronSetup, n: usize, seed: u64) -> Result<Tensor> {
    let x0 = setup.source.sample(&mut seeded(seed), n);
    let ctx = setup.ctx.map(|c| c.select_rows(&vec![0; n]));
    let steps = setup.ft.steps()?;
    Ok(integrate_with_params(model, &model.params, &x0, ctx.as_ref(), steps)?.endpoint().clone())
}

fn mean_acc(setup: &DetectronSetup, rows: &Tensor) -> Result<f64> {
    let pc = setup.arch.param_count();
    let mut s = 0.0;
    for r in rows.iter_rows() {
        s += evaluate_classifier(setup.arch, &r[..pc], &setup.ds_p.val)?.0;
    }
    Ok(s / rows.rows() as f64)
}

/// Fine-tunes the base field with the CDC reward against `q` and summarizes
/// the generated classifiers.
pub fn detectron_run(setup: &DetectronSetup, f: &[f64], q: &Tensor, seed: u64) -> Result<RunStats> {
    let pc = setup.arch.param_count();
    let reward = CdcReward::new(
        setup.arch.clone(),
        setup.ds_p.train.clone(),
        q.clone(),
        &f[..pc],
        setup.cdc.lambda(),
        setup.cdc.p_batch,
    )?;
    let ft = finetune(setup.base, setup.ctx, setup.source, &reward, &setup.reward, &setup.ft, derive_seed(seed, 1))?;
    let g = draw_classifiers(&ft.model, setup, setup.cdc.n_draws, derive_seed(seed, 2))?;
    let n = g.rows() as f64;
    let (mut phi, mut phi_p, mut entropies) = (0.0, 0.0, Vec::new());
    for row in g.iter_rows() {
        phi += disagreement_rate(setup.arch, &f[..pc], &row[..pc], q)? / n;
        phi_p += disagreement_rate(setup.arch, &f[..pc], &row[..pc], &setup.ds_p.val.inputs)? / n;
        entropies.extend(entropy_stats(setup.arch, &f[..pc], &row[..pc], q)?);
    }
    Ok(RunStats { phi, phi_p_val: phi_p, entropies, acc_p: mean_acc(setup, &g)? })
}

fn sample_rows(x: &Tensor, k: usize, seed: u64) -> Result<Tensor> {
    if k == 0 || k > x.rows() {
        return Err(Error::config(format!("cannot draw {k} rows from {}", x.rows())));
    }
    let idx: Vec<usize> = sample(&mut seeded(seed), x.rows(), k).into_iter().collect();
    Ok(x.select_rows(&idx))
}

/// One seed of the meta-detectron: a base classifier `f` from the base model,
/// a null run on a fresh P sample and, when `ds_q` is given, a run on a sample of it.
pub fn meta_detectron(setup: &DetectronSetup, ds_q: Option<&SynthDataset>, seed: u64) -> Result<SeedRecord> {
    let base_draws = draw_classifiers(setup.base, setup, setup.cdc.n_draws + 1, derive_seed(seed, 10))?;
    let f = base_draws.row(0).to_vec();
    let acc_before = mean_acc(setup, &base_draws.select_rows(&(1..base_draws.rows()).collect::<Vec<_>>()))?;
    let pstar_x = sample_rows(&setup.ds_p.val.inputs, setup.cdc.q_size, derive_seed(seed, 11))?;
    let pstar = detectron_run(setup, &f, &pstar_x, derive_seed(seed, 12))?;
    let (q, ks_d, ks_p) = match ds_q {
        Some(dq) => {
            let qx = sample_rows(&dq.val.inputs, setup.cdc.q_size, derive_seed(seed, 13))?;
            let run = detectron_run(setup, &f, &qx, derive_seed(seed, 14))?;
            let (d, p) = ks_two_sample(&pstar.entropies, &run.entropies)?;
            (Some(run), Some(d), Some(p))
        }
        None => (None, None, None),
    };
    Ok(SeedRecord { seed, acc_before, pstar, q, ks_d, ks_p })
}

/// Runs [`meta_detectron`] over `seeds` and aggregates the disagreement test.
pub fn shift_study(setup: &DetectronSetup, ds_q: &SynthDataset, seeds: &[u64]) -> Result<ShiftReport> {
    let records = seeds.iter().map(|&s| meta_detectron(setup, Some(ds_q), s)).collect::<Result<Vec<_>>>()?;
    summarize(setup.cdc.clone(), records)
}

/// Aggregates seed records into a report.
pub fn summarize(cdc: CdcConfig, records: Vec<SeedRecord>) -> Result<ShiftReport> {
    let null: Vec<f64> = records.iter().map(|r| r.pstar.phi).collect();
    let shifted: Vec<f64> = records.iter().filter_map(|r| r.q.as_ref().map(|q| q.phi)).collect();
    let (tpr_at_5, auroc) = aggregate(&null, &shifted, cdc.alpha)?;
    let ks: Vec<f64> = records.iter().filter_map(|r| r.ks_p).collect();
    let ks_tpr = ks.iter().filter(|&&p| p < cdc.alpha).count() as f64 / ks.len().max(1) as f64;
    let n = records.len() as f64;
    let acc_before = records.iter().map(|r| r.acc_before).sum::<f64>() / n;
    let after: Vec<f64> = records.iter().filter_map(|r| r.q.as_ref().map(|q| q.acc_p)).collect();
    let acc_after = after.iter().sum::<f64>() / after.len().max(1) as f64;
    Ok(ShiftReport {
        q_size: cdc.q_size,
        kappa: cdc.kappa(),
        lambda: cdc.lambda(),
        null_rate: leave_one_out_rate(&null, cdc.alpha)?,
        records,
        tpr_at_5,
        auroc,
        ks_tpr,
        acc_before,
        acc_after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_scales_with_q() {
        let c = CdcConfig { q_size: 20, ..CdcConfig::default() };
        assert_eq!(c.kappa(), 32.0);
        assert!((c.lambda() - 32.0 / 21.0).abs() < 1e-15);
        let c = CdcConfig { q_size: 50, ..CdcConfig::default() };
        assert_eq!(c.kappa(), 80.0);
        let c = CdcConfig { kappa: Some(5.0), ..c };
        assert!((c.lambda() - 5.0 / 51.0).abs() < 1e-15);
    }

    fn stats(phi: f64) -> RunStats {
        RunStats { phi, phi_p_val: 0.0, entropies: vec![phi], acc_p: 0.9 }
    }

    #[test]
    fn summary_of_separated_runs() {
        let records: Vec<SeedRecord> = (0..6)
            .map(|s| SeedRecord {
                seed: s,
                acc_before: 0.9,
                pstar: stats(0.01 * s as f64),
                q: Some(stats(0.5 + 0.01 * s as f64)),
                ks_d: Some(1.0),
                ks_p: Some(0.01),
            })
            .collect();
        let rep = summarize(CdcConfig::default(), records).unwrap();
        assert_eq!(rep.tpr_at_5, 1.0);
        assert_eq!(rep.auroc, 1.0);
        assert_eq!(rep.ks_tpr, 1.0);
        assert!(rep.null_rate <= 1.0 / 6.0 + 1e-12);
        let json = serde_json::to_string(&rep).unwrap();
        let back: ShiftReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }
}
