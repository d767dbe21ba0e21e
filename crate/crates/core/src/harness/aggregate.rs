use serde::{Deserialize, Serialize};

use super::experiment::{FoldRun, FoldStatus};
use crate::error::{Error, Result};
use crate::metrics::EvaluationReport;

/// One table cell across folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggCell {
    pub name: String,
    /// One value per completed fold, in fold order.
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub sd: f64,
}

impl AggCell {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        let (mean, sd) = mean_sd(&values);
        AggCell { name: name.into(), values, mean, sd }
    }
}

/// Mean and population standard deviation; `(0, 0)` when empty.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub model: String,
    pub primary: bool,
    pub folds: usize,
    pub completed_folds: Vec<usize>,
    pub failed_folds: Vec<(usize, String)>,
    /// Per-trait QWK averaged over prompts, overall first.
    pub traits: Vec<AggCell>,
    /// Per-prompt QWK averaged over traits.
    pub prompts: Vec<AggCell>,
    pub trait_average: AggCell,
    pub prompt_average: AggCell,
    /// Mean of the per-trait fold SDs.
    pub mean_trait_sd: f64,
    pub mean_prompt_sd: f64,
    pub parse_failure_rate: AggCell,
    /// `(w_Q, w_M)` after every update, one trajectory per completed RL run.
    pub weight_trajectories: Vec<Vec<[f64; 2]>>,
    pub split_hash: String,
}

fn fold_mean(reports: &[&EvaluationReport], f: impl Fn(&EvaluationReport) -> Option<f64>) -> Option<f64> {
    let vals: Option<Vec<f64>> = reports.iter().map(|r| f(r)).collect();
    vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Reduces fold runs to per-cell fold means and SDs. Repetitions within a
/// fold are averaged first; failed folds are excluded.
pub fn aggregate(model: &str, primary: bool, runs: &[FoldRun], split_hash: &str, folds: usize) -> Result<AggregateReport> {
    let mut per_fold: Vec<(usize, Vec<&EvaluationReport>)> = Vec::new();
    let mut failed = Vec::new();
    for fold in 0..folds {
        let these: Vec<&FoldRun> = runs.iter().filter(|r| r.fold == fold).collect();
        if these.is_empty() {
            continue;
        }
        match these.iter().find_map(|r| match &r.status {
            FoldStatus::Failed { reason } => Some(reason.clone()),
            FoldStatus::Completed => None,
        }) {
            Some(reason) => failed.push((fold, reason)),
            None => per_fold.push((fold, these.iter().filter_map(|r| r.report.as_ref()).collect())),
        }
    }
    if !failed.is_empty() {
        log::warn!("{model}: {} fold(s) failed and are excluded", failed.len());
    }
    let first = per_fold
        .first()
        .and_then(|(_, r)| r.first())
        .ok_or_else(|| Error::Empty(format!("{model}: no completed folds")))?;
    let trait_names: Vec<String> = first.traits.iter().map(|t| t.trait_id.to_string()).collect();
    let prompt_ids: Vec<u32> = first.prompts.iter().map(|p| p.prompt_id).collect();
    let column = |f: &dyn Fn(&EvaluationReport) -> Option<f64>| -> Result<Vec<f64>> {
        per_fold
            .iter()
            .map(|(fold, reps)| fold_mean(reps, f).ok_or_else(|| Error::Validation(format!("fold {fold} cell structure differs"))))
            .collect()
    };
    let traits = trait_names
        .iter()
        .map(|name| {
            let v = column(&|r| r.traits.iter().find(|t| t.trait_id.as_str() == name).map(|t| t.qwk))?;
            Ok(AggCell::new(name.clone(), v))
        })
        .collect::<Result<Vec<_>>>()?;
    let prompts = prompt_ids
        .iter()
        .map(|&id| {
            let v = column(&|r| r.prompts.iter().find(|p| p.prompt_id == id).map(|p| p.qwk))?;
            Ok(AggCell::new(format!("p{id}"), v))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_of_sd = |cells: &[AggCell]| cells.iter().map(|c| c.sd).sum::<f64>() / cells.len().max(1) as f64;
    Ok(AggregateReport {
        model: model.to_string(),
        primary,
        folds,
        completed_folds: per_fold.iter().map(|(f, _)| *f).collect(),
        failed_folds: failed,
        trait_average: AggCell::new("avg", column(&|r| Some(r.trait_average))?),
        prompt_average: AggCell::new("avg", column(&|r| Some(r.prompt_average))?),
        mean_trait_sd: mean_of_sd(&traits),
        mean_prompt_sd: mean_of_sd(&prompts),
        parse_failure_rate: AggCell::new("parse_failure_rate", column(&|r| Some(r.parse_failure_rate))?),
        weight_trajectories: runs
            .iter()
            .filter(|r| r.status == FoldStatus::Completed)
            .filter_map(|r| r.log.as_ref())
            .map(|l| l.records.iter().map(|u| [u.w_q, u.w_m]).collect())
            .collect(),
        traits,
        prompts,
        split_hash: split_hash.to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Trait,
    Prompt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub kind: CellKind,
    pub name: String,
    pub treatment: f64,
    pub baseline: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub treatment: String,
    pub baseline: String,
    pub cells: Vec<CellDelta>,
    pub trait_average_delta: f64,
    pub prompt_average_delta: f64,
    /// Cells where the treatment mean is strictly higher.
    pub improved: usize,
}

/// Per-cell differences of fold means, `treatment − baseline`.
pub fn compare_reports(treatment: &AggregateReport, baseline: &AggregateReport) -> Result<DeltaReport> {
    let names = |c: &[AggCell]| c.iter().map(|x| x.name.clone()).collect::<Vec<_>>();
    if names(&treatment.traits) != names(&baseline.traits) || names(&treatment.prompts) != names(&baseline.prompts) {
        return Err(Error::Validation(format!(
            "{} and {} have different cell structures",
            treatment.model, baseline.model
        )));
    }
    let mut cells = Vec::new();
    for (kind, t, b) in [
        (CellKind::Trait, &treatment.traits, &baseline.traits),
        (CellKind::Prompt, &treatment.prompts, &baseline.prompts),
    ] {
        for (x, y) in t.iter().zip(b.iter()) {
            cells.push(CellDelta { kind, name: x.name.clone(), treatment: x.mean, baseline: y.mean, delta: x.mean - y.mean });
        }
    }
    Ok(DeltaReport {
        treatment: treatment.model.clone(),
        baseline: baseline.model.clone(),
        improved: cells.iter().filter(|c| c.delta > 0.0).count(),
        trait_average_delta: treatment.trait_average.mean - baseline.trait_average.mean,
        prompt_average_delta: treatment.prompt_average.mean - baseline.prompt_average.mean,
        cells,
    })
}

fn write_csv(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn table(reports: &[&AggregateReport], cells: impl Fn(&AggregateReport) -> (&[AggCell], &AggCell)) -> Result<String> {
    let Some(first) = reports.first() else {
        return Err(Error::Empty("report list".into()));
    };
    let (c0, _) = cells(first);
    let mut header = vec!["model".to_string(), "primary".to_string()];
    header.extend(c0.iter().map(|c| c.name.clone()));
    header.extend(["avg".to_string(), "avg_sd".to_string(), "mean_cell_sd".to_string()]);
    let rows = reports
        .iter()
        .map(|r| {
            let (cs, avg) = cells(r);
            let mut row = vec![r.model.clone(), r.primary.to_string()];
            row.extend(cs.iter().map(|c| format!("{:.6}", c.mean)));
            let mean_sd = cs.iter().map(|c| c.sd).sum::<f64>() / cs.len().max(1) as f64;
            row.extend([format!("{:.6}", avg.mean), format!("{:.6}", avg.sd), format!("{mean_sd:.6}")]);
            row
        })
        .collect();
    write_csv(header, rows)
}

/// Trait-wise fold means, one row per model.
pub fn aggregate_trait_csv(reports: &[&AggregateReport]) -> Result<String> {
    table(reports, |r| (&r.traits, &r.trait_average))
}

/// Prompt-wise fold means, one row per model.
pub fn aggregate_prompt_csv(reports: &[&AggregateReport]) -> Result<String> {
    table(reports, |r| (&r.prompts, &r.prompt_average))
}

/// One row per treatment: average deltas against the baseline and the
/// number of improved cells.
pub fn comparison_csv(reports: &[&AggregateReport], baseline: &AggregateReport) -> Result<String> {
    let header = ["model", "primary", "trait_avg", "trait_avg_sd", "prompt_avg", "prompt_avg_sd", "trait_avg_delta", "prompt_avg_delta", "improved_cells", "cells", "parse_failure_rate", "failed_folds"]
        .map(String::from)
        .to_vec();
    let rows = reports
        .iter()
        .map(|r| {
            let d = compare_reports(r, baseline)?;
            Ok(vec![
                r.model.clone(),
                r.primary.to_string(),
                format!("{:.6}", r.trait_average.mean),
                format!("{:.6}", r.trait_average.sd),
                format!("{:.6}", r.prompt_average.mean),
                format!("{:.6}", r.prompt_average.sd),
                format!("{:.6}", d.trait_average_delta),
                format!("{:.6}", d.prompt_average_delta),
                d.improved.to_string(),
                d.cells.len().to_string(),
                format!("{:.6}", r.parse_failure_rate.mean),
                r.failed_folds.len().to_string(),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TraitId;
    use crate::harness::experiment::RunSeeds;
    use crate::metrics::{PromptScore, TraitScore};

    fn report(model: &str, t: [f64; 2], p: [f64; 2]) -> EvaluationReport {
        EvaluationReport {
            model: model.into(),
            cells: Vec::new(),
            traits: vec![
                TraitScore { trait_id: TraitId::new("over"), qwk: t[0] },
                TraitScore { trait_id: TraitId::new("cont"), qwk: t[1] },
            ],
            prompts: vec![PromptScore { prompt_id: 1, qwk: p[0] }, PromptScore { prompt_id: 2, qwk: p[1] }],
            trait_average: (t[0] + t[1]) / 2.0,
            prompt_average: (p[0] + p[1]) / 2.0,
            parse_failure_rate: 0.0,
            essays: 10,
        }
    }

    fn run(fold: usize, r: Option<EvaluationReport>) -> FoldRun {
        FoldRun {
            fold,
            rep: 0,
            seeds: RunSeeds { init: 0, pretrain: 0, trainer: 0 },
            status: if r.is_some() { FoldStatus::Completed } else { FoldStatus::Failed { reason: "x".into() } },
            report: r,
            pretrain: None,
            log: None,
            leak_free: true,
        }
    }

    #[test]
    fn aggregation_matches_hand_averages() {
        let vals = [0.5, 0.7, 0.9, 0.6, 0.8];
        let runs: Vec<FoldRun> = vals
            .iter()
            .enumerate()
            .map(|(f, &v)| run(f, Some(report("m", [v, v / 2.0], [v, 1.0 - v]))))
            .collect();
        let agg = aggregate("m", false, &runs, "h", 5).unwrap();
        assert_eq!(agg.traits[0].values.len(), 5);
        let mean = (0.5 + 0.7 + 0.9 + 0.6 + 0.8) / 5.0;
        assert!((agg.traits[0].mean - mean).abs() < 1e-12);
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
        assert!((agg.traits[0].sd - var.sqrt()).abs() < 1e-12);
        assert!((agg.prompts[1].mean - (1.0 - mean)).abs() < 1e-12);
        assert!(agg.traits.iter().all(|c| c.sd >= 0.0));
    }

    #[test]
    fn failed_folds_are_excluded() {
        let runs = vec![run(0, Some(report("m", [0.4, 0.4], [0.4, 0.4]))), run(1, None), run(2, Some(report("m", [0.6, 0.6], [0.6, 0.6])))];
        let agg = aggregate("m", false, &runs, "h", 3).unwrap();
        assert_eq!(agg.completed_folds, vec![0, 2]);
        assert_eq!(agg.failed_folds.len(), 1);
        assert!((agg.trait_average.mean - 0.5).abs() < 1e-12);
        assert!(aggregate("m", false, &[run(0, None)], "h", 1).is_err());
    }

    #[test]
    fn deltas_are_linear() {
        let a = aggregate("a", true, &[run(0, Some(report("a", [0.7, 0.5], [0.6, 0.8])))], "h", 1).unwrap();
        let b = aggregate("b", false, &[run(0, Some(report("b", [0.6, 0.55], [0.6, 0.7])))], "h", 1).unwrap();
        let same = compare_reports(&a, &a).unwrap();
        assert!(same.cells.iter().all(|c| c.delta == 0.0));
        assert_eq!(same.improved, 0);
        let d = compare_reports(&a, &b).unwrap();
        let trait_deltas: Vec<f64> = d.cells.iter().filter(|c| c.kind == CellKind::Trait).map(|c| c.delta).collect();
        let avg = trait_deltas.iter().sum::<f64>() / trait_deltas.len() as f64;
        assert!((avg - d.trait_average_delta).abs() < 1e-12);
        assert_eq!(d.improved, 2);
        let csv = comparison_csv(&[&a, &b], &b).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }
}
