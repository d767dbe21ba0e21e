//! Per-prompt, per-trait evaluation in the layout of the trait and prompt
//! result tables: each (prompt, trait) cell is a QWK on that cell's own
//! score range; trait rows average over prompts, prompt rows over traits.

use serde::{Deserialize, Serialize};

use super::kappa::{qwk, RatingPairSet};
use super::reward::BatchItem;
use crate::corpus::{trait_prediction_order, Schema, TraitId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub prompt_id: u32,
    pub trait_id: TraitId,
    pub qwk: f64,
    pub n: usize,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraitScore {
    pub trait_id: TraitId,
    pub qwk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptScore {
    pub prompt_id: u32,
    pub qwk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub cells: Vec<CellScore>,
    /// Presentation order: reversed prediction order (overall first).
    pub traits: Vec<TraitScore>,
    pub prompts: Vec<PromptScore>,
    pub trait_average: f64,
    pub prompt_average: f64,
    pub parse_failure_rate: f64,
    pub essays: usize,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn evaluate_report(model: &str, items: &[BatchItem], schema: &Schema) -> Result<EvaluationReport> {
    if items.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let mut cells = Vec::new();
    for prompt in schema.prompts() {
        let group: Vec<&BatchItem> = items.iter().filter(|it| it.prompt.prompt_id == prompt.prompt_id).collect();
        if group.is_empty() {
            continue;
        }
        for t in &prompt.traits {
            let range = prompt.range(t).expect("validated prompt");
            let pairs: Vec<(i64, i64)> = group
                .iter()
                .flat_map(|it| it.resolved_pairs())
                .filter(|p| &p.trait_id == t)
                .map(|p| (p.gold, p.pred))
                .collect();
            let n = pairs.len();
            if n == 0 {
                continue;
            }
            let k = qwk(&RatingPairSet::from_pairs(pairs, range)?);
            cells.push(CellScore {
                prompt_id: prompt.prompt_id,
                trait_id: t.clone(),
                qwk: k.value,
                n,
                degenerate: k.degenerate,
            });
        }
    }
    let traits: Vec<TraitScore> = trait_prediction_order(schema)
        .into_iter()
        .rev()
        .filter(|t| cells.iter().any(|c| &c.trait_id == t))
        .map(|t| TraitScore {
            qwk: mean(cells.iter().filter(|c| c.trait_id == t).map(|c| c.qwk)),
            trait_id: t,
        })
        .collect();
    let prompts: Vec<PromptScore> = schema
        .prompts()
        .iter()
        .filter(|p| cells.iter().any(|c| c.prompt_id == p.prompt_id))
        .map(|p| PromptScore {
            prompt_id: p.prompt_id,
            qwk: mean(cells.iter().filter(|c| c.prompt_id == p.prompt_id).map(|c| c.qwk)),
        })
        .collect();
    let failures = items.iter().filter(|it| it.pred.is_none()).count();
    Ok(EvaluationReport {
        model: model.to_string(),
        trait_average: mean(traits.iter().map(|t| t.qwk)),
        prompt_average: mean(prompts.iter().map(|p| p.qwk)),
        cells,
        traits,
        prompts,
        parse_failure_rate: failures as f64 / items.len() as f64,
        essays: items.len(),
    })
}

impl EvaluationReport {
    /// Trait table rows with a trailing `avg` row.
    pub fn trait_rows(&self) -> Vec<(String, f64)> {
        self.traits
            .iter()
            .map(|t| (t.trait_id.to_string(), t.qwk))
            .chain([("avg".to_string(), self.trait_average)])
            .collect()
    }

    pub fn prompt_rows(&self) -> Vec<(String, f64)> {
        self.prompts
            .iter()
            .map(|p| (format!("p{}", p.prompt_id), p.qwk))
            .chain([("avg".to_string(), self.prompt_average)])
            .collect()
    }
}

fn table_csv(rows: &[(String, Vec<(String, f64)>)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some((_, first)) = rows.first() {
        let mut header = vec!["model".to_string()];
        header.extend(first.iter().map(|(k, _)| k.clone()));
        w.write_record(&header)?;
    }
    for (model, cols) in rows {
        let mut rec = vec![model.clone()];
        rec.extend(cols.iter().map(|(_, v)| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Traits as columns, one row per model.
pub fn trait_table_csv(reports: &[&EvaluationReport]) -> Result<String> {
    let rows: Vec<_> = reports.iter().map(|r| (r.model.clone(), r.trait_rows())).collect();
    table_csv(&rows)
}

/// Prompts as columns, one row per model.
pub fn prompt_table_csv(reports: &[&EvaluationReport]) -> Result<String> {
    let rows: Vec<_> = reports.iter().map(|r| (r.model.clone(), r.prompt_rows())).collect();
    table_csv(&rows)
}
