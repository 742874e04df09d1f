//! Counterfactual arc elasticities and accuracy metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::inference::InferenceSet;
use crate::data::pairs::PairExample;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::DemandModel;
use crate::synthetic::ItemTruth;

/// Smallest baseline demand accepted as a denominator.
pub const DEMAND_FLOOR: f64 = 1e-6;

/// Default price change as a fraction of the base price.
pub const DEFAULT_RELATIVE_DELTA: f64 = -0.05;

/// `(y_pert − y_base) / y_base · p / dp`.
pub fn arc_elasticity(y_base: f64, y_pert: f64, p: f64, dp: f64) -> Result<f64> {
    if !(p > 0.0) || dp == 0.0 || !dp.is_finite() {
        return Err(Error::Domain(format!("need p > 0 and dp != 0, got p={p}, dp={dp}")));
    }
    if !(y_base > DEMAND_FLOOR) {
        return Err(Error::Domain(format!(
            "degenerate baseline demand {y_base} (floor {DEMAND_FLOOR})"
        )));
    }
    Ok((y_pert - y_base) / y_base * p / dp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityQuery {
    pub item_id: String,
    pub price: f64,
    pub delta: f64,
}

impl ElasticityQuery {
    /// Query at the row's lead price with a relative change.
    pub fn relative(row: &PairExample, relative_delta: f64) -> Self {
        Self {
            item_id: row.item_id.clone(),
            price: row.lead.price,
            delta: row.lead.price * relative_delta,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.price > 0.0) || self.delta == 0.0 || !(self.price + self.delta > 0.0) {
            return Err(Error::Domain(format!(
                "invalid query p={}, dp={}: need p > 0, dp != 0, p + dp > 0",
                self.price, self.delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason", rename_all = "snake_case")]
pub enum EntryStatus {
    Valid,
    Skipped(String),
    Failed(String),
}

impl fmt::Display for EntryStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntryStatus::Valid => f.write_str("ok"),
            EntryStatus::Skipped(r) => write!(f, "skipped: {r}"),
            EntryStatus::Failed(r) => write!(f, "failed: {r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityEntry {
    pub item_id: String,
    pub price: Option<f64>,
    pub delta: Option<f64>,
    pub y_base: Option<f64>,
    pub y_pert: Option<f64>,
    pub elasticity: Option<f64>,
    pub status: EntryStatus,
}

impl ElasticityEntry {
    fn skipped(item_id: &str, reason: String) -> Self {
        Self {
            item_id: item_id.to_owned(),
            price: None,
            delta: None,
            y_base: None,
            y_pert: None,
            elasticity: None,
            status: EntryStatus::Skipped(reason),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.status == EntryStatus::Valid
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ElasticityReport {
    /// Sorted by item id.
    pub entries: Vec<ElasticityEntry>,
}

impl ElasticityReport {
    pub fn valid(&self) -> impl Iterator<Item = &ElasticityEntry> {
        self.entries.iter().filter(|e| e.is_valid())
    }

    /// Item → elasticity over valid entries.
    pub fn estimates(&self) -> BTreeMap<String, f64> {
        self.valid()
            .filter_map(|e| e.elasticity.map(|v| (e.item_id.clone(), v)))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["item_id", "p", "dp", "y_base", "y_pert", "elasticity", "status"])?;
        for e in &self.entries {
            w.write_record([
                e.item_id.clone(),
                cell(e.price),
                cell(e.delta),
                cell(e.y_base),
                cell(e.y_pert),
                cell(e.elasticity),
                e.status.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<elasticity csv>", e))?;
        Ok(())
    }
}

/// Predicts demand at `p` and `p + dp` for each query's inference row and
/// applies the arc formula. Per-item problems become report entries.
pub fn evaluate_elasticities(
    model: &DemandModel,
    rows: &[PairExample],
    queries: &[ElasticityQuery],
    exec: Exec,
) -> Result<ElasticityReport> {
    let by_item: BTreeMap<&str, &PairExample> = rows.iter().map(|r| (r.item_id.as_str(), r)).collect();
    let mut entries = Vec::with_capacity(queries.len());
    let mut batch_rows = Vec::new();
    let mut prices = Vec::new();
    let mut pending = Vec::new();
    for q in queries {
        let Some(row) = by_item.get(q.item_id.as_str()) else {
            entries.push(ElasticityEntry::skipped(&q.item_id, "item not in inference set".into()));
            continue;
        };
        if let Err(e) = q.check() {
            entries.push(ElasticityEntry {
                status: EntryStatus::Failed(e.to_string()),
                price: Some(q.price),
                delta: Some(q.delta),
                ..ElasticityEntry::skipped(&q.item_id, String::new())
            });
            continue;
        }
        batch_rows.push((*row).clone());
        batch_rows.push((*row).clone());
        prices.push(q.price);
        prices.push(q.price + q.delta);
        pending.push(q);
    }
    let y = model.predict_batch(&batch_rows, Some(&prices), exec)?;
    for (i, q) in pending.into_iter().enumerate() {
        let (y_base, y_pert) = (y[2 * i], y[2 * i + 1]);
        let (elasticity, status) = match arc_elasticity(y_base, y_pert, q.price, q.delta) {
            Ok(e) => (Some(e), EntryStatus::Valid),
            Err(e) => (None, EntryStatus::Failed(e.to_string())),
        };
        entries.push(ElasticityEntry {
            item_id: q.item_id.clone(),
            price: Some(q.price),
            delta: Some(q.delta),
            y_base: Some(y_base),
            y_pert: Some(y_pert),
            elasticity,
            status,
        });
    }
    entries.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    Ok(ElasticityReport { entries })
}

/// Elasticities for every row of an inference set at `relative_delta` of
/// the current price, plus skip entries for the set's excluded items.
pub fn evaluate_inference_set(
    model: &DemandModel,
    set: &InferenceSet,
    relative_delta: f64,
    exec: Exec,
) -> Result<ElasticityReport> {
    let queries: Vec<ElasticityQuery> = set
        .rows
        .iter()
        .map(|r| ElasticityQuery::relative(r, relative_delta))
        .collect();
    let mut report = evaluate_elasticities(model, &set.rows, &queries, exec)?;
    report.entries.extend(
        set.skipped
            .iter()
            .map(|s| ElasticityEntry::skipped(&s.item_id, s.reason.clone())),
    );
    report.entries.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WmapeForm {
    /// `Σ|y − ŷ| / Σy × 100`.
    #[default]
    Standard,
    /// `Σ y·|y − ŷ| / Σy`, a demand-weighted absolute error.
    Weighted,
}

pub fn wmape(actuals: &[f64], predictions: &[f64]) -> Result<f64> {
    wmape_as(actuals, predictions, WmapeForm::Standard)
}

pub fn wmape_as(actuals: &[f64], predictions: &[f64], form: WmapeForm) -> Result<f64> {
    if actuals.is_empty() || actuals.len() != predictions.len() {
        return Err(Error::Metric(format!(
            "wmape needs equal non-empty inputs, got {} and {}",
            actuals.len(),
            predictions.len()
        )));
    }
    let total: f64 = actuals.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Metric("wmape is undefined when total demand is zero".into()));
    }
    let err: f64 = actuals
        .iter()
        .zip(predictions)
        .map(|(y, p)| match form {
            WmapeForm::Standard => (y - p).abs(),
            WmapeForm::Weighted => y * (y - p).abs(),
        })
        .sum();
    Ok(match form {
        WmapeForm::Standard => err / total * 100.0,
        WmapeForm::Weighted => err / total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeSummary {
    pub mae: f64,
    pub coverage: usize,
}

/// Mean absolute difference over items present in both maps.
pub fn mae_elasticity(truth: &BTreeMap<String, f64>, predicted: &BTreeMap<String, f64>) -> Result<MaeSummary> {
    let diffs: Vec<f64> = truth
        .iter()
        .filter_map(|(k, t)| predicted.get(k).map(|p| (t - p).abs()))
        .collect();
    if diffs.is_empty() {
        return Err(Error::Metric("no items in common between truth and predictions".into()));
    }
    Ok(MaeSummary {
        mae: diffs.iter().sum::<f64>() / diffs.len() as f64,
        coverage: diffs.len(),
    })
}

/// True arc elasticity at each valid entry's `(p, dp)`.
pub fn truth_for_report(truth: &[ItemTruth], report: &ElasticityReport) -> Result<BTreeMap<String, f64>> {
    let by_item: BTreeMap<&str, &ItemTruth> = truth.iter().map(|t| (t.item_id.as_str(), t)).collect();
    let mut out = BTreeMap::new();
    for e in report.valid() {
        if let (Some(t), Some(p), Some(dp)) = (by_item.get(e.item_id.as_str()), e.price, e.delta) {
            out.insert(e.item_id.clone(), t.arc_elasticity(p, dp)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoglogFit {
    pub estimates: BTreeMap<String, f64>,
    pub skipped: BTreeMap<String, String>,
}

/// Per-item OLS slope of `ln(units + 1)` on `ln(price)` over the distinct
/// monthly observations appearing in `pairs`.
pub fn loglog_baseline(pairs: &[PairExample]) -> LoglogFit {
    let mut obs: BTreeMap<&str, BTreeMap<u32, (f64, f64)>> = BTreeMap::new();
    for p in pairs {
        let months = obs.entry(p.item_id.as_str()).or_default();
        months.insert(p.lag_month.as_u32(), (p.lag.price, p.lag_units));
        if let Some(y) = p.target {
            months.insert(p.lead_month.as_u32(), (p.lead.price, y));
        }
    }
    let mut fit = LoglogFit::default();
    for (item, months) in obs {
        let pts: Vec<(f64, f64)> = months.values().map(|&(p, u)| (p.ln(), (u + 1.0).ln())).collect();
        if pts.len() < 3 {
            fit.skipped
                .insert(item.to_owned(), format!("{} observations, need at least 3", pts.len()));
            continue;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx <= 1e-12 * n {
            fit.skipped.insert(item.to_owned(), "no price variation".into());
            continue;
        }
        fit.estimates.insert(item.to_owned(), sxy / sxx);
    }
    fit
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandMetrics {
    pub rows: usize,
    pub wmape: f64,
    pub wmape_weighted: f64,
    pub mse: f64,
}

/// Forecast accuracy of the model on labelled pairs.
pub fn evaluate_demand(model: &DemandModel, pairs: &[PairExample], exec: Exec) -> Result<DemandMetrics> {
    let actual: Vec<f64> = pairs
        .iter()
        .map(|p| {
            p.target
                .ok_or_else(|| Error::Metric(format!("pair for {} has no target", p.item_id)))
        })
        .collect::<Result<_>>()?;
    let predicted = model.predict_batch(pairs, None, exec)?;
    let mse = actual
        .iter()
        .zip(&predicted)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / actual.len().max(1) as f64;
    Ok(DemandMetrics {
        rows: pairs.len(),
        wmape: wmape(&actual, &predicted)?,
        wmape_weighted: wmape_as(&actual, &predicted, WmapeForm::Weighted)?,
        mse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticitySummary {
    pub items: usize,
    pub valid: usize,
    pub skipped: usize,
    pub failed: usize,
    pub positive: usize,
    pub mean_elasticity: Option<f64>,
    pub mae_vs_truth: Option<MaeSummary>,
}

impl ElasticitySummary {
    pub fn new(report: &ElasticityReport, truth: Option<&[ItemTruth]>) -> Result<Self> {
        let est = report.estimates();
        let items: BTreeSet<&str> = report.entries.iter().map(|e| e.item_id.as_str()).collect();
        let mae_vs_truth = match truth {
            Some(t) if !est.is_empty() => Some(mae_elasticity(&truth_for_report(t, report)?, &est)?),
            _ => None,
        };
        Ok(Self {
            items: items.len(),
            valid: est.len(),
            skipped: report
                .entries
                .iter()
                .filter(|e| matches!(e.status, EntryStatus::Skipped(_)))
                .count(),
            failed: report
                .entries
                .iter()
                .filter(|e| matches!(e.status, EntryStatus::Failed(_)))
                .count(),
            positive: est.values().filter(|&&v| v > 0.0).count(),
            mean_elasticity: (!est.is_empty()).then(|| est.values().sum::<f64>() / est.len() as f64),
            mae_vs_truth,
        })
    }
}
