//! Inference rows for the month after the latest observation.

use std::collections::BTreeMap;

use serde::Serialize;

use super::pairs::{group_by_item, MonthSignals, PairExample};
use super::records::{TransactionMonth, YearMonth};
use crate::error::{Error, Result};

/// How each lead-month signal is filled when the lead month is in the future.
pub fn carry_forward_policy() -> BTreeMap<String, String> {
    [
        ("lead_price", "lag price (replaced by counterfactual queries)"),
        ("lead_inventory", "carried forward from lag month"),
        ("lead_oos_days", "carried forward from lag month"),
        ("lead_rating_count", "carried forward from lag month"),
        ("lead_days_launched", "lag value plus the days of the lag month"),
        ("lead_competitor_price", "carried forward from lag month"),
        ("lead_substitute_available", "carried forward from lag month"),
        ("lead_events", "carried forward from lag month"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v.to_owned()))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedItem {
    pub item_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InferenceSet {
    pub rows: Vec<PairExample>,
    pub skipped: Vec<SkippedItem>,
}

/// One row per item that has stock in `as_of`, with lead month `as_of + 1`
/// and lead price equal to the lag price. Items without a usable `as_of`
/// record are listed in `skipped`.
pub fn build_inference_set(records: &[TransactionMonth], as_of: YearMonth) -> Result<InferenceSet> {
    if records.is_empty() {
        return Ok(InferenceSet::default());
    }
    if !records.iter().any(|r| r.year_month == as_of) {
        return Err(Error::Config(format!("as-of month {as_of} does not occur in the data")));
    }
    let mut set = InferenceSet::default();
    for months in group_by_item(records) {
        let item = months[0].item_id.clone();
        let Some(lag) = months.iter().find(|r| r.year_month == as_of) else {
            set.skipped.push(SkippedItem {
                item_id: item,
                reason: format!("no record in {as_of}"),
            });
            continue;
        };
        let reason = if lag.inventory <= 0.0 {
            Some(format!("zero inventory in {as_of}"))
        } else if lag.price <= 0.0 {
            Some(format!("non-positive price in {as_of}"))
        } else {
            None
        };
        if let Some(reason) = reason {
            set.skipped.push(SkippedItem { item_id: item, reason });
            continue;
        }
        let lag_signals = MonthSignals {
            price: lag.price,
            inventory: lag.inventory,
            oos_days: lag.oos_days,
            rating_count: lag.rating_count,
            days_launched: lag.days_launched,
            competitor_price: lag.competitor_price,
            substitute_available: lag.substitute_available,
            events: lag.event_flags.clone(),
        };
        let mut lead = lag_signals.clone();
        lead.days_launched += as_of.days() as f64;
        set.rows.push(PairExample {
            item_id: item,
            brand: lag.brand.clone(),
            size: lag.size.clone(),
            category: lag.category.clone(),
            subcategory: lag.subcategory.clone(),
            lag_month: as_of,
            lead_month: as_of.next(),
            month_gap: 1,
            lag_units: lag.units_sold,
            lag: lag_signals,
            lead,
            price_change_pct: 0.0,
            target: None,
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(item: &str, ym: &str, inventory: f64) -> TransactionMonth {
        TransactionMonth {
            item_id: item.into(),
            year_month: ym.parse().unwrap(),
            price: 4.0,
            units_sold: 2.0,
            inventory,
            oos_days: 1.0,
            rating_count: 3.0,
            days_launched: 50.0,
            competitor_price: Some(4.5),
            substitute_available: true,
            event_flags: Default::default(),
            brand: "b".into(),
            size: "s".into(),
            category: "c".into(),
            subcategory: "d".into(),
        }
    }

    #[test]
    fn valid_item_gets_one_row() {
        let recs = vec![rec("A", "2024-02", 5.0), rec("A", "2024-03", 5.0)];
        let set = build_inference_set(&recs, "2024-03".parse().unwrap()).unwrap();
        assert_eq!(set.rows.len(), 1);
        let row = &set.rows[0];
        assert_eq!(row.month_gap, 1);
        assert_eq!(row.lead_month, "2024-04".parse().unwrap());
        assert_eq!(row.lead.price, row.lag.price);
        assert_eq!(row.price_change_pct, 0.0);
        assert_eq!(row.lead.days_launched, 81.0);
        assert!(row.target.is_none());
    }

    #[test]
    fn zero_inventory_is_skipped() {
        let recs = vec![
            rec("A", "2024-03", 0.0),
            rec("B", "2024-03", 2.0),
            rec("C", "2024-01", 2.0),
        ];
        let set = build_inference_set(&recs, "2024-03".parse().unwrap()).unwrap();
        assert_eq!(set.rows.len(), 1);
        let skipped: Vec<&str> = set.skipped.iter().map(|s| s.item_id.as_str()).collect();
        assert_eq!(skipped, vec!["A", "C"]);
    }

    #[test]
    fn empty_records() {
        let set = build_inference_set(&[], "2024-03".parse().unwrap()).unwrap();
        assert!(set.rows.is_empty() && set.skipped.is_empty());
    }
}
