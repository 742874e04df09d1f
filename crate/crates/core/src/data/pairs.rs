//! Lead/lag cross join of monthly records.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::records::{fmt_f64, join_events, parse_bool, split_events, TransactionMonth, YearMonth};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Largest admissible distance between lag and lead month.
pub const MAX_MONTH_GAP: i64 = 12;

/// Observed signals of one month on one side of a pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthSignals {
    pub price: f64,
    pub inventory: f64,
    pub oos_days: f64,
    pub rating_count: f64,
    pub days_launched: f64,
    pub competitor_price: Option<f64>,
    pub substitute_available: bool,
    pub events: BTreeSet<String>,
}

impl MonthSignals {
    fn of(r: &TransactionMonth) -> Self {
        Self {
            price: r.price,
            inventory: r.inventory,
            oos_days: r.oos_days,
            rating_count: r.rating_count,
            days_launched: r.days_launched,
            competitor_price: r.competitor_price,
            substitute_available: r.substitute_available,
            events: r.event_flags.clone(),
        }
    }
}

/// One training row: conditioning features from the lag month, the lead
/// month's signals and price, and the lead month's units as target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    pub item_id: String,
    pub brand: String,
    pub size: String,
    pub category: String,
    pub subcategory: String,
    pub lag_month: YearMonth,
    pub lead_month: YearMonth,
    pub month_gap: u32,
    pub lag_units: f64,
    pub lag: MonthSignals,
    pub lead: MonthSignals,
    pub price_change_pct: f64,
    pub target: Option<f64>,
}

/// `(lead - lag) / lag` as a ratio.
pub fn price_change_pct(lag_price: f64, lead_price: f64) -> Result<f64> {
    if !(lag_price > 0.0) {
        return Err(Error::Domain(format!("lag price must be positive, got {lag_price}")));
    }
    Ok((lead_price - lag_price) / lag_price)
}

impl PairExample {
    /// Pair of two records of the same item. Callers check validity.
    pub fn from_records(lag: &TransactionMonth, lead: &TransactionMonth) -> Result<Self> {
        let gap = lag.year_month.months_until(lead.year_month);
        Ok(Self {
            item_id: lag.item_id.clone(),
            brand: lag.brand.clone(),
            size: lag.size.clone(),
            category: lag.category.clone(),
            subcategory: lag.subcategory.clone(),
            lag_month: lag.year_month,
            lead_month: lead.year_month,
            month_gap: u32::try_from(gap).map_err(|_| Error::Domain(format!("lead precedes lag by {gap} months")))?,
            lag_units: lag.units_sold,
            lag: MonthSignals::of(lag),
            lead: MonthSignals::of(lead),
            price_change_pct: price_change_pct(lag.price, lead.price)?,
            target: Some(lead.units_sold),
        })
    }
}

/// True when `(lag, lead)` is an admissible pair: same item, gap in
/// `1..=12` months, stock on hand in both months, and positive prices.
pub fn is_valid_pair(lag: &TransactionMonth, lead: &TransactionMonth) -> bool {
    let gap = lag.year_month.months_until(lead.year_month);
    lag.item_id == lead.item_id
        && (1..=MAX_MONTH_GAP).contains(&gap)
        && lag.inventory > 0.0
        && lead.inventory > 0.0
        && lag.price > 0.0
        && lead.price > 0.0
}

pub(crate) fn group_by_item(records: &[TransactionMonth]) -> Vec<Vec<&TransactionMonth>> {
    let mut by_item: BTreeMap<&str, Vec<&TransactionMonth>> = BTreeMap::new();
    for r in records {
        by_item.entry(r.item_id.as_str()).or_default().push(r);
    }
    by_item
        .into_values()
        .map(|mut v| {
            v.sort_by_key(|r| r.year_month);
            v
        })
        .collect()
}

pub fn build_pairs(records: &[TransactionMonth]) -> Vec<PairExample> {
    build_pairs_with(records, Exec::default())
}

/// Every admissible ordered month pair per item, sorted by
/// `(item_id, lag_month, lead_month)`. Items are processed independently.
pub fn build_pairs_with(records: &[TransactionMonth], exec: Exec) -> Vec<PairExample> {
    let groups = group_by_item(records);
    exec.map(&groups, |months| {
        let mut out = Vec::new();
        for (i, lag) in months.iter().enumerate() {
            for lead in &months[i + 1..] {
                if lag.year_month.months_until(lead.year_month) > MAX_MONTH_GAP {
                    break;
                }
                if is_valid_pair(lag, lead) {
                    out.push(PairExample::from_records(lag, lead).expect("validated pair"));
                }
            }
        }
        out
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Column order of the pair dataset CSV.
pub const PAIR_COLUMNS: [&str; 27] = [
    "item_id",
    "brand",
    "size",
    "category",
    "subcategory",
    "lag_month",
    "lead_month",
    "month_gap",
    "lag_units",
    "lag_price",
    "lag_inventory",
    "lag_oos_days",
    "lag_rating_count",
    "lag_days_launched",
    "lag_competitor_price",
    "lag_substitute_available",
    "lag_events",
    "lead_price",
    "lead_inventory",
    "lead_oos_days",
    "lead_rating_count",
    "lead_days_launched",
    "lead_competitor_price",
    "lead_substitute_available",
    "lead_events",
    "price_change_pct",
    "target",
];

fn signal_cells(s: &MonthSignals, out: &mut Vec<String>) {
    out.push(fmt_f64(s.price));
    out.push(fmt_f64(s.inventory));
    out.push(fmt_f64(s.oos_days));
    out.push(fmt_f64(s.rating_count));
    out.push(fmt_f64(s.days_launched));
    out.push(s.competitor_price.map(fmt_f64).unwrap_or_default());
    out.push(if s.substitute_available { "1" } else { "0" }.into());
    out.push(join_events(&s.events));
}

pub fn write_pairs<W: Write>(writer: W, pairs: &[PairExample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PAIR_COLUMNS)?;
    for p in pairs {
        let mut row = vec![
            p.item_id.clone(),
            p.brand.clone(),
            p.size.clone(),
            p.category.clone(),
            p.subcategory.clone(),
            p.lag_month.to_string(),
            p.lead_month.to_string(),
            p.month_gap.to_string(),
            fmt_f64(p.lag_units),
        ];
        signal_cells(&p.lag, &mut row);
        signal_cells(&p.lead, &mut row);
        row.push(fmt_f64(p.price_change_pct));
        row.push(p.target.map(fmt_f64).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<pairs>", e))?;
    Ok(())
}

pub fn read_pairs<R: Read>(reader: R) -> Result<Vec<PairExample>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if headers != PAIR_COLUMNS {
        return Err(Error::Parse {
            line: 1,
            message: format!("pair header must be {PAIR_COLUMNS:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let err = |c: usize| Error::Parse {
            line,
            message: format!("bad value in column {}: {:?}", PAIR_COLUMNS[c], &row[c]),
        };
        let num = |c: usize| row[c].parse::<f64>().map_err(|_| err(c));
        let opt = |c: usize| {
            if row[c].is_empty() {
                Ok(None)
            } else {
                num(c).map(Some)
            }
        };
        let signals = |o: usize| -> Result<MonthSignals> {
            Ok(MonthSignals {
                price: num(o)?,
                inventory: num(o + 1)?,
                oos_days: num(o + 2)?,
                rating_count: num(o + 3)?,
                days_launched: num(o + 4)?,
                competitor_price: opt(o + 5)?,
                substitute_available: parse_bool(&row[o + 6]).ok_or_else(|| err(o + 6))?,
                events: split_events(&row[o + 7]),
            })
        };
        out.push(PairExample {
            item_id: row[0].to_owned(),
            brand: row[1].to_owned(),
            size: row[2].to_owned(),
            category: row[3].to_owned(),
            subcategory: row[4].to_owned(),
            lag_month: row[5].parse().map_err(|_| err(5))?,
            lead_month: row[6].parse().map_err(|_| err(6))?,
            month_gap: row[7].parse().map_err(|_| err(7))?,
            lag_units: num(8)?,
            lag: signals(9)?,
            lead: signals(17)?,
            price_change_pct: num(25)?,
            target: opt(26)?,
        });
    }
    Ok(out)
}
