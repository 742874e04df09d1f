//! Monthly transaction records and their CSV form.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calendar month encoded as `YYYYMM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u32", try_from = "u32")]
pub struct YearMonth(u32);

impl YearMonth {
    pub fn new(year: u32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) || !(1000..=9999).contains(&year) {
            return Err(Error::Domain(format!("invalid calendar month {year}-{month}")));
        }
        Ok(Self(year * 100 + month))
    }

    pub fn year(self) -> u32 {
        self.0 / 100
    }

    pub fn month(self) -> u32 {
        self.0 % 100
    }

    /// Months since year 0, for gap arithmetic.
    pub fn ordinal(self) -> i64 {
        self.year() as i64 * 12 + (self.month() as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        let year = ordinal.div_euclid(12) as u32;
        let month = ordinal.rem_euclid(12) as u32 + 1;
        Self(year * 100 + month)
    }

    pub fn plus(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    pub fn next(self) -> Self {
        self.plus(1)
    }

    /// Whole months from `self` to `later` (negative if `later` is earlier).
    pub fn months_until(self, later: YearMonth) -> i64 {
        later.ordinal() - self.ordinal()
    }

    pub fn days(self) -> u32 {
        match self.month() {
            4 | 6 | 9 | 11 => 30,
            2 => {
                let y = self.year();
                if (y.is_multiple_of(4) && !y.is_multiple_of(100)) || y.is_multiple_of(400) {
                    29
                } else {
                    28
                }
            }
            _ => 31,
        }
    }

    pub fn as_u32(self) -> u32 {
        self.0
    }
}

impl From<YearMonth> for u32 {
    fn from(m: YearMonth) -> u32 {
        m.0
    }
}

impl TryFrom<u32> for YearMonth {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        YearMonth::new(v / 100, v % 100)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    /// Accepts `YYYYMM` and `YYYY-MM`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Domain(format!("invalid year-month {s:?}"));
        let (y, m) = match s.split_once('-') {
            Some((y, m)) => (y, m),
            None if s.len() == 6 => s.split_at(4),
            None => return Err(bad()),
        };
        let year: u32 = y.parse().map_err(|_| bad())?;
        let month: u32 = m.parse().map_err(|_| bad())?;
        YearMonth::new(year, month).map_err(|_| bad())
    }
}

/// One item's aggregated activity in one calendar month.
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionMonth {
    pub item_id: String,
    pub year_month: YearMonth,
    pub price: f64,
    pub units_sold: f64,
    pub inventory: f64,
    pub oos_days: f64,
    pub rating_count: f64,
    pub days_launched: f64,
    pub competitor_price: Option<f64>,
    pub substitute_available: bool,
    pub event_flags: BTreeSet<String>,
    pub brand: String,
    pub size: String,
    pub category: String,
    pub subcategory: String,
}

/// Column order of the transactions CSV.
pub const TRANSACTION_COLUMNS: [&str; 15] = [
    "item_id",
    "year_month",
    "price",
    "units_sold",
    "inventory",
    "oos_days",
    "rating_count",
    "days_launched",
    "competitor_price",
    "substitute_available",
    "event_flags",
    "brand",
    "size",
    "category",
    "subcategory",
];

/// Separator inside the `event_flags` cell.
pub const EVENT_SEPARATOR: char = ';';

pub(crate) fn join_events(events: &BTreeSet<String>) -> String {
    events.iter().map(String::as_str).collect::<Vec<_>>().join(";")
}

pub(crate) fn split_events(cell: &str) -> BTreeSet<String> {
    cell.split(EVENT_SEPARATOR)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

pub(crate) fn parse_bool(cell: &str) -> Option<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" | "" => Some(false),
        _ => None,
    }
}

impl TransactionMonth {
    fn from_cells(cells: &csv::StringRecord, line: u64) -> Result<Self> {
        let err = |message: String| Error::Parse { line, message };
        if cells.len() != TRANSACTION_COLUMNS.len() {
            return Err(err(format!(
                "expected {} columns, found {}",
                TRANSACTION_COLUMNS.len(),
                cells.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            let raw = cells[i].trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| err(format!("{}: not a number: {raw:?}", TRANSACTION_COLUMNS[i])))?;
            if !v.is_finite() || v < 0.0 {
                return Err(err(format!(
                    "{}: must be a non-negative number, got {raw}",
                    TRANSACTION_COLUMNS[i]
                )));
            }
            Ok(v)
        };
        let item_id = cells[0].trim().to_owned();
        if item_id.is_empty() {
            return Err(err("empty item_id".into()));
        }
        let year_month: YearMonth = cells[1].parse().map_err(|e: Error| err(e.to_string()))?;
        let price = num(2)?;
        let units_sold = num(3)?;
        if units_sold > 0.0 && price <= 0.0 {
            return Err(err("price must be positive when units were sold".into()));
        }
        let oos_days = num(5)?;
        if oos_days > 31.0 {
            return Err(err(format!("oos_days must be within 0..=31, got {oos_days}")));
        }
        let competitor_price = if cells[8].trim().is_empty() {
            None
        } else {
            Some(num(8)?)
        };
        let substitute_available = parse_bool(&cells[9])
            .ok_or_else(|| err(format!("substitute_available: not a boolean: {:?}", &cells[9])))?;
        Ok(Self {
            item_id,
            year_month,
            price,
            units_sold,
            inventory: num(4)?,
            oos_days,
            rating_count: num(6)?,
            days_launched: num(7)?,
            competitor_price,
            substitute_available,
            event_flags: split_events(&cells[10]),
            brand: cells[11].trim().to_owned(),
            size: cells[12].trim().to_owned(),
            category: cells[13].trim().to_owned(),
            subcategory: cells[14].trim().to_owned(),
        })
    }

    fn to_cells(&self) -> Vec<String> {
        vec![
            self.item_id.clone(),
            self.year_month.to_string(),
            fmt_f64(self.price),
            fmt_f64(self.units_sold),
            fmt_f64(self.inventory),
            fmt_f64(self.oos_days),
            fmt_f64(self.rating_count),
            fmt_f64(self.days_launched),
            self.competitor_price.map(fmt_f64).unwrap_or_default(),
            if self.substitute_available { "1" } else { "0" }.into(),
            join_events(&self.event_flags),
            self.brand.clone(),
            self.size.clone(),
            self.category.clone(),
            self.subcategory.clone(),
        ]
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Reads and validates a transactions CSV.
pub fn read_transactions<R: Read>(reader: R) -> Result<Vec<TransactionMonth>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let found: Vec<&str> = headers.iter().map(str::trim).collect();
    if found != TRANSACTION_COLUMNS {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be {:?}, found {:?}", TRANSACTION_COLUMNS, found),
        });
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let rec = TransactionMonth::from_cells(&row, line)?;
        if !seen.insert((rec.item_id.clone(), rec.year_month)) {
            return Err(Error::Integrity(format!(
                "duplicate record for item {} in {} (line {line})",
                rec.item_id, rec.year_month
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Parses the transactions CSV at `path`.
pub fn ingest(path: &Path) -> Result<Vec<TransactionMonth>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_transactions(std::io::BufReader::new(file))
}

pub fn write_transactions<W: Write>(writer: W, records: &[TransactionMonth]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRANSACTION_COLUMNS)?;
    for r in records {
        w.write_record(r.to_cells())?;
    }
    w.flush().map_err(|e| Error::io("<transactions>", e))?;
    Ok(())
}
