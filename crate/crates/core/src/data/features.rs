//! Mapping from pair rows to named model inputs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::pairs::{price_change_pct, PairExample};
use crate::error::{Error, Result};

pub const LEAD_PRICE: &str = "lead_price";
pub const PRICE_CHANGE_PCT: &str = "price_change_pct";

/// Categorical inputs, each embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Categorical {
    ItemId,
    Brand,
    Size,
    Category,
    Subcategory,
    LeadCalendarMonth,
}

impl Categorical {
    pub const ALL: [Categorical; 6] = [
        Categorical::ItemId,
        Categorical::Brand,
        Categorical::Size,
        Categorical::Category,
        Categorical::Subcategory,
        Categorical::LeadCalendarMonth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Categorical::ItemId => "item_id",
            Categorical::Brand => "brand",
            Categorical::Size => "size",
            Categorical::Category => "category",
            Categorical::Subcategory => "subcategory",
            Categorical::LeadCalendarMonth => "lead_calendar_month",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown categorical feature {name:?}")))
    }

    pub fn value(self, p: &PairExample) -> String {
        match self {
            Categorical::ItemId => p.item_id.clone(),
            Categorical::Brand => p.brand.clone(),
            Categorical::Size => p.size.clone(),
            Categorical::Category => p.category.clone(),
            Categorical::Subcategory => p.subcategory.clone(),
            Categorical::LeadCalendarMonth => p.lead_month.month().to_string(),
        }
    }
}

/// Continuous inputs, each passed through its own small dense encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Continuous {
    MonthGap,
    LagPrice,
    LagUnits,
    LagInventory,
    LagOosDays,
    LeadOosDays,
    LagRatingCount,
    LeadRatingCount,
    LagDaysLaunched,
    LeadDaysLaunched,
    LagCompetitorPrice,
    LagCompetitorPresent,
    LeadCompetitorPrice,
    LeadCompetitorPresent,
    LagSubstitute,
    LeadSubstitute,
    LagEvent(String),
    LeadEvent(String),
}

const FIXED_CONTINUOUS: [(&str, Continuous); 16] = [
    ("month_gap", Continuous::MonthGap),
    ("lag_price", Continuous::LagPrice),
    ("lag_units", Continuous::LagUnits),
    ("lag_inventory", Continuous::LagInventory),
    ("lag_oos_days", Continuous::LagOosDays),
    ("lead_oos_days", Continuous::LeadOosDays),
    ("lag_rating_count", Continuous::LagRatingCount),
    ("lead_rating_count", Continuous::LeadRatingCount),
    ("lag_days_launched", Continuous::LagDaysLaunched),
    ("lead_days_launched", Continuous::LeadDaysLaunched),
    ("lag_competitor_price", Continuous::LagCompetitorPrice),
    ("lag_competitor_present", Continuous::LagCompetitorPresent),
    ("lead_competitor_price", Continuous::LeadCompetitorPrice),
    ("lead_competitor_present", Continuous::LeadCompetitorPresent),
    ("lag_substitute_available", Continuous::LagSubstitute),
    ("lead_substitute_available", Continuous::LeadSubstitute),
];

impl Continuous {
    pub fn name(&self) -> String {
        match self {
            Continuous::LagEvent(e) => format!("lag_event:{e}"),
            Continuous::LeadEvent(e) => format!("lead_event:{e}"),
            other => FIXED_CONTINUOUS
                .iter()
                .find(|(_, c)| c == other)
                .map(|(n, _)| (*n).to_owned())
                .expect("every fixed feature is listed"),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        if let Some(e) = name.strip_prefix("lag_event:") {
            return Ok(Continuous::LagEvent(e.to_owned()));
        }
        if let Some(e) = name.strip_prefix("lead_event:") {
            return Ok(Continuous::LeadEvent(e.to_owned()));
        }
        FIXED_CONTINUOUS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, c)| c.clone())
            .ok_or_else(|| Error::Config(format!("unknown continuous feature {name:?}")))
    }

    pub fn value(&self, p: &PairExample) -> f64 {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        match self {
            Continuous::MonthGap => p.month_gap as f64,
            Continuous::LagPrice => p.lag.price,
            Continuous::LagUnits => p.lag_units,
            Continuous::LagInventory => p.lag.inventory,
            Continuous::LagOosDays => p.lag.oos_days,
            Continuous::LeadOosDays => p.lead.oos_days,
            Continuous::LagRatingCount => p.lag.rating_count,
            Continuous::LeadRatingCount => p.lead.rating_count,
            Continuous::LagDaysLaunched => p.lag.days_launched,
            Continuous::LeadDaysLaunched => p.lead.days_launched,
            // absent competitor price is encoded as 0 alongside a presence flag
            Continuous::LagCompetitorPrice => p.lag.competitor_price.unwrap_or(0.0),
            Continuous::LagCompetitorPresent => flag(p.lag.competitor_price.is_some()),
            Continuous::LeadCompetitorPrice => p.lead.competitor_price.unwrap_or(0.0),
            Continuous::LeadCompetitorPresent => flag(p.lead.competitor_price.is_some()),
            Continuous::LagSubstitute => flag(p.lag.substitute_available),
            Continuous::LeadSubstitute => flag(p.lead.substitute_available),
            Continuous::LagEvent(e) => flag(p.lag.events.contains(e)),
            Continuous::LeadEvent(e) => flag(p.lead.events.contains(e)),
        }
    }
}

/// Names of every model input, grouped by how the network consumes them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub categorical: Vec<String>,
    pub continuous: Vec<String>,
    pub monotone: Vec<String>,
}

impl FeatureLayout {
    /// Standard layout. Lead-month inventory is deliberately absent: it is
    /// recorded after the fact and tracks the very demand being predicted.
    pub fn standard(event_names: &BTreeSet<String>) -> Self {
        let mut continuous: Vec<String> = FIXED_CONTINUOUS.iter().map(|(n, _)| (*n).to_owned()).collect();
        continuous.extend(event_names.iter().map(|e| Continuous::LagEvent(e.clone()).name()));
        continuous.extend(event_names.iter().map(|e| Continuous::LeadEvent(e.clone()).name()));
        Self {
            categorical: Categorical::ALL.iter().map(|c| c.name().to_owned()).collect(),
            continuous,
            monotone: vec![LEAD_PRICE.to_owned(), PRICE_CHANGE_PCT.to_owned()],
        }
    }

    pub fn all_names(&self) -> impl Iterator<Item = &String> {
        self.categorical.iter().chain(&self.continuous).chain(&self.monotone)
    }
}

/// Event names seen anywhere in `pairs`, sorted.
pub fn event_vocabulary(pairs: &[PairExample]) -> BTreeSet<String> {
    pairs
        .iter()
        .flat_map(|p| p.lag.events.iter().chain(&p.lead.events))
        .cloned()
        .collect()
}

/// Lead price and price-change ratio fed to the monotone path, with an
/// optional counterfactual lead price. The ratio is always recomputed from
/// the effective lead price so the two inputs stay consistent.
pub fn monotone_inputs(pair: &PairExample, override_price: Option<f64>) -> Result<[f64; 2]> {
    match override_price {
        None => Ok([pair.lead.price, pair.price_change_pct]),
        Some(p) if p > 0.0 && p.is_finite() => Ok([p, price_change_pct(pair.lag.price, p)?]),
        Some(p) => Err(Error::Domain(format!("counterfactual price must be positive, got {p}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        let events: BTreeSet<String> = ["holiday".to_owned()].into();
        let layout = FeatureLayout::standard(&events);
        for n in &layout.continuous {
            assert_eq!(&Continuous::parse(n).unwrap().name(), n);
        }
        for n in &layout.categorical {
            assert_eq!(Categorical::parse(n).unwrap().name(), n);
        }
        assert!(!layout.continuous.iter().any(|n| n == "lead_inventory"));
        let unique: BTreeSet<&String> = layout.all_names().collect();
        assert_eq!(unique.len(), layout.all_names().count());
    }
}
