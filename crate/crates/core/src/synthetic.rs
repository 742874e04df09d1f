//! Transaction data drawn from a known power-law demand curve.
//!
//! Units follow `D = A · p^ε · season(m) · exp(η)` with `η ~ N(0, σ²)`,
//! rounded half-to-even. Every item carries its own `A` and `ε`, so the
//! true elasticity of any price change is known in closed form.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::records::{TransactionMonth, YearMonth};
use crate::error::{Error, Result};
use crate::exec::Exec;

pub const HOLIDAY_EVENT: &str = "holiday";
pub const PROMO_EVENT: &str = "promo";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriceProcess {
    /// Log-price random walk pulled back toward the item's base price.
    RandomWalk { volatility: f64, reversion: f64 },
    /// Fixed multipliers of the base price, cycled month by month.
    Schedule(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandLaw {
    Constant,
    /// Two power-law segments joined continuously at `kink_ratio × base price`.
    /// Above the kink the exponent is `ε − extra` with `extra` drawn per item.
    Kinked {
        kink_ratio: f64,
        extra_slope: (f64, f64),
    },
}

impl DemandLaw {
    /// Kink at the base price with the upper segment 1 to 2 units steeper.
    pub fn kinked_default() -> Self {
        DemandLaw::Kinked {
            kink_ratio: 1.0,
            extra_slope: (1.0, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorld {
    pub items: usize,
    pub months: usize,
    pub start: YearMonth,
    /// Expected units at the base price with neutral season.
    pub base_units: (f64, f64),
    pub elasticity: (f64, f64),
    pub base_price: (f64, f64),
    pub price_process: PriceProcess,
    pub season_amplitude: f64,
    pub noise_sigma: f64,
    /// Chance that a month is wiped out by a stockout (zero inventory).
    pub stockout_probability: f64,
    pub law: DemandLaw,
    pub brands: usize,
    pub categories: usize,
    pub seed: u64,
}

impl Default for SyntheticWorld {
    fn default() -> Self {
        Self {
            items: 200,
            months: 27,
            start: YearMonth::new(2022, 1).expect("valid month"),
            base_units: (40.0, 400.0),
            elasticity: (-3.0, -0.5),
            base_price: (2.0, 20.0),
            price_process: PriceProcess::RandomWalk {
                volatility: 0.15,
                reversion: 0.2,
            },
            season_amplitude: 0.2,
            noise_sigma: 0.1,
            stockout_probability: 0.0,
            law: DemandLaw::Constant,
            brands: 8,
            categories: 4,
            seed: 0,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Config(format!("{name} range [{lo}, {hi}] is not ordered")));
    }
    Ok(())
}

impl SyntheticWorld {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.items == 0 || self.months == 0 {
            return fail("items and months must be positive".into());
        }
        if self.brands == 0 || self.categories == 0 {
            return fail("brands and categories must be positive".into());
        }
        check_range("elasticity", self.elasticity)?;
        check_range("base_units", self.base_units)?;
        check_range("base_price", self.base_price)?;
        if self.elasticity.1 >= 0.0 {
            return fail(format!(
                "elasticities must be negative, got upper bound {}",
                self.elasticity.1
            ));
        }
        if self.base_units.0 <= 0.0 || self.base_price.0 <= 0.0 {
            return fail("base units and base prices must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.season_amplitude) {
            return fail(format!(
                "season amplitude must be in [0, 1), got {}",
                self.season_amplitude
            ));
        }
        if !(0.0..=1.0).contains(&self.stockout_probability) {
            return fail(format!(
                "stockout probability must be in [0, 1], got {}",
                self.stockout_probability
            ));
        }
        match &self.price_process {
            PriceProcess::RandomWalk { volatility, reversion } => {
                if !(*volatility >= 0.0) || !(0.0..=1.0).contains(reversion) {
                    return fail("random walk needs volatility >= 0 and reversion in [0, 1]".into());
                }
            }
            PriceProcess::Schedule(m) => {
                if m.is_empty() || m.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                    return fail("price schedule must be non-empty and positive".into());
                }
            }
        }
        if let DemandLaw::Kinked {
            kink_ratio,
            extra_slope,
        } = &self.law
        {
            check_range("extra_slope", *extra_slope)?;
            if !(*kink_ratio > 0.0) || extra_slope.0 < 0.0 {
                return fail("kinked law needs kink_ratio > 0 and extra_slope >= 0".into());
            }
        }
        Ok(())
    }

    /// Multiplicative seasonal effect for a calendar month, peaking in December.
    pub fn season(&self, month: u32) -> f64 {
        1.0 + self.season_amplitude * (2.0 * PI * (month as f64 - 12.0) / 12.0).cos()
    }
}

/// Ground truth for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemTruth {
    pub item_id: String,
    pub epsilon: f64,
    #[serde(default)]
    pub base_demand: Option<f64>,
    #[serde(default)]
    pub kink_price: Option<f64>,
    #[serde(default)]
    pub epsilon_above: Option<f64>,
}

impl ItemTruth {
    /// Noiseless demand at price `p` up to the scale `A`.
    fn shape(&self, p: f64) -> f64 {
        match (self.kink_price, self.epsilon_above) {
            (Some(k), Some(e2)) if p > k => k.powf(self.epsilon) * (p / k).powf(e2),
            _ => p.powf(self.epsilon),
        }
    }

    /// Noiseless, season-neutral demand at price `p`.
    pub fn demand(&self, p: f64) -> f64 {
        self.base_demand.unwrap_or(1.0) * self.shape(p)
    }

    /// Arc elasticity of the true demand curve between `p` and `p + dp`.
    pub fn arc_elasticity(&self, p: f64, dp: f64) -> Result<f64> {
        check_arc(p, dp)?;
        let (y0, y1) = (self.shape(p), self.shape(p + dp));
        Ok((y1 - y0) / y0 * p / dp)
    }
}

fn check_arc(p: f64, dp: f64) -> Result<()> {
    if !(p > 0.0) || dp == 0.0 || !(p + dp > 0.0) || !dp.is_finite() {
        return Err(Error::Domain(format!(
            "arc elasticity needs p > 0, dp != 0, p + dp > 0; got p={p}, dp={dp}"
        )));
    }
    Ok(())
}

/// Arc elasticity of `D = A · p^ε` between `p` and `p + dp`; `A` cancels.
pub fn true_arc_elasticity(a: f64, epsilon: f64, p: f64, dp: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("demand scale must be positive, got {a}")));
    }
    check_arc(p, dp)?;
    let base = p.powf(epsilon);
    Ok(((p + dp).powf(epsilon) - base) / base * p / dp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub records: Vec<TransactionMonth>,
    pub truth: Vec<ItemTruth>,
}

pub fn generate(world: &SyntheticWorld) -> Result<SyntheticData> {
    generate_with(world, Exec::default())
}

/// Draws every item from its own ChaCha stream, so output does not depend on
/// `exec` or on how many items are generated alongside.
pub fn generate_with(world: &SyntheticWorld, exec: Exec) -> Result<SyntheticData> {
    world.validate()?;
    let per_item = exec.map_range(world.items, |i| generate_item(world, i));
    let mut records = Vec::with_capacity(world.items * world.months);
    let mut truth = Vec::with_capacity(world.items);
    for (recs, t) in per_item {
        records.extend(recs);
        truth.push(t);
    }
    Ok(SyntheticData { records, truth })
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn round_cents(x: f64) -> f64 {
    ((x * 100.0).round() / 100.0).max(0.01)
}

const SIZES: [&str; 3] = ["S", "M", "L"];

fn generate_item(world: &SyntheticWorld, index: usize) -> (Vec<TransactionMonth>, ItemTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(world.seed);
    rng.set_stream(index as u64);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let item_id = format!("item_{index:04}");
    let epsilon = uniform(&mut rng, world.elasticity);
    let base_price = uniform(&mut rng, world.base_price);
    let base_units = uniform(&mut rng, world.base_units);
    let a = base_units * base_price.powf(-epsilon);
    let (kink_price, epsilon_above) = match &world.law {
        DemandLaw::Constant => (None, None),
        DemandLaw::Kinked {
            kink_ratio,
            extra_slope,
        } => (
            Some(kink_ratio * base_price),
            Some(epsilon - uniform(&mut rng, *extra_slope)),
        ),
    };
    let truth = ItemTruth {
        item_id: item_id.clone(),
        epsilon,
        base_demand: Some(a),
        kink_price,
        epsilon_above,
    };

    let brand = format!("brand_{}", rng.random_range(0..world.brands));
    let cat = rng.random_range(0..world.categories);
    let category = format!("cat_{cat}");
    let subcategory = format!("cat_{cat}_sub_{}", rng.random_range(0..3));
    let size = SIZES[rng.random_range(0..SIZES.len())].to_owned();
    let has_competitor = rng.random_bool(0.85);
    let mut days_launched = rng.random_range(30..720) as f64;
    let mut rating_count = rng.random_range(0..200) as f64;

    let mut log_price = base_price.ln();
    let mut records = Vec::with_capacity(world.months);
    for t in 0..world.months {
        let month = world.start.plus(t as i64);
        let raw_price = match &world.price_process {
            PriceProcess::RandomWalk { volatility, reversion } => {
                if t > 0 {
                    log_price += reversion * (base_price.ln() - log_price) + volatility * std_normal.sample(&mut rng);
                }
                log_price.exp()
            }
            PriceProcess::Schedule(m) => base_price * m[t % m.len()],
        };
        let price = round_cents(raw_price);
        let eta = world.noise_sigma * std_normal.sample(&mut rng);
        let mean = truth.demand(price) * world.season(month.month());
        let stockout = world.stockout_probability > 0.0 && rng.random_bool(world.stockout_probability);
        let units = if stockout {
            0.0
        } else {
            (mean * eta.exp()).round_ties_even()
        };
        let inventory = if stockout { 0.0 } else { (2.0 * units).max(10.0) };
        let oos_days = if stockout {
            month.days() as f64
        } else if rng.random_bool(0.2) {
            rng.random_range(1..=5) as f64
        } else {
            0.0
        };
        let competitor_price = if has_competitor {
            Some(round_cents(base_price * (0.1 * std_normal.sample(&mut rng)).exp()))
        } else {
            None
        };
        let mut event_flags = BTreeSet::new();
        if matches!(month.month(), 11 | 12) {
            event_flags.insert(HOLIDAY_EVENT.to_owned());
        }
        if rng.random_bool(0.1) {
            event_flags.insert(PROMO_EVENT.to_owned());
        }
        records.push(TransactionMonth {
            item_id: item_id.clone(),
            year_month: month,
            price,
            units_sold: units,
            inventory,
            oos_days,
            rating_count,
            days_launched,
            competitor_price,
            substitute_available: rng.random_bool(0.3),
            event_flags,
            brand: brand.clone(),
            size: size.clone(),
            category: category.clone(),
            subcategory: subcategory.clone(),
        });
        rating_count += (units * rng.random_range(0.02..0.08)).floor();
        days_launched += month.days() as f64;
    }
    (records, truth)
}

pub fn write_truth<W: Write>(writer: W, truth: &[ItemTruth]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for t in truth {
        w.serialize(t)?;
    }
    w.flush().map_err(|e| Error::io("<truth>", e))?;
    Ok(())
}

/// Reads a truth table. Only `item_id` and `epsilon` are required.
pub fn read_truth<R: Read>(reader: R) -> Result<Vec<ItemTruth>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize().enumerate() {
        out.push(row.map_err(|e| Error::Parse {
            line: i as u64 + 2,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::pairs::build_pairs;
    use crate::data::records::{read_transactions, write_transactions};
    use approx::assert_abs_diff_eq;

    fn noiseless(epsilon: f64, schedule: Vec<f64>) -> SyntheticWorld {
        SyntheticWorld {
            items: 1,
            months: 6,
            base_units: (10.0, 10.0),
            elasticity: (epsilon, epsilon),
            base_price: (10.0, 10.0),
            price_process: PriceProcess::Schedule(schedule),
            season_amplitude: 0.0,
            noise_sigma: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_law_is_exact() {
        let data = generate(&noiseless(-2.0, vec![1.0])).unwrap();
        assert_abs_diff_eq!(data.truth[0].base_demand.unwrap(), 1000.0, epsilon = 1e-9);
        for r in &data.records {
            assert_eq!(r.price, 10.0);
            assert_eq!(r.units_sold, (1000.0f64 / 100.0).round_ties_even());
        }
    }

    #[test]
    fn unit_elasticity_halves_units_when_price_doubles() {
        let data = generate(&SyntheticWorld {
            base_units: (400.0, 400.0),
            ..noiseless(-1.0, vec![1.0, 2.0, 4.0])
        })
        .unwrap();
        let units: Vec<f64> = data.records.iter().map(|r| r.units_sold).collect();
        assert_eq!(&units[..3], &[400.0, 200.0, 100.0]);
    }

    #[test]
    fn same_seed_same_output() {
        let w = SyntheticWorld {
            items: 5,
            stockout_probability: 0.1,
            seed: 3,
            ..Default::default()
        };
        let a = generate_with(&w, Exec::Sequential).unwrap();
        assert_eq!(a, generate_with(&w, Exec::default()).unwrap());
        let b = generate(&SyntheticWorld { seed: 4, ..w }).unwrap();
        assert_ne!(a.records, b.records);
    }

    #[test]
    fn arc_elasticity_examples() {
        let e = true_arc_elasticity(1.0, -2.0, 10.0, 0.1).unwrap();
        assert_abs_diff_eq!(e, -1.9704, epsilon = 1e-4);
        assert_abs_diff_eq!(
            true_arc_elasticity(5.0, -1.0, 10.0, -5.0).unwrap(),
            -2.0,
            epsilon = 1e-12
        );
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let dp = 10f64.powi(-k);
            let gap = (true_arc_elasticity(1.0, -1.0, 10.0, dp).unwrap() + 1.0).abs();
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-6);
        assert!(true_arc_elasticity(1.0, -1.0, 10.0, 0.0).is_err());
        assert!(true_arc_elasticity(1.0, -1.0, 10.0, -10.0).is_err());
        assert!(true_arc_elasticity(1.0, -1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn kinked_truth_is_continuous_and_steeper_above() {
        let t = ItemTruth {
            item_id: "a".into(),
            epsilon: -1.0,
            base_demand: Some(100.0),
            kink_price: Some(5.0),
            epsilon_above: Some(-3.0),
        };
        assert_abs_diff_eq!(t.demand(5.0), t.demand(5.0 + 1e-12), epsilon = 1e-9);
        assert_abs_diff_eq!(t.arc_elasticity(4.0, -0.01).unwrap(), -1.0, epsilon = 1e-2);
        assert_abs_diff_eq!(t.arc_elasticity(6.0, 0.01).unwrap(), -3.0, epsilon = 1e-2);
    }

    #[test]
    fn invalid_worlds_are_rejected() {
        let bad = [
            SyntheticWorld {
                elasticity: (-1.0, 0.0),
                ..Default::default()
            },
            SyntheticWorld {
                noise_sigma: -0.1,
                ..Default::default()
            },
            SyntheticWorld {
                items: 0,
                ..Default::default()
            },
            SyntheticWorld {
                price_process: PriceProcess::Schedule(vec![]),
                ..Default::default()
            },
        ];
        for w in bad {
            assert!(matches!(generate(&w), Err(Error::Config(_))));
        }
    }

    #[test]
    fn realized_arc_elasticity_matches_truth() {
        let w = SyntheticWorld {
            base_units: (1e6, 1e6),
            ..noiseless(-1.5, vec![1.0, 1.1])
        };
        let data = generate(&w).unwrap();
        let (r0, r1) = (&data.records[0], &data.records[1]);
        let realized = (r1.units_sold - r0.units_sold) / r0.units_sold * r0.price / (r1.price - r0.price);
        let truth = data.truth[0].arc_elasticity(r0.price, r1.price - r0.price).unwrap();
        assert_abs_diff_eq!(realized, truth, epsilon = 1e-4);
    }

    #[test]
    fn output_round_trips_through_ingest() {
        let w = SyntheticWorld {
            items: 4,
            stockout_probability: 0.2,
            law: DemandLaw::Kinked {
                kink_ratio: 1.0,
                extra_slope: (1.0, 2.0),
            },
            ..Default::default()
        };
        let data = generate(&w).unwrap();
        let mut buf = Vec::new();
        write_transactions(&mut buf, &data.records).unwrap();
        let back = read_transactions(buf.as_slice()).unwrap();
        assert_eq!(back, data.records);
        let pairs = build_pairs(&back);
        assert!(!pairs.is_empty());
        assert!(pairs.iter().all(|p| p.lag.inventory > 0.0 && p.lead.inventory > 0.0));

        let mut buf = Vec::new();
        write_truth(&mut buf, &data.truth).unwrap();
        assert_eq!(read_truth(buf.as_slice()).unwrap(), data.truth);
        let minimal = read_truth("item_id,epsilon\nx,-1.5\n".as_bytes()).unwrap();
        assert_eq!(minimal[0].epsilon, -1.5);
        assert!(minimal[0].kink_price.is_none());
    }
}
