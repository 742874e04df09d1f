use std::collections::BTreeSet;

use proptest::prelude::*;

use mono_elasticity::data::{
    build_pairs_with, is_valid_pair, read_transactions, write_transactions, TransactionMonth, YearMonth,
};
use mono_elasticity::Exec;

fn record(item: usize, month: YearMonth, price: f64, inventory: f64, units: f64) -> TransactionMonth {
    TransactionMonth {
        item_id: format!("item{item}"),
        year_month: month,
        price,
        units_sold: units,
        inventory,
        oos_days: 0.0,
        rating_count: 3.0,
        days_launched: 100.0,
        competitor_price: Some(price * 1.1),
        substitute_available: item.is_multiple_of(2),
        event_flags: BTreeSet::new(),
        brand: "b".into(),
        size: "m".into(),
        category: "c".into(),
        subcategory: "s".into(),
    }
}

prop_compose! {
    fn history()(
        rows in prop::collection::vec(
            (0usize..4, 0i64..30, 0.5f64..20.0, prop_oneof![Just(0.0), 1.0f64..50.0], 0.0f64..100.0),
            0..60,
        )
    ) -> Vec<TransactionMonth> {
        let start = YearMonth::new(2021, 3).unwrap();
        let mut seen = BTreeSet::new();
        rows.into_iter()
            .filter(|(i, m, ..)| seen.insert((*i, *m)))
            .map(|(i, m, p, inv, u)| record(i, start.plus(m), (p * 100.0).round() / 100.0, inv, u.round()))
            .collect()
    }
}

proptest! {
    #[test]
    fn pairs_match_enumeration(records in history()) {
        let pairs = build_pairs_with(&records, Exec::Sequential);
        let got: Vec<_> = pairs.iter().map(|p| (p.item_id.clone(), p.lag_month, p.lead_month)).collect();
        let mut want = Vec::new();
        for a in &records {
            for b in &records {
                if is_valid_pair(a, b) {
                    want.push((a.item_id.clone(), a.year_month, b.year_month));
                }
            }
        }
        want.sort();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn pair_fields_are_consistent(records in history()) {
        for p in build_pairs_with(&records, Exec::Sequential) {
            prop_assert!((1..=12).contains(&p.month_gap));
            prop_assert_eq!(i64::from(p.month_gap), p.lag_month.months_until(p.lead_month));
            prop_assert!(p.lag.inventory > 0.0 && p.lead.inventory > 0.0);
            let pct = (p.lead.price - p.lag.price) / p.lag.price;
            prop_assert!((p.price_change_pct - pct).abs() <= 1e-12 * pct.abs().max(1.0));
            prop_assert!(p.target.is_some());
        }
    }

    #[test]
    fn execution_mode_does_not_change_pairs(records in history()) {
        prop_assert_eq!(
            build_pairs_with(&records, Exec::Sequential),
            build_pairs_with(&records, Exec::Parallel)
        );
    }

    #[test]
    fn input_order_does_not_change_pairs(records in history()) {
        let mut reversed = records.clone();
        reversed.reverse();
        prop_assert_eq!(
            build_pairs_with(&records, Exec::Sequential),
            build_pairs_with(&reversed, Exec::Sequential)
        );
    }

    #[test]
    fn transactions_round_trip_through_csv(records in history()) {
        let mut buf = Vec::new();
        write_transactions(&mut buf, &records).unwrap();
        let back = read_transactions(buf.as_slice()).unwrap();
        prop_assert_eq!(back, records);
    }
}

#[test]
fn twelve_month_gap_is_kept_and_thirteen_is_not() {
    let jan = YearMonth::new(2023, 1).unwrap();
    let records = vec![
        record(0, jan, 2.0, 5.0, 1.0),
        record(0, jan.plus(12), 2.0, 5.0, 1.0),
        record(1, jan, 2.0, 5.0, 1.0),
        record(1, jan.plus(13), 2.0, 5.0, 1.0),
    ];
    let pairs = build_pairs_with(&records, Exec::default());
    assert_eq!(pairs.len(), 1);
    assert_eq!(pairs[0].item_id, "item0");
    assert_eq!(pairs[0].month_gap, 12);
}
