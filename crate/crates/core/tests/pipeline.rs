use std::fs;
use std::sync::OnceLock;

use proptest::prelude::*;

use mono_elasticity::data::{build_inference_set, ingest, write_transactions, DatasetSplit, SplitPolicy};
use mono_elasticity::elasticity::{arc_elasticity, evaluate_elasticities, ElasticityQuery, EntryStatus};
use mono_elasticity::model::{load_model, save_model, ArchitectureConfig, DemandModel};
use mono_elasticity::pipeline::{build_dataset, fit_model};
use mono_elasticity::synthetic::{generate, true_arc_elasticity, SyntheticData, SyntheticWorld};
use mono_elasticity::trainer::TrainConfig;
use mono_elasticity::{Error, Exec};

struct Fixture {
    synthetic: SyntheticData,
    data: DatasetSplit,
    model: DemandModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let world = SyntheticWorld {
            items: 12,
            months: 16,
            seed: 4,
            ..SyntheticWorld::default()
        };
        let synthetic = generate(&world).unwrap();
        let data = build_dataset(&synthetic.records, &SplitPolicy::default(), 4, Exec::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let (model, _) = fit_model(&data, &ArchitectureConfig::default(), &cfg).unwrap();
        Fixture { synthetic, data, model }
    })
}

#[test]
fn artifacts_survive_the_filesystem() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();

    let csv = dir.path().join("tx.csv");
    write_transactions(fs::File::create(&csv).unwrap(), &f.synthetic.records).unwrap();
    assert_eq!(ingest(&csv).unwrap(), f.synthetic.records);

    f.data.save(dir.path()).unwrap();
    let data = DatasetSplit::load(dir.path()).unwrap();
    assert_eq!(data, f.data);

    let path = dir.path().join("model.mdnm");
    save_model(&f.model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    let a = f
        .model
        .predict_batch(&data.out_of_time, None, Exec::Sequential)
        .unwrap();
    let b = loaded.predict_batch(&data.out_of_time, None, Exec::Parallel).unwrap();
    assert_eq!(a, b);
    loaded.ensure_dataset(&data.manifest.schema_hash).unwrap();
}

#[test]
fn flipped_byte_is_rejected() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.mdnm");
    save_model(&f.model, &path).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))));
}

#[test]
fn foreign_dataset_hash_is_a_mismatch() {
    let f = fixture();
    assert!(matches!(
        f.model.ensure_dataset("0000000000000000"),
        Err(Error::SchemaMismatch { .. })
    ));
}

#[test]
fn constant_law_arc_elasticity_has_closed_form() {
    // ((1 + r)^ε - 1) / r for a relative change r.
    for (eps, r) in [(-2.0, -0.05), (-0.5, 0.1), (-1.0, -0.2)] {
        let got = true_arc_elasticity(10.0, eps, 4.0, 4.0 * r).unwrap();
        let want = ((1.0f64 + r).powf(eps) - 1.0) / r;
        assert!((got - want).abs() < 1e-12, "{eps} {r}: {got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reported_elasticities_are_never_positive(rel in -0.5f64..0.5, pick in 0usize..1000) {
        prop_assume!(rel.abs() > 1e-3);
        let f = fixture();
        let rows = &f.data.out_of_time;
        let row = &rows[pick % rows.len()];
        let q = ElasticityQuery::relative(row, rel);
        let report = evaluate_elasticities(&f.model, std::slice::from_ref(row), &[q], Exec::default()).unwrap();
        let e = &report.entries[0];
        match &e.status {
            EntryStatus::Valid => prop_assert!(e.elasticity.unwrap() <= 0.0),
            other => prop_assert!(matches!(other, EntryStatus::Failed(_))),
        }
    }

    #[test]
    fn arc_elasticity_sign_follows_demand_response(y in 1.0f64..100.0, k in 0.0f64..2.0, p in 0.5f64..20.0, r in 0.01f64..0.5) {
        let down = arc_elasticity(y, y * (1.0 + k * r), p, -p * r).unwrap();
        prop_assert!(down <= 0.0);
        prop_assert!((down + k).abs() < 1e-9);
    }
}

#[test]
fn inference_rows_cover_every_stocked_item() {
    let f = fixture();
    let last = f.synthetic.records.iter().map(|r| r.year_month).max().unwrap();
    let set = build_inference_set(&f.synthetic.records, last).unwrap();
    assert_eq!(set.rows.len() + set.skipped.len(), f.synthetic.truth.len());
    assert!(set.rows.iter().all(|r| r.month_gap == 1 && r.lead_month == last.next()));
}
