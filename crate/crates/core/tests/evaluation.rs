use cfkit::evaluation::{
    aggregate, mae, rmse, run_experiment, tune, Algorithm, Dataset, EvalReport, ExperimentConfig, ModelParams, TuneGrid,
};
use cfkit::factorization::Optimizer;
use cfkit::ratings::build_ratings;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset() -> Dataset {
    let mut t = Vec::new();
    for u in 0..40u32 {
        for i in 0..25u32 {
            if (u * 5 + i * 11) % 3 != 0 {
                t.push((u, i, (1 + (u % 4 + i % 3) % 5) as f64));
            }
        }
    }
    Dataset {
        name: "grid".into(),
        ratings: build_ratings(t).unwrap(),
        features: Some(
            (0..25)
                .map(|i| vec![(i % 2) as f64, (i % 5 == 0) as u8 as f64, 1.0])
                .collect(),
        ),
    }
}

fn config() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        algorithms: Algorithm::ALL.to_vec(),
        retained: vec![0.8, 0.3],
        seeds: vec![0, 1],
        warmup: false,
        ..Default::default()
    };
    c.params.mf.rank = 4;
    c.params.mf.epochs = 15;
    c.params.lsh.num_tables = 4;
    c.params.lsh.bits_per_table = 3;
    c
}

proptest! {
    #[test]
    fn metric_inequalities(pairs in proptest::collection::vec((1.0f64..5.0, 1.0f64..5.0), 1..60)) {
        let (r, m) = (rmse(&pairs).unwrap(), mae(&pairs).unwrap());
        let worst = pairs.iter().map(|(p, a)| (p - a).abs()).fold(0.0, f64::max);
        prop_assert!(m <= r + 1e-12);
        prop_assert!(r <= worst + 1e-12);
        prop_assert!(r <= m * (pairs.len() as f64).sqrt() + 1e-12);
    }
}

#[test]
fn metrics_on_hand_computed_fixtures() {
    let pairs = [(3.0, 1.0), (2.0, 2.0), (4.0, 5.0), (1.0, 1.0)];
    assert!((rmse(&pairs).unwrap() - (5.0f64 / 4.0).sqrt()).abs() < 1e-15);
    assert_eq!(mae(&pairs).unwrap(), 0.75);
    assert!(rmse(&[]).is_err());
    assert!(mae(&[(f64::NAN, 1.0)]).is_err());
}

#[test]
fn a_full_grid_yields_one_valid_row_per_cell_and_round_trips() {
    let report = run_experiment(&dataset(), &config()).unwrap();
    assert_eq!(report.rows.len(), Algorithm::ALL.len() * 2 * 2);
    report.validate().unwrap();
    for row in &report.rows {
        assert!(row.mae <= row.rmse + 1e-12, "{row:?}");
        assert!((row.sparsity + row.retained_fraction - 1.0).abs() < 1e-9);
    }

    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let back = EvalReport::read_csv(csv.as_slice()).unwrap();
    assert_eq!(back.rows, report.rows);
    let json = EvalReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(json.rows, report.rows);

    let agg = aggregate(&report.rows);
    assert_eq!(agg.len(), Algorithm::ALL.len() * 2);
    for a in &agg {
        let members: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.algorithm == a.algorithm && r.retained_fraction == a.retained_fraction)
            .map(|r| r.rmse)
            .collect();
        assert_eq!(a.runs, 2);
        let mean = (members[0] + members[1]) / 2.0;
        let std = (members[0] - members[1]).abs() / 2f64.sqrt();
        assert!((a.rmse_mean - mean).abs() < 1e-12);
        assert!((a.rmse_std - std).abs() < 1e-12);
    }
}

#[test]
fn reruns_reproduce_every_metric() {
    let mut c = config();
    c.algorithms = vec![Algorithm::Mf, Algorithm::Ann, Algorithm::BaselineCf];
    c.seeds = vec![4];
    let a = run_experiment(&dataset(), &c).unwrap();
    let b = run_experiment(&dataset(), &c).unwrap();
    let key = |r: &EvalReport| {
        r.rows
            .iter()
            .map(|x| (x.algorithm.clone(), x.rmse.to_bits(), x.mae.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(key(&a), key(&b));
}

#[test]
fn tuning_rejects_crushing_regularization_on_a_dense_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dense = build_ratings(
        (0..30u32)
            .flat_map(|u| (0..20u32).map(move |i| (u, i)))
            .map(|(u, i)| (u, i, rng.random_range(1..=5) as f64))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let mut base = ModelParams::default();
    base.mf.optimizer = Optimizer::Als;
    base.mf.rank = 2;
    base.mf.epochs = 10;
    let grid = TuneGrid {
        lambda: vec![0.0, 1e6],
        ..TuneGrid::singleton()
    };
    let out = tune(&dense, None, &[Algorithm::Mf], &base, &grid, 3, 0).unwrap();
    assert_eq!(out.table.len(), 2);
    let (zero, huge) = (&out.table[0], &out.table[1]);
    assert_eq!((zero.lambda, huge.lambda), (Some(0.0), Some(1e6)));
    assert!(zero.mean_rmse < huge.mean_rmse, "{zero:?} vs {huge:?}");
    assert_eq!(out.best.mf.lambda, 0.0);
}
