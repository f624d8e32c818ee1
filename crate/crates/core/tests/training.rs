use disco::experiment::{eval_table_csv, read_report, reward_curve_csv, write_run, EvalRow};
use disco::trainer::RewardPoint;
use disco::*;

fn quartile_means(curve: &[f64]) -> (f64, f64) {
    let q = curve.len() / 4;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    (mean(&curve[..q]), mean(&curve[curve.len() - q..]))
}

#[test]
fn naive_reward_rises_on_default_env() {
    let config = TrainConfig {
        group_size: 4,
        seed: 1,
        ..TrainConfig::default().with_method(Method::Naive)
    };
    let report = run_training(&config).unwrap();
    let curve: Vec<f64> = report.reward_curve.iter().map(|p| p.mean_reward).collect();
    assert!(curve.iter().all(|r| (0.0..=1.0).contains(r)));
    let (first, last) = quartile_means(&curve);
    assert!(last > first, "first quartile {first}, last {last}");
}

#[test]
fn report_invariants_and_csv_round_trip() {
    let config = TrainConfig {
        group_size: 4,
        seed: 2,
        eval_every: 8,
        mixture: MixtureSpec::preset(1000, MixturePreset::Heavy("arc".into())),
        ..TrainConfig::default().with_method(Method::Disco)
    };
    let report = run_training(&config).unwrap();
    for c in &report.eval_table {
        assert!(c.accuracy.values().all(|a| (0.0..=100.0).contains(a)));
        let mean = c.accuracy.values().sum::<f64>() / c.accuracy.len() as f64;
        assert!((c.average - mean).abs() <= 1e-9);
    }

    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), &report).unwrap();
    assert_eq!(read_report(dir.path()).unwrap(), report);

    let curve: Vec<RewardPoint> = csv::Reader::from_reader(reward_curve_csv(&report).unwrap().as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(curve, report.reward_curve);

    let rows: Vec<EvalRow> = csv::Reader::from_reader(eval_table_csv(&report).unwrap().as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(rows.len(), report.eval_table.len() * 4);
    for row in rows {
        let c = report
            .eval_table
            .iter()
            .find(|c| c.checkpoint == row.checkpoint)
            .unwrap();
        assert_eq!(c.accuracy[&row.domain].to_bits(), row.accuracy.to_bits());
    }
}

#[test]
fn missing_report_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_report(dir.path()), Err(Error::MissingReport(_))));
    assert!(matches!(
        export_report(dir.path(), Format::Csv, dir.path()),
        Err(Error::MissingReport(_))
    ));
}
