use proptest::prelude::*;
use tsal::io::{load_precomputed, parse_series, write_features, write_series};
use tsal_core::features::extract;
use tsal_core::ingest::TimeSeries;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn series_csv_round_trips_exactly(
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 1..80),
        start in -1_000_000i64..1_000_000,
        steps in prop::collection::vec(0i64..500, 80),
        labels in prop::collection::vec(0u8..=1, 80),
    ) {
        let n = values.len();
        let timestamps: Vec<i64> = steps[..n].iter().scan(start, |t, s| { *t += s; Some(*t) }).collect();
        let series = TimeSeries::new("d", "s-1", timestamps, values, labels[..n].to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s-1.csv");
        write_series(&series, &path).unwrap();
        let back = parse_series(&path, "d").unwrap();
        prop_assert_eq!(back, series);
    }
}

#[test]
fn feature_files_round_trip() {
    let values: Vec<f64> = (0..120).map(|i| (i as f64 * 0.3).sin() + if i % 37 == 0 { 4.0 } else { 0.0 }).collect();
    let labels: Vec<u8> = (0..120).map(|i| u8::from(i % 37 == 0)).collect();
    let series = TimeSeries::new("d", "s", (0..120).collect(), values, labels).unwrap();
    let fm = extract(&series, 16).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_features(&fm, &path).unwrap();
    let back = load_precomputed(&path).unwrap();
    assert_eq!(back.refs, fm.refs);
    assert_eq!(back.labels, fm.labels);
    assert_eq!(back.columns, fm.columns);
    assert_eq!(back.data, fm.data);
}
