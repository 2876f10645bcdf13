mod common {
    pub mod conformance;
    pub mod fixtures;
    pub mod map_oracle;
}

use common::conformance::{fixture_dir, meteor_failures};
use common::fixtures::random_fixture;
use common::map_oracle::oracle_map;
use relcap::metrics::{relational_map, MetricConfig, IOU_THRESHOLDS, METEOR_THRESHOLDS};

#[test]
fn relational_map_matches_exhaustive_oracle() {
    let cfg = MetricConfig::default();
    for seed in 0..50 {
        let (p, g) = random_fixture(seed, 5, 3);
        let fast = relational_map(&p, &g, &cfg).unwrap().map_percent;
        let slow = oracle_map(&p, &g, &METEOR_THRESHOLDS, &IOU_THRESHOLDS);
        assert!((fast - slow).abs() < 1e-9, "seed {seed}: {fast} vs {slow}");
    }
}

#[test]
fn oracle_fixtures_are_not_trivial() {
    let nontrivial = (0..50)
        .filter(|&s| {
            let (p, g) = random_fixture(s, 5, 3);
            let v = relational_map(&p, &g, &MetricConfig::default()).unwrap().map_percent;
            v > 0.0 && v < 100.0
        })
        .count();
    assert!(nontrivial >= 20, "{nontrivial}");
}

#[test]
fn meteor_matches_published_fixtures() {
    let (total, failures) = meteor_failures(&fixture_dir());
    assert_eq!(total, 10);
    assert!(failures.is_empty(), "{failures:#?}");
}
