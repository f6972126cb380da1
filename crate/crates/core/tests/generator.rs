use std::sync::OnceLock;

use fgtt::data::{Column, Dataset, FeatureSchema, NUM_CLASSES};
use fgtt::synth::{bayes_metrics, generate, marginal_report, planted_mechanism, GeneratorConfig, NUMERIC_TARGETS};
use fgtt::train::compute_metrics;

fn large() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = GeneratorConfig {
            n_rows: 100_000,
            seed: 17,
            ..GeneratorConfig::default()
        };
        generate(&cfg, &FeatureSchema::crash_default()).unwrap().0
    })
}

fn categorical<'a>(d: &'a Dataset, name: &str) -> &'a [Option<usize>] {
    match d.column(name) {
        Some(Column::Categorical(v)) => v,
        _ => panic!("{name}"),
    }
}

#[test]
fn maneuver_frequency_matches_published_share() {
    let d = large();
    let spec = d.schema().feature("Veh1_maneuver").unwrap();
    let lanes = spec.category_index("Changing Lanes/Passing").unwrap();
    let v = categorical(d, "Veh1_maneuver");
    let share = v.iter().filter(|c| **c == Some(lanes)).count() as f64 / v.len() as f64;
    assert!((share - 0.2769).abs() <= 0.01, "{share}");
}

#[test]
fn hourly_volume_mean_and_range() {
    let d = large();
    let Some(Column::Numeric(v)) = d.column("Hourly_volume") else {
        panic!()
    };
    let obs: Vec<f64> = v.iter().flatten().copied().collect();
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    assert!((mean - 4370.0).abs() <= 50.0, "{mean}");
    assert!(obs.iter().all(|x| (10.0..=10688.0).contains(x)));
}

#[test]
fn every_numeric_feature_stays_in_its_published_range() {
    let d = large();
    let rows = marginal_report(d).unwrap();
    for t in NUMERIC_TARGETS.iter() {
        let stat = |s: &str| {
            rows.iter()
                .find(|r| r.feature == t.name && r.statistic == s)
                .unwrap_or_else(|| panic!("{} {s}", t.name))
                .value
        };
        assert!(stat("min") >= t.min && stat("max") <= t.max, "{}", t.name);
        assert!(
            (stat("mean") - t.mean).abs() <= 0.05 * t.std,
            "{} mean {}",
            t.name,
            stat("mean")
        );
    }
}

#[test]
fn label_mix_follows_config() {
    let d = large();
    for (c, want) in [0.58, 0.29, 0.13].iter().enumerate() {
        let share = d.labels().iter().filter(|&&y| y == c).count() as f64 / d.n_rows() as f64;
        assert!((share - want).abs() < 0.01, "class {c}: {share}");
    }
}

#[test]
fn empirical_bayes_rule_matches_the_ceiling() {
    let cfg = GeneratorConfig {
        n_rows: 100_000,
        seed: 17,
        ..GeneratorConfig::default()
    };
    let (d, manifest) = generate(&cfg, &FeatureSchema::crash_default()).unwrap();
    let mech = planted_mechanism(&cfg);
    let m = bayes_metrics(&mech, &d).unwrap();
    assert!((m.accuracy - manifest.bayes_ceiling.accuracy).abs() < 0.01);
    assert!((m.weighted_f1 - manifest.bayes_ceiling.weighted_f1).abs() < 0.01);
}

#[test]
fn zero_signal_makes_majority_optimal() {
    let cfg = GeneratorConfig {
        n_rows: 20_000,
        seed: 3,
        signal_strength: 0.0,
        ..GeneratorConfig::default()
    };
    let (d, manifest) = generate(&cfg, &FeatureSchema::crash_default()).unwrap();
    let majority = compute_metrics(&vec![0; d.n_rows()], d.labels()).unwrap();
    assert!((manifest.bayes_ceiling.accuracy - 0.58).abs() < 1e-6);
    assert!((majority.accuracy - 0.58).abs() < 0.015);

    // the planted features carry no information about the label
    let v = categorical(&d, "Veh1_maneuver");
    let k = d.schema().feature("Veh1_maneuver").unwrap().categories.len();
    let mut joint = vec![vec![0.0; NUM_CLASSES]; k];
    for (c, &y) in v.iter().zip(d.labels()) {
        joint[c.unwrap()][y] += 1.0 / d.n_rows() as f64;
    }
    let px: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let py: Vec<f64> = (0..NUM_CLASSES).map(|y| joint.iter().map(|r| r[y]).sum()).collect();
    let mut mi = 0.0;
    for x in 0..k {
        for y in 0..NUM_CLASSES {
            if joint[x][y] > 0.0 {
                mi += joint[x][y] * (joint[x][y] / (px[x] * py[y])).ln();
            }
        }
    }
    assert!(mi < 0.002, "{mi}");
}
