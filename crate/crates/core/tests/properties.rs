use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fgtt::autodiff::{Tape, Tensor};
use fgtt::baselines::{Booster, BoosterConfig, ForestConfig, Node, RandomForest};
use fgtt::data::encode::column_meta;
use fgtt::data::{encode, fit_stats, impute_default, stratified_split, FeatureKind, FeatureSchema, NUM_CLASSES};
use fgtt::hpo::{optimize, Dim, SearchSpace};
use fgtt::model::{aggregate_attention, partition_columns, FgttConfig, FgttModel};
use fgtt::report::{permutation_importance, read_matrix_csv, write_matrix_csv};
use fgtt::synth::{generate, GeneratorConfig};
use fgtt::train::{compute_metrics, focal_loss, FocalLossParams};

fn labels(max_len: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..NUM_CLASSES, 1..max_len)
}

fn tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

fn small_model(heads: usize, per_head: usize, layers: usize, seed: u64) -> FgttModel {
    let schema = FeatureSchema::crash_default();
    let p = partition_columns(&column_meta(&schema), &schema).unwrap();
    let cfg = FgttConfig {
        hidden_dim: heads * per_head,
        ffn_dim: 6,
        n_heads: heads,
        n_layers: layers,
        dropout_rate: 0.1,
        projector_hidden: 5,
        seed,
    };
    FgttModel::new(cfg, p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_self_consistent(pairs in prop::collection::vec((0..NUM_CLASSES, 0..NUM_CLASSES), 1..200)) {
        let (pred, actual): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = compute_metrics(&pred, &actual).unwrap();
        prop_assert_eq!(m.confusion.iter().flatten().sum::<usize>(), actual.len());
        let mut wf1 = 0.0;
        for (c, cm) in m.per_class.iter().enumerate() {
            let h = if cm.precision + cm.recall == 0.0 { 0.0 } else { 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall) };
            prop_assert!((cm.f1 - h).abs() < 1e-12);
            prop_assert_eq!(cm.support, actual.iter().filter(|&&a| a == c).count());
            prop_assert_eq!(cm.accuracy, cm.recall);
            wf1 += cm.f1 * cm.support as f64 / actual.len() as f64;
        }
        prop_assert!((m.weighted_f1 - wf1).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&m.weighted_f1));
    }

    #[test]
    fn split_partitions_and_stratifies(
        mut y in labels(400),
        a in 0.2f64..0.9,
        b in 0.05f64..0.5,
        seed in any::<u64>(),
    ) {
        // each class needs a row for every part
        for _ in 0..3 {
            y.extend(0..NUM_CLASSES);
        }
        let b = b * (1.0 - a);
        let r = (a, b, 1.0 - a - b);
        let s = stratified_split(&y, r, seed).unwrap();
        let mut seen = vec![0u8; y.len()];
        for &i in s.train.iter().chain(&s.validation).chain(&s.test) {
            seen[i] += 1;
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
        for c in 0..NUM_CLASSES {
            let n_c = y.iter().filter(|&&v| v == c).count() as f64;
            for (part, frac) in [(&s.train, r.0), (&s.validation, r.1), (&s.test, r.2)] {
                let have = part.iter().filter(|&&i| y[i] == c).count() as f64;
                prop_assert!((have - frac * n_c).abs() <= 1.0, "class {c}: {have} vs {}", frac * n_c);
            }
        }
        prop_assert_eq!(stratified_split(&y, r, seed).unwrap(), s);
    }

    #[test]
    fn focal_loss_is_nonnegative_and_reduces_to_cross_entropy(
        logits in prop::collection::vec(-6.0f64..6.0, 3..60),
        gamma in 0.0f64..5.0,
        seed in any::<u64>(),
    ) {
        let b = logits.len() / NUM_CLASSES;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![b, NUM_CLASSES], logits[..b * NUM_CLASSES].to_vec()).unwrap());
        let p = tape.softmax_rows(x);
        let probs = tape.value(p).clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..NUM_CLASSES)).collect();
        let ce = focal_loss(&probs, &y, &FocalLossParams::cross_entropy(NUM_CLASSES)).unwrap();
        let oracle = -(0..b).map(|i| probs.get2(i, y[i]).ln()).sum::<f64>() / b as f64;
        prop_assert!((ce - oracle).abs() < 1e-12);
        let focal = FocalLossParams { gamma, alpha: vec![1.0; NUM_CLASSES] };
        let f = focal_loss(&probs, &y, &focal).unwrap();
        prop_assert!(f >= 0.0 && f <= ce + 1e-12);
    }

    #[test]
    fn heatmap_csv_round_trips(values in prop::collection::vec(0.0f64..1.0, 9 * 9)) {
        let labels: Vec<String> = (0..9).map(|i| format!("g{i}")).collect();
        let mut buf = Vec::new();
        write_matrix_csv(&values, &labels, &mut buf).unwrap();
        let (l, m) = read_matrix_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(l, labels);
        for (a, b) in values.iter().zip(&m) {
            prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-300));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_rows_are_distributions(
        heads in prop::sample::select(vec![1usize, 2, 4]),
        per_head in 1usize..4,
        layers in 1usize..3,
        batch in 1usize..6,
        seed in any::<u64>(),
    ) {
        let m = small_model(heads, per_head, layers, seed);
        let x = tensor(batch, m.input_width(), seed ^ 1);
        let (probs, rec) = m.predict_with_attention(&x).unwrap();
        prop_assert!(probs.all_finite());
        let rec = rec.unwrap();
        prop_assert_eq!((rec.batch(), rec.heads(), rec.seq()), (batch, heads, 9));
        for row in rec.weights().chunks(rec.seq()) {
            prop_assert!(row.iter().all(|&w| w >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for i in 0..batch {
            let s = rec.cls_scores(i);
            prop_assert_eq!(s.len(), 8);
            prop_assert!(s.iter().sum::<f64>() <= 1.0 + 1e-9);
        }
        let y = vec![0; batch];
        let agg = aggregate_attention(&rec, &y, 0).unwrap();
        prop_assert_eq!(agg.count, batch);
        prop_assert_eq!(agg.pair_heatmap.len(), 81);
    }

    #[test]
    fn group_order_does_not_change_predictions(
        order in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(),
        seed in any::<u64>(),
    ) {
        let m = small_model(2, 2, 2, seed);
        let x = tensor(3, m.input_width(), seed);
        let a = m.predict_proba(&x).unwrap();
        let b = m.with_group_order(&order).unwrap().predict_proba(&x).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn encoded_rows_have_one_hot_blocks(n in 30usize..80, seed in any::<u64>()) {
        let schema = FeatureSchema::crash_default();
        let cfg = GeneratorConfig { n_rows: n, seed, ..GeneratorConfig::default() };
        let (raw, _) = generate(&cfg, &schema).unwrap();
        let data = impute_default(&raw).unwrap();
        prop_assert_eq!(data.missing_count(), 0);
        let train: Vec<usize> = (0..n).collect();
        let Ok(stats) = fit_stats(&data, &train) else {
            // tiny samples can leave a numeric column constant
            return Ok(());
        };
        let enc = encode(&data, &stats).unwrap();
        let width: usize = schema
            .features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Numeric => 1,
                FeatureKind::Categorical => f.categories.len(),
            })
            .sum();
        prop_assert_eq!(enc.cols(), width);
        for (_, cols) in enc.feature_blocks() {
            if cols.len() < 2 {
                continue;
            }
            for i in 0..enc.rows() {
                let row = enc.row(i);
                prop_assert_eq!(cols.iter().filter(|&&c| row[c] == 1.0).count(), 1);
                prop_assert!(cols.iter().all(|&c| row[c] == 0.0 || row[c] == 1.0));
            }
        }
        // training-only standardization leaves numeric columns centred
        for (j, meta) in enc.column_meta.iter().enumerate() {
            if meta.category.is_none() {
                let mean = (0..n).map(|i| enc.row(i)[j]).sum::<f64>() / n as f64;
                prop_assert!(mean.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn forest_trees_are_well_formed_and_seeded(
        seed in any::<u64>(),
        depth in prop::option::of(1usize..6),
        mss in 2usize..6,
    ) {
        let x = tensor(80, 5, seed);
        let y: Vec<usize> = (0..80).map(|i| ((x.row(i)[0] > 0.0) as usize) + ((x.row(i)[1] > 1.0) as usize)).collect();
        let cfg = ForestConfig { n_estimators: 4, max_depth: depth, min_samples_split: mss, seed, ..ForestConfig::default() };
        let f = RandomForest::fit(&x, &y, &cfg).unwrap();
        for t in &f.trees {
            if let Some(d) = depth {
                prop_assert!(t.depth() <= d);
            }
            for n in &t.nodes {
                match n {
                    Node::Split { left, right, .. } => prop_assert!(*left < t.nodes.len() && *right < t.nodes.len()),
                    Node::Leaf { value } => prop_assert!((value.iter().sum::<f64>() - 1.0).abs() < 1e-12),
                }
            }
        }
        prop_assert_eq!(RandomForest::fit(&x, &y, &cfg).unwrap(), f);
    }

    #[test]
    fn booster_is_deterministic_and_bounded(seed in any::<u64>(), depth in 1usize..4, subsample in 0.5f64..1.0) {
        let x = tensor(60, 4, seed);
        let mut y: Vec<usize> = (0..60).map(|i| (x.row(i)[2] > 0.0) as usize * 2).collect();
        y[0] = 1;
        let cfg = BoosterConfig { n_estimators: 5, max_depth: depth, subsample, seed, ..BoosterConfig::default() };
        let b = Booster::fit(&x, &y, &cfg).unwrap();
        prop_assert!(b.rounds.iter().flatten().all(|t| t.depth() <= depth));
        let p = b.predict_proba(&x).unwrap();
        for i in 0..p.rows() {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(Booster::fit(&x, &y, &cfg).unwrap(), b);
    }

    #[test]
    fn importance_leaves_input_untouched(seed in any::<u64>(), repeats in 1usize..4) {
        let x = tensor(40, 4, seed);
        let y: Vec<usize> = (0..40).map(|i| (x.row(i)[0] > 0.0) as usize).collect();
        let before = x.clone();
        let rule = |t: &Tensor| -> fgtt::Result<Vec<usize>> {
            Ok((0..t.rows()).map(|i| (t.row(i)[0] > 0.0) as usize).collect())
        };
        let features: Vec<(String, Vec<usize>)> = (0..4).map(|c| (format!("f{c}"), vec![c])).collect();
        let groups = vec![("a".to_string(), vec![0, 1]), ("b".to_string(), vec![2, 3])];
        let r = permutation_importance(&rule, &x, &y, &features, &groups, repeats, seed).unwrap();
        prop_assert_eq!(&x, &before);
        let unused: Vec<_> = r.features.iter().filter(|s| s.name != "f0").collect();
        prop_assert!(unused.iter().all(|s| s.mean_drop == 0.0));
    }
}

fn dim_strategy(i: usize) -> BoxedStrategy<Dim> {
    let name = format!("d{i}");
    prop_oneof![
        (-5.0f64..5.0, 0.1f64..10.0).prop_map({
            let name = name.clone();
            move |(lo, w)| Dim::continuous(&name, lo, lo + w, false)
        }),
        (0.001f64..1.0, 2.0f64..100.0).prop_map({
            let name = name.clone();
            move |(lo, f)| Dim::continuous(&name, lo, lo * f, true)
        }),
        (2usize..5).prop_map({
            let name = name.clone();
            move |k| {
                let opts: Vec<String> = (0..k).map(|o| format!("o{o}")).collect();
                let refs: Vec<&str> = opts.iter().map(String::as_str).collect();
                Dim::categorical(&name, &refs)
            }
        }),
        prop::collection::btree_set(-20i32..20, 2..5).prop_map(move |s| {
            let opts: Vec<f64> = s.into_iter().map(f64::from).collect();
            Dim::ordinal(&name, &opts)
        }),
    ]
    .boxed()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn optimize_stays_inside_random_spaces(
        dims in (1usize..4).prop_flat_map(|n| (0..n).map(dim_strategy).collect::<Vec<_>>()),
        seed in any::<u64>(),
        fail_every in 0usize..5,
    ) {
        let space = SearchSpace::new(dims, vec![]).unwrap();
        let mut calls = 0;
        let r = optimize(
            |p| {
                calls += 1;
                if fail_every > 0 && calls % (fail_every + 3) == 0 {
                    return f64::NAN;
                }
                space.encode(p).iter().enumerate().map(|(i, v)| -(v - 0.3 * i as f64).powi(2)).sum()
            },
            &space,
            14,
            4,
            seed,
        )
        .unwrap();
        prop_assert_eq!(r.trials.len(), 14);
        prop_assert!(r.trials.iter().all(|t| space.contains(&t.point)));
        prop_assert_eq!(r.history().len(), 14 - r.n_failed());
        let trace = r.incumbent_trace();
        prop_assert!(trace.windows(2).all(|w| w[1] >= w[0]));
    }
}
