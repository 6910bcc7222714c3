use epd_core::datamodel::{compute_frequency_table, generate_synthetic, partition_predicates, GeneratorConfig, SubsetMode};
use epd_core::epd::{DecoderMode, EpdHyper, Objective};
use epd_core::model::{EpdModel, ModelConfig};
use epd_core::train::{train, Objectives, OptimizerConfig};

fn setup(gen: &GeneratorConfig, cfg: ModelConfig, hyper: EpdHyper, seed: u64) -> (EpdModel, Objectives, Vec<epd_core::datamodel::ImageRecord>, Vec<epd_core::datamodel::ImageRecord>) {
    let (train_ds, test_ds) = generate_synthetic(gen, seed).unwrap();
    let n = train_ds.header.num_predicate_classes;
    let freq = compute_frequency_table(&train_ds.images, n);
    let positives = n - 1;
    let card = (positives / 10, positives / 5, positives - positives / 10 - positives / 5);
    let part = partition_predicates(&freq, card).unwrap();
    let obj = Objectives::new(hyper, &part, SubsetMode::Nested, n);
    let model = EpdModel::new(ModelConfig { num_predicate_classes: n, ..cfg }, seed);
    (model, obj, train_ds.images, test_ds.images)
}

#[test]
fn object_loss_falls_below_half_log_classes_within_five_epochs() {
    let gen = GeneratorConfig {
        num_test_images: 1,
        // unit-variance coordinates, as a detector backbone would emit
        feature_scale: (GeneratorConfig::default().d_v as f32).sqrt(),
        ..GeneratorConfig::default()
    };
    let (mut model, obj, images, _) = setup(&gen, ModelConfig::default(), EpdHyper::default(), 4);
    let opt = OptimizerConfig {
        epochs: 5,
        momentum: 0.9,
        ..OptimizerConfig::default()
    };
    let logs = train(&mut model, &images, &obj, &opt, 5, |_, _| true).unwrap();
    let target = (gen.num_object_classes as f32).ln() / 2.0;
    let objs: Vec<f32> = logs.iter().map(|l| l.l_obj).collect();
    println!("object CE per epoch {objs:?} (target {target})");
    assert!(objs.iter().any(|&l| l < target), "{objs:?}");
}

#[test]
fn noiseless_data_is_fit_almost_perfectly() {
    let gen = GeneratorConfig {
        num_images: 600,
        num_test_images: 1,
        num_predicates: 10,
        noise: 0.0,
        object_noise: 0.0,
        similar_pairs: vec![],
        ..GeneratorConfig::default()
    };
    let cfg = ModelConfig {
        decoder_mode: DecoderMode::Single,
        ..ModelConfig::default()
    };
    let hyper = EpdHyper {
        objective: Objective::PlainCe,
        ..EpdHyper::default()
    };
    let (mut model, obj, images, _) = setup(&gen, cfg, hyper, 8);
    let opt = OptimizerConfig {
        epochs: 15,
        ..OptimizerConfig::default()
    };
    train(&mut model, &images, &obj, &opt, 9, |_, _| true).unwrap();
    let scores = model.score_images(&images, hyper.lambda, 64).unwrap();
    let (mut right, mut total) = (0, 0);
    for (img, pairs) in images.iter().zip(&scores) {
        for (rel, p) in img.relations.iter().zip(pairs) {
            if rel.predicate == 0 {
                continue;
            }
            let best = (1..p.probs.len()).max_by(|&a, &b| p.probs[a].total_cmp(&p.probs[b])).unwrap();
            right += usize::from(best == rel.predicate);
            total += 1;
        }
    }
    let acc = right as f64 / total as f64;
    println!("noiseless accuracy {acc:.4} over {total} relations");
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn total_loss_halves_over_a_default_run() {
    let gen = GeneratorConfig::default();
    let (mut model, obj, images, _) = setup(&gen, ModelConfig::default(), EpdHyper::default(), 1);
    let logs = train(&mut model, &images, &obj, &OptimizerConfig::default(), 2, |_, _| true).unwrap();
    let (first, last) = (logs[0].l_total, logs.last().unwrap().l_total);
    println!("l_total epoch 1 {first:.4}, epoch {} {last:.4}", logs.len());
    assert_eq!(logs.len(), 30);
    assert!(last <= 0.5 * first, "{first} -> {last}");
}

#[test]
fn same_seed_gives_identical_logs_and_parameters() {
    let gen = GeneratorConfig {
        num_images: 50,
        num_test_images: 1,
        ..GeneratorConfig::default()
    };
    let opt = OptimizerConfig {
        epochs: 2,
        ..OptimizerConfig::default()
    };
    let run = || {
        let (mut model, obj, images, _) = setup(&gen, ModelConfig::default(), EpdHyper::default(), 6);
        let logs = train(&mut model, &images, &obj, &opt, 7, |_, _| true).unwrap();
        (serde_json::to_string(&logs).unwrap(), model)
    };
    let (la, ma) = run();
    let (lb, mb) = run();
    assert_eq!(la, lb);
    assert_eq!(ma.store.entries(), mb.store.entries());
}

#[test]
fn zero_epochs_leave_the_initialization() {
    let gen = GeneratorConfig {
        num_images: 20,
        num_test_images: 1,
        ..GeneratorConfig::default()
    };
    let (mut model, obj, images, _) = setup(&gen, ModelConfig::default(), EpdHyper::default(), 3);
    let init = model.clone();
    let opt = OptimizerConfig {
        epochs: 0,
        ..OptimizerConfig::default()
    };
    assert!(train(&mut model, &images, &obj, &opt, 1, |_, _| true).unwrap().is_empty());
    assert_eq!(model.store.entries(), init.store.entries());
}
