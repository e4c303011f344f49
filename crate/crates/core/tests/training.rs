use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use patternnet::autodiff::Tape;
use patternnet::geometry::ShapeKind;
use patternnet::patternnet::{PatternNet, PatternNetConfig, Pass, Task};
use patternnet::training::{
    eval_subsets, evaluate, evaluate_iou, fit, linear_mapping_loss, subset_consistency, synthetic_split, total_loss,
    Checkpoint, Dataset, TrainConfig,
};
use patternnet::Tensor;

fn small_config(num_classes: usize) -> PatternNetConfig {
    PatternNetConfig {
        levels: 2,
        k: 8,
        branch_widths: vec![16; 4],
        psi_dim: 64,
        global_dim: 64,
        head_widths: vec![32, 32],
        num_classes,
        ..PatternNetConfig::default()
    }
}

/// Two of the synthetic shape kinds, relabeled 0 and 1.
fn pair(kinds: [ShapeKind; 2], n_per_class: usize, points: usize, seed: u64) -> (Dataset<f32>, Dataset<f32>) {
    let (train, test) = synthetic_split(n_per_class, points, seed).unwrap();
    let keep = |d: Dataset<f64>| {
        let clouds = d
            .clouds
            .into_iter()
            .filter_map(|mut c| {
                let label = kinds.iter().position(|k| k.class_id() == c.class_label.unwrap())?;
                c.class_label = Some(label);
                c.part_labels = None;
                Some(c.cast::<f32>())
            })
            .collect();
        Dataset::new(clouds, kinds.iter().map(|k| k.name().to_string()).collect(), None).unwrap()
    };
    (keep(train), keep(test))
}

fn two_class(n_per_class: usize, points: usize, seed: u64) -> (Dataset<f32>, Dataset<f32>) {
    pair([ShapeKind::Sphere, ShapeKind::Cube], n_per_class, points, seed)
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { epochs, seed, batch_size: 8, ..TrainConfig::default() }
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let (train, _) = two_class(5, 64, 1);
    let cfg = small_config(2);
    let out = fit(&train, None, &cfg, &quick(0, 9)).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.model.params, PatternNet::<f32>::new(cfg, 9).unwrap().params);
}

#[test]
fn separable_pair_is_learned_in_five_epochs() {
    // a curved closed surface against two flat planes
    let (train, _) = pair([ShapeKind::Sphere, ShapeKind::CrossPlanes], 100, 128, 2);
    let cfg = PatternNetConfig::toy(2, 2, 10);
    let tc = TrainConfig { batch_size: 16, ..quick(5, 3) };
    let out = fit(&train, None, &cfg, &tc).unwrap();
    let h = &out.history;
    assert_eq!(h.len(), 5);
    // the running figure sees dropout and augmentation, so it only has to be well above chance
    assert!(h[4].train_acc >= 0.8, "running training accuracy {}", h[4].train_acc);
    let acc = evaluate(&train, &out.model, 0.0, 3).unwrap().overall_accuracy;
    assert!(acc >= 0.95, "training-set accuracy {acc}");
    for r in h {
        assert!((r.total - (r.ce + 0.2 * r.mapping)).abs() <= 1e-12);
    }
}

#[test]
fn lambda_zero_total_is_cross_entropy() {
    let (train, _) = two_class(4, 64, 4);
    let cfg = PatternNetConfig { lambda: 0.0, ..small_config(2) };
    let out = fit(&train, None, &cfg, &quick(2, 4)).unwrap();
    for r in &out.history {
        assert_eq!(r.total, r.ce);
        assert!(r.mapping > 0.0);
    }
}

#[test]
fn loss_recomposes_from_its_parts() {
    let (train, _) = two_class(3, 64, 5);
    let model = PatternNet::<f64>::new(small_config(2), 5).unwrap();
    let clouds: Vec<_> = train.clouds.iter().map(|c| c.cast::<f64>()).collect();
    let refs: Vec<_> = clouds.iter().collect();
    let subsets: Vec<_> = clouds.iter().map(|c| eval_subsets(c, 2, 1).unwrap()).collect();
    let labels = train.labels();
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fwd = model.forward(&mut tape, &vars, &refs, &subsets, Pass::Train(&mut rng)).unwrap();
    let (root, parts) = total_loss(&mut tape, &fwd, &labels, &model.config).unwrap();
    let total = tape.value(root).data()[0];
    assert!((total - (parts.ce + 0.2 * parts.mapping)).abs() <= 1e-12);
    assert_eq!(total, parts.total);
}

#[test]
fn same_seed_training_is_reproducible() {
    let (train, _) = two_class(4, 64, 6);
    let run = || fit(&train, None, &small_config(2), &quick(2, 8)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.history, b.history);
    let c = fit(&train, None, &small_config(2), &quick(2, 9)).unwrap();
    assert_ne!(a.model.params, c.model.params);
}

#[test]
fn evaluation_ignores_dataset_order() {
    let (train, test) = two_class(6, 64, 7);
    let out = fit(&train, None, &small_config(2), &quick(1, 7)).unwrap();
    let mut reversed = test.clone();
    reversed.clouds.reverse();
    let a = evaluate(&test, &out.model, 0.02, 1).unwrap();
    let b = evaluate(&reversed, &out.model, 0.02, 1).unwrap();
    assert_eq!(a.overall_accuracy, b.overall_accuracy);
    assert_eq!(a.class_accuracies, b.class_accuracies);
    assert_eq!(a.mapping_loss_mean.to_bits(), b.mapping_loss_mean.to_bits());
}

#[test]
fn heavy_noise_destroys_a_trained_model() {
    let (train, _) = pair([ShapeKind::Sphere, ShapeKind::CrossPlanes], 100, 128, 2);
    let out = fit(&train, None, &PatternNetConfig::toy(2, 2, 10), &TrainConfig { batch_size: 16, ..quick(5, 3) }).unwrap();
    // noise ten times the cloud radius leaves no shape to recognize
    let clean = evaluate(&train, &out.model, 0.0, 3).unwrap().overall_accuracy;
    let noisy = evaluate(&train, &out.model, 10.0, 3).unwrap().overall_accuracy;
    assert!(noisy <= clean - 0.2, "clean {clean}, noisy {noisy}");
}

#[test]
fn untrained_model_is_near_chance() {
    // train and test halves together hold exactly 25 clouds per class
    let (a, b) = synthetic_split(25, 128, 12).unwrap();
    let balanced = Dataset::new([a.clouds, b.clouds].concat(), a.class_names, a.part_names).unwrap().cast::<f32>();
    for seed in [12, 13, 14] {
        let model = PatternNet::<f32>::new(small_config(4), seed).unwrap();
        let acc = evaluate(&balanced, &model, 0.0, 0).unwrap().overall_accuracy;
        assert!((acc - 0.25).abs() <= 0.1, "seed {seed}: accuracy {acc}");
    }
}

#[test]
fn constant_logits_are_fully_consistent() {
    let (_, test) = two_class(5, 64, 13);
    let mut model = PatternNet::<f32>::new(small_config(2), 13).unwrap();
    let head = model.params.cls_head.as_mut().unwrap();
    head.out.weight = Tensor::zeros(head.out.weight.shape());
    head.out.bias = Tensor::vector(vec![0.0, 1.0]);
    assert_eq!(subset_consistency(&test, &model, 0.0, 0).unwrap(), 1.0);
}

#[test]
fn mapping_loss_examples() {
    // orthonormal columns and φ = 3e₁ + 5e₂: ω = (3, 5), σ = 1
    let mut psi = Tensor::<f64>::zeros(&[6, 2]);
    psi.data_mut()[0] = 1.0;
    psi.data_mut()[3] = 1.0;
    let phi = Tensor::vector(vec![3.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
    assert!((linear_mapping_loss(&psi, &phi, 1e-9).unwrap() - 1.0).abs() <= 1e-6);
    // columns v and 2v with φ = v: minimum-norm ω = (1/5, 2/5), σ = 0.1
    let v = [0.3, -1.0, 2.0, 0.5];
    let psi = Tensor::from_fn(&[4, 2], |i| v[i / 2] * if i % 2 == 0 { 1.0 } else { 2.0 });
    let phi = Tensor::vector(v.to_vec());
    assert!((linear_mapping_loss(&psi, &phi, 1e-9).unwrap() - 0.1).abs() <= 1e-6);
    // identical columns split the weight evenly
    let psi = Tensor::from_fn(&[4, 3], |i| v[i / 3]);
    assert!(linear_mapping_loss(&psi, &phi, 1e-9).unwrap() <= 1e-6);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let (train, test) = two_class(4, 64, 14);
    let tc = quick(1, 14);
    let out = fit(&train, None, &small_config(2), &tc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pnet");
    out.checkpoint(&tc).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.epoch, 1);
    assert_eq!(loaded.train, tc);
    let model = loaded.model::<f32>().unwrap();
    for c in &test.clouds {
        let s = eval_subsets(c, 2, 0).unwrap();
        let a = out.model.predict(&[c], std::slice::from_ref(&s)).unwrap();
        let b = model.predict(&[c], std::slice::from_ref(&s)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn segmentation_training_reports_iou() {
    let (train, test) = synthetic_split(3, 64, 15).unwrap();
    let (train, test) = (train.cast::<f32>(), test.cast::<f32>());
    let cfg = PatternNetConfig {
        task: Task::Segmentation,
        num_parts: train.num_parts(),
        seg_widths: vec![16; 4],
        ..small_config(4)
    };
    let out = fit(&train, None, &cfg, &quick(1, 15)).unwrap();
    let iou = evaluate_iou(&test, &out.model, 0).unwrap();
    assert!((0.0..=1.0).contains(&iou.mean_iou));
    assert_eq!(iou.shape_ious.len(), test.len());
    let report = evaluate(&test, &out.model, 0.0, 0).unwrap();
    assert!(report.mean_iou.is_some());
}

#[test]
fn mismatched_label_space_is_rejected() {
    let (train, _) = two_class(3, 64, 16);
    assert!(fit(&train, None, &small_config(3), &quick(1, 0)).is_err());
}
