use ordproto::data::{generate, kfold_split, load_dataset, save_dataset, FineLabel, GenConfig};
use ordproto::trainer::{evaluate, train, TrainConfig};

#[test]
fn csv_round_trip_then_fold_training() {
    let gen = GenConfig { counts: vec![30, 36, 30], ..Default::default() };
    let ds = generate(&gen, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, ds);

    let split = kfold_split(&back.labels(), 3, 4, 0).unwrap();
    let (tr, te) = split.partition(2);
    assert_eq!(tr.len() + te.len(), 96);
    let cfg = TrainConfig { epochs: 2, seeds: vec![0], ..Default::default() };
    let out = train(&cfg, &back.subset(&tr).training_view(), 0).unwrap();
    let ev = evaluate(&out.model, &out.store, &back.subset(&te)).unwrap();
    assert!((0.0..=1.0).contains(&ev.metrics.acc));
    assert_eq!(ev.metrics.n_pos + ev.metrics.n_neg, back.subset(&te).fine_labeled().count());
}

#[test]
fn middle_split_keeps_fine_labels_and_orders_bands() {
    let ds = generate(&GenConfig::default(), 5).unwrap();
    let four = ds.split_middle_class().unwrap();
    assert_eq!(four.num_classes, 4);
    for (a, b) in ds.samples.iter().zip(&four.samples) {
        assert_eq!(a.fine_label, b.fine_label);
        match (a.coarse_label, a.fine_label) {
            (2, Some(FineLabel::Progressive)) => assert_eq!(b.coarse_label, 3),
            (3, _) => assert_eq!(b.coarse_label, 4),
            (c, _) => assert_eq!(b.coarse_label, c),
        }
    }
    // every class-k latent value sits below every class-(k+1) value
    let max_t = |k| four.samples.iter().filter(|s| s.coarse_label == k).map(|s| s.latent_t).fold(f64::MIN, f64::max);
    let min_t = |k| four.samples.iter().filter(|s| s.coarse_label == k).map(|s| s.latent_t).fold(f64::MAX, f64::min);
    for k in 1..4 {
        assert!(max_t(k) <= min_t(k + 1));
    }
}
