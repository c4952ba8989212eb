use xtsformer::events::{generate_multiscale, MultiscaleConfig, NormMode};
use xtsformer::hierarchy::ScaleHierarchy;
use xtsformer::model::{Checkpoint, ModelConfig};
use xtsformer::train::{evaluate, train, Dataset, TrainConfig};

fn small_run(cfg: ModelConfig) -> (Dataset, xtsformer::train::TrainResult) {
    let seqs = generate_multiscale(&MultiscaleConfig {
        num_seqs: 30,
        bursts_per_seq: 4,
        burst_size: 4,
        num_types: 3,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let data = Dataset::from_sequences(&seqs, 6, NormMode::ShiftAndScale, 0).unwrap();
    let tc = TrainConfig {
        epochs: 3,
        window: 6,
        learning_rate: 3e-3,
        model: ModelConfig {
            num_types: data.num_types,
            ..cfg
        },
        ..Default::default()
    };
    let result = train(&data, &tc).unwrap();
    (data, result)
}

#[test]
fn checkpoint_preserves_predictions() {
    let (data, result) = small_run(ModelConfig {
        d_model: 8,
        scales: 2,
        layer_norm: true,
        ..Default::default()
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    Checkpoint::from_model(&result.model, Some(data.norm.clone()), None)
        .save(&path)
        .unwrap();
    let restored = Checkpoint::load(&path).unwrap().to_model().unwrap();
    for ex in data.test.iter().take(10) {
        let h = &ex.history;
        let a = result.model.predict(&h.times, &h.types).unwrap();
        let b = restored.predict(&h.times, &h.types).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(
        evaluate(&result.model, &data.test, &data.norm).unwrap(),
        evaluate(&restored, &data.test, &data.norm).unwrap()
    );
}

#[test]
fn training_lowers_loss() {
    let (_, result) = small_run(ModelConfig {
        d_model: 8,
        scales: 2,
        ..Default::default()
    });
    let loss: Vec<f64> = result.curve.iter().map(|e| e.train_loss).collect();
    assert_eq!(loss.len(), 3);
    assert!(result.curve.iter().all(|e| e.valid_nll.is_none()));
    let first = loss[0];
    let best = loss[2];
    assert!(best < first, "curve {:?}", result.curve);
}

#[test]
fn predictions_are_distributions() {
    let (data, result) = small_run(ModelConfig {
        d_model: 8,
        scales: 3,
        causal: true,
        nonneg: true,
        ..Default::default()
    });
    for ex in &data.test {
        let p = result.model.predict(&ex.history.times, &ex.history.types).unwrap();
        let total: f64 = p.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(p.lambda > 0.0 && p.shape > 0.0 && p.expected_gap > 0.0);
    }
}

#[test]
fn hierarchy_partitions_every_scale() {
    let times: Vec<f64> = (0..40).map(|i| (i as f64).powf(1.3) + (i % 3) as f64 * 0.1).collect();
    let h = ScaleHierarchy::with_scales(&times, 5).unwrap();
    for s in 1..=h.num_scales() {
        let mut members: Vec<usize> = h.alive(s).iter().flat_map(|&id| h.node(id).members.clone()).collect();
        members.sort_unstable();
        assert_eq!(members, (0..40).collect::<Vec<_>>());
    }
    assert_eq!(h.node(h.root()).members.len(), 40);
}
