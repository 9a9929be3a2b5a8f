use gr_core::retrainer::{initial_model, pool_order, retrain_point, RetrainKind, RetrainParams};
use gr_core::{build_augmented_sets, ArchitectureDescriptor, AttackConfig, Dataset, Model, Tensor, TrainParams};

/// Left half bright → class 0, right half bright → class 1.
fn halves(n: usize) -> Dataset<f32> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let label = i % 2;
        for _r in 0..8 {
            for c in 0..8 {
                let bright = (c < 4) == (label == 0);
                let jitter = ((i * 31 + c * 7) % 10) as f32 / 50.0;
                pixels.push(if bright { 0.8 + jitter } else { jitter });
            }
        }
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, 8, 8, 1], pixels).unwrap(), labels, 2).unwrap()
}

fn trained() -> (Model, Dataset<f32>) {
    let data = halves(64);
    let arch = ArchitectureDescriptor::desk([8, 8, 1], 2);
    let hp = TrainParams {
        epochs: 10,
        batch_size: 8,
        ..TrainParams::default()
    };
    (Model::build(&arch, 5).unwrap().train(&data, &hp).unwrap(), data)
}

#[test]
fn separable_data_is_learned() {
    let (m, data) = trained();
    assert_eq!(m.accuracy(&data).unwrap(), 1.0);
    let h = m.history();
    assert_eq!(h.len(), 10);
    assert!(h.last().unwrap().loss < h[0].loss);
    let (again, _) = trained();
    assert!(again.same_weights(&m));
}

#[test]
fn retraining_starts_from_declared_weights() {
    let (m, data) = trained();
    let sets = build_augmented_sets(&m, &data, &halves(20), 0.5, &AttackConfig::default(), 3).unwrap();
    let fresh = Model::build(m.architecture(), 99).unwrap();
    assert!(initial_model(RetrainKind::C1, &m, 99).unwrap().same_weights(&fresh));
    assert!(initial_model(RetrainKind::C2, &m, 99).unwrap().same_weights(&m));
    assert!(initial_model(RetrainKind::C3, &m, 99).unwrap().same_weights(&m));

    let order: Vec<usize> = (0..sets.train_star.len()).rev().collect();
    let c3 = pool_order(RetrainKind::C3, &sets, &order);
    assert_eq!(c3.len(), 32);
    assert!(c3.iter().all(|&i| sets.train_star_origin[i].is_adversarial()));
    assert!(c3.windows(2).all(|w| w[0] > w[1]));

    // no epochs: the retrained model is the original
    let hp = RetrainParams {
        train: TrainParams {
            epochs: 0,
            ..TrainParams::default()
        },
        init_seed: 99,
    };
    let run = retrain_point(RetrainKind::C2, &m, &sets, &order, order.len(), &hp).unwrap();
    assert_eq!(run.acc_test_star, m.accuracy(&sets.test_star).unwrap());
    assert_eq!(run.initial_digest, m.weight_digest());
    assert!(retrain_point(RetrainKind::C3, &m, &sets, &c3, c3.len() + 1, &hp).is_err());
}
