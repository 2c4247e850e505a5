use ecnn_core::annealer::{self, AnnealSchedule};
use ecnn_core::attacks::{self, AttackConfig, AttackFamily};
use ecnn_core::ecnn::{ArchConfig, EcnnModel, LossConfig, LossKind};
use ecnn_core::rng;
use ecnn_core::trainer::{self, SyntheticKind, SyntheticSpec, TrainConfig};

#[test]
fn design_train_checkpoint_attack() {
    let dir = tempfile::tempdir().unwrap();
    let data = trainer::make_synthetic(&SyntheticSpec {
        kind: SyntheticKind::Blobs,
        num_classes: 3,
        samples_per_class: 60,
        noise_sigma: 0.03,
        dim: 2,
        seed: 1,
    })
    .unwrap();
    let csv = dir.path().join("data.csv");
    trainer::save_csv(&csv, &data).unwrap();
    let data = trainer::load_csv(&csv, "label", false).unwrap();
    let (train, test) = data.split(0.75, 2).unwrap();

    let design = annealer::design_matrix(3, 6, 2, &AnnealSchedule { seed: 3, num_temperatures: 50, ..Default::default() }).unwrap();
    assert!(design.min_hamming >= 2);
    let mut model = EcnnModel::random(2, design.matrix, &ArchConfig::default(), &mut rng::seeded(4)).unwrap();
    let cfg = TrainConfig { epochs: 40, loss: LossConfig { kind: LossKind::Hinge, gamma: 0.1, kappa: 0.0 }, ..Default::default() };
    let history = trainer::train(&mut model, &train, &cfg).unwrap();
    assert!(history.last().unwrap().loss < history[0].loss);
    let clean = trainer::evaluate(&model, &test, None).unwrap();
    assert!(clean.accuracy > 0.9, "{}", clean.accuracy);

    let ckpt = dir.path().join("model.json");
    std::fs::write(&ckpt, model.to_json()).unwrap();
    let back = EcnnModel::from_json(&std::fs::read_to_string(&ckpt).unwrap()).unwrap();
    assert_eq!(back.params(), model.params());

    let strong = AttackConfig { family: AttackFamily::Pgd, epsilon: 0.3, step_alpha: 0.03, iterations: 20, ..Default::default() };
    let attacked = trainer::evaluate(&back, &test, Some(&strong)).unwrap();
    assert!(attacked.accuracy <= clean.accuracy);
    let outcomes = attacks::attack_dataset(&back, &test, &strong).unwrap();
    assert!(outcomes.iter().all(|o| o.linf <= 0.3 + 1e-12));
    let out = dir.path().join("attacks.csv");
    attacks::save_csv(&out, &strong, &test.labels, &outcomes).unwrap();
    assert_eq!(std::fs::read_to_string(out).unwrap().lines().count(), test.len() + 1);
}
