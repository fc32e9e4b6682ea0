mod common;

use common::prepare_room;
use seggroup::network::NetworkParams;
use seggroup::pipeline::{GroupingConfig, SceneInput};
use seggroup::tensor::Mat;
use seggroup::train::{
    grad_check, grad_check_with, load_checkpoint, loss_log_csv, save_checkpoint, train, GradCheckOptions, Sgd,
    TrainConfig,
};

fn dataset(n: u64) -> Vec<SceneInput> {
    (0..n).map(|r| prepare_room(200 + r, 2 + r as usize % 3, 1, r).input).collect()
}

fn init(seed: u64) -> NetworkParams {
    let g = GroupingConfig::default();
    NetworkParams::init(9, g.k_points, g.lambda, seed).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::default()
    }
}

fn bits(p: &NetworkParams) -> Vec<u64> {
    p.tensors().iter().flat_map(|(_, m)| m.data.iter().map(|v| v.to_bits())).collect()
}

#[test]
fn sgd_matches_hand_computed_momentum_steps() {
    let mut p = Mat::from_rows(&[vec![1.0, -2.0]]);
    let g = Mat::from_rows(&[vec![0.5, 1.0]]);
    let mut sgd = Sgd::new(0.1, 0.9);
    sgd.step(&mut [&mut p], std::slice::from_ref(&g));
    // v = g; p = p - 0.1 g
    assert_eq!(p.data, vec![1.0 - 0.05, -2.0 - 0.1]);
    sgd.step(&mut [&mut p], std::slice::from_ref(&g));
    // v = 0.9 g + g = 1.9 g
    assert!((p.data[0] - (0.95 - 0.1 * 0.95)).abs() < 1e-15);
    assert!((p.data[1] - (-2.1 - 0.1 * 1.9)).abs() < 1e-15);
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let data = dataset(2);
    let start = init(1);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..config(3)
    };
    let out = train(&data, start.clone(), &cfg, &GroupingConfig::default(), |_| {}).unwrap();
    assert_eq!(bits(&out.params), bits(&start));
    // identical parameters give identical epoch losses
    assert!(out.losses.windows(2).all(|w| w[0].mean_loss.to_bits() == w[1].mean_loss.to_bits()));
}

#[test]
fn epoch_log_has_one_row_per_epoch() {
    let data = dataset(2);
    let mut seen = Vec::new();
    let out = train(&data, init(2), &config(5), &GroupingConfig::default(), |e| seen.push(e.epoch)).unwrap();
    assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    assert_eq!(out.losses.len(), 5);
    assert!(out.losses.iter().all(|e| e.mean_loss.is_finite() && e.mean_loss > 0.0));
    let csv = loss_log_csv(&out.losses, None).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], "epoch,mean_loss");
}

#[test]
fn training_lowers_the_loss() {
    let data = dataset(4);
    let out = train(&data, init(3), &config(20), &GroupingConfig::default(), |_| {}).unwrap();
    let first = out.losses[0].mean_loss;
    let last = out.losses.last().unwrap().mean_loss;
    assert!(last < first, "loss went from {first} to {last}");
}

#[test]
fn training_is_deterministic() {
    let data = dataset(2);
    let a = train(&data, init(4), &config(3), &GroupingConfig::default(), |_| {}).unwrap();
    let b = train(&data, init(4), &config(3), &GroupingConfig::default(), |_| {}).unwrap();
    assert_eq!(bits(&a.params), bits(&b.params));
    assert_eq!(a.losses, b.losses);
}

#[test]
fn invalid_settings_are_rejected() {
    let data = dataset(1);
    let g = GroupingConfig::default();
    let bad_momentum = TrainConfig {
        momentum: 1.0,
        ..config(1)
    };
    assert!(train(&data, init(0), &bad_momentum, &g, |_| {}).is_err());
    let bad_lr = TrainConfig {
        learning_rate: -0.1,
        ..config(1)
    };
    assert!(train(&data, init(0), &bad_lr, &g, |_| {}).is_err());
    assert!(train(&[], init(0), &config(1), &g, |_| {}).is_err());
}

#[test]
fn gradient_check_passes_and_catches_a_wrong_gradient() {
    let room = prepare_room(400, 2, 1, 0);
    let params = init(7);
    let g = GroupingConfig::default();
    let options = GradCheckOptions {
        samples: 24,
        min_gradient: 1e-6,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&room.input, &params, &g, 0, &options).unwrap();
    assert_eq!(report.entries.len(), 24);
    assert!(report.max_relative_error < 1e-4, "max rel err {}", report.max_relative_error);

    // a 1% error on every analytic entry must show up
    let tampered = grad_check_with(&room.input, &params, &g, 0, &options, |grads| {
        for m in grads.iter_mut() {
            m.data.iter_mut().for_each(|v| *v *= 1.01);
        }
    })
    .unwrap();
    assert!(tampered.max_relative_error > 1e-3, "tamper went unnoticed: {}", tampered.max_relative_error);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let params = init(9);
    save_checkpoint(&params, &path, None).unwrap();
    assert_eq!(bits(&load_checkpoint(&path).unwrap()), bits(&params));
}
