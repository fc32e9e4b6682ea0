//! Compares backpropagated gradients with central differences on a small
//! room.
//!
//! cargo run --release --example grad_check

use seggroup::annotation::mechanical_annotate;
use seggroup::network::NetworkParams;
use seggroup::overseg::{oversegment, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE};
use seggroup::pipeline::{GroupingConfig, SceneInput};
use seggroup::scene::{generate_synthetic, RoomSpec};
use seggroup::train::{grad_check, GradCheckOptions};

fn main() -> seggroup::Result<()> {
    let (scene, gt) = generate_synthetic(&RoomSpec::random(400, 2))?;
    let seg = oversegment(&scene, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE)?.segmentation;
    let labels = mechanical_annotate(&gt, &seg, 1, 0)?;
    let cfg = GroupingConfig::default();
    let input = SceneInput::new("room", scene, seg, labels, &cfg)?;
    let params = NetworkParams::init(gt.num_classes(), cfg.k_points, cfg.lambda, 0)?;

    let options = GradCheckOptions {
        samples: 40,
        min_gradient: 1e-6,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&input, &params, &cfg, 0, &options)?;
    println!(
        "{} entries, eps {}: max relative error {:.3e}, max absolute error {:.3e}",
        report.entries.len(),
        report.epsilon,
        report.max_relative_error,
        report.max_absolute_error
    );
    if let Some(w) = report.worst() {
        println!("worst: {}[{}] analytic {:.6e} numeric {:.6e}", w.tensor, w.index, w.analytic, w.numeric);
    }
    Ok(())
}
