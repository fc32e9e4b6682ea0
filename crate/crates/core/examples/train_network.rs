//! Trains the grouping network on a few synthetic rooms and saves a
//! checkpoint.
//!
//! cargo run --release --example train_network -- [epochs]

use seggroup::annotation::mechanical_annotate;
use seggroup::network::NetworkParams;
use seggroup::overseg::{oversegment, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE};
use seggroup::pipeline::{GroupingConfig, SceneInput};
use seggroup::scene::{generate_synthetic, RoomSpec};
use seggroup::train::{save_checkpoint, train, TrainConfig};

fn main() -> seggroup::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let grouping = GroupingConfig::default();
    let mut dataset = Vec::new();
    let mut num_classes = 1;
    for room in 0..4 {
        let (scene, gt) = generate_synthetic(&RoomSpec::random(room, 2 + room as usize))?;
        let seg = oversegment(&scene, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE)?.segmentation;
        let labels = mechanical_annotate(&gt, &seg, 1, room)?;
        num_classes = num_classes.max(gt.num_classes());
        dataset.push(SceneInput::new(format!("room{room}"), scene, seg, labels, &grouping)?);
    }

    let init = NetworkParams::init(num_classes, grouping.k_points, grouping.lambda, 0)?;
    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let outcome = train(&dataset, init, &config, &grouping, |e| {
        println!("epoch {:>3}: mean loss {:.6}", e.epoch, e.mean_loss)
    })?;
    save_checkpoint(&outcome.params, std::path::Path::new("checkpoint.json"), None)?;
    println!("wrote checkpoint.json");
    Ok(())
}
