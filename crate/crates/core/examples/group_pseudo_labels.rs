//! Runs the grouping network on one room with fresh parameters and scores
//! the resulting pseudo labels.
//!
//! cargo run --release --example group_pseudo_labels

use seggroup::annotation::mechanical_annotate;
use seggroup::eval::semantic_iou;
use seggroup::network::NetworkParams;
use seggroup::overseg::{oversegment, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE};
use seggroup::pipeline::{derive_pseudo_labels, seggroup_forward, GroupingConfig, SceneInput};
use seggroup::scene::{generate_synthetic, RoomSpec};

fn main() -> seggroup::Result<()> {
    let (scene, gt) = generate_synthetic(&RoomSpec::random(4, 4))?;
    let seg = oversegment(&scene, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE)?.segmentation;
    let labels = mechanical_annotate(&gt, &seg, 1, 0)?;
    let cfg = GroupingConfig::default();
    let input = SceneInput::new("room", scene, seg, labels, &cfg)?;
    let params = NetworkParams::init(gt.num_classes(), cfg.k_points, cfg.lambda, 0)?;

    let pass = seggroup_forward(&input, &params, &cfg, 0, None, false)?;
    for (stage, g) in pass.snapshots.iter().enumerate() {
        println!("stage {stage}: {} nodes, {} labeled", g.len(), g.labeled_count());
    }
    let pseudo = derive_pseudo_labels(pass.final_graph(), &input.segmentation)?;
    let report = semantic_iou(&pseudo.semantic, &gt)?;
    println!("mean IoU {:.4}, coverage {:.4}", report.mean, pseudo.coverage());
    Ok(())
}
