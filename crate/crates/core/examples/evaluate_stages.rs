//! Scores every grouping stage of one room and prints the CSV report.
//!
//! cargo run --release --example evaluate_stages

use std::collections::BTreeMap;

use seggroup::annotation::mechanical_annotate;
use seggroup::eval::{report_csv, stage_report};
use seggroup::network::NetworkParams;
use seggroup::overseg::{oversegment, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE};
use seggroup::pipeline::{seggroup_forward, GroupingConfig, SceneInput, FINAL_STAGE};
use seggroup::scene::{generate_synthetic, RoomSpec};

fn main() -> seggroup::Result<()> {
    let (scene, gt) = generate_synthetic(&RoomSpec::random(5, 5))?;
    let seg = oversegment(&scene, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE)?.segmentation;
    let labels = mechanical_annotate(&gt, &seg, 1, 0)?;
    let cfg = GroupingConfig::default();
    let input = SceneInput::new("room", scene, seg, labels, &cfg)?;
    let params = NetworkParams::init(gt.num_classes(), cfg.k_points, cfg.lambda, 0)?;
    let pass = seggroup_forward(&input, &params, &cfg, 0, None, false)?;

    let rows: Vec<_> = stage_report(&pass.snapshots, &input.segmentation, &gt)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| (if i == FINAL_STAGE { "final".to_string() } else { format!("layer{i}") }, r))
        .collect();
    print!("{}", report_csv(&rows, gt.num_classes(), &BTreeMap::new(), None)?);
    Ok(())
}
