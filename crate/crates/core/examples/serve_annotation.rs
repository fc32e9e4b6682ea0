//! Serves one freshly generated and grouped room to the annotation tool.
//!
//! cargo run --release --example serve_annotation -- [port]
//!
//! Then for example:
//!   curl localhost:8080/api/scene/room?stride=10
//!   curl -X POST -H 'content-type: application/json' \
//!        -d '{"click": 0, "class": 0, "instance": 0}' localhost:8080/api/labels/room

use std::collections::BTreeMap;

use seggroup::annotation::mechanical_annotate;
use seggroup::network::NetworkParams;
use seggroup::overseg::{oversegment, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE};
use seggroup::pipeline::{derive_pseudo_labels, seggroup_forward, GroupingConfig, SceneInput};
use seggroup::scene::{generate_synthetic, RoomSpec};
use seggroup::server::{serve, AppState, SceneRecord};

fn main() -> seggroup::Result<()> {
    let port: u16 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8080);
    let (scene, gt) = generate_synthetic(&RoomSpec::random(6, 3))?;
    let seg = oversegment(&scene, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE)?.segmentation;
    let labels = mechanical_annotate(&gt, &seg, 1, 0)?;

    let cfg = GroupingConfig::default();
    let input = SceneInput::new("room", scene.clone(), seg.clone(), labels, &cfg)?;
    let params = NetworkParams::init(gt.num_classes(), cfg.k_points, cfg.lambda, 0)?;
    let pass = seggroup_forward(&input, &params, &cfg, 0, None, false)?;

    // start the annotator from an empty label set, with the grouping result
    // of the mechanical clicks available for comparison
    let mut record = SceneRecord::new(scene, seg, Default::default())?;
    record.result = Some(derive_pseudo_labels(pass.final_graph(), &input.segmentation)?);
    let state = AppState::new(gt.classes.clone(), BTreeMap::from([("room".to_string(), record)]));

    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
    println!("serving on http://{addr}");
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    runtime.block_on(serve(state, addr))
}
