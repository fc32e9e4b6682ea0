//! Over-segments a synthetic room at several kappa values.
//!
//! cargo run --example overseg_scene

use seggroup::overseg::{oversegment, DEFAULT_K, DEFAULT_MIN_SIZE};
use seggroup::scene::{estimate_normals, generate_synthetic, RoomSpec, Scene};

fn main() -> seggroup::Result<()> {
    let (scene, gt) = generate_synthetic(&RoomSpec::random(2, 4))?;
    println!("{} points, {} ground-truth instances", scene.len(), gt.instances().len());

    // drop the generator's normals to exercise estimation as on a real scan
    let bare = Scene::new(scene.points().to_vec(), scene.colors().to_vec(), None, None)?;
    let estimated = estimate_normals(&bare, DEFAULT_K)?.scene;

    for kappa in [0.02, 0.06, 0.2] {
        let native = oversegment(&scene, DEFAULT_K, kappa, DEFAULT_MIN_SIZE)?;
        let est = oversegment(&estimated, DEFAULT_K, kappa, DEFAULT_MIN_SIZE)?;
        println!(
            "kappa {kappa:<5} segments: {} with generator normals, {} with estimated normals",
            native.segmentation.num_segments(),
            est.segmentation.num_segments()
        );
    }
    Ok(())
}
