//! Generates a synthetic room and writes it as PLY plus ground truth JSON.
//!
//! cargo run --example gen_scene -- [seed] [furniture] [out_dir]

use std::path::PathBuf;

use seggroup::scene::{generate_synthetic, save_ground_truth_with_config, save_scene, RoomSpec, SceneFormat};

fn main() -> seggroup::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.first().and_then(|s| s.parse().ok()).unwrap_or(1);
    let furniture = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let out = PathBuf::from(args.get(2).map_or(".", String::as_str));

    let spec = RoomSpec::random(seed, furniture);
    let (scene, gt) = generate_synthetic(&spec)?;
    save_scene(&scene, &out.join("room.ply"), SceneFormat::PlyBinary)?;
    save_ground_truth_with_config(&gt, &out.join("room_gt.json"), None)?;

    println!("{} points, {} instances", scene.len(), gt.instances().len());
    for (id, class) in gt.instances() {
        let points = gt.instance.iter().filter(|&&i| i == id).count();
        println!("  instance {id}: class {class}, {points} points");
    }
    Ok(())
}
