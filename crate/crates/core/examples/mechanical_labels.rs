//! Synthesizes one click per instance, choosing among the n largest
//! segments of each instance.
//!
//! cargo run --example mechanical_labels

use seggroup::annotation::mechanical_annotate;
use seggroup::overseg::{oversegment, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE};
use seggroup::scene::{generate_synthetic, RoomSpec};

fn main() -> seggroup::Result<()> {
    let (scene, gt) = generate_synthetic(&RoomSpec::random(3, 3))?;
    let seg = oversegment(&scene, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE)?.segmentation;
    let sizes = seg.members();

    for top_n in 1..=3 {
        let labels = mechanical_annotate(&gt, &seg, top_n, 0)?;
        println!("top-{top_n}:");
        for l in &labels.labels {
            println!(
                "  instance {} class {} -> segment {} ({} points), click at point {}",
                l.instance_id,
                l.semantic_class,
                l.segment_id,
                sizes[l.segment_id].len(),
                l.click_point
            );
        }
    }
    Ok(())
}
