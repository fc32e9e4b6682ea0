mod common;

use proptest::prelude::*;

use common::{check_safety, prepare_room};
use seggroup::network::NetworkParams;
use seggroup::pipeline::{derive_pseudo_labels, seggroup_forward, GroupingConfig, GroupingPlan};

fn params(seed: u64) -> NetworkParams {
    let g = GroupingConfig::default();
    NetworkParams::init(9, g.k_points, g.lambda, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn grouping_invariants_hold(
        room in 0u64..10_000,
        furniture in 1usize..5,
        top_n in 1usize..=3,
        label_seed in 0u64..100,
        param_seed in 0u64..100,
    ) {
        let room = prepare_room(room, furniture, top_n, label_seed);
        let pass = seggroup_forward(&room.input, &params(param_seed), &GroupingConfig::default(), 0, None, false).unwrap();
        if let Err(e) = check_safety(&room.input, &pass.snapshots) {
            return Err(TestCaseError::fail(e));
        }

        // clicked points keep their annotated class and instance
        let labels = derive_pseudo_labels(pass.final_graph(), &room.input.segmentation).unwrap();
        for l in &room.input.labels.labels {
            prop_assert_eq!(labels.semantic[l.click_point], l.semantic_class as i64);
            prop_assert_eq!(labels.instance[l.click_point], l.instance_id as i64);
        }
        prop_assert_eq!(labels.coverage(), 1.0);
    }
}

#[test]
fn replaying_a_plan_reproduces_the_pass() {
    let room = prepare_room(7, 3, 1, 2);
    let cfg = GroupingConfig::default();
    let p = params(3);
    let free = seggroup_forward(&room.input, &p, &cfg, 0, None, false).unwrap();
    let replay = seggroup_forward(&room.input, &p, &cfg, 0, Some(&free.plan), false).unwrap();
    assert_eq!(free.snapshots, replay.snapshots);
    assert_eq!(free.plan, replay.plan);
    assert_eq!(free.loss_value().to_bits(), replay.loss_value().to_bits());
}

#[test]
fn forward_pass_is_deterministic() {
    let room = prepare_room(8, 2, 2, 5);
    let cfg = GroupingConfig::default();
    let a = seggroup_forward(&room.input, &params(1), &cfg, 4, None, false).unwrap();
    let b = seggroup_forward(&room.input, &params(1), &cfg, 4, None, false).unwrap();
    assert_eq!(a.snapshots, b.snapshots);
    assert_eq!(a.loss_value().to_bits(), b.loss_value().to_bits());
}

#[test]
fn malformed_plans_are_rejected() {
    let room = prepare_room(9, 2, 1, 0);
    let cfg = GroupingConfig::default();
    let p = params(0);
    let free = seggroup_forward(&room.input, &p, &cfg, 0, None, false).unwrap();

    let short = GroupingPlan { stages: free.plan.stages[..3].to_vec() };
    assert!(seggroup_forward(&room.input, &p, &cfg, 0, Some(&short), false).is_err());

    let mut missing = free.plan.clone();
    missing.stages[0].pop();
    assert!(seggroup_forward(&room.input, &p, &cfg, 0, Some(&missing), false).is_err());
}

#[test]
fn scene_without_labels_is_rejected() {
    let room = prepare_room(10, 2, 1, 0);
    let mut input = room.input.clone();
    input.labels = Default::default();
    let input = seggroup::pipeline::SceneInput::new(
        "bare",
        input.scene,
        input.segmentation,
        input.labels,
        &GroupingConfig::default(),
    )
    .unwrap();
    assert!(seggroup_forward(&input, &params(0), &GroupingConfig::default(), 0, None, false).is_err());
}

#[test]
fn stage_reports_only_gain_coverage() {
    use seggroup::eval::{semantic_iou, stage_report};
    use seggroup::pipeline::snapshot_labels;

    for seed in 0..4 {
        let room = prepare_room(20 + seed, 3, 1, seed);
        let input = &room.input;
        let pass = seggroup_forward(input, &params(seed), &GroupingConfig::default(), 0, None, false).unwrap();
        let reports = stage_report(&pass.snapshots, &input.segmentation, &room.gt).unwrap();
        assert_eq!(reports.len(), pass.snapshots.len());

        // stage 0 covers exactly the points of annotated segments
        let annotated = input
            .segmentation
            .seg_ids()
            .iter()
            .filter(|&&s| input.labels.label_on_segment(s).is_some())
            .count();
        assert_eq!(reports[0].coverage, annotated as f64 / input.segmentation.num_points() as f64);
        assert!(reports.windows(2).all(|w| w[0].coverage <= w[1].coverage));
        assert_eq!(reports.last().unwrap().coverage, 1.0);

        // every clicked instance's own IoU only grows while the network adds
        // points to it on these well-separated rooms
        for l in &input.labels.labels {
            let class = l.semantic_class;
            let ious: Vec<f64> = pass
                .snapshots
                .iter()
                .map(|g| {
                    let labels = snapshot_labels(g, &input.segmentation).unwrap();
                    semantic_iou(&labels.semantic, &room.gt).unwrap().per_class[&class]
                })
                .collect();
            assert!(ious.windows(2).all(|w| w[0] <= w[1] + 1e-12), "room {seed} class {class}: {ious:?}");
        }
    }
}
