mod common;

use proptest::prelude::*;

use common::reference;
use seggroup::annotation::SegLevelLabelSet;
use seggroup::graph::build_segment_graph;
use seggroup::overseg::{build_point_adjacency, felzenszwalb_segment, oversegment, AdjacencyEdge};
use seggroup::scene::Scene;

fn edges_strategy() -> impl Strategy<Value = (usize, Vec<AdjacencyEdge>)> {
    (2usize..40).prop_flat_map(|n| {
        let edge = (0..n, 0..n, 0u8..8).prop_filter_map("self loop", |(a, b, w)| {
            (a != b).then(|| AdjacencyEdge {
                a: a.min(b),
                b: a.max(b),
                // coarse weights so ties are common
                weight: w as f64 * 0.125,
            })
        });
        (Just(n), prop::collection::vec(edge, 0..120))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_brute_force_reference(
        (n, edges) in edges_strategy(),
        kappa in prop::sample::select(vec![0.01, 0.1, 0.5, 1.0, 4.0]),
        min_size in 1usize..6,
    ) {
        let got = felzenszwalb_segment(n, &edges, kappa, min_size).unwrap().segmentation;
        let expected = reference::felzenszwalb(n, &edges, kappa, min_size);
        prop_assert_eq!(got.seg_ids(), expected.as_slice());
    }

    #[test]
    fn output_is_a_dense_partition((n, edges) in edges_strategy(), kappa in 0.001f64..2.0) {
        let seg = felzenszwalb_segment(n, &edges, kappa, 3).unwrap().segmentation;
        prop_assert_eq!(seg.num_points(), n);
        let mut seen = vec![false; seg.num_segments()];
        for (p, &s) in seg.seg_ids().iter().enumerate() {
            // ids are numbered by first member
            if !seen[s] {
                prop_assert!(seg.seg_ids()[..p].iter().all(|&q| q < s));
            }
            seen[s] = true;
        }
        prop_assert!(seen.into_iter().all(|x| x));
    }
}

#[test]
fn crease_with_analytic_normals_gives_two_segments_and_one_edge() {
    let (scene, plane) = common::crease_scene(20);
    let seg = oversegment(&scene, 10, 0.05, 20).unwrap().segmentation;
    assert_eq!(seg.seg_ids(), plane.as_slice());
    let adjacency = build_point_adjacency(&scene, 10).unwrap();
    let graph = build_segment_graph(&scene, &seg, &SegLevelLabelSet::default(), &adjacency).unwrap();
    assert_eq!(graph.len(), 2);
    assert_eq!(graph.edges().iter().copied().collect::<Vec<_>>(), vec![(0, 1)]);
}

#[test]
fn estimated_normals_keep_the_planes_apart_up_to_default_kappa() {
    let (scene, plane) = common::crease_scene(30);
    let bare = Scene::new(scene.points().to_vec(), scene.colors().to_vec(), None, None).unwrap();
    for kappa in [0.01, 0.03, 0.06] {
        let seg = oversegment(&bare, 10, kappa, 20).unwrap().segmentation;
        let mut plane_of = vec![None; seg.num_segments()];
        for (&s, &p) in seg.seg_ids().iter().zip(&plane) {
            assert!(*plane_of[s].get_or_insert(p) == p, "segment {s} crosses the crease at kappa {kappa}");
        }
    }
}

#[test]
fn isolated_points_stay_singletons() {
    let edges = vec![AdjacencyEdge { a: 0, b: 1, weight: 0.0 }];
    let r = felzenszwalb_segment(3, &edges, 0.06, 1).unwrap();
    assert_eq!(r.isolated, vec![2]);
    assert_eq!(r.segmentation.seg_ids(), &[0, 0, 1]);
}
