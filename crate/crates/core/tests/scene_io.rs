use std::collections::BTreeSet;

use localdif::classes::{ClassId, UNLABELED};
use localdif::geometry::{point_segment_distance, Pose, SceneExtent, Vec3};
use localdif::rng::substream;
use localdif::scene_io::{accumulate, AccumulateParams, LidarPoint, PointCloud, ScanInput};
use localdif::voxel::{VoxelGridSpec, VoxelIndex};
use proptest::prelude::*;
use rand::Rng;

fn extent() -> SceneExtent {
    SceneExtent::new([0.0, -2.0, -1.0], [10.0, 2.0, 1.0]).unwrap()
}

fn params() -> AccumulateParams {
    AccumulateParams { extent: extent(), voxel_edge: 0.2, max_per_voxel: 10 }
}

fn scan(points: &[[f64; 3]], origin: [f64; 3], labels: Vec<ClassId>, dynamic: Vec<bool>) -> ScanInput {
    let cloud = PointCloud::new(
        points.iter().map(|p| LidarPoint { position: Vec3::from(*p), reflectivity: 0.3 }).collect(),
        Vec3::from(origin),
    );
    ScanInput { cloud, pose: Pose::identity(), labels, dynamic }
}

/// Voxels touched by the open segment, by dense sampling.
fn marched(spec: &VoxelGridSpec, a: Vec3, b: Vec3) -> BTreeSet<VoxelIndex> {
    let steps = 20_000;
    (1..steps)
        .map(|i| spec.index_of(&(a + (b - a) * (i as f64 / steps as f64))))
        .filter(|v| spec.contains_index(v))
        .collect()
}

#[test]
fn shadow_of_a_dynamic_object_is_unseen_not_empty() {
    // scan 0 sees a moving object at x = 3; scan 1, taken later from the
    // same place, sees a wall behind it through the now vacated space
    let o = [0.05, 0.05, 0.05];
    let dyn_pt = [3.05, 0.05, 0.05];
    let wall = [8.05, 0.05, 0.05];
    let s0 = scan(&[dyn_pt], o, vec![7], vec![true]);
    let s1 = scan(&[wall, [3.05, 0.05, 0.05]], o, vec![5, 7], vec![false, true]);
    let set = accumulate(&[s0, s1], &params(), &mut substream(0, "acc", 0)).unwrap();
    let spec = &set.lattice;

    // dynamic points survive only from the first scan
    assert_eq!(set.targets.len(), 2);
    assert!(set.targets.iter().any(|t| t.position == dyn_pt));

    let origin = Vec3::from(o);
    let d = Vec3::from(dyn_pt);
    let diag = spec.edge * 3f64.sqrt();
    let occupied: BTreeSet<VoxelIndex> = set.targets.iter().map(|t| spec.index_of(&Vec3::from(t.position))).collect();
    let traversed: BTreeSet<VoxelIndex> = marched(spec, origin, d).into_iter().chain(marched(spec, origin, Vec3::from(wall))).collect();
    let mut expect_unseen = BTreeSet::new();
    let mut expect_empty = BTreeSet::new();
    for v in traversed.difference(&occupied) {
        let c = spec.center(v);
        if (c - origin).norm() > (d - origin).norm() && point_segment_distance(&d, &origin, &c) <= diag {
            expect_unseen.insert(*v);
        } else {
            expect_empty.insert(*v);
        }
    }
    assert!(!expect_unseen.is_empty());
    assert_eq!(set.unseen_voxels, expect_unseen);
    assert_eq!(set.empty_voxels, expect_empty);
}

fn random_scans(seed: u64, n_scans: usize, points: usize, dynamic: bool) -> Vec<ScanInput> {
    let mut rng = substream(seed, "scans", 0);
    (0..n_scans)
        .map(|_| {
            let o = [rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)];
            // clustered returns so some voxels exceed the cap
            let pts: Vec<[f64; 3]> = (0..points)
                .map(|_| {
                    if rng.random_bool(0.3) {
                        [6.1 + rng.random_range(0.0..0.05), 0.1, 0.1]
                    } else {
                        [rng.random_range(-1.0..11.0), rng.random_range(-2.5..2.5), rng.random_range(-1.2..1.2)]
                    }
                })
                .collect();
            let labels = (0..points).map(|_| if rng.random_bool(0.1) { UNLABELED } else { rng.random_range(1..5) }).collect();
            let flags = if dynamic { (0..points).map(|_| rng.random_bool(0.05)).collect() } else { Vec::new() };
            scan(&pts, o, labels, flags)
        })
        .collect()
}

#[test]
fn single_static_scan_is_idempotent() {
    let scans = random_scans(3, 1, 400, false);
    let a = accumulate(&scans, &params(), &mut substream(9, "acc", 0)).unwrap();
    let b = accumulate(&scans, &params(), &mut substream(9, "acc", 0)).unwrap();
    assert_eq!(a, b);
    assert!(a.unseen_voxels.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn voxel_sets_are_disjoint_and_targets_inside(seed in 0u64..10_000, n_scans in 1usize..4) {
        let scans = random_scans(seed, n_scans, 300, true);
        let set = accumulate(&scans, &params(), &mut substream(seed, "acc", 0)).unwrap();
        let spec = &set.lattice;
        let e = extent();
        let occupied: BTreeSet<VoxelIndex> = set
            .targets
            .iter()
            .map(|t| {
                let mut v = spec.index_of(&Vec3::from(t.position));
                for a in 0..3 {
                    v[a] = v[a].min(spec.dims[a] as i64 - 1);
                }
                v
            })
            .collect();
        prop_assert!(set.targets.iter().all(|t| e.contains(&Vec3::from(t.position))));
        prop_assert!(set.empty_voxels.is_disjoint(&set.unseen_voxels));
        prop_assert!(set.empty_voxels.is_disjoint(&occupied));
        prop_assert!(set.unseen_voxels.is_disjoint(&occupied));
        let mut per_voxel = std::collections::BTreeMap::new();
        for t in &set.targets {
            *per_voxel.entry(spec.index_of(&Vec3::from(t.position))).or_insert(0usize) += 1;
        }
        prop_assert!(per_voxel.values().all(|&n| n <= 10));
        prop_assert_eq!(set.rays.len(), set.targets.len());
    }

    #[test]
    fn accumulation_is_deterministic(seed in 0u64..10_000) {
        let scans = random_scans(seed, 2, 200, true);
        let a = accumulate(&scans, &params(), &mut substream(seed, "acc", 0)).unwrap();
        let b = accumulate(&scans, &params(), &mut substream(seed, "acc", 0)).unwrap();
        prop_assert_eq!(a, b);
    }
}
