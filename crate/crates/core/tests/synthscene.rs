use localdif::classes::FREE;
use localdif::geometry::{Pose, SceneExtent, Vec3};
use localdif::rng::substream;
use localdif::synthscene::{
    generate_scene, reference_stations, simulate_scan, AngularGrid, PrimitiveKind, ScenePrimitive, SceneSpec, SyntheticScene,
};
use nalgebra::Vector2;
use rand::Rng;

type P2 = Vector2<f64>;

fn corners(p: &ScenePrimitive) -> [P2; 4] {
    let t = p.pose.translation();
    let r = p.pose.rotation();
    let u = P2::new(r[(0, 0)], r[(1, 0)]);
    let v = P2::new(r[(0, 1)], r[(1, 1)]);
    let c = P2::new(t.x, t.y);
    let (a, b) = (p.dimensions[0] / 2.0, p.dimensions[1] / 2.0);
    [c + u * a + v * b, c - u * a + v * b, c - u * a - v * b, c + u * a - v * b]
}

fn cross(a: P2, b: P2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segments_cross(p: P2, q: P2, r: P2, s: P2) -> bool {
    let d1 = cross(q - p, r - p);
    let d2 = cross(q - p, s - p);
    let d3 = cross(s - r, p - r);
    let d4 = cross(s - r, q - r);
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

fn inside_polygon(pt: P2, poly: &[P2; 4]) -> bool {
    let signs: Vec<f64> = (0..4).map(|i| cross(poly[(i + 1) % 4] - poly[i], pt - poly[i])).collect();
    signs.iter().all(|&s| s >= 0.0) || signs.iter().all(|&s| s <= 0.0)
}

fn rect_point_distance(p: &ScenePrimitive, pt: P2) -> f64 {
    let q = p.pose.inverse_apply(&Vec3::new(pt.x, pt.y, p.pose.translation().z));
    let dx = (q.x.abs() - p.dimensions[0] / 2.0).max(0.0);
    let dy = (q.y.abs() - p.dimensions[1] / 2.0).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

/// Exact footprint intersection test by edge crossings and containment.
fn footprints_intersect(a: &ScenePrimitive, b: &ScenePrimitive) -> bool {
    let center = |p: &ScenePrimitive| P2::new(p.pose.translation().x, p.pose.translation().y);
    match (a.kind, b.kind) {
        (PrimitiveKind::Cylinder, PrimitiveKind::Cylinder) => {
            (center(a) - center(b)).norm() <= (a.dimensions[0] + b.dimensions[0]) / 2.0
        }
        (PrimitiveKind::Cylinder, _) => rect_point_distance(b, center(a)) <= a.dimensions[0] / 2.0,
        (_, PrimitiveKind::Cylinder) => rect_point_distance(a, center(b)) <= b.dimensions[0] / 2.0,
        _ => {
            let (ca, cb) = (corners(a), corners(b));
            (0..4).any(|i| (0..4).any(|j| segments_cross(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4])))
                || inside_polygon(ca[0], &cb)
                || inside_polygon(cb[0], &ca)
        }
    }
}

#[test]
fn objects_never_overlap() {
    for seed in 0..20 {
        let spec = SceneSpec { boxes: 5, cylinders: 3, ..SceneSpec::default() };
        let scene = generate_scene(seed, &spec).unwrap();
        let objects: Vec<&ScenePrimitive> = scene
            .primitives
            .iter()
            .filter(|p| p.kind != PrimitiveKind::GroundPlane && p.class_id != spec.strip_class)
            .collect();
        assert_eq!(objects.len(), 8);
        for i in 0..objects.len() {
            for j in i + 1..objects.len() {
                assert!(!footprints_intersect(objects[i], objects[j]), "seed {seed}: objects {i} and {j} overlap");
            }
        }
        assert_eq!(scene.primitives.iter().filter(|p| p.kind == PrimitiveKind::GroundPlane).count(), 1);
        let e = &scene.extent;
        for o in &objects {
            for c in corners(o) {
                assert!(c.x >= e.min[0] - 1e-9 && c.x <= e.max[0] + 1e-9 && c.y >= e.min[1] - 1e-9 && c.y <= e.max[1] + 1e-9);
            }
        }
    }
}

/// Closed containment written from the primitive definitions.
fn brute_class(scene: &SyntheticScene, p: &Vec3) -> u16 {
    for q in &scene.primitives {
        let l = q.pose.inverse_apply(p);
        let [a, b, h] = q.dimensions;
        let inside = match q.kind {
            PrimitiveKind::GroundPlane => l.z <= 0.0 && l.z >= -h,
            PrimitiveKind::Box => l.x.abs() <= a / 2.0 && l.y.abs() <= b / 2.0 && (0.0..=h).contains(&l.z),
            PrimitiveKind::Cylinder => l.x.hypot(l.y) <= a / 2.0 && (0.0..=h).contains(&l.z),
        };
        if inside {
            return q.class_id;
        }
    }
    FREE
}

#[test]
fn ground_truth_class_matches_brute_force() {
    let scene = generate_scene(7, &SceneSpec::default()).unwrap();
    let mut rng = substream(7, "gt-oracle", 0);
    let mut occupied = 0;
    for _ in 0..100_000 {
        let p = Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-0.5..3.5));
        let c = scene.ground_truth_class(&p, 0.0);
        assert_eq!(c, brute_class(&scene, &p), "{p:?}");
        occupied += (c != FREE) as usize;
    }
    assert!(occupied > 10_000);
    assert_eq!(scene.ground_truth_class(&Vec3::new(0.0, 0.0, 100.0), 0.05), FREE);
}

#[test]
fn lone_cylinder_returns_lie_on_its_surface() {
    let (r, h) = (0.7, 2.0);
    let cyl = ScenePrimitive::new(PrimitiveKind::Cylinder, 16, Pose::from_translation(Vec3::new(3.0, 1.0, 0.0)), [2.0 * r, 2.0 * r, h]).unwrap();
    let scene = SyntheticScene {
        primitives: vec![cyl],
        extent: SceneExtent::new([-10.0, -10.0, -1.0], [10.0, 10.0, 4.0]).unwrap(),
        seed: 0,
    };
    let pose = Pose::from_yaw(0.4, Vec3::new(-1.0, 0.5, 2.6));
    let grid = AngularGrid { azimuth: 2048, elevation: 128, elevation_min: -45.0, elevation_max: 20.0, max_range: 60.0 };
    let (cloud, labels) = simulate_scan(&scene, &pose, &grid).unwrap();
    assert!(cloud.len() > 500);
    assert!(labels.iter().all(|&c| c == 16));
    for p in cloud.transformed(&pose).positions() {
        let q = p - Vec3::new(3.0, 1.0, 0.0);
        let side = (q.x.hypot(q.y) - r).abs() <= 1e-9 && q.z >= -1e-9 && q.z <= h + 1e-9;
        let cap = (q.z - h).abs() <= 1e-9 && q.x.hypot(q.y) <= r + 1e-9;
        assert!(side || cap, "{q:?}");
    }
}

#[test]
fn returns_are_occupied_and_rays_before_them_are_free() {
    let spec = SceneSpec::default();
    let scene = generate_scene(7, &spec).unwrap();
    let grid = AngularGrid { azimuth: 256, elevation: 32, ..AngularGrid::default() };
    let mut rng = substream(7, "free-rays", 0);
    for pose in reference_stations(&spec, 1.73) {
        let (cloud, _) = simulate_scan(&scene, &pose, &grid).unwrap();
        let o = *pose.translation();
        for p in cloud.transformed(&pose).positions() {
            assert_ne!(scene.ground_truth_class(p, 1e-6), FREE);
            let len = (p - o).norm();
            if len <= 0.1 {
                continue;
            }
            let t = rng.random_range(0.0..(len - 0.05)) / len;
            let q = o + (p - o) * t;
            assert_eq!(scene.ground_truth_class(&q, 0.0), FREE, "ray from {o:?} to {p:?} at {t}");
        }
    }
}

#[test]
fn scene_generation_is_byte_identical() {
    let spec = SceneSpec::default();
    let a = generate_scene(11, &spec).unwrap().to_container().to_bytes();
    let b = generate_scene(11, &spec).unwrap().to_container().to_bytes();
    assert_eq!(a, b);
    let c = generate_scene(12, &spec).unwrap().to_container().to_bytes();
    assert_ne!(a, c);
}

#[test]
fn reference_scene_meets_the_fixture_contract() {
    let spec = SceneSpec::default();
    let scene = generate_scene(7, &spec).unwrap();
    let count = |k| scene.primitives.iter().filter(|p| p.kind == k && p.class_id != spec.strip_class).count();
    assert!(count(PrimitiveKind::Box) >= 5);
    assert!(count(PrimitiveKind::Cylinder) >= 3);
    let size = scene.extent.size();
    assert_eq!((size[0], size[1]), (20.0, 20.0));
}
