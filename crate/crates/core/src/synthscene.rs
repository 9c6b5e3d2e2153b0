//! Parametric outdoor scenes with exact ground truth and a simulated scanner.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classes::{ClassId, FREE};
use crate::container::{ChunkReader, ChunkWriter, Container};
use crate::error::{Error, Result};
use crate::geometry::{Pose, SceneExtent, Vec3};
use crate::rng::substream;
use crate::scene_io::{LidarPoint, PointCloud};
use crate::voxel::VoxelGridSpec;

pub const DEFAULT_SHELL: f64 = 0.05;
const PLACEMENT_RETRIES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    /// Slab below the pose's z of depth `dimensions[2]`, unbounded in xy.
    GroundPlane,
    /// `dimensions` are the edge lengths; the pose sits at the bottom-face center.
    Box,
    /// Vertical cylinder of diameter `dimensions[0]` and height `dimensions[2]`
    /// standing on the pose origin.
    Cylinder,
}

impl PrimitiveKind {
    fn code(self) -> u8 {
        match self {
            PrimitiveKind::GroundPlane => 0,
            PrimitiveKind::Box => 1,
            PrimitiveKind::Cylinder => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => PrimitiveKind::GroundPlane,
            1 => PrimitiveKind::Box,
            2 => PrimitiveKind::Cylinder,
            _ => return Err(Error::Format(format!("unknown primitive kind {c}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePrimitive {
    pub kind: PrimitiveKind,
    pub class_id: ClassId,
    pub pose: Pose,
    pub dimensions: [f64; 3],
}

impl ScenePrimitive {
    pub fn new(kind: PrimitiveKind, class_id: ClassId, pose: Pose, dimensions: [f64; 3]) -> Result<Self> {
        if dimensions.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Argument(format!("primitive dimensions must be positive, got {dimensions:?}")));
        }
        if class_id == FREE {
            return Err(Error::Argument("primitive class must be a semantic class".into()));
        }
        Ok(Self { kind, class_id, pose, dimensions })
    }

    /// Euclidean distance from `p` to the solid; zero inside.
    pub fn distance(&self, p: &Vec3) -> f64 {
        let q = self.pose.inverse_apply(p);
        let [a, b, h] = self.dimensions;
        match self.kind {
            PrimitiveKind::GroundPlane => (q.z.max(0.0)).max(-h - q.z),
            PrimitiveKind::Box => {
                let dx = (q.x.abs() - a / 2.0).max(0.0);
                let dy = (q.y.abs() - b / 2.0).max(0.0);
                let dz = (q.z - h).max(-q.z).max(0.0);
                (dx * dx + dy * dy + dz * dz).sqrt()
            }
            PrimitiveKind::Cylinder => {
                let dr = ((q.x * q.x + q.y * q.y).sqrt() - a / 2.0).max(0.0);
                let dz = (q.z - h).max(-q.z).max(0.0);
                (dr * dr + dz * dz).sqrt()
            }
        }
    }

    /// Whether `p` lies strictly inside the solid.
    pub fn strictly_contains(&self, p: &Vec3) -> bool {
        let q = self.pose.inverse_apply(p);
        let [a, b, h] = self.dimensions;
        match self.kind {
            PrimitiveKind::GroundPlane => q.z < 0.0 && q.z > -h,
            PrimitiveKind::Box => q.x.abs() < a / 2.0 && q.y.abs() < b / 2.0 && q.z > 0.0 && q.z < h,
            PrimitiveKind::Cylinder => q.x * q.x + q.y * q.y < a * a / 4.0 && q.z > 0.0 && q.z < h,
        }
    }

    /// Smallest `t > 0` where `origin + t·dir` enters the solid's surface.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let o = self.pose.inverse_apply(origin);
        let d = self.pose.inverse_apply_vector(dir);
        let [a, b, h] = self.dimensions;
        match self.kind {
            PrimitiveKind::GroundPlane => {
                if o.z > 0.0 && d.z < 0.0 {
                    Some(-o.z / d.z)
                } else {
                    None
                }
            }
            PrimitiveKind::Box => slab_hit(&o, &d, [-a / 2.0, -b / 2.0, 0.0], [a / 2.0, b / 2.0, h]),
            PrimitiveKind::Cylinder => cylinder_hit(&o, &d, a / 2.0, h),
        }
    }

    /// Footprint as an oriented rectangle `(center, half extents, unit x axis)`;
    /// cylinders use their bounding square.
    fn footprint(&self) -> (Vector2<f64>, [f64; 2], Vector2<f64>) {
        let t = self.pose.translation();
        let ax = self.pose.apply_vector(&Vector3::x());
        let axis = Vector2::new(ax.x, ax.y).normalize();
        (Vector2::new(t.x, t.y), [self.dimensions[0] / 2.0, self.dimensions[1] / 2.0], axis)
    }
}

fn slab_hit(o: &Vec3, d: &Vec3, lo: [f64; 3], hi: [f64; 3]) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < 1e-300 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
        } else {
            let ta = (lo[a] - o[a]) / d[a];
            let tb = (hi[a] - o[a]) / d[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

fn cylinder_hit(o: &Vec3, d: &Vec3, r: f64, h: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > 0.0 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-300 {
        let b = 2.0 * (o.x * d.x + o.y * d.y);
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let s = disc.sqrt();
            // numerically stable pair of roots
            let q = -0.5 * (b + b.signum() * s);
            for t in [q / a, if q != 0.0 { c / q } else { f64::INFINITY }] {
                let z = o.z + t * d.z;
                if (0.0..=h).contains(&z) {
                    consider(t);
                }
            }
        }
    }
    if d.z.abs() > 1e-300 {
        for zc in [0.0, h] {
            let t = (zc - o.z) / d.z;
            let (x, y) = (o.x + t * d.x, o.y + t * d.y);
            if x * x + y * y <= r * r {
                consider(t);
            }
        }
    }
    best
}

/// Oriented-rectangle overlap via separating axes, with rectangles grown by `gap`.
fn footprints_overlap(a: &ScenePrimitive, b: &ScenePrimitive, gap: f64) -> bool {
    let (ca, ha, ua) = a.footprint();
    let (cb, hb, ub) = b.footprint();
    let va = Vector2::new(-ua.y, ua.x);
    let vb = Vector2::new(-ub.y, ub.x);
    let d = cb - ca;
    let radius = |h: [f64; 2], u: &Vector2<f64>, v: &Vector2<f64>, axis: &Vector2<f64>| {
        (h[0] + gap / 2.0) * u.dot(axis).abs() + (h[1] + gap / 2.0) * v.dot(axis).abs()
    };
    for axis in [ua, va, ub, vb] {
        if d.dot(&axis).abs() > radius(ha, &ua, &va, &axis) + radius(hb, &ub, &vb, &axis) {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub primitives: Vec<ScenePrimitive>,
    pub extent: SceneExtent,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxTemplate {
    pub class_id: ClassId,
    pub size_min: [f64; 3],
    pub size_max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderTemplate {
    pub class_id: ClassId,
    pub radius: [f64; 2],
    pub height: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub extent: SceneExtent,
    pub ground_class: ClassId,
    pub ground_z: f64,
    pub boxes: usize,
    pub cylinders: usize,
    /// Flat strips of `strip_class` spanning the scene along x.
    pub strips: usize,
    pub strip_class: ClassId,
    pub strip_width: f64,
    pub strip_height: f64,
    /// Templates are used in turn, so every template appears once the count allows.
    pub box_templates: Vec<BoxTemplate>,
    pub cylinder_templates: Vec<CylinderTemplate>,
    /// Minimum footprint gap between objects.
    pub clearance: f64,
    /// xy positions kept free of objects (sensor stations).
    pub keep_clear: Vec<[f64; 2]>,
    pub keep_clear_radius: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            extent: SceneExtent { min: [-10.0, -10.0, -0.5], max: [10.0, 10.0, 3.5] },
            ground_class: 1,
            ground_z: 0.0,
            boxes: 6,
            cylinders: 4,
            strips: 1,
            strip_class: 2,
            strip_width: 2.5,
            strip_height: 0.2,
            box_templates: vec![
                BoxTemplate { class_id: 7, size_min: [3.8, 1.7, 1.4], size_max: [4.6, 1.9, 1.6] },
                BoxTemplate { class_id: 5, size_min: [3.0, 3.0, 2.6], size_max: [5.0, 4.0, 3.2] },
                BoxTemplate { class_id: 15, size_min: [1.2, 1.2, 0.9], size_max: [2.0, 2.0, 1.5] },
            ],
            cylinder_templates: vec![
                CylinderTemplate { class_id: 16, radius: [0.3, 0.4], height: [2.2, 3.0] },
                CylinderTemplate { class_id: 18, radius: [0.2, 0.25], height: [2.5, 3.2] },
            ],
            clearance: 1.0,
            keep_clear: vec![[0.0, 0.0], [-5.0, -5.0], [5.0, -5.0], [5.0, 5.0], [-5.0, 5.0]],
            keep_clear_radius: 1.5,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.extent.validate()?;
        if self.boxes > 0 && self.box_templates.is_empty() || self.cylinders > 0 && self.cylinder_templates.is_empty() {
            return Err(Error::Config("scene: object counts need at least one template".into()));
        }
        for t in &self.box_templates {
            if (0..3).any(|a| !(t.size_min[a] > 0.0 && t.size_min[a] <= t.size_max[a])) {
                return Err(Error::Config(format!("scene: invalid box size range {:?}..{:?}", t.size_min, t.size_max)));
            }
        }
        for t in &self.cylinder_templates {
            if !(t.radius[0] > 0.0 && t.radius[0] <= t.radius[1] && t.height[0] > 0.0 && t.height[0] <= t.height[1]) {
                return Err(Error::Config("scene: invalid cylinder ranges".into()));
            }
        }
        if !(self.clearance >= 0.0) || !(self.strip_width > 0.0) || !(self.strip_height > 0.0) {
            return Err(Error::Config("scene: clearance must be nonnegative and strip sizes positive".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Deterministic scene for `seed`: objects first, in placement order, then the ground.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = substream(seed, "scene", 0);
    let e = &spec.extent;
    let gz = spec.ground_z;
    let mut placed: Vec<ScenePrimitive> = Vec::new();
    let clear = |p: &ScenePrimitive| {
        spec.keep_clear.iter().all(|c| {
            let probe = ScenePrimitive {
                kind: PrimitiveKind::Cylinder,
                class_id: 1,
                pose: Pose::from_translation(Vec3::new(c[0], c[1], gz)),
                dimensions: [2.0 * spec.keep_clear_radius, 2.0 * spec.keep_clear_radius, 1.0],
            };
            !footprints_overlap(p, &probe, 0.0)
        })
    };
    let inside = |p: &ScenePrimitive| {
        let (c, h, u) = p.footprint();
        let v = Vector2::new(-u.y, u.x);
        [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].iter().all(|(sx, sy)| {
            let q = c + u * (sx * h[0]) + v * (sy * h[1]);
            q.x >= e.min[0] && q.x <= e.max[0] && q.y >= e.min[1] && q.y <= e.max[1]
        }) && p.pose.translation().z + p.dimensions[2] <= e.max[2]
    };

    for i in 0..spec.strips {
        let mut ok = false;
        for _ in 0..PLACEMENT_RETRIES {
            let y = uniform(&mut rng, e.min[1] + spec.strip_width / 2.0, e.max[1] - spec.strip_width / 2.0);
            let cand = ScenePrimitive::new(
                PrimitiveKind::Box,
                spec.strip_class,
                Pose::from_translation(Vec3::new(0.5 * (e.min[0] + e.max[0]), y, gz)),
                [e.max[0] - e.min[0], spec.strip_width, spec.strip_height],
            )?;
            if placed.iter().all(|q| !footprints_overlap(&cand, q, spec.clearance)) {
                placed.push(cand);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Generation(format!("could not place strip {i} without overlap")));
        }
    }
    let strips = placed.len();

    let mut place = |placed: &mut Vec<ScenePrimitive>,
                     make: &mut dyn FnMut(&mut crate::rng::StreamRng) -> Result<ScenePrimitive>,
                     what: String|
     -> Result<()> {
        for _ in 0..PLACEMENT_RETRIES {
            let cand = make(&mut rng)?;
            // objects may stand on strips but never overlap other objects
            if inside(&cand) && clear(&cand) && placed[strips..].iter().all(|q| !footprints_overlap(&cand, q, spec.clearance)) {
                placed.push(cand);
                return Ok(());
            }
        }
        Err(Error::Generation(format!("could not place {what} without overlap after {PLACEMENT_RETRIES} tries")))
    };

    for i in 0..spec.boxes {
        let t = spec.box_templates[i % spec.box_templates.len()].clone();
        place(
            &mut placed,
            &mut |rng| {
                let size = [0, 1, 2].map(|a| uniform(rng, t.size_min[a], t.size_max[a]));
                let x = uniform(rng, e.min[0], e.max[0]);
                let y = uniform(rng, e.min[1], e.max[1]);
                let yaw = uniform(rng, 0.0, std::f64::consts::PI);
                ScenePrimitive::new(PrimitiveKind::Box, t.class_id, Pose::from_yaw(yaw, Vec3::new(x, y, gz)), size)
            },
            format!("box {i}"),
        )?;
    }
    for i in 0..spec.cylinders {
        let t = spec.cylinder_templates[i % spec.cylinder_templates.len()].clone();
        place(
            &mut placed,
            &mut |rng| {
                let r = uniform(rng, t.radius[0], t.radius[1]);
                let h = uniform(rng, t.height[0], t.height[1]);
                let x = uniform(rng, e.min[0], e.max[0]);
                let y = uniform(rng, e.min[1], e.max[1]);
                ScenePrimitive::new(PrimitiveKind::Cylinder, t.class_id, Pose::from_translation(Vec3::new(x, y, gz)), [2.0 * r, 2.0 * r, h])
            },
            format!("cylinder {i}"),
        )?;
    }
    // strips sit on the ground; keep them ahead of objects so a box standing
    // on a strip keeps its own class in the shell overlap
    let mut primitives: Vec<ScenePrimitive> = placed.split_off(strips);
    primitives.extend(placed);
    let depth = (gz - e.min[2]).max(0.0) + 1.0;
    primitives.push(ScenePrimitive::new(
        PrimitiveKind::GroundPlane,
        spec.ground_class,
        Pose::from_translation(Vec3::new(0.0, 0.0, gz)),
        [e.max[0] - e.min[0], e.max[1] - e.min[1], depth],
    )?);
    Ok(SyntheticScene { primitives, extent: spec.extent, seed })
}

impl SyntheticScene {
    /// Class of the first primitive within `shell` of `p`, else FREE.
    pub fn ground_truth_class(&self, p: &Vec3, shell: f64) -> ClassId {
        self.primitives.iter().find(|q| q.distance(p) <= shell).map_or(FREE, |q| q.class_id)
    }

    /// Nearest surface hit along a ray.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, ClassId)> {
        self.primitives
            .iter()
            .filter_map(|q| q.intersect(origin, dir).map(|t| (t, q.class_id)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(b"SCNE");
        let mut w = ChunkWriter::new();
        w.u64(self.seed);
        for v in self.extent.min.iter().chain(&self.extent.max) {
            w.f64(*v);
        }
        w.u64(self.primitives.len() as u64);
        for p in &self.primitives {
            w.u8(p.kind.code()).u32(p.class_id as u32);
            for v in p.pose.to_row_major_3x4() {
                w.f64(v);
            }
            for v in p.dimensions {
                w.f64(v);
            }
        }
        c.push(b"PRIM", w.finish());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(b"SCNE")?;
        let mut r = ChunkReader::new(c.chunk(b"PRIM")?);
        let seed = r.u64()?;
        let mut f = [0.0; 6];
        for v in f.iter_mut() {
            *v = r.f64()?;
        }
        let extent = SceneExtent::new([f[0], f[1], f[2]], [f[3], f[4], f[5]])?;
        let n = r.u64()? as usize;
        let mut primitives = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let kind = PrimitiveKind::from_code(r.u8()?)?;
            let class_id = r.u32()? as ClassId;
            let mut m = [0.0; 12];
            for v in m.iter_mut() {
                *v = r.f64()?;
            }
            let dims = [r.f64()?, r.f64()?, r.f64()?];
            primitives.push(ScenePrimitive::new(kind, class_id, Pose::from_row_major_3x4(&m)?, dims)?);
        }
        Ok(Self { primitives, extent, seed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AngularGrid {
    pub azimuth: usize,
    pub elevation: usize,
    /// Elevation range in degrees, lowest beam first.
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub max_range: f64,
}

impl Default for AngularGrid {
    fn default() -> Self {
        Self { azimuth: 1024, elevation: 64, elevation_min: -30.0, elevation_max: 10.0, max_range: 60.0 }
    }
}

/// Per-class constant reflectivity.
pub fn class_reflectivity(class: ClassId) -> f64 {
    0.1 + 0.8 * ((class as u32 * 37) % 19) as f64 / 18.0
}

/// Casts one ray per angular cell from `sensor_pose`; returns points in the
/// sensor frame with their true classes.
pub fn simulate_scan(scene: &SyntheticScene, sensor_pose: &Pose, grid: &AngularGrid) -> Result<(PointCloud, Vec<ClassId>)> {
    if grid.azimuth == 0 || grid.elevation == 0 {
        return Err(Error::Argument("angular grid counts must be at least 1".into()));
    }
    let origin = *sensor_pose.translation();
    if let Some(p) = scene.primitives.iter().find(|p| p.strictly_contains(&origin)) {
        return Err(Error::Geometry(format!("sensor at {:?} lies inside a class-{} primitive", origin.as_slice(), p.class_id)));
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for ie in 0..grid.elevation {
        let el = if grid.elevation == 1 {
            grid.elevation_min
        } else {
            grid.elevation_min + (grid.elevation_max - grid.elevation_min) * ie as f64 / (grid.elevation - 1) as f64
        }
        .to_radians();
        for ia in 0..grid.azimuth {
            let az = std::f64::consts::TAU * ia as f64 / grid.azimuth as f64;
            let local = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let dir = sensor_pose.apply_vector(&local);
            if let Some((t, class)) = scene.cast(&origin, &dir) {
                if t <= grid.max_range {
                    points.push(LidarPoint { position: local * t, reflectivity: class_reflectivity(class) });
                    labels.push(class);
                }
            }
        }
    }
    Ok((PointCloud::new(points, Vec3::zeros()), labels))
}

/// Single ray cast used by unit checks: direction in the world frame.
pub fn simulate_ray(scene: &SyntheticScene, origin: &Vec3, dir: &Vec3) -> Option<Vec3> {
    scene.cast(origin, &dir.normalize()).map(|(t, _)| origin + dir.normalize() * t)
}

/// Ground-truth voxel labels over a `(sub+1)³` lattice of points spanning each
/// voxel (corners included). A voxel is occupied when any lattice point lies
/// inside a primitive and takes the most frequent class among those points.
pub fn ground_truth_voxels(scene: &SyntheticScene, spec: &VoxelGridSpec, sub: usize) -> Vec<ClassId> {
    use rayon::prelude::*;
    let sub = sub.max(1);
    (0..spec.len())
        .into_par_iter()
        .map(|li| {
            let v = spec.unlinear(li);
            let lo = spec.min_corner(&v);
            let mut counts: Vec<(ClassId, usize)> = Vec::new();
            for i in 0..=sub {
                for j in 0..=sub {
                    for k in 0..=sub {
                        let p = lo + Vec3::new(i as f64, j as f64, k as f64) * (spec.edge / sub as f64);
                        let c = scene.ground_truth_class(&p, 0.0);
                        if c != FREE {
                            match counts.iter_mut().find(|e| e.0 == c) {
                                Some(e) => e.1 += 1,
                                None => counts.push((c, 1)),
                            }
                        }
                    }
                }
            }
            // earliest-seen class wins ties
            counts.iter().fold((FREE, 0), |best, &(c, n)| if n > best.1 { (c, n) } else { best }).0
        })
        .collect()
}

/// Scan stations of the reference fixture.
pub fn reference_stations(spec: &SceneSpec, height: f64) -> Vec<Pose> {
    spec.keep_clear
        .iter()
        .enumerate()
        .map(|(i, c)| Pose::from_yaw(0.3 * i as f64, Vec3::new(c[0], c[1], spec.ground_z + height)))
        .collect()
}
