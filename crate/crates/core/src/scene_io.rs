//! LiDAR scan and label files, multi-scan accumulation and dynamic-object
//! shadow masking.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::classes::{ClassId, ClassMap, UNLABELED};
use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, Pose, SceneExtent, Vec3};
use crate::sampling::{Ray, Target, TargetKind, TargetSet};
use crate::voxel::{VoxelGridSpec, VoxelIndex};

const RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub position: Vec3,
    /// Normalized to `[0, 1]`.
    pub reflectivity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
    pub sensor_origin: Vec3,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>, sensor_origin: Vec3) -> Self {
        Self { points, sensor_origin }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vec3> {
        self.points.iter().map(|p| &p.position)
    }

    /// Same cloud expressed in the frame `pose` maps into.
    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| LidarPoint {
                    position: pose.apply(&p.position),
                    reflectivity: p.reflectivity,
                })
                .collect(),
            sensor_origin: pose.apply(&self.sensor_origin),
        }
    }
}

/// Parses KITTI velodyne records: four little-endian f32 (x, y, z, reflectivity).
pub fn parse_scan(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "scan length {} is not a multiple of {RECORD_BYTES} bytes",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        let (x, y, z, r) = (f(0), f(1), f(2), f(3));
        if ![x, y, z, r].iter().all(|v| v.is_finite()) {
            return Err(Error::Data(format!("scan record {i} contains a non-finite value")));
        }
        points.push(LidarPoint {
            position: Vec3::new(x, y, z),
            reflectivity: r.clamp(0.0, 1.0),
        });
    }
    Ok(PointCloud::new(points, Vec3::zeros()))
}

pub fn load_scan(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_scan(&bytes)
}

pub fn encode_scan(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD_BYTES);
    for p in &cloud.points {
        for v in [p.position.x, p.position.y, p.position.z, p.reflectivity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_scan(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, encode_scan(cloud)).map_err(|e| Error::io(path, e))
}

/// Parses one u32 per point; the lower 16 bits are mapped through `map`.
pub fn parse_labels(bytes: &[u8], n_points: usize, map: &ClassMap) -> Result<Vec<ClassId>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("label file length {} is not a multiple of 4", bytes.len())));
    }
    let n = bytes.len() / 4;
    if n != n_points {
        return Err(Error::Format(format!("label file has {n} records but the scan has {n_points} points")));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|r| map.map_raw((u32::from_le_bytes(r.try_into().unwrap()) & 0xFFFF) as u16))
        .collect())
}

pub fn load_labels(path: &Path, n_points: usize, map: &ClassMap) -> Result<Vec<ClassId>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&bytes, n_points, map)
}

pub fn save_raw_labels(path: &Path, raw: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = raw.iter().flat_map(|r| r.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// KITTI pose text: one row-major 3x4 matrix per line.
pub fn parse_poses(text: &str) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("pose line {}: {e}", ln + 1)))?;
        let arr: [f64; 12] = vals
            .try_into()
            .map_err(|_| Error::Format(format!("pose line {} must have 12 values", ln + 1)))?;
        poses.push(Pose::from_row_major_3x4(&arr)?);
    }
    Ok(poses)
}

pub fn format_poses(poses: &[Pose]) -> String {
    let mut s = String::new();
    for p in poses {
        let row: Vec<String> = p.to_row_major_3x4().iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// One registered scan with per-point labels and dynamic-object flags.
#[derive(Debug, Clone)]
pub struct ScanInput {
    pub cloud: PointCloud,
    pub pose: Pose,
    pub labels: Vec<ClassId>,
    /// Empty means no point is dynamic.
    pub dynamic: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
pub struct AccumulateParams {
    pub extent: SceneExtent,
    pub voxel_edge: f64,
    pub max_per_voxel: usize,
}

const OCCUPIED: u8 = 1;
const EMPTY: u8 = 2;

/// Merges scans into a single [`TargetSet`] in the common reference frame.
///
/// Dynamic points survive only from the first scan. Voxels in the first
/// scan's shadow of a dynamic point become `unseen`. Per voxel at most
/// `max_per_voxel` targets are kept. Precedence: occupied > unseen > empty.
pub fn accumulate<R: Rng>(scans: &[ScanInput], params: &AccumulateParams, rng: &mut R) -> Result<TargetSet> {
    if scans.is_empty() {
        return Err(Error::Argument("accumulate needs at least one scan".into()));
    }
    params.extent.validate()?;
    if !(params.voxel_edge > 0.0) {
        return Err(Error::Argument(format!("voxel_edge must be positive, got {}", params.voxel_edge)));
    }
    let lattice = VoxelGridSpec::covering(&params.extent, params.voxel_edge)?;
    let mut state = vec![0u8; lattice.len()];
    let mut candidates: Vec<(Vec3, ClassId, Vec3)> = Vec::new();
    let mut dynamic_points: Vec<Vec3> = Vec::new();
    let first_origin = scans[0].pose.apply(&scans[0].cloud.sensor_origin);

    for (s, scan) in scans.iter().enumerate() {
        let n = scan.cloud.len();
        if scan.labels.len() != n {
            return Err(Error::Argument(format!(
                "scan {s}: {} labels for {n} points",
                scan.labels.len()
            )));
        }
        if !scan.dynamic.is_empty() && scan.dynamic.len() != n {
            return Err(Error::Argument(format!(
                "scan {s}: {} dynamic flags for {n} points",
                scan.dynamic.len()
            )));
        }
        let origin = scan.pose.apply(&scan.cloud.sensor_origin);
        for (i, pt) in scan.cloud.points.iter().enumerate() {
            let dynamic = scan.dynamic.get(i).copied().unwrap_or(false);
            let p = scan.pose.apply(&pt.position);
            if dynamic {
                if s != 0 {
                    continue;
                }
                dynamic_points.push(p);
            }
            for v in lattice.traverse(&origin, &p) {
                state[lattice.linear(&v)] |= EMPTY;
            }
            if params.extent.contains(&p) {
                candidates.push((p, scan.labels[i], origin));
            }
        }
    }

    let mut by_voxel: BTreeMap<VoxelIndex, Vec<usize>> = BTreeMap::new();
    for (k, (p, _, _)) in candidates.iter().enumerate() {
        let mut v = lattice.index_of(p);
        for a in 0..3 {
            // points on the max face belong to the last voxel layer
            v[a] = v[a].min(lattice.dims[a] as i64 - 1);
        }
        state[lattice.linear(&v)] |= OCCUPIED;
        by_voxel.entry(v).or_default().push(k);
    }

    let mut targets = Vec::new();
    let mut rays = Vec::new();
    for members in by_voxel.values() {
        let mut keep: Vec<usize> = if members.len() > params.max_per_voxel {
            let mut picked: Vec<usize> = sample(rng, members.len(), params.max_per_voxel)
                .into_iter()
                .map(|j| members[j])
                .collect();
            picked.sort_unstable();
            picked
        } else {
            members.clone()
        };
        keep.dedup();
        for k in keep {
            let (p, label, origin) = candidates[k];
            let kind = if label == UNLABELED {
                TargetKind::OccupiedUnlabeled
            } else {
                TargetKind::Semantic(label)
            };
            targets.push(Target { position: p.into(), kind });
            rays.push(Ray { origin: origin.into(), point: p.into() });
        }
    }

    let diag = lattice.edge * 3f64.sqrt();
    let dyn_ranges: Vec<f64> = dynamic_points.iter().map(|d| (d - first_origin).norm()).collect();
    let mut empty_voxels = BTreeSet::new();
    let mut unseen_voxels = BTreeSet::new();
    for (li, &st) in state.iter().enumerate() {
        if st & OCCUPIED != 0 || st & EMPTY == 0 {
            continue;
        }
        let v = lattice.unlinear(li);
        let c = lattice.center(&v);
        let range = (c - first_origin).norm();
        let shadowed = dynamic_points
            .iter()
            .zip(&dyn_ranges)
            .any(|(d, &r)| range > r && point_segment_distance(d, &first_origin, &c) <= diag);
        if shadowed {
            unseen_voxels.insert(v);
        } else {
            empty_voxels.insert(v);
        }
    }

    Ok(TargetSet {
        extent: params.extent,
        lattice,
        targets,
        rays,
        empty_voxels,
        unseen_voxels,
    })
}
