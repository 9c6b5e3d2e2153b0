//! Training targets: labeled surface points, free-space samples along rays and
//! inside observed-empty voxels, and consistency-only locations.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classes::ClassId;
use crate::container::{ChunkReader, ChunkWriter, Container};
use crate::error::{Error, Result};
use crate::geometry::{SceneExtent, Vec3};
use crate::latent_grid::{support_region, GridConfig, SupportRegion};
use crate::voxel::{VoxelGridSpec, VoxelIndex};

pub const DEFAULT_DECAY_SCALE: f64 = 0.25;
pub const DEFAULT_CONSISTENCY_COUNT: usize = 2500;
/// Draws attempted before a ray free-space sample landing in an unseen voxel is dropped.
const FREE_RETRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Semantic(ClassId),
    OccupiedUnlabeled,
    Free,
    Consistency,
}

impl TargetKind {
    fn code(self) -> (u8, u16) {
        match self {
            TargetKind::Semantic(c) => (0, c),
            TargetKind::OccupiedUnlabeled => (1, 0),
            TargetKind::Free => (2, 0),
            TargetKind::Consistency => (3, 0),
        }
    }

    fn from_code(tag: u8, class: u16) -> Result<Self> {
        Ok(match tag {
            0 => TargetKind::Semantic(class),
            1 => TargetKind::OccupiedUnlabeled,
            2 => TargetKind::Free,
            3 => TargetKind::Consistency,
            _ => return Err(Error::Format(format!("unknown target kind {tag}"))),
        })
    }

    pub fn is_occupied(self) -> bool {
        matches!(self, TargetKind::Semantic(_) | TargetKind::OccupiedUnlabeled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub position: [f64; 3],
    pub kind: TargetKind,
}

/// A sensor ray in the scene frame ending at a measured point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub point: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub extent: SceneExtent,
    /// Lattice that `empty_voxels` and `unseen_voxels` index into.
    pub lattice: VoxelGridSpec,
    pub targets: Vec<Target>,
    pub rays: Vec<Ray>,
    pub empty_voxels: BTreeSet<VoxelIndex>,
    pub unseen_voxels: BTreeSet<VoxelIndex>,
}

impl TargetSet {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for t in &self.targets {
            if let TargetKind::Semantic(c) = t.kind {
                if c == 0 || c as usize > num_classes {
                    return Err(Error::Data(format!("semantic target with class {c} outside 1..{num_classes}")));
                }
            }
            if t.kind == TargetKind::Free && self.unseen_voxels.contains(&self.voxel_of(&t.position)) {
                return Err(Error::Data(format!("free target at {:?} lies in an unseen voxel", t.position)));
            }
        }
        if let Some(v) = self.empty_voxels.intersection(&self.unseen_voxels).next() {
            return Err(Error::Data(format!("voxel {v:?} is both empty and unseen")));
        }
        Ok(())
    }

    pub fn voxel_of(&self, p: &[f64; 3]) -> VoxelIndex {
        self.lattice.index_of(&Vec3::from(*p))
    }

    pub fn write(&self) -> Container {
        let mut c = Container::new(b"TSET");
        let mut w = ChunkWriter::new();
        for a in 0..3 {
            w.f64(self.extent.min[a]);
        }
        for a in 0..3 {
            w.f64(self.extent.max[a]);
        }
        for a in 0..3 {
            w.f64(self.lattice.origin[a]);
        }
        w.f64(self.lattice.edge);
        for a in 0..3 {
            w.u64(self.lattice.dims[a] as u64);
        }
        c.push(b"META", w.finish());

        let mut w = ChunkWriter::new();
        w.u64(self.targets.len() as u64);
        for t in &self.targets {
            let (tag, class) = t.kind.code();
            w.f64(t.position[0]).f64(t.position[1]).f64(t.position[2]).u8(tag).u32(class as u32);
        }
        c.push(b"TGTS", w.finish());

        let mut w = ChunkWriter::new();
        w.u64(self.rays.len() as u64);
        for r in &self.rays {
            for v in r.origin.iter().chain(&r.point) {
                w.f64(*v);
            }
        }
        c.push(b"RAYS", w.finish());

        for (tag, set) in [(b"EMPT", &self.empty_voxels), (b"UNSN", &self.unseen_voxels)] {
            let mut w = ChunkWriter::new();
            w.u64(set.len() as u64);
            for v in set {
                w.i64(v[0]).i64(v[1]).i64(v[2]);
            }
            c.push(tag, w.finish());
        }
        c
    }

    pub fn read(c: &Container) -> Result<Self> {
        c.expect_kind(b"TSET")?;
        let mut r = ChunkReader::new(c.chunk(b"META")?);
        let mut f = [0.0; 10];
        for v in f.iter_mut() {
            *v = r.f64()?;
        }
        let dims = [r.u64()? as usize, r.u64()? as usize, r.u64()? as usize];
        let extent = SceneExtent::new([f[0], f[1], f[2]], [f[3], f[4], f[5]])?;
        let lattice = VoxelGridSpec::new([f[6], f[7], f[8]], f[9], dims)?;

        let mut r = ChunkReader::new(c.chunk(b"TGTS")?);
        let n = r.u64()? as usize;
        let mut targets = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let position = [r.f64()?, r.f64()?, r.f64()?];
            let tag = r.u8()?;
            let class = r.u32()? as u16;
            targets.push(Target { position, kind: TargetKind::from_code(tag, class)? });
        }

        let mut r = ChunkReader::new(c.chunk(b"RAYS")?);
        let n = r.u64()? as usize;
        let mut rays = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let origin = [r.f64()?, r.f64()?, r.f64()?];
            let point = [r.f64()?, r.f64()?, r.f64()?];
            rays.push(Ray { origin, point });
        }

        let mut sets = Vec::new();
        for tag in [b"EMPT", b"UNSN"] {
            let mut r = ChunkReader::new(c.chunk(tag)?);
            let n = r.u64()? as usize;
            let mut s = BTreeSet::new();
            for _ in 0..n {
                s.insert([r.i64()?, r.i64()?, r.i64()?]);
            }
            sets.push(s);
        }
        let unseen_voxels = sets.pop().expect("two sets");
        let empty_voxels = sets.pop().expect("two sets");
        Ok(Self { extent, lattice, targets, rays, empty_voxels, unseen_voxels })
    }
}

/// Free-space position on the open segment `(origin, point)` at a distance
/// from `point` drawn from an exponential of scale `decay_scale`, truncated
/// by rejection at the segment length.
pub fn sample_ray_free<R: Rng>(point: [f64; 3], origin: [f64; 3], decay_scale: f64, rng: &mut R) -> Result<[f64; 3]> {
    if !(decay_scale > 0.0 && decay_scale.is_finite()) {
        return Err(Error::Argument(format!("decay_scale must be positive, got {decay_scale}")));
    }
    let p = Vec3::from(point);
    let o = Vec3::from(origin);
    let len = (p - o).norm();
    if !(len > decay_scale * 1e-3) {
        return Err(Error::Argument(format!("degenerate ray of length {len}")));
    }
    let dir = (o - p) / len;
    loop {
        let u: f64 = rng.random();
        let d = -decay_scale * (1.0 - u).ln();
        if d > 0.0 && d < len {
            return Ok((p + dir * d).into());
        }
    }
}

/// One uniform FREE target inside each voxel.
pub fn sample_empty_voxels<'a, R: Rng>(
    empty_voxels: impl IntoIterator<Item = &'a VoxelIndex>,
    lattice: &VoxelGridSpec,
    rng: &mut R,
) -> Vec<Target> {
    empty_voxels
        .into_iter()
        .map(|v| {
            let lo = lattice.min_corner(v);
            let position = [0, 1, 2].map(|a| lo[a] + rng.random::<f64>() * lattice.edge);
            Target { position, kind: TargetKind::Free }
        })
        .collect()
}

pub fn sample_consistency<R: Rng>(extent: &SceneExtent, count: usize, rng: &mut R) -> Vec<Target> {
    (0..count)
        .map(|_| {
            let position = [0, 1, 2].map(|a| extent.min[a] + rng.random::<f64>() * (extent.max[a] - extent.min[a]));
            Target { position, kind: TargetKind::Consistency }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingParams {
    pub decay_scale: f64,
    pub consistency_count: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { decay_scale: DEFAULT_DECAY_SCALE, consistency_count: DEFAULT_CONSISTENCY_COUNT }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TargetStats {
    pub occupied: usize,
    pub ray_free: usize,
    pub voxel_free: usize,
    pub consistency: usize,
    /// Ray samples discarded because every draw fell in an unseen voxel.
    pub dropped_unseen: usize,
    /// Rays too short to sample.
    pub degenerate_rays: usize,
}

/// All targets for one training epoch: the occupied targets of `set`, one
/// free sample per ray and per empty voxel, and `consistency_count`
/// consistency points.
pub fn build_targets<R: Rng>(set: &TargetSet, params: &SamplingParams, rng: &mut R) -> Result<(Vec<Target>, TargetStats)> {
    let sampler = TargetSampler::new(set, params)?;
    let mut stats = TargetStats::default();
    let mut out = Vec::with_capacity(sampler.len());
    for i in 0..sampler.len() {
        sampler.materialize(i, rng, &mut out, &mut stats);
    }
    Ok((out, stats))
}

/// Draws a uniform subset of the epoch's target sources and realizes only
/// those, so a batch costs time proportional to its size.
#[derive(Debug, Clone)]
pub struct TargetSampler<'a> {
    set: &'a TargetSet,
    params: SamplingParams,
    occupied: Vec<Target>,
    empty: Vec<VoxelIndex>,
}

impl<'a> TargetSampler<'a> {
    pub fn new(set: &'a TargetSet, params: &SamplingParams) -> Result<Self> {
        if !(params.decay_scale > 0.0 && params.decay_scale.is_finite()) {
            return Err(Error::Argument(format!("decay_scale must be positive, got {}", params.decay_scale)));
        }
        Ok(Self {
            set,
            params: *params,
            occupied: set.targets.iter().filter(|t| t.kind.is_occupied()).copied().collect(),
            empty: set.empty_voxels.iter().copied().collect(),
        })
    }

    /// Number of sources: occupied targets, rays, empty voxels, consistency points.
    pub fn len(&self) -> usize {
        self.occupied.len() + self.set.rays.len() + self.empty.len() + self.params.consistency_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn materialize<R: Rng>(&self, mut i: usize, rng: &mut R, out: &mut Vec<Target>, stats: &mut TargetStats) {
        if i < self.occupied.len() {
            out.push(self.occupied[i]);
            stats.occupied += 1;
            return;
        }
        i -= self.occupied.len();
        if let Some(ray) = self.set.rays.get(i) {
            for _ in 0..FREE_RETRIES {
                let Ok(s) = sample_ray_free(ray.point, ray.origin, self.params.decay_scale, rng) else {
                    stats.degenerate_rays += 1;
                    return;
                };
                if !self.set.unseen_voxels.contains(&self.set.voxel_of(&s)) {
                    out.push(Target { position: s, kind: TargetKind::Free });
                    stats.ray_free += 1;
                    return;
                }
            }
            stats.dropped_unseen += 1;
            return;
        }
        i -= self.set.rays.len();
        if let Some(v) = self.empty.get(i) {
            out.extend(sample_empty_voxels([v], &self.set.lattice, rng));
            stats.voxel_free += 1;
            return;
        }
        out.extend(sample_consistency(&self.set.extent, 1, rng));
        stats.consistency += 1;
    }

    /// At most `count` targets from distinct sources chosen uniformly, in
    /// source order.
    pub fn draw<R: Rng>(&self, count: usize, rng: &mut R) -> (Vec<Target>, TargetStats) {
        let n = self.len();
        let mut chosen: Vec<usize> = if n > count { sample(rng, n, count).into_vec() } else { (0..n).collect() };
        chosen.sort_unstable();
        let mut out = Vec::with_capacity(chosen.len());
        let mut stats = TargetStats::default();
        for i in chosen {
            self.materialize(i, rng, &mut out, &mut stats);
        }
        (out, stats)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchEntry {
    pub target: Target,
    pub region: SupportRegion,
    /// Which of the four supports are evaluated.
    pub active: [bool; 4],
    /// Effective blend weights; zero for inactive supports.
    pub weights: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub entries: Vec<BatchEntry>,
    /// Targets whose position had no full support region.
    pub out_of_domain: usize,
}

/// Uniform subsample to at most `max_targets`; with `support_subset`, two
/// distinct supports are kept per target and their weights doubled.
pub fn build_batch<R: Rng>(
    targets: &[Target],
    grid: &GridConfig,
    max_targets: usize,
    support_subset: bool,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if targets.is_empty() {
        return Err(Error::Argument("build_batch: empty target set".into()));
    }
    if max_targets == 0 {
        return Err(Error::Argument("build_batch: max_targets must be at least 1".into()));
    }
    let mut chosen: Vec<usize> = if targets.len() > max_targets {
        sample(rng, targets.len(), max_targets).into_vec()
    } else {
        (0..targets.len()).collect()
    };
    chosen.sort_unstable();
    let mut entries = Vec::with_capacity(chosen.len());
    let mut out_of_domain = 0;
    for i in chosen {
        let t = targets[i];
        let region = match support_region(t.position, grid) {
            Ok(r) => r,
            Err(Error::OutOfDomain { .. }) => {
                out_of_domain += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut weights = region.supports.map(|s| s.weight);
        let mut active = [true; 4];
        if support_subset {
            let pick = sample(rng, 4, 2);
            active = [false; 4];
            for k in pick.iter() {
                active[k] = true;
            }
            for k in 0..4 {
                weights[k] = if active[k] { 2.0 * weights[k] } else { 0.0 };
            }
        }
        entries.push(BatchEntry { target: t, region, active, weights });
    }
    Ok(TrainingBatch { entries, out_of_domain })
}
