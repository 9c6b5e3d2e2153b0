//! Regular voxel lattices and 3D DDA ray traversal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SceneExtent, Vec3};

pub type VoxelIndex = [i64; 3];

/// A finite regular lattice: `dims` voxels of edge `edge` starting at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridSpec {
    pub origin: [f64; 3],
    pub edge: f64,
    pub dims: [usize; 3],
}

impl VoxelGridSpec {
    pub fn new(origin: [f64; 3], edge: f64, dims: [usize; 3]) -> Result<Self> {
        if !(edge > 0.0 && edge.is_finite()) {
            return Err(Error::Argument(format!("voxel edge must be positive, got {edge}")));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Argument(format!("voxel dims must be positive, got {dims:?}")));
        }
        Ok(Self { origin, edge, dims })
    }

    /// Lattice covering `extent` with voxels of edge `edge` (rounded up).
    pub fn covering(extent: &SceneExtent, edge: f64) -> Result<Self> {
        if !(edge > 0.0) {
            return Err(Error::Argument(format!("voxel edge must be positive, got {edge}")));
        }
        let size = extent.size();
        let dims = [0, 1, 2].map(|a| ((size[a] / edge) - 1e-9).ceil().max(1.0) as usize);
        Self::new(extent.min, edge, dims)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, p: &Vec3) -> VoxelIndex {
        [0, 1, 2].map(|a| ((p[a] - self.origin[a]) / self.edge).floor() as i64)
    }

    pub fn contains_index(&self, v: &VoxelIndex) -> bool {
        (0..3).all(|a| v[a] >= 0 && (v[a] as usize) < self.dims[a])
    }

    /// Row-major linear index with x fastest.
    pub fn linear(&self, v: &VoxelIndex) -> usize {
        (v[2] as usize * self.dims[1] + v[1] as usize) * self.dims[0] + v[0] as usize
    }

    pub fn unlinear(&self, i: usize) -> VoxelIndex {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        [x as i64, y as i64, z as i64]
    }

    pub fn min_corner(&self, v: &VoxelIndex) -> Vec3 {
        Vec3::new(
            self.origin[0] + v[0] as f64 * self.edge,
            self.origin[1] + v[1] as f64 * self.edge,
            self.origin[2] + v[2] as f64 * self.edge,
        )
    }

    pub fn center(&self, v: &VoxelIndex) -> Vec3 {
        self.min_corner(v) + Vec3::repeat(0.5 * self.edge)
    }

    pub fn extent(&self) -> SceneExtent {
        SceneExtent {
            min: self.origin,
            max: [0, 1, 2].map(|a| self.origin[a] + self.dims[a] as f64 * self.edge),
        }
    }

    /// Corner lattice has `dims + 1` points per axis.
    pub fn corner_dims(&self) -> [usize; 3] {
        self.dims.map(|d| d + 1)
    }

    pub fn corner_position(&self, c: [usize; 3]) -> Vec3 {
        Vec3::new(
            self.origin[0] + c[0] as f64 * self.edge,
            self.origin[1] + c[1] as f64 * self.edge,
            self.origin[2] + c[2] as f64 * self.edge,
        )
    }

    pub fn corner_linear(&self, c: [usize; 3]) -> usize {
        let cd = self.corner_dims();
        (c[2] * cd[1] + c[1]) * cd[0] + c[0]
    }

    /// Voxels traversed by the segment from `start` to `end`, restricted to the
    /// lattice, excluding the voxel that contains `end`.
    pub fn traverse(&self, start: &Vec3, end: &Vec3) -> Vec<VoxelIndex> {
        let mut out = Vec::new();
        let dir = end - start;
        let len = dir.norm();
        if len == 0.0 {
            return out;
        }
        let end_voxel = self.index_of(end);
        let Some((t0, t1)) = self.extent().clip_ray(start, &dir) else {
            return out;
        };
        let t0 = t0.max(0.0);
        let t1 = t1.min(1.0);
        if t0 > t1 {
            return out;
        }
        let a = start + dir * t0;
        let mut v = self.index_of(&a);
        for ax in 0..3 {
            // entry point on the far face of the lattice rounds outward
            v[ax] = v[ax].clamp(0, self.dims[ax] as i64 - 1);
        }
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for ax in 0..3 {
            if dir[ax] > 0.0 {
                step[ax] = 1;
                let boundary = self.origin[ax] + (v[ax] + 1) as f64 * self.edge;
                t_max[ax] = (boundary - start[ax]) / dir[ax];
                t_delta[ax] = self.edge / dir[ax];
            } else if dir[ax] < 0.0 {
                step[ax] = -1;
                let boundary = self.origin[ax] + v[ax] as f64 * self.edge;
                t_max[ax] = (boundary - start[ax]) / dir[ax];
                t_delta[ax] = -self.edge / dir[ax];
            }
        }
        let max_steps = self.dims.iter().sum::<usize>() + 3;
        for _ in 0..=max_steps {
            if v == end_voxel || !self.contains_index(&v) {
                break;
            }
            out.push(v);
            let ax = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[ax] > t1 {
                break;
            }
            v[ax] += step[ax];
            t_max[ax] += t_delta[ax];
        }
        out
    }
}
