//! Voxel grids, isosurface meshes and ground images from a trained model.

mod field;
mod ground;
mod mc_table;
mod mesh;
mod mise;
mod voxelize;

pub use field::ClassField;
pub use ground::{ground_image, ClassImage, GroundImageStats, VOID};
pub use mesh::{refine_and_color, RefineParams, TriMesh, MIN_GRADIENT};
pub use mise::{dense_mesh, mise_mesh, MeshOutput, MiseParams, DEFAULT_THETA_FREE};
pub use voxelize::{argmax_class, voxelize, CornerField, DEFAULT_THETA_EMPTY};

use crate::classes::{ClassId, FREE};
use crate::container::{ChunkReader, ChunkWriter, Container};
use crate::error::{Error, Result};
use crate::voxel::VoxelGridSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: VoxelGridSpec,
    /// Linear order of [`VoxelGridSpec::linear`].
    pub labels: Vec<ClassId>,
}

impl VoxelGrid {
    pub fn occupied(&self) -> impl Iterator<Item = bool> + '_ {
        self.labels.iter().map(|&l| l != FREE)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(b"VOXG");
        let mut w = ChunkWriter::new();
        for v in self.spec.origin {
            w.f64(v);
        }
        w.f64(self.spec.edge);
        for d in self.spec.dims {
            w.u64(d as u64);
        }
        c.push(b"VHDR", w.finish());
        let mut w = ChunkWriter::new();
        w.u64(self.labels.len() as u64);
        let mut bytes = Vec::with_capacity(2 * self.labels.len());
        for l in &self.labels {
            bytes.extend_from_slice(&l.to_le_bytes());
        }
        let mut payload = w.finish();
        payload.extend(bytes);
        c.push(b"VLAB", payload);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(b"VOXG")?;
        let mut r = ChunkReader::new(c.chunk(b"VHDR")?);
        let origin = [r.f64()?, r.f64()?, r.f64()?];
        let edge = r.f64()?;
        let dims = [r.u64()? as usize, r.u64()? as usize, r.u64()? as usize];
        let spec = VoxelGridSpec::new(origin, edge, dims)?;
        let mut r = ChunkReader::new(c.chunk(b"VLAB")?);
        let n = r.u64()? as usize;
        if n != spec.len() {
            return Err(Error::Format(format!("voxel grid has {n} labels for {} voxels", spec.len())));
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(r.u16()?);
        }
        Ok(Self { spec, labels })
    }

    /// One line per class with its voxel count.
    pub fn summary(&self, names: &dyn Fn(ClassId) -> String) -> String {
        let mut counts = std::collections::BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        let mut s = format!(
            "origin {:?}\nedge {}\ndims {:?}\n",
            self.spec.origin, self.spec.edge, self.spec.dims
        );
        for (c, n) in counts {
            s.push_str(&format!("{} {}\n", names(c), n));
        }
        s
    }
}
