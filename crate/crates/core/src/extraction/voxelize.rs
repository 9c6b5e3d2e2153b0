use ndarray::Array2;

use crate::classes::{ClassId, FREE};
use crate::decoder::Predictor;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::voxel::VoxelGridSpec;

use super::VoxelGrid;

pub const DEFAULT_THETA_EMPTY: f64 = 0.04;

/// Class distributions at every lattice corner of a voxel grid, each corner
/// evaluated once.
#[derive(Debug, Clone)]
pub struct CornerField<T> {
    pub spec: VoxelGridSpec,
    /// `(corners, N+1)`, free space last.
    pub probs: Array2<T>,
}

impl<T: Real> CornerField<T> {
    pub fn evaluate(model: &Predictor<'_, T>, spec: &VoxelGridSpec) -> Result<Self> {
        let [cx, cy, cz] = spec.corner_dims();
        let mut points = Vec::with_capacity(cx * cy * cz);
        for k in 0..cz {
            for j in 0..cy {
                for i in 0..cx {
                    let p = spec.corner_position([i, j, k]);
                    if !model.grid.config.in_domain(p.x, p.y) {
                        return Err(Error::Extraction(format!(
                            "voxel corner ({:.3}, {:.3}) lies outside the latent grid's support domain; inset the voxel grid",
                            p.x, p.y
                        )));
                    }
                    points.push(p.into());
                }
            }
        }
        let probs = model.predict(&points)?;
        let k = model.params.num_logits();
        Ok(Self { spec: *spec, probs: crate::decoder::rows_to_array(&probs, k) })
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols() - 1
    }

    pub fn free(&self, corner: usize) -> T {
        self.probs[[corner, self.probs.ncols() - 1]]
    }

    pub fn corner_ids(&self, v: [usize; 3]) -> [usize; 8] {
        let mut out = [0; 8];
        let mut n = 0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    out[n] = self.spec.corner_linear([v[0] + dx, v[1] + dy, v[2] + dz]);
                    n += 1;
                }
            }
        }
        out
    }

    /// Corner rule: a corner is occupied iff its free probability is below
    /// `theta`; a voxel is occupied iff any corner is, labeled by the argmax
    /// over semantic classes of its occupied corners' mean distribution.
    pub fn voxelize(&self, theta: f64) -> Result<VoxelGrid> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::Argument(format!("theta_empty must lie in (0, 1), got {theta}")));
        }
        let theta = T::lit(theta);
        let n = self.num_classes();
        let [nx, ny, nz] = self.spec.dims;
        let mut labels = vec![FREE; self.spec.len()];
        let mut acc = vec![T::zero(); n];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    acc.iter_mut().for_each(|a| *a = T::zero());
                    let mut any = false;
                    for c in self.corner_ids([i, j, k]) {
                        if self.free(c) < theta {
                            any = true;
                            for (a, &p) in acc.iter_mut().zip(self.probs.row(c).iter()) {
                                *a += p;
                            }
                        }
                    }
                    if any {
                        labels[self.spec.linear(&[i as i64, j as i64, k as i64])] = argmax_class(&acc);
                    }
                }
            }
        }
        Ok(VoxelGrid { spec: self.spec, labels })
    }
}

/// 1-based index of the largest entry; the first wins ties.
pub fn argmax_class<T: Real>(semantic: &[T]) -> ClassId {
    let mut best = 0;
    for (i, &v) in semantic.iter().enumerate() {
        if v > semantic[best] {
            best = i;
        }
    }
    best as ClassId + 1
}

pub fn voxelize<T: Real>(model: &Predictor<'_, T>, spec: &VoxelGridSpec, theta_empty: f64) -> Result<VoxelGrid> {
    CornerField::evaluate(model, spec)?.voxelize(theta_empty)
}
