//! Models and analytic fields shared by the extraction tests and the
//! acceptance suite.
#![allow(dead_code)]

use std::collections::HashSet;

use localdif::classes::{ClassId, FREE};
use localdif::decoder::{DecoderParams, Predictor};
use localdif::error::Result;
use localdif::extraction::{argmax_class, ClassField, TriMesh};
use localdif::geometry::SceneExtent;
use localdif::latent_grid::{GridConfig, LatentGrid};
use localdif::rng::substream;
use localdif::voxel::VoxelGridSpec;
use rand::Rng;

pub const DIMS: [usize; 3] = [6, 5, 4];
pub const N: usize = 3;

pub fn random_model(seed: u64) -> (DecoderParams<f64>, LatentGrid<f64>) {
    random_model_with(seed, 0.9, 1.0)
}

pub fn random_model_with(seed: u64, weight: f64, latent_std: f64) -> (DecoderParams<f64>, LatentGrid<f64>) {
    let mut rng = substream(seed, "model", 0);
    let mut p = DecoderParams::<f64>::init(DIMS, N, &mut rng).unwrap();
    for s in p.weights.slices_mut() {
        for v in s.iter_mut() {
            *v = rng.random_range(-weight..weight);
        }
    }
    let cfg = GridConfig::new(0.32, [0.0, 0.0], [16, 16], DIMS).unwrap();
    let g = LatentGrid::random(cfg, latent_std, &mut rng).unwrap();
    (p, g)
}

/// Smoothed ball of radius `r` whose free probability crosses `theta` at the
/// sphere; classes split by the sign of `x − center.x`.
pub struct Ball {
    pub center: [f64; 3],
    pub r: f64,
    pub soft: f64,
    pub theta: f64,
    pub single_class: bool,
}

impl Ball {
    pub fn new(r: f64, theta: f64) -> Self {
        Self { center: [0.1, -0.2, 0.05], r, soft: 0.6, theta, single_class: false }
    }

    pub fn dist(&self, p: &[f64; 3]) -> f64 {
        (0..3).map(|a| (p[a] - self.center[a]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn free_of(&self, d: f64) -> f64 {
        let shift = (self.theta / (1.0 - self.theta)).ln();
        1.0 / (1.0 + (-((d - self.r) / self.soft + shift)).exp())
    }
}

impl ClassField for Ball {
    fn num_classes(&self) -> usize {
        2
    }

    fn probabilities(&self, points: &[[f64; 3]]) -> Result<Vec<Vec<f64>>> {
        Ok(points
            .iter()
            .map(|p| {
                let f = self.free_of(self.dist(p));
                let a = if self.single_class || p[0] < self.center[0] { 0.8 } else { 0.3 };
                vec![a * (1.0 - f), (1.0 - a) * (1.0 - f), f]
            })
            .collect())
    }

    fn free_with_gradient(&self, points: &[[f64; 3]]) -> Result<Vec<(f64, [f64; 3])>> {
        Ok(points
            .iter()
            .map(|p| {
                let d = self.dist(p);
                let f = self.free_of(d);
                let s = f * (1.0 - f) / self.soft / d.max(1e-300);
                (f, [0, 1, 2].map(|a| s * (p[a] - self.center[a])))
            })
            .collect())
    }
}

/// Every voxel decided from its own eight corner queries.
pub fn brute_force_voxelize(model: &Predictor<'_, f64>, spec: &VoxelGridSpec, theta: f64) -> Vec<ClassId> {
    let mut out = vec![FREE; spec.len()];
    for li in 0..spec.len() {
        let v = spec.unlinear(li);
        let mut corners = Vec::new();
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let c = [v[0] as usize + dx, v[1] as usize + dy, v[2] as usize + dz];
                    corners.push(spec.corner_position(c).into());
                }
            }
        }
        let probs = model.predict(&corners).unwrap();
        let mut acc = vec![0.0; N];
        let mut any = false;
        for p in &probs {
            if p[N] < theta {
                any = true;
                for k in 0..N {
                    acc[k] += p[k];
                }
            }
        }
        if any {
            out[li] = argmax_class(&acc);
        }
    }
    out
}

pub fn test_spec() -> VoxelGridSpec {
    VoxelGridSpec::new([0.9, 1.1, -0.4], 0.37, [8, 8, 8]).unwrap()
}

pub fn cube(lo: f64, hi: f64) -> SceneExtent {
    SceneExtent::new([lo; 3], [hi; 3]).unwrap()
}

/// Faces as rotation-normalized position triples.
pub fn assert_same_triangles(a: &TriMesh, b: &TriMesh) {
    let (sa, sb) = (triangle_set(a), triangle_set(b));
    let only_a = sa.difference(&sb).count();
    let only_b = sb.difference(&sa).count();
    assert!(only_a == 0 && only_b == 0, "{only_a} triangles only in the first mesh, {only_b} only in the second (of {})", sb.len());
}

pub fn triangle_set(m: &TriMesh) -> HashSet<[[u64; 3]; 3]> {
    m.faces
        .iter()
        .map(|f| {
            let v = f.map(|i| m.vertices[i as usize].map(f64::to_bits));
            let k = (0..3).min_by_key(|&k| v[k]).unwrap();
            [v[k], v[(k + 1) % 3], v[(k + 2) % 3]]
        })
        .collect()
}

/// Ground slab with a box and an upright cylinder, free probability a
/// logistic of the signed distance to their union.
pub struct Block;

impl Block {
    pub fn sdf(p: &[f64; 3]) -> f64 {
        let ground = p[2];
        let q = [(p[0] - 1.0).abs() - 1.2, (p[1] + 0.5).abs() - 0.8, (p[2] - 0.7).abs() - 0.7];
        let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
        let bx = outside + q[0].max(q[1]).max(q[2]).min(0.0);
        let r = ((p[0] + 1.5).powi(2) + (p[1] - 1.2).powi(2)).sqrt() - 0.45;
        let cyl = r.max((p[2] - 1.1).abs() - 1.1);
        ground.min(bx).min(cyl)
    }
}

impl ClassField for Block {
    fn num_classes(&self) -> usize {
        1
    }
    fn probabilities(&self, pts: &[[f64; 3]]) -> Result<Vec<Vec<f64>>> {
        Ok(pts
            .iter()
            .map(|p| {
                let f = 1.0 / (1.0 + (-Block::sdf(p) / 0.1).exp());
                vec![1.0 - f, f]
            })
            .collect())
    }
    fn free_with_gradient(&self, _: &[[f64; 3]]) -> Result<Vec<(f64, [f64; 3])>> {
        unimplemented!()
    }
}
