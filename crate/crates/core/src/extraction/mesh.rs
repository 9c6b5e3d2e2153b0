use std::fmt::Write;

use crate::classes::{ClassId, ClassMap, UNLABELED};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

use super::ClassField;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    /// UNLABELED until colored.
    pub face_class: Vec<ClassId>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| Vec3::from(self.vertices[i as usize]));
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn centroid(&self, f: usize) -> [f64; 3] {
        let [a, b, c] = self.faces[f].map(|i| Vec3::from(self.vertices[i as usize]));
        ((a + b + c) / 3.0).into()
    }

    pub fn validate(&self) -> Result<()> {
        if self.face_class.len() != self.faces.len() {
            return Err(Error::Data(format!("{} face classes for {} faces", self.face_class.len(), self.faces.len())));
        }
        let n = self.vertices.len() as u32;
        if self.faces.iter().flatten().any(|&i| i >= n) {
            return Err(Error::Data("face index out of range".into()));
        }
        Ok(())
    }

    /// Drops faces with repeated indices or area at most `min_area`, then
    /// unreferenced vertices. Relative order is kept.
    pub fn remove_degenerate(&mut self, min_area: f64) {
        let keep: Vec<bool> = (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.faces[f];
                a != b && b != c && a != c && self.face_area(f) > min_area
            })
            .collect();
        let mut k = keep.iter();
        self.faces.retain(|_| *k.next().expect("one flag per face"));
        let mut k = keep.iter();
        self.face_class.retain(|_| *k.next().expect("one flag per face"));

        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        for f in &mut self.faces {
            for i in f.iter_mut() {
                if remap[*i as usize] == u32::MAX {
                    remap[*i as usize] = vertices.len() as u32;
                    vertices.push(self.vertices[*i as usize]);
                }
                *i = remap[*i as usize];
            }
        }
        self.vertices = vertices;
    }

    /// ASCII PLY with per-face class ids and palette colors.
    pub fn to_ply(&self, classes: &ClassMap) -> String {
        let mut s = String::new();
        writeln!(s, "ply\nformat ascii 1.0\nelement vertex {}", self.vertices.len()).unwrap();
        s.push_str("property float x\nproperty float y\nproperty float z\n");
        writeln!(s, "element face {}", self.faces.len()).unwrap();
        s.push_str("property list uchar int vertex_indices\nproperty ushort class\n");
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
        for v in &self.vertices {
            writeln!(s, "{} {} {}", v[0], v[1], v[2]).unwrap();
        }
        for (f, &c) in self.faces.iter().zip(&self.face_class) {
            let [r, g, b] = if c == UNLABELED { [200, 200, 200] } else { classes.color(c) };
            writeln!(s, "3 {} {} {} {c} {r} {g} {b}", f[0], f[1], f[2]).unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineParams {
    pub theta_free: f64,
    pub iters: usize,
    pub step: f64,
}

/// Gradients below this norm leave the vertex in place.
pub const MIN_GRADIENT: f64 = 1e-9;

/// First-order projection of every vertex toward the `theta_free` level set,
/// then per-face classes from the semantic argmax at each centroid.
pub fn refine_and_color<F: ClassField>(field: &F, mesh: &TriMesh, p: &RefineParams) -> Result<TriMesh> {
    if !(p.theta_free > 0.0 && p.theta_free < 1.0) {
        return Err(Error::Argument(format!("theta_free must lie in (0, 1), got {}", p.theta_free)));
    }
    if !(p.step >= 0.0 && p.step.is_finite()) {
        return Err(Error::Argument(format!("refinement step must be nonnegative, got {}", p.step)));
    }
    mesh.validate()?;
    let mut out = mesh.clone();
    for _ in 0..p.iters {
        let fg = field.free_with_gradient(&out.vertices)?;
        for (v, (f, g)) in out.vertices.iter_mut().zip(fg) {
            let r = f - p.theta_free;
            if r.abs() < 1e-9 {
                continue;
            }
            let g = Vec3::from(g);
            let n2 = g.norm_squared();
            if n2.sqrt() < MIN_GRADIENT {
                continue;
            }
            let moved = Vec3::from(*v) - g * (p.step * r / n2);
            *v = moved.into();
        }
    }
    let centroids: Vec<[f64; 3]> = (0..out.faces.len()).map(|f| out.centroid(f)).collect();
    out.face_class = if centroids.is_empty() { Vec::new() } else { field.semantic_class(&centroids)? };
    Ok(out)
}
