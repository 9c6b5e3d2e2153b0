//! Top-down class image of the ground surface.

use std::fmt::Write;

use delaunator::{triangulate, Point};

use crate::classes::{ClassId, ClassMap, UNLABELED};
use crate::error::{Error, Result};

use super::ClassField;

/// Pixel value outside the ground triangulation.
pub const VOID: ClassId = UNLABELED;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassImage {
    /// xy of the minimum corner of pixel (0, 0).
    pub origin: [f64; 2],
    pub cell: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major, row `j` spans `y ∈ [origin.y + j·cell, origin.y + (j+1)·cell)`.
    pub pixels: Vec<ClassId>,
}

impl ClassImage {
    pub fn get(&self, i: usize, j: usize) -> ClassId {
        self.pixels[j * self.width + i]
    }

    pub fn pixel_center(&self, i: usize, j: usize) -> [f64; 2] {
        [self.origin[0] + (i as f64 + 0.5) * self.cell, self.origin[1] + (j as f64 + 0.5) * self.cell]
    }

    /// Binary PPM with +y up; void pixels are mid grey.
    pub fn to_ppm(&self, classes: &ClassMap) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for j in (0..self.height).rev() {
            for i in 0..self.width {
                let c = self.get(i, j);
                out.extend(if c == VOID { [128, 128, 128] } else { classes.color(c) });
            }
        }
        out
    }

    /// Binary 16-bit PGM of raw class ids with +y up; void is 65535.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for j in (0..self.height).rev() {
            for i in 0..self.width {
                out.extend(self.get(i, j).to_be_bytes());
            }
        }
        out
    }

    /// `id r g b name` per class, for reading the PGM.
    pub fn palette(classes: &ClassMap) -> String {
        let mut s = String::from("# id r g b name\n");
        for c in classes.classes() {
            let [r, g, b] = classes.color(c.id);
            writeln!(s, "{} {r} {g} {b} {}", c.id, c.name).unwrap();
        }
        writeln!(s, "{VOID} 128 128 128 void").unwrap();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundImageStats {
    pub ground_points: usize,
    pub triangles: usize,
}

/// Segments `points`, triangulates those predicted as a ground class, and
/// labels each pixel by the ground-class argmax on the interpolated surface.
pub fn ground_image<F: ClassField>(
    field: &F,
    points: &[[f64; 3]],
    ground: &[ClassId],
    cell: f64,
) -> Result<(ClassImage, GroundImageStats)> {
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(Error::Argument(format!("image cell must be positive, got {cell}")));
    }
    if ground.is_empty() || ground.iter().any(|&c| c == 0 || c as usize > field.num_classes()) {
        return Err(Error::Argument("ground class set must be non-empty semantic classes".into()));
    }
    let classes = field.semantic_class(points)?;
    let pts: Vec<[f64; 3]> = points.iter().zip(&classes).filter(|(_, c)| ground.contains(c)).map(|(p, _)| *p).collect();
    if pts.len() < 3 {
        return Err(Error::Extraction(format!("only {} points predicted as ground; need at least 3", pts.len())));
    }
    let t = triangulate(&pts.iter().map(|p| Point { x: p[0], y: p[1] }).collect::<Vec<_>>());
    if t.triangles.is_empty() {
        return Err(Error::Extraction("ground points are collinear".into()));
    }
    let tris: Vec<[usize; 3]> = t.triangles.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pts {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let width = (((hi[0] - lo[0]) / cell).ceil() as usize).max(1);
    let height = (((hi[1] - lo[1]) / cell).ceil() as usize).max(1);
    let mut img = ClassImage { origin: lo, cell, width, height, pixels: vec![VOID; width * height] };

    // bucket triangles by the pixels their bounding boxes cover
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); width * height];
    let pix = |v: f64, a: usize, n: usize| (((v - lo[a]) / cell).floor().max(0.0) as usize).min(n - 1);
    for (ti, tri) in tris.iter().enumerate() {
        let xs = tri.map(|i| pts[i][0]);
        let ys = tri.map(|i| pts[i][1]);
        let (i0, i1) = (pix(xs.iter().copied().fold(f64::INFINITY, f64::min), 0, width), pix(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max), 0, width));
        let (j0, j1) = (pix(ys.iter().copied().fold(f64::INFINITY, f64::min), 1, height), pix(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1, height));
        for j in j0..=j1 {
            for i in i0..=i1 {
                buckets[j * width + i].push(ti as u32);
            }
        }
    }

    let mut queries = Vec::new();
    let mut slots = Vec::new();
    for j in 0..height {
        for i in 0..width {
            let [x, y] = img.pixel_center(i, j);
            let hit = buckets[j * width + i].iter().find_map(|&ti| {
                let [a, b, c] = tris[ti as usize].map(|k| pts[k]);
                let d = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
                if d.abs() < 1e-300 {
                    return None;
                }
                let l1 = ((b[1] - c[1]) * (x - c[0]) + (c[0] - b[0]) * (y - c[1])) / d;
                let l2 = ((c[1] - a[1]) * (x - c[0]) + (a[0] - c[0]) * (y - c[1])) / d;
                let l3 = 1.0 - l1 - l2;
                let eps = -1e-12;
                (l1 >= eps && l2 >= eps && l3 >= eps).then(|| l1 * a[2] + l2 * b[2] + l3 * c[2])
            });
            if let Some(z) = hit {
                queries.push([x, y, z]);
                slots.push(j * width + i);
            }
        }
    }
    if !queries.is_empty() {
        for (slot, p) in slots.into_iter().zip(field.probabilities(&queries)?) {
            let mut best = ground[0];
            for &g in ground {
                if p[g as usize - 1] > p[best as usize - 1] {
                    best = g;
                }
            }
            img.pixels[slot] = best;
        }
    }
    Ok((img, GroundImageStats { ground_points: pts.len(), triangles: tris.len() }))
}
