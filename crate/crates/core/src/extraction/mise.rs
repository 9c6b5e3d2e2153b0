//! Coarse-to-fine isosurface extraction of the free-space probability.

use std::collections::HashMap;

use crate::classes::UNLABELED;
use crate::error::{Error, Result};
use crate::geometry::SceneExtent;

use super::mc_table::TRI_TABLE;
use super::{ClassField, TriMesh};

pub const DEFAULT_THETA_FREE: f64 = 0.3;

/// Corner offsets in marching-cubes order.
const CORNERS: [[u32; 3]; 8] = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];
const EDGES: [[usize; 2]; 12] = [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiseParams {
    pub theta_free: f64,
    /// Cell edge of the first evaluation pass.
    pub coarse_edge: f64,
    /// Cell edge marching cubes runs at; `coarse_edge / 2^k`.
    pub final_edge: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshOutput {
    pub mesh: TriMesh,
    /// Distinct lattice points the field was queried at.
    pub evaluations: usize,
    /// Point count of a dense pass at the final resolution.
    pub dense_evaluations: usize,
}

type Key = [u32; 3];

/// Final-resolution lattice anchored at the extent's minimum corner.
struct Lattice {
    origin: [f64; 3],
    edge: f64,
    /// Final cells per axis.
    cells: [u32; 3],
    /// Final cells per coarse cell edge.
    ratio: u32,
}

impl Lattice {
    fn new(extent: &SceneExtent, p: &MiseParams) -> Result<Self> {
        if !(p.theta_free > 0.0 && p.theta_free < 1.0) {
            return Err(Error::Argument(format!("theta_free must lie in (0, 1), got {}", p.theta_free)));
        }
        if !(p.final_edge > 0.0 && p.coarse_edge >= p.final_edge) {
            return Err(Error::Argument("need 0 < final_edge ≤ coarse_edge".into()));
        }
        let r = p.coarse_edge / p.final_edge;
        let ratio = r.round() as u32;
        if (r - ratio as f64).abs() > 1e-9 * r || !ratio.is_power_of_two() {
            return Err(Error::Argument(format!(
                "coarse_edge / final_edge must be a power of two, got {r}"
            )));
        }
        let mut cells = [0u32; 3];
        for a in 0..3 {
            let coarse = ((extent.max[a] - extent.min[a]) / p.coarse_edge - 1e-9).ceil().max(1.0);
            let n = coarse * ratio as f64;
            if n > (1u64 << 20) as f64 {
                return Err(Error::Argument("mesh lattice too fine for the extent".into()));
            }
            cells[a] = n as u32;
        }
        Ok(Self { origin: extent.min, edge: p.final_edge, cells, ratio })
    }

    fn position(&self, k: Key) -> [f64; 3] {
        [0, 1, 2].map(|a| self.origin[a] + k[a] as f64 * self.edge)
    }

    fn dense_points(&self) -> usize {
        self.cells.iter().map(|&n| n as usize + 1).product()
    }
}

/// Queries the field at keys not yet cached, in key order.
fn evaluate<F: ClassField>(field: &F, lat: &Lattice, cache: &mut HashMap<Key, f64>, mut keys: Vec<Key>) -> Result<()> {
    keys.retain(|k| !cache.contains_key(k));
    keys.sort_unstable_by_key(|k| [k[2], k[1], k[0]]);
    keys.dedup();
    if keys.is_empty() {
        return Ok(());
    }
    let points: Vec<[f64; 3]> = keys.iter().map(|&k| lat.position(k)).collect();
    for (k, v) in keys.into_iter().zip(field.free(&points)?) {
        cache.insert(k, v);
    }
    Ok(())
}

fn cell_corners(c: Key, size: u32) -> [Key; 8] {
    CORNERS.map(|o| [c[0] + o[0] * size, c[1] + o[1] * size, c[2] + o[2] * size])
}

/// The cell and its up to 26 face, edge and corner neighbors of the same size.
fn neighbors(c: Key, size: u32, cells: [u32; 3]) -> impl Iterator<Item = Key> {
    let range = move |a: usize| {
        let lo = if c[a] >= size { c[a] - size } else { c[a] };
        let hi = if c[a] + 2 * size <= cells[a] { c[a] + size } else { c[a] };
        (lo..=hi).step_by(size as usize)
    };
    range(2).flat_map(move |z| range(1).flat_map(move |y| range(0).map(move |x| [x, y, z])))
}

/// Bitmask of corners that are free (probability ≥ theta); with this sign
/// the table's winding puts face normals on the free side.
fn case_index(values: &[f64; 8], theta: f64) -> usize {
    values.iter().enumerate().fold(0, |m, (i, &v)| if v >= theta { m | 1 << i } else { m })
}

fn straddles(values: &[f64; 8], theta: f64) -> bool {
    let c = case_index(values, theta);
    c != 0 && c != 255
}

fn corner_values(cache: &HashMap<Key, f64>, c: Key, size: u32) -> [f64; 8] {
    cell_corners(c, size).map(|k| cache[&k])
}

/// Marching cubes over final-resolution `cells`, vertices welded per lattice edge.
fn march(lat: &Lattice, cache: &HashMap<Key, f64>, mut cells: Vec<Key>, theta: f64) -> TriMesh {
    cells.sort_unstable_by_key(|k| [k[2], k[1], k[0]]);
    let mut mesh = TriMesh::default();
    let mut welded: HashMap<(Key, Key), u32> = HashMap::new();
    for c in cells {
        let keys = cell_corners(c, 1);
        let values = keys.map(|k| cache[&k]);
        let case = case_index(&values, theta);
        let row = &TRI_TABLE[case];
        let mut i = 0;
        while i < 16 && row[i] >= 0 {
            let mut face = [0u32; 3];
            for (slot, &e) in face.iter_mut().zip(&row[i..i + 3]) {
                let [a, b] = EDGES[e as usize];
                let (ka, kb) = if keys[a] < keys[b] { (keys[a], keys[b]) } else { (keys[b], keys[a]) };
                *slot = *welded.entry((ka, kb)).or_insert_with(|| {
                    let (va, vb) = (cache[&ka], cache[&kb]);
                    let t = (theta - va) / (vb - va);
                    let (pa, pb) = (lat.position(ka), lat.position(kb));
                    mesh.vertices.push([0, 1, 2].map(|d| pa[d] + t * (pb[d] - pa[d])));
                    mesh.vertices.len() as u32 - 1
                });
            }
            mesh.faces.push(face);
            mesh.face_class.push(UNLABELED);
            i += 3;
        }
    }
    mesh.remove_degenerate(1e-12 * lat.edge * lat.edge);
    mesh
}

/// Subdivides only cells whose corners straddle `theta_free`, from
/// `coarse_edge` down to `final_edge`, then runs marching cubes there.
pub fn mise_mesh<F: ClassField>(field: &F, extent: &SceneExtent, p: &MiseParams) -> Result<MeshOutput> {
    let lat = Lattice::new(extent, p)?;
    let mut cache = HashMap::new();
    let mut size = lat.ratio;
    let coarse = lat.cells.map(|n| n / lat.ratio);
    let mut active: Vec<Key> = Vec::new();
    for k in 0..coarse[2] {
        for j in 0..coarse[1] {
            for i in 0..coarse[0] {
                active.push([i * size, j * size, k * size]);
            }
        }
    }
    loop {
        let needed: Vec<Key> = active.iter().flat_map(|&c| cell_corners(c, size)).collect();
        evaluate(field, &lat, &mut cache, needed)?;
        active.retain(|&c| straddles(&corner_values(&cache, c, size), p.theta_free));
        if size == 1 {
            break;
        }
        // neighbors of straddling cells are refined too, catching surfaces
        // that clip a coarse cell without flipping any of its corners
        let mut grown: Vec<Key> = active.iter().flat_map(|&c| neighbors(c, size, lat.cells)).collect();
        grown.sort_unstable_by_key(|k| [k[2], k[1], k[0]]);
        grown.dedup();
        let half = size / 2;
        active = grown
            .iter()
            .flat_map(|&c| CORNERS.map(|o| [c[0] + o[0] * half, c[1] + o[1] * half, c[2] + o[2] * half]))
            .collect();
        size = half;
    }
    Ok(MeshOutput {
        mesh: march(&lat, &cache, active, p.theta_free),
        evaluations: cache.len(),
        dense_evaluations: lat.dense_points(),
    })
}

/// Marching cubes on every final-resolution cell.
pub fn dense_mesh<F: ClassField>(field: &F, extent: &SceneExtent, p: &MiseParams) -> Result<MeshOutput> {
    let lat = Lattice::new(extent, p)?;
    let mut keys = Vec::with_capacity(lat.dense_points());
    for k in 0..=lat.cells[2] {
        for j in 0..=lat.cells[1] {
            for i in 0..=lat.cells[0] {
                keys.push([i, j, k]);
            }
        }
    }
    let mut cache = HashMap::new();
    evaluate(field, &lat, &mut cache, keys)?;
    let mut cells = Vec::new();
    for k in 0..lat.cells[2] {
        for j in 0..lat.cells[1] {
            for i in 0..lat.cells[0] {
                if straddles(&corner_values(&cache, [i, j, k], 1), p.theta_free) {
                    cells.push([i, j, k]);
                }
            }
        }
    }
    Ok(MeshOutput { mesh: march(&lat, &cache, cells, p.theta_free), evaluations: cache.len(), dense_evaluations: lat.dense_points() })
}
