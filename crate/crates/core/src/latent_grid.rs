//! Multi-resolution 2D grid of conditioning vectors and the support-region
//! geometry that blends the four nearest local functions.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container::{ChunkReader, ChunkWriter, Container};
use crate::error::{Error, Result};
use crate::geometry::SceneExtent;
use crate::num::Real;

/// Cell-size ratios of the three hierarchy levels, coarsest first.
pub const RATIOS: [usize; 3] = [16, 4, 1];
pub const DEFAULT_DELTA: f64 = 0.32;
pub const DEFAULT_FEATURE_DIMS: [usize; 3] = [256, 256, 128];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Finest cell edge in meters.
    pub delta: f64,
    /// xy position of the grid's lower corner.
    pub origin: [f64; 2],
    /// Finest-level `(rows, cols)`; rows run along y, cols along x.
    pub cells: [usize; 2],
    pub feature_dims: [usize; 3],
}

impl GridConfig {
    pub fn new(delta: f64, origin: [f64; 2], cells: [usize; 2], feature_dims: [usize; 3]) -> Result<Self> {
        let c = Self { delta, origin, cells, feature_dims };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Argument(format!("grid delta must be positive, got {}", self.delta)));
        }
        for &n in &self.cells {
            if n == 0 || n % RATIOS[0] != 0 {
                return Err(Error::Argument(format!(
                    "grid cells {:?} must be positive multiples of {}",
                    self.cells, RATIOS[0]
                )));
            }
        }
        if self.feature_dims.iter().any(|&d| d == 0) {
            return Err(Error::Argument("feature dims must be positive".into()));
        }
        Ok(())
    }

    /// Smallest grid centered on `extent` whose support domain covers its xy footprint.
    pub fn covering(extent: &SceneExtent, delta: f64, feature_dims: [usize; 3]) -> Result<Self> {
        let size = extent.size();
        let cells = [1, 0].map(|a| {
            let n = ((size[a] + delta) / delta - 1e-9).ceil() as usize;
            n.div_ceil(RATIOS[0]) * RATIOS[0]
        });
        let cx = 0.5 * (extent.min[0] + extent.max[0]);
        let cy = 0.5 * (extent.min[1] + extent.max[1]);
        let origin = [cx - cells[1] as f64 * delta / 2.0, cy - cells[0] as f64 * delta / 2.0];
        Self::new(delta, origin, cells, feature_dims)
    }

    pub fn cell_edge(&self, level: usize) -> f64 {
        self.delta * RATIOS[level] as f64
    }

    pub fn level_shape(&self, level: usize) -> [usize; 2] {
        [self.cells[0] / RATIOS[level], self.cells[1] / RATIOS[level]]
    }

    pub fn level_len(&self, level: usize) -> usize {
        let [r, c] = self.level_shape(level);
        r * c
    }

    pub fn flat(&self, level: usize, cell: [usize; 2]) -> usize {
        cell[0] * self.level_shape(level)[1] + cell[1]
    }

    pub fn cell_center(&self, level: usize, cell: [usize; 2]) -> [f64; 2] {
        let e = self.cell_edge(level);
        [
            self.origin[0] + (cell[1] as f64 + 0.5) * e,
            self.origin[1] + (cell[0] as f64 + 0.5) * e,
        ]
    }

    /// Cell at `level` containing the xy position; the upper boundary belongs
    /// to the last cell.
    pub fn containing_cell(&self, level: usize, x: f64, y: f64) -> [usize; 2] {
        let e = self.cell_edge(level);
        let [rows, cols] = self.level_shape(level);
        let c = (((x - self.origin[0]) / e).floor().max(0.0) as usize).min(cols - 1);
        let r = (((y - self.origin[1]) / e).floor().max(0.0) as usize).min(rows - 1);
        [r, c]
    }

    /// xy bounds `[min, max]` of positions that have a full support region.
    pub fn support_domain(&self) -> ([f64; 2], [f64; 2]) {
        let h = 0.5 * self.delta;
        (
            [self.origin[0] + h, self.origin[1] + h],
            [
                self.origin[0] + self.cells[1] as f64 * self.delta - h,
                self.origin[1] + self.cells[0] as f64 * self.delta - h,
            ],
        )
    }

    pub fn in_domain(&self, x: f64, y: f64) -> bool {
        let (lo, hi) = self.support_domain();
        x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    /// Finest-level `(row, col)`.
    pub cell: [usize; 2],
    /// Level-1 and level-2 cells containing the query.
    pub coarse: [[usize; 2]; 2],
    /// Query relative to the level-1, level-2 and finest cell centers.
    pub rel: [[f64; 3]; 3],
    pub weight: f64,
    /// d weight / d (x, y).
    pub dweight: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportRegion {
    /// Ordered `(r0,c0), (r0,c0+1), (r0+1,c0), (r0+1,c0+1)`.
    pub supports: [Support; 4],
}

/// The four finest cells whose centers surround `p`, with bilinear weights.
pub fn support_region(p: [f64; 3], config: &GridConfig) -> Result<SupportRegion> {
    let [x, y, z] = p;
    if !(x.is_finite() && y.is_finite() && z.is_finite()) || !config.in_domain(x, y) {
        return Err(Error::OutOfDomain { x, y });
    }
    let d = config.delta;
    let [rows, cols] = config.cells;
    let u = (x - config.origin[0]) / d - 0.5;
    let v = (y - config.origin[1]) / d - 0.5;
    let c0 = (u.floor().max(0.0) as usize).min(cols - 2);
    let r0 = (v.floor().max(0.0) as usize).min(rows - 2);
    let tx = u - c0 as f64;
    let ty = v - r0 as f64;

    let coarse = [config.containing_cell(0, x, y), config.containing_cell(1, x, y)];
    let rel_coarse = [0, 1].map(|l| {
        let [cx, cy] = config.cell_center(l, coarse[l]);
        [x - cx, y - cy, z]
    });

    let make = |dr: usize, dc: usize| {
        let (wx, dwx) = if dc == 0 { (1.0 - tx, -1.0 / d) } else { (tx, 1.0 / d) };
        let (wy, dwy) = if dr == 0 { (1.0 - ty, -1.0 / d) } else { (ty, 1.0 / d) };
        let cell = [r0 + dr, c0 + dc];
        let [cx, cy] = config.cell_center(2, cell);
        Support {
            cell,
            coarse,
            rel: [rel_coarse[0], rel_coarse[1], [x - cx, y - cy, z]],
            weight: wx * wy,
            dweight: [dwx * wy, wx * dwy],
        }
    };
    Ok(SupportRegion {
        supports: [make(0, 0), make(0, 1), make(1, 0), make(1, 1)],
    })
}

/// Conditioning vectors stored per level as `(cells, feature_dim)` matrices,
/// cells in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid<T> {
    pub config: GridConfig,
    pub levels: [Array2<T>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatheredSupport<T> {
    pub c1: Vec<T>,
    pub c2: Vec<T>,
    pub c3: Vec<T>,
    pub p1: [f64; 3],
    pub p2: [f64; 3],
    pub p3: [f64; 3],
    pub weight: f64,
}

impl<T: Real> LatentGrid<T> {
    pub fn zeros(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let levels = [0, 1, 2].map(|l| Array2::zeros((config.level_len(l), config.feature_dims[l])));
        Ok(Self { config, levels })
    }

    /// Entries drawn i.i.d. from `N(0, std²)`.
    pub fn random<R: Rng>(config: GridConfig, std: f64, rng: &mut R) -> Result<Self> {
        let mut g = Self::zeros(config)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::Argument(format!("latent std: {e}")))?;
        for level in g.levels.iter_mut() {
            level.map_inplace(|v| *v = T::lit(normal.sample(rng)));
        }
        Ok(g)
    }

    pub fn vector(&self, level: usize, cell: [usize; 2]) -> ndarray::ArrayView1<'_, T> {
        self.levels[level].row(self.config.flat(level, cell))
    }

    pub fn set_vector(&mut self, level: usize, cell: [usize; 2], values: &[T]) {
        let idx = self.config.flat(level, cell);
        self.levels[level]
            .row_mut(idx)
            .iter_mut()
            .zip(values)
            .for_each(|(d, s)| *d = *s);
    }

    pub fn gather(&self, region: &SupportRegion) -> Vec<GatheredSupport<T>> {
        region
            .supports
            .iter()
            .map(|s| {
                for (l, cell) in [(0, s.coarse[0]), (1, s.coarse[1]), (2, s.cell)] {
                    let [r, c] = self.config.level_shape(l);
                    assert!(cell[0] < r && cell[1] < c, "support cell {cell:?} outside level {l} ({r}x{c})");
                }
                GatheredSupport {
                    c1: self.vector(0, s.coarse[0]).to_vec(),
                    c2: self.vector(1, s.coarse[1]).to_vec(),
                    c3: self.vector(2, s.cell).to_vec(),
                    p1: s.rel[0],
                    p2: s.rel[1],
                    p3: s.rel[2],
                    weight: s.weight,
                }
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.levels.iter().all(|l| l.iter().all(|v| v.is_finite()))
    }

    pub fn write_chunks(&self, c: &mut Container) {
        c.push(b"GCFG", encode_grid_config(&self.config));
        for (tag, level) in [b"LAT1", b"LAT2", b"LAT3"].iter().zip(&self.levels) {
            let mut w = ChunkWriter::new();
            w.u64(level.nrows() as u64).u64(level.ncols() as u64);
            w.array(level.as_slice().expect("standard layout"));
            c.push(tag, w.finish());
        }
    }

    pub fn read_chunks(c: &Container) -> Result<Self> {
        let config = decode_grid_config(c.chunk(b"GCFG")?)?;
        let mut levels = Vec::with_capacity(3);
        for (l, tag) in [b"LAT1", b"LAT2", b"LAT3"].iter().enumerate() {
            let mut r = ChunkReader::new(c.chunk(tag)?);
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            if rows != config.level_len(l) || cols != config.feature_dims[l] {
                return Err(Error::Format(format!(
                    "latent level {l} has shape {rows}x{cols}, config requires {}x{}",
                    config.level_len(l),
                    config.feature_dims[l]
                )));
            }
            let data = r.array::<T>()?;
            levels.push(Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))?);
        }
        let levels: [Array2<T>; 3] = levels.try_into().expect("three levels");
        Ok(Self { config, levels })
    }
}

pub fn encode_grid_config(g: &GridConfig) -> Vec<u8> {
    let mut w = ChunkWriter::new();
    w.f64(g.delta).f64(g.origin[0]).f64(g.origin[1]);
    w.u64(g.cells[0] as u64).u64(g.cells[1] as u64);
    for d in g.feature_dims {
        w.u64(d as u64);
    }
    w.finish()
}

pub fn decode_grid_config(bytes: &[u8]) -> Result<GridConfig> {
    let mut r = ChunkReader::new(bytes);
    let delta = r.f64()?;
    let origin = [r.f64()?, r.f64()?];
    let cells = [r.u64()? as usize, r.u64()? as usize];
    let feature_dims = [r.u64()? as usize, r.u64()? as usize, r.u64()? as usize];
    GridConfig::new(delta, origin, cells, feature_dims)
}

/// Blends per-support probability vectors: `f = Σ w · f_L`.
pub fn compose<T: Real>(per_support: &[Vec<T>], weights: &[T]) -> Result<Vec<T>> {
    if per_support.len() != weights.len() || per_support.is_empty() {
        return Err(Error::Argument(format!(
            "compose: {} distributions for {} weights",
            per_support.len(),
            weights.len()
        )));
    }
    let k = per_support[0].len();
    if per_support.iter().any(|p| p.len() != k) {
        return Err(Error::Argument("compose: distributions differ in length".into()));
    }
    let mut out = vec![T::zero(); k];
    for (p, &w) in per_support.iter().zip(weights) {
        for (o, &v) in out.iter_mut().zip(p) {
            *o += w * v;
        }
    }
    Ok(out)
}
