//! Conditioned-batch-normalization decoder for a single local function.

mod conditioning;
mod params;
mod trunk;

pub use conditioning::{project, project_backward, CellRow, CondTables};
pub use params::{DecoderParams, DecoderWeights, NormStats, BN_EPS, BN_MOMENTUM, COND, FREE_BIAS_INIT, WIDTH};
pub use trunk::{Mode, TrunkCache, TrunkGrads};

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::Result;
use crate::latent_grid::{support_region, LatentGrid, SupportRegion};
use crate::losses::softmax;
use crate::num::Real;

/// Cached activations of [`forward`]; consumed by [`backward`].
#[derive(Debug)]
pub struct DecoderCache<T> {
    c1: Array2<T>,
    c2: Array2<T>,
    c3: Array2<T>,
    trunk: TrunkCache<T>,
}

impl<T> DecoderCache<T> {
    pub fn trunk(&self) -> &TrunkCache<T> {
        &self.trunk
    }
}

#[derive(Debug)]
pub struct DecoderGrads<T> {
    pub weights: DecoderWeights<T>,
    pub c1: Array2<T>,
    pub c2: Array2<T>,
    pub c3: Array2<T>,
    /// `(rows, 9)`: gradients for `p₁, p₂, p₃`.
    pub coords: Array2<T>,
}

/// Logits `(rows, N+1)` for rows of conditioning vectors and coordinates
/// `[p₁ | p₂ | p₃]`.
pub fn forward<T: Real>(
    params: &DecoderParams<T>,
    c1: ArrayView2<T>,
    c2: ArrayView2<T>,
    c3: ArrayView2<T>,
    coords: ArrayView2<T>,
    mode: Mode,
) -> Result<(Array2<T>, DecoderCache<T>)> {
    let musig = project(params, c1, c2, c3)?;
    let (z, trunk) = trunk::forward(params, musig, coords, mode)?;
    Ok((z, DecoderCache { c1: c1.to_owned(), c2: c2.to_owned(), c3: c3.to_owned(), trunk }))
}

pub fn backward<T: Real>(params: &DecoderParams<T>, cache: DecoderCache<T>, dz: ArrayView2<T>) -> Result<DecoderGrads<T>> {
    let DecoderCache { c1, c2, c3, trunk } = cache;
    let TrunkGrads { mut weights, musig, coords } = trunk::backward(params, trunk, dz)?;
    let (dc1, dc2, dc3) = project_backward(params, c1.view(), c2.view(), c3.view(), musig.view(), &mut weights);
    Ok(DecoderGrads { weights, c1: dc1, c2: dc2, c3: dc3, coords })
}

/// Trunk-only forward on precomputed conditioning, for table-driven batches.
pub fn forward_trunk<T: Real>(
    params: &DecoderParams<T>,
    musig: Array2<T>,
    coords: ArrayView2<T>,
    mode: Mode,
) -> Result<(Array2<T>, TrunkCache<T>)> {
    trunk::forward(params, musig, coords, mode)
}

pub fn backward_trunk<T: Real>(params: &DecoderParams<T>, cache: TrunkCache<T>, dz: ArrayView2<T>) -> Result<TrunkGrads<T>> {
    trunk::backward(params, cache, dz)
}

/// Flat per-level cell indices and coordinates of the four supports.
pub fn region_rows<T: Real>(grid: &LatentGrid<T>, region: &SupportRegion) -> ([CellRow; 4], [[T; 9]; 4]) {
    let cfg = &grid.config;
    let mut cells = [[0; 3]; 4];
    let mut coords = [[T::zero(); 9]; 4];
    for (k, s) in region.supports.iter().enumerate() {
        cells[k] = [cfg.flat(0, s.coarse[0]), cfg.flat(1, s.coarse[1]), cfg.flat(2, s.cell)];
        for l in 0..3 {
            for a in 0..3 {
                coords[k][3 * l + a] = T::lit(s.rel[l][a]);
            }
        }
    }
    (cells, coords)
}

/// Composed class distribution of length `N+1` at `p`.
pub fn predict<T: Real>(params: &DecoderParams<T>, grid: &LatentGrid<T>, p: [f64; 3]) -> Result<Vec<T>> {
    let region = support_region(p, &grid.config)?;
    let gathered = grid.gather(&region);
    let stack = |f: &dyn Fn(usize) -> Vec<T>, d: usize| {
        Array2::from_shape_vec((4, d), (0..4).flat_map(f).collect()).expect("shape")
    };
    let [d1, d2, d3] = params.feature_dims;
    let c1 = stack(&|k| gathered[k].c1.clone(), d1);
    let c2 = stack(&|k| gathered[k].c2.clone(), d2);
    let c3 = stack(&|k| gathered[k].c3.clone(), d3);
    let coords = stack(
        &|k| {
            let g = &gathered[k];
            g.p1.iter().chain(&g.p2).chain(&g.p3).map(|&v| T::lit(v)).collect()
        },
        9,
    );
    let (z, _) = forward(params, c1.view(), c2.view(), c3.view(), coords.view(), Mode::Infer)?;
    let mut out = vec![T::zero(); params.num_logits()];
    for (k, g) in gathered.iter().enumerate() {
        let pk = softmax(z.row(k).as_slice().expect("row"));
        let w = T::lit(g.weight);
        for (o, v) in out.iter_mut().zip(pk) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Frozen model for bulk inference with precomputed conditioning tables.
pub struct Predictor<'a, T> {
    pub params: &'a DecoderParams<T>,
    pub grid: &'a LatentGrid<T>,
    tables: CondTables<T>,
}

const CHUNK: usize = 2048;

impl<'a, T: Real> Predictor<'a, T> {
    pub fn new(params: &'a DecoderParams<T>, grid: &'a LatentGrid<T>) -> Result<Self> {
        let tables = CondTables::compute(params, grid)?;
        Ok(Self { params, grid, tables })
    }

    fn chunk_logits(&self, points: &[[f64; 3]]) -> Result<(Vec<SupportRegion>, Array2<T>, TrunkCache<T>)> {
        let mut regions = Vec::with_capacity(points.len());
        let mut cells = Vec::with_capacity(4 * points.len());
        let mut coords = Array2::zeros((4 * points.len(), 9));
        for (i, p) in points.iter().enumerate() {
            let region = support_region(*p, &self.grid.config)?;
            let (c, x) = region_rows(self.grid, &region);
            for k in 0..4 {
                cells.push(c[k]);
                coords.row_mut(4 * i + k).iter_mut().zip(x[k]).for_each(|(d, s)| *d = s);
            }
            regions.push(region);
        }
        let musig = self.tables.lookup(self.params, &cells);
        let (z, cache) = trunk::forward(self.params, musig, coords.view(), Mode::Infer)?;
        Ok((regions, z, cache))
    }

    /// Composed distributions, one `N+1` vector per point.
    pub fn predict(&self, points: &[[f64; 3]]) -> Result<Vec<Vec<T>>> {
        let parts: Vec<Result<Vec<Vec<T>>>> = points
            .par_chunks(CHUNK)
            .map(|chunk| {
                let (regions, z, _) = self.chunk_logits(chunk)?;
                Ok(regions
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let mut out = vec![T::zero(); self.params.num_logits()];
                        for k in 0..4 {
                            let pk = softmax(z.row(4 * i + k).as_slice().expect("row"));
                            let w = T::lit(r.supports[k].weight);
                            for (o, v) in out.iter_mut().zip(pk) {
                                *o += w * v;
                            }
                        }
                        out
                    })
                    .collect())
            })
            .collect();
        let mut out = Vec::with_capacity(points.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Uncomposed distributions of the four supports at each point.
    pub fn support_distributions(&self, points: &[[f64; 3]]) -> Result<Vec<[Vec<T>; 4]>> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(CHUNK) {
            let (_, z, _) = self.chunk_logits(chunk)?;
            for i in 0..chunk.len() {
                out.push([0, 1, 2, 3].map(|k| softmax(z.row(4 * i + k).as_slice().expect("row"))));
            }
        }
        Ok(out)
    }

    /// Free-space probability and its spatial gradient at each point.
    pub fn free_probability_gradient(&self, points: &[[f64; 3]]) -> Result<Vec<(f64, [f64; 3])>> {
        let free = self.params.num_classes;
        let parts: Vec<Result<Vec<(f64, [f64; 3])>>> = points
            .par_chunks(CHUNK)
            .map(|chunk| {
                let (regions, z, cache) = self.chunk_logits(chunk)?;
                let mut dz = Array2::<T>::zeros(z.dim());
                let mut values = Vec::with_capacity(chunk.len());
                for (i, r) in regions.iter().enumerate() {
                    let mut f = 0.0;
                    let mut g = [0.0; 3];
                    for k in 0..4 {
                        let row = 4 * i + k;
                        let pk = softmax(z.row(row).as_slice().expect("row"));
                        let pf = pk[free];
                        let s = &r.supports[k];
                        f += s.weight * pf.as_f64();
                        g[0] += s.dweight[0] * pf.as_f64();
                        g[1] += s.dweight[1] * pf.as_f64();
                        // d p_free / d z_j = p_free (δ_jf − p_j)
                        let w = T::lit(s.weight);
                        for (j, &pj) in pk.iter().enumerate() {
                            let delta = if j == free { T::one() } else { T::zero() };
                            dz[[row, j]] = w * pf * (delta - pj);
                        }
                    }
                    values.push((f, g));
                }
                let grads = trunk::backward(self.params, cache, dz.view())?;
                let dc = grads.coords;
                Ok(values
                    .into_iter()
                    .enumerate()
                    .map(|(i, (f, mut g))| {
                        let rows = dc.slice(s![4 * i..4 * i + 4, ..]).sum_axis(Axis(0));
                        for a in 0..3 {
                            g[a] += (rows[a] + rows[3 + a] + rows[6 + a]).as_f64();
                        }
                        (f, g)
                    })
                    .collect())
            })
            .collect();
        let mut out = Vec::with_capacity(points.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Stacks rows of `T` into a matrix view-friendly array.
pub fn rows_to_array<T: Real>(rows: &[Vec<T>], width: usize) -> Array2<T> {
    Array2::from_shape_vec((rows.len(), width), rows.iter().flatten().copied().collect()).expect("rows of equal width")
}

