//! Conditioning projections `c → (μ, σ)`, computed either per row or through
//! per-cell tables that exploit the block structure of the concatenated inputs.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::params::{DecoderParams, DecoderWeights, COND};
use crate::error::{Error, Result};
use crate::latent_grid::LatentGrid;
use crate::num::Real;

/// Per-row projection of `(c₁, c₂, c₃)` rows to `(rows, 192)`.
pub fn project<T: Real>(params: &DecoderParams<T>, c1: ArrayView2<T>, c2: ArrayView2<T>, c3: ArrayView2<T>) -> Result<Array2<T>> {
    let [d1, d2, d3] = params.feature_dims;
    let rows = c1.nrows();
    if c1.ncols() != d1 || c2.ncols() != d2 || c3.ncols() != d3 || c2.nrows() != rows || c3.nrows() != rows {
        return Err(Error::Argument(format!(
            "conditioning shapes {:?}, {:?}, {:?} do not match dims {:?}",
            c1.dim(),
            c2.dim(),
            c3.dim(),
            params.feature_dims
        )));
    }
    let w = &params.weights;
    let c12 = concatenate(Axis(1), &[c1, c2]).expect("rows match");
    let c123 = concatenate(Axis(1), &[c1, c2, c3]).expect("rows match");
    let m1 = c1.dot(&w.cond_w[0].t()) + &w.cond_b[0];
    let m2 = c12.dot(&w.cond_w[1].t()) + &w.cond_b[1];
    let m3 = c123.dot(&w.cond_w[2].t()) + &w.cond_b[2];
    Ok(concatenate(Axis(1), &[m1.view(), m2.view(), m3.view()]).expect("rows match"))
}

/// Gradients of [`project`]: adds weight gradients into `grads` and returns
/// `(dc₁, dc₂, dc₃)`.
pub fn project_backward<T: Real>(
    params: &DecoderParams<T>,
    c1: ArrayView2<T>,
    c2: ArrayView2<T>,
    c3: ArrayView2<T>,
    dmusig: ArrayView2<T>,
    grads: &mut DecoderWeights<T>,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let [d1, d2, _] = params.feature_dims;
    let w = &params.weights;
    let c12 = concatenate(Axis(1), &[c1, c2]).expect("rows match");
    let c123 = concatenate(Axis(1), &[c1, c2, c3]).expect("rows match");
    let inputs = [c1.to_owned(), c12, c123];
    let mut dc1 = Array2::zeros(c1.dim());
    let mut dc2 = Array2::zeros(c2.dim());
    let mut dc3 = Array2::zeros(c3.dim());
    for k in 0..3 {
        let dm = dmusig.slice(s![.., COND * k..COND * (k + 1)]);
        grads.cond_w[k] += &dm.t().dot(&inputs[k]);
        grads.cond_b[k] += &dm.sum_axis(Axis(0));
        let dc = dm.dot(&w.cond_w[k]);
        dc1 += &dc.slice(s![.., 0..d1]);
        if k >= 1 {
            dc2 += &dc.slice(s![.., d1..d1 + d2]);
        }
        if k == 2 {
            dc3 += &dc.slice(s![.., d1 + d2..]);
        }
    }
    (dc1, dc2, dc3)
}

/// Per-cell partial projections of a whole latent grid.
///
/// `t1` is `(cells₁, 192)` holding the `c₁` contributions to all three
/// projections, `t2` is `(cells₂, 128)` for `c₂` into projections 2 and 3, and
/// `t3` is `(cells₃, 64)` for `c₃` into projection 3.
#[derive(Debug, Clone)]
pub struct CondTables<T> {
    pub t1: Array2<T>,
    pub t2: Array2<T>,
    pub t3: Array2<T>,
}

/// Flat cell index per hierarchy level for one row.
pub type CellRow = [usize; 3];

fn blocks<T: Real>(params: &DecoderParams<T>) -> (Array2<T>, Array2<T>, Array2<T>) {
    let [d1, d2, _] = params.feature_dims;
    let w = &params.weights;
    let a = concatenate(
        Axis(0),
        &[w.cond_w[0].view(), w.cond_w[1].slice(s![.., 0..d1]), w.cond_w[2].slice(s![.., 0..d1])],
    )
    .expect("same width");
    let b = concatenate(Axis(0), &[w.cond_w[1].slice(s![.., d1..]), w.cond_w[2].slice(s![.., d1..d1 + d2])])
        .expect("same width");
    let c = w.cond_w[2].slice(s![.., d1 + d2..]).to_owned();
    (a, b, c)
}

impl<T: Real> CondTables<T> {
    pub fn compute(params: &DecoderParams<T>, grid: &LatentGrid<T>) -> Result<Self> {
        if grid.config.feature_dims != params.feature_dims {
            return Err(Error::Argument(format!(
                "grid feature dims {:?} differ from decoder dims {:?}",
                grid.config.feature_dims, params.feature_dims
            )));
        }
        let (a, b, c) = blocks(params);
        Ok(Self {
            t1: grid.levels[0].dot(&a.t()),
            t2: grid.levels[1].dot(&b.t()),
            t3: grid.levels[2].dot(&c.t()),
        })
    }

    /// Assembles `(rows, 192)` conditioning from table rows and biases.
    pub fn lookup(&self, params: &DecoderParams<T>, cells: &[CellRow]) -> Array2<T> {
        let b = &params.weights.cond_b;
        let mut out = Array2::zeros((cells.len(), 3 * COND));
        for (r, &[i1, i2, i3]) in cells.iter().enumerate() {
            let t1 = self.t1.row(i1);
            let t2 = self.t2.row(i2);
            let t3 = self.t3.row(i3);
            let mut row = out.row_mut(r);
            for j in 0..COND {
                row[j] = t1[j] + b[0][j];
                row[COND + j] = t1[COND + j] + t2[j] + b[1][j];
                row[2 * COND + j] = t1[2 * COND + j] + t2[COND + j] + t3[j] + b[2][j];
            }
        }
        out
    }

    /// Propagates `dmusig` to conditioning weights (added into `grads`) and to
    /// the latent grid (added into `grid_grads`).
    pub fn backward(
        params: &DecoderParams<T>,
        grid: &LatentGrid<T>,
        cells: &[CellRow],
        dmusig: ArrayView2<T>,
        grads: &mut DecoderWeights<T>,
        grid_grads: &mut LatentGrid<T>,
    ) {
        let [d1, d2, _] = params.feature_dims;
        let cfg = &grid.config;
        let mut dt1 = Array2::<T>::zeros((cfg.level_len(0), 3 * COND));
        let mut dt2 = Array2::<T>::zeros((cfg.level_len(1), 2 * COND));
        let mut dt3 = Array2::<T>::zeros((cfg.level_len(2), COND));
        for (r, &[i1, i2, i3]) in cells.iter().enumerate() {
            let d = dmusig.row(r);
            let mut a = dt1.row_mut(i1);
            for j in 0..3 * COND {
                a[j] += d[j];
            }
            let mut b = dt2.row_mut(i2);
            for j in 0..2 * COND {
                b[j] += d[COND + j];
            }
            let mut c = dt3.row_mut(i3);
            for j in 0..COND {
                c[j] += d[2 * COND + j];
            }
            for k in 0..3 {
                let mut gb = grads.cond_b[k].view_mut();
                for j in 0..COND {
                    gb[j] += d[COND * k + j];
                }
            }
        }
        let l1 = &grid.levels[0];
        let l2 = &grid.levels[1];
        let l3 = &grid.levels[2];
        let gw = &mut grads.cond_w;
        gw[0] += &dt1.slice(s![.., 0..COND]).t().dot(l1);
        gw[1].slice_mut(s![.., 0..d1]).scaled_add(T::one(), &dt1.slice(s![.., COND..2 * COND]).t().dot(l1));
        gw[2].slice_mut(s![.., 0..d1]).scaled_add(T::one(), &dt1.slice(s![.., 2 * COND..]).t().dot(l1));
        gw[1].slice_mut(s![.., d1..]).scaled_add(T::one(), &dt2.slice(s![.., 0..COND]).t().dot(l2));
        gw[2].slice_mut(s![.., d1..d1 + d2]).scaled_add(T::one(), &dt2.slice(s![.., COND..]).t().dot(l2));
        gw[2].slice_mut(s![.., d1 + d2..]).scaled_add(T::one(), &dt3.t().dot(l3));

        let (a, b, c) = blocks(params);
        grid_grads.levels[0] += &dt1.dot(&a);
        grid_grads.levels[1] += &dt2.dot(&b);
        grid_grads.levels[2] += &dt3.dot(&c);
    }
}
