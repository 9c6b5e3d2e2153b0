//! The conditioned MLP after the conditioning projections.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::params::{DecoderParams, DecoderWeights, BN_EPS, COND, WIDTH};
use crate::error::{Error, Result};
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are returned for an update.
    Train,
    /// Running statistics; the forward map is a pure function of its inputs.
    Infer,
}

/// Activations kept for the backward pass.
#[derive(Debug)]
pub struct TrunkCache<T> {
    mode: Mode,
    musig: Array2<T>,
    dense_in: [Array2<T>; 3],
    normed: [Array2<T>; 3],
    inv_std: [Array1<T>; 3],
    pre_relu: [Array2<T>; 3],
    hidden: [Array2<T>; 3],
    pub batch_mean: Option<[Array1<T>; 3]>,
    pub batch_var: Option<[Array1<T>; 3]>,
}

#[derive(Debug)]
pub struct TrunkGrads<T> {
    pub weights: DecoderWeights<T>,
    /// `(rows, 192)`: d/d `[μσ₁ | μσ₂ | μσ₃]`.
    pub musig: Array2<T>,
    /// `(rows, 9)`: d/d `[p₁ | p₂ | p₃]`.
    pub coords: Array2<T>,
}

fn check<T: Real>(a: &Array2<T>, layer: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activation in decoder layer {layer}")))
    }
}

pub(crate) fn standard<T: Real>(a: Array2<T>) -> Array2<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn relu<T: Real>(a: &Array2<T>) -> Array2<T> {
    a.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

fn relu_back<T: Real>(grad: &mut Array2<T>, pre: &Array2<T>) {
    grad.zip_mut_with(pre, |g, &p| {
        if p <= T::zero() {
            *g = T::zero()
        }
    });
}

fn normalize<T: Real>(
    a: &Array2<T>,
    mode: Mode,
    running_mean: &Array1<T>,
    running_var: &Array1<T>,
) -> (Array2<T>, Array1<T>, Option<(Array1<T>, Array1<T>)>) {
    let eps = T::lit(BN_EPS);
    let (mean, var, stats) = match mode {
        Mode::Train => {
            let n = T::lit(a.nrows() as f64);
            let mean = a.sum_axis(Axis(0)) / n;
            let centered = a - &mean;
            let var = (&centered * &centered).sum_axis(Axis(0)) / n;
            (mean.clone(), var.clone(), Some((mean, var)))
        }
        Mode::Infer => (running_mean.clone(), running_var.clone(), None),
    };
    let inv = var.mapv(|v| T::one() / (v + eps).sqrt());
    let normed = (a - &mean) * &inv;
    (normed, inv, stats)
}

/// Runs the trunk for `rows` query/support pairs.
///
/// `musig` is `(rows, 192)` with `μ` in the first and `σ` in the second half
/// of each 64-wide block; `coords` is `(rows, 9)` holding `p₁, p₂, p₃`.
pub fn forward<T: Real>(
    params: &DecoderParams<T>,
    musig: Array2<T>,
    coords: ArrayView2<T>,
    mode: Mode,
) -> Result<(Array2<T>, TrunkCache<T>)> {
    let rows = musig.nrows();
    if musig.ncols() != 3 * COND || coords.ncols() != 9 || coords.nrows() != rows {
        return Err(Error::Argument(format!(
            "trunk input shapes {:?} and {:?}",
            musig.dim(),
            coords.dim()
        )));
    }
    if mode == Mode::Train && rows < 2 {
        return Err(Error::Argument("train-mode normalization needs at least two rows".into()));
    }
    let w = &params.weights;
    let mut dense_in: Vec<Array2<T>> = Vec::with_capacity(3);
    let mut normed = Vec::with_capacity(3);
    let mut inv_std = Vec::with_capacity(3);
    let mut pre_relu = Vec::with_capacity(3);
    let mut means = Vec::new();
    let mut vars = Vec::new();
    let mut h: Option<Array2<T>> = None;
    for l in 0..3 {
        let p = coords.slice(s![.., 3 * l..3 * l + 3]);
        let x = match &h {
            None => p.to_owned(),
            Some(h) => concatenate(Axis(1), &[h.view(), p]).expect("matching rows"),
        };
        let a = x.dot(&w.trunk_w[l].t());
        check(&a, &format!("dense {l}"))?;
        let (n, inv, stats) = normalize(&a, mode, &params.norm.mean[l], &params.norm.var[l]);
        check(&n, &format!("norm {l}"))?;
        if let Some((m, v)) = stats {
            means.push(m);
            vars.push(v);
        }
        let mu = musig.slice(s![.., COND * l..COND * l + WIDTH]);
        let sigma = musig.slice(s![.., COND * l + WIDTH..COND * (l + 1)]);
        let y = &n * &sigma + &mu;
        check(&y, &format!("conditioning {l}"))?;
        h = Some(relu(&y));
        dense_in.push(x);
        normed.push(n);
        inv_std.push(inv);
        pre_relu.push(y);
    }
    let h2 = h.expect("three blocks");
    let a3 = h2.dot(&w.hidden_w[0].t()) + &w.hidden_b[0];
    let h3 = relu(&a3);
    check(&h3, "hidden 0")?;
    let a4 = h3.dot(&w.hidden_w[1].t()) + &w.hidden_b[1];
    let h4 = relu(&a4);
    check(&h4, "hidden 1")?;
    let z = standard(h4.dot(&w.out_w.t()) + &w.out_b);
    check(&z, "output")?;

    let arr3 = |v: Vec<Array2<T>>| -> [Array2<T>; 3] { v.try_into().expect("three layers") };
    let vec3 = |v: Vec<Array1<T>>| -> [Array1<T>; 3] { v.try_into().expect("three layers") };
    let (batch_mean, batch_var) = if mode == Mode::Train {
        (Some(vec3(means)), Some(vec3(vars)))
    } else {
        (None, None)
    };
    let cache = TrunkCache {
        mode,
        musig,
        dense_in: arr3(dense_in),
        normed: arr3(normed),
        inv_std: vec3(inv_std),
        pre_relu: arr3(pre_relu),
        hidden: [h2, h3, h4],
        batch_mean,
        batch_var,
    };
    Ok((z, cache))
}

/// Reverse pass; consumes the cache, so each forward supports one backward.
pub fn backward<T: Real>(params: &DecoderParams<T>, cache: TrunkCache<T>, dz: ArrayView2<T>) -> Result<TrunkGrads<T>> {
    let w = &params.weights;
    let rows = cache.musig.nrows();
    if dz.dim() != (rows, params.num_logits()) {
        return Err(Error::Argument(format!("upstream gradient shape {:?}, expected ({rows}, {})", dz.dim(), params.num_logits())));
    }
    let mut g = DecoderWeights::zeros(params.feature_dims, params.num_classes);
    let [h2, h3, h4] = &cache.hidden;

    g.out_w = standard(dz.t().dot(h4));
    g.out_b = dz.sum_axis(Axis(0));
    let mut d = dz.dot(&w.out_w);
    relu_back(&mut d, h4);
    g.hidden_w[1] = standard(d.t().dot(h3));
    g.hidden_b[1] = d.sum_axis(Axis(0));
    let mut d3 = d.dot(&w.hidden_w[1]);
    relu_back(&mut d3, h3);
    g.hidden_w[0] = standard(d3.t().dot(h2));
    g.hidden_b[0] = d3.sum_axis(Axis(0));
    let mut dh = d3.dot(&w.hidden_w[0]);

    let mut dmusig = Array2::zeros((rows, 3 * COND));
    let mut dcoords = Array2::zeros((rows, 9));
    let n_rows = T::lit(rows as f64);
    for l in (0..3).rev() {
        relu_back(&mut dh, &cache.pre_relu[l]);
        let n = &cache.normed[l];
        let sigma = cache.musig.slice(s![.., COND * l + WIDTH..COND * (l + 1)]);
        dmusig.slice_mut(s![.., COND * l..COND * l + WIDTH]).assign(&dh);
        dmusig.slice_mut(s![.., COND * l + WIDTH..COND * (l + 1)]).assign(&(&dh * n));
        let dn = &dh * &sigma;
        let da = match cache.mode {
            Mode::Train => {
                let mean_dn = dn.sum_axis(Axis(0)) / n_rows;
                let mean_dn_n = (&dn * n).sum_axis(Axis(0)) / n_rows;
                (dn - &mean_dn - n * &mean_dn_n) * &cache.inv_std[l]
            }
            Mode::Infer => dn * &cache.inv_std[l],
        };
        g.trunk_w[l] = standard(da.t().dot(&cache.dense_in[l]));
        let dx = da.dot(&w.trunk_w[l]);
        if l == 0 {
            dcoords.slice_mut(s![.., 0..3]).assign(&dx);
        } else {
            dcoords.slice_mut(s![.., 3 * l..3 * l + 3]).assign(&dx.slice(s![.., WIDTH..WIDTH + 3]));
            dh = dx.slice(s![.., 0..WIDTH]).to_owned();
        }
    }
    Ok(TrunkGrads { weights: g, musig: dmusig, coords: dcoords })
}
