use ndarray::{Array1, Array2};
use rand::Rng;

use crate::container::{ChunkReader, ChunkWriter, Container};
use crate::error::{Error, Result};
use crate::num::Real;

/// Trunk width.
pub const WIDTH: usize = 32;
/// Width of each conditioning projection: `μ` then `σ`.
pub const COND: usize = 2 * WIDTH;
pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;
/// Initial output bias of the free-space logit.
pub const FREE_BIAS_INIT: f64 = 2.0;

/// Trainable decoder tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights<T> {
    /// `(64, in_k)` for inputs `c₁`, `[c₁;c₂]`, `[c₁;c₂;c₃]`.
    pub cond_w: [Array2<T>; 3],
    pub cond_b: [Array1<T>; 3],
    /// Dense layers feeding the three normalizations: `(32,3)`, `(32,35)`, `(32,35)`.
    pub trunk_w: [Array2<T>; 3],
    pub hidden_w: [Array2<T>; 2],
    pub hidden_b: [Array1<T>; 2],
    pub out_w: Array2<T>,
    pub out_b: Array1<T>,
}

/// Running statistics of the three normalization layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<T> {
    pub mean: [Array1<T>; 3],
    pub var: [Array1<T>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T> {
    pub feature_dims: [usize; 3],
    /// Number of semantic classes `N`; the decoder emits `N + 1` logits.
    pub num_classes: usize,
    pub weights: DecoderWeights<T>,
    pub norm: NormStats<T>,
}

pub(crate) fn cond_inputs(dims: [usize; 3]) -> [usize; 3] {
    [dims[0], dims[0] + dims[1], dims[0] + dims[1] + dims[2]]
}

impl<T: Real> DecoderWeights<T> {
    pub fn zeros(feature_dims: [usize; 3], num_classes: usize) -> Self {
        let ins = cond_inputs(feature_dims);
        Self {
            cond_w: ins.map(|i| Array2::zeros((COND, i))),
            cond_b: [0; 3].map(|_| Array1::zeros(COND)),
            trunk_w: [3, WIDTH + 3, WIDTH + 3].map(|i| Array2::zeros((WIDTH, i))),
            hidden_w: [0; 2].map(|_| Array2::zeros((WIDTH, WIDTH))),
            hidden_b: [0; 2].map(|_| Array1::zeros(WIDTH)),
            out_w: Array2::zeros((num_classes + 1, WIDTH)),
            out_b: Array1::zeros(num_classes + 1),
        }
    }

    pub fn slices(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = Vec::with_capacity(14);
        for a in &self.cond_w {
            v.push(a.as_slice().expect("standard layout"));
        }
        for a in &self.cond_b {
            v.push(a.as_slice().expect("standard layout"));
        }
        for a in &self.trunk_w {
            v.push(a.as_slice().expect("standard layout"));
        }
        for a in &self.hidden_w {
            v.push(a.as_slice().expect("standard layout"));
        }
        for a in &self.hidden_b {
            v.push(a.as_slice().expect("standard layout"));
        }
        v.push(self.out_w.as_slice().expect("standard layout"));
        v.push(self.out_b.as_slice().expect("standard layout"));
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = Vec::with_capacity(14);
        for a in &mut self.cond_w {
            v.push(a.as_slice_mut().expect("standard layout"));
        }
        for a in &mut self.cond_b {
            v.push(a.as_slice_mut().expect("standard layout"));
        }
        for a in &mut self.trunk_w {
            v.push(a.as_slice_mut().expect("standard layout"));
        }
        for a in &mut self.hidden_w {
            v.push(a.as_slice_mut().expect("standard layout"));
        }
        for a in &mut self.hidden_b {
            v.push(a.as_slice_mut().expect("standard layout"));
        }
        v.push(self.out_w.as_slice_mut().expect("standard layout"));
        v.push(self.out_b.as_slice_mut().expect("standard layout"));
        v
    }

    pub fn num_scalars(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl<T: Real> NormStats<T> {
    pub fn identity() -> Self {
        Self {
            mean: [0; 3].map(|_| Array1::zeros(WIDTH)),
            var: [0; 3].map(|_| Array1::ones(WIDTH)),
        }
    }

    /// Exponential moving average toward the batch statistics.
    pub fn update(&mut self, batch_mean: &[Array1<T>; 3], batch_var: &[Array1<T>; 3]) {
        let m = T::lit(BN_MOMENTUM);
        let k = T::one() - m;
        for l in 0..3 {
            self.mean[l].zip_mut_with(&batch_mean[l], |r, &b| *r = m * *r + k * b);
            self.var[l].zip_mut_with(&batch_var[l], |r, &b| *r = m * *r + k * b);
        }
    }
}

fn uniform<T: Real, R: Rng>(shape: (usize, usize), bound: f64, rng: &mut R) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || T::lit(rng.random_range(-bound..=bound)))
}

impl<T: Real> DecoderParams<T> {
    pub fn zeros(feature_dims: [usize; 3], num_classes: usize) -> Self {
        Self {
            feature_dims,
            num_classes,
            weights: DecoderWeights::zeros(feature_dims, num_classes),
            norm: NormStats::identity(),
        }
    }

    /// Hidden layers He-uniform, conditioning at identity (`μ = 0`, `σ = 1`)
    /// plus fan-in uniform weights, output weights zero with the free-space
    /// bias at [`FREE_BIAS_INIT`].
    pub fn init<R: Rng>(feature_dims: [usize; 3], num_classes: usize, rng: &mut R) -> Result<Self> {
        if num_classes == 0 || feature_dims.iter().any(|&d| d == 0) {
            return Err(Error::Argument(format!(
                "decoder needs positive dims, got {feature_dims:?} and {num_classes} classes"
            )));
        }
        let mut p = Self::zeros(feature_dims, num_classes);
        let w = &mut p.weights;
        for k in 0..3 {
            let fan_in = w.cond_w[k].ncols();
            w.cond_w[k] = uniform((COND, fan_in), (3.0 / fan_in as f64).sqrt(), rng);
            for j in WIDTH..COND {
                w.cond_b[k][j] = T::one();
            }
        }
        for k in 0..3 {
            let fan_in = w.trunk_w[k].ncols();
            w.trunk_w[k] = uniform((WIDTH, fan_in), (6.0 / fan_in as f64).sqrt(), rng);
        }
        for k in 0..2 {
            w.hidden_w[k] = uniform((WIDTH, WIDTH), (6.0 / WIDTH as f64).sqrt(), rng);
        }
        w.out_b[num_classes] = T::lit(FREE_BIAS_INIT);
        Ok(p)
    }

    pub fn num_logits(&self) -> usize {
        self.num_classes + 1
    }

    pub fn write_chunks(&self, c: &mut Container) {
        let mut w = ChunkWriter::new();
        w.u64(self.num_classes as u64);
        for d in self.feature_dims {
            w.u64(d as u64);
        }
        c.push(b"DHDR", w.finish());
        let mut w = ChunkWriter::new();
        for s in self.weights.slices() {
            w.array(s);
        }
        c.push(b"DWTS", w.finish());
        let mut w = ChunkWriter::new();
        for l in 0..3 {
            w.array(self.norm.mean[l].as_slice().expect("standard layout"));
            w.array(self.norm.var[l].as_slice().expect("standard layout"));
        }
        c.push(b"DNRM", w.finish());
    }

    pub fn read_chunks(c: &Container) -> Result<Self> {
        let mut r = ChunkReader::new(c.chunk(b"DHDR")?);
        let num_classes = r.u64()? as usize;
        let feature_dims = [r.u64()? as usize, r.u64()? as usize, r.u64()? as usize];
        let mut p = Self::zeros(feature_dims, num_classes);
        let mut r = ChunkReader::new(c.chunk(b"DWTS")?);
        for s in p.weights.slices_mut() {
            let data = r.array::<T>()?;
            if data.len() != s.len() {
                return Err(Error::Format(format!(
                    "decoder tensor has {} values, expected {}",
                    data.len(),
                    s.len()
                )));
            }
            s.copy_from_slice(&data);
        }
        let mut r = ChunkReader::new(c.chunk(b"DNRM")?);
        for l in 0..3 {
            for target in [&mut p.norm.mean[l], &mut p.norm.var[l]] {
                let data = r.array::<T>()?;
                if data.len() != WIDTH {
                    return Err(Error::Format("normalization statistics have the wrong width".into()));
                }
                *target = Array1::from(data);
            }
        }
        Ok(p)
    }
}
