//! Semantic, geometric and consistency losses computed from logits in log
//! space, with exact gradients.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::sampling::TargetKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_g: f64,
    pub lambda_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_s: 7.5, lambda_g: 2.0, lambda_c: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_s", self.lambda_s), ("lambda_g", self.lambda_g), ("lambda_c", self.lambda_c)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn max<T: Real>(z: &[T]) -> T {
    z.iter().copied().fold(T::neg_infinity(), T::max)
}

/// `(max z, log Σ exp(z − max z))`; the argmax term is split off so that
/// saturated vectors keep full relative precision.
fn shifted_log_denominator<T: Real>(z: &[T]) -> (T, T) {
    let (arg, b) = z
        .iter()
        .copied()
        .enumerate()
        .fold((0, T::neg_infinity()), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let rest: T = z
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &v)| (v - b).exp())
        .sum();
    (b, rest.ln_1p())
}

pub fn logsumexp<T: Real>(z: &[T]) -> T {
    let (b, l) = shifted_log_denominator(z);
    b + l
}

/// `zᵢ − b − log Σⱼ exp(zⱼ − b)` with `b = max z`.
pub fn stable_logsoftmax<T: Real>(z: &[T]) -> Vec<T> {
    let l = logsumexp(z);
    z.iter().map(|&v| v - l).collect()
}

pub fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let b = max(z);
    let e: Vec<T> = z.iter().map(|&v| (v - b).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-support shifts `ẑ^α` and shifted denominators `s^α` of the live
/// supports, shared by every entry of the weighted log-mean.
struct LogMean<'a, T> {
    logits: &'a [&'a [T]],
    weights: &'a [T],
    live: Vec<usize>,
    zhat: Vec<T>,
    /// `prod_{β≠α} s^β`
    others: Vec<T>,
    log_prod_s: T,
}

impl<'a, T: Real> LogMean<'a, T> {
    fn new(logits: &'a [&'a [T]], weights: &'a [T]) -> Self {
        let live: Vec<usize> = (0..logits.len()).filter(|&a| weights[a] > T::zero()).collect();
        let shifted: Vec<(T, T)> = live.iter().map(|&a| shifted_log_denominator(logits[a])).collect();
        let zhat = shifted.iter().map(|s| s.0).collect();
        let s: Vec<T> = shifted.iter().map(|s| s.1.exp()).collect();
        let others = (0..live.len())
            .map(|a| s.iter().enumerate().filter(|&(b, _)| b != a).map(|(_, &v)| v).fold(T::one(), |x, y| x * y))
            .collect();
        let log_prod_s = shifted.iter().map(|s| s.1).sum();
        Self { logits, weights, live, zhat, others, log_prod_s }
    }

    fn at(&self, i: usize) -> T {
        let zi = self
            .live
            .iter()
            .zip(&self.zhat)
            .map(|(&a, &m)| self.logits[a][i] - m)
            .fold(T::neg_infinity(), T::max);
        let acc: T = self
            .live
            .iter()
            .enumerate()
            .map(|(j, &a)| self.weights[a] * self.others[j] * (self.logits[a][i] - self.zhat[j] - zi).exp())
            .sum();
        zi + acc.ln() - self.log_prod_s
    }
}

/// `log Σ_α w_α softmax(z^α)_i` for every `i`, via per-support shifts `ẑ^α`,
/// per-entry shifts `ẑᵢ` and the product of shifted denominators `s^α`.
/// Supports with zero weight are ignored.
pub fn weighted_log_mean<T: Real>(logits: &[&[T]], weights: &[T]) -> Vec<T> {
    let lm = LogMean::new(logits, weights);
    (0..logits[0].len()).map(|i| lm.at(i)).collect()
}

/// Cross-entropy `−log Σ_α w_α softmax(z^α)_target` and its logit gradients.
fn weighted_ce<T: Real>(logits: &[&[T]], weights: &[T], target: usize) -> (T, Vec<Vec<T>>) {
    let log_f = LogMean::new(logits, weights).at(target);
    let grads = logits
        .iter()
        .zip(weights)
        .map(|(z, &w)| {
            if w <= T::zero() {
                return vec![T::zero(); z.len()];
            }
            let lp = stable_logsoftmax(z);
            let r = (w.ln() + lp[target] - log_f).exp();
            lp.iter()
                .enumerate()
                .map(|(j, &l)| {
                    let onehot = if j == target { T::one() } else { T::zero() };
                    r * (l.exp() - onehot)
                })
                .collect()
        })
        .collect();
    (-log_f, grads)
}

fn check_supports<T: Real>(logits: &[&[T]], weights: &[T]) -> Result<()> {
    if logits.is_empty() || logits.len() != weights.len() {
        return Err(Error::Argument(format!("{} logit vectors for {} weights", logits.len(), weights.len())));
    }
    let k = logits[0].len();
    if k < 2 || logits.iter().any(|z| z.len() != k) {
        return Err(Error::Argument("logit vectors must share a length of at least 2".into()));
    }
    if weights.iter().any(|&w| w < T::zero() || !w.is_finite()) || !weights.iter().any(|&w| w > T::zero()) {
        return Err(Error::Argument("weights must be nonnegative with a positive entry".into()));
    }
    Ok(())
}

/// `−log f̄_class` over all `N+1` outputs. `class` is in `1..=N`; logit
/// index `class − 1`, free space is the last logit.
pub fn semantic_loss<T: Real>(logits: &[&[T]], weights: &[T], class: u16) -> Result<(T, Vec<Vec<T>>)> {
    check_supports(logits, weights)?;
    let n = logits[0].len() - 1;
    if class == 0 {
        return Err(Error::Usage("semantic loss is not evaluated for free-space targets".into()));
    }
    if class as usize > n {
        return Err(Error::Argument(format!("class {class} outside 1..={n}")));
    }
    Ok(weighted_ce(logits, weights, class as usize - 1))
}

/// Two-class cross-entropy on `[z_occupied, z_free]`, where `z_occupied` is
/// the log-sum-exp of the semantic logits.
pub fn geometric_loss<T: Real>(logits: &[&[T]], weights: &[T], occupied: bool) -> Result<(T, Vec<Vec<T>>)> {
    check_supports(logits, weights)?;
    let n = logits[0].len() - 1;
    let fused: Vec<[T; 2]> = logits.iter().map(|z| [logsumexp(&z[..n]), z[n]]).collect();
    let views: Vec<&[T]> = fused.iter().map(|f| &f[..]).collect();
    let (loss, g2) = weighted_ce(&views, weights, if occupied { 0 } else { 1 });
    let grads = logits
        .iter()
        .zip(&g2)
        .map(|(z, g)| {
            let mut out: Vec<T> = softmax(&z[..n]).into_iter().map(|p| g[0] * p).collect();
            out.push(g[1]);
            out
        })
        .collect();
    Ok((loss, grads))
}

/// Jensen-Shannon divergence of the per-support softmax distributions.
pub fn consistency_loss<T: Real>(logits: &[&[T]]) -> Result<(T, Vec<Vec<T>>)> {
    let m = logits.len();
    if m < 2 {
        return Err(Error::Argument(format!("consistency loss needs at least 2 supports, got {m}")));
    }
    let k = logits[0].len();
    if logits.iter().any(|z| z.len() != k) {
        return Err(Error::Argument("logit vectors differ in length".into()));
    }
    let inv_m = T::one() / T::lit(m as f64);
    let log_pbar = weighted_log_mean(logits, &vec![inv_m; m]);
    let log_p: Vec<Vec<T>> = logits.iter().map(|z| stable_logsoftmax(z)).collect();
    let mut loss = -log_pbar.iter().map(|&l| l.exp() * l).sum::<T>();
    for lp in &log_p {
        loss += inv_m * lp.iter().map(|&l| l.exp() * l).sum::<T>();
    }
    let grads = log_p
        .iter()
        .map(|lp| {
            let g: Vec<T> = lp.iter().zip(&log_pbar).map(|(&a, &b)| a - b).collect();
            let mean: T = lp.iter().zip(&g).map(|(&l, &gi)| l.exp() * gi).sum();
            lp.iter().zip(&g).map(|(&l, &gi)| inv_m * l.exp() * (gi - mean)).collect()
        })
        .collect();
    Ok((loss, grads))
}

/// One target's rows in the logit matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTarget<T> {
    pub kind: TargetKind,
    pub rows: Vec<usize>,
    pub weights: Vec<T>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    /// Optimized objective: `λ_S·semantic + λ_G·geometric + λ_C·consistency`.
    pub total: f64,
    /// Per-term means over contributing targets.
    pub semantic: f64,
    pub geometric: f64,
    pub consistency: f64,
    /// `λ`-weighted sum of the unnormalized term sums.
    pub total_sum: f64,
    pub semantic_sum: f64,
    pub geometric_sum: f64,
    pub consistency_sum: f64,
    pub n_semantic: usize,
    pub n_occupied_unlabeled: usize,
    pub n_free: usize,
    pub n_consistency: usize,
    /// Targets whose evaluated supports all had zero weight.
    pub n_zero_weight: usize,
}

fn kind_name(k: TargetKind) -> &'static str {
    match k {
        TargetKind::Semantic(_) => "semantic",
        TargetKind::OccupiedUnlabeled => "occupied-unlabeled",
        TargetKind::Free => "free",
        TargetKind::Consistency => "consistency",
    }
}

/// `(term, loss, grads)` for each loss term one target feeds.
fn target_terms<T: Real>(z: ArrayView2<T>, t: &LossTarget<T>) -> Result<Vec<(usize, T, Vec<Vec<T>>)>> {
    let rows: Vec<&[T]> = t.rows.iter().map(|&r| z.row(r).to_slice().expect("contiguous row")).collect();
    let live = t.weights.iter().any(|&w| w > T::zero());
    let mut out = Vec::with_capacity(3);
    match t.kind {
        TargetKind::Semantic(c) if live => {
            let (l, g) = semantic_loss(&rows, &t.weights, c)?;
            out.push((0, l, g));
            let (l, g) = geometric_loss(&rows, &t.weights, true)?;
            out.push((1, l, g));
        }
        TargetKind::OccupiedUnlabeled | TargetKind::Free if live => {
            let (l, g) = geometric_loss(&rows, &t.weights, t.kind != TargetKind::Free)?;
            out.push((1, l, g));
        }
        _ => {}
    }
    if rows.len() >= 2 {
        let (l, g) = consistency_loss(&rows)?;
        out.push((2, l, g));
    }
    Ok(out)
}

/// Routes targets to loss terms and returns the report and `d total / d z`.
///
/// Semantic targets feed the semantic and geometric terms, unlabeled occupied
/// and free targets the geometric term, and every target with at least two
/// rows the consistency term.
pub fn total_loss<T: Real>(
    z: ArrayView2<T>,
    targets: &[LossTarget<T>],
    lambda: &LossWeights,
) -> Result<(LossReport, Array2<T>)> {
    if targets.is_empty() {
        return Err(Error::Argument("total_loss: empty batch".into()));
    }
    let per_target: Vec<Result<Vec<(usize, T, Vec<Vec<T>>)>>> = targets.par_iter().map(|t| target_terms(z, t)).collect();
    let mut rep = LossReport::default();
    let mut gs: Vec<(usize, usize, Vec<Vec<T>>)> = Vec::new(); // (term, target index, grads)
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for (ti, (t, terms)) in targets.iter().zip(per_target).enumerate() {
        let terms = terms?;
        match t.kind {
            TargetKind::Semantic(_) => rep.n_semantic += 1,
            TargetKind::OccupiedUnlabeled => rep.n_occupied_unlabeled += 1,
            TargetKind::Free => rep.n_free += 1,
            TargetKind::Consistency => rep.n_consistency += 1,
        }
        if t.kind != TargetKind::Consistency && !t.weights.iter().any(|&w| w > T::zero()) {
            rep.n_zero_weight += 1;
        }
        for (term, loss, g) in terms {
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss for a {} target", kind_name(t.kind))));
            }
            sums[term] += loss.as_f64();
            counts[term] += 1;
            gs.push((term, ti, g));
        }
    }
    let lam = [lambda.lambda_s, lambda.lambda_g, lambda.lambda_c];
    let means: Vec<f64> = (0..3).map(|k| if counts[k] > 0 { sums[k] / counts[k] as f64 } else { 0.0 }).collect();
    let scale: Vec<T> = (0..3)
        .map(|k| if counts[k] > 0 { T::lit(lam[k] / counts[k] as f64) } else { T::zero() })
        .collect();
    let mut dz = Array2::zeros(z.dim());
    for (term, ti, g) in gs {
        for (&r, gr) in targets[ti].rows.iter().zip(g) {
            let mut row = dz.row_mut(r);
            for (d, v) in row.iter_mut().zip(gr) {
                *d += scale[term] * v;
            }
        }
    }
    rep.semantic = means[0];
    rep.geometric = means[1];
    rep.consistency = means[2];
    rep.semantic_sum = sums[0];
    rep.geometric_sum = sums[1];
    rep.consistency_sum = sums[2];
    rep.total = lam[0] * means[0] + lam[1] * means[1] + lam[2] * means[2];
    rep.total_sum = lam[0] * sums[0] + lam[1] * sums[1] + lam[2] * sums[2];
    Ok((rep, dz))
}
