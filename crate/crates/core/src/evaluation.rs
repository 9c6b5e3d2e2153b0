//! Confusion matrices, IoU, precision/recall and threshold sweeps.

use crate::classes::{ClassId, FREE, UNLABELED};
use crate::decoder::Predictor;
use crate::error::{Error, Result};
use crate::extraction::{argmax_class, CornerField, VoxelGrid};
use crate::num::Real;
use crate::sampling::Ray;
use crate::scene_io::PointCloud;
use crate::geometry::Vec3;
use crate::voxel::VoxelGridSpec;

/// `(N+1)²` counts; rows are ground truth, columns predictions, index 0 is free space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub size: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        let size = num_classes + 1;
        Self { size, counts: vec![0; size * size] }
    }

    pub fn add(&mut self, truth: ClassId, pred: ClassId) {
        let (t, p) = (truth as usize, pred as usize);
        assert!(t < self.size && p < self.size, "class id out of range");
        self.counts[t * self.size + p] += 1;
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.size + pred]
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(tp, fp, fn)` for one class.
    pub fn tp_fp_fn(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let fp = (0..self.size).map(|t| self.get(t, c)).sum::<u64>() - tp;
        let fn_ = (0..self.size).map(|p| self.get(c, p)).sum::<u64>() - tp;
        (tp, fp, fn_)
    }

    /// `None` when the class occurs in neither prediction nor truth.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let (tp, fp, fn_) = self.tp_fp_fn(c);
        let d = tp + fp + fn_;
        (d > 0).then(|| tp as f64 / d as f64)
    }

    /// Mean IoU over the semantic classes that occur.
    pub fn miou(&self) -> Option<f64> {
        let v: Vec<f64> = (1..self.size).filter_map(|c| self.iou(c)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Binarized occupied-vs-free counts `(tp, fp, fn)`.
    pub fn occupied_counts(&self) -> (u64, u64, u64) {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for t in 0..self.size {
            for p in 0..self.size {
                let n = self.get(t, p);
                match (t != 0, p != 0) {
                    (true, true) => tp += n,
                    (false, true) => fp += n,
                    (true, false) => fn_ += n,
                    _ => {}
                }
            }
        }
        (tp, fp, fn_)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub confusion: ConfusionMatrix,
    /// Index `c − 1` holds class `c`.
    pub class_iou: Vec<Option<f64>>,
    pub miou: Option<f64>,
    pub occupied_iou: f64,
    pub precision: f64,
    pub recall: f64,
}

impl Metrics {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let class_iou = (1..confusion.size).map(|c| confusion.iou(c)).collect();
        let miou = confusion.miou();
        let (tp, fp, fn_) = confusion.occupied_counts();
        Self {
            occupied_iou: ratio(tp, tp + fp + fn_),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            class_iou,
            miou,
            confusion,
        }
    }

    /// `key value` lines.
    pub fn to_key_values(&self, name: &dyn Fn(ClassId) -> String) -> String {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
        let mut s = format!(
            "occupied_iou {:.6}\nprecision {:.6}\nrecall {:.6}\nmiou {}\n",
            self.occupied_iou,
            self.precision,
            self.recall,
            fmt(self.miou)
        );
        for (i, v) in self.class_iou.iter().enumerate() {
            s.push_str(&format!("iou.{} {}\n", name(i as ClassId + 1), fmt(*v)));
        }
        s
    }

    /// Aligned human-readable table: summary rows, then one row per class
    /// with its TP/FP/FN counts.
    pub fn to_table(&self, name: &dyn Fn(ClassId) -> String) -> String {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
        let mut s = format!(
            "{:<16} {:>8}\n{:<16} {:>8.2}\n{:<16} {:>8.2}\n{:<16} {:>8.2}\n{:<16} {:>8}\n\n",
            "metric",
            "%",
            "occupied IoU",
            100.0 * self.occupied_iou,
            "precision",
            100.0 * self.precision,
            "recall",
            100.0 * self.recall,
            "mIoU",
            fmt(self.miou)
        );
        s.push_str(&format!("{:<16} {:>8} {:>10} {:>10} {:>10}\n", "class", "IoU %", "tp", "fp", "fn"));
        for (i, v) in self.class_iou.iter().enumerate() {
            let (tp, fp, fn_) = self.confusion.tp_fp_fn(i + 1);
            s.push_str(&format!("{:<16} {:>8} {:>10} {:>10} {:>10}\n", name(i as ClassId + 1), fmt(*v), tp, fp, fn_));
        }
        s
    }
}

/// Metrics over voxels not flagged in `ignore` (indexed like the grids).
pub fn voxel_metrics(pred: &VoxelGrid, truth: &VoxelGrid, ignore: &[bool], num_classes: usize) -> Result<Metrics> {
    if pred.spec != truth.spec {
        return Err(Error::Argument("prediction and truth voxel grids differ in layout".into()));
    }
    if !ignore.is_empty() && ignore.len() != truth.labels.len() {
        return Err(Error::Argument(format!("ignore mask has {} entries for {} voxels", ignore.len(), truth.labels.len())));
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (i, (&t, &p)) in truth.labels.iter().zip(&pred.labels).enumerate() {
        if ignore.get(i).copied().unwrap_or(false) {
            continue;
        }
        cm.add(t, p);
    }
    Ok(Metrics::from_confusion(cm))
}

/// Mask of voxels no ray traverses and no return lands in.
pub fn unobserved_mask(spec: &VoxelGridSpec, rays: &[Ray]) -> Vec<bool> {
    let mut seen = vec![false; spec.len()];
    for r in rays {
        let o = Vec3::from(r.origin);
        let p = Vec3::from(r.point);
        for v in spec.traverse(&o, &p) {
            seen[spec.linear(&v)] = true;
        }
        let v = spec.index_of(&p);
        if spec.contains_index(&v) {
            seen[spec.linear(&v)] = true;
        }
    }
    seen.into_iter().map(|s| !s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub theta: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Index of the row with the highest occupied IoU (first on ties).
    pub best: usize,
}

impl Sweep {
    pub fn best_theta(&self) -> f64 {
        self.rows[self.best].theta
    }

    /// Whitespace-separated `theta precision recall occupied_iou miou` rows.
    pub fn curve(&self) -> String {
        let mut s = String::from("# theta precision recall occupied_iou miou\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{} {:.6} {:.6} {:.6} {}\n",
                r.theta,
                r.metrics.precision,
                r.metrics.recall,
                r.metrics.occupied_iou,
                r.metrics.miou.map_or("nan".into(), |m| format!("{m:.6}"))
            ));
        }
        s
    }

    /// Two-column `recall precision` file for plotting.
    pub fn pr_points(&self) -> String {
        let mut s = String::from("# recall precision\n");
        for r in &self.rows {
            s.push_str(&format!("{:.6} {:.6}\n", r.metrics.recall, r.metrics.precision));
        }
        s
    }
}

/// Thresholds one corner field at every theta.
pub fn pr_sweep_field<T: Real>(field: &CornerField<T>, truth: &VoxelGrid, ignore: &[bool], thetas: &[f64]) -> Result<Sweep> {
    if thetas.is_empty() {
        return Err(Error::Argument("pr_sweep needs at least one threshold".into()));
    }
    if thetas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Argument("pr_sweep thresholds must be sorted".into()));
    }
    let mut rows = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let pred = field.voxelize(theta)?;
        rows.push(SweepRow { theta, metrics: voxel_metrics(&pred, truth, ignore, field.num_classes())? });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.metrics.occupied_iou > rows[best].metrics.occupied_iou {
            best = i;
        }
    }
    Ok(Sweep { rows, best })
}

pub fn pr_sweep<T: Real>(model: &Predictor<'_, T>, truth: &VoxelGrid, ignore: &[bool], thetas: &[f64]) -> Result<Sweep> {
    let field = CornerField::evaluate(model, &truth.spec)?;
    pr_sweep_field(&field, truth, ignore, thetas)
}

/// Per-point classes: argmax over the semantic classes only.
pub fn segment_points<T: Real>(model: &Predictor<'_, T>, points: &[[f64; 3]]) -> Result<Vec<ClassId>> {
    let n = model.params.num_classes;
    Ok(model.predict(points)?.iter().map(|p| argmax_class(&p[..n])).collect())
}

/// Point-wise segmentation metrics over labeled points.
pub fn point_segmentation_metrics<T: Real>(model: &Predictor<'_, T>, cloud: &PointCloud, labels: &[ClassId]) -> Result<Metrics> {
    if labels.len() != cloud.len() {
        return Err(Error::Argument(format!("{} labels for {} points", labels.len(), cloud.len())));
    }
    let points: Vec<[f64; 3]> = cloud.points.iter().map(|p| p.position.into()).collect();
    let pred = segment_points(model, &points)?;
    Ok(segmentation_metrics(&pred, labels, model.params.num_classes))
}

/// Confusion over pairs whose truth is a semantic class.
pub fn segmentation_metrics(pred: &[ClassId], truth: &[ClassId], num_classes: usize) -> Metrics {
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&p, &t) in pred.iter().zip(truth) {
        if t == UNLABELED || t == FREE || t as usize > num_classes {
            continue;
        }
        cm.add(t, p);
    }
    Metrics::from_confusion(cm)
}
